#include "icd/environment.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <istream>
#include <ostream>

#include "json.hpp"

namespace icd::env {

namespace {

bool parse_flag(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw EnvironmentError("bad boolean field in step reply: '" + s + "'");
}

/// Buffered newline framing over a pair of file descriptors.
class FdChannel : public LineChannel {
public:
    FdChannel(int read_fd, int write_fd, pid_t child) : rfd_(read_fd), wfd_(write_fd), child_(child) {}
    ~FdChannel() override {
        if (wfd_ >= 0 && wfd_ != rfd_) ::close(wfd_);
        if (rfd_ >= 0) ::close(rfd_);
        if (child_ > 0) {
            int status = 0;
            if (::waitpid(child_, &status, WNOHANG) == 0) {
                ::kill(child_, SIGTERM);
                ::waitpid(child_, &status, 0);
            }
        }
    }

    void send_line(const std::string& line) override {
        std::string data = line + "\n";
        std::size_t off = 0;
        while (off < data.size()) {
            ssize_t n = ::write(wfd_, data.data() + off, data.size() - off);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) throw EnvironmentError(std::string("adapter write failed: ") + std::strerror(errno));
            off += static_cast<std::size_t>(n);
        }
    }

    std::string receive_line() override {
        while (true) {
            auto pos = buffer_.find('\n');
            if (pos != std::string::npos) {
                std::string line = buffer_.substr(0, pos);
                buffer_.erase(0, pos + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return line;
            }
            char chunk[4096];
            ssize_t n = ::read(rfd_, chunk, sizeof chunk);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) throw EnvironmentError("adapter closed the connection");
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

private:
    int rfd_;
    int wfd_;
    pid_t child_;
    std::string buffer_;
};

}  // namespace

std::unique_ptr<LineChannel> spawn_stdio_channel(const std::vector<std::string>& argv) {
    if (argv.empty()) throw EnvironmentError("adapter command is empty");
    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0) throw EnvironmentError("pipe failed");
    if (::pipe(from_child) != 0) {
        ::close(to_child[0]);
        ::close(to_child[1]);
        throw EnvironmentError("pipe failed");
    }
    pid_t pid = ::fork();
    if (pid < 0) throw EnvironmentError("fork failed");
    if (pid == 0) {
        ::dup2(to_child[0], STDIN_FILENO);
        ::dup2(from_child[1], STDOUT_FILENO);
        ::close(to_child[0]);
        ::close(to_child[1]);
        ::close(from_child[0]);
        ::close(from_child[1]);
        std::vector<char*> args;
        for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
        args.push_back(nullptr);
        ::execvp(args[0], args.data());
        ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    // a dead adapter must surface as a write error, not kill the runner
    ::signal(SIGPIPE, SIG_IGN);
    return std::make_unique<FdChannel>(from_child[0], to_child[1], pid);
}

std::unique_ptr<LineChannel> connect_tcp_channel(const std::string& host, int port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    std::string service = std::to_string(port);
    if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
        throw EnvironmentError("cannot resolve " + host + ": " + ::gai_strerror(rc));
    int fd = -1;
    for (auto* p = res; p; p = p->ai_next) {
        fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw EnvironmentError("cannot connect to " + host + ":" + service);
    ::signal(SIGPIPE, SIG_IGN);
    return std::make_unique<FdChannel>(fd, fd, 0);
}

std::string escape_protocol_text(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\t': out += "\\t"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            default: out += c;
        }
    }
    return out;
}

std::string unescape_protocol_text(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\' || i + 1 == s.size()) {
            out += s[i];
            continue;
        }
        char n = s[++i];
        switch (n) {
            case 't': out += '\t'; break;
            case 'n': out += '\n'; break;
            case 'r': out += '\r'; break;
            case '\\': out += '\\'; break;
            default:
                out += '\\';
                out += n;
        }
    }
    return out;
}

StepOutcome parse_step_reply(const std::string& line) {
    if (line.rfind("ERROR ", 0) == 0) throw EnvironmentError("adapter error: " + line.substr(6));
    auto t2 = line.rfind('\t');
    if (t2 == std::string::npos || t2 == 0) throw EnvironmentError("malformed step reply: '" + line + "'");
    auto t1 = line.rfind('\t', t2 - 1);
    if (t1 == std::string::npos) throw EnvironmentError("malformed step reply: '" + line + "'");
    StepOutcome o;
    o.observation = unescape_protocol_text(line.substr(0, t1));
    o.done = parse_flag(line.substr(t1 + 1, t2 - t1 - 1));
    o.success = parse_flag(line.substr(t2 + 1));
    if (o.success && !o.done) throw EnvironmentError("step reply reports success without done");
    return o;
}

std::string format_step_reply(const StepOutcome& o) {
    return escape_protocol_text(o.observation) + "\t" + (o.done ? "true" : "false") + "\t" +
           (o.success ? "true" : "false");
}

namespace {

std::string task_json(const store::TaskSpec& t) {
    nlohmann::ordered_json j;
    j["task_id"] = t.task_id;
    j["env_id"] = t.env_id;
    j["goal"] = t.goal;
    j["difficulty"] = t.difficulty ? nlohmann::ordered_json(*t.difficulty) : nlohmann::ordered_json(nullptr);
    return j.dump();
}

store::TaskSpec task_from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    store::TaskSpec t;
    t.task_id = j.at("task_id").get<std::string>();
    t.env_id = j.value("env_id", "");
    t.goal = j.at("goal").get<std::string>();
    if (j.contains("difficulty") && !j["difficulty"].is_null()) t.difficulty = j["difficulty"].get<int>();
    return t;
}

}  // namespace

ExternalEnvironment::ExternalEnvironment(std::unique_ptr<LineChannel> channel, std::string action_space)
    : channel_(std::move(channel)), action_space_(std::move(action_space)) {}

std::string ExternalEnvironment::reset(const store::TaskSpec& task) {
    channel_->send_line("RESET " + task_json(task));
    auto line = channel_->receive_line();
    if (line.rfind("ERROR ", 0) == 0) throw EnvironmentError("adapter error: " + line.substr(6));
    active_ = true;
    return unescape_protocol_text(line);
}

StepOutcome ExternalEnvironment::step(const std::string& action) {
    if (!active_) throw EnvironmentError("step after episode end (or before reset)");
    channel_->send_line("STEP " + escape_protocol_text(action));
    auto o = parse_step_reply(channel_->receive_line());
    if (o.done) active_ = false;
    return o;
}

void serve_protocol(std::istream& in, std::ostream& out, const EnvironmentFactory& factory) {
    std::unique_ptr<Environment> env;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        try {
            if (line.rfind("RESET ", 0) == 0) {
                env = factory.make();
                out << escape_protocol_text(env->reset(task_from_json(line.substr(6)))) << '\n';
            } else if (line.rfind("STEP ", 0) == 0) {
                if (!env) throw EnvironmentError("STEP before RESET");
                out << format_step_reply(env->step(unescape_protocol_text(line.substr(5)))) << '\n';
            } else {
                throw EnvironmentError("unknown command");
            }
        } catch (const std::exception& e) {
            out << "ERROR " << escape_protocol_text(e.what()) << '\n';
        }
        out.flush();
    }
}

}  // namespace icd::env
