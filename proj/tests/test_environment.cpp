#include <gtest/gtest.h>

#include <sstream>
#include <thread>

#include "icd/environment.hpp"
#include "icd/toy_world.hpp"

using namespace icd::env;

namespace {

ToyTask key_task() { return {TaskTemplate::pick_and_place, {"key 1"}, "shelf 1", "room 1"}; }

/// In-process server: every send replays the session transcript through
/// serve_protocol and keeps the last reply. The toy world is deterministic,
/// so the replay reaches the same state.
class LoopbackChannel : public LineChannel {
public:
    explicit LoopbackChannel(const EnvironmentFactory& f) : factory_(f) {}
    void send_line(const std::string& line) override {
        std::ostringstream out;
        if (line.rfind("RESET ", 0) == 0 || !session_) session_ = std::make_unique<Session>();
        session_->input += line + "\n";
        std::istringstream all(session_->input);
        serve_protocol(all, out, factory_);
        std::istringstream replies(out.str());
        std::string r;
        std::vector<std::string> lines;
        while (std::getline(replies, r)) lines.push_back(r);
        pending_ = lines.back();
    }
    std::string receive_line() override { return pending_; }

private:
    struct Session {
        std::string input;
    };
    const EnvironmentFactory& factory_;
    std::unique_ptr<Session> session_;
    std::string pending_;
};

}  // namespace

TEST(Protocol, EscapeRoundTrip) {
    for (const std::string s : {"plain", "tab\there", "new\nline", "back\\slash\\t", "", "\\"})
        EXPECT_EQ(unescape_protocol_text(escape_protocol_text(s)), s);
    EXPECT_EQ(escape_protocol_text("a\tb").find('\t'), std::string::npos);
}

TEST(Protocol, StepReplyParsing) {
    auto o = parse_step_reply("You see\\ta table.\tfalse\tfalse");
    EXPECT_EQ(o.observation, "You see\ta table.");
    EXPECT_FALSE(o.done);
    auto d = parse_step_reply("finished\t1\t1");
    EXPECT_TRUE(d.done);
    EXPECT_TRUE(d.success);
    EXPECT_EQ(parse_step_reply(format_step_reply({"x\ty", true, false})).observation, "x\ty");
    EXPECT_THROW(parse_step_reply("no tabs"), EnvironmentError);
    EXPECT_THROW(parse_step_reply("obs\tmaybe\tfalse"), EnvironmentError);
    EXPECT_THROW(parse_step_reply("obs\tfalse\ttrue"), EnvironmentError);
    EXPECT_THROW(parse_step_reply("ERROR boom"), EnvironmentError);
}

TEST(Protocol, ServerAnswersErrors) {
    ToyEnvironmentFactory f(ToyWorldSpec::standard());
    std::istringstream in("STEP done\nPING\nRESET {not json}\n");
    std::ostringstream out;
    serve_protocol(in, out, f);
    std::istringstream replies(out.str());
    std::string line;
    int errors = 0;
    while (std::getline(replies, line)) errors += line.rfind("ERROR ", 0) == 0;
    EXPECT_EQ(errors, 3);
}

TEST(Protocol, ServedEpisodeMatchesInProcess) {
    ToyEnvironmentFactory f(ToyWorldSpec::standard());
    ToyWorld w(ToyWorldSpec::standard());
    auto tr = oracle_solve(w, key_task());
    ExternalEnvironment ext(std::make_unique<LoopbackChannel>(f), w.action_space());
    EXPECT_EQ(ext.reset(tr.task), tr.steps[0].observation);
    StepOutcome last;
    for (std::size_t i = 0; i < tr.steps.size(); ++i) {
        last = ext.step(tr.steps[i].action);
        if (i + 1 < tr.steps.size()) EXPECT_EQ(last.observation, tr.steps[i + 1].observation);
    }
    EXPECT_TRUE(last.done && last.success);
    EXPECT_THROW(ext.step("done"), EnvironmentError);
}

TEST(StdioAdapter, SpawnedToyServer) {
    ToyWorld w(ToyWorldSpec::standard());
    auto tr = oracle_solve(w, key_task());
    ExternalEnvironment ext(spawn_stdio_channel({ICD_TOYENV_PATH}), w.action_space());
    EXPECT_EQ(ext.reset(tr.task), tr.steps[0].observation);
    StepOutcome last;
    for (const auto& s : tr.steps) last = ext.step(s.action);
    EXPECT_TRUE(last.success);
    // second episode on the same process
    EXPECT_EQ(ext.reset(tr.task), tr.steps[0].observation);
    EXPECT_EQ(ext.step("juggle").observation, kNothingHappens);
}

TEST(StdioAdapter, MissingBinaryFailsCleanly) {
    ExternalEnvironment ext(spawn_stdio_channel({"/nonexistent/icd-adapter"}), "");
    EXPECT_THROW(ext.reset(key_task().to_task_spec()), EnvironmentError);
}

TEST(TcpAdapter, ConnectsToToyServer) {
    const int port = 39000 + static_cast<int>(::getpid() % 2000);
    std::string cmd = std::string(ICD_TOYENV_PATH) + " --once --port " + std::to_string(port) + " &";
    ASSERT_EQ(std::system(cmd.c_str()), 0);
    std::unique_ptr<LineChannel> ch;
    for (int attempt = 0; attempt < 50 && !ch; ++attempt) {
        try {
            ch = connect_tcp_channel("127.0.0.1", port);
        } catch (const EnvironmentError&) {
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
    }
    ASSERT_TRUE(ch);
    ExternalEnvironment ext(std::move(ch), "");
    auto obs = ext.reset(key_task().to_task_spec());
    EXPECT_NE(obs.find("You are in room 1."), std::string::npos);
    auto r = ext.step("go to room 2");
    EXPECT_NE(r.observation.find("You are in room 2."), std::string::npos);
}

TEST(TcpAdapter, RefusedConnectionThrows) { EXPECT_THROW(connect_tcp_channel("127.0.0.1", 1), EnvironmentError); }
