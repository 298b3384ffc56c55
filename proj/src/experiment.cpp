#include "icd/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "icd/live_embedder.hpp"
#include "icd/text.hpp"

namespace icd::experiment {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using cost::Money;
using routing::PolicyKind;

namespace {

// ------------------------------------------------------------ json reading

[[noreturn]] void bad(const std::string& where, const std::string& msg) { throw ConfigError(where + ": " + msg); }

void check_object(const ojson& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) bad(where, "expected an object");
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (const char* a : allowed) known = known || key == a;
        if (!known) bad(where, "unknown key '" + key + "'");
    }
}

const ojson* find(const ojson& j, const char* key) {
    auto it = j.find(key);
    return it == j.end() || it->is_null() ? nullptr : &*it;
}

template <class T>
T as(const ojson& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) bad(where, "expected true or false");
        return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) bad(where, "expected a string");
        return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) bad(where, "expected a number");
        return v.get<T>();
    } else {
        static_assert(std::is_integral_v<T>);
        if (!v.is_number_integer()) bad(where, "expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
            if (v.is_number_unsigned()) return static_cast<T>(v.get<std::uint64_t>());
            if (v.get<std::int64_t>() < 0) bad(where, "must not be negative");
            return static_cast<T>(v.get<std::int64_t>());
        } else {
            return static_cast<T>(v.get<std::int64_t>());
        }
    }
}

template <class T>
void read(const ojson& j, const char* key, T& out, const std::string& where) {
    if (const ojson* v = find(j, key)) out = as<T>(*v, where + "." + key);
}

template <class T>
void read(const ojson& j, const char* key, std::optional<T>& out, const std::string& where) {
    if (const ojson* v = find(j, key)) out = as<T>(*v, where + "." + key);
}

template <class T>
std::vector<T> read_list(const ojson& j, const char* key, const std::string& where) {
    std::vector<T> out;
    const ojson* v = find(j, key);
    if (!v) return out;
    const std::string w = where + "." + key;
    if (!v->is_array()) bad(w, "expected a list");
    for (std::size_t i = 0; i < v->size(); ++i) out.push_back(as<T>((*v)[i], w + "[" + std::to_string(i) + "]"));
    return out;
}

template <class F>
auto parse_enum(const ojson& v, const std::string& where, F&& from_string) {
    const auto s = as<std::string>(v, where);
    try {
        return from_string(s);
    } catch (const std::exception& e) {
        bad(where, e.what());
    }
}

fs::path resolve(const fs::path& p, const fs::path& base) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

// ------------------------------------------------------------ money text

/// Decimal USD text with at most 12 fractional digits, exactly.
Money parse_usd_text(const std::string& text) {
    std::size_t i = 0;
    bool neg = false;
    if (i < text.size() && (text[i] == '-' || text[i] == '+')) neg = text[i++] == '-';
    __int128 whole = 0, frac = 0;
    int frac_digits = 0;
    bool any = false;
    for (; i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])); ++i, any = true)
        whole = whole * 10 + (text[i] - '0');
    if (i < text.size() && text[i] == '.') {
        for (++i; i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])); ++i, any = true) {
            if (frac_digits == 12) throw RunError("more than 12 decimals in amount '" + text + "'");
            frac = frac * 10 + (text[i] - '0');
            ++frac_digits;
        }
    }
    if (!any || i != text.size()) throw RunError("not a decimal amount: '" + text + "'");
    for (; frac_digits < 12; ++frac_digits) frac *= 10;
    __int128 pico = whole * static_cast<__int128>(1000000000000LL) + frac;
    return Money::from_pico(neg ? -pico : pico);
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw RunError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <class F>
void write_file(const fs::path& p, F&& body) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw RunError("cannot write " + p.string());
    body(out);
    if (!out) throw RunError("write failed: " + p.string());
}

// ------------------------------------------------------------ config sections

std::string backend_name(Backend b) {
    switch (b) {
        case Backend::scripted: return "scripted";
        case Backend::openai: return "openai";
        case Backend::anthropic: return "anthropic";
    }
    return "scripted";
}

Backend backend_from_string(const std::string& s) {
    if (s == "scripted") return Backend::scripted;
    if (s == "openai") return Backend::openai;
    if (s == "anthropic") return Backend::anthropic;
    throw ConfigError("unknown backend '" + s + "' (scripted, openai, anthropic)");
}

ModelSpec default_spec(const std::string& pricing_key) {
    ModelSpec m;
    m.pricing_key = pricing_key;
    return m;
}

void read_model(const ojson& j, ModelSpec& m, const std::string& where) {
    check_object(j, where,
                 {"backend", "pricing_key", "base_url", "path", "model", "api_key_env", "timeout_seconds",
                  "rate_limit_rps", "retry", "noise_scale", "exit_jitter"});
    if (const ojson* v = find(j, "backend")) m.backend = parse_enum(*v, where + ".backend", backend_from_string);
    read(j, "pricing_key", m.pricing_key, where);
    read(j, "base_url", m.base_url, where);
    read(j, "path", m.path, where);
    read(j, "model", m.model_name, where);
    read(j, "api_key_env", m.api_key_env, where);
    read(j, "timeout_seconds", m.timeout_seconds, where);
    read(j, "rate_limit_rps", m.rate_limit_rps, where);
    if (const ojson* r = find(j, "retry")) {
        const std::string w = where + ".retry";
        check_object(*r, w, {"attempts", "initial_backoff_ms", "multiplier"});
        read(*r, "attempts", m.retry.attempts, w);
        std::int64_t ms = m.retry.initial_backoff.count();
        read(*r, "initial_backoff_ms", ms, w);
        m.retry.initial_backoff = std::chrono::milliseconds(ms);
        read(*r, "multiplier", m.retry.multiplier, w);
    }
    read(j, "noise_scale", m.behavior.noise_scale, where);
    read(j, "exit_jitter", m.behavior.exit_jitter, where);
    if (m.backend == Backend::openai) {
        if (m.base_url.empty()) m.base_url = "https://api.openai.com";
        if (m.api_key_env.empty()) m.api_key_env = "OPENAI_API_KEY";
    } else if (m.backend == Backend::anthropic) {
        if (m.base_url.empty()) m.base_url = "https://api.anthropic.com";
        if (m.api_key_env.empty()) m.api_key_env = "ANTHROPIC_API_KEY";
    }
    if (m.model_name.empty()) m.model_name = m.pricing_key;
}

ojson write_model(const ModelSpec& m) {
    ojson j;
    j["backend"] = backend_name(m.backend);
    j["pricing_key"] = m.pricing_key;
    if (m.backend != Backend::scripted) {
        j["base_url"] = m.base_url;
        j["path"] = m.path;
        j["model"] = m.model_name;
        j["api_key_env"] = m.api_key_env;
        j["timeout_seconds"] = m.timeout_seconds;
    }
    j["rate_limit_rps"] = m.rate_limit_rps;
    j["retry"] = {{"attempts", m.retry.attempts},
                  {"initial_backoff_ms", m.retry.initial_backoff.count()},
                  {"multiplier", m.retry.multiplier}};
    j["noise_scale"] = m.behavior.noise_scale;
    j["exit_jitter"] = m.behavior.exit_jitter;
    return j;
}

void read_policy(const ojson& j, routing::PolicyConfig& p) {
    const std::string where = "policy";
    check_object(j, where,
                 {"kind", "N", "equivalence", "p", "seed", "difficulty_rule", "defer_with_exemplars",
                  "verifier_exemplars", "route_plan"});
    if (const ojson* v = find(j, "kind")) p.kind = parse_enum(*v, where + ".kind", routing::policy_kind_from_string);
    read(j, "N", p.N, where);
    if (const ojson* v = find(j, "equivalence"))
        p.equivalence = parse_enum(*v, where + ".equivalence", routing::equivalence_from_string);
    read(j, "p", p.p, where);
    read(j, "seed", p.rng_seed, where);
    if (const ojson* r = find(j, "difficulty_rule")) {
        if (!r->is_object()) bad(where + ".difficulty_rule", "expected an object of difficulty -> kind");
        p.difficulty_rule.clear();
        for (const auto& [key, value] : r->items()) {
            const std::string w = where + ".difficulty_rule." + key;
            int d = 0;
            try {
                std::size_t used = 0;
                d = std::stoi(key, &used);
                if (used != key.size()) throw std::invalid_argument(key);
            } catch (const std::exception&) {
                bad(w, "difficulty keys must be integers");
            }
            p.difficulty_rule[d] = parse_enum(value, w, routing::policy_kind_from_string);
        }
    }
    read(j, "defer_with_exemplars", p.defer_with_exemplars, where);
    read(j, "verifier_exemplars", p.verifier_exemplars, where);
    read(j, "route_plan", p.route_plan, where);
}

ojson write_policy(const routing::PolicyConfig& p) {
    ojson j;
    j["kind"] = routing::to_string(p.kind);
    j["N"] = p.N;
    j["equivalence"] = routing::to_string(p.equivalence);
    j["p"] = p.p;
    j["seed"] = p.rng_seed ? ojson(*p.rng_seed) : ojson(nullptr);
    ojson rule = ojson::object();
    for (const auto& [d, k] : p.difficulty_rule) rule[std::to_string(d)] = routing::to_string(k);
    j["difficulty_rule"] = rule;
    j["defer_with_exemplars"] = p.defer_with_exemplars;
    j["verifier_exemplars"] = p.verifier_exemplars;
    j["route_plan"] = p.route_plan;
    return j;
}

void read_episode(const ojson& j, agent::EpisodeConfig& e) {
    const std::string where = "episode";
    check_object(j, where,
                 {"T", "k", "W", "temperature", "max_output_tokens", "granularity", "step_query", "history_chars",
                  "weights"});
    read(j, "T", e.T, where);
    read(j, "k", e.k, where);
    read(j, "W", e.W, where);
    read(j, "temperature", e.temperature, where);
    read(j, "max_output_tokens", e.max_output_tokens, where);
    if (const ojson* v = find(j, "granularity"))
        e.granularity = parse_enum(*v, where + ".granularity", agent::granularity_from_string);
    if (const ojson* v = find(j, "step_query"))
        e.step_query = parse_enum(*v, where + ".step_query", agent::step_query_from_string);
    read(j, "history_chars", e.history_chars, where);
    if (const ojson* w = find(j, "weights")) {
        const std::string ww = where + ".weights";
        check_object(*w, ww, {"goal", "plan", "reasoning"});
        read(*w, "goal", e.weights.goal, ww);
        read(*w, "plan", e.weights.plan, ww);
        read(*w, "reasoning", e.weights.reasoning, ww);
    }
}

ojson write_episode(const agent::EpisodeConfig& e) {
    ojson j;
    j["T"] = e.T;
    j["k"] = e.k;
    j["W"] = e.W;
    j["temperature"] = e.temperature;
    j["max_output_tokens"] = e.max_output_tokens;
    j["granularity"] = agent::to_string(e.granularity);
    j["step_query"] = agent::to_string(e.step_query);
    j["history_chars"] = e.history_chars;
    j["weights"] = {{"goal", e.weights.goal}, {"plan", e.weights.plan}, {"reasoning", e.weights.reasoning}};
    return j;
}

bool kind_uses_exemplars(const routing::PolicyConfig& p) {
    if (p.kind != PolicyKind::DifficultyAware) return routing::uses_exemplars(p.kind);
    for (const auto& [_, k] : p.difficulty_rule)
        if (routing::uses_exemplars(k)) return true;
    return false;
}

bool point_needs_db(const RunConfig& c) { return c.episode.k > 0 && kind_uses_exemplars(c.episode.policy); }

bool kind_uses_verifier(const routing::PolicyConfig& p) {
    auto soft = [&](PolicyKind k) { return routing::is_cascade(k) && p.equivalence == routing::Equivalence::soft; };
    if (p.kind != PolicyKind::DifficultyAware) return soft(p.kind);
    for (const auto& [_, k] : p.difficulty_rule)
        if (soft(k)) return true;
    return false;
}

bool kind_uses_student(const routing::PolicyConfig& p) {
    if (p.kind != PolicyKind::DifficultyAware) return p.kind != PolicyKind::TeacherOnly;
    for (const auto& [_, k] : p.difficulty_rule)
        if (k != PolicyKind::TeacherOnly) return true;
    return false;
}

}  // namespace

ModelsConfig::ModelsConfig()
    : teacher(default_spec("claude-sonnet-4.5")), student(default_spec("gpt-4.1-mini")),
      verifier(default_spec("gpt-4.1-mini")) {}

bool SweepConfig::empty() const {
    return policy.empty() && k.empty() && temperature.empty() && p.empty() && granularity.empty() && db_size.empty();
}

std::string RunConfig::method_label() const {
    return label.empty() ? routing::to_string(episode.policy.kind) : label;
}

RunConfig RunConfig::from_json_text(const std::string& text, const fs::path& base_dir) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const ojson::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    check_object(j, "config",
                 {"label", "seed", "output_dir", "workers", "db", "db_size", "lambda", "models", "prices", "episode",
                  "policy", "tasks", "environment", "embedder", "templates", "baseline", "sweep"});
    RunConfig c;
    const std::string top = "config";
    read(j, "label", c.label, top);
    read(j, "seed", c.seed, top);
    if (const ojson* v = find(j, "output_dir")) c.output_dir = resolve(as<std::string>(*v, "config.output_dir"), base_dir);
    read(j, "workers", c.workers, top);
    if (const ojson* v = find(j, "db")) c.db = resolve(as<std::string>(*v, "config.db"), base_dir);
    read(j, "db_size", c.db_size, top);
    read(j, "lambda", c.lambda, top);
    if (const ojson* v = find(j, "templates")) c.templates = resolve(as<std::string>(*v, "config.templates"), base_dir);
    if (const ojson* v = find(j, "baseline")) c.baseline = resolve(as<std::string>(*v, "config.baseline"), base_dir);

    if (const ojson* m = find(j, "models")) {
        check_object(*m, "models", {"teacher", "student", "verifier"});
        if (const ojson* v = find(*m, "teacher")) read_model(*v, c.models.teacher, "models.teacher");
        if (const ojson* v = find(*m, "student")) read_model(*v, c.models.student, "models.student");
        if (const ojson* v = find(*m, "verifier")) read_model(*v, c.models.verifier, "models.verifier");
    }
    if (const ojson* p = find(j, "prices")) {
        if (!p->is_object()) bad("prices", "expected an object of model -> prices");
        for (const auto& [id, entry] : p->items()) {
            const std::string w = "prices." + id;
            check_object(entry, w, {"input_per_million", "output_per_million"});
            const ojson* in = find(entry, "input_per_million");
            const ojson* out = find(entry, "output_per_million");
            if (!in || !out) bad(w, "needs input_per_million and output_per_million");
            const double a = as<double>(*in, w + ".input_per_million");
            const double b = as<double>(*out, w + ".output_per_million");
            if (a < 0 || b < 0) bad(w, "prices must not be negative");
            c.prices.set(id, cost::ModelPrice::per_million(a, b));
        }
    }
    if (const ojson* v = find(j, "episode")) read_episode(*v, c.episode);
    if (const ojson* v = find(j, "policy")) read_policy(*v, c.episode.policy);

    if (const ojson* t = find(j, "tasks")) {
        const std::string w = "tasks";
        check_object(*t, w, {"source", "seed", "n_demo", "n_test", "path"});
        if (const ojson* v = find(*t, "source")) {
            const auto src = as<std::string>(*v, w + ".source");
            if (src == "toy") c.tasks.kind = TaskSource::toy;
            else if (src == "file") c.tasks.kind = TaskSource::file;
            else bad(w + ".source", "expected 'toy' or 'file'");
        }
        read(*t, "seed", c.tasks.seed, w);
        read(*t, "n_demo", c.tasks.n_demo, w);
        read(*t, "n_test", c.tasks.n_test, w);
        if (const ojson* v = find(*t, "path")) c.tasks.path = resolve(as<std::string>(*v, w + ".path"), base_dir);
    }
    if (const ojson* e = find(j, "environment")) {
        const std::string w = "environment";
        check_object(*e, w, {"kind", "world", "command", "host", "port", "action_space"});
        if (const ojson* v = find(*e, "kind")) {
            const auto k = as<std::string>(*v, w + ".kind");
            if (k == "toy") c.environment.kind = EnvironmentConfig::toy;
            else if (k == "stdio") c.environment.kind = EnvironmentConfig::stdio;
            else if (k == "tcp") c.environment.kind = EnvironmentConfig::tcp;
            else bad(w + ".kind", "expected 'toy', 'stdio' or 'tcp'");
        }
        if (const ojson* v = find(*e, "world")) c.environment.world = resolve(as<std::string>(*v, w + ".world"), base_dir);
        c.environment.command = read_list<std::string>(*e, "command", w);
        if (!c.environment.command.empty() && c.environment.command[0].find('/') != std::string::npos)
            c.environment.command[0] = resolve(c.environment.command[0], base_dir).string();
        read(*e, "host", c.environment.host, w);
        read(*e, "port", c.environment.port, w);
        read(*e, "action_space", c.environment.action_space, w);
    }
    if (const ojson* e = find(j, "embedder")) {
        const std::string w = "embedder";
        check_object(*e, w, {"kind", "dimension", "base_url", "path", "model", "api_key_env", "cache"});
        if (const ojson* v = find(*e, "kind")) {
            const auto k = as<std::string>(*v, w + ".kind");
            if (k == "hashed-bow") c.embedder.kind = EmbedderConfig::hashed_bow;
            else if (k == "http") c.embedder.kind = EmbedderConfig::http;
            else bad(w + ".kind", "expected 'hashed-bow' or 'http'");
        }
        read(*e, "dimension", c.embedder.dimension, w);
        read(*e, "base_url", c.embedder.base_url, w);
        read(*e, "path", c.embedder.path, w);
        read(*e, "model", c.embedder.model_name, w);
        read(*e, "api_key_env", c.embedder.api_key_env, w);
        read(*e, "cache", c.embedder.cache, w);
        if (c.embedder.kind == EmbedderConfig::http && c.embedder.api_key_env.empty())
            c.embedder.api_key_env = "OPENAI_API_KEY";
    }
    if (const ojson* sw = find(j, "sweep")) {
        const std::string w = "sweep";
        check_object(*sw, w, {"policy", "k", "temperature", "p", "granularity", "db_size"});
        for (const auto& s2 : read_list<std::string>(*sw, "policy", w))
            c.sweep.policy.push_back(parse_enum(ojson(s2), w + ".policy", routing::policy_kind_from_string));
        c.sweep.k = read_list<int>(*sw, "k", w);
        c.sweep.temperature = read_list<double>(*sw, "temperature", w);
        c.sweep.p = read_list<double>(*sw, "p", w);
        for (const auto& s2 : read_list<std::string>(*sw, "granularity", w))
            c.sweep.granularity.push_back(parse_enum(ojson(s2), w + ".granularity", agent::granularity_from_string));
        c.sweep.db_size = read_list<std::size_t>(*sw, "db_size", w);
    }
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str(), path.parent_path());
}

std::string RunConfig::to_json_text() const {
    ojson j;
    j["label"] = label;
    j["seed"] = seed ? ojson(*seed) : ojson(nullptr);
    j["output_dir"] = output_dir.string();
    j["workers"] = workers;
    j["db"] = db.string();
    j["db_size"] = db_size ? ojson(*db_size) : ojson(nullptr);
    j["lambda"] = lambda ? ojson(*lambda) : ojson(nullptr);
    j["models"] = {{"teacher", write_model(models.teacher)},
                   {"student", write_model(models.student)},
                   {"verifier", write_model(models.verifier)}};
    ojson prices_j = ojson::object();
    for (const auto& [id, p] : prices.entries())
        prices_j[id] = {{"input_per_million", p.input_per_million_usd()},
                        {"output_per_million", p.output_per_million_usd()}};
    j["prices"] = prices_j;
    j["episode"] = write_episode(episode);
    j["policy"] = write_policy(episode.policy);
    j["tasks"] = {{"source", tasks.kind == TaskSource::toy ? "toy" : "file"},
                  {"seed", tasks.seed ? ojson(*tasks.seed) : ojson(nullptr)},
                  {"n_demo", tasks.n_demo},
                  {"n_test", tasks.n_test},
                  {"path", tasks.path.string()}};
    const char* env_kind = environment.kind == EnvironmentConfig::toy ? "toy"
                           : environment.kind == EnvironmentConfig::stdio ? "stdio"
                                                                           : "tcp";
    j["environment"] = {{"kind", env_kind},
                        {"world", environment.world.string()},
                        {"command", environment.command},
                        {"host", environment.host},
                        {"port", environment.port},
                        {"action_space", environment.action_space}};
    j["embedder"] = {{"kind", embedder.kind == EmbedderConfig::hashed_bow ? "hashed-bow" : "http"},
                     {"dimension", embedder.dimension},
                     {"base_url", embedder.base_url},
                     {"path", embedder.path},
                     {"model", embedder.model_name},
                     {"api_key_env", embedder.api_key_env},
                     {"cache", embedder.cache}};
    j["templates"] = templates ? ojson(templates->string()) : ojson(nullptr);
    j["baseline"] = baseline ? ojson(baseline->string()) : ojson(nullptr);
    ojson sw = ojson::object();
    if (!sweep.policy.empty()) {
        ojson a = ojson::array();
        for (auto k : sweep.policy) a.push_back(routing::to_string(k));
        sw["policy"] = a;
    }
    if (!sweep.k.empty()) sw["k"] = sweep.k;
    if (!sweep.temperature.empty()) sw["temperature"] = sweep.temperature;
    if (!sweep.p.empty()) sw["p"] = sweep.p;
    if (!sweep.granularity.empty()) {
        ojson a = ojson::array();
        for (auto g : sweep.granularity) a.push_back(agent::to_string(g));
        sw["granularity"] = a;
    }
    if (!sweep.db_size.empty()) sw["db_size"] = sweep.db_size;
    j["sweep"] = sw;
    return j.dump(2) + "\n";
}

void RunConfig::validate(Purpose purpose) const {
    if (!seed) throw ConfigError("seed is required");
    if (workers < 1) throw ConfigError("workers must be at least 1");
    if (output_dir.empty()) throw ConfigError("output_dir is required");
    if (lambda && !std::isfinite(*lambda)) throw ConfigError("lambda must be finite");
    if (db_size && *db_size == 0) throw ConfigError("db_size must be positive");

    auto check_model = [&](const ModelSpec& m, const char* role) {
        const std::string w = std::string("models.") + role;
        if (m.pricing_key.empty()) throw ConfigError(w + ".pricing_key is required");
        if (!prices.contains(m.pricing_key)) throw ConfigError(w + ": no price for model '" + m.pricing_key + "'");
        if (m.backend != Backend::scripted) {
            if (m.base_url.empty()) throw ConfigError(w + ".base_url is required");
            if (m.api_key_env.empty()) throw ConfigError(w + ".api_key_env is required");
            const char* key = std::getenv(m.api_key_env.c_str());
            if (!key || !*key) throw ConfigError(w + ": environment variable " + m.api_key_env + " is not set");
        }
        if (m.rate_limit_rps < 0) throw ConfigError(w + ".rate_limit_rps must not be negative");
        if (m.retry.attempts < 1) throw ConfigError(w + ".retry.attempts must be at least 1");
        if (m.timeout_seconds < 1) throw ConfigError(w + ".timeout_seconds must be positive");
        if (!(m.behavior.noise_scale > 0)) throw ConfigError(w + ".noise_scale must be positive");
    };

    switch (tasks.kind) {
        case TaskSource::toy:
            if (purpose == Purpose::collect && tasks.n_demo == 0) throw ConfigError("tasks.n_demo must be positive");
            if (purpose == Purpose::run && tasks.n_test == 0) throw ConfigError("tasks.n_test must be positive");
            break;
        case TaskSource::file:
            if (tasks.path.empty()) throw ConfigError("tasks.path is required for a task file");
            if (!fs::is_regular_file(tasks.path)) throw ConfigError("task file not found: " + tasks.path.string());
            break;
    }
    if (!environment.world.empty() && !fs::is_regular_file(environment.world))
        throw ConfigError("world spec not found: " + environment.world.string());
    if (environment.kind == EnvironmentConfig::stdio) {
        if (environment.command.empty()) throw ConfigError("environment.command is required for stdio adapters");
        const auto& exe = environment.command[0];
        if (exe.find('/') != std::string::npos && !fs::is_regular_file(exe))
            throw ConfigError("adapter executable not found: " + exe);
    }
    if (environment.kind == EnvironmentConfig::tcp && (environment.port < 1 || environment.port > 65535))
        throw ConfigError("environment.port must be in 1..65535");
    if (embedder.dimension < 1) throw ConfigError("embedder.dimension must be positive");
    if (embedder.kind == EmbedderConfig::http && embedder.base_url.empty())
        throw ConfigError("embedder.base_url is required for http embeddings");
    if (templates && !fs::is_directory(*templates))
        throw ConfigError("templates directory not found: " + templates->string());

    check_model(models.teacher, "teacher");
    if (purpose == Purpose::collect) {
        agent::EpisodeConfig e = episode;
        e.policy = {};
        e.policy.kind = PolicyKind::TeacherOnly;
        e.validate();
        if (embedder.kind == EmbedderConfig::http && embedder.cache) {
            const char* key = std::getenv(embedder.api_key_env.c_str());
            if (!key || !*key) throw ConfigError("embedder: environment variable " + embedder.api_key_env + " is not set");
        }
        return;
    }

    for (std::size_t n : sweep.db_size)
        if (n == 0) throw ConfigError("sweep.db_size entries must be positive");
    bool student = false, verifier = false, needs_db = false;
    for (const auto& point : expand_sweep(*this)) {
        try {
            point.config.episode.validate();
        } catch (const ConfigError& e) {
            throw ConfigError(point.config.label + ": " + e.what());
        }
        student = student || kind_uses_student(point.config.episode.policy);
        verifier = verifier || kind_uses_verifier(point.config.episode.policy);
        needs_db = needs_db || point_needs_db(point.config);
    }
    if (student) check_model(models.student, "student");
    if (verifier) check_model(models.verifier, "verifier");
    if (needs_db) {
        if (db.empty()) throw ConfigError("db is required for policies that retrieve exemplars");
        if (!fs::is_regular_file(db)) throw ConfigError("demo database not found: " + db.string());
        if (embedder.kind == EmbedderConfig::http) {
            const char* key = std::getenv(embedder.api_key_env.c_str());
            if (!key || !*key) throw ConfigError("embedder: environment variable " + embedder.api_key_env + " is not set");
        }
    }
    if (baseline && !fs::is_regular_file(*baseline / "summary.json"))
        throw ConfigError("baseline run has no summary.json: " + baseline->string());
}

// ------------------------------------------------------------ sweep

std::vector<SweepPoint> expand_sweep(const RunConfig& base) {
    RunConfig clean = base;
    clean.sweep = {};
    std::vector<SweepPoint> points{{clean, ""}};
    std::vector<std::vector<std::string>> parts(1);

    auto axis = [&](const auto& values, auto apply, auto name) {
        if (values.empty()) return;
        std::vector<SweepPoint> next;
        std::vector<std::vector<std::string>> next_parts;
        for (std::size_t i = 0; i < points.size(); ++i)
            for (const auto& v : values) {
                SweepPoint p = points[i];
                apply(p.config, v);
                next.push_back(std::move(p));
                next_parts.push_back(parts[i]);
                if (auto n = name(v); !n.empty()) next_parts.back().push_back(n);
            }
        points = std::move(next);
        parts = std::move(next_parts);
    };
    const bool label_from_kind = base.label.empty();
    axis(
        base.sweep.policy, [](RunConfig& c, PolicyKind k) { c.episode.policy.kind = k; },
        [&](PolicyKind k) { return label_from_kind ? std::string() : "policy=" + routing::to_string(k); });
    axis(
        base.sweep.k, [](RunConfig& c, int k) { c.episode.k = k; },
        [](int k) { return "k=" + std::to_string(k); });
    axis(
        base.sweep.temperature, [](RunConfig& c, double t) { c.episode.temperature = t; },
        [](double t) { return "temperature=" + fmt_double(t); });
    axis(
        base.sweep.p, [](RunConfig& c, double p) { c.episode.policy.p = p; },
        [](double p) { return "p=" + fmt_double(p); });
    axis(
        base.sweep.granularity, [](RunConfig& c, agent::Granularity g) { c.episode.granularity = g; },
        [](agent::Granularity g) { return "granularity=" + agent::to_string(g); });
    axis(
        base.sweep.db_size, [](RunConfig& c, std::size_t n) { c.db_size = n; },
        [](std::size_t n) { return "db_size=" + std::to_string(n); });

    const bool swept = !base.sweep.empty();
    for (std::size_t i = 0; i < points.size(); ++i) {
        auto& p = points[i];
        std::string label = p.config.method_label();
        std::string dir = swept && !base.sweep.policy.empty() && label_from_kind ? label : "";
        for (const auto& part : parts[i]) {
            label += " " + part;
            dir += (dir.empty() ? "" : "_") + part;
        }
        p.config.label = label;
        p.suffix = swept ? (dir.empty() ? label : dir) : "";
    }
    return points;
}

// ------------------------------------------------------------ tasks

env::TaskSet load_task_set(const RunConfig& config) {
    if (config.tasks.kind == TaskSource::toy) {
        env::ToyWorld world(config.environment.world.empty() ? env::ToyWorldSpec::standard()
                                                             : env::ToyWorldSpec::load(config.environment.world));
        return env::generate_task_set(world, config.task_seed(), config.tasks.n_demo, config.tasks.n_test);
    }
    ojson j;
    try {
        j = ojson::parse(read_file(config.tasks.path));
    } catch (const ojson::parse_error& e) {
        throw ConfigError("task file " + config.tasks.path.string() + " is not valid JSON: " + e.what());
    } catch (const RunError& e) {
        throw ConfigError(e.what());
    }
    env::TaskSet ts;
    ts.seed = config.task_seed();
    auto read_split = [&](const char* key, std::vector<store::TaskSpec>& out) {
        const ojson* list = j.is_object() ? find(j, key) : nullptr;
        if (!list) return;
        if (!list->is_array()) throw ConfigError(std::string("task file: '") + key + "' must be a list");
        for (std::size_t i = 0; i < list->size(); ++i) {
            const std::string where = std::string("task file ") + key + "[" + std::to_string(i) + "]";
            store::TaskSpec t;
            try {
                t = store::task_from_json_line((*list)[i].dump());
            } catch (const store::StoreError& e) {
                throw ConfigError(where + ": " + e.what());
            }
            if (auto v = store::validate_task(t); !v.empty()) throw ConfigError(where + ": " + store::describe(v));
            out.push_back(std::move(t));
        }
    };
    if (!j.is_object()) throw ConfigError("task file must hold an object with 'demo' and 'test' lists");
    read_split("demo", ts.demo);
    read_split("test", ts.test);
    return ts;
}

void save_task_set(const env::TaskSet& tasks, const fs::path& path) {
    ojson j;
    j["seed"] = tasks.seed;
    auto split = [](const std::vector<store::TaskSpec>& v) {
        ojson a = ojson::array();
        for (const auto& t : v) a.push_back(ojson::parse(store::task_to_json_line(t)));
        return a;
    };
    j["demo"] = split(tasks.demo);
    j["test"] = split(tasks.test);
    write_file(path, [&](std::ostream& os) { os << j.dump(2) << "\n"; });
}

// ------------------------------------------------------------ resources

namespace {

class StdioFactory : public env::EnvironmentFactory {
public:
    StdioFactory(std::vector<std::string> argv, std::string action_space)
        : argv_(std::move(argv)), action_space_(std::move(action_space)) {}
    std::unique_ptr<env::Environment> make() const override {
        return std::make_unique<env::ExternalEnvironment>(env::spawn_stdio_channel(argv_), action_space_);
    }

private:
    std::vector<std::string> argv_;
    std::string action_space_;
};

class TcpFactory : public env::EnvironmentFactory {
public:
    TcpFactory(std::string host, int port, std::string action_space)
        : host_(std::move(host)), port_(port), action_space_(std::move(action_space)) {}
    std::unique_ptr<env::Environment> make() const override {
        return std::make_unique<env::ExternalEnvironment>(env::connect_tcp_channel(host_, port_), action_space_);
    }

private:
    std::string host_;
    int port_;
    std::string action_space_;
};

gateway::EndpointConfig endpoint(const ModelSpec& m) {
    gateway::EndpointConfig e;
    e.provider = m.backend == Backend::anthropic ? gateway::Provider::anthropic : gateway::Provider::openai;
    e.base_url = m.base_url;
    e.path = m.path;
    e.model_name = m.model_name;
    e.api_key_env = m.api_key_env;
    e.timeout_seconds = m.timeout_seconds;
    return e;
}

}  // namespace

Resources::Resources(const RunConfig& config) : config_(config) {
    world_ = std::make_unique<env::ToyWorld>(config_.environment.world.empty()
                                                 ? env::ToyWorldSpec::standard()
                                                 : env::ToyWorldSpec::load(config_.environment.world));
    const std::string action_space =
        config_.environment.action_space.empty() ? world_->action_space() : config_.environment.action_space;
    switch (config_.environment.kind) {
        case EnvironmentConfig::toy:
            factory_ = std::make_unique<env::ToyEnvironmentFactory>(world_->spec());
            break;
        case EnvironmentConfig::stdio:
            factory_ = std::make_unique<StdioFactory>(config_.environment.command, action_space);
            break;
        case EnvironmentConfig::tcp:
            factory_ = std::make_unique<TcpFactory>(config_.environment.host, config_.environment.port, action_space);
            break;
    }

    auto client = [&](const ModelSpec& m, cost::CallRole role) {
        std::shared_ptr<gateway::ModelBackend> backend;
        if (m.backend != Backend::scripted) {
            backend = gateway::make_live_backend(endpoint(m));
        } else if (role == cost::CallRole::teacher) {
            backend = gateway::make_scripted_teacher(*world_);
        } else if (role == cost::CallRole::student) {
            backend = gateway::make_scripted_student(m.behavior);
        } else {
            backend = gateway::make_scripted_verifier();
        }
        std::shared_ptr<gateway::RateLimiter> limiter;
        if (m.rate_limit_rps > 0) limiter = std::make_shared<gateway::RateLimiter>(m.rate_limit_rps, 1.0);
        clients_.push_back(
            std::make_unique<gateway::ModelClient>(m.pricing_key, role, m.pricing_key, backend, m.retry, limiter));
        return clients_.back().get();
    };
    models_.teacher = client(config_.models.teacher, cost::CallRole::teacher);
    models_.student = client(config_.models.student, cost::CallRole::student);
    models_.verifier = client(config_.models.verifier, cost::CallRole::verifier);
    templates_ = config_.templates ? agent::PromptTemplates::load_dir(*config_.templates)
                                   : agent::PromptTemplates::defaults();
}

Resources::~Resources() = default;

std::unique_ptr<retrieval::EmbeddingProvider> Resources::make_embedder() const {
    const auto& e = config_.embedder;
    if (e.kind == EmbedderConfig::hashed_bow) return std::make_unique<retrieval::HashedBowEmbedder>(e.dimension);
    gateway::EndpointConfig ep;
    ep.base_url = e.base_url;
    ep.path = e.path;
    ep.model_name = e.model_name;
    ep.api_key_env = e.api_key_env;
    return std::make_unique<retrieval::HttpEmbedder>(ep, e.dimension);
}

// ------------------------------------------------------------ episodes

std::vector<EpisodeOutcome> run_episodes(const std::vector<store::TaskSpec>& tasks, const agent::EpisodeConfig& ep,
                                         const Resources& res, const retrieval::RetrievalIndex* index,
                                         std::uint64_t seed, int workers, const std::string& source_label,
                                         const cost::PriceTable& prices, std::optional<Money> baseline) {
    std::vector<EpisodeOutcome> out(tasks.size());
    const agent::EpisodeDeps deps{&res.models(), &res.templates(), index};
    std::atomic<std::size_t> next{0};
    std::exception_ptr fatal;
    std::mutex fatal_mu;

    auto work = [&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
            const auto& task = tasks[i];
            auto& o = out[i];
            try {
                auto environment = res.environments().make();
                o.result = agent::run_episode(*environment, task, ep, deps, agent::episode_seed(seed, task.task_id),
                                              source_label);
            } catch (const ConfigError&) {
                std::lock_guard lock(fatal_mu);
                if (!fatal) fatal = std::current_exception();
                next = tasks.size();
                return;
            } catch (const std::exception& e) {
                o.result = {};
                o.result.trajectory.task = task;
                o.result.trajectory.source_model = source_label;
                o.result.error = e.what();
            }
            auto& r = o.report;
            r.episode_id = task.task_id;
            r.cost = cost::episode_cost(o.result.ledger.records(), prices);
            r.normalized_cost = baseline ? cost::normalized_cost(r.cost, *baseline) : 0.0;
            r.success = o.result.success;
            r.steps = static_cast<int>(o.result.trajectory.steps.size());
            r.teacher_steps = o.result.teacher_steps();
        }
    };
    const int n = std::max(1, std::min<int>(workers, static_cast<int>(tasks.size())));
    if (n == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n; ++i) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (fatal) std::rethrow_exception(fatal);
    std::stable_sort(out.begin(), out.end(), [](const EpisodeOutcome& a, const EpisodeOutcome& b) {
        return a.report.episode_id < b.report.episode_id;
    });
    return out;
}

namespace {

cost::Ledger merged_ledger(const std::vector<EpisodeOutcome>& outcomes) {
    cost::Ledger l;
    for (const auto& o : outcomes) l.merge(o.result.ledger);
    return l;
}

std::vector<cost::CostReport> reports_of(const std::vector<EpisodeOutcome>& outcomes) {
    std::vector<cost::CostReport> r;
    for (const auto& o : outcomes) r.push_back(o.report);
    return r;
}

void write_episode_files(const fs::path& dir, const std::vector<EpisodeOutcome>& outcomes, const cost::Ledger& ledger,
                         const cost::PriceTable& prices) {
    write_file(dir / "episodes.csv", [&](std::ostream& os) { cost::write_reports_csv(os, reports_of(outcomes)); });
    write_file(dir / "ledger.csv", [&](std::ostream& os) { ledger.write_csv(os, prices); });
    write_file(dir / "trajectories.jsonl", [&](std::ostream& os) {
        for (const auto& o : outcomes) os << store::trajectory_to_json_line(o.result.trajectory) << "\n";
    });
    std::vector<std::string> errors;
    for (const auto& o : outcomes)
        if (o.result.error) errors.push_back(o.report.episode_id + ": " + *o.result.error);
    if (errors.empty()) {
        fs::remove(dir / "errors.txt");
    } else {
        write_file(dir / "errors.txt", [&](std::ostream& os) {
            for (const auto& e : errors) os << e << "\n";
        });
    }
}

/// Paths made absolute so the snapshot reloads from anywhere.
RunConfig absolutized(RunConfig c) {
    auto abs = [](fs::path& p) {
        if (!p.empty()) p = fs::absolute(p).lexically_normal();
    };
    abs(c.output_dir);
    abs(c.db);
    abs(c.tasks.path);
    abs(c.environment.world);
    if (c.templates) abs(*c.templates);
    if (c.baseline) abs(*c.baseline);
    return c;
}

fs::path default_db_path(const RunConfig& c) { return c.db.empty() ? c.output_dir / "demos.jsonl" : c.db; }

fs::path index_cache_path(const fs::path& db) { return fs::path(db.string() + ".index"); }

void say(std::ostream* log, const std::string& line) {
    if (log) *log << line << std::endl;
}

}  // namespace

// ------------------------------------------------------------ collection

CollectResult collect_demos(const RunConfig& config, std::ostream* log) {
    config.validate(RunConfig::Purpose::collect);
    const env::TaskSet tasks = load_task_set(config);
    if (tasks.demo.empty()) throw ConfigError("the task set has no demo split");
    Resources res(config);
    auto embedder = res.make_embedder();

    agent::EpisodeConfig ep = config.episode;
    ep.policy = {};
    ep.policy.kind = PolicyKind::TeacherOnly;
    const std::string teacher = config.models.teacher.pricing_key;
    say(log, "collecting " + std::to_string(tasks.demo.size()) + " demonstrations with " + teacher);
    auto outcomes = run_episodes(tasks.demo, ep, res, nullptr, *config.seed, config.workers, teacher, config.prices,
                                 std::nullopt);

    store::Manifest manifest;
    manifest.embedder_id = embedder->id();
    manifest.dimension = embedder->dimension();
    manifest.metadata["teacher"] = teacher;
    manifest.metadata["task_seed"] = std::to_string(config.task_seed());
    manifest.metadata["run_seed"] = std::to_string(*config.seed);
    manifest.metadata["demo_tasks"] = std::to_string(tasks.demo.size());

    CollectResult result;
    result.db = store::DemoDatabase(manifest);
    for (const auto& o : outcomes) {
        result.demo_cost += o.report.cost;
        const auto& id = o.report.episode_id;
        if (o.result.error) {
            result.skipped.push_back(id + ": " + *o.result.error);
        } else if (!o.result.success) {
            result.skipped.push_back(id + ": episode did not succeed");
        } else if (auto v = store::validate_trajectory(o.result.trajectory); !v.empty()) {
            result.skipped.push_back(id + ": " + store::describe(v));
        } else {
            result.db.append(o.result.trajectory);
        }
    }
    result.db.seal();
    result.reports = reports_of(outcomes);
    result.ledger = merged_ledger(outcomes);
    for (const auto& s : result.skipped) say(log, "skipped " + s);

    const fs::path db_path = default_db_path(config);
    if (db_path.has_parent_path()) fs::create_directories(db_path.parent_path());
    store::save_database(result.db, db_path);
    if (config.embedder.cache) {
        auto shared = std::make_shared<const store::DemoDatabase>(result.db);
        retrieval::RetrievalIndex::build(shared, *embedder).save_cache(index_cache_path(db_path));
    }

    const fs::path& dir = config.output_dir;
    RunConfig snapshot = config;
    snapshot.db = db_path;
    write_file(dir / "config.json", [&](std::ostream& os) { os << absolutized(snapshot).to_json_text(); });
    write_episode_files(dir, outcomes, result.ledger, config.prices);
    save_task_set(tasks, dir / "tasks.json");
    ojson report;
    report["demo_cost_usd"] = result.demo_cost.to_string(12);
    report["episodes"] = outcomes.size();
    report["stored"] = result.db.size();
    report["skipped"] = result.skipped;
    report["db"] = fs::absolute(db_path).lexically_normal().string();
    report["db_hash"] = result.db.content_hash();
    report["embedder"] = manifest.embedder_id;
    report["teacher"] = teacher;
    write_file(dir / "collection.json", [&](std::ostream& os) { os << report.dump(2) << "\n"; });
    say(log, "stored " + std::to_string(result.db.size()) + " of " + std::to_string(outcomes.size()) +
                 " trajectories in " + db_path.string() + "; demo cost $" + result.demo_cost.to_string(6));
    return result;
}

Money read_collection_cost(const fs::path& dir) {
    const fs::path p = fs::is_directory(dir) ? dir / "collection.json" : dir;
    ojson j;
    try {
        j = ojson::parse(read_file(p));
    } catch (const ojson::parse_error& e) {
        throw RunError(p.string() + " is not valid JSON: " + e.what());
    }
    if (!j.contains("demo_cost_usd") || !j["demo_cost_usd"].is_string())
        throw RunError(p.string() + " has no demo_cost_usd");
    return parse_usd_text(j["demo_cost_usd"].get<std::string>());
}

// ------------------------------------------------------------ runs

std::string summary_to_json(const cost::RunSummary& s) {
    ojson j;
    j["label"] = s.label;
    j["episodes"] = s.episodes;
    j["accuracy"] = s.accuracy;
    j["mean_cost_usd"] = s.mean_cost.to_string(12);
    j["total_cost_usd"] = s.total_cost.to_string(12);
    j["mean_normalized_cost"] = s.mean_normalized_cost;
    j["teacher_fraction"] = s.teacher_fraction;
    j["mean_steps"] = s.mean_steps;
    j["total_steps"] = s.total_steps;
    j["teacher_steps"] = s.teacher_steps;
    j["teacher_baseline_usd"] = s.teacher_baseline ? ojson(s.teacher_baseline->to_string(12)) : ojson(nullptr);
    ojson tokens = ojson::object();
    for (const auto& [role, t] : s.tokens)
        tokens[cost::to_string(role)] = {
            {"input_tokens", t.input_tokens}, {"output_tokens", t.output_tokens}, {"calls", t.calls}};
    j["tokens"] = tokens;
    return j.dump(2) + "\n";
}

cost::RunSummary summary_from_json(const std::string& text) {
    cost::RunSummary s;
    try {
        const ojson j = ojson::parse(text);
        s.label = j.at("label").get<std::string>();
        s.episodes = j.at("episodes").get<std::size_t>();
        s.accuracy = j.at("accuracy").get<double>();
        s.mean_cost = parse_usd_text(j.at("mean_cost_usd").get<std::string>());
        s.total_cost = parse_usd_text(j.at("total_cost_usd").get<std::string>());
        s.mean_normalized_cost = j.at("mean_normalized_cost").get<double>();
        s.teacher_fraction = j.at("teacher_fraction").get<double>();
        s.mean_steps = j.at("mean_steps").get<double>();
        s.total_steps = j.at("total_steps").get<std::int64_t>();
        s.teacher_steps = j.at("teacher_steps").get<std::int64_t>();
        if (!j.at("teacher_baseline_usd").is_null())
            s.teacher_baseline = parse_usd_text(j.at("teacher_baseline_usd").get<std::string>());
        for (const auto& [role, t] : j.at("tokens").items())
            s.tokens[cost::call_role_from_string(role)] = {t.at("input_tokens").get<std::int64_t>(),
                                                           t.at("output_tokens").get<std::int64_t>(),
                                                           t.at("calls").get<std::int64_t>()};
    } catch (const ojson::exception& e) {
        throw RunError(std::string("malformed run summary: ") + e.what());
    } catch (const cost::CostError& e) {
        throw RunError(std::string("malformed run summary: ") + e.what());
    }
    return s;
}

std::vector<fs::path> find_run_dirs(const fs::path& root) {
    if (fs::is_regular_file(root / "summary.json")) return {root};
    std::vector<fs::path> out;
    if (fs::is_directory(root))
        for (const auto& entry : fs::directory_iterator(root))
            if (entry.is_directory() && fs::is_regular_file(entry.path() / "summary.json")) out.push_back(entry.path());
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

struct LoadedDb {
    std::shared_ptr<const store::DemoDatabase> full;
    std::unique_ptr<retrieval::EmbeddingProvider> embedder;
    std::map<std::size_t, std::unique_ptr<retrieval::RetrievalIndex>> by_size;
    std::unique_ptr<retrieval::RetrievalIndex> full_index;
};

/// First n positions of a seeded Fisher-Yates shuffle, back in db order.
std::vector<std::size_t> db_prefix(std::size_t size, std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(size);
    for (std::size_t i = 0; i < size; ++i) order[i] = i;
    std::mt19937_64 rng(seed ^ 0x5eedd0b5ULL);
    for (std::size_t i = size; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    order.resize(n);
    std::sort(order.begin(), order.end());
    return order;
}

const retrieval::RetrievalIndex* index_for(LoadedDb& d, const RunConfig& c, std::ostream* log) {
    if (!d.full_index) {
        if (c.embedder.cache)
            if (auto cached = retrieval::RetrievalIndex::load_cache(index_cache_path(c.db), d.full, *d.embedder))
                d.full_index = std::make_unique<retrieval::RetrievalIndex>(std::move(*cached));
        if (!d.full_index) {
            say(log, "indexing " + std::to_string(d.full->size()) + " demonstrations");
            d.full_index = std::make_unique<retrieval::RetrievalIndex>(retrieval::RetrievalIndex::build(d.full, *d.embedder));
            if (c.embedder.cache) d.full_index->save_cache(index_cache_path(c.db));
        }
    }
    if (!c.db_size || *c.db_size >= d.full->size()) {
        if (c.db_size && *c.db_size > d.full->size())
            throw ConfigError("db_size " + std::to_string(*c.db_size) + " exceeds the database size " +
                              std::to_string(d.full->size()));
        return d.full_index.get();
    }
    auto& slot = d.by_size[*c.db_size];
    if (!slot) {
        auto sub = std::make_shared<const store::DemoDatabase>(
            d.full->subset(db_prefix(d.full->size(), *c.db_size, *c.seed)));
        slot = std::make_unique<retrieval::RetrievalIndex>(retrieval::RetrievalIndex::build(sub, *d.embedder));
    }
    return slot.get();
}

PointResult finish_point(const RunConfig& c, const fs::path& dir, std::vector<EpisodeOutcome>& outcomes,
                         std::optional<Money> baseline, const std::string& db_note, std::ostream* log) {
    if (baseline)
        for (auto& o : outcomes) o.report.normalized_cost = cost::normalized_cost(o.report.cost, *baseline);
    PointResult p;
    p.label = c.label.empty() ? c.method_label() : c.label;
    p.dir = dir;
    p.reports = reports_of(outcomes);
    p.ledger = merged_ledger(outcomes);
    p.summary = cost::aggregate_run(p.label, p.reports, p.ledger, baseline);

    fs::create_directories(dir);
    write_file(dir / "config.json", [&](std::ostream& os) { os << absolutized(c).to_json_text(); });
    write_episode_files(dir, outcomes, p.ledger, c.prices);
    write_file(dir / "summary.json", [&](std::ostream& os) { os << summary_to_json(p.summary); });
    write_file(dir / "summary.csv", [&](std::ostream& os) { cost::write_summary_csv(os, {p.summary}); });
    ojson run;
    run["label"] = p.label;
    run["seed"] = *c.seed;
    run["task_seed"] = c.task_seed();
    run["database"] = db_note;
    run["errors"] = std::count_if(outcomes.begin(), outcomes.end(), [](const auto& o) { return o.result.error.has_value(); });
    write_file(dir / "run.json", [&](std::ostream& os) { os << run.dump(2) << "\n"; });

    std::ostringstream line;
    line << p.label << ": accuracy " << fmt_double(p.summary.accuracy) << ", mean cost $"
         << p.summary.mean_cost.to_string(6) << ", normalized " << fmt_double(p.summary.mean_normalized_cost)
         << ", teacher fraction " << fmt_double(p.summary.teacher_fraction);
    say(log, line.str());
    return p;
}

}  // namespace

std::vector<PointResult> run_experiment(const RunConfig& config, std::ostream* log) {
    config.validate(RunConfig::Purpose::run);
    const auto points = expand_sweep(config);
    const env::TaskSet tasks = load_task_set(config);
    if (tasks.test.empty()) throw ConfigError("the task set has no test split");
    Resources res(config);

    LoadedDb db;
    const bool any_db = std::any_of(points.begin(), points.end(), [](const auto& p) { return point_needs_db(p.config); });
    if (any_db) {
        try {
            db.full = std::make_shared<const store::DemoDatabase>(store::load_database(config.db));
        } catch (const store::StoreError& e) {
            throw ConfigError(std::string("cannot load demo database: ") + e.what());
        }
        db.embedder = res.make_embedder();
        for (const auto& p : points)
            if (p.config.db_size && *p.config.db_size > db.full->size())
                throw ConfigError("db_size " + std::to_string(*p.config.db_size) + " exceeds the database size " +
                                  std::to_string(db.full->size()));
        const auto& m = db.full->manifest();
        if (!m.embedder_id.empty() && m.embedder_id != db.embedder->id())
            say(log, "note: database was collected for embedder " + m.embedder_id + ", indexing with " +
                         db.embedder->id());
    }

    auto run_point = [&](const RunConfig& c, std::optional<Money> baseline) {
        const retrieval::RetrievalIndex* index = point_needs_db(c) ? index_for(db, c, log) : nullptr;
        return run_episodes(tasks.test, c.episode, res, index, *c.seed, c.workers, c.method_label(), c.prices,
                            baseline);
    };
    auto db_note = [&](const RunConfig& c) -> std::string {
        if (!point_needs_db(c)) return "";
        std::ostringstream os;
        os << fs::absolute(c.db).lexically_normal().string() << " hash " << db.full->content_hash() << " size "
           << (c.db_size ? std::min(*c.db_size, db.full->size()) : db.full->size()) << " embedder "
           << db.embedder->id();
        return os.str();
    };
    auto dir_of = [&](const SweepPoint& p) { return p.suffix.empty() ? config.output_dir : config.output_dir / p.suffix; };

    std::optional<Money> baseline;
    std::vector<std::optional<PointResult>> results(points.size());
    if (config.baseline) {
        baseline = summary_from_json(read_file(*config.baseline / "summary.json")).mean_cost;
        say(log, "teacher baseline $" + baseline->to_string(6) + " from " + config.baseline->string());
    } else {
        auto it = std::find_if(points.begin(), points.end(), [](const auto& p) {
            return p.config.episode.policy.kind == PolicyKind::TeacherOnly;
        });
        if (it != points.end()) {
            auto outcomes = run_point(it->config, std::nullopt);
            Money total;
            for (const auto& o : outcomes) total += o.report.cost;
            baseline = Money::from_pico(total.pico() / static_cast<__int128>(outcomes.size()));
            const auto i = static_cast<std::size_t>(it - points.begin());
            results[i] = finish_point(it->config, dir_of(*it), outcomes, baseline, db_note(it->config), log);
            baseline = results[i]->summary.mean_cost;
        } else {
            RunConfig b = config;
            b.sweep = {};
            b.episode.policy = {};
            b.episode.policy.kind = PolicyKind::TeacherOnly;
            b.label = "TeacherOnly";
            say(log, "running the TeacherOnly baseline");
            auto outcomes = run_point(b, std::nullopt);
            Money total;
            for (const auto& o : outcomes) total += o.report.cost;
            auto bp = finish_point(b, config.output_dir / "baseline", outcomes,
                                   Money::from_pico(total.pico() / static_cast<__int128>(outcomes.size())), "", log);
            baseline = bp.summary.mean_cost;
        }
    }
    if (baseline && baseline->pico() <= 0)
        throw RunError("the teacher baseline cost is zero; price the teacher model to normalize costs");

    for (std::size_t i = 0; i < points.size(); ++i) {
        if (results[i]) continue;
        auto outcomes = run_point(points[i].config, baseline);
        results[i] = finish_point(points[i].config, dir_of(points[i]), outcomes, baseline, db_note(points[i].config), log);
    }

    std::vector<PointResult> out;
    for (auto& r : results) out.push_back(std::move(*r));
    if (points.size() > 1) {
        std::vector<cost::RunSummary> rows;
        for (const auto& r : out) rows.push_back(r.summary);
        write_file(config.output_dir / "summary.csv", [&](std::ostream& os) { cost::write_summary_csv(os, rows); });
    }
    return out;
}

// ------------------------------------------------------------ reconciliation

std::string reconcile_run_dir(const fs::path& run_dir) {
    const auto summary = summary_from_json(read_file(run_dir / "summary.json"));
    std::ifstream in(run_dir / "ledger.csv");
    if (!in) throw RunError("cannot read " + (run_dir / "ledger.csv").string());
    const auto records = cost::Ledger::read_csv(in);

    std::map<cost::CallRole, cost::TokenTotals> sums;
    for (const auto& r : records) {
        auto& t = sums[r.role];
        t.input_tokens += r.input_tokens;
        t.output_tokens += r.output_tokens;
        ++t.calls;
    }
    for (auto role : {cost::CallRole::student, cost::CallRole::teacher, cost::CallRole::verifier}) {
        auto a = summary.tokens.count(role) ? summary.tokens.at(role) : cost::TokenTotals{};
        auto b = sums.count(role) ? sums.at(role) : cost::TokenTotals{};
        const std::string r = cost::to_string(role);
        if (a.input_tokens != b.input_tokens)
            return r + " input tokens: summary " + std::to_string(a.input_tokens) + ", ledger " +
                   std::to_string(b.input_tokens);
        if (a.output_tokens != b.output_tokens)
            return r + " output tokens: summary " + std::to_string(a.output_tokens) + ", ledger " +
                   std::to_string(b.output_tokens);
        if (a.calls != b.calls)
            return r + " calls: summary " + std::to_string(a.calls) + ", ledger " + std::to_string(b.calls);
    }
    if (fs::is_regular_file(run_dir / "config.json")) {
        const auto config = RunConfig::load(run_dir / "config.json");
        const Money total = cost::episode_cost(records, config.prices);
        if (total != summary.total_cost)
            return "total cost: summary $" + summary.total_cost.to_string(12) + ", ledger $" + total.to_string(12);
    }
    return "";
}

// ------------------------------------------------------------ report

Report build_report(const std::vector<cost::RunSummary>& rows, std::optional<double> lambda) {
    if (rows.empty()) throw RunError("no runs to report");
    for (const auto& r : rows) {
        if (!r.teacher_baseline) throw RunError("run '" + r.label + "' has no teacher baseline");
        if (*r.teacher_baseline != *rows.front().teacher_baseline)
            throw RunError("runs use different teacher baselines: '" + rows.front().label + "' has $" +
                           rows.front().teacher_baseline->to_string(12) + ", '" + r.label + "' has $" +
                           r.teacher_baseline->to_string(12));
    }
    Report rep;
    rep.rows = rows;
    rep.lambda = lambda;
    for (const auto& r : rows) rep.points.push_back({r.accuracy, r.mean_normalized_cost, r.label});
    rep.frontier = cost::pareto_frontier(rep.points);
    if (lambda) {
        for (const auto& p : rep.points) rep.ranking.push_back({p, cost::scalarized_score(p, *lambda)});
        std::stable_sort(rep.ranking.begin(), rep.ranking.end(), [](const RankedPoint& a, const RankedPoint& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.point.label < b.point.label;
        });
    }
    return rep;
}

void write_report(const Report& report, const fs::path& dir) {
    auto on_frontier = [&](const cost::ParetoPoint& p) {
        return std::any_of(report.frontier.begin(), report.frontier.end(), [&](const cost::ParetoPoint& f) {
            return f.label == p.label && f.accuracy == p.accuracy && f.normalized_cost == p.normalized_cost;
        });
    };
    auto csv_text = [](const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        return "\"" + text::replace_all(s, "\"", "\"\"") + "\"";
    };
    write_file(dir / "pareto.csv", [&](std::ostream& os) {
        os << "label,accuracy,normalized_cost,mean_cost_usd,teacher_fraction,on_frontier\n";
        for (std::size_t i = 0; i < report.rows.size(); ++i) {
            const auto& r = report.rows[i];
            os << csv_text(r.label) << "," << fmt_double(r.accuracy) << "," << fmt_double(r.mean_normalized_cost)
               << "," << r.mean_cost.to_string(12) << "," << fmt_double(r.teacher_fraction) << ","
               << (on_frontier(report.points[i]) ? "true" : "false") << "\n";
        }
    });
    write_file(dir / "frontier.csv", [&](std::ostream& os) {
        os << "label,accuracy,normalized_cost\n";
        for (const auto& p : report.frontier)
            os << csv_text(p.label) << "," << fmt_double(p.accuracy) << "," << fmt_double(p.normalized_cost) << "\n";
    });
    if (report.lambda) {
        write_file(dir / "ranking.csv", [&](std::ostream& os) {
            os << "rank,label,score,accuracy,normalized_cost\n";
            for (std::size_t i = 0; i < report.ranking.size(); ++i) {
                const auto& r = report.ranking[i];
                os << i + 1 << "," << csv_text(r.point.label) << "," << fmt_double(r.score) << ","
                   << fmt_double(r.point.accuracy) << "," << fmt_double(r.point.normalized_cost) << "\n";
            }
        });
    }
    ojson j;
    j["teacher_baseline_usd"] = report.rows.front().teacher_baseline->to_string(12);
    j["lambda"] = report.lambda ? ojson(*report.lambda) : ojson(nullptr);
    ojson runs = ojson::array();
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        auto row = ojson::parse(summary_to_json(report.rows[i]));
        row["on_frontier"] = on_frontier(report.points[i]);
        runs.push_back(row);
    }
    j["runs"] = runs;
    ojson frontier = ojson::array();
    for (const auto& p : report.frontier) frontier.push_back(p.label);
    j["frontier"] = frontier;
    if (report.lambda) {
        ojson ranking = ojson::array();
        for (const auto& r : report.ranking) ranking.push_back({{"label", r.point.label}, {"score", r.score}});
        j["ranking"] = ranking;
    }
    write_file(dir / "report.json", [&](std::ostream& os) { os << j.dump(2) << "\n"; });
}

// ------------------------------------------------------------ break-even

BreakevenTable breakeven_table(const cost::BreakevenInput& in, const std::vector<std::int64_t>& grid) {
    BreakevenTable t;
    t.input = in;
    t.result = cost::breakeven(in);
    for (auto n : grid) {
        if (n < 0) throw ConfigError("episode counts must not be negative");
        t.savings.emplace_back(n, t.result.savings_at(n));
    }
    return t;
}

void write_breakeven_csv(std::ostream& os, const BreakevenTable& t) {
    os << "episodes,savings_usd\n";
    for (const auto& [n, s] : t.savings) os << n << "," << s.to_string(6) << "\n";
}

}  // namespace icd::experiment
