#include "icd/routing.hpp"

#include <algorithm>
#include <cctype>

#include "icd/text.hpp"

namespace icd::routing {

namespace {

const std::vector<std::pair<PolicyKind, std::string>> kKindNames{
    {PolicyKind::TeacherOnly, "TeacherOnly"}, {PolicyKind::StudentZS, "StudentZS"},
    {PolicyKind::StudentIC, "StudentIC"},     {PolicyKind::ICCascade, "ICCascade"},
    {PolicyKind::CascadeOnly, "CascadeOnly"}, {PolicyKind::RandomMix, "RandomMix"},
    {PolicyKind::DifficultyAware, "DifficultyAware"}};

}  // namespace

std::string to_string(PolicyKind k) {
    for (const auto& [kind, name] : kKindNames)
        if (kind == k) return name;
    return "?";
}

PolicyKind policy_kind_from_string(const std::string& s) {
    for (const auto& [kind, name] : kKindNames)
        if (name == s) return kind;
    throw ConfigError("unknown policy kind '" + s + "'");
}

std::string to_string(Equivalence e) { return e == Equivalence::strict ? "strict" : "soft"; }

Equivalence equivalence_from_string(const std::string& s) {
    if (s == "strict") return Equivalence::strict;
    if (s == "soft") return Equivalence::soft;
    throw ConfigError("unknown equivalence '" + s + "' (expected strict or soft)");
}

std::string to_string(ModelChoice c) { return c == ModelChoice::student ? "student" : "teacher"; }

bool uses_exemplars(PolicyKind k) {
    return k == PolicyKind::StudentIC || k == PolicyKind::ICCascade || k == PolicyKind::RandomMix;
}

bool is_cascade(PolicyKind k) { return k == PolicyKind::ICCascade || k == PolicyKind::CascadeOnly; }

void PolicyConfig::validate() const {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("policy.p must be in [0, 1]");
    if (N < 1) throw ConfigError("policy.N must be >= 1");
    auto check_kind = [&](PolicyKind k) {
        if (is_cascade(k) && N < 2) throw ConfigError(to_string(k) + " needs N >= 2");
        if (k == PolicyKind::RandomMix && !rng_seed) throw ConfigError("RandomMix needs policy.seed");
    };
    if (kind == PolicyKind::DifficultyAware) {
        if (difficulty_rule.empty()) throw ConfigError("DifficultyAware needs a difficulty_rule");
        for (const auto& [d, k] : difficulty_rule) {
            if (k == PolicyKind::DifficultyAware) throw ConfigError("difficulty_rule cannot delegate to DifficultyAware");
            check_kind(k);
        }
    } else {
        check_kind(kind);
    }
}

PolicyKind resolve_kind(const PolicyConfig& policy, std::optional<int> difficulty) {
    if (policy.kind != PolicyKind::DifficultyAware) return policy.kind;
    if (!difficulty) throw ConfigError("DifficultyAware routing needs a task difficulty");
    auto it = policy.difficulty_rule.find(*difficulty);
    if (it == policy.difficulty_rule.end())
        throw ConfigError("difficulty_rule has no entry for difficulty " + std::to_string(*difficulty));
    return it->second;
}

std::string normalize_action(const std::string& action) { return text::join_ws(text::split_ws(action)); }

bool check_consistency_strict(const std::vector<std::string>& actions) {
    if (actions.empty()) return false;
    const auto first = normalize_action(actions.front());
    return std::all_of(actions.begin(), actions.end(), [&](const auto& a) { return normalize_action(a) == first; });
}

ModelChoice random_mix_choice(double p, std::mt19937_64& rng) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return u < p ? ModelChoice::teacher : ModelChoice::student;
}

namespace {

const std::vector<agent::StepExemplar> kNoExemplars;

gateway::ChatRequest react_request(const StepContext& ctx, const std::vector<agent::StepExemplar>& exemplars,
                                   int n, std::uint64_t seed_salt) {
    auto p = agent::render_react_prompt(*ctx.templates, ctx.goal, ctx.plan, ctx.trajectory_text, ctx.action_space,
                                        exemplars);
    gateway::ChatRequest req;
    req.system_text = std::move(p.system_text);
    req.user_text = std::move(p.user_text);
    req.temperature = ctx.temperature;
    req.max_output_tokens = ctx.max_output_tokens;
    req.n_samples = n;
    req.seed = ctx.seed ^ seed_salt;
    return req;
}

/// Parsed sample, or the trimmed raw text when it has no labels.
agent::ParsedStep parse_or_raw(const std::string& text, bool* failed) {
    try {
        return agent::parse_react_output(text);
    } catch (const agent::ParseError&) {
        if (failed) *failed = true;
        return {"", text::trim(text)};
    }
}

void single_call(const gateway::ModelClient& model, const StepContext& ctx,
                 const std::vector<agent::StepExemplar>& exemplars, cost::Ledger& ledger, RoutingDecision& d,
                 std::uint64_t salt) {
    auto resp = model.complete(react_request(ctx, exemplars, 1, salt), ctx.tag, ledger);
    bool failed = false;
    auto step = parse_or_raw(resp.samples.front(), &failed);
    d.parse_error = d.parse_error || failed;
    d.executed_action = step.action;
    d.reasoning = step.reasoning;
}

constexpr std::uint64_t kStudentSalt = 0x5354554445ULL;
constexpr std::uint64_t kTeacherSalt = 0x5445414348ULL;

}  // namespace

bool check_consistency_soft(const gateway::ModelClient& verifier, const StepContext& ctx,
                            const std::vector<std::string>& actions, bool with_exemplars, cost::Ledger& ledger,
                            std::string* error) {
    auto p = agent::render_verifier_prompt(*ctx.templates, ctx.goal, ctx.plan, ctx.trajectory_text, ctx.action_space,
                                           with_exemplars ? ctx.exemplars : kNoExemplars, actions);
    gateway::ChatRequest req;
    req.system_text = std::move(p.system_text);
    req.user_text = std::move(p.user_text);
    req.temperature = ctx.temperature;
    req.max_output_tokens = ctx.max_output_tokens;
    req.seed = ctx.seed;
    try {
        auto resp = verifier.complete(req, ctx.tag, ledger);
        std::string reply = text::trim(resp.samples.front());
        for (auto& c : reply) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        return reply == "YES";
    } catch (const gateway::TransportError& e) {
        if (error) *error = e.what();
        return false;
    }
}

RoutingDecision decide_step(const PolicyConfig& policy, const StepContext& ctx, const Models& models,
                            cost::Ledger& ledger, std::mt19937_64& mix_rng) {
    RoutingDecision d;
    const PolicyKind kind = resolve_kind(policy, ctx.difficulty);
    const auto& teacher_ex = policy.defer_with_exemplars ? ctx.exemplars : kNoExemplars;
    auto teacher_step = [&] {
        d.chosen = ModelChoice::teacher;
        single_call(*models.teacher, ctx, teacher_ex, ledger, d, kTeacherSalt);
        d.teacher_calls = 1;
    };
    auto student_step = [&](const std::vector<agent::StepExemplar>& ex) {
        d.chosen = ModelChoice::student;
        single_call(*models.student, ctx, ex, ledger, d, kStudentSalt);
        d.samples = {d.executed_action};
        d.student_calls = 1;
    };

    switch (kind) {
        case PolicyKind::TeacherOnly:
            // the baseline teacher prompt has no retrieved exemplars
            d.chosen = ModelChoice::teacher;
            single_call(*models.teacher, ctx, kNoExemplars, ledger, d, kTeacherSalt);
            d.teacher_calls = 1;
            return d;
        case PolicyKind::StudentZS: student_step(kNoExemplars); return d;
        case PolicyKind::StudentIC: student_step(ctx.exemplars); return d;
        case PolicyKind::RandomMix:
            if (random_mix_choice(policy.p, mix_rng) == ModelChoice::teacher) teacher_step();
            else student_step(ctx.exemplars);
            return d;
        case PolicyKind::ICCascade:
        case PolicyKind::CascadeOnly: break;
        case PolicyKind::DifficultyAware: throw ConfigError("unresolved DifficultyAware policy");
    }

    const auto& ex = kind == PolicyKind::ICCascade ? ctx.exemplars : kNoExemplars;
    auto resp = models.student->complete(react_request(ctx, ex, policy.N, kStudentSalt), ctx.tag, ledger);
    d.student_calls = policy.N;
    std::vector<agent::ParsedStep> parsed;
    for (const auto& s : resp.samples) {
        bool failed = false;
        auto p = parse_or_raw(s, &failed);
        if (failed) {
            d.parse_error = true;
            p.action.clear();
        }
        parsed.push_back(p);
        d.samples.push_back(p.action);
    }
    // a parse failure is a disagreement; the verifier is not consulted
    bool consistent = !d.parse_error && check_consistency_strict(d.samples);
    if (!consistent && !d.parse_error && policy.equivalence == Equivalence::soft && models.verifier) {
        d.verifier_used = true;
        d.verifier_calls = 1;
        consistent = check_consistency_soft(*models.verifier, ctx, d.samples, policy.verifier_exemplars, ledger,
                                            &d.verifier_error);
        if (!d.verifier_error.empty()) d.verifier_calls = 0;
    }
    d.consistent = consistent;
    if (consistent) {
        d.chosen = ModelChoice::student;
        d.executed_action = parsed.front().action;
        d.reasoning = parsed.front().reasoning;
        return d;
    }
    const bool had_parse_error = d.parse_error;
    teacher_step();
    d.parse_error = had_parse_error;
    return d;
}

PlanDecision decide_plan(const PolicyConfig& policy, const PlanContext& ctx, const Models& models,
                         cost::Ledger& ledger) {
    const PolicyKind kind = resolve_kind(policy, ctx.difficulty);
    static const std::vector<agent::PlanExemplar> none;
    auto request = [&](const std::vector<agent::PlanExemplar>& ex, int n, std::uint64_t salt) {
        auto p = agent::render_plan_prompt(*ctx.templates, ctx.goal, ctx.action_space, ex);
        gateway::ChatRequest req;
        req.system_text = std::move(p.system_text);
        req.user_text = std::move(p.user_text);
        req.temperature = ctx.temperature;
        req.max_output_tokens = ctx.max_output_tokens;
        req.n_samples = n;
        req.seed = ctx.seed ^ salt;
        return req;
    };
    PlanDecision d;
    auto teacher_plan = [&] {
        auto r = models.teacher->complete(request(none, 1, kTeacherSalt), ctx.tag, ledger);
        d.chosen = ModelChoice::teacher;
        d.plan = text::trim(r.samples.front());
        d.teacher_calls += 1;
    };
    const bool with_ex = uses_exemplars(kind);
    switch (kind) {
        case PolicyKind::TeacherOnly: teacher_plan(); return d;
        case PolicyKind::ICCascade:
        case PolicyKind::CascadeOnly:
            if (policy.route_plan) break;
            [[fallthrough]];
        default: {
            auto r = models.student->complete(request(with_ex ? ctx.exemplars : none, 1, kStudentSalt), ctx.tag,
                                              ledger);
            d.plan = text::trim(r.samples.front());
            d.samples = {d.plan};
            d.student_calls = 1;
            return d;
        }
    }
    auto r = models.student->complete(request(with_ex ? ctx.exemplars : none, policy.N, kStudentSalt), ctx.tag,
                                      ledger);
    d.student_calls = policy.N;
    for (const auto& s : r.samples) d.samples.push_back(text::trim(s));
    d.consistent = check_consistency_strict(d.samples);
    if (*d.consistent) {
        d.plan = d.samples.front();
        return d;
    }
    teacher_plan();
    return d;
}

}  // namespace icd::routing
