#include "icd/agent_loop.hpp"

namespace icd::agent {

using routing::ConfigError;

std::string to_string(Granularity g) { return g == Granularity::per_step ? "per-step" : "single"; }

Granularity granularity_from_string(const std::string& s) {
    if (s == "per-step") return Granularity::per_step;
    if (s == "single") return Granularity::single;
    throw ConfigError("unknown retrieval granularity '" + s + "' (expected per-step or single)");
}

std::string to_string(StepQuery q) { return q == StepQuery::observation ? "observation" : "reasoning"; }

StepQuery step_query_from_string(const std::string& s) {
    if (s == "observation") return StepQuery::observation;
    if (s == "reasoning") return StepQuery::reasoning;
    throw ConfigError("unknown step query '" + s + "' (expected observation or reasoning)");
}

void EpisodeConfig::validate() const {
    if (T < 1) throw ConfigError("episode.T must be >= 1");
    if (k < 0) throw ConfigError("episode.k must be >= 0");
    if (W < 0) throw ConfigError("episode.W must be >= 0");
    if (!(temperature >= 0.0)) throw ConfigError("episode.temperature must be >= 0");
    if (max_output_tokens < 1) throw ConfigError("episode.max_output_tokens must be >= 1");
    if (weights.goal < 0 || weights.plan < 0 || weights.reasoning < 0 ||
        weights.goal + weights.plan + weights.reasoning <= 0)
        throw ConfigError("retrieval weights must be non-negative with a positive sum");
    policy.validate();
}

int EpisodeConfig::effective_k(routing::PolicyKind kind) const { return routing::uses_exemplars(kind) ? k : 0; }

int EpisodeResult::teacher_steps() const {
    int n = 0;
    for (const auto& d : decisions) n += d.chosen == routing::ModelChoice::teacher;
    return n;
}

std::size_t EpisodeResult::expected_calls() const {
    std::size_t n = static_cast<std::size_t>(plan_decision.student_calls + plan_decision.teacher_calls);
    for (const auto& d : decisions) n += static_cast<std::size_t>(d.student_calls + d.teacher_calls + d.verifier_calls);
    return n;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t episode_seed(std::uint64_t run_seed, const std::string& task_id) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : task_id) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return mix(run_seed, h);
}

EpisodeResult run_episode(env::Environment& env, const store::TaskSpec& task, const EpisodeConfig& config,
                          const EpisodeDeps& deps, std::uint64_t seed, const std::string& source_label) {
    EpisodeResult res;
    res.trajectory.task = task;
    res.trajectory.source_model = source_label;

    const auto kind = routing::resolve_kind(config.policy, task.difficulty);
    const int k = config.effective_k(kind);
    if (k > 0 && !deps.index) throw ConfigError(routing::to_string(kind) + " with k > 0 needs a retrieval index");
    std::mt19937_64 mix_rng(episode_seed(config.policy.rng_seed.value_or(0), task.task_id));

    std::string obs;
    try {
        obs = env.reset(task);
    } catch (const env::EnvironmentError& e) {
        res.error = std::string("environment reset failed: ") + e.what();
        return res;
    }
    const std::string action_space = env.action_space();

    std::vector<PlanExemplar> plan_ex;
    std::vector<StepExemplar> single_ex;
    if (k > 0) {
        for (const auto& hit : deps.index->retrieve_plans(task.goal, k)) {
            plan_ex.push_back({hit.goal, hit.plan});
            if (config.granularity == Granularity::single) {
                const auto& t = deps.index->database().at(hit.trajectory);
                single_ex.push_back({t.task.goal, t.plan, t.steps});
            }
        }
        if (config.granularity == Granularity::single) res.retrieval_calls = 1;
    }

    try {
        routing::PlanContext pc;
        pc.goal = task.goal;
        pc.action_space = action_space;
        pc.exemplars = plan_ex;
        pc.difficulty = task.difficulty;
        pc.tag = {task.task_id, cost::Phase::plan, -1};
        pc.temperature = config.temperature;
        pc.max_output_tokens = config.max_output_tokens;
        pc.seed = mix(seed, 0);
        pc.templates = deps.templates;
        res.plan_decision = routing::decide_plan(config.policy, pc, *deps.models, res.ledger);
    } catch (const gateway::GatewayError& e) {
        res.error = std::string("planning failed: ") + e.what();
        return res;
    }
    const std::string plan = res.plan_decision.plan;
    res.trajectory.plan = plan;

    std::vector<HistoryStep> history;
    std::string last_reasoning;
    for (int t = 0; t < config.T; ++t) {
        routing::StepContext ctx;
        if (k > 0 && config.granularity == Granularity::per_step) {
            const std::string& query = config.step_query == StepQuery::observation ? obs : last_reasoning;
            for (auto& w : deps.index->retrieve_step_windows(task.goal, plan, query, k, config.W, config.weights)) {
                const auto& src = deps.index->database().at(w.trajectory);
                ctx.exemplars.push_back({src.task.goal, src.plan, std::move(w.steps)});
            }
            ++res.retrieval_calls;
        } else {
            ctx.exemplars = single_ex;
        }
        ctx.goal = task.goal;
        ctx.plan = plan;
        ctx.trajectory_text = format_trajectory(history, obs, config.history_chars);
        ctx.action_space = action_space;
        ctx.difficulty = task.difficulty;
        ctx.tag = {task.task_id, cost::Phase::act, t};
        ctx.temperature = config.temperature;
        ctx.max_output_tokens = config.max_output_tokens;
        ctx.seed = mix(seed, static_cast<std::uint64_t>(t) + 1);
        ctx.templates = deps.templates;

        routing::RoutingDecision d;
        try {
            d = routing::decide_step(config.policy, ctx, *deps.models, res.ledger, mix_rng);
        } catch (const gateway::GatewayError& e) {
            res.error = "step " + std::to_string(t) + ": " + e.what();
            break;
        }
        res.trajectory.steps.push_back({t, obs, d.reasoning, d.executed_action});
        history.push_back({obs, d.reasoning, d.executed_action});
        last_reasoning = d.reasoning;
        const std::string action = d.executed_action;
        res.decisions.push_back(std::move(d));

        env::StepOutcome out;
        try {
            out = env.step(action);
        } catch (const env::EnvironmentError& e) {
            res.error = "step " + std::to_string(t) + ": " + e.what();
            break;
        }
        if (out.done) {
            res.success = out.success;
            break;
        }
        obs = out.observation;
    }
    res.trajectory.success = res.success;
    return res;
}

}  // namespace icd::agent
