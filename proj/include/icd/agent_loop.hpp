#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "icd/cost.hpp"
#include "icd/environment.hpp"
#include "icd/prompts.hpp"
#include "icd/retrieval.hpp"
#include "icd/routing.hpp"

namespace icd::agent {

enum class Granularity { per_step, single };
/// Third retrieval key: the current observation, or the latest executed
/// reasoning (empty on the first step).
enum class StepQuery { observation, reasoning };

std::string to_string(Granularity g);
Granularity granularity_from_string(const std::string& s);
std::string to_string(StepQuery q);
StepQuery step_query_from_string(const std::string& s);

struct EpisodeConfig {
    int T = 30;
    /// Exemplars per retrieval; 0 is zero-shot.
    int k = 6;
    int W = 2;
    double temperature = 0.1;
    int max_output_tokens = 4096;
    Granularity granularity = Granularity::per_step;
    StepQuery step_query = StepQuery::observation;
    /// Character budget of the trajectory-so-far; oldest steps go first.
    std::size_t history_chars = 32000;
    retrieval::ScoreWeights weights;
    routing::PolicyConfig policy;

    /// Throws routing::ConfigError.
    void validate() const;
    /// k actually used for the given kind: 0 unless its prompts carry exemplars.
    int effective_k(routing::PolicyKind kind) const;
};

struct EpisodeResult {
    store::Trajectory trajectory;
    bool success = false;
    routing::PlanDecision plan_decision;
    /// One per executed act step.
    std::vector<routing::RoutingDecision> decisions;
    cost::Ledger ledger;
    /// Step-level retrievals: one per act step, or one per episode in
    /// single mode.
    int retrieval_calls = 0;
    /// Environment or gateway failure that ended the episode early.
    std::optional<std::string> error;

    int teacher_steps() const;
    /// Calls the decisions account for; equals ledger.size().
    std::size_t expected_calls() const;
};

struct EpisodeDeps {
    const routing::Models* models = nullptr;
    const PromptTemplates* templates = nullptr;
    /// May be null when the policy never retrieves.
    const retrieval::RetrievalIndex* index = nullptr;
};

/// Plan once, then at most T act steps (retrieve, prompt, route, act) until
/// the environment reports done. `seed` fixes every sampling seed.
EpisodeResult run_episode(env::Environment& env, const store::TaskSpec& task, const EpisodeConfig& config,
                          const EpisodeDeps& deps, std::uint64_t seed, const std::string& source_label);

/// Deterministic per-task seed from a run seed.
std::uint64_t episode_seed(std::uint64_t run_seed, const std::string& task_id);

}  // namespace icd::agent
