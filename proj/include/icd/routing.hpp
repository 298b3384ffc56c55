#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "icd/gateway.hpp"
#include "icd/prompts.hpp"

namespace icd::routing {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class PolicyKind { TeacherOnly, StudentZS, StudentIC, ICCascade, CascadeOnly, RandomMix, DifficultyAware };
enum class Equivalence { strict, soft };
enum class ModelChoice { student, teacher };

std::string to_string(PolicyKind k);
PolicyKind policy_kind_from_string(const std::string& s);
std::string to_string(Equivalence e);
Equivalence equivalence_from_string(const std::string& s);
std::string to_string(ModelChoice c);

/// Kinds whose student prompts carry retrieved exemplars.
bool uses_exemplars(PolicyKind k);
bool is_cascade(PolicyKind k);

struct PolicyConfig {
    PolicyKind kind = PolicyKind::ICCascade;
    /// Student samples per cascade step.
    int N = 3;
    Equivalence equivalence = Equivalence::strict;
    /// Teacher share of steps for RandomMix.
    double p = 0.0;
    std::optional<std::uint64_t> rng_seed;
    /// difficulty -> delegate kind, DifficultyAware only.
    std::map<int, PolicyKind> difficulty_rule;
    /// Deferred teacher calls see the retrieved exemplars too.
    bool defer_with_exemplars = false;
    /// Verifier prompts include the student's exemplars.
    bool verifier_exemplars = true;
    /// Cascade kinds also check plan samples for agreement.
    bool route_plan = true;

    /// Throws ConfigError; everything checkable before a run starts.
    void validate() const;
};

/// The kind that actually runs a task: the delegate for DifficultyAware.
/// Throws ConfigError when the rule has no entry for the difficulty.
PolicyKind resolve_kind(const PolicyConfig& policy, std::optional<int> difficulty);

/// Trim and collapse internal whitespace runs; case is kept.
std::string normalize_action(const std::string& action);
/// True iff all actions normalize equal. Needs at least one action.
bool check_consistency_strict(const std::vector<std::string>& actions);

/// Teacher with probability p. One draw per call.
ModelChoice random_mix_choice(double p, std::mt19937_64& rng);

struct Models {
    const gateway::ModelClient* teacher = nullptr;
    const gateway::ModelClient* student = nullptr;
    const gateway::ModelClient* verifier = nullptr;
};

struct StepContext {
    std::string goal;
    std::string plan;
    std::string trajectory_text;
    std::string action_space;
    std::vector<agent::StepExemplar> exemplars;
    std::optional<int> difficulty;
    gateway::CallTag tag;
    double temperature = 0.1;
    int max_output_tokens = 4096;
    std::uint64_t seed = 0;
    const agent::PromptTemplates* templates = nullptr;
};

struct RoutingDecision {
    ModelChoice chosen = ModelChoice::student;
    std::string executed_action;
    std::string reasoning;
    /// Student candidate actions; unparseable samples appear as "".
    std::vector<std::string> samples;
    /// Empty for non-cascade kinds.
    std::optional<bool> consistent;
    bool verifier_used = false;
    bool parse_error = false;
    int student_calls = 0;
    int teacher_calls = 0;
    int verifier_calls = 0;
    /// Set when the verifier could not be reached.
    std::string verifier_error;
};

/// Verifier judgement on a set of actions; transport failures count as
/// disagreement and are reported through `error`.
bool check_consistency_soft(const gateway::ModelClient& verifier, const StepContext& ctx,
                            const std::vector<std::string>& actions, bool with_exemplars, cost::Ledger& ledger,
                            std::string* error = nullptr);

/// One act step under `policy`. `mix_rng` is the episode's RandomMix stream.
RoutingDecision decide_step(const PolicyConfig& policy, const StepContext& ctx, const Models& models,
                            cost::Ledger& ledger, std::mt19937_64& mix_rng);

struct PlanContext {
    std::string goal;
    std::string action_space;
    std::vector<agent::PlanExemplar> exemplars;
    std::optional<int> difficulty;
    gateway::CallTag tag;
    double temperature = 0.1;
    int max_output_tokens = 4096;
    std::uint64_t seed = 0;
    const agent::PromptTemplates* templates = nullptr;
};

struct PlanDecision {
    ModelChoice chosen = ModelChoice::student;
    std::string plan;
    std::vector<std::string> samples;
    std::optional<bool> consistent;
    int student_calls = 0;
    int teacher_calls = 0;
};

/// Planning goes through the same policy: cascades compare N plan samples
/// strictly and fall back to the teacher; RandomMix plans with the student.
PlanDecision decide_plan(const PolicyConfig& policy, const PlanContext& ctx, const Models& models,
                         cost::Ledger& ledger);

}  // namespace icd::routing
