#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "icd/gateway.hpp"
#include "icd/prompts.hpp"
#include "icd/toy_world.hpp"

/// Deterministic stand-ins for the three model roles. They read the rendered
/// prompts (see prompts.hpp) and never see environment state directly,
/// except the teacher, which owns a copy of the world map.
namespace icd::gateway {

// ------------------------------------------------------------ teacher

/// Oracle teacher: rebuilds the state by replaying the prompt's history
/// and answers with the shortest-plan action plus templated reasoning.
/// Unsolvable states get an explicit give-up ("done").
std::shared_ptr<ModelBackend> make_scripted_teacher(env::ToyWorld world);

inline constexpr const char* kGiveUpReasoning = "I cannot find any way to complete the goal from here, so I give up.";

agent::ParsedStep scripted_teacher_step(const env::ToyWorld& world, const agent::ReactView& view);
std::string scripted_teacher_reply(const env::ToyWorld& world, const agent::Prompt& prompt);

// ------------------------------------------------------------ student

struct StudentBehavior {
    /// Softmax logits are score / (temperature * noise_scale).
    double noise_scale = 4.0;
    /// Spread of the per-exit preference used when wandering.
    double exit_jitter = 0.25;
};

/// Parsed room view of a toy observation.
struct ViewItem {
    std::string name;
    enum State { plain, closed, open } state = plain;
    std::vector<std::string> contents;
};

struct ObservationView {
    std::string feedback;
    std::string room;
    std::vector<std::string> exits;
    std::vector<ViewItem> items;
    /// Empty when carrying nothing.
    std::string carrying;
};

std::optional<ObservationView> parse_observation(const std::string& observation);

/// The room view with contents masked and the carried object generalized:
/// the unit of exemplar matching.
std::string observation_template(const std::string& observation);

/// What a step is about, read from the goal and state (student) or from a
/// teacher reasoning line (exemplars).
struct Subgoal {
    enum Kind { find, put, bring, drop, complete, unknown } kind = unknown;
    /// Receptacle for find/put, lamp for bring.
    std::string destination;
    /// Object the step handles, rebound when an exemplar is copied.
    std::string object;
    bool operator==(const Subgoal&) const = default;
};

Subgoal subgoal_from_reasoning(const std::string& reasoning);

struct StudentStep {
    std::string reasoning;
    std::string action;
    /// True when the action was copied from an exemplar.
    bool matched = false;
    Subgoal subgoal;
};

StudentStep scripted_student_step(const agent::ReactView& view, double temperature, std::uint64_t seed,
                                  const StudentBehavior& behavior = {});

/// Plan from retrieved (goal, plan) exemplars. Deterministic when the
/// exemplars locate every object; otherwise a seed-dependent generic wording.
std::string scripted_student_plan(const std::string& goal, const std::vector<agent::PlanExemplar>& exemplars,
                                  double temperature, std::uint64_t seed);

std::string scripted_student_reply(const agent::Prompt& prompt, double temperature, std::uint64_t seed,
                                   const StudentBehavior& behavior = {});

std::shared_ptr<ModelBackend> make_scripted_student(StudentBehavior behavior = {});

// ------------------------------------------------------------ verifier

/// Trim, collapse whitespace, unify quote style, drop a trailing ';'.
std::string normalize_for_equivalence(const std::string& action);

/// "YES" iff every action in the prompt's set normalizes to the same text.
std::string scripted_verifier_reply(const agent::Prompt& prompt);
std::shared_ptr<ModelBackend> make_scripted_verifier();

}  // namespace icd::gateway
