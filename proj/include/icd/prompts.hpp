#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "icd/retrieval.hpp"
#include "icd/trajectory_store.hpp"

namespace icd::agent {

/// System/user template pairs with {goal} {plan} {trajectory} {examples}
/// {action_space} {actions} placeholders. Defaults are the reference
/// prompts byte for byte.
struct PromptTemplates {
    std::string plan_system;
    std::string plan_user;
    std::string react_system;
    std::string react_user;
    std::string verifier_system;
    std::string verifier_user;

    static PromptTemplates defaults();
    /// Reads <name>.txt files from dir (plan_system.txt, ...); missing files
    /// keep the default.
    static PromptTemplates load_dir(const std::filesystem::path& dir);
};

struct Prompt {
    std::string system_text;
    std::string user_text;
};

/// Single-pass substitution; inserted values are never rescanned.
std::string fill_template(const std::string& tmpl, const std::vector<std::pair<std::string, std::string>>& values);

struct PlanExemplar {
    std::string goal;
    std::string plan;
};

/// One history entry: the observation seen, then what was done about it.
struct HistoryStep {
    std::string observation;
    std::string reasoning;
    std::string action;
};

/// Exemplar block for the ReAct and verifier prompts: one window, or a full
/// trajectory in single-retrieval mode.
struct StepExemplar {
    std::string goal;
    std::string plan;
    std::vector<store::StepRecord> steps;
};

std::string format_plan_examples(const std::vector<PlanExemplar>& exemplars);
std::string format_step_examples(const std::vector<StepExemplar>& exemplars);

/// "observation: o0\nreasoning: r0\naction: a0\nobservation: o1...". The
/// current observation always stays; whole older steps are dropped until
/// the text fits max_chars, leaving kTruncationMarker in front.
std::string format_trajectory(const std::vector<HistoryStep>& history, const std::string& current_observation,
                              std::size_t max_chars);

inline constexpr const char* kTruncationMarker = "[earlier steps omitted]";

Prompt render_plan_prompt(const PromptTemplates& t, const std::string& goal, const std::string& action_space,
                          const std::vector<PlanExemplar>& exemplars);

Prompt render_react_prompt(const PromptTemplates& t, const std::string& goal, const std::string& plan,
                           const std::string& trajectory_text, const std::string& action_space,
                           const std::vector<StepExemplar>& exemplars);

/// {actions} is the de-duplicated set in first-occurrence order, written
/// like a Python set literal: {'a', 'b'}.
Prompt render_verifier_prompt(const PromptTemplates& t, const std::string& goal, const std::string& plan,
                              const std::string& trajectory_text, const std::string& action_space,
                              const std::vector<StepExemplar>& exemplars, const std::vector<std::string>& actions);

std::string python_set_literal(const std::vector<std::string>& items);
/// Inverse of python_set_literal for the quoting it produces.
std::optional<std::vector<std::string>> parse_python_set_literal(const std::string& text);

class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ParsedStep {
    std::string reasoning;
    std::string action;
};

/// Reasoning is everything after the first "reasoning:" label up to the
/// "action:" label that follows it; action is the rest of that line,
/// trimmed. Labels must start a line. Throws ParseError when either is
/// missing or the action is empty.
ParsedStep parse_react_output(const std::string& text);

// Readers for rendered prompts, used by the scripted models. They accept
// only what the default rendering produces.

struct ReactView {
    std::string goal;
    std::string plan;
    std::vector<HistoryStep> history;
    std::string observation;
    bool truncated = false;
    std::vector<StepExemplar> exemplars;
};

enum class PromptKind { plan, react, verifier, unknown };

PromptKind classify_prompt(const Prompt& p);
std::optional<std::string> read_plan_goal(const Prompt& p);
std::vector<PlanExemplar> read_plan_examples(const Prompt& p);
std::optional<ReactView> read_react_prompt(const Prompt& p);
std::optional<std::vector<std::string>> read_verifier_actions(const Prompt& p);

}  // namespace icd::agent
