#include "icd/prompts.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "icd/text.hpp"

namespace icd::agent {

using text::starts_with;
using text::trim;

namespace {

const char* kPlanSystem =
    "You are an expert at generating high-level plans of actions to achieve a goal.\n Here is your action space: "
    "{action_space}.\n Here are some examples of goal,plan from episodes that successfully achieved similar goals: "
    "{examples}";
const char* kPlanUser = "goal: {goal}\n plan: ";
const char* kReactSystem =
    "You are a ReAct agent that is an expert at reasoning and taking actions to accomplish a goal. \n Goal: "
    "'{goal}'. \n You will receive observations and respond with *exactly* one reasoning and one action per "
    "observation. \n Write them on their own lines, with these exact labels and a colon: \n reasoning: <your "
    "step-by-step reasoning, concise, may be multi-line> \n action: <a single, directly executable command or final "
    "answer> \n Use the labels exactly as written: 'reasoning:' and 'action:' (no variations). \n Here is your "
    "action space: {action_space}.\n Here are some examples of goal, plan, observation, reasoning, action from "
    "episodes that successfully achieved similar goals: {examples}";
const char* kReactUser = "goal: {goal}\n plan: {plan}\n trajectory: {trajectory}\n action: ";
const char* kVerifierSystem =
    "You are an expert LLM judge that determines if a set of actions that could be taken by an LLM agent are all "
    "effectively equivalent. First, you will be provided the current state of the agent: the trajectory so far. You "
    "will receive a set of actions and respond with 'YES' if they are all equivalent and 'NO' if at least one is "
    "different. YOU MUST OUTPUT NOTHING ELSE. \n Here is your action space: {action_space}.\n Here are some examples "
    "of goal, plan, observation, reasoning, action from episodes that successfully achieved similar goals: "
    "{examples}";
const char* kVerifierUser =
    "goal: {goal}\n plan: {plan}\n trajectory: {trajectory}\n Set of actions: {actions}, effectively equivalent? ";

const char* kExamplesLead = "achieved similar goals: ";
const char* kVerifierLead = "\n Set of actions: ";
const char* kVerifierTail = ", effectively equivalent? ";

std::string examples_block(const std::string& system_text) {
    auto pos = system_text.rfind(kExamplesLead);
    if (pos == std::string::npos) return {};
    return system_text.substr(pos + std::string(kExamplesLead).size());
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string after(const std::string& line, const std::string& label) { return line.substr(label.size()); }

}  // namespace

PromptTemplates PromptTemplates::defaults() {
    return {kPlanSystem, kPlanUser, kReactSystem, kReactUser, kVerifierSystem, kVerifierUser};
}

PromptTemplates PromptTemplates::load_dir(const std::filesystem::path& dir) {
    auto t = defaults();
    auto load = [&](const char* name, std::string& slot) {
        std::ifstream in(dir / (std::string(name) + ".txt"), std::ios::binary);
        if (!in) return;
        std::ostringstream ss;
        ss << in.rdbuf();
        slot = ss.str();
    };
    load("plan_system", t.plan_system);
    load("plan_user", t.plan_user);
    load("react_system", t.react_system);
    load("react_user", t.react_user);
    load("verifier_system", t.verifier_system);
    load("verifier_user", t.verifier_user);
    return t;
}

std::string fill_template(const std::string& tmpl, const std::vector<std::pair<std::string, std::string>>& values) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        bool replaced = false;
        if (tmpl[i] == '{') {
            for (const auto& [name, value] : values) {
                if (tmpl.compare(i + 1, name.size(), name) == 0 && i + 1 + name.size() < tmpl.size() &&
                    tmpl[i + 1 + name.size()] == '}') {
                    out += value;
                    i += name.size() + 2;
                    replaced = true;
                    break;
                }
            }
        }
        if (!replaced) out += tmpl[i++];
    }
    return out;
}

std::string format_plan_examples(const std::vector<PlanExemplar>& exemplars) {
    std::string out;
    for (const auto& e : exemplars) out += "\ngoal: " + e.goal + "\nplan: " + e.plan + "\n";
    return out;
}

std::string format_step_examples(const std::vector<StepExemplar>& exemplars) {
    std::string out;
    for (const auto& e : exemplars) {
        out += "\ngoal: " + e.goal + "\nplan: " + e.plan + "\n";
        for (const auto& s : e.steps)
            out += "observation: " + s.observation + "\nreasoning: " + s.reasoning + "\naction: " + s.action + "\n";
    }
    return out;
}

std::string format_trajectory(const std::vector<HistoryStep>& history, const std::string& current_observation,
                              std::size_t max_chars) {
    std::vector<std::string> blocks;
    for (const auto& h : history)
        blocks.push_back("observation: " + h.observation + "\nreasoning: " + h.reasoning + "\naction: " + h.action +
                         "\n");
    const std::string tail = "observation: " + current_observation;
    std::size_t total = tail.size();
    for (const auto& b : blocks) total += b.size();
    std::size_t first = 0;
    const std::size_t marker = std::string(kTruncationMarker).size() + 1;
    while (first < blocks.size() && total + (first ? marker : 0) > max_chars) total -= blocks[first++].size();
    std::string out = first ? std::string(kTruncationMarker) + "\n" : "";
    for (std::size_t i = first; i < blocks.size(); ++i) out += blocks[i];
    return out + tail;
}

Prompt render_plan_prompt(const PromptTemplates& t, const std::string& goal, const std::string& action_space,
                          const std::vector<PlanExemplar>& exemplars) {
    std::vector<std::pair<std::string, std::string>> v{
        {"goal", goal}, {"action_space", action_space}, {"examples", format_plan_examples(exemplars)}};
    return {fill_template(t.plan_system, v), fill_template(t.plan_user, v)};
}

Prompt render_react_prompt(const PromptTemplates& t, const std::string& goal, const std::string& plan,
                           const std::string& trajectory_text, const std::string& action_space,
                           const std::vector<StepExemplar>& exemplars) {
    std::vector<std::pair<std::string, std::string>> v{{"goal", goal},
                                                        {"plan", plan},
                                                        {"trajectory", trajectory_text},
                                                        {"action_space", action_space},
                                                        {"examples", format_step_examples(exemplars)}};
    return {fill_template(t.react_system, v), fill_template(t.react_user, v)};
}

Prompt render_verifier_prompt(const PromptTemplates& t, const std::string& goal, const std::string& plan,
                              const std::string& trajectory_text, const std::string& action_space,
                              const std::vector<StepExemplar>& exemplars, const std::vector<std::string>& actions) {
    std::vector<std::string> unique;
    for (const auto& a : actions)
        if (std::find(unique.begin(), unique.end(), a) == unique.end()) unique.push_back(a);
    std::vector<std::pair<std::string, std::string>> v{{"goal", goal},
                                                        {"plan", plan},
                                                        {"trajectory", trajectory_text},
                                                        {"action_space", action_space},
                                                        {"examples", format_step_examples(exemplars)},
                                                        {"actions", python_set_literal(unique)}};
    return {fill_template(t.verifier_system, v), fill_template(t.verifier_user, v)};
}

std::string python_set_literal(const std::vector<std::string>& items) {
    if (items.empty()) return "set()";
    std::string out = "{";
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& s = items[i];
        // Python's repr picks double quotes only when that avoids escaping
        char q = (s.find('\'') != std::string::npos && s.find('"') == std::string::npos) ? '"' : '\'';
        if (i) out += ", ";
        out += q;
        for (char c : s) {
            if (c == '\\') out += "\\\\";
            else if (c == '\n') out += "\\n";
            else if (c == '\t') out += "\\t";
            else if (c == '\r') out += "\\r";
            else if (c == q) out += std::string("\\") + q;
            else out += c;
        }
        out += q;
    }
    return out + "}";
}

std::optional<std::vector<std::string>> parse_python_set_literal(const std::string& text) {
    if (text == "set()") return std::vector<std::string>{};
    if (text.size() < 2 || text.front() != '{' || text.back() != '}') return std::nullopt;
    std::vector<std::string> out;
    std::size_t i = 1;
    const std::size_t end = text.size() - 1;
    while (i < end) {
        char q = text[i];
        if (q != '\'' && q != '"') return std::nullopt;
        std::string item;
        ++i;
        for (;; ++i) {
            if (i >= end) return std::nullopt;
            char c = text[i];
            if (c == q) break;
            if (c == '\\' && i + 1 < end) {
                char n = text[++i];
                item += n == 'n' ? '\n' : n == 't' ? '\t' : n == 'r' ? '\r' : n;
            } else {
                item += c;
            }
        }
        ++i;
        out.push_back(std::move(item));
        if (i == end) break;
        if (text.compare(i, 2, ", ") != 0) return std::nullopt;
        i += 2;
    }
    return out;
}

ParsedStep parse_react_output(const std::string& output) {
    auto lines = text::split_lines(output);
    std::size_t r = 0;
    auto label_at = [&](std::size_t i, const char* label) {
        std::string_view l(lines[i]);
        auto lead = l.find_first_not_of(" \t");
        return lead != std::string_view::npos && starts_with(l.substr(lead), label);
    };
    while (r < lines.size() && !label_at(r, "reasoning:")) ++r;
    if (r == lines.size()) throw ParseError("missing 'reasoning:' label");
    std::size_t a = r + 1;
    while (a < lines.size() && !label_at(a, "action:")) ++a;
    if (a == lines.size()) throw ParseError("missing 'action:' label");

    auto strip_label = [&](std::size_t i, const char* label) {
        const auto& l = lines[i];
        return l.substr(l.find(label) + std::string(label).size());
    };
    std::string reasoning = strip_label(r, "reasoning:");
    for (std::size_t i = r + 1; i < a; ++i) reasoning += "\n" + lines[i];
    ParsedStep out{trim(reasoning), trim(strip_label(a, "action:"))};
    if (out.action.empty()) throw ParseError("empty action");
    return out;
}

PromptKind classify_prompt(const Prompt& p) {
    if (!starts_with(p.user_text, "goal: ")) return PromptKind::unknown;
    if (ends_with(p.user_text, kVerifierTail) && p.user_text.find(kVerifierLead) != std::string::npos)
        return PromptKind::verifier;
    if (ends_with(p.user_text, "\n action: ")) return PromptKind::react;
    if (ends_with(p.user_text, "\n plan: ")) return PromptKind::plan;
    return PromptKind::unknown;
}

std::optional<std::string> read_plan_goal(const Prompt& p) {
    if (classify_prompt(p) != PromptKind::plan) return std::nullopt;
    const std::string& u = p.user_text;
    return u.substr(6, u.size() - 6 - std::string("\n plan: ").size());
}

std::vector<PlanExemplar> read_plan_examples(const Prompt& p) {
    std::vector<PlanExemplar> out;
    for (const auto& line : text::split_lines(examples_block(p.system_text))) {
        if (starts_with(line, "goal: ")) out.push_back({after(line, "goal: "), ""});
        else if (starts_with(line, "plan: ") && !out.empty()) out.back().plan = after(line, "plan: ");
    }
    return out;
}

namespace {

/// Parses observation/reasoning/action lines; reasoning may span lines.
void read_steps(const std::vector<std::string>& lines, std::size_t from, std::size_t to,
                std::vector<store::StepRecord>& steps) {
    enum { none, reasoning } state = none;
    for (std::size_t i = from; i < to; ++i) {
        const auto& line = lines[i];
        if (starts_with(line, "observation: ")) {
            store::StepRecord s;
            s.index = static_cast<int>(steps.size());
            s.observation = after(line, "observation: ");
            steps.push_back(std::move(s));
            state = none;
        } else if (starts_with(line, "reasoning: ") && !steps.empty()) {
            steps.back().reasoning = after(line, "reasoning: ");
            state = reasoning;
        } else if (starts_with(line, "action: ") && !steps.empty()) {
            steps.back().action = after(line, "action: ");
            state = none;
        } else if (state == reasoning) {
            steps.back().reasoning += "\n" + line;
        }
    }
}

}  // namespace

std::optional<ReactView> read_react_prompt(const Prompt& p) {
    if (classify_prompt(p) != PromptKind::react) return std::nullopt;
    const std::string& u = p.user_text;
    auto plan_at = u.find("\n plan: ");
    auto traj_at = u.find("\n trajectory: ", plan_at == std::string::npos ? 0 : plan_at);
    if (plan_at == std::string::npos || traj_at == std::string::npos) return std::nullopt;
    ReactView v;
    v.goal = u.substr(6, plan_at - 6);
    v.plan = u.substr(plan_at + 8, traj_at - plan_at - 8);
    const std::size_t body_at = traj_at + std::string("\n trajectory: ").size();
    const std::size_t body_end = u.size() - std::string("\n action: ").size();
    if (body_end < body_at) return std::nullopt;
    auto lines = text::split_lines(u.substr(body_at, body_end - body_at));
    std::size_t first = 0;
    if (!lines.empty() && lines[0] == kTruncationMarker) {
        v.truncated = true;
        first = 1;
    }
    std::vector<store::StepRecord> steps;
    read_steps(lines, first, lines.size(), steps);
    if (steps.empty()) return std::nullopt;
    v.observation = steps.back().observation;
    for (std::size_t i = 0; i + 1 < steps.size(); ++i)
        v.history.push_back({steps[i].observation, steps[i].reasoning, steps[i].action});

    auto ex = text::split_lines(examples_block(p.system_text));
    std::size_t i = 0;
    while (i < ex.size()) {
        if (!starts_with(ex[i], "goal: ")) {
            ++i;
            continue;
        }
        StepExemplar e;
        e.goal = after(ex[i], "goal: ");
        std::size_t j = i + 1;
        if (j < ex.size() && starts_with(ex[j], "plan: ")) e.plan = after(ex[j++], "plan: ");
        std::size_t k = j;
        while (k < ex.size() && !starts_with(ex[k], "goal: ")) ++k;
        read_steps(ex, j, k, e.steps);
        v.exemplars.push_back(std::move(e));
        i = k;
    }
    return v;
}

std::optional<std::vector<std::string>> read_verifier_actions(const Prompt& p) {
    if (classify_prompt(p) != PromptKind::verifier) return std::nullopt;
    const std::string& u = p.user_text;
    auto at = u.rfind(kVerifierLead);
    const std::size_t begin = at + std::string(kVerifierLead).size();
    const std::size_t end = u.size() - std::string(kVerifierTail).size();
    if (end < begin) return std::nullopt;
    return parse_python_set_literal(u.substr(begin, end - begin));
}

}  // namespace icd::agent
