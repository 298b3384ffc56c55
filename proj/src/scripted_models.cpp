#include "icd/scripted_models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "icd/text.hpp"

namespace icd::gateway {

using agent::Prompt;
using agent::PromptKind;
using agent::ReactView;
using text::split_ws;
using text::starts_with;
using text::trim;

namespace {

/// Splits "a, b (x, y), c" at top-level commas.
std::vector<std::string> split_items(const std::string& s) {
    std::vector<std::string> out;
    int depth = 0;
    std::string cur;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (c == '(') ++depth;
        if (c == ')') --depth;
        if (c == ',' && depth == 0) {
            out.push_back(trim(cur));
            cur.clear();
            if (i + 1 < s.size() && s[i + 1] == ' ') ++i;
            continue;
        }
        cur += c;
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

std::vector<std::string> split_list(const std::string& s) { return split_items(s); }

/// Two-word entity name at word position i ("key 1", "room 3").
std::string name_at(const std::vector<std::string>& w, std::size_t i) {
    return i + 1 < w.size() ? w[i] + " " + w[i + 1] : std::string();
}

std::string strip_period(std::string s) {
    while (!s.empty() && (s.back() == '.' || s.back() == ',')) s.pop_back();
    return s;
}

/// Whole-name replacement: "key 1" must not match inside "key 10".
std::string replace_name(const std::string& s, const std::string& from, const std::string& to) {
    if (from.empty() || from == to) return s;
    std::string out;
    std::size_t i = 0;
    while (i < s.size()) {
        auto at = s.find(from, i);
        if (at == std::string::npos) break;
        std::size_t end = at + from.size();
        bool left_ok = at == 0 || !std::isalnum(static_cast<unsigned char>(s[at - 1]));
        bool right_ok = end == s.size() || !std::isalnum(static_cast<unsigned char>(s[end]));
        out += s.substr(i, at - i);
        out += left_ok && right_ok ? to : from;
        i = end;
    }
    return out + s.substr(i);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Location knowledge: "find O in REC in ROOM" plan lines and
/// "I need to find O, which is in REC in ROOM." reasoning lines.
struct Knowledge {
    std::map<std::string, std::string> object_home;
    std::map<std::string, std::string> room_of;

    void learn_plan(const std::string& plan) {
        auto w = split_ws(plan);
        for (auto& x : w) x = strip_period(x);
        // "find O in REC in ROOM", "put O in T in ROOM", "bring O to L in ROOM"
        for (std::size_t i = 0; i + 8 < w.size(); ++i) {
            if (w[i + 6] != "in" || w[i + 7] != "room") continue;
            if (w[i] == "find" && w[i + 3] == "in") {
                object_home.emplace(name_at(w, i + 1), name_at(w, i + 4));
                room_of.emplace(name_at(w, i + 4), name_at(w, i + 7));
            } else if ((w[i] == "put" && w[i + 3] == "in") || (w[i] == "bring" && w[i + 3] == "to")) {
                room_of.emplace(name_at(w, i + 4), name_at(w, i + 7));
            }
        }
    }

    void learn_reasoning(const std::string& reasoning) {
        auto sg = subgoal_from_reasoning(reasoning);
        if (sg.kind == Subgoal::find && !sg.object.empty()) object_home.emplace(sg.object, sg.destination);
    }
};

}  // namespace

// ------------------------------------------------------------ observation

std::optional<ObservationView> parse_observation(const std::string& obs) {
    static const std::string kIn = "You are in ";
    std::size_t at = starts_with(obs, kIn) ? 0 : obs.find(" " + kIn);
    if (at == std::string::npos) return std::nullopt;
    ObservationView v;
    v.feedback = obs.substr(0, at);
    std::size_t p = at + (at == 0 ? 0 : 1) + kIn.size();
    auto dot = obs.find('.', p);
    if (dot == std::string::npos) return std::nullopt;
    v.room = obs.substr(p, dot - p);
    std::string rest = obs.substr(dot + 1);

    static const std::string kExits = " Exits: ", kNoExits = " There are no exits.";
    if (starts_with(rest, kExits)) {
        auto e = rest.find('.', kExits.size());
        if (e == std::string::npos) return std::nullopt;
        v.exits = split_list(rest.substr(kExits.size(), e - kExits.size()));
        rest = rest.substr(e + 1);
    } else if (starts_with(rest, kNoExits)) {
        rest = rest.substr(kNoExits.size());
    } else {
        return std::nullopt;
    }

    static const std::string kSee = " You see ", kNothing = " You see nothing of note.",
                             kCarry = " You are carrying ";
    if (starts_with(rest, kNothing)) {
        rest = rest.substr(kNothing.size());
    } else if (starts_with(rest, kSee)) {
        auto e = rest.find("." + kCarry);
        if (e == std::string::npos) return std::nullopt;
        for (const auto& raw : split_items(rest.substr(kSee.size(), e - kSee.size()))) {
            ViewItem item;
            auto paren = raw.find(" (");
            item.name = raw.substr(0, paren);
            if (paren != std::string::npos) {
                std::string inner = raw.substr(paren + 2, raw.size() - paren - 3);
                if (inner == "closed") {
                    item.state = ViewItem::closed;
                } else if (starts_with(inner, "open")) {
                    item.state = ViewItem::open;
                    if (starts_with(inner, "open, with ")) item.contents = split_list(inner.substr(11));
                } else if (starts_with(inner, "with ")) {
                    item.contents = split_list(inner.substr(5));
                }
            }
            v.items.push_back(std::move(item));
        }
        rest = rest.substr(e + 1);
    } else {
        return std::nullopt;
    }
    if (!starts_with(rest, kCarry)) return std::nullopt;
    std::string held = strip_period(rest.substr(kCarry.size()));
    v.carrying = held == "nothing" ? "" : held;
    return v;
}

std::string observation_template(const std::string& observation) {
    auto v = parse_observation(observation);
    if (!v) return trim(observation);
    std::string out = "You are in " + v->room + ". Exits:";
    for (const auto& e : v->exits) out += " " + e;
    out += ". You see:";
    for (const auto& i : v->items)
        out += " " + i.name + (i.state == ViewItem::closed ? "(closed)" : i.state == ViewItem::open ? "(open)" : "");
    out += v->carrying.empty() ? ". Carrying nothing." : ". Carrying <object>.";
    return out;
}

Subgoal subgoal_from_reasoning(const std::string& reasoning) {
    Subgoal sg;
    auto w = split_ws(reasoning);
    for (auto& x : w) x = strip_period(x);
    auto find_seq = [&](std::initializer_list<const char*> seq) -> std::optional<std::size_t> {
        std::vector<std::string> s(seq.begin(), seq.end());
        for (std::size_t i = 0; i + s.size() <= w.size(); ++i) {
            bool ok = true;
            for (std::size_t j = 0; j < s.size() && ok; ++j) ok = w[i + j] == s[j];
            if (ok) return i + s.size();
        }
        return std::nullopt;
    };
    if (find_seq({"The", "goal", "is", "complete"})) {
        sg.kind = Subgoal::complete;
    } else if (auto i = find_seq({"The", "goal", "does", "not", "need"})) {
        sg.kind = Subgoal::drop;
        sg.object = name_at(w, *i);
    } else if (auto i = find_seq({"I", "need", "to", "find"}); i && *i + 5 < w.size()) {
        // I need to find O, which is in REC in ROOM.
        sg.kind = Subgoal::find;
        sg.object = name_at(w, *i);
        sg.destination = name_at(w, *i + 5);
    } else if (auto i = find_seq({"I", "need", "to", "put"}); i && *i + 3 < w.size()) {
        sg.kind = Subgoal::put;
        sg.object = name_at(w, *i);
        sg.destination = name_at(w, *i + 3);
    } else if (auto i = find_seq({"I", "need", "to", "bring"}); i && *i + 3 < w.size()) {
        sg.kind = Subgoal::bring;
        sg.object = name_at(w, *i);
        sg.destination = name_at(w, *i + 3);
    }
    return sg;
}

// ------------------------------------------------------------ teacher

namespace {

/// Best guess at the state from the observations still in the prompt,
/// oldest first. A goal object missing from its visible home was delivered
/// earlier, since only the target ever receives goal objects.
env::ToyState state_from_views(const env::ToyWorld& world, const env::ToyTask& task,
                               const std::vector<ObservationView>& views) {
    auto s = world.initial_state(task);
    std::vector<bool> seen(s.object_location.size(), false);
    auto place = [&](const std::string& object, int where) {
        int oi = world.object_index(object);
        if (oi < 0) return;
        s.object_location[static_cast<std::size_t>(oi)] = where;
        seen[static_cast<std::size_t>(oi)] = true;
    };
    for (const auto& v : views) {
        auto f = split_ws(v.feedback);
        for (auto& x : f) x = strip_period(x);
        if (f.size() >= 6 && f[0] == "You" && f[1] == "put" && f[4] == "in")
            place(name_at(f, 2), world.receptacle_index(name_at(f, 5)));
        for (const auto& item : v.items) {
            int r = world.receptacle_index(item.name);
            if (r < 0) continue;
            s.open[static_cast<std::size_t>(r)] = item.state == ViewItem::open;
            for (int oi = 0; oi < static_cast<int>(s.object_location.size()); ++oi)
                if (s.object_location[static_cast<std::size_t>(oi)] == r && item.state != ViewItem::closed)
                    s.object_location[static_cast<std::size_t>(oi)] = -2;
            for (const auto& o : item.contents) place(o, r);
        }
        s.held = -1;
        if (!v.carrying.empty()) {
            place(v.carrying, -1);
            s.held = world.object_index(v.carrying);
        }
    }
    const int target = task.kind == env::TaskTemplate::examine ? -1 : world.receptacle_index(task.target);
    for (std::size_t oi = 0; oi < s.object_location.size(); ++oi) {
        if (s.object_location[oi] != -2) continue;
        // gone from a receptacle we looked into
        s.object_location[oi] = target >= 0 ? target : world.receptacle_index(world.spec().objects[oi].receptacle);
    }
    s.room = world.room_index(views.back().room);
    return s;
}

}  // namespace

agent::ParsedStep scripted_teacher_step(const env::ToyWorld& world, const ReactView& view) {
    auto parsed = env::ToyTask::parse_goal(view.goal);
    auto current = parse_observation(view.observation);
    if (!parsed || !current) return {kGiveUpReasoning, "done"};
    env::ToyTask task = *parsed;
    std::optional<env::ToyState> state;
    if (!view.truncated) {
        auto first = parse_observation(view.history.empty() ? view.observation : view.history.front().observation);
        if (first && world.room_index(first->room) >= 0) {
            task.start_room = first->room;
            auto s = world.initial_state(task);
            for (const auto& h : view.history) s = world.apply(s, h.action).next;
            if (s.room == world.room_index(current->room)) state = s;
        }
    }
    // without a replayable history, piece the state together from what is shown
    if (!state) {
        if (world.room_index(current->room) < 0) return {kGiveUpReasoning, "done"};
        task.start_room = current->room;
        std::vector<ObservationView> views;
        for (const auto& h : view.history)
            if (auto v = parse_observation(h.observation)) views.push_back(std::move(*v));
        views.push_back(*current);
        state = state_from_views(world, task, views);
    }
    auto step = env::oracle_step(world, task, *state);
    if (!step) return {kGiveUpReasoning, "done"};
    return {env::oracle_reasoning(world, task, *state, *step), step->action};
}

std::string scripted_teacher_reply(const env::ToyWorld& world, const Prompt& prompt) {
    switch (agent::classify_prompt(prompt)) {
        case PromptKind::plan: {
            auto goal = agent::read_plan_goal(prompt);
            auto task = goal ? env::ToyTask::parse_goal(*goal) : std::nullopt;
            if (!task) return "1. finish.";
            return env::oracle_plan(world, *task);
        }
        case PromptKind::react: {
            auto view = agent::read_react_prompt(prompt);
            auto step = view ? scripted_teacher_step(world, *view) : agent::ParsedStep{kGiveUpReasoning, "done"};
            return "reasoning: " + step.reasoning + "\naction: " + step.action;
        }
        case PromptKind::verifier: return "NO";
        case PromptKind::unknown: break;
    }
    return "reasoning: " + std::string(kGiveUpReasoning) + "\naction: done";
}

std::shared_ptr<ModelBackend> make_scripted_teacher(env::ToyWorld world) {
    auto w = std::make_shared<env::ToyWorld>(std::move(world));
    return std::make_shared<ScriptedBackend>("oracle-teacher", [w](const ChatRequest& req, int, std::uint64_t) {
        return scripted_teacher_reply(*w, {req.system_text, req.user_text});
    });
}

// ------------------------------------------------------------ student

namespace {

struct Candidate {
    std::string action;
    double score;
};

/// Where each goal-relevant object currently is, from what the student has
/// seen: "held", a receptacle name, or absent when unknown.
std::map<std::string, std::string> track_objects(const ReactView& view) {
    std::map<std::string, std::string> at;
    auto absorb = [&](const std::string& obs) {
        auto v = parse_observation(obs);
        if (!v) return;
        auto f = split_ws(v->feedback);
        for (auto& x : f) x = strip_period(x);
        if (f.size() >= 5 && f[0] == "You" && f[1] == "pick" && f[2] == "up") at[name_at(f, 3)] = "held";
        if (f.size() >= 6 && f[0] == "You" && f[1] == "put" && f[4] == "in") at[name_at(f, 2)] = name_at(f, 5);
        for (const auto& item : v->items)
            for (const auto& o : item.contents) at[o] = item.name;
        if (!v->carrying.empty()) at[v->carrying] = "held";
    };
    for (const auto& h : view.history) absorb(h.observation);
    absorb(view.observation);
    return at;
}

Subgoal student_subgoal(const env::ToyTask& task, const ObservationView& cur,
                        const std::map<std::string, std::string>& at, const Knowledge& know) {
    auto location = [&](const std::string& o) -> std::string {
        auto it = at.find(o);
        if (it != at.end() && it->second != "held") return it->second;
        auto k = know.object_home.find(o);
        return k == know.object_home.end() ? "" : k->second;
    };
    auto is_goal = [&](const std::string& o) {
        return std::find(task.objects.begin(), task.objects.end(), o) != task.objects.end();
    };
    if (task.kind == env::TaskTemplate::examine) {
        const auto& o = task.objects[0];
        if (cur.carrying == o) {
            for (const auto& i : cur.items)
                if (i.name == task.target) return {Subgoal::complete, "", ""};
            return {Subgoal::bring, task.target, o};
        }
        if (!cur.carrying.empty()) return {Subgoal::drop, "", cur.carrying};
        return {Subgoal::find, location(o), o};
    }
    std::vector<std::string> pending;
    for (const auto& o : task.objects) {
        auto it = at.find(o);
        if (cur.carrying == o || it == at.end() || it->second != task.target) pending.push_back(o);
    }
    if (pending.empty()) return {Subgoal::complete, "", ""};
    if (!cur.carrying.empty()) {
        if (is_goal(cur.carrying)) return {Subgoal::put, task.target, cur.carrying};
        return {Subgoal::drop, "", cur.carrying};
    }
    return {Subgoal::find, location(pending.front()), pending.front()};
}

std::vector<Candidate> heuristic_candidates(const ObservationView& cur, const Subgoal& sg,
                                            const StudentBehavior& b) {
    std::vector<Candidate> out;
    for (const auto& e : cur.exits) {
        double jitter = static_cast<double>(fnv1a(cur.room + "|" + e) % 1000) / 1000.0;
        out.push_back({"go to " + e, b.exit_jitter * jitter});
    }
    for (const auto& i : cur.items) {
        if (i.state != ViewItem::closed) continue;
        bool wanted = (sg.kind == Subgoal::put && i.name == sg.destination) ||
                      (sg.kind == Subgoal::find && i.name == sg.destination);
        out.push_back({"open " + i.name, wanted ? 2.5 : -1.0});
    }
    if (cur.carrying.empty()) {
        for (const auto& i : cur.items) {
            if (i.state == ViewItem::closed) continue;
            for (const auto& o : i.contents) {
                bool wanted = sg.kind == Subgoal::find && o == sg.object;
                out.push_back({"take " + o + " from " + i.name, wanted ? 3.0 : -2.0});
            }
        }
    } else {
        for (const auto& i : cur.items) {
            if (i.state == ViewItem::closed) continue;
            double s = sg.kind == Subgoal::drop ? 1.0 : (sg.kind == Subgoal::put && i.name == sg.destination) ? 3.0 : -1.0;
            out.push_back({"put " + cur.carrying + " in " + i.name, s});
        }
    }
    out.push_back({"done", sg.kind == Subgoal::complete ? 3.0 : -3.0});
    return out;
}

std::size_t sample_index(const std::vector<Candidate>& c, double temperature, double noise_scale,
                         std::uint64_t seed) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < c.size(); ++i)
        if (c[i].score > c[best].score) best = i;
    if (temperature <= 0.0) return best;
    const double scale = temperature * noise_scale;
    std::vector<double> w;
    double total = 0;
    for (const auto& x : c) {
        w.push_back(std::exp((x.score - c[best].score) / scale));
        total += w.back();
    }
    std::mt19937_64 rng(seed);
    double u = uniform01(rng) * total;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (u < w[i]) return i;
        u -= w[i];
    }
    return w.size() - 1;
}

std::string state_sentence(const ObservationView& v) {
    return "I am in " + v.room + " and carrying " + (v.carrying.empty() ? "nothing" : v.carrying) + ".";
}

}  // namespace

StudentStep scripted_student_step(const ReactView& view, double temperature, std::uint64_t seed,
                                  const StudentBehavior& behavior) {
    auto cur = parse_observation(view.observation);
    auto task = env::ToyTask::parse_goal(view.goal);
    if (!cur || !task) return {"I cannot make sense of the observation.", "done", false, {}};

    Knowledge know;
    know.learn_plan(view.plan);
    for (const auto& e : view.exemplars) {
        know.learn_plan(e.plan);
        for (const auto& s : e.steps) know.learn_reasoning(s.reasoning);
    }
    const auto at = track_objects(view);
    const Subgoal sg = student_subgoal(*task, *cur, at, know);

    // in-context imitation: same subgoal, same room view
    if (sg.kind != Subgoal::unknown && !(sg.kind == Subgoal::find && sg.destination.empty())) {
        const std::string tmpl = observation_template(view.observation);
        for (const auto& e : view.exemplars) {
            for (const auto& s : e.steps) {
                auto theirs = subgoal_from_reasoning(s.reasoning);
                if (theirs.kind != sg.kind || theirs.destination != sg.destination) continue;
                if (observation_template(s.observation) != tmpl) continue;
                StudentStep out;
                out.matched = true;
                out.subgoal = sg;
                out.action = replace_name(s.action, theirs.object, sg.object);
                out.reasoning = replace_name(s.reasoning, theirs.object, sg.object);
                return out;
            }
        }
    }

    auto cands = heuristic_candidates(*cur, sg, behavior);
    const auto& pick = cands[sample_index(cands, temperature, behavior.noise_scale, seed)];
    StudentStep out;
    out.subgoal = sg;
    out.action = pick.action;
    out.reasoning = state_sentence(*cur) + " No example covers this situation, so I try " + pick.action + ".";
    return out;
}

std::string scripted_student_plan(const std::string& goal, const std::vector<agent::PlanExemplar>& exemplars,
                                  double temperature, std::uint64_t seed) {
    auto task = env::ToyTask::parse_goal(goal);
    if (!task) return "1. work toward the goal. 2. finish.";
    Knowledge know;
    for (const auto& e : exemplars) know.learn_plan(e.plan);
    std::mt19937_64 rng(seed);
    static const char* kFind[] = {"find ", "look for ", "search for "};
    const bool examine = task->kind == env::TaskTemplate::examine;
    std::vector<std::string> lines;
    for (const auto& o : task->objects) {
        auto home = know.object_home.find(o);
        if (home != know.object_home.end()) {
            if (!examine && home->second == task->target) continue;
            auto room = know.room_of.find(home->second);
            lines.push_back("find " + o + " in " + home->second +
                            (room != know.room_of.end() ? " in " + room->second : ""));
        } else {
            std::size_t pick = temperature > 0 ? rng() % 3 : 0;
            lines.push_back(kFind[pick] + o);
        }
        auto troom = know.room_of.find(task->target);
        lines.push_back((examine ? "bring " + o + " to " : "put " + o + " in ") + task->target +
                        (troom != know.room_of.end() ? " in " + troom->second : ""));
    }
    lines.push_back("finish");
    std::string out;
    for (std::size_t i = 0; i < lines.size(); ++i) out += (i ? " " : "") + std::to_string(i + 1) + ". " + lines[i] + ".";
    return out;
}

std::string scripted_student_reply(const Prompt& prompt, double temperature, std::uint64_t seed,
                                   const StudentBehavior& behavior) {
    switch (agent::classify_prompt(prompt)) {
        case PromptKind::plan:
            return scripted_student_plan(agent::read_plan_goal(prompt).value_or(""), agent::read_plan_examples(prompt),
                                         temperature, seed);
        case PromptKind::react: {
            auto view = agent::read_react_prompt(prompt);
            if (!view) break;
            auto step = scripted_student_step(*view, temperature, seed, behavior);
            return "reasoning: " + step.reasoning + "\naction: " + step.action;
        }
        case PromptKind::verifier: return "NO";
        case PromptKind::unknown: break;
    }
    return "reasoning: I cannot read this request.\naction: done";
}

std::shared_ptr<ModelBackend> make_scripted_student(StudentBehavior behavior) {
    return std::make_shared<ScriptedBackend>(
        "icl-student", [behavior](const ChatRequest& req, int, std::uint64_t seed) {
            return scripted_student_reply({req.system_text, req.user_text}, req.temperature, seed, behavior);
        });
}

// ------------------------------------------------------------ verifier

std::string normalize_for_equivalence(const std::string& action) {
    std::string s = text::join_ws(split_ws(action));
    for (auto& c : s)
        if (c == '"') c = '\'';
    while (!s.empty() && s.back() == ';') s.pop_back();
    return trim(s);
}

std::string scripted_verifier_reply(const Prompt& prompt) {
    auto actions = agent::read_verifier_actions(prompt);
    if (!actions || actions->empty()) return "NO";
    const auto first = normalize_for_equivalence(actions->front());
    for (const auto& a : *actions)
        if (normalize_for_equivalence(a) != first) return "NO";
    return "YES";
}

std::shared_ptr<ModelBackend> make_scripted_verifier() {
    return std::make_shared<ScriptedBackend>("equivalence-verifier", [](const ChatRequest& req, int, std::uint64_t) {
        return scripted_verifier_reply({req.system_text, req.user_text});
    });
}

}  // namespace icd::gateway
