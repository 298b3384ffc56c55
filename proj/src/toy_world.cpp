#include "icd/toy_world.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "icd/text.hpp"
#include "json.hpp"

namespace icd::env {

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::string compact(std::string s) {
    s.erase(std::remove(s.begin(), s.end(), ' '), s.end());
    return s;
}

}  // namespace

// ---------------------------------------------------------------- spec

ToyWorldSpec ToyWorldSpec::standard() {
    ToyWorldSpec w;
    w.rooms = {"room 1", "room 2", "room 3", "room 4", "room 5"};
    w.doors = {{"room 1", "room 2"}, {"room 2", "room 3"}, {"room 2", "room 4"}, {"room 4", "room 5"}};
    w.receptacles = {
        {"shelf 1", "room 1", false},   {"drawer 1", "room 1", true}, {"table 1", "room 2", false},
        {"cabinet 1", "room 2", true},  {"drawer 2", "room 3", true}, {"shelf 2", "room 3", false},
        {"fridge 1", "room 4", true},   {"countertop 1", "room 4", false},
        {"cabinet 2", "room 5", true},  {"desk 1", "room 5", false},
    };
    w.lamps = {{"floorlamp 1", "room 3"}, {"desklamp 1", "room 5"}};
    w.objects = {
        {"key 1", "drawer 2"},   {"pen 1", "drawer 2"},    {"apple 1", "fridge 1"},
        {"egg 1", "fridge 1"},   {"mug 1", "cabinet 1"},   {"soap 1", "drawer 1"},
        {"cup 1", "cabinet 2"},  {"watch 1", "cabinet 2"}, {"book 1", "desk 1"},
        {"plate 1", "countertop 1"}, {"card 1", "shelf 2"},
    };
    w.start_rooms = {"room 1", "room 4"};
    w.max_steps = 30;
    return w;
}

ToyWorldSpec ToyWorldSpec::from_json_text(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    ToyWorldSpec w;
    w.rooms = j.at("rooms").get<std::vector<std::string>>();
    for (const auto& d : j.at("doors")) w.doors.emplace_back(d.at(0).get<std::string>(), d.at(1).get<std::string>());
    for (const auto& r : j.at("receptacles"))
        w.receptacles.push_back({r.at("name"), r.at("room"), r.value("container", false)});
    if (j.contains("lamps"))
        for (const auto& l : j.at("lamps")) w.lamps.push_back({l.at("name"), l.at("room")});
    for (const auto& o : j.at("objects")) w.objects.push_back({o.at("name"), o.at("home")});
    w.start_rooms = j.value("start_rooms", std::vector<std::string>{w.rooms.empty() ? "" : w.rooms.front()});
    w.max_steps = j.value("max_steps", 30);
    w.validate();
    return w;
}

ToyWorldSpec ToyWorldSpec::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw EnvironmentError("cannot read world spec " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string ToyWorldSpec::to_json_text() const {
    nlohmann::ordered_json j;
    j["rooms"] = rooms;
    j["doors"] = nlohmann::ordered_json::array();
    for (const auto& [a, b] : doors) j["doors"].push_back({a, b});
    j["receptacles"] = nlohmann::ordered_json::array();
    for (const auto& r : receptacles)
        j["receptacles"].push_back({{"name", r.name}, {"room", r.room}, {"container", r.container}});
    j["lamps"] = nlohmann::ordered_json::array();
    for (const auto& l : lamps) j["lamps"].push_back({{"name", l.name}, {"room", l.room}});
    j["objects"] = nlohmann::ordered_json::array();
    for (const auto& o : objects) j["objects"].push_back({{"name", o.object}, {"home", o.receptacle}});
    j["start_rooms"] = start_rooms;
    j["max_steps"] = max_steps;
    return j.dump(2);
}

void ToyWorldSpec::validate() const {
    std::set<std::string> room_set(rooms.begin(), rooms.end());
    if (rooms.empty() || room_set.size() != rooms.size()) throw EnvironmentError("rooms must be non-empty and unique");
    for (const auto& [a, b] : doors)
        if (!room_set.count(a) || !room_set.count(b)) throw EnvironmentError("door references unknown room");
    std::set<std::string> names;
    for (const auto& r : receptacles) {
        if (!room_set.count(r.room)) throw EnvironmentError("receptacle " + r.name + " in unknown room");
        if (!names.insert(r.name).second) throw EnvironmentError("duplicate name " + r.name);
    }
    for (const auto& l : lamps) {
        if (!room_set.count(l.room)) throw EnvironmentError("lamp " + l.name + " in unknown room");
        if (!names.insert(l.name).second) throw EnvironmentError("duplicate name " + l.name);
    }
    std::set<std::string> rec_names;
    for (const auto& r : receptacles) rec_names.insert(r.name);
    for (const auto& o : objects) {
        if (!rec_names.count(o.receptacle)) throw EnvironmentError("object " + o.object + " has unknown home");
        if (!names.insert(o.object).second) throw EnvironmentError("duplicate name " + o.object);
    }
    for (const auto& s : start_rooms)
        if (!room_set.count(s)) throw EnvironmentError("unknown start room " + s);
    // connectivity
    std::map<std::string, std::vector<std::string>> adj;
    for (const auto& [a, b] : doors) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    std::set<std::string> seen{rooms.front()};
    std::deque<std::string> q{rooms.front()};
    while (!q.empty()) {
        auto r = q.front();
        q.pop_front();
        for (const auto& n : adj[r])
            if (seen.insert(n).second) q.push_back(n);
    }
    if (seen.size() != rooms.size()) throw EnvironmentError("world graph is not connected");
}

// ---------------------------------------------------------------- tasks

std::string to_string(TaskTemplate t) {
    switch (t) {
        case TaskTemplate::pick_and_place: return "pick-and-place";
        case TaskTemplate::pick_two: return "pick-two";
        case TaskTemplate::examine: return "examine";
    }
    return "unknown";
}

std::string ToyTask::goal_text() const {
    switch (kind) {
        case TaskTemplate::pick_and_place: return "put " + objects.at(0) + " in " + target;
        case TaskTemplate::pick_two: return "put " + objects.at(0) + " and " + objects.at(1) + " in " + target;
        case TaskTemplate::examine: return "examine " + objects.at(0) + " under " + target;
    }
    return {};
}

int ToyTask::difficulty() const {
    switch (kind) {
        case TaskTemplate::pick_and_place: return 1;
        case TaskTemplate::examine: return 2;
        case TaskTemplate::pick_two: return 3;
    }
    return 1;
}

std::string ToyTask::task_id() const {
    std::string prefix = kind == TaskTemplate::pick_and_place ? "pp" : kind == TaskTemplate::pick_two ? "p2" : "ex";
    std::string id = prefix;
    for (const auto& o : objects) id += "-" + compact(o);
    id += "-" + compact(target) + "@" + compact(start_room);
    return id;
}

store::TaskSpec ToyTask::to_task_spec() const {
    return store::TaskSpec{task_id(), std::string(kToyEnvPrefix) + start_room, goal_text(), difficulty()};
}

std::optional<ToyTask> ToyTask::parse_goal(const std::string& goal) {
    auto words = text::split_ws(goal);
    auto name_at = [&](std::size_t i) { return words.at(i) + " " + words.at(i + 1); };
    ToyTask t;
    if (words.size() == 6 && words[0] == "put" && words[3] == "in") {
        t.kind = TaskTemplate::pick_and_place;
        t.objects = {name_at(1)};
        t.target = name_at(4);
        return t;
    }
    if (words.size() == 9 && words[0] == "put" && words[3] == "and" && words[6] == "in") {
        t.kind = TaskTemplate::pick_two;
        t.objects = {name_at(1), name_at(4)};
        t.target = name_at(7);
        return t;
    }
    if (words.size() == 6 && words[0] == "examine" && words[3] == "under") {
        t.kind = TaskTemplate::examine;
        t.objects = {name_at(1)};
        t.target = name_at(4);
        return t;
    }
    return std::nullopt;
}

ToyTask ToyTask::from_task_spec(const store::TaskSpec& spec) {
    auto t = parse_goal(spec.goal);
    if (!t) throw EnvironmentError("goal does not match any toy template: '" + spec.goal + "'");
    const std::string prefix = kToyEnvPrefix;
    if (spec.env_id.rfind(prefix, 0) != 0) throw EnvironmentError("not a toy-world env id: " + spec.env_id);
    t->start_room = spec.env_id.substr(prefix.size());
    return *t;
}

// ---------------------------------------------------------------- world

ToyWorld::ToyWorld(ToyWorldSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    adjacency_.resize(spec_.rooms.size());
    for (const auto& [a, b] : spec_.doors) {
        int ia = room_index(a), ib = room_index(b);
        adjacency_[static_cast<std::size_t>(ia)].push_back(ib);
        adjacency_[static_cast<std::size_t>(ib)].push_back(ia);
    }
    for (auto& n : adjacency_) {
        std::sort(n.begin(), n.end());
        n.erase(std::unique(n.begin(), n.end()), n.end());
    }
}

namespace {
template <typename Vec, typename Get>
int find_index(const Vec& v, const std::string& name, Get get) {
    for (std::size_t i = 0; i < v.size(); ++i)
        if (get(v[i]) == name) return static_cast<int>(i);
    return -1;
}
}  // namespace

int ToyWorld::room_index(const std::string& name) const {
    return find_index(spec_.rooms, name, [](const std::string& r) { return r; });
}
int ToyWorld::receptacle_index(const std::string& name) const {
    return find_index(spec_.receptacles, name, [](const Receptacle& r) { return r.name; });
}
int ToyWorld::object_index(const std::string& name) const {
    return find_index(spec_.objects, name, [](const ObjectHome& o) { return o.object; });
}
int ToyWorld::lamp_index(const std::string& name) const {
    return find_index(spec_.lamps, name, [](const Fixture& f) { return f.name; });
}

std::string ToyWorld::room_of(const std::string& name) const {
    if (int r = receptacle_index(name); r >= 0) return spec_.receptacles[static_cast<std::size_t>(r)].room;
    if (int l = lamp_index(name); l >= 0) return spec_.lamps[static_cast<std::size_t>(l)].room;
    return {};
}

std::string ToyWorld::home_of(const std::string& object) const {
    int o = object_index(object);
    return o < 0 ? std::string() : spec_.objects[static_cast<std::size_t>(o)].receptacle;
}

ToyState ToyWorld::initial_state(const ToyTask& task) const {
    ToyState s;
    s.room = room_index(task.start_room);
    if (s.room < 0) throw EnvironmentError("unknown start room '" + task.start_room + "'");
    for (const auto& o : task.objects)
        if (object_index(o) < 0) throw EnvironmentError("unknown object '" + o + "'");
    if (task.kind == TaskTemplate::examine ? lamp_index(task.target) < 0 : receptacle_index(task.target) < 0)
        throw EnvironmentError("unknown target '" + task.target + "'");
    for (const auto& o : spec_.objects) s.object_location.push_back(receptacle_index(o.receptacle));
    s.open.assign(spec_.receptacles.size(), false);
    return s;
}

bool ToyWorld::goal_satisfied(const ToyTask& task, const ToyState& s) const {
    if (task.kind == TaskTemplate::examine) {
        int o = object_index(task.objects.at(0));
        int lamp = lamp_index(task.target);
        return s.held == o && room_index(spec_.lamps[static_cast<std::size_t>(lamp)].room) == s.room;
    }
    int target = receptacle_index(task.target);
    for (const auto& name : task.objects)
        if (s.object_location[static_cast<std::size_t>(object_index(name))] != target) return false;
    return true;
}

std::string ToyWorld::describe(const ToyState& s, const std::string& feedback) const {
    const auto& room = spec_.rooms[static_cast<std::size_t>(s.room)];
    std::vector<std::string> exits;
    for (int n : neighbors(s.room)) exits.push_back(spec_.rooms[static_cast<std::size_t>(n)]);
    std::vector<std::string> seen;
    for (std::size_t r = 0; r < spec_.receptacles.size(); ++r) {
        const auto& rec = spec_.receptacles[r];
        if (rec.room != room) continue;
        std::string item = rec.name;
        std::vector<std::string> contents;
        for (std::size_t o = 0; o < spec_.objects.size(); ++o)
            if (s.object_location[o] == static_cast<int>(r)) contents.push_back(spec_.objects[o].object);
        if (rec.container && !s.open[r])
            item += " (closed)";
        else if (rec.container)
            item += contents.empty() ? " (open, empty)" : " (open, with " + join(contents, ", ") + ")";
        else if (!contents.empty())
            item += " (with " + join(contents, ", ") + ")";
        seen.push_back(item);
    }
    for (const auto& l : spec_.lamps)
        if (l.room == room) seen.push_back(l.name);
    std::string out = feedback + " You are in " + room + ".";
    out += exits.empty() ? " There are no exits." : " Exits: " + join(exits, ", ") + ".";
    out += seen.empty() ? " You see nothing of note." : " You see " + join(seen, ", ") + ".";
    out += " You are carrying " +
           (s.held < 0 ? std::string("nothing") : spec_.objects[static_cast<std::size_t>(s.held)].object) + ".";
    return out;
}

ToyWorld::Transition ToyWorld::apply(const ToyState& s, const std::string& raw_action) const {
    Transition t;
    t.next = s;
    auto words = text::split_ws(raw_action);
    const std::string action = text::join_ws(words);
    const auto& room = spec_.rooms[static_cast<std::size_t>(s.room)];
    auto accessible_here = [&](int r) {
        if (r < 0) return false;
        const auto& rec = spec_.receptacles[static_cast<std::size_t>(r)];
        return rec.room == room && (!rec.container || s.open[static_cast<std::size_t>(r)]);
    };

    if (action == "done") {
        t.valid = true;
        t.done = true;
        t.feedback = "You finish the task.";
        return t;
    }
    if (action.rfind("go to ", 0) == 0) {
        int dest = room_index(action.substr(6));
        const auto& n = neighbors(s.room);
        if (dest >= 0 && std::find(n.begin(), n.end(), dest) != n.end()) {
            t.valid = true;
            t.next.room = dest;
            t.feedback = "You go to " + spec_.rooms[static_cast<std::size_t>(dest)] + ".";
        }
        return t;
    }
    if (action.rfind("open ", 0) == 0) {
        int r = receptacle_index(action.substr(5));
        if (r >= 0) {
            const auto& rec = spec_.receptacles[static_cast<std::size_t>(r)];
            if (rec.container && rec.room == room) {
                t.valid = true;
                t.next.open[static_cast<std::size_t>(r)] = true;
                std::vector<std::string> contents;
                for (std::size_t o = 0; o < spec_.objects.size(); ++o)
                    if (s.object_location[o] == r) contents.push_back(spec_.objects[o].object);
                t.feedback = "You open " + rec.name + "." +
                             (contents.empty() ? " It is empty." : " Inside you see " + join(contents, ", ") + ".");
            }
        }
        return t;
    }
    if (action.rfind("take ", 0) == 0) {
        auto pos = action.find(" from ");
        if (pos == std::string::npos || s.held >= 0) return t;
        int o = object_index(action.substr(5, pos - 5));
        int r = receptacle_index(action.substr(pos + 6));
        if (o >= 0 && accessible_here(r) && s.object_location[static_cast<std::size_t>(o)] == r) {
            t.valid = true;
            t.next.held = o;
            t.next.object_location[static_cast<std::size_t>(o)] = -1;
            t.feedback = "You pick up " + spec_.objects[static_cast<std::size_t>(o)].object + ".";
        }
        return t;
    }
    if (action.rfind("put ", 0) == 0) {
        auto pos = action.find(" in ");
        if (pos == std::string::npos || s.held < 0) return t;
        int o = object_index(action.substr(4, pos - 4));
        int r = receptacle_index(action.substr(pos + 4));
        if (o == s.held && accessible_here(r)) {
            t.valid = true;
            t.next.held = -1;
            t.next.object_location[static_cast<std::size_t>(o)] = r;
            t.feedback = "You put " + spec_.objects[static_cast<std::size_t>(o)].object + " in " +
                         spec_.receptacles[static_cast<std::size_t>(r)].name + ".";
        }
        return t;
    }
    return t;
}

std::vector<std::string> ToyWorld::candidate_actions(const ToyState& s, const std::vector<int>* only_objects) const {
    std::vector<std::string> out;
    for (int n : neighbors(s.room)) out.push_back("go to " + spec_.rooms[static_cast<std::size_t>(n)]);
    const auto& room = spec_.rooms[static_cast<std::size_t>(s.room)];
    for (std::size_t r = 0; r < spec_.receptacles.size(); ++r) {
        const auto& rec = spec_.receptacles[r];
        if (rec.room == room && rec.container && !s.open[r]) out.push_back("open " + rec.name);
    }
    if (s.held < 0) {
        auto consider = [&](std::size_t o) {
            int r = s.object_location[o];
            if (r < 0) return;
            const auto& rec = spec_.receptacles[static_cast<std::size_t>(r)];
            if (rec.room == room && (!rec.container || s.open[static_cast<std::size_t>(r)]))
                out.push_back("take " + spec_.objects[o].object + " from " + rec.name);
        };
        if (only_objects) {
            for (int o : *only_objects) consider(static_cast<std::size_t>(o));
        } else {
            for (std::size_t o = 0; o < spec_.objects.size(); ++o) consider(o);
        }
    } else {
        for (std::size_t r = 0; r < spec_.receptacles.size(); ++r) {
            const auto& rec = spec_.receptacles[r];
            if (rec.room == room && (!rec.container || s.open[r]))
                out.push_back("put " + spec_.objects[static_cast<std::size_t>(s.held)].object + " in " + rec.name);
        }
    }
    out.push_back("done");
    return out;
}

std::string ToyWorld::action_space() const {
    return "go to <room> (adjacent rooms only), open <receptacle>, take <object> from <receptacle>, "
           "put <object> in <receptacle>, done";
}

// ---------------------------------------------------------------- env

ToyEnvironment::ToyEnvironment(ToyWorld world) : world_(std::move(world)) {}

std::string ToyEnvironment::reset(const store::TaskSpec& spec) {
    task_ = ToyTask::from_task_spec(spec);
    state_ = world_.initial_state(task_);
    active_ = true;
    return world_.describe(state_, kResetFeedback);
}

StepOutcome ToyEnvironment::step(const std::string& action) {
    if (!active_) throw EnvironmentError("step after episode end (or before reset)");
    auto t = world_.apply(state_, action);
    if (!t.valid) return {kNothingHappens, false, false};
    if (t.done) {
        active_ = false;
        return {t.feedback, true, world_.goal_satisfied(task_, state_)};
    }
    state_ = t.next;
    return {world_.describe(state_, t.feedback), false, false};
}

std::unique_ptr<Environment> ToyEnvironmentFactory::make() const {
    return std::make_unique<ToyEnvironment>(ToyWorld(spec_));
}

// ---------------------------------------------------------------- oracle

namespace {

// Compact search state: only the task's objects are tracked, containers as a
// bitmask. Keeps the oracle cheap enough to run once per agent step.
struct Packed {
    std::uint64_t head = 0;
    std::uint64_t open = 0;
    bool operator==(const Packed&) const = default;
};

struct PackedHash {
    std::size_t operator()(const Packed& p) const noexcept {
        return std::hash<std::uint64_t>{}(p.head * 0x9E3779B97F4A7C15ULL ^ p.open);
    }
};

struct SearchState {
    int room;
    int held;
    std::array<int, 6> loc;
    std::uint64_t open;
};

struct Move {
    enum Kind : std::uint8_t { go, open, take, put } kind;
    int a;
    int b;
};

}  // namespace

std::optional<std::vector<std::string>> shortest_plan(const ToyWorld& world, const ToyTask& task,
                                                      const ToyState& start, int max_depth) {
    const auto& spec = world.spec();
    const std::size_t n_rec = spec.receptacles.size();
    if (n_rec > 64 || spec.rooms.size() > 255 || task.objects.size() > 6)
        throw EnvironmentError("world too large for the oracle search");
    std::vector<int> goal;
    for (const auto& o : task.objects) goal.push_back(world.object_index(o));
    const std::size_t n_goal = goal.size();
    std::vector<int> rec_room(n_rec);
    std::vector<std::vector<int>> room_recs(spec.rooms.size());
    for (std::size_t r = 0; r < n_rec; ++r) {
        rec_room[r] = world.room_index(spec.receptacles[r].room);
        room_recs[static_cast<std::size_t>(rec_room[r])].push_back(static_cast<int>(r));
    }
    const bool examine = task.kind == TaskTemplate::examine;
    const int target = examine ? -1 : world.receptacle_index(task.target);
    const int lamp_room =
        examine ? world.room_index(spec.lamps[static_cast<std::size_t>(world.lamp_index(task.target))].room) : -1;

    auto pack = [&](const SearchState& s) {
        Packed p;
        p.head = static_cast<std::uint64_t>(s.room) | static_cast<std::uint64_t>(s.held + 1) << 8;
        for (std::size_t i = 0; i < n_goal; ++i)
            p.head |= static_cast<std::uint64_t>(s.loc[i] + 1) << (16 + 8 * i);
        p.open = s.open;
        return p;
    };
    auto satisfied = [&](const SearchState& s) {
        if (examine) return s.held == goal[0] && s.room == lamp_room;
        for (std::size_t i = 0; i < n_goal; ++i)
            if (s.loc[i] != target) return false;
        return true;
    };
    auto accessible = [&](const SearchState& s, int r) {
        return !spec.receptacles[static_cast<std::size_t>(r)].container || (s.open >> r & 1U);
    };

    SearchState init{start.room, start.held, {}, 0};
    for (std::size_t i = 0; i < n_goal; ++i) init.loc[i] = start.object_location[static_cast<std::size_t>(goal[i])];
    for (std::size_t r = 0; r < n_rec; ++r)
        if (start.open[r]) init.open |= std::uint64_t{1} << r;

    struct Node {
        SearchState state;
        int parent;
        Move move;
        int depth;
    };
    std::vector<Node> nodes;
    std::unordered_map<Packed, int, PackedHash> seen;
    nodes.push_back({init, -1, {}, 0});
    seen.emplace(pack(init), 0);
    for (std::size_t head = 0; head < nodes.size(); ++head) {
        const SearchState s = nodes[head].state;
        const int depth = nodes[head].depth;
        if (satisfied(s)) {
            std::vector<std::string> plan{"done"};
            for (int i = static_cast<int>(head); nodes[static_cast<std::size_t>(i)].parent >= 0;
                 i = nodes[static_cast<std::size_t>(i)].parent) {
                const Move& m = nodes[static_cast<std::size_t>(i)].move;
                const auto rec = [&](int r) { return spec.receptacles[static_cast<std::size_t>(r)].name; };
                const auto obj = [&](int o) { return spec.objects[static_cast<std::size_t>(o)].object; };
                switch (m.kind) {
                    case Move::go: plan.push_back("go to " + spec.rooms[static_cast<std::size_t>(m.a)]); break;
                    case Move::open: plan.push_back("open " + rec(m.a)); break;
                    case Move::take: plan.push_back("take " + obj(m.a) + " from " + rec(m.b)); break;
                    case Move::put: plan.push_back("put " + obj(m.a) + " in " + rec(m.b)); break;
                }
            }
            std::reverse(plan.begin(), plan.end());
            return plan;
        }
        if (depth + 1 >= max_depth) continue;
        auto push = [&](const SearchState& next, Move m) {
            if (seen.emplace(pack(next), static_cast<int>(nodes.size())).second)
                nodes.push_back({next, static_cast<int>(head), m, depth + 1});
        };
        // same candidate order as ToyWorld::candidate_actions
        for (int n : world.neighbors(s.room)) {
            SearchState next = s;
            next.room = n;
            push(next, {Move::go, n, 0});
        }
        const auto& here = room_recs[static_cast<std::size_t>(s.room)];
        for (int r : here) {
            if (!spec.receptacles[static_cast<std::size_t>(r)].container || (s.open >> r & 1U)) continue;
            SearchState next = s;
            next.open |= std::uint64_t{1} << r;
            push(next, {Move::open, r, 0});
        }
        if (s.held < 0) {
            for (std::size_t i = 0; i < n_goal; ++i) {
                int r = s.loc[i];
                if (r < 0 || rec_room[static_cast<std::size_t>(r)] != s.room || !accessible(s, r)) continue;
                SearchState next = s;
                next.held = goal[i];
                next.loc[i] = -1;
                push(next, {Move::take, goal[i], r});
            }
        } else {
            for (int r : here) {
                if (!accessible(s, r)) continue;
                SearchState next = s;
                next.held = -1;
                for (std::size_t i = 0; i < n_goal; ++i)
                    if (goal[i] == s.held) next.loc[i] = r;
                push(next, {Move::put, s.held, r});
            }
        }
    }
    return std::nullopt;
}

std::optional<OracleStep> oracle_step(const ToyWorld& world, const ToyTask& task, const ToyState& state) {
    auto plan = shortest_plan(world, task, state);
    if (!plan) return std::nullopt;
    OracleStep step;
    step.action = plan->front();
    step.remaining = static_cast<int>(plan->size());
    if (state.held >= 0) {
        step.focus_object = world.spec().objects[static_cast<std::size_t>(state.held)].object;
    } else {
        for (const auto& a : *plan) {
            if (a.rfind("take ", 0) == 0) {
                step.focus_object = a.substr(5, a.find(" from ") - 5);
                break;
            }
        }
    }
    return step;
}

std::string oracle_reasoning(const ToyWorld& world, const ToyTask& task, const ToyState& state,
                             const OracleStep& step) {
    const auto& spec = world.spec();
    const auto& room = spec.rooms[static_cast<std::size_t>(state.room)];
    std::string held = state.held < 0 ? "nothing" : spec.objects[static_cast<std::size_t>(state.held)].object;
    std::string out = "I am in " + room + " and carrying " + held + ".";
    if (step.action == "done") return out + " The goal is complete, so I am done.";

    auto go_clause = [&](const std::string& dest_room) {
        std::string next = step.action.substr(6);
        return next == dest_room ? " I go to " + next + "."
                                 : " I go to " + next + " on the way to " + dest_room + ".";
    };
    auto is_goal_object = [&](const std::string& o) {
        return std::find(task.objects.begin(), task.objects.end(), o) != task.objects.end();
    };

    if (state.held >= 0 && !is_goal_object(held)) {
        return out + " The goal does not need " + held + ", so I put it down first.";
    }
    if (state.held >= 0) {
        const std::string& target = task.target;
        const std::string target_room = world.room_of(target);
        if (task.kind == TaskTemplate::examine)
            out += " I need to bring " + held + " to " + target + ", which is in " + target_room + ".";
        else
            out += " I need to put " + held + " in " + target + ", which is in " + target_room + ".";
        if (step.action.rfind("go to ", 0) == 0) return out + go_clause(target_room);
        if (step.action.rfind("open ", 0) == 0) return out + " " + target + " is closed, so I open it.";
        return out + " " + target + " is here, so I put " + held + " in it.";
    }
    const std::string& obj = step.focus_object;
    int loc = state.object_location[static_cast<std::size_t>(world.object_index(obj))];
    const auto& rec = spec.receptacles[static_cast<std::size_t>(loc)];
    out += " I need to find " + obj + ", which is in " + rec.name + " in " + rec.room + ".";
    if (step.action.rfind("go to ", 0) == 0) return out + go_clause(rec.room);
    if (step.action.rfind("open ", 0) == 0) return out + " " + rec.name + " is closed, so I open it.";
    return out + " It is reachable here, so I take it.";
}

std::string oracle_plan(const ToyWorld& world, const ToyTask& task) {
    // Depends only on the goal and the objects' homes, so the teacher can
    // write it before seeing the start room.
    std::vector<std::string> lines;
    for (const auto& obj : task.objects) {
        const std::string home = world.home_of(obj);
        if (task.kind != TaskTemplate::examine && home == task.target) continue;
        const auto& rec = world.spec().receptacles[static_cast<std::size_t>(world.receptacle_index(home))];
        lines.push_back("find " + obj + " in " + rec.name + " in " + rec.room);
        lines.push_back((task.kind == TaskTemplate::examine ? "bring " + obj + " to " : "put " + obj + " in ") +
                        task.target + " in " + world.room_of(task.target));
    }
    lines.push_back("finish");
    std::string out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (i) out += " ";
        out += std::to_string(i + 1) + ". " + lines[i] + ".";
    }
    return out;
}

store::Trajectory oracle_solve(const ToyWorld& world, const ToyTask& task, const std::string& source_model) {
    store::Trajectory tr;
    tr.task = task.to_task_spec();
    tr.source_model = source_model;
    tr.plan = oracle_plan(world, task);
    ToyState s = world.initial_state(task);
    std::string obs = world.describe(s, kResetFeedback);
    const int budget = world.spec().max_steps;
    for (int t = 0; t < budget; ++t) {
        auto step = oracle_step(world, task, s);
        if (!step || step->remaining > budget - t)
            throw UnsolvableTaskError("task " + task.task_id() + " is not solvable within " +
                                      std::to_string(budget) + " steps");
        tr.steps.push_back({t, obs, oracle_reasoning(world, task, s, *step), step->action});
        auto tn = world.apply(s, step->action);
        if (tn.done) {
            tr.success = world.goal_satisfied(task, s);
            return tr;
        }
        s = tn.next;
        obs = world.describe(s, tn.feedback);
    }
    throw UnsolvableTaskError("task " + task.task_id() + " exceeded the step budget");
}

// ---------------------------------------------------------------- generation

std::vector<ToyTask> enumerate_tasks(const ToyWorld& world) {
    const auto& spec = world.spec();
    std::vector<ToyTask> out;
    for (const auto& start : spec.start_rooms) {
        for (const auto& o : spec.objects)
            for (const auto& r : spec.receptacles)
                if (r.name != o.receptacle)
                    out.push_back({TaskTemplate::pick_and_place, {o.object}, r.name, start});
        for (const auto& o : spec.objects)
            for (const auto& l : spec.lamps) out.push_back({TaskTemplate::examine, {o.object}, l.name, start});
        for (std::size_t a = 0; a < spec.objects.size(); ++a)
            for (std::size_t b = a + 1; b < spec.objects.size(); ++b)
                for (const auto& r : spec.receptacles) {
                    if (r.name == spec.objects[a].receptacle || r.name == spec.objects[b].receptacle) continue;
                    ToyTask t{TaskTemplate::pick_two, {spec.objects[a].object, spec.objects[b].object}, r.name, start};
                    // goal text lists objects in the order the oracle fetches them
                    if (auto step = oracle_step(world, t, world.initial_state(t));
                        step && step->focus_object == t.objects[1])
                        std::swap(t.objects[0], t.objects[1]);
                    out.push_back(std::move(t));
                }
    }
    return out;
}

TaskSet generate_task_set(const ToyWorld& world, std::uint64_t seed, std::size_t n_demo, std::size_t n_test) {
    if (n_demo < 1 || n_test < 1) throw EnvironmentError("n_demo and n_test must be at least 1");
    auto all = enumerate_tasks(world);
    if (n_demo + n_test > all.size())
        throw EnvironmentError("requested " + std::to_string(n_demo + n_test) + " tasks but the world admits only " +
                               std::to_string(all.size()));
    std::map<TaskTemplate, std::vector<ToyTask>> pools;
    for (auto& t : all) pools[t.kind].push_back(std::move(t));

    std::mt19937_64 rng(seed);
    for (auto& [kind, pool] : pools) {
        (void)kind;
        // Fisher-Yates with an explicit modulus keeps the order portable
        for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng() % i]);
    }
    std::vector<TaskTemplate> order{TaskTemplate::pick_and_place, TaskTemplate::examine, TaskTemplate::pick_two};
    std::map<TaskTemplate, std::size_t> cursor;
    std::vector<ToyTask> picked;
    while (picked.size() < n_demo + n_test) {
        bool progressed = false;
        for (auto kind : order) {
            if (picked.size() == n_demo + n_test) break;
            auto& pool = pools[kind];
            auto& c = cursor[kind];
            if (c < pool.size()) {
                picked.push_back(pool[c++]);
                progressed = true;
            }
        }
        if (!progressed) break;
    }
    // mix before splitting so both splits see every template in proportion
    for (std::size_t i = picked.size(); i > 1; --i) std::swap(picked[i - 1], picked[rng() % i]);
    TaskSet set;
    set.seed = seed;
    for (std::size_t i = 0; i < picked.size(); ++i) {
        oracle_solve(world, picked[i]);
        (i < n_demo ? set.demo : set.test).push_back(picked[i].to_task_spec());
    }
    return set;
}

}  // namespace icd::env
