#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "icd/environment.hpp"
#include "icd/trajectory_store.hpp"

/// A small ALFWorld-like text world: rooms joined by doors, receptacles in
/// rooms, objects with fixed home receptacles, and desklamps for the
/// examine template. See docs/toy-world.md for the default map.
namespace icd::env {

struct Receptacle {
    std::string name;
    std::string room;
    /// Containers start closed and must be opened before take/put.
    /// Surfaces are always accessible and list their contents in the room view.
    bool container = false;
};

struct Fixture {
    std::string name;
    std::string room;
};

struct ObjectHome {
    std::string object;
    std::string receptacle;
};

struct ToyWorldSpec {
    std::vector<std::string> rooms;
    std::vector<std::pair<std::string, std::string>> doors;
    std::vector<Receptacle> receptacles;
    std::vector<Fixture> lamps;
    std::vector<ObjectHome> objects;
    std::vector<std::string> start_rooms;
    int max_steps = 30;

    /// The documented five-room map.
    static ToyWorldSpec standard();
    static ToyWorldSpec from_json_text(const std::string& text);
    static ToyWorldSpec load(const std::filesystem::path& path);
    std::string to_json_text() const;

    /// Throws EnvironmentError on dangling names or a disconnected map.
    void validate() const;
};

enum class TaskTemplate { pick_and_place, pick_two, examine };

std::string to_string(TaskTemplate t);

/// A concrete task: template + bindings + start room.
struct ToyTask {
    TaskTemplate kind = TaskTemplate::pick_and_place;
    /// One object, or two for pick_two (in fetch order).
    std::vector<std::string> objects;
    /// Receptacle for pick templates, lamp for examine.
    std::string target;
    std::string start_room;

    std::string goal_text() const;
    int difficulty() const;
    std::string task_id() const;
    store::TaskSpec to_task_spec() const;

    /// Inverse of to_task_spec(); env_id carries the start room.
    static ToyTask from_task_spec(const store::TaskSpec& spec);
    /// Parses a goal sentence; start room left empty.
    static std::optional<ToyTask> parse_goal(const std::string& goal);

    bool operator==(const ToyTask&) const = default;
};

inline constexpr const char* kToyEnvPrefix = "toyworld@";

/// Full world state. Object locations are receptacle indices, or -1 while
/// held.
struct ToyState {
    int room = 0;
    int held = -1;
    std::vector<int> object_location;
    std::vector<bool> open;
    bool operator==(const ToyState&) const = default;
};

/// Indexed view of a spec, used by the environment, the oracle, and the
/// scripted teacher.
class ToyWorld {
public:
    explicit ToyWorld(ToyWorldSpec spec);

    const ToyWorldSpec& spec() const { return spec_; }
    int room_index(const std::string& name) const;
    int receptacle_index(const std::string& name) const;
    int object_index(const std::string& name) const;
    int lamp_index(const std::string& name) const;
    const std::vector<int>& neighbors(int room) const { return adjacency_.at(static_cast<std::size_t>(room)); }

    ToyState initial_state(const ToyTask& task) const;
    bool goal_satisfied(const ToyTask& task, const ToyState& s) const;

    struct Transition {
        bool valid = false;
        bool done = false;
        std::string feedback;
        ToyState next;
    };
    /// Applies one action; invalid actions leave the state untouched.
    Transition apply(const ToyState& s, const std::string& action) const;

    /// Feedback sentence + room view, e.g.
    /// "You go to room 2. You are in room 2. Exits: room 1, room 3. You see
    ///  table 1 (with plate 1), cabinet 1. You are carrying nothing."
    std::string describe(const ToyState& s, const std::string& feedback) const;

    /// Grammar-valid actions from s. With only_objects set, take actions are
    /// limited to those objects (the oracle never needs to move others).
    std::vector<std::string> candidate_actions(const ToyState& s, const std::vector<int>* only_objects) const;

    /// Room hosting the given receptacle or lamp name.
    std::string room_of(const std::string& receptacle_or_lamp) const;
    std::string home_of(const std::string& object) const;

    std::string action_space() const;

private:
    ToyWorldSpec spec_;
    std::vector<std::vector<int>> adjacency_;
};

inline constexpr const char* kNothingHappens = "Nothing happens.";
inline constexpr const char* kResetFeedback = "You begin your task.";

class ToyEnvironment : public Environment {
public:
    explicit ToyEnvironment(ToyWorld world);

    std::string reset(const store::TaskSpec& task) override;
    StepOutcome step(const std::string& action) override;
    std::string action_space() const override { return world_.action_space(); }

    const ToyState& state() const { return state_; }
    const ToyTask& task() const { return task_; }
    const ToyWorld& world() const { return world_; }

private:
    ToyWorld world_;
    ToyTask task_;
    ToyState state_;
    bool active_ = false;
};

class ToyEnvironmentFactory : public EnvironmentFactory {
public:
    explicit ToyEnvironmentFactory(ToyWorldSpec spec) : spec_(std::move(spec)) {}
    std::unique_ptr<Environment> make() const override;

private:
    ToyWorldSpec spec_;
};

/// One optimal step: the first action of a shortest plan from `state`,
/// the goal object it serves (empty for "done"), and the plan length.
struct OracleStep {
    std::string action;
    std::string focus_object;
    int remaining = 0;
};

/// Breadth-first search over the state space restricted to the task's
/// objects. Empty when the goal is unreachable within max_depth.
std::optional<std::vector<std::string>> shortest_plan(const ToyWorld& world, const ToyTask& task,
                                                      const ToyState& state, int max_depth = 64);
std::optional<OracleStep> oracle_step(const ToyWorld& world, const ToyTask& task, const ToyState& state);

/// Templated teacher line for the action chosen at `state`.
std::string oracle_reasoning(const ToyWorld& world, const ToyTask& task, const ToyState& state,
                             const OracleStep& step);

/// Plan text the teacher writes for a task.
std::string oracle_plan(const ToyWorld& world, const ToyTask& task);

class UnsolvableTaskError : public EnvironmentError {
public:
    using EnvironmentError::EnvironmentError;
};

/// Shortest action sequence from reset, with templated reasoning per step.
/// Throws UnsolvableTaskError if no plan fits within max_steps.
store::Trajectory oracle_solve(const ToyWorld& world, const ToyTask& task,
                               const std::string& source_model = "oracle");

struct TaskSet {
    std::vector<store::TaskSpec> demo;
    std::vector<store::TaskSpec> test;
    std::uint64_t seed = 0;
};

/// Every task the world admits, in a canonical order.
std::vector<ToyTask> enumerate_tasks(const ToyWorld& world);

/// Seeded, disjoint demo/test splits drawn round-robin across templates.
/// Every task is checked with the oracle. Throws EnvironmentError when the
/// template space cannot supply n_demo + n_test tasks.
TaskSet generate_task_set(const ToyWorld& world, std::uint64_t seed, std::size_t n_demo, std::size_t n_test);

}  // namespace icd::env
