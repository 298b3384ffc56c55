#include <gtest/gtest.h>

#include <deque>
#include <map>
#include <set>

#include "icd/toy_world.hpp"

using namespace icd::env;
using icd::store::TaskSpec;

namespace {

ToyWorld standard_world() { return ToyWorld(ToyWorldSpec::standard()); }

ToyTask pp(const std::string& obj, const std::string& target, const std::string& start) {
    return {TaskTemplate::pick_and_place, {obj}, target, start};
}

/// Independent BFS over the complete world state (every object tracked).
int full_state_bfs(const ToyWorld& w, const ToyTask& task) {
    auto start = w.initial_state(task);
    auto key = [](const ToyState& s) {
        std::string k = std::to_string(s.room) + "|" + std::to_string(s.held) + "|";
        for (int l : s.object_location) k += std::to_string(l) + ",";
        for (bool o : s.open) k += o ? '1' : '0';
        return k;
    };
    std::map<std::string, int> dist{{key(start), 0}};
    std::deque<ToyState> q{start};
    while (!q.empty()) {
        auto s = q.front();
        q.pop_front();
        int d = dist[key(s)];
        if (w.goal_satisfied(task, s)) return d + 1;  // + "done"
        for (const auto& a : w.candidate_actions(s, nullptr)) {
            auto t = w.apply(s, a);
            if (!t.valid || t.done) continue;
            if (dist.emplace(key(t.next), d + 1).second) q.push_back(t.next);
        }
    }
    return -1;
}

ToyWorldSpec small_world() {
    ToyWorldSpec w;
    w.rooms = {"room 1", "room 2", "room 3"};
    w.doors = {{"room 1", "room 2"}, {"room 2", "room 3"}};
    w.receptacles = {{"shelf 1", "room 1", false}, {"box 1", "room 2", true}, {"drawer 1", "room 3", true}};
    w.lamps = {{"lamp 1", "room 3"}};
    w.objects = {{"key 1", "box 1"}, {"pen 1", "drawer 1"}, {"cup 1", "shelf 1"}};
    w.start_rooms = {"room 1", "room 3"};
    return w;
}

}  // namespace

TEST(ToySpec, StandardValidatesAndRoundTrips) {
    auto spec = ToyWorldSpec::standard();
    EXPECT_NO_THROW(spec.validate());
    auto back = ToyWorldSpec::from_json_text(spec.to_json_text());
    EXPECT_EQ(back.to_json_text(), spec.to_json_text());
}

TEST(ToySpec, DisconnectedMapRejected) {
    auto spec = small_world();
    spec.doors.pop_back();
    EXPECT_THROW(spec.validate(), EnvironmentError);
}

TEST(ToySpec, DanglingHomeRejected) {
    auto spec = small_world();
    spec.objects.push_back({"egg 1", "fridge 9"});
    EXPECT_THROW(spec.validate(), EnvironmentError);
}

TEST(ToyTask, GoalTextParsesBack) {
    for (const auto& t : enumerate_tasks(standard_world())) {
        auto spec = t.to_task_spec();
        EXPECT_EQ(ToyTask::from_task_spec(spec), t);
        EXPECT_EQ(spec.difficulty, t.difficulty());
    }
}

TEST(ToyReset, ListsRoomAndReceptacles) {
    ToyEnvironment env(standard_world());
    auto obs = env.reset(pp("key 1", "shelf 1", "room 1").to_task_spec());
    EXPECT_EQ(obs,
              "You begin your task. You are in room 1. Exits: room 2. You see shelf 1, drawer 1 (closed). "
              "You are carrying nothing.");
    EXPECT_EQ(env.reset(pp("key 1", "shelf 1", "room 1").to_task_spec()), obs);
}

TEST(ToyReset, UnknownTemplateRejected) {
    ToyEnvironment env(standard_world());
    EXPECT_THROW(env.reset(TaskSpec{"x", "toyworld@room 1", "juggle three eggs", 1}), EnvironmentError);
    EXPECT_THROW(env.reset(TaskSpec{"x", "toyworld@room 9", "put key 1 in shelf 1", 1}), EnvironmentError);
    EXPECT_THROW(env.reset(TaskSpec{"x", "toyworld@room 1", "put dragon 1 in shelf 1", 1}), EnvironmentError);
}

TEST(ToyReset, GoalObjectMentionedOnlyWhenVisible) {
    auto w = standard_world();
    for (const auto& t : enumerate_tasks(w)) {
        ToyEnvironment env(w);
        auto obs = env.reset(t.to_task_spec());
        auto s = w.initial_state(t);
        for (const auto& o : t.objects) {
            int loc = s.object_location[static_cast<std::size_t>(w.object_index(o))];
            const auto& rec = w.spec().receptacles[static_cast<std::size_t>(loc)];
            bool visible = rec.room == t.start_room && !rec.container;
            EXPECT_EQ(obs.find(o) != std::string::npos, visible) << t.task_id() << " " << o;
        }
    }
}

TEST(ToyStep, GoToConnectedRoom) {
    ToyEnvironment env(standard_world());
    env.reset(pp("key 1", "shelf 1", "room 1").to_task_spec());
    auto r = env.step("go to room 2");
    EXPECT_FALSE(r.done);
    EXPECT_EQ(r.observation,
              "You go to room 2. You are in room 2. Exits: room 1, room 3, room 4. You see table 1, "
              "cabinet 1 (closed). You are carrying nothing.");
}

TEST(ToyStep, InvalidActionsChangeNothing) {
    ToyEnvironment env(standard_world());
    env.reset(pp("key 1", "shelf 1", "room 1").to_task_spec());
    auto before = env.state();
    for (const std::string a : {"dance wildly", "go to room 3", "open shelf 1", "take soap 1 from drawer 1",
                                "put key 1 in shelf 1", "", "go to"}) {
        auto r = env.step(a);
        EXPECT_EQ(r.observation, kNothingHappens) << a;
        EXPECT_FALSE(r.done);
        EXPECT_EQ(env.state(), before);
    }
}

TEST(ToyStep, ContainersMustBeOpened) {
    ToyEnvironment env(standard_world());
    env.reset(pp("soap 1", "shelf 1", "room 1").to_task_spec());
    EXPECT_EQ(env.step("take soap 1 from drawer 1").observation, kNothingHappens);
    auto opened = env.step("open drawer 1");
    EXPECT_EQ(opened.observation.substr(0, 47), "You open drawer 1. Inside you see soap 1. You a");
    EXPECT_NE(opened.observation.find("drawer 1 (open, with soap 1)"), std::string::npos);
    EXPECT_EQ(env.step("take  soap 1 from drawer 1 ").observation.substr(0, 19), "You pick up soap 1.");
    EXPECT_EQ(env.step("take soap 1 from drawer 1").observation, kNothingHappens);
    auto put = env.step("put soap 1 in shelf 1");
    EXPECT_NE(put.observation.find("shelf 1 (with soap 1)"), std::string::npos);
    auto done = env.step("done");
    EXPECT_TRUE(done.done);
    EXPECT_TRUE(done.success);
    EXPECT_THROW(env.step("done"), EnvironmentError);
}

TEST(ToyStep, DoneWithoutGoalFails) {
    ToyEnvironment env(standard_world());
    env.reset(pp("key 1", "shelf 1", "room 1").to_task_spec());
    auto r = env.step("done");
    EXPECT_TRUE(r.done);
    EXPECT_FALSE(r.success);
}

TEST(ToyStep, StepBeforeResetRejected) {
    ToyEnvironment env(standard_world());
    EXPECT_THROW(env.step("done"), EnvironmentError);
}

TEST(Oracle, DegenerateTaskIsSingleDone) {
    auto tr = oracle_solve(standard_world(), pp("key 1", "drawer 2", "room 1"));
    ASSERT_EQ(tr.steps.size(), 1u);
    EXPECT_EQ(tr.steps[0].action, "done");
    EXPECT_TRUE(tr.success);
}

TEST(Oracle, SurfaceObjectOneRoomAwayHandTrace) {
    // plate 1 sits on countertop 1 in room 4, one door from room 2
    auto tr = oracle_solve(standard_world(), pp("plate 1", "table 1", "room 2"));
    std::vector<std::string> actions;
    for (const auto& s : tr.steps) actions.push_back(s.action);
    EXPECT_EQ(actions, (std::vector<std::string>{"go to room 4", "take plate 1 from countertop 1", "go to room 2",
                                                 "put plate 1 in table 1", "done"}));
}

TEST(Oracle, KeyTaskHandTrace) {
    auto w = standard_world();
    auto task = pp("key 1", "shelf 1", "room 1");
    auto step = oracle_step(w, task, w.initial_state(task));
    ASSERT_TRUE(step);
    EXPECT_EQ(step->action, "go to room 2");
    EXPECT_EQ(step->focus_object, "key 1");
    EXPECT_EQ(oracle_reasoning(w, task, w.initial_state(task), *step),
              "I am in room 1 and carrying nothing. I need to find key 1, which is in drawer 2 in room 3. "
              "I go to room 2 on the way to room 3.");
    auto tr = oracle_solve(w, task);
    std::vector<std::string> actions;
    for (const auto& s : tr.steps) actions.push_back(s.action);
    EXPECT_EQ(actions, (std::vector<std::string>{"go to room 2", "go to room 3", "open drawer 2",
                                                 "take key 1 from drawer 2", "go to room 2", "go to room 1",
                                                 "put key 1 in shelf 1", "done"}));
    EXPECT_EQ(tr.plan, "1. find key 1 in drawer 2 in room 3. 2. put key 1 in shelf 1 in room 1. 3. finish.");
}

TEST(Oracle, ExamineTask) {
    auto w = standard_world();
    ToyTask t{TaskTemplate::examine, {"book 1"}, "desklamp 1", "room 4"};
    auto tr = oracle_solve(w, t);
    std::vector<std::string> actions;
    for (const auto& s : tr.steps) actions.push_back(s.action);
    EXPECT_EQ(actions, (std::vector<std::string>{"go to room 5", "take book 1 from desk 1", "done"}));
    EXPECT_TRUE(tr.success);
}

TEST(Oracle, ReplayThroughEnvironmentSucceeds) {
    auto w = standard_world();
    for (const auto& t : enumerate_tasks(w)) {
        if (t.kind == TaskTemplate::pick_two && t.target != "table 1") continue;
        auto tr = oracle_solve(w, t);
        ToyEnvironment env(w);
        ASSERT_EQ(env.reset(tr.task), tr.steps[0].observation);
        StepOutcome last;
        for (std::size_t i = 0; i < tr.steps.size(); ++i) {
            if (i > 0) EXPECT_EQ(last.observation, tr.steps[i].observation);
            last = env.step(tr.steps[i].action);
            EXPECT_NE(last.observation, kNothingHappens) << t.task_id() << " step " << i;
        }
        EXPECT_TRUE(last.done);
        EXPECT_TRUE(last.success) << t.task_id();
        EXPECT_LE(tr.steps.size(), 30u);
    }
}

TEST(Oracle, OptimalAgainstFullStateSearch) {
    ToyWorld w(small_world());
    for (const auto& t : enumerate_tasks(w)) {
        auto tr = oracle_solve(w, t);
        EXPECT_EQ(static_cast<int>(tr.steps.size()), full_state_bfs(w, t)) << t.task_id();
    }
}

TEST(Oracle, PickTwoGoalListsFetchOrder) {
    auto w = standard_world();
    for (const auto& t : enumerate_tasks(w)) {
        if (t.kind != TaskTemplate::pick_two) continue;
        auto step = oracle_step(w, t, w.initial_state(t));
        ASSERT_TRUE(step);
        EXPECT_EQ(step->focus_object, t.objects[0]) << t.task_id();
    }
}

TEST(TaskSet, DeterministicUnderSeed) {
    auto w = standard_world();
    auto a = generate_task_set(w, 7, 20, 20);
    auto b = generate_task_set(w, 7, 20, 20);
    EXPECT_EQ(a.demo, b.demo);
    EXPECT_EQ(a.test, b.test);
    auto c = generate_task_set(w, 8, 20, 20);
    EXPECT_NE(a.test, c.test);
}

TEST(TaskSet, SplitsAreDisjointAndSolvable) {
    auto w = standard_world();
    auto set = generate_task_set(w, 1, 100, 100);
    ASSERT_EQ(set.demo.size(), 100u);
    ASSERT_EQ(set.test.size(), 100u);
    std::set<std::string> ids;
    for (const auto& t : set.demo) ids.insert(t.task_id);
    for (const auto& t : set.test) EXPECT_EQ(ids.count(t.task_id), 0u) << t.task_id;
    std::map<int, int> per_difficulty;
    for (const auto& t : set.test) {
        auto tr = oracle_solve(w, ToyTask::from_task_spec(t));
        EXPECT_TRUE(tr.success);
        EXPECT_LE(tr.steps.size(), 30u);
        ++per_difficulty[*t.difficulty];
    }
    EXPECT_EQ(per_difficulty.size(), 3u);
}

TEST(TaskSet, InfeasibleCountsRejected) {
    ToyWorld w(small_world());
    auto total = enumerate_tasks(w).size();
    EXPECT_THROW(generate_task_set(w, 1, total, 1), EnvironmentError);
    EXPECT_THROW(generate_task_set(w, 1, 0, 1), EnvironmentError);
}
