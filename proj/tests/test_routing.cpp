#include <gtest/gtest.h>

#include <random>

#include "icd/routing.hpp"

using namespace icd;
using namespace icd::routing;
using gateway::ChatRequest;
using gateway::ChatResponse;

namespace {

/// Replies with scripted texts by sample index and remembers each request.
class Canned : public gateway::ModelBackend {
public:
    explicit Canned(std::vector<std::string> replies) : replies(std::move(replies)) {}
    ChatResponse complete(const ChatRequest& req) override {
        if (fail) throw gateway::TransportError("down");
        requests.push_back(req);
        ChatResponse r;
        for (int i = 0; i < req.n_samples; ++i) {
            r.samples.push_back(replies[static_cast<std::size_t>(i) % replies.size()]);
            r.usage.push_back({i == 0 ? 100 : 0, 5});
        }
        return r;
    }
    bool native_multi_sample() const override { return true; }
    std::string describe() const override { return "canned"; }

    std::vector<std::string> replies;
    std::vector<ChatRequest> requests;
    bool fail = false;
};

std::string step(const std::string& action) { return "reasoning: because\naction: " + action; }

struct Rig {
    std::shared_ptr<Canned> teacher = std::make_shared<Canned>(std::vector<std::string>{step("teacher move")});
    std::shared_ptr<Canned> student = std::make_shared<Canned>(std::vector<std::string>{step("go to room 2")});
    std::shared_ptr<Canned> verifier = std::make_shared<Canned>(std::vector<std::string>{"YES"});
    gateway::ModelClient t{"t", cost::CallRole::teacher, "claude-sonnet-4.5", teacher};
    gateway::ModelClient s{"s", cost::CallRole::student, "gpt-4.1-mini", student};
    gateway::ModelClient v{"v", cost::CallRole::verifier, "gpt-4.1-mini", verifier};
    Models models{&t, &s, &v};
    agent::PromptTemplates templates = agent::PromptTemplates::defaults();
    cost::Ledger ledger;
    std::mt19937_64 rng{1};

    Rig() {
        t.set_sleeper([](auto) {});
        v.set_sleeper([](auto) {});
    }

    StepContext ctx() {
        StepContext c;
        c.goal = "put key 1 in fridge 1";
        c.plan = "1. finish.";
        c.trajectory_text = "observation: You are in room 1.";
        c.action_space = "go to X";
        c.exemplars = {{"put pen 1 in fridge 1", "1. x.", {{0, "EXEMPLAR-OBS", "r", "go to room 2"}}}};
        c.tag = {"ep", cost::Phase::act, 0};
        c.templates = &templates;
        return c;
    }

    RoutingDecision run(const PolicyConfig& p) { return decide_step(p, ctx(), models, ledger, rng); }

    int count(cost::CallRole role) const {
        int n = 0;
        for (const auto& r : ledger.records()) n += r.role == role;
        return n;
    }
};

PolicyConfig policy(PolicyKind k, int n = 3, Equivalence e = Equivalence::strict) {
    PolicyConfig p;
    p.kind = k;
    p.N = n;
    p.equivalence = e;
    if (k == PolicyKind::RandomMix) p.rng_seed = 1;
    return p;
}

bool has_exemplars(const ChatRequest& r) { return r.system_text.find("EXEMPLAR-OBS") != std::string::npos; }

}  // namespace

TEST(Strict, WhitespaceInsensitiveOnly) {
    EXPECT_TRUE(check_consistency_strict({"go to room 2", " go  to room 2 "}));
    EXPECT_FALSE(check_consistency_strict({"go to room 2", "Go to room 2"}));
    EXPECT_FALSE(check_consistency_strict({}));
    EXPECT_TRUE(check_consistency_strict({"x"}));
}

TEST(Validate, RejectsUnrunnableConfigs) {
    auto p = policy(PolicyKind::ICCascade, 1);
    EXPECT_THROW(p.validate(), ConfigError);
    p = policy(PolicyKind::RandomMix);
    p.rng_seed.reset();
    EXPECT_THROW(p.validate(), ConfigError);
    p = policy(PolicyKind::RandomMix);
    p.p = 1.5;
    EXPECT_THROW(p.validate(), ConfigError);
    p = policy(PolicyKind::DifficultyAware);
    EXPECT_THROW(p.validate(), ConfigError);
    p.difficulty_rule = {{1, PolicyKind::DifficultyAware}};
    EXPECT_THROW(p.validate(), ConfigError);
    p.difficulty_rule = {{1, PolicyKind::StudentIC}, {2, PolicyKind::CascadeOnly}};
    p.N = 1;
    EXPECT_THROW(p.validate(), ConfigError);
    p.N = 3;
    EXPECT_NO_THROW(p.validate());
    EXPECT_THROW(resolve_kind(p, std::nullopt), ConfigError);
    EXPECT_THROW(resolve_kind(p, 7), ConfigError);
    EXPECT_EQ(resolve_kind(p, 2), PolicyKind::CascadeOnly);
    EXPECT_THROW(policy_kind_from_string("Cascade"), ConfigError);
    EXPECT_EQ(policy_kind_from_string(to_string(PolicyKind::ICCascade)), PolicyKind::ICCascade);
}

TEST(Decide, SingleModelKinds) {
    {
        Rig r;
        auto d = r.run(policy(PolicyKind::TeacherOnly));
        EXPECT_EQ(d.chosen, ModelChoice::teacher);
        EXPECT_EQ(d.executed_action, "teacher move");
        EXPECT_FALSE(has_exemplars(r.teacher->requests.at(0)));
        EXPECT_EQ(r.ledger.size(), 1u);
    }
    {
        Rig r;
        auto d = r.run(policy(PolicyKind::StudentZS));
        EXPECT_EQ(d.chosen, ModelChoice::student);
        EXPECT_EQ(d.executed_action, "go to room 2");
        EXPECT_FALSE(has_exemplars(r.student->requests.at(0)));
        EXPECT_EQ(r.count(cost::CallRole::teacher), 0);
    }
    {
        Rig r;
        auto d = r.run(policy(PolicyKind::StudentIC));
        EXPECT_TRUE(has_exemplars(r.student->requests.at(0)));
        EXPECT_EQ(d.student_calls, 1);
        EXPECT_FALSE(d.consistent.has_value());
    }
}

TEST(Decide, UnparseableSingleCallRunsRawText) {
    Rig r;
    r.student->replies = {"  go to room 3  "};
    auto d = r.run(policy(PolicyKind::StudentZS));
    EXPECT_TRUE(d.parse_error);
    EXPECT_EQ(d.executed_action, "go to room 3");
}

TEST(Cascade, ConsistentRunsFirstSample) {
    Rig r;
    r.student->replies = {step("go to room 2"), step("go  to room 2"), step(" go to room 2")};
    auto d = r.run(policy(PolicyKind::ICCascade));
    EXPECT_EQ(d.chosen, ModelChoice::student);
    EXPECT_EQ(d.executed_action, "go to room 2");
    EXPECT_EQ(*d.consistent, true);
    EXPECT_EQ(r.count(cost::CallRole::student), 3);
    EXPECT_EQ(r.count(cost::CallRole::teacher), 0);
    EXPECT_TRUE(r.verifier->requests.empty());
    EXPECT_TRUE(has_exemplars(r.student->requests.at(0)));
}

TEST(Cascade, DisagreementDefersOnce) {
    Rig r;
    r.student->replies = {step("go to room 2"), step("go to room 3")};
    auto d = r.run(policy(PolicyKind::ICCascade));
    EXPECT_EQ(d.chosen, ModelChoice::teacher);
    EXPECT_EQ(d.executed_action, "teacher move");
    EXPECT_EQ(r.count(cost::CallRole::teacher), 1);
    EXPECT_EQ(d.samples, (std::vector<std::string>{"go to room 2", "go to room 3", "go to room 2"}));
    EXPECT_FALSE(has_exemplars(r.teacher->requests.at(0)));
}

TEST(Cascade, DeferWithExemplarsOption) {
    Rig r;
    r.student->replies = {step("a"), step("b")};
    auto p = policy(PolicyKind::ICCascade);
    p.defer_with_exemplars = true;
    r.run(p);
    EXPECT_TRUE(has_exemplars(r.teacher->requests.at(0)));
}

TEST(Cascade, CascadeOnlyHasNoExemplars) {
    Rig r;
    r.run(policy(PolicyKind::CascadeOnly));
    EXPECT_FALSE(has_exemplars(r.student->requests.at(0)));
}

TEST(Cascade, SoftCheckOnlyAfterStrictFailure) {
    {
        Rig r;
        auto d = r.run(policy(PolicyKind::ICCascade, 3, Equivalence::soft));
        EXPECT_FALSE(d.verifier_used);
        EXPECT_TRUE(r.verifier->requests.empty());
    }
    {
        Rig r;
        r.student->replies = {step("take key 1 from drawer 2"), step("take key 1 from drawer 2;")};
        auto d = r.run(policy(PolicyKind::ICCascade, 3, Equivalence::soft));
        EXPECT_TRUE(d.verifier_used);
        EXPECT_EQ(d.verifier_calls, 1);
        EXPECT_EQ(d.chosen, ModelChoice::student);
        EXPECT_EQ(d.executed_action, "take key 1 from drawer 2");
        EXPECT_NE(r.verifier->requests.at(0).user_text.find(
                      "{'take key 1 from drawer 2', 'take key 1 from drawer 2;'}"),
                  std::string::npos);
        EXPECT_EQ(r.count(cost::CallRole::verifier), 1);
    }
    {
        Rig r;
        r.student->replies = {step("a"), step("b")};
        r.verifier->replies = {" no "};
        auto d = r.run(policy(PolicyKind::ICCascade, 3, Equivalence::soft));
        EXPECT_EQ(d.chosen, ModelChoice::teacher);
        EXPECT_EQ(r.count(cost::CallRole::teacher), 1);
    }
    {
        Rig r;
        r.student->replies = {step("a"), step("b")};
        r.verifier->replies = {"  yes\n"};
        EXPECT_EQ(r.run(policy(PolicyKind::ICCascade, 3, Equivalence::soft)).chosen, ModelChoice::student);
    }
}

TEST(Cascade, VerifierOutageCountsAsDisagreement) {
    Rig r;
    r.student->replies = {step("a"), step("b")};
    r.verifier->fail = true;
    auto d = r.run(policy(PolicyKind::ICCascade, 3, Equivalence::soft));
    EXPECT_EQ(d.chosen, ModelChoice::teacher);
    EXPECT_FALSE(d.verifier_error.empty());
    EXPECT_EQ(d.verifier_calls, 0);
    EXPECT_EQ(r.count(cost::CallRole::verifier), 0);
}

TEST(Cascade, ParseErrorDefersWithoutVerifier) {
    Rig r;
    r.student->replies = {step("a"), "garbled"};
    auto d = r.run(policy(PolicyKind::ICCascade, 3, Equivalence::soft));
    EXPECT_TRUE(d.parse_error);
    EXPECT_EQ(d.chosen, ModelChoice::teacher);
    EXPECT_TRUE(r.verifier->requests.empty());
    EXPECT_EQ(d.samples[1], "");
}

TEST(Cascade, PropertyRandomSampleSets) {
    std::mt19937_64 gen(2024);
    const std::vector<std::string> pool{"go to room 2", "go  to room 2", "open drawer 1", "take key 1 from drawer 1",
                                        "take key 1 from drawer 1;"};
    for (int trial = 0; trial < 400; ++trial) {
        Rig r;
        const int n = 2 + static_cast<int>(gen() % 4);
        r.student->replies.clear();
        std::vector<std::string> actions;
        bool garbled = false;
        for (int i = 0; i < n; ++i) {
            if (gen() % 10 == 0) {
                r.student->replies.push_back("no labels here");
                garbled = true;
                actions.push_back("");
            } else {
                actions.push_back(pool[gen() % pool.size()]);
                r.student->replies.push_back(step(actions.back()));
            }
        }
        const auto eq = gen() % 2 ? Equivalence::soft : Equivalence::strict;
        auto d = r.run(policy(PolicyKind::ICCascade, n, eq));
        const bool strict_ok = !garbled && check_consistency_strict(actions);
        EXPECT_EQ(r.count(cost::CallRole::student), n);
        if (strict_ok) {
            EXPECT_EQ(r.count(cost::CallRole::teacher), 0);
            EXPECT_EQ(d.executed_action, actions[0]);
            EXPECT_FALSE(d.verifier_used);
        } else if (garbled) {
            EXPECT_EQ(r.count(cost::CallRole::teacher), 1);
            EXPECT_FALSE(d.verifier_used);
        } else {
            EXPECT_EQ(d.verifier_used, eq == Equivalence::soft);
            EXPECT_EQ(r.count(cost::CallRole::teacher), d.chosen == ModelChoice::teacher ? 1 : 0);
            if (d.chosen == ModelChoice::student) EXPECT_EQ(d.executed_action, actions[0]);
        }
        EXPECT_EQ(r.ledger.size(), static_cast<std::size_t>(d.student_calls + d.teacher_calls + d.verifier_calls));
    }
}

TEST(Difficulty, RuleDelegates) {
    auto p = policy(PolicyKind::DifficultyAware);
    p.difficulty_rule = {{1, PolicyKind::StudentIC}, {3, PolicyKind::TeacherOnly}};
    Rig r;
    auto c = r.ctx();
    c.difficulty = 3;
    EXPECT_EQ(decide_step(p, c, r.models, r.ledger, r.rng).chosen, ModelChoice::teacher);
    c.difficulty = 1;
    EXPECT_EQ(decide_step(p, c, r.models, r.ledger, r.rng).chosen, ModelChoice::student);
}

TEST(RandomMix, Extremes) {
    for (double p : {0.0, 1.0}) {
        Rig r;
        auto pc = policy(PolicyKind::RandomMix);
        pc.p = p;
        int teacher = 0;
        for (int i = 0; i < 200; ++i) teacher += r.run(pc).chosen == ModelChoice::teacher;
        EXPECT_EQ(teacher, p == 0.0 ? 0 : 200);
    }
}

TEST(RandomMix, FractionTracksP) {
    std::mt19937_64 rng(77);
    int teacher = 0;
    const int steps = 10000;
    for (int i = 0; i < steps; ++i) teacher += random_mix_choice(0.4, rng) == ModelChoice::teacher;
    EXPECT_NEAR(teacher / double(steps), 0.4, 0.015);
}

TEST(Plan, CascadeChecksPlanSamples) {
    auto pctx = [](Rig& r) {
        PlanContext c;
        c.goal = "put key 1 in fridge 1";
        c.action_space = "A";
        c.exemplars = {{"put pen 1 in fridge 1", "PLAN-EXEMPLAR"}};
        c.tag = {"ep", cost::Phase::plan, -1};
        c.templates = &r.templates;
        return c;
    };
    {
        Rig r;
        r.student->replies = {"1. same. "};
        auto d = decide_plan(policy(PolicyKind::ICCascade), pctx(r), r.models, r.ledger);
        EXPECT_EQ(d.plan, "1. same.");
        EXPECT_EQ(d.student_calls, 3);
        EXPECT_EQ(d.teacher_calls, 0);
        EXPECT_NE(r.student->requests[0].system_text.find("PLAN-EXEMPLAR"), std::string::npos);
    }
    {
        Rig r;
        r.student->replies = {"1. a.", "1. b."};
        r.teacher->replies = {"1. teacher."};
        auto d = decide_plan(policy(PolicyKind::ICCascade), pctx(r), r.models, r.ledger);
        EXPECT_EQ(d.plan, "1. teacher.");
        EXPECT_EQ(d.chosen, ModelChoice::teacher);
        EXPECT_EQ(r.ledger.size(), 4u);
    }
    {
        Rig r;
        auto p = policy(PolicyKind::ICCascade);
        p.route_plan = false;
        auto d = decide_plan(p, pctx(r), r.models, r.ledger);
        EXPECT_EQ(d.student_calls, 1);
    }
    {
        Rig r;
        auto d = decide_plan(policy(PolicyKind::StudentZS), pctx(r), r.models, r.ledger);
        EXPECT_EQ(r.student->requests[0].system_text.find("PLAN-EXEMPLAR"), std::string::npos);
        EXPECT_EQ(d.student_calls, 1);
    }
    {
        Rig r;
        auto d = decide_plan(policy(PolicyKind::TeacherOnly), pctx(r), r.models, r.ledger);
        EXPECT_EQ(d.chosen, ModelChoice::teacher);
        EXPECT_EQ(r.teacher->requests[0].system_text.find("PLAN-EXEMPLAR"), std::string::npos);
    }
}
