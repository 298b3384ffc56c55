#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "icd/cost.hpp"

using namespace icd::cost;

namespace {

CallRecord rec(const std::string& model, CallRole role, std::int64_t in, std::int64_t out, int step = 0,
               const std::string& ep = "ep") {
    return CallRecord{ep, step < 0 ? Phase::plan : Phase::act, step, model, role, in, out};
}

PriceTable sonnet_only() {
    PriceTable t;
    t.set("claude-sonnet-4.5", ModelPrice::per_million(3.00, 15.00));
    return t;
}

}  // namespace

TEST(Money, PicoArithmeticIsExact) {
    auto p = ModelPrice::per_million(3.00, 15.00);
    EXPECT_EQ(p.input_per_token.pico(), 3000000);
    EXPECT_EQ(p.output_per_token.pico(), 15000000);
    Money m = Money::from_usd(0.1) + Money::from_usd(0.2);
    EXPECT_EQ(m, Money::from_usd(0.3));
    EXPECT_EQ(Money::from_usd(0.059031).to_string(6), "0.059031");
    EXPECT_EQ((Money() - Money::from_usd(1.5)).to_string(2), "-1.50");
}

TEST(EpisodeCost, TeacherRowShortTask) {
    auto c = episode_cost({rec("claude-sonnet-4.5", CallRole::teacher, 16257, 684)}, sonnet_only());
    EXPECT_EQ(c.to_string(6), "0.059031");
    EXPECT_NEAR(c.usd(), 0.059, 0.0005);
}

TEST(EpisodeCost, TeacherRowLongTask) {
    auto c = episode_cost({rec("claude-sonnet-4.5", CallRole::teacher, 185460, 2183)}, sonnet_only());
    EXPECT_EQ(c.to_string(6), "0.589125");
}

TEST(EpisodeCost, EmptyIsZero) { EXPECT_EQ(episode_cost({}, sonnet_only()), Money()); }

TEST(EpisodeCost, UnpricedModelThrows) {
    EXPECT_THROW(episode_cost({rec("mystery", CallRole::student, 1, 1)}, sonnet_only()), CostError);
}

TEST(EpisodeCost, VerifierCallsAreBilled) {
    auto prices = PriceTable::defaults();
    std::vector<CallRecord> rs{rec("gpt-4.1-mini", CallRole::student, 1000, 100),
                               rec("gpt-4.1-mini", CallRole::verifier, 1000000, 0)};
    EXPECT_NEAR(episode_cost(rs, prices).usd(), 0.0004 + 0.00016 + 0.40, 1e-12);
}

TEST(EpisodeCost, AdditiveOverDisjointSets) {
    std::mt19937_64 rng(11);
    auto prices = PriceTable::defaults();
    std::vector<std::string> models{"gpt-4.1-mini", "gpt-4.1", "claude-sonnet-4.5", "llama-3.3-70b"};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<CallRecord> a, b;
        for (int i = 0; i < 20; ++i) {
            auto r = rec(models[rng() % 4], CallRole::student, static_cast<std::int64_t>(rng() % 100000),
                         static_cast<std::int64_t>(rng() % 5000));
            (rng() % 2 ? a : b).push_back(r);
        }
        auto all = a;
        all.insert(all.end(), b.begin(), b.end());
        EXPECT_EQ(episode_cost(all, prices), episode_cost(a, prices) + episode_cost(b, prices));
    }
}

TEST(EpisodeCost, MonotoneInTokensAndPrices) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        double pin = static_cast<double>(rng() % 1000) / 100.0, pout = static_cast<double>(rng() % 1000) / 100.0;
        PriceTable t;
        t.set("m", ModelPrice::per_million(pin, pout));
        PriceTable t2;
        t2.set("m", ModelPrice::per_million(pin + 0.01, pout));
        auto in = static_cast<std::int64_t>(rng() % 100000), out = static_cast<std::int64_t>(rng() % 100000);
        auto base = episode_cost({rec("m", CallRole::student, in, out)}, t);
        EXPECT_LE(base, episode_cost({rec("m", CallRole::student, in + 1, out)}, t));
        EXPECT_LE(base, episode_cost({rec("m", CallRole::student, in, out + 1)}, t));
        EXPECT_LE(base, episode_cost({rec("m", CallRole::student, in, out)}, t2));
    }
}

TEST(NormalizedCost, Cases) {
    auto b = Money::from_usd(0.059031);
    EXPECT_DOUBLE_EQ(normalized_cost(b, b), 1.0);
    EXPECT_NEAR(normalized_cost(Money::from_usd(0.024), Money::from_usd(0.059)), 0.4068, 0.0001);
    EXPECT_DOUBLE_EQ(normalized_cost(Money(), Money::from_usd(0.3)), 0.0);
    EXPECT_THROW(normalized_cost(Money::from_usd(1), Money()), CostError);
}

TEST(Breakeven, ShortTaskBenchmark) {
    auto r = breakeven({Money::from_usd(29.50), Money::from_usd(0.059), Money::from_usd(0.024)});
    ASSERT_TRUE(r.breaks_even());
    EXPECT_EQ(*r.n_star, 843);
    EXPECT_NEAR(r.savings_at(1000000).usd(), 34970.5, 1e-6);
}

TEST(Breakeven, LongTaskBenchmark) {
    auto r = breakeven({Money::from_usd(86.73), Money::from_usd(0.59), Money::from_usd(0.17)});
    ASSERT_TRUE(r.breaks_even());
    EXPECT_EQ(*r.n_star, 207);
    EXPECT_NEAR(r.savings_at(1000000).usd(), 419913.27, 1e-6);
}

TEST(Breakeven, NeverWhenOursIsNotCheaper) {
    EXPECT_FALSE(breakeven({Money::from_usd(1), Money::from_usd(0.1), Money::from_usd(0.1)}).breaks_even());
    EXPECT_FALSE(breakeven({Money::from_usd(1), Money::from_usd(0.1), Money::from_usd(0.2)}).breaks_even());
}

TEST(Breakeven, ZeroDemoCostBreaksEvenImmediately) {
    auto r = breakeven({Money(), Money::from_usd(0.1), Money::from_usd(0.05)});
    EXPECT_EQ(*r.n_star, 1);
}

TEST(Breakeven, BracketProperty) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 500; ++trial) {
        auto demo = Money::from_pico(static_cast<__int128>(rng() % 100000000000ULL));
        auto base = Money::from_pico(static_cast<__int128>(1 + rng() % 1000000000ULL));
        auto ours = Money::from_pico(static_cast<__int128>(rng() % static_cast<std::uint64_t>(base.pico())));
        auto r = breakeven({demo, base, ours});
        ASSERT_TRUE(r.breaks_even());
        auto d = base - ours;
        EXPECT_GE(d * *r.n_star, demo);
        if (demo > Money()) EXPECT_LT(d * (*r.n_star - 1), demo);
    }
}

TEST(Pareto, StrictDomination) {
    auto f = pareto_frontier({{0.5, 0.2, "a"}, {0.4, 0.3, "b"}});
    ASSERT_EQ(f.size(), 1u);
    EXPECT_EQ(f[0].label, "a");
}

TEST(Pareto, SinglePoint) {
    auto f = pareto_frontier({{0.7, 0.5, "x"}});
    ASSERT_EQ(f.size(), 1u);
    EXPECT_EQ(f[0].label, "x");
}

TEST(Pareto, MatchesBruteForceScan) {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ParetoPoint> pts;
        for (int i = 0; i < 100; ++i)
            pts.push_back({static_cast<double>(rng() % 20) / 20.0, static_cast<double>(rng() % 20) / 20.0,
                           std::to_string(i)});
        std::vector<ParetoPoint> expected;
        for (const auto& p : pts) {
            bool dominated = false;
            for (const auto& q : pts)
                if (q.accuracy >= p.accuracy && q.normalized_cost <= p.normalized_cost &&
                    (q.accuracy > p.accuracy || q.normalized_cost < p.normalized_cost))
                    dominated = true;
            if (!dominated) expected.push_back(p);
        }
        auto got = pareto_frontier(pts);
        auto key = [](const ParetoPoint& p) { return std::make_tuple(p.normalized_cost, -p.accuracy, p.label); };
        std::sort(expected.begin(), expected.end(), [&](auto& a, auto& b) { return key(a) < key(b); });
        auto sorted_got = got;
        std::sort(sorted_got.begin(), sorted_got.end(), [&](auto& a, auto& b) { return key(a) < key(b); });
        ASSERT_EQ(sorted_got.size(), expected.size());
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(sorted_got[i].label, expected[i].label);
        for (std::size_t i = 1; i < got.size(); ++i) EXPECT_LE(got[i - 1].normalized_cost, got[i].normalized_cost);
    }
}

TEST(Scalarized, LambdaZeroIsAccuracy) {
    ParetoPoint p{0.8, 0.4, "p"};
    EXPECT_DOUBLE_EQ(scalarized_score(p, 0.0), 0.8);
    EXPECT_DOUBLE_EQ(scalarized_score(p, 0.5), 0.6);
}

TEST(Ledger, CsvRoundTrip) {
    Ledger l;
    l.record(rec("gpt-4.1-mini", CallRole::student, 10, 5, -1, "a"));
    l.record(rec("claude-sonnet-4.5", CallRole::teacher, 100, 20, 3, "a"));
    l.record(rec("gpt-4.1-mini", CallRole::verifier, 7, 1, 3, "b"));
    std::stringstream ss;
    l.write_csv(ss, PriceTable::defaults());
    auto back = Ledger::read_csv(ss);
    EXPECT_EQ(back, l.records());
    EXPECT_EQ(l.for_episode("a").size(), 2u);
}

TEST(Ledger, RejectsNegativeTokens) {
    Ledger l;
    EXPECT_THROW(l.record(rec("m", CallRole::student, -1, 0)), CostError);
}

TEST(AggregateRun, MeansAndFractions) {
    std::vector<CostReport> reports{{"a", Money::from_usd(0.02), 0.2, true, 4, 0},
                                    {"b", Money::from_usd(0.04), 0.4, false, 6, 6}};
    auto s = aggregate_run("x", reports, Ledger{}, Money::from_usd(0.1));
    EXPECT_EQ(s.mean_cost, Money::from_usd(0.03));
    EXPECT_DOUBLE_EQ(s.accuracy, 0.5);
    EXPECT_DOUBLE_EQ(s.teacher_fraction, 0.6);
    EXPECT_DOUBLE_EQ(s.mean_steps, 5.0);
    EXPECT_THROW(aggregate_run("x", {}, Ledger{}, std::nullopt), CostError);
}

TEST(AggregateRun, AllTeacherRun) {
    std::vector<CostReport> reports{{"a", Money::from_usd(0.02), 1.0, true, 4, 4},
                                    {"b", Money::from_usd(0.02), 1.0, true, 3, 3}};
    EXPECT_DOUBLE_EQ(aggregate_run("t", reports, Ledger{}, std::nullopt).teacher_fraction, 1.0);
}

TEST(AggregateRun, MatchesRecomputationFromCsvExport) {
    std::mt19937_64 rng(50);
    auto prices = PriceTable::defaults();
    Ledger ledger;
    std::vector<CostReport> reports;
    for (int e = 0; e < 50; ++e) {
        std::string id = "ep" + std::to_string(e);
        int steps = 1 + static_cast<int>(rng() % 10), teacher = 0;
        ledger.record(rec("gpt-4.1-mini", CallRole::student, static_cast<std::int64_t>(rng() % 900), 30, -1, id));
        for (int s = 0; s < steps; ++s) {
            bool t = rng() % 4 == 0;
            teacher += t;
            ledger.record(rec(t ? "claude-sonnet-4.5" : "gpt-4.1-mini", t ? CallRole::teacher : CallRole::student,
                              static_cast<std::int64_t>(rng() % 5000), static_cast<std::int64_t>(rng() % 200), s, id));
        }
        reports.push_back({id, episode_cost(ledger.for_episode(id), prices), 0.0, rng() % 2 == 0, steps, teacher});
    }
    auto summary = aggregate_run("run", reports, ledger, std::nullopt);

    std::stringstream csv;
    ledger.write_csv(csv, prices);
    std::string line;
    std::getline(csv, line);
    std::map<std::string, std::int64_t> in, out;
    double cost_sum = 0.0;
    while (std::getline(csv, line)) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        in[f[4]] += std::stoll(f[5]);
        out[f[4]] += std::stoll(f[6]);
        cost_sum += std::stod(f[7]);
    }
    EXPECT_EQ(summary.tokens[CallRole::student].input_tokens, in["student"]);
    EXPECT_EQ(summary.tokens[CallRole::teacher].output_tokens, out["teacher"]);
    EXPECT_NEAR(summary.mean_cost.usd(), cost_sum / 50.0, 1e-9);
    double acc = 0;
    for (const auto& r : reports) acc += r.success;
    EXPECT_DOUBLE_EQ(summary.accuracy, acc / 50.0);
}
