#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace icd::cost {

/// Exact currency amount in pico-dollars (1e-12 USD).
///
/// A price of $X per 1M tokens is exactly X*1e6 pico-dollars per token, so
/// token costs accumulate with no rounding at all.
class Money {
public:
    constexpr Money() = default;

    static constexpr Money from_pico(__int128 pico) { return Money(pico); }
    /// Rounds to the nearest pico-dollar.
    static Money from_usd(double usd);

    constexpr __int128 pico() const { return pico_; }
    double usd() const { return static_cast<double>(static_cast<long double>(pico_) / 1e12L); }

    /// Fixed-point decimal rendering, e.g. "0.059031000000" for 12 decimals.
    std::string to_string(int decimals = 12) const;

    constexpr Money operator+(Money o) const { return Money(pico_ + o.pico_); }
    constexpr Money operator-(Money o) const { return Money(pico_ - o.pico_); }
    constexpr Money operator*(std::int64_t n) const { return Money(pico_ * n); }
    constexpr Money& operator+=(Money o) { pico_ += o.pico_; return *this; }
    constexpr Money& operator-=(Money o) { pico_ -= o.pico_; return *this; }
    constexpr auto operator<=>(const Money&) const = default;

private:
    constexpr explicit Money(__int128 pico) : pico_(pico) {}
    __int128 pico_ = 0;
};

std::ostream& operator<<(std::ostream& os, Money m);

class CostError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ModelPrice {
    Money input_per_token;
    Money output_per_token;

    static ModelPrice per_million(double input_usd, double output_usd);
    double input_per_million_usd() const { return input_per_token.usd() * 1e6; }
    double output_per_million_usd() const { return output_per_token.usd() * 1e6; }
};

/// model_id -> per-token prices, USD.
class PriceTable {
public:
    /// October-2025 list prices for the four models used in the reference
    /// experiments, plus zero-priced entries for the scripted backends.
    static PriceTable defaults();

    void set(const std::string& model_id, ModelPrice price);
    bool contains(const std::string& model_id) const;
    const ModelPrice& at(const std::string& model_id) const;
    const std::map<std::string, ModelPrice>& entries() const { return prices_; }

private:
    std::map<std::string, ModelPrice> prices_;
};

enum class CallRole { student, teacher, verifier };
enum class Phase { plan, act };

std::string to_string(CallRole role);
std::string to_string(Phase phase);
CallRole call_role_from_string(const std::string& s);
Phase phase_from_string(const std::string& s);

struct CallRecord {
    std::string episode_id;
    Phase phase = Phase::act;
    /// Act-step index; -1 for the plan phase.
    int step = -1;
    std::string model_id;
    CallRole role = CallRole::student;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;

    bool operator==(const CallRecord&) const = default;
};

Money record_cost(const CallRecord& record, const PriceTable& prices);

/// Sum over records of in*in_price + out*out_price, every role included.
Money episode_cost(const std::vector<CallRecord>& records, const PriceTable& prices);

/// cost / teacher_baseline. Throws CostError for a non-positive baseline.
double normalized_cost(Money cost, Money teacher_baseline);

/// Append-only list of call records. Each episode owns one; run-level
/// ledgers are assembled with merge().
class Ledger {
public:
    void record(CallRecord r);
    void merge(const Ledger& other);

    const std::vector<CallRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    std::vector<CallRecord> for_episode(const std::string& episode_id) const;

    /// episode_id,phase,step,model_id,role,input_tokens,output_tokens,cost_usd
    void write_csv(std::ostream& os, const PriceTable& prices) const;
    static std::vector<CallRecord> read_csv(std::istream& is);

private:
    std::vector<CallRecord> records_;
};

struct BreakevenInput {
    Money demo_cost;
    Money baseline_cost;
    Money ours_cost;
};

struct BreakevenResult {
    Money per_episode_savings;
    /// Smallest N with N * savings >= demo_cost; empty when ours >= baseline.
    std::optional<std::int64_t> n_star;

    bool breaks_even() const { return n_star.has_value(); }
    Money savings_at(std::int64_t episodes) const;

    Money demo_cost;
};

BreakevenResult breakeven(const BreakevenInput& in);

struct ParetoPoint {
    double accuracy = 0.0;
    double normalized_cost = 0.0;
    std::string label;
};

/// Points not dominated by any other point, sorted by cost ascending
/// (accuracy descending on equal cost). Exact duplicates are all kept.
std::vector<ParetoPoint> pareto_frontier(const std::vector<ParetoPoint>& points);

/// score = accuracy - lambda * normalized_cost
double scalarized_score(const ParetoPoint& p, double lambda);

struct CostReport {
    std::string episode_id;
    Money cost;
    double normalized_cost = 0.0;
    bool success = false;
    int steps = 0;
    int teacher_steps = 0;

    double teacher_fraction() const {
        return steps == 0 ? 0.0 : static_cast<double>(teacher_steps) / steps;
    }
};

struct TokenTotals {
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    std::int64_t calls = 0;

    bool operator==(const TokenTotals&) const = default;
};

struct RunSummary {
    std::string label;
    std::size_t episodes = 0;
    double accuracy = 0.0;
    Money mean_cost;
    Money total_cost;
    double mean_normalized_cost = 0.0;
    /// Teacher step-decisions over all step-decisions of the run.
    double teacher_fraction = 0.0;
    double mean_steps = 0.0;
    std::int64_t total_steps = 0;
    std::int64_t teacher_steps = 0;
    std::optional<Money> teacher_baseline;
    std::map<CallRole, TokenTotals> tokens;
};

/// Arithmetic means over the reports; per-role token totals from the ledger.
/// Throws CostError on an empty run.
RunSummary aggregate_run(const std::string& label, const std::vector<CostReport>& reports,
                         const Ledger& ledger, std::optional<Money> teacher_baseline);

void write_summary_csv(std::ostream& os, const std::vector<RunSummary>& rows);
void write_reports_csv(std::ostream& os, const std::vector<CostReport>& reports);

}  // namespace icd::cost
