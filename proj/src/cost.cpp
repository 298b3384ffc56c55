#include "icd/cost.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace icd::cost {

namespace {

std::string int128_to_string(__int128 v) {
    if (v == 0) return "0";
    bool neg = v < 0;
    unsigned __int128 u = neg ? static_cast<unsigned __int128>(-(v + 1)) + 1
                              : static_cast<unsigned __int128>(v);
    std::string digits;
    while (u > 0) {
        digits.push_back(static_cast<char>('0' + static_cast<int>(u % 10)));
        u /= 10;
    }
    if (neg) digits.push_back('-');
    std::reverse(digits.begin(), digits.end());
    return digits;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

Money Money::from_usd(double usd) {
    return Money(static_cast<__int128>(std::llroundl(static_cast<long double>(usd) * 1e12L)));
}

std::string Money::to_string(int decimals) const {
    decimals = std::clamp(decimals, 0, 12);
    __int128 scale = 1;
    for (int i = 0; i < 12 - decimals; ++i) scale *= 10;
    __int128 v = pico_;
    bool neg = v < 0;
    if (neg) v = -v;
    // round half away from zero at the requested precision
    __int128 scaled = (v + scale / 2) / scale;
    if (scale == 1) scaled = v;
    __int128 unit = 1;
    for (int i = 0; i < decimals; ++i) unit *= 10;
    std::string whole = int128_to_string(scaled / unit);
    std::string out = neg && scaled != 0 ? "-" + whole : whole;
    if (decimals > 0) {
        std::string frac = int128_to_string(scaled % unit);
        out += "." + std::string(static_cast<std::size_t>(decimals) - frac.size(), '0') + frac;
    }
    return out;
}

std::ostream& operator<<(std::ostream& os, Money m) { return os << '$' << m.to_string(6); }

ModelPrice ModelPrice::per_million(double input_usd, double output_usd) {
    if (input_usd < 0 || output_usd < 0) throw CostError("prices must be non-negative");
    // $X per 1M tokens == X * 1e6 pico-dollars per token
    auto to_pico = [](double usd) {
        return Money::from_pico(static_cast<__int128>(std::llroundl(static_cast<long double>(usd) * 1e6L)));
    };
    return ModelPrice{to_pico(input_usd), to_pico(output_usd)};
}

PriceTable PriceTable::defaults() {
    PriceTable t;
    t.set("gpt-4.1-mini", ModelPrice::per_million(0.40, 1.60));
    t.set("gpt-4.1", ModelPrice::per_million(2.00, 8.00));
    t.set("claude-sonnet-4.5", ModelPrice::per_million(3.00, 15.00));
    t.set("llama-3.3-70b", ModelPrice::per_million(0.13, 0.39));
    return t;
}

void PriceTable::set(const std::string& model_id, ModelPrice price) {
    if (price.input_per_token < Money() || price.output_per_token < Money())
        throw CostError("negative price for " + model_id);
    prices_[model_id] = price;
}

bool PriceTable::contains(const std::string& model_id) const { return prices_.count(model_id) > 0; }

const ModelPrice& PriceTable::at(const std::string& model_id) const {
    auto it = prices_.find(model_id);
    if (it == prices_.end()) throw CostError("unpriced model_id: " + model_id);
    return it->second;
}

std::string to_string(CallRole role) {
    switch (role) {
        case CallRole::student: return "student";
        case CallRole::teacher: return "teacher";
        case CallRole::verifier: return "verifier";
    }
    return "unknown";
}

std::string to_string(Phase phase) { return phase == Phase::plan ? "plan" : "act"; }

CallRole call_role_from_string(const std::string& s) {
    if (s == "student") return CallRole::student;
    if (s == "teacher") return CallRole::teacher;
    if (s == "verifier") return CallRole::verifier;
    throw CostError("unknown role: " + s);
}

Phase phase_from_string(const std::string& s) {
    if (s == "plan") return Phase::plan;
    if (s == "act") return Phase::act;
    throw CostError("unknown phase: " + s);
}

Money record_cost(const CallRecord& r, const PriceTable& prices) {
    if (r.input_tokens < 0 || r.output_tokens < 0) throw CostError("negative token count");
    const auto& p = prices.at(r.model_id);
    return p.input_per_token * r.input_tokens + p.output_per_token * r.output_tokens;
}

Money episode_cost(const std::vector<CallRecord>& records, const PriceTable& prices) {
    Money total;
    for (const auto& r : records) total += record_cost(r, prices);
    return total;
}

double normalized_cost(Money cost, Money teacher_baseline) {
    if (teacher_baseline <= Money()) throw CostError("teacher baseline cost must be positive");
    return static_cast<double>(static_cast<long double>(cost.pico()) /
                               static_cast<long double>(teacher_baseline.pico()));
}

void Ledger::record(CallRecord r) {
    if (r.input_tokens < 0 || r.output_tokens < 0) throw CostError("negative token count");
    records_.push_back(std::move(r));
}

void Ledger::merge(const Ledger& other) {
    records_.insert(records_.end(), other.records_.begin(), other.records_.end());
}

std::vector<CallRecord> Ledger::for_episode(const std::string& episode_id) const {
    std::vector<CallRecord> out;
    for (const auto& r : records_)
        if (r.episode_id == episode_id) out.push_back(r);
    return out;
}

void Ledger::write_csv(std::ostream& os, const PriceTable& prices) const {
    os << "episode_id,phase,step,model_id,role,input_tokens,output_tokens,cost_usd\n";
    for (const auto& r : records_) {
        os << r.episode_id << ',' << to_string(r.phase) << ',' << r.step << ',' << r.model_id << ','
           << to_string(r.role) << ',' << r.input_tokens << ',' << r.output_tokens << ','
           << record_cost(r, prices).to_string(12) << '\n';
    }
}

std::vector<CallRecord> Ledger::read_csv(std::istream& is) {
    std::vector<CallRecord> out;
    std::string line;
    if (!std::getline(is, line)) return out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 8) throw CostError("ledger csv: bad field count on line " + std::to_string(lineno));
        CallRecord r;
        r.episode_id = f[0];
        r.phase = phase_from_string(f[1]);
        r.step = std::stoi(f[2]);
        r.model_id = f[3];
        r.role = call_role_from_string(f[4]);
        r.input_tokens = std::stoll(f[5]);
        r.output_tokens = std::stoll(f[6]);
        out.push_back(std::move(r));
    }
    return out;
}

Money BreakevenResult::savings_at(std::int64_t episodes) const {
    return per_episode_savings * episodes - demo_cost;
}

BreakevenResult breakeven(const BreakevenInput& in) {
    if (in.demo_cost < Money()) throw CostError("demo cost must be non-negative");
    BreakevenResult out;
    out.demo_cost = in.demo_cost;
    out.per_episode_savings = in.baseline_cost - in.ours_cost;
    if (out.per_episode_savings <= Money()) return out;
    __int128 d = out.per_episode_savings.pico();
    __int128 n = (in.demo_cost.pico() + d - 1) / d;
    // zero upfront cost still needs one episode before anything is saved
    out.n_star = static_cast<std::int64_t>(std::max<__int128>(n, 1));
    return out;
}

std::vector<ParetoPoint> pareto_frontier(const std::vector<ParetoPoint>& points) {
    std::vector<ParetoPoint> sorted(points);
    std::stable_sort(sorted.begin(), sorted.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
        if (a.normalized_cost != b.normalized_cost) return a.normalized_cost < b.normalized_cost;
        return a.accuracy > b.accuracy;
    });
    // Sweep by cost: a point survives iff its accuracy beats every cheaper
    // point, or ties the running best at the same cost and accuracy.
    std::vector<ParetoPoint> out;
    for (const auto& p : sorted) {
        if (out.empty()) {
            out.push_back(p);
            continue;
        }
        const auto& best = out.back();
        bool duplicate = p.accuracy == best.accuracy && p.normalized_cost == best.normalized_cost;
        if (p.accuracy > best.accuracy || duplicate) out.push_back(p);
    }
    return out;
}

double scalarized_score(const ParetoPoint& p, double lambda) {
    return p.accuracy - lambda * p.normalized_cost;
}

RunSummary aggregate_run(const std::string& label, const std::vector<CostReport>& reports,
                         const Ledger& ledger, std::optional<Money> teacher_baseline) {
    if (reports.empty()) throw CostError("cannot aggregate an empty run");
    RunSummary s;
    s.label = label;
    s.episodes = reports.size();
    s.teacher_baseline = teacher_baseline;
    std::size_t successes = 0;
    double norm_sum = 0.0;
    for (const auto& r : reports) {
        successes += r.success ? 1 : 0;
        s.total_cost += r.cost;
        norm_sum += r.normalized_cost;
        s.total_steps += r.steps;
        s.teacher_steps += r.teacher_steps;
    }
    auto n = static_cast<double>(reports.size());
    s.accuracy = static_cast<double>(successes) / n;
    s.mean_cost = Money::from_pico(s.total_cost.pico() / static_cast<__int128>(reports.size()));
    s.mean_normalized_cost = norm_sum / n;
    s.mean_steps = static_cast<double>(s.total_steps) / n;
    s.teacher_fraction =
        s.total_steps == 0 ? 0.0 : static_cast<double>(s.teacher_steps) / static_cast<double>(s.total_steps);
    for (CallRole role : {CallRole::student, CallRole::teacher, CallRole::verifier}) s.tokens[role] = {};
    for (const auto& r : ledger.records()) {
        auto& t = s.tokens[r.role];
        t.input_tokens += r.input_tokens;
        t.output_tokens += r.output_tokens;
        t.calls += 1;
    }
    return s;
}

void write_summary_csv(std::ostream& os, const std::vector<RunSummary>& rows) {
    os << "method,episodes,accuracy,mean_cost_usd,mean_normalized_cost,teacher_fraction,mean_steps,"
          "student_input,student_output,teacher_input,teacher_output,verifier_input,verifier_output,"
          "student_calls,teacher_calls,verifier_calls,teacher_baseline_usd\n";
    std::ostringstream num;
    auto fmt = [&](double v) {
        num.str("");
        num.setf(std::ios::fixed);
        num.precision(6);
        num << v;
        return num.str();
    };
    for (const auto& s : rows) {
        auto tok = [&](CallRole r) {
            auto it = s.tokens.find(r);
            return it == s.tokens.end() ? TokenTotals{} : it->second;
        };
        auto st = tok(CallRole::student), te = tok(CallRole::teacher), ve = tok(CallRole::verifier);
        os << s.label << ',' << s.episodes << ',' << fmt(s.accuracy) << ',' << s.mean_cost.to_string(12) << ','
           << fmt(s.mean_normalized_cost) << ',' << fmt(s.teacher_fraction) << ',' << fmt(s.mean_steps) << ','
           << st.input_tokens << ',' << st.output_tokens << ',' << te.input_tokens << ',' << te.output_tokens
           << ',' << ve.input_tokens << ',' << ve.output_tokens << ',' << st.calls << ',' << te.calls << ','
           << ve.calls << ',' << (s.teacher_baseline ? s.teacher_baseline->to_string(12) : std::string()) << '\n';
    }
}

void write_reports_csv(std::ostream& os, const std::vector<CostReport>& reports) {
    os << "episode_id,cost_usd,normalized_cost,success,steps,teacher_steps,teacher_fraction\n";
    for (const auto& r : reports) {
        std::ostringstream line;
        line.setf(std::ios::fixed);
        line.precision(6);
        line << r.episode_id << ',' << r.cost.to_string(12) << ',' << r.normalized_cost << ','
             << (r.success ? 1 : 0) << ',' << r.steps << ',' << r.teacher_steps << ',' << r.teacher_fraction();
        os << line.str() << '\n';
    }
}

}  // namespace icd::cost
