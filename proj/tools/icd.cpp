// Experiment driver: collect-demos, run, report, breakeven.
// Exit status: 0 success, 1 configuration error, 2 runtime failure.
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "icd/experiment.hpp"

using namespace icd;
using experiment::RunConfig;

namespace {

struct Overrides {
    std::optional<std::string> label, output_dir, db, baseline, policy, granularity, equivalence, step_query;
    std::optional<std::uint64_t> seed, task_seed, policy_seed;
    std::optional<std::size_t> db_size, n_demo, n_test;
    std::optional<int> workers, k, W, T, N;
    std::optional<double> temperature, p, lambda;

    void add_common(CLI::App* cmd) {
        cmd->add_option("--seed", seed, "run seed");
        cmd->add_option("--output-dir", output_dir, "output directory");
        cmd->add_option("--db", db, "demo database path");
        cmd->add_option("--workers", workers, "parallel episodes");
        cmd->add_option("--task-seed", task_seed, "seed of the generated task split");
        cmd->add_option("--n-demo", n_demo, "generated demo tasks");
        cmd->add_option("--n-test", n_test, "generated test tasks");
        cmd->add_option("--T", T, "step budget per episode");
    }
    void add_run(CLI::App* cmd) {
        cmd->add_option("--label", label, "method label");
        cmd->add_option("--db-size", db_size, "use a seeded prefix of the database");
        cmd->add_option("--baseline", baseline, "TeacherOnly run directory for the cost baseline");
        cmd->add_option("--policy", policy, "TeacherOnly, StudentZS, StudentIC, ICCascade, CascadeOnly, RandomMix");
        cmd->add_option("--k", k, "exemplars per retrieval");
        cmd->add_option("--W", W, "window radius");
        cmd->add_option("--N", N, "cascade samples");
        cmd->add_option("--temperature", temperature, "student sampling temperature");
        cmd->add_option("--granularity", granularity, "per-step or single");
        cmd->add_option("--step-query", step_query, "observation or reasoning");
        cmd->add_option("--equivalence", equivalence, "strict or soft");
        cmd->add_option("--p", p, "RandomMix teacher share");
        cmd->add_option("--policy-seed", policy_seed, "RandomMix seed");
        cmd->add_option("--lambda", lambda, "accuracy-cost trade-off for ranking");
    }

    void apply(RunConfig& c) const {
        if (label) c.label = *label;
        if (seed) c.seed = *seed;
        if (output_dir) c.output_dir = *output_dir;
        if (db) c.db = *db;
        if (workers) c.workers = *workers;
        if (task_seed) c.tasks.seed = *task_seed;
        if (n_demo) c.tasks.n_demo = *n_demo;
        if (n_test) c.tasks.n_test = *n_test;
        if (T) c.episode.T = *T;
        if (db_size) c.db_size = *db_size;
        if (baseline) c.baseline = *baseline;
        if (policy) c.episode.policy.kind = routing::policy_kind_from_string(*policy);
        if (k) c.episode.k = *k;
        if (W) c.episode.W = *W;
        if (N) c.episode.policy.N = *N;
        if (temperature) c.episode.temperature = *temperature;
        if (granularity) c.episode.granularity = agent::granularity_from_string(*granularity);
        if (step_query) c.episode.step_query = agent::step_query_from_string(*step_query);
        if (equivalence) c.episode.policy.equivalence = routing::equivalence_from_string(*equivalence);
        if (p) c.episode.policy.p = *p;
        if (policy_seed) c.episode.policy.rng_seed = *policy_seed;
        if (lambda) c.lambda = *lambda;
    }
};

RunConfig load_config(const std::string& path, const Overrides& o) {
    RunConfig c = path.empty() ? RunConfig{} : RunConfig::load(path);
    o.apply(c);
    return c;
}

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

void print_summaries(const std::vector<cost::RunSummary>& rows) {
    std::size_t width = 6;
    for (const auto& r : rows) width = std::max(width, r.label.size());
    std::cout << std::left << std::setw(static_cast<int>(width)) << "method" << "  accuracy  mean_cost   norm_cost  teacher_frac\n";
    for (const auto& r : rows)
        std::cout << std::left << std::setw(static_cast<int>(width)) << r.label << "  " << std::setw(8)
                  << fixed(r.accuracy, 3) << "  $" << std::setw(9) << r.mean_cost.to_string(6) << " " << std::setw(9)
                  << fixed(r.mean_normalized_cost, 3) << "  " << fixed(r.teacher_fraction, 3) << "\n";
}

cost::Money money_arg(const std::string& text) {
    try {
        std::size_t used = 0;
        double v = std::stod(text, &used);
        if (used != text.size() || v < 0) throw std::invalid_argument(text);
        return cost::Money::from_usd(v);
    } catch (const std::exception&) {
        throw routing::ConfigError("not a dollar amount: '" + text + "'");
    }
}

cost::Money run_mean_cost(const std::string& dir) {
    auto dirs = experiment::find_run_dirs(dir);
    if (dirs.size() != 1) throw routing::ConfigError(dir + " is not a single run directory");
    std::ifstream in(dirs[0] / "summary.json");
    std::ostringstream ss;
    ss << in.rdbuf();
    return experiment::summary_from_json(ss.str()).mean_cost;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"icd: in-context distillation experiments"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "no progress output");

    Overrides collect_o, run_o;
    std::string collect_config, run_config;
    auto* collect = app.add_subcommand("collect-demos", "run the teacher over the demo split and store the database");
    collect->add_option("--config", collect_config, "run config (JSON)");
    collect_o.add_common(collect);

    auto* run = app.add_subcommand("run", "run every configured policy point over the test split");
    run->add_option("--config", run_config, "run config (JSON)");
    run_o.add_common(run);
    run_o.add_run(run);

    std::vector<std::string> report_dirs;
    std::optional<double> report_lambda;
    std::string report_out;
    auto* report = app.add_subcommand("report", "Pareto table and ranking over run directories");
    report->add_option("runs", report_dirs, "run directories (or sweep roots)")->required();
    report->add_option("--lambda", report_lambda, "rank by accuracy - lambda * normalized cost");
    report->add_option("--output-dir", report_out, "where to write pareto.csv, frontier.csv, report.json");

    std::optional<std::string> demo_cost, baseline_cost, ours_cost, collection, baseline_run, ours_run, be_out;
    std::vector<std::int64_t> grid{1000, 10000, 100000, 1000000};
    auto* be = app.add_subcommand("breakeven", "episodes needed to recover the demonstration cost");
    be->add_option("--demo-cost", demo_cost, "demonstration cost, USD");
    be->add_option("--collection", collection, "collect-demos output directory");
    be->add_option("--baseline-cost", baseline_cost, "teacher cost per episode, USD");
    be->add_option("--baseline-run", baseline_run, "TeacherOnly run directory");
    be->add_option("--ours-cost", ours_cost, "method cost per episode, USD");
    be->add_option("--ours-run", ours_run, "method run directory");
    be->add_option("--grid", grid, "episode counts for the savings table")->delimiter(',');
    be->add_option("--output", be_out, "also write the savings table as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }
    std::ostream* log = quiet ? nullptr : &std::cerr;

    try {
        if (*collect) {
            auto c = load_config(collect_config, collect_o);
            auto r = experiment::collect_demos(c, log);
            std::cout << "demo_cost_usd " << r.demo_cost.to_string(6) << "\n"
                      << "stored " << r.db.size() << "\n"
                      << "skipped " << r.skipped.size() << "\n";
        } else if (*run) {
            auto c = load_config(run_config, run_o);
            auto points = experiment::run_experiment(c, log);
            std::vector<cost::RunSummary> rows;
            for (const auto& p : points) rows.push_back(p.summary);
            print_summaries(rows);
            if (c.lambda) {
                auto rep = experiment::build_report(rows, c.lambda);
                experiment::write_report(rep, c.output_dir);
                std::cout << "best at lambda " << *c.lambda << ": " << rep.ranking.front().point.label << "\n";
            }
        } else if (*report) {
            std::vector<cost::RunSummary> rows;
            for (const auto& root : report_dirs) {
                auto dirs = experiment::find_run_dirs(root);
                if (dirs.empty()) throw routing::ConfigError("no run directories under " + root);
                for (const auto& d : dirs) {
                    std::ifstream in(d / "summary.json");
                    std::ostringstream ss;
                    ss << in.rdbuf();
                    rows.push_back(experiment::summary_from_json(ss.str()));
                }
            }
            auto rep = experiment::build_report(rows, report_lambda);
            print_summaries(rows);
            std::cout << "frontier:";
            for (const auto& p : rep.frontier) std::cout << " [" << p.label << "]";
            std::cout << "\n";
            for (std::size_t i = 0; i < rep.ranking.size(); ++i)
                std::cout << i + 1 << ". " << rep.ranking[i].point.label << "  score " << fixed(rep.ranking[i].score, 4)
                          << "\n";
            experiment::write_report(rep, report_out.empty() ? std::filesystem::path(report_dirs.front()) : std::filesystem::path(report_out));
        } else if (*be) {
            auto pick = [](const std::optional<std::string>& value, const std::optional<std::string>& dir,
                           const char* what, auto from_dir) {
                if (value.has_value() == dir.has_value())
                    throw routing::ConfigError(std::string("give exactly one source for the ") + what);
                return value ? money_arg(*value) : from_dir(*dir);
            };
            cost::BreakevenInput in;
            in.demo_cost = pick(demo_cost, collection, "demo cost",
                                [](const std::string& d) { return experiment::read_collection_cost(d); });
            in.baseline_cost = pick(baseline_cost, baseline_run, "baseline cost", run_mean_cost);
            in.ours_cost = pick(ours_cost, ours_run, "method cost", run_mean_cost);
            auto t = experiment::breakeven_table(in, grid);
            std::cout << "demo_cost_usd " << in.demo_cost.to_string(6) << "\n"
                      << "savings_per_episode_usd " << t.result.per_episode_savings.to_string(6) << "\n"
                      << "n_star " << (t.result.n_star ? std::to_string(*t.result.n_star) : "never") << "\n";
            experiment::write_breakeven_csv(std::cout, t);
            if (be_out) {
                std::ofstream out(*be_out);
                if (!out) throw experiment::RunError("cannot write " + *be_out);
                experiment::write_breakeven_csv(out, t);
            }
        }
    } catch (const routing::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
