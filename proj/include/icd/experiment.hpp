#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "icd/agent_loop.hpp"
#include "icd/cost.hpp"
#include "icd/gateway.hpp"
#include "icd/scripted_models.hpp"
#include "icd/toy_world.hpp"

namespace icd::experiment {

using routing::ConfigError;

/// Failures while executing or reading runs; the CLI maps these to exit 2.
class RunError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Backend { scripted, openai, anthropic };

struct ModelSpec {
    Backend backend = Backend::scripted;
    /// Price-table key, also written as model_id in the ledger.
    std::string pricing_key;
    /// Live backends only.
    std::string base_url;
    std::string path;
    std::string model_name;
    std::string api_key_env;
    int timeout_seconds = 120;
    /// Requests per second shared by every episode of the run; 0 is unlimited.
    double rate_limit_rps = 0.0;
    gateway::RetryPolicy retry;
    /// Scripted student only.
    gateway::StudentBehavior behavior;
};

struct ModelsConfig {
    ModelSpec teacher;
    ModelSpec student;
    ModelSpec verifier;
    ModelsConfig();
};

struct TaskSource {
    enum Kind { toy, file } kind = toy;
    /// Split seed for generated tasks; the run seed when absent.
    std::optional<std::uint64_t> seed;
    std::size_t n_demo = 100;
    std::size_t n_test = 100;
    /// Task file ({"demo": [...], "test": [...]}) for kind == file.
    std::filesystem::path path;
};

struct EnvironmentConfig {
    enum Kind { toy, stdio, tcp } kind = toy;
    /// Toy world spec; the standard map when empty. The scripted teacher
    /// plans over this map whatever the environment kind.
    std::filesystem::path world;
    std::vector<std::string> command;
    std::string host = "127.0.0.1";
    int port = 0;
    /// Prompt text for {action_space}; the toy grammar when empty.
    std::string action_space;
};

struct EmbedderConfig {
    enum Kind { hashed_bow, http } kind = hashed_bow;
    int dimension = 384;
    std::string base_url;
    std::string path;
    std::string model_name;
    std::string api_key_env;
    /// Keep the built index next to the database.
    bool cache = true;
};

/// Lists expand to their cross product; an empty list keeps the base value.
struct SweepConfig {
    std::vector<routing::PolicyKind> policy;
    std::vector<int> k;
    std::vector<double> temperature;
    std::vector<double> p;
    std::vector<agent::Granularity> granularity;
    /// Prefixes of a seeded shuffle of the database.
    std::vector<std::size_t> db_size;

    bool empty() const;
};

struct RunConfig {
    /// Method label in summaries; the policy kind when empty.
    std::string label;
    ModelsConfig models;
    cost::PriceTable prices = cost::PriceTable::defaults();
    agent::EpisodeConfig episode;
    TaskSource tasks;
    EnvironmentConfig environment;
    std::filesystem::path db;
    std::optional<std::size_t> db_size;
    EmbedderConfig embedder;
    std::optional<std::filesystem::path> templates;
    /// TeacherOnly run directory supplying the cost baseline. When absent a
    /// TeacherOnly pass over the test split is run into output_dir/baseline.
    std::optional<std::filesystem::path> baseline;
    std::optional<std::uint64_t> seed;
    std::filesystem::path output_dir = "runs/out";
    int workers = 1;
    std::optional<double> lambda;
    SweepConfig sweep;

    /// Relative paths resolve against base_dir. Throws ConfigError.
    static RunConfig from_json_text(const std::string& text, const std::filesystem::path& base_dir = {});
    static RunConfig load(const std::filesystem::path& path);
    /// Complete snapshot; from_json_text(to_json_text()) round-trips.
    std::string to_json_text() const;

    std::string method_label() const;
    std::uint64_t task_seed() const { return tasks.seed.value_or(seed.value_or(0)); }

    enum class Purpose { collect, run };
    /// Everything checkable before the first episode. Throws ConfigError.
    void validate(Purpose purpose) const;
};

/// One config per sweep point. Labels and directory names carry the swept
/// values, e.g. "ICCascade k=3".
struct SweepPoint {
    RunConfig config;
    std::string suffix;
};
std::vector<SweepPoint> expand_sweep(const RunConfig& base);

env::TaskSet load_task_set(const RunConfig& config);
void save_task_set(const env::TaskSet& tasks, const std::filesystem::path& path);

/// Shared per-run resources: models, templates, environment factory.
class Resources {
public:
    explicit Resources(const RunConfig& config);
    ~Resources();

    const routing::Models& models() const { return models_; }
    const agent::PromptTemplates& templates() const { return templates_; }
    const env::EnvironmentFactory& environments() const { return *factory_; }
    const env::ToyWorld& world() const { return *world_; }
    std::unique_ptr<retrieval::EmbeddingProvider> make_embedder() const;

private:
    RunConfig config_;
    std::unique_ptr<env::ToyWorld> world_;
    std::unique_ptr<env::EnvironmentFactory> factory_;
    std::vector<std::unique_ptr<gateway::ModelClient>> clients_;
    routing::Models models_;
    agent::PromptTemplates templates_;
};

struct EpisodeOutcome {
    agent::EpisodeResult result;
    cost::CostReport report;
};

/// Runs `tasks` on `workers` threads; results come back in task_id order.
std::vector<EpisodeOutcome> run_episodes(const std::vector<store::TaskSpec>& tasks, const agent::EpisodeConfig& ep,
                                         const Resources& res, const retrieval::RetrievalIndex* index,
                                         std::uint64_t seed, int workers, const std::string& source_label,
                                         const cost::PriceTable& prices, std::optional<cost::Money> baseline);

struct CollectResult {
    store::DemoDatabase db;
    cost::Money demo_cost;
    std::vector<cost::CostReport> reports;
    cost::Ledger ledger;
    /// task_id: reason, for episodes left out of the database.
    std::vector<std::string> skipped;
};

/// TeacherOnly over the demo split; writes the database, its index cache and
/// output_dir/{collection.json,episodes.csv,ledger.csv}.
CollectResult collect_demos(const RunConfig& config, std::ostream* log = nullptr);

struct PointResult {
    std::string label;
    std::filesystem::path dir;
    cost::RunSummary summary;
    std::vector<cost::CostReport> reports;
    cost::Ledger ledger;
};

/// Every sweep point over the test split. Point directories hold
/// config.json, episodes.csv, ledger.csv, summary.csv, summary.json and
/// trajectories.jsonl; the top directory also gets a combined summary.csv.
std::vector<PointResult> run_experiment(const RunConfig& config, std::ostream* log = nullptr);

std::string summary_to_json(const cost::RunSummary& s);
cost::RunSummary summary_from_json(const std::string& text);
/// Run directories at or directly below `root` (those holding summary.json).
std::vector<std::filesystem::path> find_run_dirs(const std::filesystem::path& root);

/// Summary token totals against column sums of ledger.csv in `run_dir`.
/// Returns an empty string when they agree, else the first mismatch.
std::string reconcile_run_dir(const std::filesystem::path& run_dir);

struct RankedPoint {
    cost::ParetoPoint point;
    double score = 0.0;
};

struct Report {
    std::vector<cost::RunSummary> rows;
    std::vector<cost::ParetoPoint> points;
    std::vector<cost::ParetoPoint> frontier;
    /// Descending score, ties by label; empty without lambda.
    std::vector<RankedPoint> ranking;
    std::optional<double> lambda;
};

/// Throws RunError when runs disagree on the teacher baseline.
Report build_report(const std::vector<cost::RunSummary>& rows, std::optional<double> lambda);
/// pareto.csv, frontier.csv, ranking.csv (with lambda) and report.json.
void write_report(const Report& report, const std::filesystem::path& dir);

struct BreakevenTable {
    cost::BreakevenInput input;
    cost::BreakevenResult result;
    std::vector<std::pair<std::int64_t, cost::Money>> savings;
};
BreakevenTable breakeven_table(const cost::BreakevenInput& in, const std::vector<std::int64_t>& grid);
void write_breakeven_csv(std::ostream& os, const BreakevenTable& t);

/// Demo cost recorded by collect_demos in `dir`.
cost::Money read_collection_cost(const std::filesystem::path& dir);

}  // namespace icd::experiment
