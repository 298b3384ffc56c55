#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "icd/trajectory_store.hpp"

namespace icd::retrieval {

class RetrievalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unit-norm dense vector.
using Embedding = std::vector<double>;

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::string id() const = 0;
    virtual int dimension() const = 0;
    /// Deterministic; the result has L2 norm 1. Empty text maps to e_1.
    virtual Embedding embed(const std::string& text) const = 0;
};

/// Hashed bag of words: lowercase alphanumeric tokens, FNV-1a into
/// `dimension` buckets, L2-normalized.
class HashedBowEmbedder : public EmbeddingProvider {
public:
    explicit HashedBowEmbedder(int dimension = 384);
    std::string id() const override;
    int dimension() const override { return dim_; }
    Embedding embed(const std::string& text) const override;

private:
    int dim_;
};

/// Dot product of unit vectors. Throws RetrievalError on a dimension mismatch.
double cosine_similarity(const Embedding& a, const Embedding& b);

/// Scales v to unit length; a zero vector becomes e_1.
void normalize(Embedding& v);

enum class Field { goal, plan, reasoning };

struct IndexKey {
    /// Position of the trajectory in the database.
    std::size_t trajectory = 0;
    Field field = Field::goal;
    /// Step index for reasoning entries, -1 otherwise.
    int step = -1;

    bool operator==(const IndexKey&) const = default;
};

struct IndexEntry {
    IndexKey key;
    Embedding vector;
};

struct PlanHit {
    std::size_t trajectory = 0;
    double score = 0.0;
    std::string goal;
    std::string plan;
};

struct StepWindow {
    std::size_t trajectory = 0;
    int center_step = 0;
    int first_step = 0;
    int last_step = 0;
    double score = 0.0;
    std::vector<store::StepRecord> steps;
};

/// Relative weights of the goal, plan and step-key similarities.
struct ScoreWeights {
    double goal = 1.0;
    double plan = 1.0;
    double reasoning = 1.0;
};

/// Exact cosine index over goal, plan and per-step reasoning embeddings of
/// a sealed database. Immutable once built; safe for concurrent lookups.
class RetrievalIndex {
public:
    /// Indexes db.retrievable(include_failed). Throws RetrievalError naming
    /// the offending key when embedding fails or returns the wrong width.
    static RetrievalIndex build(std::shared_ptr<const store::DemoDatabase> db, const EmbeddingProvider& provider,
                                bool include_failed = false);

    const store::DemoDatabase& database() const { return *db_; }
    const std::vector<IndexEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    /// Number of indexed trajectories.
    std::size_t trajectory_count() const { return trajectories_.size(); }
    std::string provider_id() const { return provider_id_; }
    int dimension() const { return dim_; }

    /// Top min(k, trajectories) by goal cosine, ties by trajectory ascending.
    std::vector<PlanHit> retrieve_plans(const std::string& goal_text, int k) const;
    std::vector<PlanHit> retrieve_plans(const Embedding& goal, int k) const;

    /// Top-k step matches by weighted mean of goal, plan and step-key cosines,
    /// each expanded to radius W. A candidate overlapping an already chosen
    /// window of the same trajectory is absorbed by it and the slot goes to
    /// the next candidate. Ties by (trajectory, step) ascending.
    std::vector<StepWindow> retrieve_step_windows(const std::string& goal_text, const std::string& plan_text,
                                                  const std::string& step_query, int k, int W,
                                                  const ScoreWeights& weights = {}) const;
    std::vector<StepWindow> retrieve_step_windows(const Embedding& goal, const Embedding& plan,
                                                  const Embedding& step_query, int k, int W,
                                                  const ScoreWeights& weights = {}) const;

    Embedding embed(const std::string& text) const;

    /// Binary cache keyed by (database hash, provider id, dimension).
    void save_cache(const std::filesystem::path& path) const;
    /// Empty when the file is missing or was built for a different key.
    static std::optional<RetrievalIndex> load_cache(const std::filesystem::path& path,
                                                    std::shared_ptr<const store::DemoDatabase> db,
                                                    const EmbeddingProvider& provider);

    bool operator==(const RetrievalIndex& o) const;

private:
    RetrievalIndex() = default;

    std::shared_ptr<const store::DemoDatabase> db_;
    const EmbeddingProvider* provider_ = nullptr;
    std::string provider_id_;
    int dim_ = 0;
    std::vector<IndexEntry> entries_;
    /// Indexed database positions, ascending.
    std::vector<std::size_t> trajectories_;
    /// Per indexed trajectory: entry offsets of goal, plan, first reasoning.
    struct Offsets {
        std::size_t goal, plan, first_step, steps;
    };
    std::vector<Offsets> offsets_;
};

/// Walks sorted candidates and keeps the first k windows, skipping any that
/// overlap a kept window of the same trajectory.
struct StepCandidate {
    std::size_t trajectory;
    int step;
    double score;
};
std::vector<StepWindow> select_windows(const std::vector<StepCandidate>& candidates, const store::DemoDatabase& db,
                                       int k, int W);

}  // namespace icd::retrieval
