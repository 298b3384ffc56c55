#include "icd/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

namespace icd::retrieval {

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string field_name(Field f) {
    switch (f) {
        case Field::goal: return "goal";
        case Field::plan: return "plan";
        case Field::reasoning: return "reasoning";
    }
    return "?";
}

}  // namespace

HashedBowEmbedder::HashedBowEmbedder(int dimension) : dim_(dimension) {
    if (dimension < 1) throw RetrievalError("embedding dimension must be positive");
}

std::string HashedBowEmbedder::id() const { return "hashed-bow-" + std::to_string(dim_); }

Embedding HashedBowEmbedder::embed(const std::string& text) const {
    Embedding v(static_cast<std::size_t>(dim_), 0.0);
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        v[fnv1a(token) % static_cast<std::uint64_t>(dim_)] += 1.0;
        token.clear();
    };
    for (unsigned char c : text) {
        if (std::isalnum(c))
            token += static_cast<char>(std::tolower(c));
        else
            flush();
    }
    flush();
    normalize(v);
    return v;
}

void normalize(Embedding& v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    if (sq == 0.0) {
        std::fill(v.begin(), v.end(), 0.0);
        if (!v.empty()) v[0] = 1.0;
        return;
    }
    double inv = 1.0 / std::sqrt(sq);
    for (double& x : v) x *= inv;
}

double cosine_similarity(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size())
        throw RetrievalError("dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return dot;
}

RetrievalIndex RetrievalIndex::build(std::shared_ptr<const store::DemoDatabase> db,
                                     const EmbeddingProvider& provider, bool include_failed) {
    if (!db) throw RetrievalError("no database");
    if (!db->sealed()) throw RetrievalError("database must be sealed before indexing");
    RetrievalIndex idx;
    idx.db_ = std::move(db);
    idx.provider_ = &provider;
    idx.provider_id_ = provider.id();
    idx.dim_ = provider.dimension();
    idx.trajectories_ = idx.db_->retrievable(include_failed);

    auto add = [&](std::size_t t, Field f, int step, const std::string& text) {
        Embedding v;
        IndexKey key{t, f, step};
        try {
            v = provider.embed(text);
        } catch (const std::exception& e) {
            throw RetrievalError("embedding failed for trajectory " + std::to_string(t) + " " + field_name(f) +
                                 (step >= 0 ? " step " + std::to_string(step) : "") + ": " + e.what());
        }
        if (static_cast<int>(v.size()) != idx.dim_)
            throw RetrievalError("embedding for trajectory " + std::to_string(t) + " " + field_name(f) + " has width " +
                                 std::to_string(v.size()) + ", expected " + std::to_string(idx.dim_));
        idx.entries_.push_back({key, std::move(v)});
    };
    for (std::size_t t : idx.trajectories_) {
        const auto& tr = idx.db_->at(t);
        Offsets off{idx.entries_.size(), idx.entries_.size() + 1, idx.entries_.size() + 2, tr.steps.size()};
        add(t, Field::goal, -1, tr.task.goal);
        add(t, Field::plan, -1, tr.plan);
        for (const auto& s : tr.steps) add(t, Field::reasoning, s.index, s.reasoning);
        idx.offsets_.push_back(off);
    }
    return idx;
}

Embedding RetrievalIndex::embed(const std::string& text) const {
    if (!provider_) throw RetrievalError("index has no embedding provider");
    auto v = provider_->embed(text);
    if (static_cast<int>(v.size()) != dim_) throw RetrievalError("query embedding width does not match the index");
    return v;
}

std::vector<PlanHit> RetrievalIndex::retrieve_plans(const std::string& goal_text, int k) const {
    return retrieve_plans(embed(goal_text), k);
}

std::vector<PlanHit> RetrievalIndex::retrieve_plans(const Embedding& goal, int k) const {
    if (trajectories_.empty()) throw RetrievalError("retrieval from an empty index");
    if (k < 1) throw RetrievalError("k must be at least 1");
    std::vector<PlanHit> hits;
    hits.reserve(trajectories_.size());
    for (std::size_t i = 0; i < trajectories_.size(); ++i) {
        const auto& tr = db_->at(trajectories_[i]);
        hits.push_back({trajectories_[i], cosine_similarity(goal, entries_[offsets_[i].goal].vector), tr.task.goal,
                        tr.plan});
    }
    std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(k), hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(),
                      [](const PlanHit& a, const PlanHit& b) {
                          if (a.score != b.score) return a.score > b.score;
                          return a.trajectory < b.trajectory;
                      });
    hits.resize(n);
    return hits;
}

std::vector<StepWindow> select_windows(const std::vector<StepCandidate>& candidates, const store::DemoDatabase& db,
                                       int k, int W) {
    std::vector<StepWindow> out;
    for (const auto& c : candidates) {
        if (static_cast<int>(out.size()) >= k) break;
        const auto& tr = db.at(c.trajectory);
        int last_index = static_cast<int>(tr.steps.size()) - 1;
        int first = std::max(0, c.step - W), last = std::min(last_index, c.step + W);
        bool absorbed = false;
        for (const auto& w : out)
            if (w.trajectory == c.trajectory && first <= w.last_step && w.first_step <= last) absorbed = true;
        if (absorbed) continue;
        StepWindow w;
        w.trajectory = c.trajectory;
        w.center_step = c.step;
        w.first_step = first;
        w.last_step = last;
        w.score = c.score;
        w.steps.assign(tr.steps.begin() + first, tr.steps.begin() + last + 1);
        out.push_back(std::move(w));
    }
    return out;
}

std::vector<StepWindow> RetrievalIndex::retrieve_step_windows(const std::string& goal_text,
                                                              const std::string& plan_text,
                                                              const std::string& step_query, int k, int W,
                                                              const ScoreWeights& weights) const {
    return retrieve_step_windows(embed(goal_text), embed(plan_text), embed(step_query), k, W, weights);
}

std::vector<StepWindow> RetrievalIndex::retrieve_step_windows(const Embedding& goal, const Embedding& plan,
                                                              const Embedding& step_query, int k, int W,
                                                              const ScoreWeights& weights) const {
    if (trajectories_.empty()) throw RetrievalError("retrieval from an empty index");
    if (k < 1) throw RetrievalError("k must be at least 1");
    if (W < 0) throw RetrievalError("window radius must be non-negative");
    double wsum = weights.goal + weights.plan + weights.reasoning;
    if (weights.goal < 0 || weights.plan < 0 || weights.reasoning < 0 || wsum <= 0)
        throw RetrievalError("score weights must be non-negative with a positive sum");

    std::vector<StepCandidate> cand;
    for (std::size_t i = 0; i < trajectories_.size(); ++i) {
        const auto& off = offsets_[i];
        double g = cosine_similarity(goal, entries_[off.goal].vector);
        double p = cosine_similarity(plan, entries_[off.plan].vector);
        for (std::size_t s = 0; s < off.steps; ++s) {
            double r = cosine_similarity(step_query, entries_[off.first_step + s].vector);
            cand.push_back({trajectories_[i], static_cast<int>(s),
                            (weights.goal * g + weights.plan * p + weights.reasoning * r) / wsum});
        }
    }
    std::stable_sort(cand.begin(), cand.end(), [](const StepCandidate& a, const StepCandidate& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.trajectory != b.trajectory) return a.trajectory < b.trajectory;
        return a.step < b.step;
    });
    return select_windows(cand, *db_, k, W);
}

bool RetrievalIndex::operator==(const RetrievalIndex& o) const {
    if (provider_id_ != o.provider_id_ || dim_ != o.dim_ || trajectories_ != o.trajectories_ ||
        entries_.size() != o.entries_.size())
        return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (!(entries_[i].key == o.entries_[i].key) || entries_[i].vector != o.entries_[i].vector) return false;
    return true;
}

// Cache layout: magic, db hash, provider id, dim, entry count, then per entry
// (trajectory, field, step, dim doubles). Native endianness.
namespace {
constexpr char kMagic[8] = {'I', 'C', 'D', 'I', 'D', 'X', '0', '1'};

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
bool get(std::istream& is, T& v) {
    return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof v));
}
}  // namespace

void RetrievalIndex::save_cache(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RetrievalError("cannot write index cache " + path.string());
    os.write(kMagic, sizeof kMagic);
    put(os, db_->content_hash());
    put(os, static_cast<std::uint32_t>(provider_id_.size()));
    os.write(provider_id_.data(), static_cast<std::streamsize>(provider_id_.size()));
    put(os, static_cast<std::int32_t>(dim_));
    put(os, static_cast<std::uint64_t>(entries_.size()));
    for (const auto& e : entries_) {
        put(os, static_cast<std::uint64_t>(e.key.trajectory));
        put(os, static_cast<std::int32_t>(e.key.field));
        put(os, static_cast<std::int32_t>(e.key.step));
        os.write(reinterpret_cast<const char*>(e.vector.data()),
                 static_cast<std::streamsize>(e.vector.size() * sizeof(double)));
    }
    if (!os) throw RetrievalError("write failed: " + path.string());
}

std::optional<RetrievalIndex> RetrievalIndex::load_cache(const std::filesystem::path& path,
                                                         std::shared_ptr<const store::DemoDatabase> db,
                                                         const EmbeddingProvider& provider) {
    std::ifstream is(path, std::ios::binary);
    if (!is) return std::nullopt;
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) return std::nullopt;
    std::uint64_t hash = 0;
    std::uint32_t id_len = 0;
    if (!get(is, hash) || !get(is, id_len) || id_len > 4096) return std::nullopt;
    std::string id(id_len, '\0');
    std::int32_t dim = 0;
    std::uint64_t count = 0;
    if (!is.read(id.data(), id_len) || !get(is, dim) || !get(is, count)) return std::nullopt;
    if (hash != db->content_hash() || id != provider.id() || dim != provider.dimension()) return std::nullopt;

    RetrievalIndex idx;
    idx.db_ = std::move(db);
    idx.provider_ = &provider;
    idx.provider_id_ = id;
    idx.dim_ = dim;
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint64_t t = 0;
        std::int32_t field = 0, step = 0;
        if (!get(is, t) || !get(is, field) || !get(is, step)) return std::nullopt;
        IndexEntry e{{static_cast<std::size_t>(t), static_cast<Field>(field), step},
                     Embedding(static_cast<std::size_t>(dim))};
        if (!is.read(reinterpret_cast<char*>(e.vector.data()), static_cast<std::streamsize>(dim * sizeof(double))))
            return std::nullopt;
        if (e.key.field == Field::goal) {
            idx.trajectories_.push_back(e.key.trajectory);
            idx.offsets_.push_back({idx.entries_.size(), idx.entries_.size() + 1, idx.entries_.size() + 2, 0});
        } else if (e.key.field == Field::reasoning) {
            if (idx.offsets_.empty()) return std::nullopt;
            ++idx.offsets_.back().steps;
        }
        idx.entries_.push_back(std::move(e));
    }
    for (std::size_t i = 0; i < idx.trajectories_.size(); ++i) {
        if (idx.trajectories_[i] >= idx.db_->size() ||
            idx.offsets_[i].steps != idx.db_->at(idx.trajectories_[i]).steps.size())
            return std::nullopt;
    }
    return idx;
}

}  // namespace icd::retrieval
