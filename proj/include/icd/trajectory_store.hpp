#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace icd::store {

inline constexpr int kSchemaVersion = 1;

struct TaskSpec {
    std::string task_id;
    std::string env_id;
    std::string goal;
    std::optional<int> difficulty;

    bool operator==(const TaskSpec&) const = default;
};

struct StepRecord {
    int index = 0;
    std::string observation;
    std::string reasoning;
    std::string action;

    bool operator==(const StepRecord&) const = default;
};

struct Trajectory {
    TaskSpec task;
    std::string plan;
    std::vector<StepRecord> steps;
    bool success = false;
    std::string source_model;

    std::size_t length() const { return steps.size(); }
    bool operator==(const Trajectory&) const = default;
};

struct Violation {
    /// Dotted path of the offending field, e.g. "steps[2].action".
    std::string field;
    std::string message;
};

/// Every invariant violation, not just the first. Empty means valid.
std::vector<Violation> validate_trajectory(const Trajectory& traj);
std::vector<Violation> validate_task(const TaskSpec& task);
std::string describe(const std::vector<Violation>& violations);

class StoreError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SealedDatabaseError : public StoreError {
public:
    SealedDatabaseError() : StoreError("demo database is sealed") {}
};

class ValidationError : public StoreError {
public:
    explicit ValidationError(std::vector<Violation> v)
        : StoreError("invalid trajectory: " + describe(v)), violations(std::move(v)) {}
    std::vector<Violation> violations;
};

class SchemaVersionError : public StoreError {
public:
    SchemaVersionError(int found, int expected)
        : StoreError("schema version " + std::to_string(found) + " is not supported (expected " +
                     std::to_string(expected) + ")") {}
};

class CorruptRecordError : public StoreError {
public:
    CorruptRecordError(std::size_t index, const std::string& what)
        : StoreError("corrupt trajectory record " + std::to_string(index) + ": " + what), record_index(index) {}
    std::size_t record_index;
};

struct Manifest {
    int schema_version = kSchemaVersion;
    std::string embedder_id;
    int dimension = 0;
    std::map<std::string, std::string> metadata;

    bool operator==(const Manifest&) const = default;
};

/// Teacher demonstrations. Mutable only until seal(); readers take it by
/// const reference once sealed.
class DemoDatabase {
public:
    DemoDatabase() = default;
    explicit DemoDatabase(Manifest manifest) : manifest_(std::move(manifest)) {}

    /// Throws SealedDatabaseError or ValidationError.
    void append(Trajectory traj);
    void seal() { sealed_ = true; }
    bool sealed() const { return sealed_; }

    const Manifest& manifest() const { return manifest_; }
    /// Throws SealedDatabaseError once sealed.
    Manifest& mutable_manifest();

    const std::vector<Trajectory>& trajectories() const { return trajectories_; }
    std::size_t size() const { return trajectories_.size(); }
    const Trajectory& at(std::size_t i) const { return trajectories_.at(i); }

    /// Indices eligible for retrieval: successful episodes unless
    /// include_failed is set.
    std::vector<std::size_t> retrievable(bool include_failed = false) const;

    /// Sealed copy holding only the listed trajectories, in the given order.
    DemoDatabase subset(const std::vector<std::size_t>& indices) const;

    /// FNV-1a over the serialized form; keys index caches.
    std::uint64_t content_hash() const;

    bool operator==(const DemoDatabase& o) const {
        return manifest_ == o.manifest_ && trajectories_ == o.trajectories_;
    }

private:
    Manifest manifest_;
    std::vector<Trajectory> trajectories_;
    bool sealed_ = false;
};

/// Line-delimited JSON: a manifest line, then one trajectory per line.
/// The loaded database is sealed.
void save_database(const DemoDatabase& db, const std::filesystem::path& path);
DemoDatabase load_database(const std::filesystem::path& path);

std::string serialize_database(const DemoDatabase& db);

/// Single-record forms used by run outputs and task files. Parsing throws
/// StoreError; it does not validate.
std::string trajectory_to_json_line(const Trajectory& tr);
Trajectory trajectory_from_json_line(const std::string& line);
std::string task_to_json_line(const TaskSpec& task);
TaskSpec task_from_json_line(const std::string& line);
DemoDatabase parse_database(const std::string& text);

}  // namespace icd::store
