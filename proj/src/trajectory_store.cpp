#include "icd/trajectory_store.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace icd::store {

using ojson = nlohmann::ordered_json;

namespace {

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

ojson task_to_json(const TaskSpec& t) {
    ojson j;
    j["task_id"] = t.task_id;
    j["env_id"] = t.env_id;
    j["goal"] = t.goal;
    j["difficulty"] = t.difficulty ? ojson(*t.difficulty) : ojson(nullptr);
    return j;
}

TaskSpec task_from_json(const ojson& j) {
    TaskSpec t;
    t.task_id = j.at("task_id").get<std::string>();
    t.env_id = j.at("env_id").get<std::string>();
    t.goal = j.at("goal").get<std::string>();
    if (j.contains("difficulty") && !j.at("difficulty").is_null()) t.difficulty = j.at("difficulty").get<int>();
    return t;
}

ojson trajectory_to_json(const Trajectory& tr) {
    ojson j;
    j["kind"] = "trajectory";
    j["task"] = task_to_json(tr.task);
    j["plan"] = tr.plan;
    j["success"] = tr.success;
    j["source_model"] = tr.source_model;
    ojson steps = ojson::array();
    for (const auto& s : tr.steps) {
        ojson sj;
        sj["index"] = s.index;
        sj["observation"] = s.observation;
        sj["reasoning"] = s.reasoning;
        sj["action"] = s.action;
        steps.push_back(std::move(sj));
    }
    j["steps"] = std::move(steps);
    return j;
}

Trajectory trajectory_from_json(const ojson& j) {
    if (j.value("kind", "") != "trajectory") throw std::runtime_error("record kind is not 'trajectory'");
    Trajectory tr;
    tr.task = task_from_json(j.at("task"));
    tr.plan = j.at("plan").get<std::string>();
    tr.success = j.at("success").get<bool>();
    tr.source_model = j.at("source_model").get<std::string>();
    for (const auto& sj : j.at("steps")) {
        StepRecord s;
        s.index = sj.at("index").get<int>();
        s.observation = sj.at("observation").get<std::string>();
        s.reasoning = sj.at("reasoning").get<std::string>();
        s.action = sj.at("action").get<std::string>();
        tr.steps.push_back(std::move(s));
    }
    return tr;
}

}  // namespace

std::string trajectory_to_json_line(const Trajectory& tr) { return trajectory_to_json(tr).dump(); }

Trajectory trajectory_from_json_line(const std::string& line) {
    try {
        return trajectory_from_json(ojson::parse(line));
    } catch (const std::exception& e) {
        throw StoreError(std::string("unreadable trajectory record: ") + e.what());
    }
}

std::string task_to_json_line(const TaskSpec& task) { return task_to_json(task).dump(); }

TaskSpec task_from_json_line(const std::string& line) {
    try {
        return task_from_json(ojson::parse(line));
    } catch (const std::exception& e) {
        throw StoreError(std::string("unreadable task record: ") + e.what());
    }
}

std::vector<Violation> validate_task(const TaskSpec& task) {
    std::vector<Violation> v;
    if (blank(task.task_id)) v.push_back({"task.task_id", "must be non-empty"});
    if (blank(task.env_id)) v.push_back({"task.env_id", "must be non-empty"});
    if (blank(task.goal)) v.push_back({"task.goal", "must be non-empty"});
    if (task.difficulty && (*task.difficulty < 1 || *task.difficulty > 3))
        v.push_back({"task.difficulty", "must be 1, 2 or 3 (got " + std::to_string(*task.difficulty) + ")"});
    return v;
}

std::vector<Violation> validate_trajectory(const Trajectory& traj) {
    auto v = validate_task(traj.task);
    if (blank(traj.source_model)) v.push_back({"source_model", "must be non-empty"});
    if (traj.steps.empty()) v.push_back({"steps", "must contain at least one step"});
    std::set<int> seen;
    for (std::size_t i = 0; i < traj.steps.size(); ++i) {
        const auto& s = traj.steps[i];
        std::string where = "steps[" + std::to_string(i) + "]";
        if (!seen.insert(s.index).second)
            v.push_back({where + ".index", "duplicate step index " + std::to_string(s.index)});
        else if (s.index != static_cast<int>(i))
            v.push_back({where + ".index", "expected index " + std::to_string(i) + ", found " +
                                               std::to_string(s.index) + " at step " + std::to_string(i)});
        if (blank(s.action)) v.push_back({where + ".action", "empty action at step " + std::to_string(i)});
    }
    return v;
}

std::string describe(const std::vector<Violation>& violations) {
    std::ostringstream os;
    for (std::size_t i = 0; i < violations.size(); ++i) {
        if (i) os << "; ";
        os << violations[i].field << ": " << violations[i].message;
    }
    return os.str();
}

void DemoDatabase::append(Trajectory traj) {
    if (sealed_) throw SealedDatabaseError();
    auto v = validate_trajectory(traj);
    if (!v.empty()) throw ValidationError(std::move(v));
    trajectories_.push_back(std::move(traj));
}

Manifest& DemoDatabase::mutable_manifest() {
    if (sealed_) throw SealedDatabaseError();
    return manifest_;
}

std::vector<std::size_t> DemoDatabase::retrievable(bool include_failed) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < trajectories_.size(); ++i)
        if (include_failed || trajectories_[i].success) out.push_back(i);
    return out;
}

DemoDatabase DemoDatabase::subset(const std::vector<std::size_t>& indices) const {
    DemoDatabase out(manifest_);
    for (auto i : indices) out.trajectories_.push_back(trajectories_.at(i));
    out.sealed_ = true;
    return out;
}

std::uint64_t DemoDatabase::content_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : serialize_database(*this)) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string serialize_database(const DemoDatabase& db) {
    std::string out;
    ojson m;
    m["kind"] = "manifest";
    m["schema_version"] = db.manifest().schema_version;
    m["embedder_id"] = db.manifest().embedder_id;
    m["dimension"] = db.manifest().dimension;
    m["metadata"] = db.manifest().metadata;
    m["trajectories"] = db.size();
    out += m.dump() + "\n";
    for (const auto& tr : db.trajectories()) out += trajectory_to_json(tr).dump() + "\n";
    return out;
}

DemoDatabase parse_database(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw StoreError("database file is empty");
    ojson m;
    try {
        m = ojson::parse(line);
    } catch (const std::exception& e) {
        throw StoreError(std::string("unreadable manifest: ") + e.what());
    }
    if (m.value("kind", "") != "manifest") throw StoreError("first record is not a manifest");
    int version = m.value("schema_version", -1);
    if (version != kSchemaVersion) throw SchemaVersionError(version, kSchemaVersion);

    Manifest manifest;
    manifest.schema_version = version;
    manifest.embedder_id = m.value("embedder_id", "");
    manifest.dimension = m.value("dimension", 0);
    if (m.contains("metadata")) manifest.metadata = m.at("metadata").get<std::map<std::string, std::string>>();

    DemoDatabase db(std::move(manifest));
    std::size_t index = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Trajectory tr;
        try {
            tr = trajectory_from_json(ojson::parse(line));
        } catch (const std::exception& e) {
            throw CorruptRecordError(index, e.what());
        }
        auto v = validate_trajectory(tr);
        if (!v.empty()) throw CorruptRecordError(index, describe(v));
        db.append(std::move(tr));
        ++index;
    }
    if (m.contains("trajectories") && m.at("trajectories").get<std::size_t>() != index)
        throw CorruptRecordError(index, "manifest announces " + m.at("trajectories").dump() + " trajectories, found " +
                                            std::to_string(index));
    db.seal();
    return db;
}

void save_database(const DemoDatabase& db, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw StoreError("cannot write " + path.string());
    out << serialize_database(db);
    if (!out) throw StoreError("write failed: " + path.string());
}

DemoDatabase load_database(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StoreError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_database(ss.str());
}

}  // namespace icd::store
