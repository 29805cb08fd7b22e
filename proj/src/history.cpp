#include "causeq/history.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "causeq/serialization.hpp"

namespace causeq {

namespace fs = std::filesystem;

namespace {

constexpr const char* kPrefix = "snapshot-";
constexpr const char* kSuffix = ".json";

bool parse_file_id(const fs::path& file, std::string& id) {
    const std::string name = file.filename().string();
    const std::string prefix = kPrefix, suffix = kSuffix;
    if (name.size() <= prefix.size() + suffix.size()) return false;
    if (name.compare(0, prefix.size(), prefix) != 0) return false;
    if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) return false;
    id = name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
    return true;
}

bool valid_id(const std::string& id) {
    return !id.empty() && std::all_of(id.begin(), id.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::int64_t now_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

std::map<std::string, double> live_strengths(const CausalGraph& graph) {
    std::map<std::string, double> out;
    for (const auto& e : graph.edges) {
        if (e.removed || e.strength <= 0.0) continue;
        out[graph.nodes[e.cause] + '\n' + graph.nodes[e.effect]] = e.strength;
    }
    return out;
}

}  // namespace

void AnalysisSnapshot::validate() const {
    for (std::size_t i = 1; i < diagnostics.size(); ++i)
        if (diagnostics[i].iteration <= diagnostics[i - 1].iteration)
            throw std::invalid_argument("snapshot diagnostics iterations must strictly increase");
    graph.validate();
    model.validate();
    if (model.num_types() != graph.nodes.size())
        throw std::invalid_argument("snapshot model and graph disagree on the number of types");
}

SnapshotStore::SnapshotStore(fs::path directory) : directory_(std::move(directory)) {
    fs::create_directories(directory_);
}

fs::path SnapshotStore::file_for(const std::string& id) const { return directory_ / (kPrefix + id + kSuffix); }

AnalysisSnapshot SnapshotStore::save(AnalysisSnapshot snapshot) {
    snapshot.validate();
    std::lock_guard lock(mutex_);
    unsigned long long next = 1;
    for (const auto& entry : fs::directory_iterator(directory_)) {
        std::string id;
        if (!parse_file_id(entry.path(), id) || !valid_id(id)) continue;
        next = std::max(next, std::stoull(id) + 1);
    }
    char buffer[32];
    std::snprintf(buffer, sizeof buffer, "%06llu", next);
    snapshot.id = buffer;
    if (snapshot.created_at == 0) snapshot.created_at = now_ms();

    const fs::path target = file_for(snapshot.id);
    const fs::path temp = target.string() + ".tmp";
    {
        std::ofstream out(temp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write snapshot to " + temp.string());
        out << snapshot_to_json(snapshot).dump(2) << '\n';
        if (!out) throw std::runtime_error("cannot write snapshot to " + temp.string());
    }
    fs::rename(temp, target);
    return snapshot;
}

AnalysisSnapshot SnapshotStore::load(const std::string& id) const {
    if (!valid_id(id)) throw SnapshotNotFound(id);
    std::lock_guard lock(mutex_);
    std::ifstream in(file_for(id), std::ios::binary);
    if (!in) throw SnapshotNotFound(id);
    std::stringstream text;
    text << in.rdbuf();
    json j;
    try {
        j = json::parse(text.str());
    } catch (const json::exception& e) {
        throw std::runtime_error("corrupt snapshot '" + id + "': " + e.what());
    }
    return snapshot_from_json(j);
}

std::vector<std::string> SnapshotStore::list() const {
    std::vector<std::pair<std::int64_t, std::string>> found;
    {
        std::lock_guard lock(mutex_);
        for (const auto& entry : fs::directory_iterator(directory_)) {
            std::string id;
            if (!parse_file_id(entry.path(), id) || !valid_id(id)) continue;
            std::ifstream in(entry.path(), std::ios::binary);
            std::stringstream text;
            text << in.rdbuf();
            const json j = json::parse(text.str(), nullptr, false);
            if (j.is_discarded() || !j.contains("created_at")) continue;
            found.emplace_back(j["created_at"].get<std::int64_t>(), id);
        }
    }
    std::sort(found.begin(), found.end());
    std::vector<std::string> ids;
    for (auto& f : found) ids.push_back(std::move(f.second));
    return ids;
}

std::string to_string(ComparisonCategory category) {
    switch (category) {
        case ComparisonCategory::only_first: return "only_first";
        case ComparisonCategory::only_second: return "only_second";
        case ComparisonCategory::both_diff: return "both_diff";
        case ComparisonCategory::both_same: return "both_same";
        case ComparisonCategory::neither: return "neither";
    }
    return "neither";
}

ComparisonCategory classify_strengths(double first, double second, double epsilon) {
    const bool in_first = first > 0.0;
    const bool in_second = second > 0.0;
    if (in_first && !in_second) return ComparisonCategory::only_first;
    if (!in_first && in_second) return ComparisonCategory::only_second;
    if (!in_first && !in_second) return ComparisonCategory::neither;
    return std::abs(first - second) <= epsilon * std::max(first, second) ? ComparisonCategory::both_same
                                                                         : ComparisonCategory::both_diff;
}

Comparison compare(const CausalGraph& first, const CausalGraph& second, double epsilon) {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("epsilon must be finite and >= 0");
    Comparison out;
    out.epsilon = epsilon;
    out.nodes = first.nodes;
    bool shared = false;
    for (const auto& name : second.nodes) {
        if (std::find(first.nodes.begin(), first.nodes.end(), name) != first.nodes.end())
            shared = true;
        else
            out.nodes.push_back(name);
    }
    if (!shared) throw std::invalid_argument("snapshots share no event type");

    const auto s1 = live_strengths(first);
    const auto s2 = live_strengths(second);
    const auto lookup = [](const std::map<std::string, double>& m, const std::string& key) {
        const auto it = m.find(key);
        return it == m.end() ? 0.0 : it->second;
    };
    out.cells.reserve(out.nodes.size() * out.nodes.size());
    for (const auto& cause : out.nodes) {
        for (const auto& effect : out.nodes) {
            ComparisonCell cell;
            cell.cause = cause;
            cell.effect = effect;
            const std::string key = cause + '\n' + effect;
            cell.strength_1 = lookup(s1, key);
            cell.strength_2 = lookup(s2, key);
            cell.category = classify_strengths(cell.strength_1, cell.strength_2, epsilon);
            out.cells.push_back(std::move(cell));
        }
    }
    return out;
}

Comparison compare(const AnalysisSnapshot& first, const AnalysisSnapshot& second, double epsilon) {
    return compare(first.graph, second.graph, epsilon);
}

}  // namespace causeq
