#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "causeq/diagnostics.hpp"
#include "causeq/event_store.hpp"
#include "causeq/hawkes.hpp"
#include "causeq/learner.hpp"

namespace causeq {

struct AnalysisSnapshot {
    std::string id;
    // Milliseconds since the Unix epoch.
    std::int64_t created_at{0};
    Query query;
    // Type ids in the graph, feedback and model refer to graph.nodes.
    CausalGraph graph;
    std::vector<FeedbackSet> feedback_history;
    std::vector<DiagnosticsRecord> diagnostics;
    HawkesModel model;

    // Throws std::invalid_argument unless diagnostics iterations strictly increase.
    void validate() const;
};

class SnapshotNotFound : public std::runtime_error {
public:
    explicit SnapshotNotFound(const std::string& id) : std::runtime_error("unknown snapshot '" + id + "'") {}
};

// Append-only directory of snapshot-<id>.json files.
class SnapshotStore {
public:
    explicit SnapshotStore(std::filesystem::path directory);

    // Assigns the next id (and the current time when created_at is 0), writes
    // the file, and returns the stored snapshot.
    AnalysisSnapshot save(AnalysisSnapshot snapshot);
    AnalysisSnapshot load(const std::string& id) const;
    // Ids ordered by created_at, then id.
    std::vector<std::string> list() const;

    const std::filesystem::path& directory() const { return directory_; }

private:
    std::filesystem::path file_for(const std::string& id) const;

    std::filesystem::path directory_;
    mutable std::mutex mutex_;
};

enum class ComparisonCategory { only_first, only_second, both_diff, both_same, neither };

std::string to_string(ComparisonCategory category);

inline constexpr double kDefaultSameStrengthTolerance = 0.05;

// Strengths are >= 0; zero means no edge.
ComparisonCategory classify_strengths(double first, double second, double epsilon);

struct ComparisonCell {
    std::string cause;
    std::string effect;
    double strength_1{0.0};
    double strength_2{0.0};
    ComparisonCategory category{ComparisonCategory::neither};
};

struct Comparison {
    // Union of both vocabularies: the first snapshot's order, then new names.
    std::vector<std::string> nodes;
    double epsilon{kDefaultSameStrengthTolerance};
    // Row-major over nodes x nodes (cause, effect).
    std::vector<ComparisonCell> cells;

    const ComparisonCell& at(std::size_t cause, std::size_t effect) const { return cells[cause * nodes.size() + effect]; }
};

// Removed edges count as absent. Throws std::invalid_argument when the
// snapshots share no event type.
Comparison compare(const CausalGraph& first, const CausalGraph& second, double epsilon = kDefaultSameStrengthTolerance);
Comparison compare(const AnalysisSnapshot& first, const AnalysisSnapshot& second,
                   double epsilon = kDefaultSameStrengthTolerance);

}  // namespace causeq
