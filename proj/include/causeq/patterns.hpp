#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "causeq/event_store.hpp"
#include "causeq/hawkes.hpp"

namespace causeq {

// A->?, A->B, ?->B
enum class PatternCategory { cause_only, cause_effect, effect_only };

std::string to_string(PatternCategory category);
PatternCategory pattern_category_from_string(const std::string& text);

struct PatternQuery {
    TypeId cause{0};
    TypeId effect{0};
    double window{1.0};
    // Other direct causes of the effect, shown as anchors.
    std::vector<TypeId> potential_causes;

    // Throws std::invalid_argument if window <= 0 or the cause is listed as
    // a potential cause.
    void validate() const;
};

struct SubsequenceRow {
    std::string sequence_id;
    std::size_t sequence_index{0};
    PatternCategory category{PatternCategory::cause_only};
    // Time of the occurrence the anchors are measured from.
    double reference_time{0.0};
    // Presence per potential cause, in query order.
    std::vector<char> anchors;
    // Mean offset from reference_time per present anchor; 0 where absent.
    std::vector<double> anchor_times;

    friend bool operator==(const SubsequenceRow&, const SubsequenceRow&) = default;
};

struct AggregatedAnchor {
    TypeId cause{0};
    // Inclusive range of row positions.
    std::size_t row_start{0};
    std::size_t row_end{0};

    friend bool operator==(const AggregatedAnchor&, const AggregatedAnchor&) = default;
};

struct PatternSummary {
    std::vector<SubsequenceRow> rows;
    // Position of every row in the categorize() output.
    std::vector<std::size_t> order;
    std::map<PatternCategory, std::size_t> groups;
    std::vector<AggregatedAnchor> aggregates;
    // Potential causes by ascending mean offset.
    std::vector<TypeId> columns;
    // Min-max normalized score per non-empty category.
    std::map<PatternCategory, double> group_likelihood;
};

// One row per sequence containing the cause or the effect, in dataset order.
std::vector<SubsequenceRow> categorize(const Dataset& data, const PatternQuery& q);

// Share of rows carrying each anchor.
std::vector<double> anchor_coverage(const std::vector<SubsequenceRow>& rows);

// |w * (v_i - v_j)| over anchor presence vectors.
double row_distance(const SubsequenceRow& a, const SubsequenceRow& b, const std::vector<double>& weights);

// Sum of consecutive distances along an open path.
double path_cost(const std::vector<std::vector<double>>& distance, const std::vector<std::size_t>& path);

// Open-path TSP by simulated annealing from the identity order; never worse
// than the identity. Paths of two or fewer nodes are returned unchanged.
std::vector<std::size_t> anneal_path(const std::vector<std::vector<double>>& distance, std::uint64_t seed);

// Rows grouped cause_only, cause_effect, effect_only; each group annealed.
std::vector<std::size_t> order_rows(const std::vector<SubsequenceRow>& rows, const std::vector<double>& weights,
                                    std::uint64_t seed);

// Counts, maximal anchor runs, and column order of already ordered rows.
PatternSummary aggregate(const std::vector<SubsequenceRow>& ordered_rows, std::size_t num_potential_causes);

// Per category: mean over member sequences of the effect-type log-likelihood
// per effect event, min-max scaled across categories (all equal -> 0.5).
std::map<PatternCategory, double> group_likelihood(const HawkesModel& model, const Dataset& data,
                                                   const PatternQuery& q, const std::vector<SubsequenceRow>& rows);

// categorize, order_rows, aggregate and group_likelihood together.
PatternSummary summarize_patterns(const HawkesModel& model, const Dataset& data, const PatternQuery& q,
                                  std::uint64_t seed);

struct FlowStep {
    TypeId from{0};
    TypeId to{0};
    std::size_t continued{0};
    std::size_t dropped{0};

    friend bool operator==(const FlowStep&, const FlowStep&) = default;
};

struct PathFlow {
    // Sequences containing the first event of the path.
    std::size_t started{0};
    std::vector<FlowStep> steps;
};

// A sequence continues past step k if the path's first k+1 events occur in
// order with each gap in (0, window].
PathFlow causal_path_flow(const Dataset& data, const std::vector<TypeId>& path, double window);

}  // namespace causeq
