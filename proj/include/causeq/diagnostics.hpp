#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "causeq/event_store.hpp"
#include "causeq/hawkes.hpp"
#include "causeq/learner.hpp"

namespace causeq {

enum class BicChange { first, improved, worsened, unchanged };

std::string to_string(BicChange change);
BicChange bic_change_from_string(const std::string& text);

struct DiagnosticsRecord {
    std::size_t iteration{0};
    double nll_mean{0.0};
    double nll_std{0.0};
    double bic{0.0};
    BicChange delta_bic_sign{BicChange::first};
    double p_value{1.0};
    std::optional<double> auroc;
    // Total log-likelihood and parameter count, kept for the next p-value.
    double log_likelihood{0.0};
    std::size_t num_parameters{0};

    friend bool operator==(const DiagnosticsRecord&, const DiagnosticsRecord&) = default;
};

// adjacency[cause * V + effect]
class GroundTruthGraph {
public:
    GroundTruthGraph() = default;
    explicit GroundTruthGraph(std::size_t num_types) : num_types_(num_types), adjacency_(num_types * num_types, 0) {}

    // Edges of every group with a nonzero coefficient.
    static GroundTruthGraph from_model(const HawkesModel& model);

    std::size_t num_types() const { return num_types_; }
    bool edge(TypeId cause, TypeId effect) const { return adjacency_[cause * num_types_ + effect] != 0; }
    void set_edge(TypeId cause, TypeId effect, bool present = true) {
        adjacency_[cause * num_types_ + effect] = present ? 1 : 0;
    }
    std::size_t num_edges() const;

private:
    std::size_t num_types_{0};
    std::vector<char> adjacency_;
};

// Mann-Whitney AUROC, ties counted as one half. Empty when a class is empty.
std::optional<double> auroc(const std::vector<double>& scores, const std::vector<bool>& labels);

DiagnosticsRecord evaluate(const HawkesModel& model, const Dataset& data,
                           const std::optional<DiagnosticsRecord>& previous = std::nullopt,
                           const std::optional<GroundTruthGraph>& truth = std::nullopt,
                           const std::set<TypePair>& exclude = {});

class UnstableModelError : public std::invalid_argument {
public:
    explicit UnstableModelError(double radius);
    double spectral_radius() const { return radius_; }

private:
    double radius_;
};

// Spectral radius of the matrix of total kernel masses sum_z a[effect][cause][z].
double spectral_radius(const HawkesModel& model);

// Ogata thinning. Sequence ids are "s<k>"; names default to "e<v>".
Dataset simulate(const HawkesModel& truth, std::size_t num_sequences, double horizon, std::uint64_t seed,
                 std::vector<std::string> vocabulary = {});

// Baseline fit followed by k_iters refits, each confirming the strongest
// still-unconfirmed true edge. Returns k_iters + 1 records.
std::vector<DiagnosticsRecord> scripted_feedback_experiment(const Dataset& data, const GroundTruthGraph& truth,
                                                            const FitConfig& config, std::size_t k_iters,
                                                            const std::optional<KernelBank>& kernels = std::nullopt);

}  // namespace causeq
