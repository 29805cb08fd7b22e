#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "causeq/event_store.hpp"
#include "causeq/hawkes.hpp"

namespace causeq {

struct FitConfig {
    // Group-lasso weight of the initial fit.
    double alpha{1.0};
    // Group-lasso weight used when retraining on feedback.
    double alpha_u{1.0};
    std::size_t max_iters{200};
    // Relative change of the penalized objective that stops the iteration.
    double tol{1e-6};
    std::uint64_t seed{0};

    void validate() const;
};

// (cause, effect)
using TypePair = std::pair<TypeId, TypeId>;

class FeedbackSet {
public:
    FeedbackSet() = default;
    // Throws std::invalid_argument if a pair is in both sets.
    FeedbackSet(std::set<TypePair> confirmed, std::set<TypePair> removed);

    const std::set<TypePair>& confirmed() const { return confirmed_; }
    const std::set<TypePair>& removed() const { return removed_; }
    bool is_confirmed(TypeId cause, TypeId effect) const { return confirmed_.count({cause, effect}) > 0; }
    bool is_removed(TypeId cause, TypeId effect) const { return removed_.count({cause, effect}) > 0; }
    bool empty() const { return confirmed_.empty() && removed_.empty(); }

    // Later feedback wins: confirming a removed pair un-removes it and vice versa.
    void confirm(TypePair pair);
    void remove(TypePair pair);
    void merge(const FeedbackSet& newer);

    friend bool operator==(const FeedbackSet&, const FeedbackSet&) = default;

private:
    std::set<TypePair> confirmed_;
    std::set<TypePair> removed_;
};

struct FitReport {
    // Penalized objective after initialization and after every iteration.
    std::vector<double> objective_trace;
    std::size_t iterations_run{0};
    bool converged{false};
    double final_nll{0.0};
    std::vector<std::string> warnings;
};

struct FitResult {
    HawkesModel model;
    FitReport report;
};

inline constexpr double kBaselineFloor = 1e-10;
inline constexpr double kDefaultStrengthThreshold = 1e-4;

// -L + alpha * sum of group norms over unconfirmed pairs. Removed pairs are
// expected to be zero already; +infinity for a degenerate likelihood.
double penalized_objective(const HawkesModel& model, const Dataset& data, double alpha,
                           const FeedbackSet& feedback = {});

// Penalized maximum likelihood with weight config.alpha, from the Poisson warm start.
FitResult fit(const Dataset& data, const FitConfig& config, const KernelBank& kernels);

// Retrains from `prior` with weight config.alpha_u: removed pairs pinned at zero,
// confirmed pairs exempt from the penalty.
FitResult refit_with_feedback(const Dataset& data, const HawkesModel& prior, const FeedbackSet& feedback,
                              const FitConfig& config);

// One EM iteration at penalty config.alpha:
//  1. E-step: split every event between the baseline and each earlier event/kernel.
//  2. M-step: closed-form baselines; each coefficient group minimizes its
//     penalized surrogate exactly (confirmed groups drop the penalty).
//  3. Proximal pass: a group whose block optimum is zero (group soft-threshold
//     at the origin) is zeroed; a zero group whose origin violates optimality
//     is revived by an exact line search. Removed groups are projected to zero.
// The penalized objective never increases.
HawkesModel em_step(const HawkesModel& model, const Dataset& data, const FitConfig& config,
                    const FeedbackSet& feedback = {});

struct EffectTypeFit {
    double mu{0.0};
    // a[v][cause][z] for the fitted effect type v, flattened cause-major.
    std::vector<double> coefficients;
    std::size_t iterations{0};
    bool converged{false};
};

// Fits the parameters of a single effect type. The likelihood separates over
// effect types, so fit() is exactly the stack of these solutions.
EffectTypeFit fit_effect_type(const Dataset& data, const FitConfig& config, const KernelBank& kernels,
                              TypeId effect);

// Edges whose strength exceeds the threshold, annotated with event coverage.
CausalGraph extract_graph(const HawkesModel& model, const Dataset& data,
                          double strength_threshold = kDefaultStrengthThreshold, double coverage_window = 0.0);

// Coverage window used when none is given: last kernel center + 2 sigma.
double default_coverage_window(const KernelBank& kernels);

// Marks confirmed/removed edges. Confirmed pairs missing from the graph are
// added with their model strength so they stay visible.
void apply_feedback(CausalGraph& graph, const FeedbackSet& feedback, const HawkesModel& model,
                    const Dataset& data, double coverage_window);

}  // namespace causeq
