#include "causeq/learner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace causeq {

namespace {

// Parameter-independent sufficient statistics of a dataset under a kernel bank.
// For every event of effect type v, sums[cause * Z + z] accumulates
// kappa_z(t - t') over the earlier events t' of that cause; compensator holds
// the kernel integrals up to each horizon, summed per cause.
struct Design {
    std::size_t num_types{0};
    std::size_t num_kernels{0};
    double total_time{0.0};
    std::vector<double> compensator;
    std::vector<std::size_t> counts;
    std::vector<std::vector<double>> sums;

    std::size_t width() const { return num_types * num_kernels; }
};

Design build_design(const Dataset& data, const KernelBank& bank) {
    Design design;
    design.num_types = data.num_types();
    design.num_kernels = bank.size();
    design.total_time = data.total_time();
    const std::size_t width = design.width();
    const std::size_t Z = bank.size();
    design.compensator.assign(width, 0.0);
    design.counts.assign(design.num_types, 0);
    design.sums.assign(design.num_types, {});
    const double support = bank.support_end();

    std::vector<double> row(width);
    for (const auto& sequence : data.sequences) {
        const auto& events = sequence.events;
        std::size_t window_start = 0;
        for (std::size_t m = 0; m < events.size(); ++m) {
            const double t = events[m].time;
            while (window_start < m && t - events[window_start].time > support) ++window_start;
            std::fill(row.begin(), row.end(), 0.0);
            for (std::size_t k = window_start; k < m; ++k) {
                if (!(events[k].time < t)) break;
                const double lag = t - events[k].time;
                double* target = row.data() + events[k].type * Z;
                for (std::size_t z = 0; z < Z; ++z) target[z] += kernel_value(bank, z, lag);
            }
            auto& sums = design.sums[events[m].type];
            sums.insert(sums.end(), row.begin(), row.end());
            ++design.counts[events[m].type];
        }
        for (const auto& event : events) {
            const double remaining = sequence.horizon - event.time;
            for (std::size_t z = 0; z < Z; ++z)
                design.compensator[event.type * Z + z] += kernel_integral(bank, z, remaining);
        }
    }
    return design;
}

struct RowPenalty {
    double alpha{0.0};
    std::vector<char> exempt;  // confirmed causes
    std::vector<char> pinned;  // removed causes

    double weight(std::size_t cause) const { return exempt[cause] ? 0.0 : alpha; }
};

RowPenalty row_penalty(const FeedbackSet& feedback, std::size_t num_types, TypeId effect, double alpha) {
    RowPenalty penalty;
    penalty.alpha = alpha;
    penalty.exempt.assign(num_types, 0);
    penalty.pinned.assign(num_types, 0);
    for (const auto& [cause, target] : feedback.confirmed())
        if (target == effect && cause < num_types) penalty.exempt[cause] = 1;
    for (const auto& [cause, target] : feedback.removed())
        if (target == effect && cause < num_types) penalty.pinned[cause] = 1;
    return penalty;
}

struct RowState {
    double mu{0.0};
    std::vector<double> a;  // cause * Z + z
};

struct RowStats {
    double objective{0.0};
    double baseline_share{0.0};
    std::vector<double> shares;  // responsibility sums, cause * Z + z
};

double group_norm(const std::vector<double>& a, std::size_t cause, std::size_t Z) {
    double sum = 0.0;
    for (std::size_t z = 0; z < Z; ++z) sum += a[cause * Z + z] * a[cause * Z + z];
    return std::sqrt(sum);
}

double row_penalty_value(const RowState& state, const RowPenalty& penalty, std::size_t V, std::size_t Z) {
    double total = 0.0;
    for (std::size_t cause = 0; cause < V; ++cause) {
        const double weight = penalty.weight(cause);
        if (weight > 0.0) total += weight * group_norm(state.a, cause, Z);
    }
    return total;
}

// Penalized row objective at `state`, plus E-step responsibilities when asked.
RowStats e_step(const Design& design, TypeId v, const RowState& state, const RowPenalty& penalty,
                bool with_shares) {
    const std::size_t width = design.width();
    RowStats stats;
    if (with_shares) stats.shares.assign(width, 0.0);
    const auto& sums = design.sums[v];
    double log_terms = 0.0;
    for (std::size_t m = 0; m < design.counts[v]; ++m) {
        const double* k = sums.data() + m * width;
        double lambda = state.mu;
        for (std::size_t j = 0; j < width; ++j) lambda += state.a[j] * k[j];
        if (!(lambda > 0.0)) {
            stats.objective = std::numeric_limits<double>::infinity();
            return stats;
        }
        log_terms += std::log(lambda);
        if (with_shares) {
            stats.baseline_share += state.mu / lambda;
            for (std::size_t j = 0; j < width; ++j)
                if (state.a[j] != 0.0) stats.shares[j] += state.a[j] * k[j] / lambda;
        }
    }
    double compensator = state.mu * design.total_time;
    for (std::size_t j = 0; j < width; ++j) compensator += state.a[j] * design.compensator[j];
    stats.objective =
        -log_terms + compensator + row_penalty_value(state, penalty, design.num_types, design.num_kernels);
    return stats;
}

// argmin over a >= 0 of sum_z (-P_z log a_z + G_z a_z) + alpha * ||a||_2.
// For a fixed norm r the stationarity conditions give a_z(r) in closed form;
// ||a(r)|| / r is strictly decreasing, so the norm solves a 1-D root problem.
void penalized_group_update(const double* P, const double* G, std::size_t Z, double alpha, double* out) {
    bool any = false;
    for (std::size_t z = 0; z < Z; ++z) any = any || P[z] > 0.0;
    if (!any) {
        std::fill(out, out + Z, 0.0);
        return;
    }
    if (alpha == 0.0) {
        for (std::size_t z = 0; z < Z; ++z) out[z] = P[z] > 0.0 && G[z] > 0.0 ? P[z] / G[z] : 0.0;
        return;
    }
    auto coefficients = [&](double r, double* target) {
        double norm = 0.0;
        for (std::size_t z = 0; z < Z; ++z) {
            double value = 0.0;
            if (P[z] > 0.0) value = 2.0 * P[z] / (G[z] + std::sqrt(G[z] * G[z] + 4.0 * alpha * P[z] / r));
            target[z] = value;
            norm += value * value;
        }
        return std::sqrt(norm);
    };
    std::vector<double> scratch(Z);
    double hi = 0.0;
    for (std::size_t z = 0; z < Z; ++z)
        if (P[z] > 0.0 && G[z] > 0.0) hi += (P[z] / G[z]) * (P[z] / G[z]);
    hi = hi > 0.0 ? std::sqrt(hi) : 1.0;
    for (int i = 0; i < 2000 && coefficients(hi, scratch.data()) >= hi; ++i) hi *= 2.0;
    double lo = hi;
    for (int i = 0; i < 4000 && coefficients(lo, scratch.data()) <= lo; ++i) lo *= 0.5;
    for (int i = 0; i < 200; ++i) {
        const double mid = std::sqrt(lo * hi);
        if (!(mid > lo && mid < hi)) break;
        if (coefficients(mid, scratch.data()) > mid)
            lo = mid;
        else
            hi = mid;
    }
    coefficients(std::sqrt(lo * hi), out);
}

RowState m_step(const Design& design, const RowStats& stats, const RowPenalty& penalty, bool& floor_hit) {
    const std::size_t V = design.num_types;
    const std::size_t Z = design.num_kernels;
    RowState next;
    next.a.assign(design.width(), 0.0);
    const double mu = design.total_time > 0.0 ? stats.baseline_share / design.total_time : 0.0;
    floor_hit = mu < kBaselineFloor;
    next.mu = std::max(mu, kBaselineFloor);
    for (std::size_t cause = 0; cause < V; ++cause) {
        if (penalty.pinned[cause]) continue;
        penalized_group_update(stats.shares.data() + cause * Z, design.compensator.data() + cause * Z, Z,
                               penalty.weight(cause), next.a.data() + cause * Z);
    }
    return next;
}

// Block-exact treatment of each group at the origin (group soft-threshold).
void proximal_pass(const Design& design, TypeId v, RowState& state, const RowPenalty& penalty) {
    const std::size_t V = design.num_types;
    const std::size_t Z = design.num_kernels;
    const std::size_t width = design.width();
    const std::size_t n = design.counts[v];
    const auto& sums = design.sums[v];

    std::vector<double> lambda(n);
    for (std::size_t m = 0; m < n; ++m) {
        const double* k = sums.data() + m * width;
        double value = state.mu;
        for (std::size_t j = 0; j < width; ++j) value += state.a[j] * k[j];
        lambda[m] = value;
    }

    std::vector<double> own(n), excess(Z), direction(Z), along(n);
    for (std::size_t cause = 0; cause < V; ++cause) {
        if (penalty.pinned[cause]) continue;
        const double weight = penalty.weight(cause);
        double* a = state.a.data() + cause * Z;
        const double* G = design.compensator.data() + cause * Z;
        const bool nonzero = group_norm(state.a, cause, Z) > 0.0;

        // Gradient of the likelihood part at a_group = 0, others fixed.
        std::vector<double> score(Z, 0.0);
        bool usable = true;
        for (std::size_t m = 0; m < n; ++m) {
            const double* k = sums.data() + m * width + cause * Z;
            double contribution = 0.0;
            for (std::size_t z = 0; z < Z; ++z) contribution += a[z] * k[z];
            own[m] = contribution;
            const double rest = lambda[m] - contribution;
            if (!(rest > 0.0)) {
                usable = false;
                break;
            }
            for (std::size_t z = 0; z < Z; ++z) score[z] += k[z] / rest;
        }
        if (!usable) continue;
        double norm = 0.0;
        for (std::size_t z = 0; z < Z; ++z) {
            excess[z] = std::max(0.0, score[z] - G[z]);
            norm += excess[z] * excess[z];
        }
        norm = std::sqrt(norm);

        if (nonzero) {
            if (norm <= weight) {
                for (std::size_t m = 0; m < n; ++m) lambda[m] -= own[m];
                std::fill(a, a + Z, 0.0);
            }
            continue;
        }
        if (norm <= weight || norm == 0.0) continue;

        // Revive along the projected descent direction with an exact line search.
        double slope_mass = 0.0;
        for (std::size_t z = 0; z < Z; ++z) {
            direction[z] = excess[z] / norm;
            slope_mass += direction[z] * G[z];
        }
        for (std::size_t m = 0; m < n; ++m) {
            const double* k = sums.data() + m * width + cause * Z;
            double value = 0.0;
            for (std::size_t z = 0; z < Z; ++z) value += direction[z] * k[z];
            along[m] = value;
        }
        auto derivative = [&](double t) {
            double value = slope_mass + weight;
            for (std::size_t m = 0; m < n; ++m)
                if (along[m] != 0.0) value -= along[m] / (lambda[m] + t * along[m]);
            return value;
        };
        double hi = 1e-8;
        int expansions = 0;
        while (derivative(hi) < 0.0 && expansions < 200) {
            hi *= 2.0;
            ++expansions;
        }
        if (derivative(hi) < 0.0) continue;
        double lo = 0.0;
        for (int i = 0; i < 200; ++i) {
            const double mid = 0.5 * (lo + hi);
            if (!(mid > lo && mid < hi)) break;
            if (derivative(mid) < 0.0)
                lo = mid;
            else
                hi = mid;
        }
        const double step = 0.5 * (lo + hi);
        if (!(step > 0.0)) continue;
        for (std::size_t z = 0; z < Z; ++z) a[z] = step * direction[z];
        for (std::size_t m = 0; m < n; ++m) lambda[m] += step * along[m];
    }
}

RowState row_from_model(const HawkesModel& model, TypeId v) {
    RowState state;
    state.mu = model.mu(v);
    const std::size_t V = model.num_types();
    const std::size_t Z = model.num_kernels();
    state.a.resize(V * Z);
    for (std::size_t cause = 0; cause < V; ++cause)
        for (std::size_t z = 0; z < Z; ++z) state.a[cause * Z + z] = model.a(v, cause, z);
    return state;
}

void row_into_model(const RowState& state, TypeId v, HawkesModel& model) {
    model.mu(v) = state.mu;
    const std::size_t V = model.num_types();
    const std::size_t Z = model.num_kernels();
    for (std::size_t cause = 0; cause < V; ++cause)
        for (std::size_t z = 0; z < Z; ++z) model.a(v, cause, z) = state.a[cause * Z + z];
}

struct StepOutcome {
    RowStats stats;
    bool accepted{false};
    bool floor_hit{false};
};

// One guarded EM iteration for a row; `stats` must hold the current E-step.
StepOutcome row_iteration(const Design& design, TypeId v, RowState& state, const RowStats& stats,
                          const RowPenalty& penalty) {
    StepOutcome outcome;
    RowState candidate = m_step(design, stats, penalty, outcome.floor_hit);
    proximal_pass(design, v, candidate, penalty);
    RowStats next = e_step(design, v, candidate, penalty, true);
    // Exact arithmetic guarantees descent; this only screens out rounding.
    if (next.objective <= stats.objective) {
        state = std::move(candidate);
        outcome.stats = std::move(next);
        outcome.accepted = true;
    } else {
        outcome.stats = stats;
    }
    return outcome;
}

struct RowRun {
    RowState state;
    std::vector<double> trace;
    std::size_t iterations{0};
    bool converged{false};
    bool floor_hit{false};
};

RowRun solve_row(const Design& design, TypeId v, RowState state, const RowPenalty& penalty,
                 const FitConfig& config) {
    RowRun run;
    for (std::size_t cause = 0; cause < design.num_types; ++cause)
        if (penalty.pinned[cause])
            std::fill(state.a.begin() + cause * design.num_kernels,
                      state.a.begin() + (cause + 1) * design.num_kernels, 0.0);
    RowStats stats = e_step(design, v, state, penalty, true);
    run.trace.push_back(stats.objective);
    for (std::size_t iter = 0; iter < config.max_iters; ++iter) {
        const double previous = stats.objective;
        auto outcome = row_iteration(design, v, state, stats, penalty);
        ++run.iterations;
        run.floor_hit = run.floor_hit || outcome.floor_hit;
        if (!outcome.accepted) {
            run.trace.push_back(previous);
            run.converged = true;
            break;
        }
        stats = std::move(outcome.stats);
        run.trace.push_back(stats.objective);
        const double scale = std::max(std::abs(previous), std::numeric_limits<double>::min());
        if (std::isfinite(previous) && (previous - stats.objective) / scale < config.tol) {
            run.converged = true;
            break;
        }
    }
    run.state = std::move(state);
    return run;
}

void check_compatible(const HawkesModel& model, const Dataset& data) {
    if (model.num_types() != data.num_types())
        throw std::invalid_argument("model and dataset vocabularies differ in size");
}

void check_feedback(const FeedbackSet& feedback, std::size_t num_types) {
    for (const auto* pairs : {&feedback.confirmed(), &feedback.removed()})
        for (const auto& [cause, effect] : *pairs)
            if (cause >= num_types || effect >= num_types)
                throw std::invalid_argument("feedback references an unknown event type");
}

FitResult run_fit(const Dataset& data, HawkesModel model, const FeedbackSet& feedback, double alpha,
                  const FitConfig& config) {
    const Design design = build_design(data, model.kernels());
    const std::size_t V = model.num_types();
    std::vector<RowRun> runs;
    runs.reserve(V);
    for (TypeId v = 0; v < V; ++v) {
        runs.push_back(solve_row(design, v, row_from_model(model, v),
                                 row_penalty(feedback, V, v, alpha), config));
    }

    FitResult result;
    auto& report = result.report;
    std::size_t longest = 0;
    for (const auto& run : runs) longest = std::max(longest, run.trace.size());
    report.objective_trace.assign(longest, 0.0);
    report.converged = true;
    for (TypeId v = 0; v < V; ++v) {
        const auto& run = runs[v];
        for (std::size_t k = 0; k < longest; ++k)
            report.objective_trace[k] += run.trace[std::min(k, run.trace.size() - 1)];
        report.iterations_run = std::max(report.iterations_run, run.iterations);
        report.converged = report.converged && run.converged;
        if (run.floor_hit)
            report.warnings.push_back("baseline floor applied to event type '" + data.vocabulary[v] + "'");
        row_into_model(run.state, v, model);
    }
    const auto ll = log_likelihood(model, data);
    report.final_nll = ll.degenerate ? std::numeric_limits<double>::infinity() : -ll.value;
    if (!report.converged)
        report.warnings.push_back("stopped at max_iters before reaching the tolerance");
    result.model = std::move(model);
    return result;
}

HawkesModel initial_model(const Dataset& data, const KernelBank& kernels) {
    const std::size_t V = data.num_types();
    HawkesModel model(V, kernels);
    const double total_time = data.total_time();
    std::vector<double> counts(V, 0.0);
    for (const auto& sequence : data.sequences)
        for (const auto& event : sequence.events) counts[event.type] += 1.0;
    const double init = 0.1 / static_cast<double>(kernels.size());
    for (TypeId v = 0; v < V; ++v) {
        model.mu(v) = std::max(total_time > 0.0 ? counts[v] / total_time : 0.0, kBaselineFloor);
        for (TypeId cause = 0; cause < V; ++cause)
            for (auto& value : model.group(v, cause)) value = init;
    }
    return model;
}

void check_fit_inputs(const Dataset& data, const FitConfig& config) {
    config.validate();
    if (data.sequences.empty()) throw std::invalid_argument("cannot fit an empty dataset");
    if (data.num_types() == 0) throw std::invalid_argument("cannot fit a dataset without event types");
    if (!(data.total_time() > 0.0)) throw std::invalid_argument("dataset spans no time");
}

}  // namespace

void FitConfig::validate() const {
    if (max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
    if (!(tol > 0.0)) throw std::invalid_argument("tol must be > 0");
    if (!(alpha >= 0.0) || !(alpha_u >= 0.0)) throw std::invalid_argument("penalty weights must be >= 0");
}

FeedbackSet::FeedbackSet(std::set<TypePair> confirmed, std::set<TypePair> removed)
    : confirmed_(std::move(confirmed)), removed_(std::move(removed)) {
    for (const auto& pair : confirmed_)
        if (removed_.count(pair)) throw std::invalid_argument("a pair cannot be both confirmed and removed");
}

void FeedbackSet::confirm(TypePair pair) {
    removed_.erase(pair);
    confirmed_.insert(pair);
}

void FeedbackSet::remove(TypePair pair) {
    confirmed_.erase(pair);
    removed_.insert(pair);
}

void FeedbackSet::merge(const FeedbackSet& newer) {
    for (const auto& pair : newer.confirmed()) confirm(pair);
    for (const auto& pair : newer.removed()) remove(pair);
}

double penalized_objective(const HawkesModel& model, const Dataset& data, double alpha,
                           const FeedbackSet& feedback) {
    check_compatible(model, data);
    const auto ll = log_likelihood(model, data);
    if (ll.degenerate) return std::numeric_limits<double>::infinity();
    double penalty = 0.0;
    for (TypeId effect = 0; effect < model.num_types(); ++effect)
        for (TypeId cause = 0; cause < model.num_types(); ++cause)
            if (!feedback.is_confirmed(cause, effect)) penalty += model.group_norm(effect, cause);
    return -ll.value + alpha * penalty;
}

FitResult fit(const Dataset& data, const FitConfig& config, const KernelBank& kernels) {
    check_fit_inputs(data, config);
    kernels.validate();
    return run_fit(data, initial_model(data, kernels), FeedbackSet{}, config.alpha, config);
}

FitResult refit_with_feedback(const Dataset& data, const HawkesModel& prior, const FeedbackSet& feedback,
                              const FitConfig& config) {
    check_fit_inputs(data, config);
    check_compatible(prior, data);
    check_feedback(feedback, prior.num_types());
    prior.validate();
    HawkesModel start = prior;
    for (TypeId v = 0; v < start.num_types(); ++v) start.mu(v) = std::max(start.mu(v), kBaselineFloor);
    return run_fit(data, std::move(start), feedback, config.alpha_u, config);
}

HawkesModel em_step(const HawkesModel& model, const Dataset& data, const FitConfig& config,
                    const FeedbackSet& feedback) {
    config.validate();
    check_compatible(model, data);
    check_feedback(feedback, model.num_types());
    const Design design = build_design(data, model.kernels());
    HawkesModel next = model;
    for (TypeId v = 0; v < model.num_types(); ++v) {
        const auto penalty = row_penalty(feedback, model.num_types(), v, config.alpha);
        RowState state = row_from_model(model, v);
        state.mu = std::max(state.mu, kBaselineFloor);
        for (std::size_t cause = 0; cause < model.num_types(); ++cause)
            if (penalty.pinned[cause])
                std::fill(state.a.begin() + cause * design.num_kernels,
                          state.a.begin() + (cause + 1) * design.num_kernels, 0.0);
        const RowStats stats = e_step(design, v, state, penalty, true);
        row_iteration(design, v, state, stats, penalty);
        row_into_model(state, v, next);
    }
    return next;
}

EffectTypeFit fit_effect_type(const Dataset& data, const FitConfig& config, const KernelBank& kernels,
                              TypeId effect) {
    check_fit_inputs(data, config);
    if (effect >= data.num_types()) throw std::invalid_argument("unknown effect type");
    const HawkesModel init = initial_model(data, kernels);
    const Design design = build_design(data, kernels);
    auto run = solve_row(design, effect, row_from_model(init, effect),
                         row_penalty(FeedbackSet{}, data.num_types(), effect, config.alpha), config);
    EffectTypeFit result;
    result.mu = run.state.mu;
    result.coefficients = std::move(run.state.a);
    result.iterations = run.iterations;
    result.converged = run.converged;
    return result;
}

double default_coverage_window(const KernelBank& kernels) {
    return kernels.centers.back() + 2.0 * kernels.sigma;
}

CausalGraph extract_graph(const HawkesModel& model, const Dataset& data, double strength_threshold,
                          double coverage_window) {
    check_compatible(model, data);
    if (coverage_window <= 0.0) coverage_window = default_coverage_window(model.kernels());
    CausalGraph graph;
    graph.nodes = data.vocabulary;
    for (TypeId cause = 0; cause < model.num_types(); ++cause) {
        for (TypeId effect = 0; effect < model.num_types(); ++effect) {
            const double strength = model.strength(effect, cause);
            if (!(strength > strength_threshold)) continue;
            CausalEdge edge;
            edge.cause = cause;
            edge.effect = effect;
            edge.strength = strength;
            edge.coverage = event_coverage_for_edge(data, cause, effect, coverage_window);
            graph.edges.push_back(edge);
        }
    }
    return graph;
}

void apply_feedback(CausalGraph& graph, const FeedbackSet& feedback, const HawkesModel& model,
                    const Dataset& data, double coverage_window) {
    if (coverage_window <= 0.0) coverage_window = default_coverage_window(model.kernels());
    for (auto& edge : graph.edges) {
        edge.confirmed = feedback.is_confirmed(edge.cause, edge.effect);
        edge.removed = feedback.is_removed(edge.cause, edge.effect);
    }
    for (const auto& [cause, effect] : feedback.confirmed()) {
        if (graph.find(cause, effect)) continue;
        CausalEdge edge;
        edge.cause = cause;
        edge.effect = effect;
        edge.strength = model.strength(effect, cause);
        edge.coverage = event_coverage_for_edge(data, cause, effect, coverage_window);
        edge.confirmed = true;
        graph.edges.push_back(edge);
    }
}

}  // namespace causeq
