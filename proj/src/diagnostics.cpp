#include "causeq/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/chi_squared.hpp>

namespace causeq {

std::string to_string(BicChange change) {
    switch (change) {
        case BicChange::first: return "first";
        case BicChange::improved: return "improved";
        case BicChange::worsened: return "worsened";
        case BicChange::unchanged: return "unchanged";
    }
    return "first";
}

BicChange bic_change_from_string(const std::string& text) {
    if (text == "first") return BicChange::first;
    if (text == "improved") return BicChange::improved;
    if (text == "worsened") return BicChange::worsened;
    if (text == "unchanged") return BicChange::unchanged;
    throw std::invalid_argument("unknown BIC change '" + text + "'");
}

GroundTruthGraph GroundTruthGraph::from_model(const HawkesModel& model) {
    GroundTruthGraph truth(model.num_types());
    for (TypeId effect = 0; effect < model.num_types(); ++effect)
        for (TypeId cause = 0; cause < model.num_types(); ++cause)
            if (model.group_norm(effect, cause) > 0.0) truth.set_edge(cause, effect);
    return truth;
}

std::size_t GroundTruthGraph::num_edges() const {
    return static_cast<std::size_t>(std::count(adjacency_.begin(), adjacency_.end(), 1));
}

std::optional<double> auroc(const std::vector<double>& scores, const std::vector<bool>& labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });

    // Rank-sum with mid-ranks for tied scores.
    double positive_rank_sum = 0.0;
    std::size_t positives = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]]) {
                positive_rank_sum += mid_rank;
                ++positives;
            }
        }
        i = j;
    }
    const std::size_t negatives = scores.size() - positives;
    if (positives == 0 || negatives == 0) return std::nullopt;
    const double np = static_cast<double>(positives);
    const double nn = static_cast<double>(negatives);
    return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

DiagnosticsRecord evaluate(const HawkesModel& model, const Dataset& data,
                           const std::optional<DiagnosticsRecord>& previous,
                           const std::optional<GroundTruthGraph>& truth, const std::set<TypePair>& exclude) {
    if (model.num_types() != data.num_types())
        throw std::invalid_argument("model and dataset vocabularies differ in size");
    if (data.sequences.empty()) throw std::invalid_argument("cannot evaluate on an empty dataset");

    DiagnosticsRecord record;
    record.iteration = previous ? previous->iteration + 1 : 0;

    std::vector<double> nll;
    nll.reserve(data.sequences.size());
    double total = 0.0;
    for (const auto& sequence : data.sequences) {
        const auto part = sequence_log_likelihood(model, sequence);
        const double value = part.degenerate ? std::numeric_limits<double>::infinity() : -part.value;
        nll.push_back(value);
        total -= value;
    }
    const double n = static_cast<double>(nll.size());
    record.nll_mean = std::accumulate(nll.begin(), nll.end(), 0.0) / n;
    double squares = 0.0;
    for (double value : nll) squares += (value - record.nll_mean) * (value - record.nll_mean);
    record.nll_std = nll.size() > 1 ? std::sqrt(squares / (n - 1.0)) : 0.0;

    record.log_likelihood = total;
    record.num_parameters = model.nonzero_groups() + model.num_types();
    const std::size_t events = data.num_events();
    const double penalty = events > 0 ? static_cast<double>(record.num_parameters) * std::log(static_cast<double>(events)) : 0.0;
    record.bic = penalty - 2.0 * total;

    if (previous) {
        if (record.bic < previous->bic)
            record.delta_bic_sign = BicChange::improved;
        else if (record.bic > previous->bic)
            record.delta_bic_sign = BicChange::worsened;
        else
            record.delta_bic_sign = BicChange::unchanged;
        const auto df = record.num_parameters > previous->num_parameters
                            ? record.num_parameters - previous->num_parameters
                            : previous->num_parameters - record.num_parameters;
        const double statistic = 2.0 * std::abs(record.log_likelihood - previous->log_likelihood);
        if (df == 0 || !std::isfinite(statistic)) {
            record.p_value = df == 0 ? 1.0 : 0.0;
        } else {
            boost::math::chi_squared distribution(static_cast<double>(df));
            record.p_value = std::clamp(boost::math::cdf(boost::math::complement(distribution, statistic)), 0.0, 1.0);
        }
    }

    if (truth) {
        if (truth->num_types() != model.num_types())
            throw std::invalid_argument("ground truth and model vocabularies differ in size");
        std::vector<double> scores;
        std::vector<bool> labels;
        for (TypeId cause = 0; cause < model.num_types(); ++cause) {
            for (TypeId effect = 0; effect < model.num_types(); ++effect) {
                if (exclude.count({cause, effect})) continue;
                scores.push_back(model.strength(effect, cause));
                labels.push_back(truth->edge(cause, effect));
            }
        }
        record.auroc = auroc(scores, labels);
    }
    return record;
}

UnstableModelError::UnstableModelError(double radius)
    : std::invalid_argument("model is not stable: spectral radius " + std::to_string(radius) + " >= 1"),
      radius_(radius) {}

double spectral_radius(const HawkesModel& model) {
    const auto V = static_cast<Eigen::Index>(model.num_types());
    if (V == 0) return 0.0;
    Eigen::MatrixXd mass(V, V);
    for (Eigen::Index effect = 0; effect < V; ++effect) {
        for (Eigen::Index cause = 0; cause < V; ++cause) {
            double sum = 0.0;
            for (double value : model.group(effect, cause)) sum += value;
            mass(effect, cause) = sum;
        }
    }
    Eigen::EigenSolver<Eigen::MatrixXd> solver(mass, false);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

namespace {

EventSequence simulate_sequence(const HawkesModel& model, double horizon, std::mt19937_64& rng) {
    const auto& bank = model.kernels();
    const std::size_t V = model.num_types();
    const std::size_t Z = bank.size();
    const double support = bank.support_end();
    const double step = bank.sigma;
    double baseline = 0.0;
    for (std::size_t v = 0; v < V; ++v) baseline += model.mu(v);

    // Largest total excitation a cause can exert through kernel z, summed over effects.
    std::vector<double> outgoing(V * Z, 0.0);
    for (std::size_t cause = 0; cause < V; ++cause)
        for (std::size_t z = 0; z < Z; ++z)
            for (std::size_t effect = 0; effect < V; ++effect) outgoing[cause * Z + z] += model.a(effect, cause, z);

    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    EventSequence sequence;
    sequence.horizon = horizon;
    std::size_t window_start = 0;
    std::vector<double> rates(V);
    double t = 0.0;
    while (t < horizon) {
        auto& events = sequence.events;
        while (window_start < events.size() && t - events[window_start].time > support) ++window_start;
        const double until = std::min(t + step, horizon);
        double bound = baseline;
        for (std::size_t k = window_start; k < events.size(); ++k) {
            const double from = t - events[k].time;
            const double to = until - events[k].time;
            for (std::size_t z = 0; z < Z; ++z) {
                const double weight = outgoing[events[k].type * Z + z];
                if (weight != 0.0) bound += weight * bank.max_on(z, from, to);
            }
        }
        if (!(bound > 0.0)) {
            t = until;
            continue;
        }
        const double wait = -std::log1p(-uniform(rng)) / bound;
        if (t + wait >= until) {
            t = until;
            continue;
        }
        t += wait;
        double total = 0.0;
        for (std::size_t v = 0; v < V; ++v) {
            double lambda = model.mu(v);
            for (std::size_t k = window_start; k < events.size(); ++k) {
                if (!(events[k].time < t)) break;
                const double lag = t - events[k].time;
                for (std::size_t z = 0; z < Z; ++z) {
                    const double coefficient = model.a(v, events[k].type, z);
                    if (coefficient != 0.0) lambda += coefficient * kernel_value(bank, z, lag);
                }
            }
            rates[v] = lambda;
            total += lambda;
        }
        const double u = uniform(rng) * bound;
        if (u >= total) continue;
        double cumulative = 0.0;
        TypeId chosen = V - 1;
        for (std::size_t v = 0; v < V; ++v) {
            cumulative += rates[v];
            if (u < cumulative) {
                chosen = v;
                break;
            }
        }
        events.push_back({chosen, t});
    }
    return sequence;
}

}  // namespace

Dataset simulate(const HawkesModel& truth, std::size_t num_sequences, double horizon, std::uint64_t seed,
                 std::vector<std::string> vocabulary) {
    truth.validate();
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("horizon must be positive");
    if (vocabulary.empty())
        for (std::size_t v = 0; v < truth.num_types(); ++v) vocabulary.push_back("e" + std::to_string(v));
    if (vocabulary.size() != truth.num_types())
        throw std::invalid_argument("vocabulary size does not match the model");
    const double radius = spectral_radius(truth);
    if (!(radius < 1.0)) throw UnstableModelError(radius);

    std::mt19937_64 rng(seed);
    Dataset data;
    data.vocabulary = std::move(vocabulary);
    data.sequences.reserve(num_sequences);
    for (std::size_t i = 0; i < num_sequences; ++i) {
        auto sequence = simulate_sequence(truth, horizon, rng);
        sequence.id = "s" + std::to_string(i);
        data.sequences.push_back(std::move(sequence));
    }
    return data;
}

std::vector<DiagnosticsRecord> scripted_feedback_experiment(const Dataset& data, const GroundTruthGraph& truth,
                                                            const FitConfig& config, std::size_t k_iters,
                                                            const std::optional<KernelBank>& kernels) {
    if (truth.num_types() != data.num_types())
        throw std::invalid_argument("ground truth and dataset vocabularies differ in size");
    if (truth.num_edges() < k_iters) throw std::invalid_argument("ground truth has fewer edges than iterations");
    const KernelBank bank = kernels ? *kernels : default_kernel_bank(data);

    auto current = fit(data, config, bank);
    std::vector<DiagnosticsRecord> records;
    records.push_back(evaluate(current.model, data, std::nullopt, truth));
    FeedbackSet feedback;
    for (std::size_t iter = 0; iter < k_iters; ++iter) {
        std::optional<TypePair> pick;
        double best = -1.0;
        for (TypeId cause = 0; cause < data.num_types(); ++cause) {
            for (TypeId effect = 0; effect < data.num_types(); ++effect) {
                if (!truth.edge(cause, effect) || feedback.is_confirmed(cause, effect)) continue;
                const double strength = current.model.strength(effect, cause);
                if (strength > best) {
                    best = strength;
                    pick = TypePair{cause, effect};
                }
            }
        }
        feedback.confirm(*pick);
        current = refit_with_feedback(data, current.model, feedback, config);
        records.push_back(evaluate(current.model, data, records.back(), truth, feedback.confirmed()));
    }
    return records;
}

}  // namespace causeq
