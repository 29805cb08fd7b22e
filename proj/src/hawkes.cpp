#include "causeq/hawkes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace causeq {

namespace {

double percentile(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    const double rank = q * static_cast<double>(values.size() - 1);
    const auto lower = static_cast<std::size_t>(std::floor(rank));
    const auto upper = std::min(lower + 1, values.size() - 1);
    const double fraction = rank - static_cast<double>(lower);
    return values[lower] + fraction * (values[upper] - values[lower]);
}

// Lag gaps from each event back to the latest earlier occurrence of every type.
std::vector<double> cause_effect_gaps(const Dataset& dataset) {
    std::vector<double> gaps;
    std::vector<double> latest(dataset.num_types());
    std::vector<char> seen(dataset.num_types());
    for (const auto& sequence : dataset.sequences) {
        std::fill(seen.begin(), seen.end(), 0);
        std::size_t m = 0;
        while (m < sequence.events.size()) {
            // Events sharing a timestamp do not precede each other.
            std::size_t end = m;
            while (end < sequence.events.size() && sequence.events[end].time == sequence.events[m].time) ++end;
            for (std::size_t k = m; k < end; ++k) {
                for (TypeId cause = 0; cause < latest.size(); ++cause) {
                    if (seen[cause]) gaps.push_back(sequence.events[k].time - latest[cause]);
                }
            }
            for (std::size_t k = m; k < end; ++k) {
                latest[sequence.events[k].type] = sequence.events[k].time;
                seen[sequence.events[k].type] = 1;
            }
            m = end;
        }
    }
    return gaps;
}

}  // namespace

void KernelBank::validate() const {
    if (centers.empty()) throw std::invalid_argument("kernel bank needs at least one kernel");
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("kernel bandwidth must be positive");
    for (std::size_t z = 0; z < centers.size(); ++z) {
        if (!(centers[z] >= 0.0) || !std::isfinite(centers[z]))
            throw std::invalid_argument("kernel centers must be finite and non-negative");
        if (z > 0 && !(centers[z] > centers[z - 1]))
            throw std::invalid_argument("kernel centers must be strictly increasing");
    }
}

double KernelBank::support_end() const {
    // exp(-800) is exactly 0.0 in double precision.
    return centers.back() + 40.0 * sigma;
}

double KernelBank::max_on(std::size_t z, double from, double to) const {
    if (to < 0.0) return 0.0;
    from = std::max(from, 0.0);
    const double c = centers[z];
    if (c >= from && c <= to) return kernel_value(*this, z, c);
    return kernel_value(*this, z, c < from ? from : to);
}

KernelBank default_kernel_bank(const Dataset& dataset) {
    const auto gaps = cause_effect_gaps(dataset);
    std::vector<double> positive;
    positive.reserve(gaps.size());
    for (double gap : gaps)
        if (gap > 0.0) positive.push_back(gap);

    KernelBank bank;
    if (positive.empty()) {
        double span = dataset.sequences.empty() ? 0.0 : dataset.total_time() / dataset.sequences.size();
        bank.centers = {0.0};
        bank.sigma = span > 0.0 ? span / 2.0 : 1.0;
        return bank;
    }

    const double span = percentile(positive, 0.95);
    const double m = static_cast<double>(positive.size());
    double mean = 0.0;
    for (double gap : positive) mean += gap;
    mean /= m;
    double squares = 0.0;
    for (double gap : positive) squares += (gap - mean) * (gap - mean);
    const double stddev = positive.size() > 1 ? std::sqrt(squares / (m - 1.0)) : 0.0;

    const double silverman = 1.06 * stddev * std::pow(m, -0.2);
    bank.sigma = std::max(silverman, 1e-3 * span);
    const double ratio = std::ceil(span / bank.sigma);
    const auto count = static_cast<std::size_t>(std::clamp(ratio, 1.0, static_cast<double>(kMaxKernels)));
    bank.centers.resize(count);
    for (std::size_t z = 0; z < count; ++z)
        bank.centers[z] = count == 1 ? 0.0 : span * static_cast<double>(z) / static_cast<double>(count - 1);
    return bank;
}

double kernel_value(const KernelBank& bank, std::size_t z, double t) {
    if (t < 0.0) return 0.0;
    const double sigma = bank.sigma;
    const double d = (t - bank.centers[z]) / sigma;
    return std::exp(-0.5 * d * d) / (std::sqrt(2.0 * std::numbers::pi) * sigma);
}

double kernel_integral(const KernelBank& bank, std::size_t z, double upto) {
    if (!(upto > 0.0)) return 0.0;
    const double scale = bank.sigma * std::numbers::sqrt2;
    const double from_center = bank.centers[z] / scale;  // >= 0
    const double to_upto = (upto - bank.centers[z]) / scale;
    if (to_upto >= 0.0) return 0.5 * (std::erf(to_upto) + std::erf(from_center));
    // Both tails on the same side of the center: erfc keeps the difference accurate.
    if (-to_upto > 0.5) return 0.5 * (std::erfc(-to_upto) - std::erfc(from_center));
    return 0.5 * (std::erf(from_center) - std::erf(-to_upto));
}

HawkesModel::HawkesModel(std::size_t num_types, KernelBank kernels)
    : num_types_(num_types),
      mu_(num_types, 0.0),
      a_(num_types * num_types * kernels.size(), 0.0),
      kernels_(std::move(kernels)) {
    kernels_.validate();
}

std::span<const double> HawkesModel::group(std::size_t effect, std::size_t cause) const {
    return {a_.data() + index(effect, cause, 0), kernels_.size()};
}

std::span<double> HawkesModel::group(std::size_t effect, std::size_t cause) {
    return {a_.data() + index(effect, cause, 0), kernels_.size()};
}

double HawkesModel::group_norm(std::size_t effect, std::size_t cause) const {
    double sum = 0.0;
    for (double value : group(effect, cause)) sum += value * value;
    return std::sqrt(sum);
}

double HawkesModel::strength(std::size_t effect, std::size_t cause) const {
    double sum = 0.0;
    for (double value : group(effect, cause)) sum += value;
    return sum / static_cast<double>(kernels_.size());
}

std::size_t HawkesModel::nonzero_groups() const {
    std::size_t count = 0;
    for (std::size_t effect = 0; effect < num_types_; ++effect)
        for (std::size_t cause = 0; cause < num_types_; ++cause)
            if (group_norm(effect, cause) > 0.0) ++count;
    return count;
}

void HawkesModel::validate() const {
    kernels_.validate();
    for (double value : mu_)
        if (!(value >= 0.0) || !std::isfinite(value)) throw std::invalid_argument("baselines must be finite and >= 0");
    for (double value : a_)
        if (!(value >= 0.0) || !std::isfinite(value))
            throw std::invalid_argument("impact coefficients must be finite and >= 0");
}

double intensity(const HawkesModel& model, const EventSequence& sequence, TypeId v, double t) {
    const auto& bank = model.kernels();
    double lambda = model.mu(v);
    for (const auto& event : sequence.events) {
        if (!(event.time < t)) break;
        const double lag = t - event.time;
        for (std::size_t z = 0; z < bank.size(); ++z) {
            const double coefficient = model.a(v, event.type, z);
            if (coefficient != 0.0) lambda += coefficient * kernel_value(bank, z, lag);
        }
    }
    return lambda;
}

LogLikelihood sequence_log_likelihood(const HawkesModel& model, const EventSequence& sequence) {
    const auto& bank = model.kernels();
    const std::size_t V = model.num_types();
    const std::size_t Z = bank.size();
    const double support = bank.support_end();
    const auto& events = sequence.events;

    LogLikelihood result;
    double log_terms = 0.0;
    std::size_t window_start = 0;
    for (std::size_t m = 0; m < events.size(); ++m) {
        const double t = events[m].time;
        while (window_start < m && t - events[window_start].time > support) ++window_start;
        double lambda = model.mu(events[m].type);
        for (std::size_t k = window_start; k < m; ++k) {
            if (!(events[k].time < t)) break;
            const double lag = t - events[k].time;
            for (std::size_t z = 0; z < Z; ++z) {
                const double coefficient = model.a(events[m].type, events[k].type, z);
                if (coefficient != 0.0) lambda += coefficient * kernel_value(bank, z, lag);
            }
        }
        if (!(lambda > 0.0)) {
            result.degenerate = true;
            result.value = -std::numeric_limits<double>::infinity();
            return result;
        }
        log_terms += std::log(lambda);
    }

    double compensator = 0.0;
    for (std::size_t v = 0; v < V; ++v) compensator += model.mu(v) * sequence.horizon;
    for (const auto& event : events) {
        const double remaining = sequence.horizon - event.time;
        for (std::size_t z = 0; z < Z; ++z) {
            double mass = 0.0;
            bool computed = false;
            for (std::size_t v = 0; v < V; ++v) {
                const double coefficient = model.a(v, event.type, z);
                if (coefficient == 0.0) continue;
                if (!computed) {
                    mass = kernel_integral(bank, z, remaining);
                    computed = true;
                }
                compensator += coefficient * mass;
            }
        }
    }
    result.value = log_terms - compensator;
    return result;
}

LogLikelihood log_likelihood(const HawkesModel& model, const Dataset& data) {
    LogLikelihood total;
    for (const auto& sequence : data.sequences) {
        const auto part = sequence_log_likelihood(model, sequence);
        if (part.degenerate) return part;
        total.value += part.value;
    }
    return total;
}

const CausalEdge* CausalGraph::find(TypeId cause, TypeId effect) const {
    for (const auto& edge : edges)
        if (edge.cause == cause && edge.effect == effect) return &edge;
    return nullptr;
}

CausalEdge* CausalGraph::find(TypeId cause, TypeId effect) {
    for (auto& edge : edges)
        if (edge.cause == cause && edge.effect == effect) return &edge;
    return nullptr;
}

void CausalGraph::validate() const {
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const auto& edge = edges[i];
        if (edge.cause >= nodes.size() || edge.effect >= nodes.size())
            throw std::invalid_argument("edge references an unknown node");
        if (edge.confirmed && edge.removed) throw std::invalid_argument("edge is both confirmed and removed");
        if (!(edge.strength >= 0.0)) throw std::invalid_argument("edge strength must be >= 0");
        for (std::size_t j = 0; j < i; ++j)
            if (edges[j].cause == edge.cause && edges[j].effect == edge.effect)
                throw std::invalid_argument("duplicate edge");
    }
}

}  // namespace causeq
