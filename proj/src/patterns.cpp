#include "causeq/patterns.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace causeq {

std::string to_string(PatternCategory category) {
    switch (category) {
        case PatternCategory::cause_only: return "cause_only";
        case PatternCategory::cause_effect: return "cause_effect";
        case PatternCategory::effect_only: return "effect_only";
    }
    return "cause_only";
}

PatternCategory pattern_category_from_string(const std::string& text) {
    if (text == "cause_only") return PatternCategory::cause_only;
    if (text == "cause_effect") return PatternCategory::cause_effect;
    if (text == "effect_only") return PatternCategory::effect_only;
    throw std::invalid_argument("unknown pattern category '" + text + "'");
}

void PatternQuery::validate() const {
    if (!(window > 0.0) || !std::isfinite(window)) throw std::invalid_argument("window must be positive");
    if (std::find(potential_causes.begin(), potential_causes.end(), cause) != potential_causes.end())
        throw std::invalid_argument("the cause cannot also be a potential cause");
}

namespace {

void collect_anchors(const EventSequence& sequence, const PatternQuery& q, double from, double to, bool closed_right,
                     double reference, SubsequenceRow& row) {
    const std::size_t k = q.potential_causes.size();
    row.anchors.assign(k, 0);
    row.anchor_times.assign(k, 0.0);
    std::vector<std::size_t> hits(k, 0);
    for (const auto& event : sequence.events) {
        const bool inside = closed_right ? (event.time > from && event.time <= to) : (event.time >= from && event.time < to);
        if (!inside) continue;
        for (std::size_t j = 0; j < k; ++j) {
            if (q.potential_causes[j] != event.type) continue;
            row.anchor_times[j] += event.time - reference;
            ++hits[j];
        }
    }
    for (std::size_t j = 0; j < k; ++j) {
        if (hits[j] == 0) continue;
        row.anchors[j] = 1;
        row.anchor_times[j] /= static_cast<double>(hits[j]);
    }
}

}  // namespace

std::vector<SubsequenceRow> categorize(const Dataset& data, const PatternQuery& q) {
    q.validate();
    const std::size_t V = data.num_types();
    if (q.cause >= V || q.effect >= V) throw std::invalid_argument("pattern query references an unknown type");
    for (TypeId p : q.potential_causes)
        if (p >= V) throw std::invalid_argument("pattern query references an unknown type");

    std::vector<SubsequenceRow> rows;
    for (std::size_t s = 0; s < data.sequences.size(); ++s) {
        const auto& sequence = data.sequences[s];
        std::vector<double> causes, effects;
        for (const auto& event : sequence.events) {
            if (event.type == q.cause) causes.push_back(event.time);
            if (event.type == q.effect) effects.push_back(event.time);
        }
        if (causes.empty() && effects.empty()) continue;

        SubsequenceRow row;
        row.sequence_id = sequence.id;
        row.sequence_index = s;
        bool paired = false;
        for (double tc : causes) {
            for (double te : effects) {
                if (te > tc && te <= tc + q.window) {
                    row.category = PatternCategory::cause_effect;
                    row.reference_time = te;
                    paired = true;
                    break;
                }
            }
            if (paired) break;
        }
        if (paired) {
            collect_anchors(sequence, q, row.reference_time - q.window, row.reference_time, false, row.reference_time, row);
        } else if (!causes.empty()) {
            row.category = PatternCategory::cause_only;
            row.reference_time = causes.front();
            collect_anchors(sequence, q, row.reference_time, row.reference_time + q.window, true, row.reference_time, row);
        } else {
            row.category = PatternCategory::effect_only;
            row.reference_time = effects.front();
            collect_anchors(sequence, q, row.reference_time - q.window, row.reference_time, false, row.reference_time, row);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<double> anchor_coverage(const std::vector<SubsequenceRow>& rows) {
    if (rows.empty()) return {};
    std::vector<double> weights(rows.front().anchors.size(), 0.0);
    for (const auto& row : rows)
        for (std::size_t j = 0; j < weights.size(); ++j) weights[j] += row.anchors[j];
    for (double& w : weights) w /= static_cast<double>(rows.size());
    return weights;
}

double row_distance(const SubsequenceRow& a, const SubsequenceRow& b, const std::vector<double>& weights) {
    double sum = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) {
        const double d = weights[j] * (static_cast<double>(a.anchors[j]) - static_cast<double>(b.anchors[j]));
        sum += d * d;
    }
    return std::sqrt(sum);
}

double path_cost(const std::vector<std::vector<double>>& distance, const std::vector<std::size_t>& path) {
    double cost = 0.0;
    for (std::size_t k = 1; k < path.size(); ++k) cost += distance[path[k - 1]][path[k]];
    return cost;
}

std::vector<std::size_t> anneal_path(const std::vector<std::vector<double>>& distance, std::uint64_t seed) {
    const std::size_t n = distance.size();
    std::vector<std::size_t> path(n);
    std::iota(path.begin(), path.end(), 0);
    if (n <= 2) return path;
    double start_temperature = 0.0;
    for (const auto& row : distance)
        for (double d : row) start_temperature = std::max(start_temperature, d);
    if (!(start_temperature > 0.0)) return path;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    auto best = path;
    double cost = path_cost(distance, path);
    double best_cost = cost;
    double temperature = start_temperature;
    std::vector<std::size_t> candidate;
    for (std::size_t iter = 0; iter < 200 * n; ++iter, temperature *= 0.995) {
        std::size_t i = pick(rng), j = pick(rng);
        if (i == j) continue;
        candidate = path;
        if (uniform(rng) < 0.5) {
            if (i > j) std::swap(i, j);
            std::reverse(candidate.begin() + static_cast<std::ptrdiff_t>(i),
                         candidate.begin() + static_cast<std::ptrdiff_t>(j) + 1);
        } else {
            const std::size_t moved = candidate[i];
            candidate.erase(candidate.begin() + static_cast<std::ptrdiff_t>(i));
            candidate.insert(candidate.begin() + static_cast<std::ptrdiff_t>(j), moved);
        }
        const double next = path_cost(distance, candidate);
        const double delta = next - cost;
        if (delta <= 0.0 || uniform(rng) < std::exp(-delta / temperature)) {
            path.swap(candidate);
            cost = next;
            if (cost < best_cost) {
                best_cost = cost;
                best = path;
            }
        }
    }
    return best;
}

std::vector<std::size_t> order_rows(const std::vector<SubsequenceRow>& rows, const std::vector<double>& weights,
                                    std::uint64_t seed) {
    std::vector<std::size_t> order;
    std::mt19937_64 seeds(seed);
    for (auto category : {PatternCategory::cause_only, PatternCategory::cause_effect, PatternCategory::effect_only}) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (rows[i].category == category) members.push_back(i);
        std::vector<std::vector<double>> distance(members.size(), std::vector<double>(members.size(), 0.0));
        for (std::size_t a = 0; a < members.size(); ++a)
            for (std::size_t b = a + 1; b < members.size(); ++b)
                distance[a][b] = distance[b][a] = row_distance(rows[members[a]], rows[members[b]], weights);
        for (std::size_t k : anneal_path(distance, seeds())) order.push_back(members[k]);
    }
    return order;
}

PatternSummary aggregate(const std::vector<SubsequenceRow>& ordered_rows, std::size_t num_potential_causes) {
    PatternSummary summary;
    summary.rows = ordered_rows;
    summary.order.resize(ordered_rows.size());
    std::iota(summary.order.begin(), summary.order.end(), 0);
    for (auto category : {PatternCategory::cause_only, PatternCategory::cause_effect, PatternCategory::effect_only})
        summary.groups[category] = 0;
    for (const auto& row : ordered_rows) ++summary.groups[row.category];

    std::vector<double> mean_time(num_potential_causes, 0.0);
    std::vector<std::size_t> present(num_potential_causes, 0);
    for (std::size_t j = 0; j < num_potential_causes; ++j) {
        std::size_t k = 0;
        while (k < ordered_rows.size()) {
            if (!ordered_rows[k].anchors[j]) {
                ++k;
                continue;
            }
            std::size_t end = k;
            while (end + 1 < ordered_rows.size() && ordered_rows[end + 1].anchors[j]) ++end;
            summary.aggregates.push_back({j, k, end});
            k = end + 1;
        }
        for (const auto& row : ordered_rows) {
            if (!row.anchors[j]) continue;
            mean_time[j] += row.anchor_times[j];
            ++present[j];
        }
        if (present[j] > 0) mean_time[j] /= static_cast<double>(present[j]);
    }
    summary.columns.resize(num_potential_causes);
    std::iota(summary.columns.begin(), summary.columns.end(), 0);
    std::stable_sort(summary.columns.begin(), summary.columns.end(), [&](TypeId a, TypeId b) {
        if ((present[a] > 0) != (present[b] > 0)) return present[a] > 0;
        return present[a] > 0 && mean_time[a] < mean_time[b];
    });
    return summary;
}

std::map<PatternCategory, double> group_likelihood(const HawkesModel& model, const Dataset& data,
                                                   const PatternQuery& q, const std::vector<SubsequenceRow>& rows) {
    if (model.num_types() != data.num_types())
        throw std::invalid_argument("model and dataset vocabularies differ in size");
    if (q.effect >= model.num_types()) throw std::invalid_argument("pattern query references an unknown type");
    const auto& bank = model.kernels();
    std::map<PatternCategory, std::pair<double, std::size_t>> sums;
    for (const auto& row : rows) {
        const auto& sequence = data.sequences.at(row.sequence_index);
        double log_terms = 0.0;
        std::size_t count = 0;
        for (const auto& event : sequence.events) {
            if (event.type != q.effect) continue;
            const double lambda = intensity(model, sequence, q.effect, event.time);
            log_terms += lambda > 0.0 ? std::log(lambda) : -std::numeric_limits<double>::infinity();
            ++count;
        }
        double compensator = model.mu(q.effect) * sequence.horizon;
        for (const auto& event : sequence.events)
            for (std::size_t z = 0; z < bank.size(); ++z) {
                const double coefficient = model.a(q.effect, event.type, z);
                if (coefficient != 0.0) compensator += coefficient * kernel_integral(bank, z, sequence.horizon - event.time);
            }
        auto& [sum, members] = sums[row.category];
        sum += (log_terms - compensator) / static_cast<double>(std::max<std::size_t>(1, count));
        ++members;
    }
    std::map<PatternCategory, double> means;
    for (const auto& [category, entry] : sums) means[category] = entry.first / static_cast<double>(entry.second);
    if (means.empty()) return means;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& [category, value] : means) {
        lo = std::min(lo, value);
        hi = std::max(hi, value);
    }
    std::map<PatternCategory, double> scores;
    for (const auto& [category, value] : means) {
        if (!std::isfinite(lo) || !std::isfinite(hi) || !(hi > lo))
            scores[category] = hi == lo ? 0.5 : (value == hi ? 1.0 : 0.0);
        else
            scores[category] = (value - lo) / (hi - lo);
    }
    return scores;
}

PatternSummary summarize_patterns(const HawkesModel& model, const Dataset& data, const PatternQuery& q,
                                  std::uint64_t seed) {
    const auto rows = categorize(data, q);
    const auto order = order_rows(rows, anchor_coverage(rows), seed);
    std::vector<SubsequenceRow> ordered;
    ordered.reserve(order.size());
    for (std::size_t i : order) ordered.push_back(rows[i]);
    auto summary = aggregate(ordered, q.potential_causes.size());
    summary.order = order;
    summary.group_likelihood = group_likelihood(model, data, q, rows);
    return summary;
}

PathFlow causal_path_flow(const Dataset& data, const std::vector<TypeId>& path, double window) {
    if (path.size() < 2) throw std::invalid_argument("a path needs at least two events");
    if (!(window > 0.0) || !std::isfinite(window)) throw std::invalid_argument("window must be positive");
    for (TypeId v : path)
        if (v >= data.num_types()) throw std::invalid_argument("path references an unknown type");
    PathFlow flow;
    for (std::size_t k = 1; k < path.size(); ++k) flow.steps.push_back({path[k - 1], path[k], 0, 0});
    for (const auto& sequence : data.sequences) {
        // Times at which the path prefix can end.
        std::vector<double> reachable;
        for (const auto& event : sequence.events)
            if (event.type == path.front()) reachable.push_back(event.time);
        if (reachable.empty()) continue;
        ++flow.started;
        for (std::size_t k = 1; k < path.size(); ++k) {
            std::vector<double> next;
            for (const auto& event : sequence.events) {
                if (event.type != path[k]) continue;
                for (double t : reachable) {
                    if (event.time > t && event.time <= t + window) {
                        next.push_back(event.time);
                        break;
                    }
                }
            }
            if (next.empty()) {
                ++flow.steps[k - 1].dropped;
                break;
            }
            ++flow.steps[k - 1].continued;
            reachable = std::move(next);
        }
    }
    return flow;
}

}  // namespace causeq
