#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "causeq/diagnostics.hpp"
#include "causeq/patterns.hpp"
#include "oracles.hpp"

using namespace causeq;

namespace {

Dataset make_data(std::size_t V, const std::vector<std::vector<Event>>& sequences, double horizon = 20.0) {
    Dataset d;
    for (std::size_t v = 0; v < V; ++v) d.vocabulary.push_back(std::string(1, static_cast<char>('A' + v)));
    for (std::size_t i = 0; i < sequences.size(); ++i) d.sequences.push_back({"q" + std::to_string(i), sequences[i], horizon, {}});
    return d;
}

Dataset random_dataset(std::mt19937_64& rng, std::size_t V, std::size_t n, std::size_t max_events) {
    std::uniform_real_distribution<double> unit(0.0, 10.0);
    std::vector<std::vector<Event>> sequences(n);
    for (auto& s : sequences) {
        const std::size_t k = rng() % (max_events + 1);
        for (std::size_t i = 0; i < k; ++i) s.push_back({rng() % V, std::round(unit(rng) * 4.0) / 4.0});
        std::sort(s.begin(), s.end(), [](const Event& a, const Event& b) { return a.time < b.time; });
    }
    return make_data(V, sequences, 10.0);
}

SubsequenceRow row_with(PatternCategory category, std::vector<char> anchors) {
    SubsequenceRow row;
    row.category = category;
    row.anchor_times.assign(anchors.size(), 0.0);
    row.anchors = std::move(anchors);
    return row;
}

// Does the sequence contain path[0..k] in time order with each gap in (0, window]?
bool follows(const EventSequence& s, const std::vector<TypeId>& path, std::size_t k, double window) {
    std::function<bool(std::size_t, double)> from = [&](std::size_t step, double t) {
        if (step > k) return true;
        for (const auto& e : s.events)
            if (e.type == path[step] && e.time > t && e.time <= t + window && from(step + 1, e.time)) return true;
        return false;
    };
    for (const auto& e : s.events)
        if (e.type == path[0] && from(1, e.time)) return true;
    return false;
}

}  // namespace

TEST_CASE("categorize examples") {
    PatternQuery q{0, 1, 5.0, {}};
    auto rows = categorize(make_data(2, {{{0, 1.0}, {1, 2.0}}}), q);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].category == PatternCategory::cause_effect);
    CHECK(rows[0].reference_time == 2.0);

    rows = categorize(make_data(2, {{{0, 1.0}, {1, 9.0}}}), q);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].category == PatternCategory::cause_only);
    CHECK(rows[0].reference_time == 1.0);

    rows = categorize(make_data(2, {{{1, 1.0}}, {}, {{0, 3.0}, {0, 3.5}}}), q);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].category == PatternCategory::effect_only);
    CHECK(rows[1].category == PatternCategory::cause_only);
    CHECK(rows[1].sequence_index == 2);
    CHECK(rows[1].sequence_id == "q2");

    // Effect exactly one window after the cause counts; simultaneous does not.
    CHECK(categorize(make_data(2, {{{0, 1.0}, {1, 6.0}}}), q)[0].category == PatternCategory::cause_effect);
    CHECK(categorize(make_data(2, {{{0, 1.0}, {1, 1.0}}}), q)[0].category == PatternCategory::cause_only);

    // Self-loop: a later occurrence of the same type.
    PatternQuery self{0, 0, 2.0, {}};
    CHECK(categorize(make_data(1, {{{0, 1.0}, {0, 2.5}}}), self)[0].category == PatternCategory::cause_effect);
    CHECK(categorize(make_data(1, {{{0, 1.0}}}), self)[0].category == PatternCategory::cause_only);
}

TEST_CASE("anchors and offsets") {
    // A=0 cause, B=1 effect, C=2 and D=3 potential causes.
    PatternQuery q{0, 1, 3.0, {2, 3}};
    const auto data = make_data(4, {
                                       {{2, 4.0}, {0, 5.0}, {2, 5.5}, {1, 6.0}},
                                       {{0, 1.0}, {3, 2.0}, {3, 3.0}, {2, 9.0}},
                                       {{2, 0.5}, {3, 6.0}, {1, 7.0}},
                                   });
    const auto rows = categorize(data, q);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].category == PatternCategory::cause_effect);
    CHECK(rows[0].anchors == std::vector<char>{1, 0});
    CHECK(rows[0].anchor_times[0] == doctest::Approx(-1.25));
    CHECK(rows[1].category == PatternCategory::cause_only);
    CHECK(rows[1].anchors == std::vector<char>{0, 1});
    CHECK(rows[1].anchor_times[1] == doctest::Approx(1.5));
    CHECK(rows[2].category == PatternCategory::effect_only);
    CHECK(rows[2].anchors == std::vector<char>{0, 1});
    CHECK(rows[2].anchor_times[1] == doctest::Approx(-1.0));

    auto duplicated = data;
    duplicated.sequences[0].events.insert(duplicated.sequences[0].events.begin() + 3, {2, 5.8});
    const auto again = categorize(duplicated, q);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(again[i].anchors == rows[i].anchors);
        CHECK(again[i].category == rows[i].category);
    }
    CHECK_THROWS_AS(categorize(data, PatternQuery{0, 1, 3.0, {0}}), std::invalid_argument);
    CHECK_THROWS_AS(categorize(data, PatternQuery{0, 1, 0.0, {}}), std::invalid_argument);
    CHECK_THROWS_AS(categorize(data, PatternQuery{0, 7, 1.0, {}}), std::invalid_argument);
}

TEST_CASE("category partition and window monotonicity on random data") {
    std::mt19937_64 rng(51);
    for (int trial = 0; trial < 100; ++trial) {
        const auto data = random_dataset(rng, 4, 30, 8);
        std::size_t touching = 0;
        for (const auto& s : data.sequences) {
            bool any = false;
            for (const auto& e : s.events) any |= e.type == 0 || e.type == 1;
            touching += any;
        }
        std::size_t last_pairs = 0;
        for (double window : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
            const auto rows = categorize(data, PatternQuery{0, 1, window, {2, 3}});
            CHECK(rows.size() == touching);
            std::size_t pairs = 0;
            for (const auto& r : rows) pairs += r.category == PatternCategory::cause_effect;
            CHECK(pairs >= last_pairs);
            last_pairs = pairs;
        }
    }
}

TEST_CASE("distance and coverage") {
    const std::vector<SubsequenceRow> rows{row_with(PatternCategory::cause_effect, {1, 0}),
                                           row_with(PatternCategory::cause_effect, {1, 1}),
                                           row_with(PatternCategory::cause_effect, {0, 1}),
                                           row_with(PatternCategory::cause_effect, {1, 0})};
    const auto w = anchor_coverage(rows);
    CHECK(w == std::vector<double>{0.75, 0.5});
    CHECK(row_distance(rows[0], rows[2], w) == doctest::Approx(std::sqrt(0.75 * 0.75 + 0.25)));
    CHECK(row_distance(rows[0], rows[3], w) == 0.0);
}

TEST_CASE("three-row ordering matches exhaustive search") {
    const std::vector<SubsequenceRow> rows{row_with(PatternCategory::cause_effect, {1, 0}),
                                           row_with(PatternCategory::cause_effect, {0, 1}),
                                           row_with(PatternCategory::cause_effect, {1, 0})};
    const auto order = order_rows(rows, {1.0, 1.0}, 7);
    REQUIRE(order.size() == 3);
    std::vector<std::vector<double>> d(3, std::vector<double>(3));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) d[i][j] = row_distance(rows[i], rows[j], {1.0, 1.0});
    CHECK(oracle::path_cost(d, order) == doctest::Approx(oracle::best_path_cost(d)));
    const auto where = [&](std::size_t r) { return std::find(order.begin(), order.end(), r) - order.begin(); };
    CHECK(std::abs(where(0) - where(2)) == 1);
}

TEST_CASE("order_rows keeps categories grouped and is deterministic") {
    std::vector<SubsequenceRow> rows;
    std::mt19937_64 rng(52);
    const PatternCategory cats[] = {PatternCategory::effect_only, PatternCategory::cause_only, PatternCategory::cause_effect};
    for (int i = 0; i < 15; ++i) rows.push_back(row_with(cats[rng() % 3], {char(rng() % 2), char(rng() % 2), char(rng() % 2)}));
    const auto w = anchor_coverage(rows);
    const auto order = order_rows(rows, w, 3);
    CHECK(order == order_rows(rows, w, 3));
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
    for (std::size_t k = 1; k < order.size(); ++k)
        CHECK(static_cast<int>(rows[order[k - 1]].category) <= static_cast<int>(rows[order[k]].category));
}

TEST_CASE("annealed path against exhaustive search") {
    std::mt19937_64 rng(53);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng() % 8;
        std::vector<std::vector<double>> points(n, std::vector<double>(4));
        for (auto& p : points)
            for (double& x : p) x = unit(rng) < 0.5 ? 1.0 : 0.0;
        std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < 4; ++k) s += (points[i][k] - points[j][k]) * (points[i][k] - points[j][k]) * unit(rng);
                d[i][j] = d[j][i] = std::sqrt(s);
            }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < i; ++j) d[j][i] = d[i][j];
        const auto path = anneal_path(d, trial);
        std::vector<std::size_t> identity(n);
        std::iota(identity.begin(), identity.end(), 0);
        const double cost = path_cost(d, path);
        CHECK(cost == doctest::Approx(oracle::path_cost(d, path)));
        CHECK(cost <= oracle::path_cost(d, identity) + 1e-12);
        const double best = oracle::best_path_cost(d);
        CHECK(cost <= 1.05 * best + 1e-12);
        if (best > 0.0) worst = std::max(worst, cost / best);
    }
    MESSAGE("worst annealed / optimal ratio: " << worst);
}

TEST_CASE("aggregate runs") {
    const auto X = [](char x) { return row_with(PatternCategory::cause_effect, {x}); };
    auto summary = aggregate({X(1), X(1), X(1), X(1)}, 1);
    CHECK(summary.aggregates == std::vector<AggregatedAnchor>{{0, 0, 3}});
    summary = aggregate({X(1), X(1), X(0), X(1)}, 1);
    CHECK(summary.aggregates == std::vector<AggregatedAnchor>{{0, 0, 1}, {0, 3, 3}});
    CHECK(summary.groups.at(PatternCategory::cause_effect) == 4);
    CHECK(summary.groups.at(PatternCategory::cause_only) == 0);

    auto boundary = aggregate({row_with(PatternCategory::cause_effect, {0}), row_with(PatternCategory::cause_effect, {1}),
                               row_with(PatternCategory::effect_only, {1}), row_with(PatternCategory::effect_only, {0})},
                              1);
    CHECK(boundary.aggregates == std::vector<AggregatedAnchor>{{0, 1, 2}});
}

TEST_CASE("aggregate is idempotent, keeps row order and sorts columns by mean offset") {
    std::vector<SubsequenceRow> rows;
    std::mt19937_64 rng(54);
    for (int i = 0; i < 12; ++i) {
        auto row = row_with(PatternCategory::cause_effect, {char(rng() % 2), char(rng() % 2), 0});
        row.sequence_index = i;
        row.anchor_times = {row.anchors[0] ? -1.0 : 0.0, row.anchors[1] ? -3.0 : 0.0, 0.0};
        rows.push_back(row);
    }
    rows[0].anchors[0] = rows[0].anchors[1] = 1;
    rows[0].anchor_times[0] = -1.0;
    rows[0].anchor_times[1] = -3.0;
    const auto once = aggregate(rows, 3);
    const auto twice = aggregate(once.rows, 3);
    CHECK(once.rows == rows);
    CHECK(twice.rows == once.rows);
    CHECK(twice.aggregates == once.aggregates);
    CHECK(twice.columns == once.columns);
    CHECK(once.columns == std::vector<TypeId>{1, 0, 2});
    for (const auto& agg : once.aggregates) {
        for (std::size_t r = agg.row_start; r <= agg.row_end; ++r) CHECK(rows[r].anchors[agg.cause]);
        if (agg.row_start > 0) CHECK_FALSE(rows[agg.row_start - 1].anchors[agg.cause]);
        if (agg.row_end + 1 < rows.size()) CHECK_FALSE(rows[agg.row_end + 1].anchors[agg.cause]);
    }
}

TEST_CASE("group likelihood: degenerate, closed-form Poisson and planted cases") {
    HawkesModel poisson(2, KernelBank{{0.5}, 0.3});
    poisson.mu(0) = 0.2;
    poisson.mu(1) = 0.4;
    PatternQuery q{0, 1, 2.0, {}};

    const auto same = make_data(2, {{{1, 1.0}}, {{1, 1.0}}}, 10.0);
    auto rows = categorize(same, q);
    rows[1].category = PatternCategory::cause_effect;
    const auto equal = group_likelihood(poisson, same, q, rows);
    CHECK(equal.at(PatternCategory::effect_only) == 0.5);
    CHECK(equal.at(PatternCategory::cause_effect) == 0.5);
    CHECK_FALSE(equal.count(PatternCategory::cause_only));

    // Per sequence: (k log mu - mu T) / max(1, k) with k effect events.
    const auto data = make_data(2,
                                {{{0, 1.0}, {1, 2.0}, {1, 2.5}, {1, 2.9}},
                                 {{0, 1.0}},
                                 {{1, 5.0}, {1, 9.0}}},
                                10.0);
    rows = categorize(data, q);
    const double mu = 0.4, T = 10.0;
    const double ce = (3 * std::log(mu) - mu * T) / 3.0;
    const double co = -mu * T;
    const double eo = (2 * std::log(mu) - mu * T) / 2.0;
    const double lo = std::min({ce, co, eo}), hi = std::max({ce, co, eo});
    const auto scores = group_likelihood(poisson, data, q, rows);
    CHECK(scores.at(PatternCategory::cause_effect) == doctest::Approx((ce - lo) / (hi - lo)));
    CHECK(scores.at(PatternCategory::cause_only) == doctest::Approx((co - lo) / (hi - lo)));
    CHECK(scores.at(PatternCategory::effect_only) == doctest::Approx((eo - lo) / (hi - lo)));
    CHECK(scores.at(PatternCategory::cause_effect) == 1.0);

    HawkesModel planted(2, KernelBank{{1.0}, 0.3});
    planted.mu(0) = 0.3;
    planted.mu(1) = 0.05;
    planted.a(1, 0, 0) = 0.7;
    const auto simulated = simulate(planted, 200, 10.0, 5);
    const PatternQuery edge{0, 1, 2.0, {}};
    const auto planted_scores = group_likelihood(planted, simulated, edge, categorize(simulated, edge));
    CHECK(planted_scores.at(PatternCategory::cause_effect) == 1.0);
}

TEST_CASE("summarize_patterns") {
    HawkesModel m(3, KernelBank{{1.0}, 0.3});
    for (std::size_t v = 0; v < 3; ++v) m.mu(v) = 0.2;
    m.a(1, 0, 0) = 0.5;
    m.a(1, 2, 0) = 0.3;
    const auto data = simulate(m, 60, 10.0, 8);
    const PatternQuery q{0, 1, 2.0, {2}};
    const auto summary = summarize_patterns(m, data, q, 4);
    const auto rows = categorize(data, q);
    REQUIRE(summary.rows.size() == rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) CHECK(summary.rows[k] == rows[summary.order[k]]);
    std::size_t total = 0;
    for (const auto& [category, count] : summary.groups) total += count;
    CHECK(total == rows.size());
    CHECK(summary.group_likelihood == group_likelihood(m, data, q, rows));
}

TEST_CASE("path flow: hand traces") {
    auto flow = causal_path_flow(make_data(2, {{{0, 1.0}, {1, 2.0}}}), {0, 1}, 5.0);
    CHECK(flow.started == 1);
    CHECK(flow.steps == std::vector<FlowStep>{{0, 1, 1, 0}});

    const auto no_c = make_data(3, {{{0, 1.0}, {1, 2.0}}, {{0, 1.0}, {1, 1.5}}});
    flow = causal_path_flow(no_c, {0, 1, 2}, 5.0);
    CHECK(flow.steps[1].continued == 0);
    CHECK(flow.steps[1].dropped == 2);

    // q0 continues through both steps, q1 loses B (too late), q2 reaches B
    // but its C precedes B, q3 has no A.
    const auto data = make_data(3, {{{0, 1.0}, {1, 2.0}, {2, 2.5}},
                                    {{0, 1.0}, {1, 4.0}, {2, 4.5}},
                                    {{2, 0.5}, {0, 1.0}, {1, 1.5}},
                                    {{1, 1.0}, {2, 2.0}}});
    flow = causal_path_flow(data, {0, 1, 2}, 2.0);
    CHECK(flow.started == 3);
    CHECK(flow.steps == std::vector<FlowStep>{{0, 1, 2, 1}, {1, 2, 1, 1}});
    CHECK_THROWS_AS(causal_path_flow(data, {0}, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(causal_path_flow(data, {0, 1}, 0.0), std::invalid_argument);
}

TEST_CASE("path flow matches a recursive search and telescopes") {
    std::mt19937_64 rng(55);
    for (int trial = 0; trial < 100; ++trial) {
        const auto data = random_dataset(rng, 3, 20, 7);
        std::vector<TypeId> path{rng() % 3, rng() % 3, rng() % 3};
        const double window = 0.5 + (rng() % 8) * 0.5;
        const auto flow = causal_path_flow(data, path, window);
        std::size_t previous = flow.started;
        for (std::size_t k = 0; k < flow.steps.size(); ++k) {
            std::size_t expected = 0;
            for (const auto& s : data.sequences) expected += follows(s, path, k + 1, window);
            CHECK(flow.steps[k].continued == expected);
            CHECK(flow.steps[k].continued + flow.steps[k].dropped == previous);
            previous = flow.steps[k].continued;
        }
    }
}
