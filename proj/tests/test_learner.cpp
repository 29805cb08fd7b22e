#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "causeq/diagnostics.hpp"
#include "causeq/learner.hpp"
#include "oracles.hpp"

using namespace causeq;

namespace {

const KernelBank kTruthBank{{0.5, 1.5}, 0.3};

HawkesModel poisson_truth(std::size_t V, double mu) {
    HawkesModel m(V, kTruthBank);
    for (std::size_t v = 0; v < V; ++v) m.mu(v) = mu;
    return m;
}

double poisson_mle(const Dataset& d, TypeId v) {
    std::size_t count = 0;
    for (const auto& s : d.sequences)
        for (const auto& e : s.events) count += e.type == v;
    return static_cast<double>(count) / d.total_time();
}

double max_abs_group(const HawkesModel& m, TypeId effect, TypeId cause) {
    double worst = 0.0;
    for (double x : m.group(effect, cause)) worst = std::max(worst, std::abs(x));
    return worst;
}

}  // namespace

TEST_CASE("config and feedback invariants") {
    FitConfig c;
    c.max_iters = 0;
    CHECK_THROWS(c.validate());
    c = FitConfig{};
    c.tol = 0.0;
    CHECK_THROWS(c.validate());
    c = FitConfig{};
    c.alpha = -1.0;
    CHECK_THROWS(c.validate());

    CHECK_THROWS_AS(FeedbackSet({{0, 1}}, {{0, 1}}), std::invalid_argument);
    FeedbackSet f;
    f.remove({0, 1});
    f.confirm({0, 1});
    CHECK(f.is_confirmed(0, 1));
    CHECK_FALSE(f.is_removed(0, 1));
    FeedbackSet later;
    later.remove({0, 1});
    f.merge(later);
    CHECK(f.is_removed(0, 1));
    CHECK_FALSE(f.is_confirmed(0, 1));
}

TEST_CASE("extract_graph") {
    Dataset d;
    d.vocabulary = {"A", "B"};
    d.sequences.push_back({"s", {{0, 1.0}, {1, 2.0}}, 3.0, {}});
    HawkesModel m(2, KernelBank{{0.5, 1.5}, 0.3});
    m.mu(0) = m.mu(1) = 0.1;
    CHECK(extract_graph(m, d).edges.empty());

    m.a(1, 0, 0) = 0.2;
    m.a(1, 0, 1) = 0.4;
    const auto g = extract_graph(m, d, 0.1, 5.0);
    REQUIRE(g.edges.size() == 1);
    CHECK(g.nodes == d.vocabulary);
    CHECK(g.edges[0].cause == 0);
    CHECK(g.edges[0].effect == 1);
    CHECK(g.edges[0].strength == doctest::Approx(0.3));
    CHECK(g.edges[0].coverage == event_coverage_for_edge(d, 0, 1, 5.0));
    CHECK_FALSE(g.edges[0].confirmed);
    CHECK_FALSE(g.edges[0].removed);
    CHECK(extract_graph(m, d, 0.31).edges.empty());
    CHECK(default_coverage_window(m.kernels()) == doctest::Approx(1.5 + 0.6));
}

TEST_CASE("apply_feedback marks edges and keeps confirmed pairs visible") {
    Dataset d;
    d.vocabulary = {"A", "B"};
    d.sequences.push_back({"s", {{0, 1.0}, {1, 2.0}}, 3.0, {}});
    HawkesModel m(2, KernelBank{{1.0}, 0.3});
    m.mu(0) = m.mu(1) = 0.1;
    m.a(1, 0, 0) = 0.5;
    auto g = extract_graph(m, d);
    apply_feedback(g, FeedbackSet({{1, 0}}, {{0, 1}}), m, d, 2.0);
    CHECK(g.find(0, 1)->removed);
    REQUIRE(g.find(1, 0) != nullptr);
    CHECK(g.find(1, 0)->confirmed);
    CHECK(g.find(1, 0)->strength == 0.0);
    CHECK_NOTHROW(g.validate());
}

TEST_CASE("independent Poisson streams give no cross-excitation") {
    const Dataset d = simulate(poisson_truth(3, 0.5), 200, 50.0, 4);
    // The null gradient of a group grows like the root of the cause count, so a
    // moderate weight for ~15000 events is in the hundreds.
    FitConfig c;
    c.alpha = 1000.0;
    const auto r = fit(d, c, default_kernel_bank(d));
    for (TypeId e = 0; e < 3; ++e)
        for (TypeId cause = 0; cause < 3; ++cause)
            if (e != cause) CHECK(r.model.group_norm(e, cause) < 1e-3);
}

TEST_CASE("planted A->B dominates every other group") {
    HawkesModel truth = poisson_truth(2, 0.2);
    truth.a(1, 0, 0) = 0.6;
    const Dataset d = simulate(truth, 300, 50.0, 8);
    const auto r = fit(d, FitConfig{}, default_kernel_bank(d));
    const double ab = r.model.group_norm(1, 0);
    CHECK(ab > r.model.group_norm(0, 0));
    CHECK(ab > r.model.group_norm(0, 1));
    CHECK(ab > r.model.group_norm(1, 1));
    CHECK(r.report.converged);
    for (std::size_t k = 1; k < r.report.objective_trace.size(); ++k)
        CHECK(r.report.objective_trace[k] <= r.report.objective_trace[k - 1] + 1e-9);
}

TEST_CASE("huge alpha recovers the Poisson MLE") {
    HawkesModel truth = poisson_truth(3, 0.3);
    truth.a(1, 0, 0) = 0.5;
    truth.a(2, 1, 1) = 0.4;
    const Dataset d = simulate(truth, 100, 30.0, 2);
    FitConfig c;
    c.alpha = 1e6;
    const auto r = fit(d, c, default_kernel_bank(d));
    for (TypeId v = 0; v < 3; ++v) CHECK(std::abs(r.model.mu(v) - poisson_mle(d, v)) < 1e-4);
    CHECK(r.model.nonzero_groups() == 0);
}

TEST_CASE("removed pairs are exactly zero after refit") {
    HawkesModel truth = poisson_truth(2, 0.2);
    truth.a(1, 0, 0) = 0.6;
    const Dataset d = simulate(truth, 200, 50.0, 3);
    const auto base = fit(d, FitConfig{}, default_kernel_bank(d));
    REQUIRE(base.model.group_norm(1, 0) > 0.0);
    const auto r = refit_with_feedback(d, base.model, FeedbackSet({}, {{0, 1}}), FitConfig{});
    CHECK(max_abs_group(r.model, 1, 0) == 0.0);
}

TEST_CASE("confirmed pairs are exempt from a heavy penalty") {
    HawkesModel truth = poisson_truth(3, 0.2);
    truth.a(1, 0, 0) = 0.6;
    const Dataset d = simulate(truth, 300, 50.0, 12);
    const auto base = fit(d, FitConfig{}, default_kernel_bank(d));
    FitConfig c;
    c.alpha_u = 500.0;
    const auto r = refit_with_feedback(d, base.model, FeedbackSet({{0, 1}}, {}), c);
    const double kept = r.model.group_norm(1, 0);
    CHECK(kept > 0.0);
    for (TypeId e = 0; e < 3; ++e)
        for (TypeId cause = 0; cause < 3; ++cause)
            if (!(e == 1 && cause == 0)) CHECK(r.model.group_norm(e, cause) < kept);
}

TEST_CASE("refit without feedback at alpha_u = alpha reproduces fit") {
    HawkesModel truth = poisson_truth(2, 0.3);
    truth.a(1, 0, 1) = 0.5;
    const Dataset d = simulate(truth, 150, 40.0, 21);
    FitConfig c;
    c.alpha = c.alpha_u = 5.0;
    c.tol = 1e-9;
    c.max_iters = 2000;
    const auto kernels = default_kernel_bank(d);
    const auto base = fit(d, c, kernels);
    const auto again = refit_with_feedback(d, base.model, FeedbackSet{}, c);
    const double a = penalized_objective(base.model, d, c.alpha);
    const double b = penalized_objective(again.model, d, c.alpha);
    CHECK(std::abs(a - b) <= 1e-6 * std::abs(a));
    for (TypeId e = 0; e < 2; ++e)
        for (TypeId cause = 0; cause < 2; ++cause)
            CHECK(std::abs(base.model.group_norm(e, cause) - again.model.group_norm(e, cause)) < 1e-2);
}

TEST_CASE("em_step never increases the penalized objective") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        auto inst = oracle::random_instance(rng);
        FitConfig c;
        c.alpha = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
        std::set<TypePair> removed, confirmed;
        const std::size_t V = inst.model.num_types();
        if (V > 1) removed.insert({0, 1});
        if (V > 2) confirmed.insert({2, 0});
        const FeedbackSet fb(confirmed, removed);
        HawkesModel m = inst.model;
        for (std::size_t v = 0; v < V; ++v) m.mu(v) = std::max(m.mu(v), 0.05);
        double prev = penalized_objective(m, inst.data, c.alpha, fb);
        for (int step = 0; step < 100; ++step) {
            m = em_step(m, inst.data, c, fb);
            const double now = penalized_objective(m, inst.data, c.alpha, fb);
            CHECK(now <= prev + 1e-9);
            prev = now;
            if (V > 1) CHECK(max_abs_group(m, 1, 0) == 0.0);
        }
    }
}

TEST_CASE("em_step on Poisson data gives the closed-form baseline") {
    const Dataset d = simulate(poisson_truth(1, 0.7), 20, 10.0, 5);
    HawkesModel m(1, kTruthBank);
    m.mu(0) = 1.0;
    const auto next = em_step(m, d, FitConfig{});
    CHECK(next.mu(0) == doctest::Approx(poisson_mle(d, 0)).epsilon(1e-12));
}

TEST_CASE("em_step zeroes a group below the threshold") {
    const Dataset d = simulate(poisson_truth(2, 0.5), 20, 10.0, 6);
    HawkesModel m(2, kTruthBank);
    m.mu(0) = m.mu(1) = 0.5;
    m.a(1, 0, 0) = 1e-6;
    FitConfig c;
    c.alpha = 50.0;
    CHECK(em_step(m, d, c).group_norm(1, 0) == 0.0);
}

TEST_CASE("fits are deterministic and separate over effect types") {
    HawkesModel truth = poisson_truth(3, 0.2);
    truth.a(1, 0, 0) = 0.5;
    truth.a(2, 1, 1) = 0.3;
    const Dataset d = simulate(truth, 100, 40.0, 14);
    const auto kernels = default_kernel_bank(d);
    FitConfig c;
    c.alpha = 2.0;
    const auto a = fit(d, c, kernels);
    const auto b = fit(d, c, kernels);
    CHECK(a.report.objective_trace == b.report.objective_trace);
    CHECK(a.model == b.model);
    for (TypeId v = 0; v < 3; ++v) {
        const auto part = fit_effect_type(d, c, kernels, v);
        CHECK(part.mu == a.model.mu(v));
        std::size_t k = 0;
        for (TypeId cause = 0; cause < 3; ++cause)
            for (std::size_t z = 0; z < kernels.size(); ++z) CHECK(part.coefficients[k++] == a.model.a(v, cause, z));
    }
}

TEST_CASE("relabeling types permutes the solution") {
    HawkesModel truth = poisson_truth(3, 0.25);
    truth.a(1, 0, 0) = 0.5;
    truth.a(0, 2, 1) = 0.3;
    const Dataset d = simulate(truth, 120, 40.0, 41);
    const std::vector<TypeId> perm{2, 0, 1};
    Dataset p = d;
    p.vocabulary = std::vector<std::string>(3);
    for (TypeId v = 0; v < 3; ++v) p.vocabulary[perm[v]] = d.vocabulary[v];
    for (auto& s : p.sequences)
        for (auto& e : s.events) e.type = perm[e.type];
    FitConfig c;
    c.alpha = 2.0;
    c.tol = 1e-10;
    c.max_iters = 3000;
    const auto kernels = default_kernel_bank(d);
    const auto a = fit(d, c, kernels).model;
    const auto b = fit(p, c, kernels).model;
    for (TypeId v = 0; v < 3; ++v) {
        CHECK(b.mu(perm[v]) == doctest::Approx(a.mu(v)).epsilon(1e-4));
        for (TypeId cause = 0; cause < 3; ++cause)
            CHECK(std::abs(b.group_norm(perm[v], perm[cause]) - a.group_norm(v, cause)) < 1e-4);
    }
    const auto ga = extract_graph(a, d, 1e-3);
    const auto gb = extract_graph(b, p, 1e-3);
    CHECK(ga.edges.size() == gb.edges.size());
    for (const auto& e : ga.edges) CHECK(gb.find(perm[e.cause], perm[e.effect]) != nullptr);
}

TEST_CASE("an unobserved type triggers the baseline floor warning") {
    Dataset d = simulate(poisson_truth(1, 0.5), 10, 10.0, 1, {"seen"});
    d.vocabulary.push_back("never");
    const auto r = fit(d, FitConfig{}, kTruthBank);
    CHECK(r.model.mu(1) == kBaselineFloor);
    const bool warned = std::any_of(r.report.warnings.begin(), r.report.warnings.end(),
                                    [](const std::string& w) { return w.find("'never'") != std::string::npos; });
    CHECK(warned);
}

TEST_CASE("max_iters bounds the iteration count") {
    HawkesModel truth = poisson_truth(2, 0.3);
    truth.a(1, 0, 0) = 0.5;
    const Dataset d = simulate(truth, 50, 30.0, 2);
    FitConfig c;
    c.max_iters = 2;
    c.tol = 1e-15;
    const auto r = fit(d, c, default_kernel_bank(d));
    CHECK_FALSE(r.report.converged);
    CHECK(r.report.iterations_run == 2);
}
