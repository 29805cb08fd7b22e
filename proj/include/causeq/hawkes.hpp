#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "causeq/event_store.hpp"

namespace causeq {

inline constexpr std::size_t kMaxKernels = 10;

// Gaussian basis shared by every impact function; one bandwidth for all centers.
struct KernelBank {
    std::vector<double> centers;
    double sigma{1.0};

    std::size_t size() const { return centers.size(); }
    // Throws std::invalid_argument unless centers are strictly increasing and
    // non-negative and sigma > 0.
    void validate() const;
    // Lag beyond which every kernel evaluates to exactly 0.0 in double precision.
    double support_end() const;
    // Largest value of kernel z over lags in [from, to].
    double max_on(std::size_t z, double from, double to) const;

    friend bool operator==(const KernelBank&, const KernelBank&) = default;
};

KernelBank default_kernel_bank(const Dataset& dataset);

// (2 pi sigma^2)^(-1/2) exp(-(t - c_z)^2 / (2 sigma^2)); zero for t < 0.
double kernel_value(const KernelBank& bank, std::size_t z, double t);
// Integral of kernel z over [0, upto], closed form through erf/erfc.
double kernel_integral(const KernelBank& bank, std::size_t z, double upto);

// Baselines mu[v] and impact coefficients a[effect][cause][z], all >= 0.
class HawkesModel {
public:
    HawkesModel() = default;
    HawkesModel(std::size_t num_types, KernelBank kernels);

    std::size_t num_types() const { return num_types_; }
    std::size_t num_kernels() const { return kernels_.size(); }
    const KernelBank& kernels() const { return kernels_; }

    double mu(std::size_t v) const { return mu_[v]; }
    double& mu(std::size_t v) { return mu_[v]; }
    const std::vector<double>& baselines() const { return mu_; }

    double a(std::size_t effect, std::size_t cause, std::size_t z) const { return a_[index(effect, cause, z)]; }
    double& a(std::size_t effect, std::size_t cause, std::size_t z) { return a_[index(effect, cause, z)]; }
    // The Z coefficients of cause -> effect.
    std::span<const double> group(std::size_t effect, std::size_t cause) const;
    std::span<double> group(std::size_t effect, std::size_t cause);

    double group_norm(std::size_t effect, std::size_t cause) const;
    // Mean coefficient of the group: the causal strength of cause -> effect.
    double strength(std::size_t effect, std::size_t cause) const;
    std::size_t nonzero_groups() const;

    // Throws std::invalid_argument on negative or non-finite parameters.
    void validate() const;

    friend bool operator==(const HawkesModel&, const HawkesModel&) = default;

private:
    std::size_t index(std::size_t effect, std::size_t cause, std::size_t z) const {
        return (effect * num_types_ + cause) * kernels_.size() + z;
    }

    std::size_t num_types_{0};
    std::vector<double> mu_;
    std::vector<double> a_;
    KernelBank kernels_;
};

// lambda_v(t): baseline plus excitation from events strictly before t.
double intensity(const HawkesModel& model, const EventSequence& sequence, TypeId v, double t);

struct LogLikelihood {
    double value{0.0};
    // Some event had zero intensity; value is -infinity.
    bool degenerate{false};
};

LogLikelihood sequence_log_likelihood(const HawkesModel& model, const EventSequence& sequence);
LogLikelihood log_likelihood(const HawkesModel& model, const Dataset& data);

struct CausalEdge {
    TypeId cause{0};
    TypeId effect{0};
    double strength{0.0};
    double coverage{0.0};
    bool confirmed{false};
    bool removed{false};

    friend bool operator==(const CausalEdge&, const CausalEdge&) = default;
};

struct CausalGraph {
    std::vector<std::string> nodes;
    std::vector<CausalEdge> edges;

    const CausalEdge* find(TypeId cause, TypeId effect) const;
    CausalEdge* find(TypeId cause, TypeId effect);
    // Throws std::invalid_argument on duplicate pairs, bad node ids, or an
    // edge both confirmed and removed.
    void validate() const;

    friend bool operator==(const CausalGraph&, const CausalGraph&) = default;
};

}  // namespace causeq
