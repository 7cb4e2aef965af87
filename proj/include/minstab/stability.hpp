#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "minstab/dataset.hpp"
#include "minstab/error.hpp"
#include "minstab/network.hpp"
#include "minstab/serialize.hpp"

namespace minstab {

/// Draws one labelled example (x, y) from the data distribution.
using Sampler = std::function<std::pair<Vector, double>(std::mt19937_64&)>;

/// Replaces example i (0-based) by a fresh draw from `sampler`.
inline Dataset resample(const Dataset& data, std::size_t i, const Sampler& sampler, std::uint64_t seed) {
    if (i >= data.size()) throw InputError("resample: index " + std::to_string(i) + " out of range");
    std::mt19937_64 rng(seed);
    auto [x, y] = sampler(rng);
    if (x.size() != data.input_dim()) throw InputError("resample: sampler produced the wrong input dimension");
    Dataset out = data;
    out.inputs[i] = std::move(x);
    out.labels[i] = y;
    return out;
}

/// Base model θ̂ and the models θ̂^{(i)} trained after resampling, evaluated on
/// shared test inputs.  `n` is the training-set size.
struct TrialSet {
    NetworkParams base_params;
    std::vector<NetworkParams> perturbed_params;
    std::vector<std::size_t> resampled_indices;
    std::vector<Vector> test_inputs;
    std::size_t n = 0;

    const Architecture& arch() const { return base_params.arch(); }

    void validate() const {
        if (perturbed_params.empty()) throw InputError("TrialSet: no perturbed trials");
        if (test_inputs.empty()) throw InputError("TrialSet: no test inputs");
        for (const auto& p : perturbed_params)
            if (!(p.arch() == arch())) throw InputError("TrialSet: architectures differ across trials");
        for (const auto& x : test_inputs) {
            if (x.size() != static_cast<std::size_t>(arch().input_dim)) throw InputError("TrialSet: test input dimension mismatch");
            if (norm2(x) > 1.0 + Dataset::kBallSlack) throw InputError("TrialSet: test input outside the unit ball");
        }
    }
};

/// Stability statistics across resampling trials.  `pool` holds every
/// (trial, test input) gap, sorted ascending.
struct StabilityReport {
    std::optional<int> k;  // empty for the full network
    std::size_t n = 0;
    std::size_t trials = 0;
    double mean_abs_diff = 0.0;
    double sign_disagreement_rate = 0.0;
    Vector pool;

    /// Nearest-rank empirical (1−β)-quantile of the pooled gaps.
    double quantile_eps(double beta) const {
        if (pool.empty()) throw InputError("quantile_eps: empty pool");
        if (!(beta >= 0.0 && beta <= 1.0)) throw InputError("quantile_eps: beta must lie in [0, 1]");
        const double target = (1.0 - beta) * static_cast<double>(pool.size());
        auto rank = static_cast<std::size_t>(std::ceil(target - 1e-9));
        rank = std::clamp<std::size_t>(rank, 1, pool.size());
        return pool[rank - 1];
    }
};

namespace detail {

inline int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

inline Vector evaluate_all(const std::vector<Vector>& xs, const std::function<double(std::span<const double>)>& f) {
    Vector out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(f(x));
    return out;
}

inline void normalize_unit(Vector& values) {
    const double nrm = norm2(values);
    if (nrm == 0.0) throw DegenerateNormalizationError("subnetwork_stability: sub-network vanishes on the whole test set");
    for (auto& v : values) v /= nrm;
}

}  // namespace detail

/// Sub-network statistics from precomputed values: base[t] and others[i][t]
/// are f_k on test input t.  Per trial the global sign s = ±1 minimising the
/// mean absolute difference is chosen (v_k is only defined up to sign).
inline StabilityReport subnetwork_stability_from_values(const Vector& base, const std::vector<Vector>& others) {
    if (base.empty() || others.empty()) throw InputError("subnetwork_stability: empty trial set");
    const double count = static_cast<double>(base.size());
    StabilityReport r;
    r.trials = others.size();
    std::size_t disagreements = 0;
    for (const auto& other : others) {
        if (other.size() != base.size()) throw InputError("subnetwork_stability: value count mismatch");
        double plus = 0.0, minus = 0.0;
        for (std::size_t t = 0; t < base.size(); ++t) {
            plus += std::abs(base[t] - other[t]);
            minus += std::abs(base[t] + other[t]);
        }
        const double s = minus < plus ? -1.0 : 1.0;
        r.mean_abs_diff += std::min(plus, minus) / count;
        for (std::size_t t = 0; t < base.size(); ++t) {
            r.pool.push_back(std::abs(base[t] - s * other[t]));
            if (detail::sign_of(base[t]) != detail::sign_of(s * other[t])) ++disagreements;
        }
    }
    r.mean_abs_diff /= static_cast<double>(r.trials);
    r.sign_disagreement_rate = static_cast<double>(disagreements) / static_cast<double>(r.pool.size());
    std::sort(r.pool.begin(), r.pool.end());
    return r;
}

/// Per trial, the mean over test inputs of |f_k(θ̂) − s·f_k(θ̂^{(i)})| minimised
/// over s = ±1, averaged over trials.  With `normalize`, each model's f_k is
/// scaled to unit sum of squares over the test set first.
inline StabilityReport subnetwork_stability(const TrialSet& trials, int k, bool normalize) {
    trials.validate();
    const auto eval = [&](const NetworkParams& p) {
        const SubNetwork f(p, k);
        Vector values = detail::evaluate_all(trials.test_inputs, [&](std::span<const double> x) { return f(x); });
        if (normalize) detail::normalize_unit(values);
        return values;
    };
    std::vector<Vector> others;
    for (const auto& p : trials.perturbed_params) others.push_back(eval(p));
    StabilityReport r = subnetwork_stability_from_values(eval(trials.base_params), others);
    r.k = k;
    r.n = trials.n;
    return r;
}

/// Pools |N(x;θ̂) − N(x;θ̂^{(i)})| over all trials and test inputs.
inline StabilityReport network_stability(const TrialSet& trials) {
    trials.validate();
    const auto eval = [&](const NetworkParams& p) {
        return detail::evaluate_all(trials.test_inputs, [&](std::span<const double> x) { return predict(p, x); });
    };
    const Vector base = eval(trials.base_params);
    StabilityReport r;
    r.n = trials.n;
    r.trials = trials.perturbed_params.size();
    std::size_t disagreements = 0;
    double total = 0.0;
    for (const auto& p : trials.perturbed_params) {
        const Vector other = eval(p);
        for (std::size_t t = 0; t < base.size(); ++t) {
            const double gap = std::abs(base[t] - other[t]);
            r.pool.push_back(gap);
            total += gap;
            if (detail::sign_of(base[t]) != detail::sign_of(other[t])) ++disagreements;
        }
    }
    if (r.pool.empty()) throw InputError("network_stability: empty pool");
    r.mean_abs_diff = total / static_cast<double>(r.pool.size());
    r.sign_disagreement_rate = static_cast<double>(disagreements) / static_cast<double>(r.pool.size());
    std::sort(r.pool.begin(), r.pool.end());
    return r;
}

// ---------------------------------------------------------------------------
// Bound calculators
// ---------------------------------------------------------------------------

namespace detail {

inline void require(bool ok, const char* what) {
    if (!ok) throw InputError(what);
}

// ⌈v⌉ that ignores relative rounding noise of 1e-12 just above an integer.
inline double tolerant_ceil(double v) {
    const double r = std::round(v);
    if (std::abs(v - r) <= 1e-12 * std::max(1.0, std::abs(v))) return r;
    return std::ceil(v);
}

inline std::uint64_t to_count(double v, const char* what) {
    if (!std::isfinite(v) || v > 9.0e18) throw DomainError(std::string(what) + ": requirement not representable");
    return static_cast<std::uint64_t>(std::max(0.0, v));
}

}  // namespace detail

/// Theorem 3.1: ε′ = (1 + 8B^{2L−k+1})ε + 2a(B^L + B^{2L−k+1}ε + 4B^{3L−k+1})ε.
inline double theorem1_bound(double B, int L, int k, double a, double eps) {
    detail::require(B > 0.0 && std::isfinite(B), "theorem1_bound: B must be positive");
    detail::require(L >= 2, "theorem1_bound: L must be at least 2");
    detail::require(k >= 1 && k <= L - 1, "theorem1_bound: k must satisfy 1 <= k <= L-1");
    detail::require(a >= 0.0 && eps >= 0.0, "theorem1_bound: a and eps must be nonnegative");
    const double b2 = std::pow(B, 2 * L - k + 1);
    const double b3 = std::pow(B, 3 * L - k + 1);
    return (1.0 + 8.0 * b2) * eps + 2.0 * a * (std::pow(B, L) + b2 * eps + 4.0 * b3) * eps;
}

struct SampleSizeRequirement {
    std::uint64_t theorem = 0;  // ⌈max(2aMB^L, 4MB^{L−k+1})^{1/α}⌉
    std::uint64_t lemma = 0;    // ⌈(2MaB^L)^{1/α}⌉, Lemma 3.3
};

inline SampleSizeRequirement sample_size_requirement(double B, int L, int k, double a, double M, double alpha) {
    detail::require(B > 0.0 && M > 0.0 && alpha > 0.0, "sample_size_requirement: B, M and alpha must be positive");
    detail::require(a >= 0.0, "sample_size_requirement: a must be nonnegative");
    detail::require(L >= 2 && k >= 1 && k <= L - 1, "sample_size_requirement: need L >= 2 and 1 <= k <= L-1");
    const double lemma_base = 2.0 * a * M * std::pow(B, L);
    const double margin_base = 4.0 * M * std::pow(B, L - k + 1);
    SampleSizeRequirement r;
    r.theorem = detail::to_count(detail::tolerant_ceil(std::pow(std::max(lemma_base, margin_base), 1.0 / alpha)),
                                 "sample_size_requirement");
    r.lemma = detail::to_count(detail::tolerant_ceil(std::pow(lemma_base, 1.0 / alpha)), "sample_size_requirement");
    return r;
}

/// Appendix C.1: smallest L ≥ L* with L ≥ L*·ln B / ln(1 + aε).
inline int depth_for_low_rank(int L_star, double B, double a, double eps) {
    detail::require(L_star >= 2, "depth_for_low_rank: L_star must be at least 2");
    if (!(B > 1.0)) throw DomainError("depth_for_low_rank: B must exceed 1");
    if (!(a * eps > 0.0)) throw DomainError("depth_for_low_rank: a*eps must be positive");
    const double thr = static_cast<double>(L_star) * std::log(B) / std::log1p(a * eps);
    const double L = detail::tolerant_ceil(thr);
    if (L > static_cast<double>(std::numeric_limits<int>::max())) throw DomainError("depth_for_low_rank: depth not representable");
    return std::max(L_star, static_cast<int>(L));
}

/// Appendix A: c₁·ln n·ln(1/δ)·ε + c₂·M·√(ln(1/δ)/n).  n is real so that the
/// formula can be evaluated off the integers.
inline double generalization_bound(double eps, double n, double delta, double M_loss, double c1 = 1.0, double c2 = 1.0) {
    detail::require(n >= 2.0, "generalization_bound: n must be at least 2");
    detail::require(delta > 0.0 && delta < 1.0, "generalization_bound: delta must lie in (0, 1)");
    detail::require(eps >= 0.0 && M_loss >= 0.0, "generalization_bound: eps and M_loss must be nonnegative");
    const double log_delta = std::log(1.0 / delta);
    return c1 * std::log(n) * log_delta * eps + c2 * M_loss * std::sqrt(log_delta / n);
}

/// Appendix A (Efron–Stein): (C²/2)·(1 + B^{2L−k+1} + aB^{3L−k+1})²·n·ε².
inline double variance_bound(double C, double B, int L, int k, double a, double n, double eps) {
    detail::require(C > 0.0 && B > 0.0 && n > 0.0, "variance_bound: C, B and n must be positive");
    detail::require(a >= 0.0 && eps >= 0.0, "variance_bound: a and eps must be nonnegative");
    detail::require(L >= 2 && k >= 1 && k <= L - 1, "variance_bound: need L >= 2 and 1 <= k <= L-1");
    const double inner = 1.0 + std::pow(B, 2 * L - k + 1) + a * std::pow(B, 3 * L - k + 1);
    return 0.5 * C * C * inner * inner * n * eps * eps;
}

// ---------------------------------------------------------------------------
// Tabular output
// ---------------------------------------------------------------------------

struct StabilityRow {
    std::string mode;
    std::optional<int> k;  // empty: full network
    std::size_t n = 0;
    std::size_t trials = 0;
    double mean_abs_diff = std::numeric_limits<double>::quiet_NaN();
    double sign_disagreement_rate = std::numeric_limits<double>::quiet_NaN();
    double eps_at_beta = std::numeric_limits<double>::quiet_NaN();
    double beta = 0.0;
    double stable_rank_k = std::numeric_limits<double>::quiet_NaN();
    bool complete = true;
};

inline StabilityRow make_row(const std::string& mode, const StabilityReport& r, double beta, double stable_rank_k) {
    return {mode, r.k, r.n, r.trials, r.mean_abs_diff, r.sign_disagreement_rate, r.quantile_eps(beta), beta, stable_rank_k, true};
}

inline constexpr const char* kStabilityHeader =
    "mode,k_or_full,n,trials,mean_abs_diff,sign_disagreement_rate,eps_at_beta,beta,stable_rank_k,status";

inline std::string stability_csv(const std::vector<StabilityRow>& rows) {
    const auto num = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
    std::ostringstream os;
    os << kStabilityHeader << '\n';
    for (const auto& r : rows)
        os << r.mode << ',' << (r.k ? std::to_string(*r.k) : std::string("full")) << ',' << r.n << ',' << r.trials << ','
           << num(r.mean_abs_diff) << ',' << num(r.sign_disagreement_rate) << ',' << num(r.eps_at_beta) << ','
           << format_double(r.beta) << ',' << num(r.stable_rank_k) << ',' << (r.complete ? "ok" : "incomplete") << '\n';
    return os.str();
}

}  // namespace minstab
