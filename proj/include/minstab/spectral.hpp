#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "minstab/dataset.hpp"
#include "minstab/error.hpp"
#include "minstab/linalg.hpp"
#include "minstab/network.hpp"
#include "minstab/serialize.hpp"

namespace minstab {

/// W_k = λ_k·u_k·v_kᵀ + W_kᵋ (Definition 2.2).
struct RankOneSplit {
    double lambda = 0.0;
    Vector u;
    Vector v;
    Matrix w_eps;
    bool degenerate = false;

    Matrix leading() const { return outer(scaled(u, lambda), v); }
};

inline RankOneSplit rank_one_split(const Matrix& w) {
    if (w.is_zero()) throw DomainError("rank_one_split: zero matrix");
    const SvdResult s = svd(w);
    RankOneSplit out{s.singular_values.front(), s.left_vector(0), s.right_vector(0), w, s.near_degenerate};
    out.w_eps -= out.leading();
    return out;
}

/// Assumption 2.3: S(W) ≤ 1 + a·ε.
inline bool low_rank_check(const Matrix& w, double a, double eps) {
    if (!(a > 0.0) || !(eps > 0.0)) throw InputError("low_rank_check: a and eps must be positive");
    return stable_rank(w) <= 1.0 + a * eps;
}

/// a_meas = (S(W) − 1)/ε, the smallest a for which low_rank_check passes.
inline double measured_a(const Matrix& w, double eps) {
    if (!(eps > 0.0)) throw InputError("measured_a: eps must be positive");
    return (stable_rank(w) - 1.0) / eps;
}

inline Vector stable_ranks(const NetworkParams& params) {
    Vector out;
    for (const auto& w : params.weights()) out.push_back(stable_rank(w));
    return out;
}

/// k / Σ_{j≤k} 1/S(W_j).
inline double harmonic_mean_stable_rank(const NetworkParams& params, int k) {
    if (k < 1 || k > params.depth()) throw InputError("harmonic_mean_stable_rank: layer index out of range");
    double acc = 0.0;
    for (int j = 1; j <= k; ++j) acc += 1.0 / stable_rank(params.layer(j));
    return static_cast<double>(k) / acc;
}

struct SignalConstants {
    double c_plus = 0.0;
    double c_minus = 0.0;
};

/// C⁺ = N^{k+1:L}(ReLU(λ_k u_k)), C⁻ = −N^{k+1:L}(ReLU(−λ_k u_k)).
inline SignalConstants signal_constants(const NetworkParams& params, int k) {
    detail::check_hidden_index(params, k);
    const RankOneSplit s = rank_one_split(params.layer(k));
    const Vector z = scaled(s.u, s.lambda);
    return {tail_forward(params, z, k), -tail_forward(params, scaled(z, -1.0), k)};
}

/// b(x;θ) = (N^{k+1:L}(ReLU(λ_k u_k v_kᵀ y_{k−1})) − N(x)) / ε.
inline double perturbation_residual(const NetworkParams& params, int k, std::span<const double> x, double eps) {
    detail::check_hidden_index(params, k);
    if (!(eps > 0.0)) throw InputError("perturbation_residual: eps must be positive");
    const RankOneSplit s = rank_one_split(params.layer(k));
    const Vector y = truncated_forward(params, x, k);
    const double f = dot(s.v, y);
    return (tail_forward(params, scaled(s.u, s.lambda * f), k) - predict(params, x)) / eps;
}

/// Numerical check of Lemma 3.2 at one (θ, x, k).  Statements 1–2 are the
/// identity N(x) + b·ε = C^{sign f}·f_k(x); statements 3–4 are the bounds
/// |b| ≤ a·Π_j‖W_j‖₂ and ‖W_kᵋ y_{k−1}‖ ≤ a·ε·Π_{j≤k}‖W_j‖₂ with the
/// measured a = (S(W_k) − 1)/ε.
struct Lemma32Check {
    bool skipped = false;  // degenerate leading singular pair
    double f = 0.0;
    double identity_error = 0.0;
    double b = 0.0;
    double a_meas = 0.0;
    double statement3_lhs = 0.0, statement3_rhs = 0.0;
    double statement4_lhs = 0.0, statement4_rhs = 0.0;

    bool statement3_holds() const { return statement3_lhs <= statement3_rhs * (1.0 + 1e-12) + 1e-15; }
    bool statement4_holds() const { return statement4_lhs <= statement4_rhs * (1.0 + 1e-12) + 1e-15; }
};

inline Lemma32Check lemma32_check(const NetworkParams& params, int k, std::span<const double> x, double eps) {
    detail::check_hidden_index(params, k);
    if (!(eps > 0.0)) throw InputError("lemma32_check: eps must be positive");
    Lemma32Check c;
    const RankOneSplit s = rank_one_split(params.layer(k));
    if (s.degenerate) {
        c.skipped = true;
        return c;
    }
    const Vector y = truncated_forward(params, x, k);
    c.f = dot(s.v, y);
    const double out = predict(params, x);
    const Vector z = scaled(s.u, s.lambda);
    const double rank_one_out = tail_forward(params, scaled(z, c.f), k);
    c.b = (rank_one_out - out) / eps;
    const double constant = c.f > 0.0 ? tail_forward(params, z, k) : -tail_forward(params, scaled(z, -1.0), k);
    c.identity_error = std::abs(out + c.b * eps - constant * c.f);

    c.a_meas = measured_a(params.layer(k), eps);
    double all = 1.0, upto_k = 1.0;
    for (int j = 1; j <= params.depth(); ++j) {
        const double sn = spectral_norm(params.layer(j));
        all *= sn;
        if (j <= k) upto_k *= sn;
    }
    c.statement3_lhs = std::abs(c.b);
    c.statement3_rhs = c.a_meas * all;
    c.statement4_lhs = norm2(matvec(s.w_eps, y));
    c.statement4_rhs = c.a_meas * eps * upto_k;
    return c;
}

/// Lemma "margin stable rank": γ ≤ |f_k(xᵢ)·yᵢ| ≤ μ with γ = 1/(2B^{L−k+1}) and μ = B^{k−1}.
struct MarginReport {
    int k = 0;
    Vector per_point;  // f_k(xᵢ)·yᵢ
    double min_abs = 0.0;
    double max_abs = 0.0;
    double gamma_bound = 0.0;
    double mu_bound = 0.0;
    double B_used = 0.0;
};

inline MarginReport margin_report(const NetworkParams& params, const Dataset& data, int k, double B) {
    if (!(B > 0.0)) throw InputError("margin_report: B must be positive");
    data.validate();
    const SubNetwork f(params, k);
    MarginReport r;
    r.k = k;
    r.B_used = B;
    r.gamma_bound = 1.0 / (2.0 * std::pow(B, params.depth() - k + 1));
    r.mu_bound = std::pow(B, k - 1);
    r.min_abs = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double m = f(data.inputs[i]) * data.labels[i];
        r.per_point.push_back(m);
        r.min_abs = std::min(r.min_abs, std::abs(m));
        r.max_abs = std::max(r.max_abs, std::abs(m));
    }
    return r;
}

/// One row per data point: k,point,margin,abs_margin,gamma_bound,mu_bound,B.
inline std::string margin_report_csv(const MarginReport& r) {
    std::ostringstream os;
    os << "k,point,margin,abs_margin,gamma_bound,mu_bound,B\n";
    for (std::size_t i = 0; i < r.per_point.size(); ++i)
        os << r.k << ',' << i << ',' << format_double(r.per_point[i]) << ',' << format_double(std::abs(r.per_point[i])) << ','
           << format_double(r.gamma_bound) << ',' << format_double(r.mu_bound) << ',' << format_double(r.B_used) << '\n';
    return os.str();
}

/// One row per layer: layer,frobenius,spectral,stable_rank,degenerate.
inline std::string layer_summary_csv(const NetworkParams& params) {
    std::ostringstream os;
    os << "layer,frobenius,spectral,stable_rank,degenerate\n";
    for (int l = 1; l <= params.depth(); ++l) {
        const Matrix& w = params.layer(l);
        if (w.is_zero()) {
            os << l << ",0,0,,1\n";
            continue;
        }
        const RankOneSplit s = rank_one_split(w);
        os << l << ',' << format_double(frobenius_norm(w)) << ',' << format_double(s.lambda) << ','
           << format_double(stable_rank(w)) << ',' << (s.degenerate ? 1 : 0) << '\n';
    }
    return os.str();
}

}  // namespace minstab
