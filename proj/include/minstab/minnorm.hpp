#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "minstab/dataset.hpp"
#include "minstab/detail/batch.hpp"
#include "minstab/error.hpp"
#include "minstab/linalg.hpp"
#include "minstab/network.hpp"

namespace minstab {

/// Training did not reach the interpolation tolerance.  Carries the smallest
/// residual seen and the iterate that attained it.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double best_residual, std::optional<NetworkParams> best)
        : Error(what), best_residual_(best_residual), best_(std::move(best)) {}

    double best_residual() const noexcept { return best_residual_; }
    const std::optional<NetworkParams>& best_params() const noexcept { return best_; }

private:
    double best_residual_;
    std::optional<NetworkParams> best_;
};

// ---------------------------------------------------------------------------
// Initialisation and rebalancing
// ---------------------------------------------------------------------------

/// Gaussian weights with per-layer standard deviation 1/√fan_in.
inline NetworkParams gaussian_init(const Architecture& arch, std::mt19937_64& rng) {
    arch.validate();
    std::vector<Matrix> w;
    for (int l = 1; l <= arch.depth; ++l) {
        Matrix m(arch.layer_rows(l), arch.layer_cols(l));
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(m.cols())));
        for (auto& e : m.entries()) e = dist(rng);
        w.push_back(std::move(m));
    }
    return {arch, std::move(w)};
}

/// Rescales every layer to the geometric mean of the layer norms.  The network
/// function is unchanged (positive scalars with product one commute through
/// ReLU) and, by AM–GM, ‖θ‖² can only decrease.
inline NetworkParams rebalance_layers(const NetworkParams& params) {
    const auto norms = param_norm(params).per_layer;
    if (std::any_of(norms.begin(), norms.end(), [](double f) { return f == 0.0; })) return params;
    double log_mean = 0.0;
    for (double f : norms) log_mean += std::log(f);
    log_mean /= static_cast<double>(norms.size());
    const double target = std::exp(log_mean);
    auto w = params.weights();
    for (std::size_t l = 0; l < w.size(); ++l) w[l] *= target / norms[l];
    NetworkParams out(params.arch(), std::move(w));
    if (squared_norm(out) > squared_norm(params) * (1.0 + 1e-12))
        throw NumericalError("rebalance_layers: rebalancing increased the norm");
    return out;
}

struct EquidistributionCheck {
    double spread = 0.0;
    bool pass = false;
};

/// spread = (max_ℓ ‖W_ℓ‖_F − min_ℓ ‖W_ℓ‖_F) / max_ℓ ‖W_ℓ‖_F.
inline EquidistributionCheck check_equidistribution(const NetworkParams& params, double tol) {
    const auto norms = param_norm(params).per_layer;
    const auto [lo, hi] = std::minmax_element(norms.begin(), norms.end());
    if (*hi == 0.0) throw DomainError("check_equidistribution: all-zero parameters");
    const double spread = (*hi - *lo) / *hi;
    return {spread, spread <= tol};
}

/// max_i |N(x_i; θ) − y_i|.
inline double interpolation_residual(const NetworkParams& params, const Dataset& data) {
    double worst = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        worst = std::max(worst, std::abs(predict(params, data.inputs[i]) - data.labels[i]));
    return worst;
}

// ---------------------------------------------------------------------------
// Closed-form toy interpolant
// ---------------------------------------------------------------------------

/// Minimum-norm interpolant of {((x,0),+1), ((0,z),−1)} for ⟨3,2,2⟩:
/// W₁ = W₂ = diag(x^{-1/3}, z^{-1/3}), W₃ = (x^{-1/3}, −z^{-1/3}).
inline NetworkParams toy_closed_form(double x, double z) {
    if (!(x > 0.0) || !(z > 0.0) || !std::isfinite(x) || !std::isfinite(z))
        throw InputError("toy_closed_form: x and z must be strictly positive");
    const double a = std::cbrt(1.0 / x);
    const double c = std::cbrt(1.0 / z);
    Matrix diag{{a, 0.0}, {0.0, c}};
    return {Architecture{3, 2, 2}, {diag, diag, Matrix{{a, -c}}}};
}

/// Certified minimum of ‖θ‖² for the two-point toy problem, 3·(x^{-2/3} + z^{-2/3}).
inline double toy_norm_lower_bound(double x, double z) {
    if (!(x > 0.0) || !(z > 0.0) || !std::isfinite(x) || !std::isfinite(z))
        throw InputError("toy_norm_lower_bound: x and z must be strictly positive");
    return 3.0 * (std::pow(1.0 / x, 2.0 / 3.0) + std::pow(1.0 / z, 2.0 / 3.0));
}

/// Recognises the two-point axis-aligned toy family {((x,0),+1), ((0,z),−1)}
/// (in either order) and returns (x, z).
inline std::optional<std::pair<double, double>> match_toy_family(const Architecture& arch, const Dataset& data) {
    if (!(arch == Architecture{3, 2, 2}) || data.size() != 2 || data.input_dim() != 2) return std::nullopt;
    std::optional<double> x, z;
    for (std::size_t i = 0; i < 2; ++i) {
        const auto& p = data.inputs[i];
        if (data.labels[i] == 1.0 && p[1] == 0.0 && p[0] > 0.0) x = p[0];
        if (data.labels[i] == -1.0 && p[0] == 0.0 && p[1] > 0.0) z = p[1];
    }
    if (x && z) return std::make_pair(*x, *z);
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Gradient-based oracle proxy
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 0.01;
    double weight_decay = 0.005;
    int max_epochs = 20000;
    double interpolation_tol = 1e-6;
    /// At each listed epoch learning rate and weight decay are divided by lr_drop_factor.
    std::vector<int> lr_drop_epochs;
    double lr_drop_factor = 5.0;
    std::uint64_t seed = 0;
    /// Weight decay decays geometrically to weight_decay·anneal_floor over the
    /// final anneal_epochs epochs.
    int anneal_epochs = 5000;
    double anneal_floor = 1e-8;
    /// Damped Gauss–Newton projection onto the interpolation constraints after
    /// the gradient phase (only for small parameter counts).
    bool polish = true;
    std::size_t polish_max_params = 2048;
    /// Successful runs from independent initialisations; the smallest-norm
    /// interpolant wins.  Failed runs are retried with a fresh seed, up to
    /// max_attempts runs in total.
    int restarts = 1;
    int max_attempts = 16;
    /// Stop early once sign accuracy exceeds this fraction (values > 1 disable).
    double accuracy_stop = 2.0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw InputError("TrainConfig: learning_rate must be positive");
        if (!(weight_decay >= 0.0)) throw InputError("TrainConfig: weight_decay must be nonnegative");
        if (!(interpolation_tol > 0.0)) throw InputError("TrainConfig: interpolation_tol must be positive");
        if (max_epochs < 1) throw InputError("TrainConfig: max_epochs must be positive");
        if (anneal_epochs < 0 || anneal_epochs > max_epochs) throw InputError("TrainConfig: anneal_epochs out of range");
        if (!(lr_drop_factor > 0.0)) throw InputError("TrainConfig: lr_drop_factor must be positive");
        if (restarts < 1) throw InputError("TrainConfig: restarts must be at least 1");
        if (max_attempts < restarts) throw InputError("TrainConfig: max_attempts must be at least restarts");
    }

    /// Hyper-parameters of the MNIST-scale runs (Adam, lr 1e-3, weight decay
    /// 5e-3, both divided by 5 at epochs 60 and 120, stop at 99% accuracy).
    static TrainConfig appendix_d() {
        TrainConfig c;
        c.learning_rate = 0.001;
        c.weight_decay = 0.005;
        c.max_epochs = 200;
        c.lr_drop_epochs = {60, 120};
        c.lr_drop_factor = 5.0;
        c.interpolation_tol = 0.1;
        c.anneal_epochs = 0;
        c.polish = false;
        c.accuracy_stop = 0.99;
        return c;
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},     {"max_epochs", c.max_epochs},
         {"interpolation_tol", c.interpolation_tol}, {"lr_drop_epochs", c.lr_drop_epochs},
         {"lr_drop_factor", c.lr_drop_factor}, {"seed", c.seed},                    {"anneal_epochs", c.anneal_epochs},
         {"anneal_floor", c.anneal_floor},   {"polish", c.polish},                 {"restarts", c.restarts},
         {"max_attempts", c.max_attempts},   {"accuracy_stop", c.accuracy_stop}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.interpolation_tol = j.value("interpolation_tol", c.interpolation_tol);
    c.lr_drop_epochs = j.value("lr_drop_epochs", c.lr_drop_epochs);
    c.lr_drop_factor = j.value("lr_drop_factor", c.lr_drop_factor);
    c.seed = j.value("seed", c.seed);
    c.anneal_epochs = j.value("anneal_epochs", c.anneal_epochs);
    c.anneal_floor = j.value("anneal_floor", c.anneal_floor);
    c.polish = j.value("polish", c.polish);
    c.restarts = j.value("restarts", c.restarts);
    c.max_attempts = j.value("max_attempts", c.max_attempts);
    c.accuracy_stop = j.value("accuracy_stop", c.accuracy_stop);
}

namespace detail {

struct TrainOutcome {
    std::optional<NetworkParams> best;  // smallest-norm iterate within tolerance
    NetworkParams closest;              // smallest-residual iterate
    double closest_residual;
};

inline double max_abs_residual(const Matrix& out, std::span<const double> y) {
    double worst = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) worst = std::max(worst, std::abs(out(0, t) - y[t]));
    return worst;
}

inline double sign_accuracy(const Matrix& out, std::span<const double> y) {
    std::size_t hits = 0;
    for (std::size_t t = 0; t < y.size(); ++t) hits += (out(0, t) > 0.0) == (y[t] > 0.0) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(y.size());
}

// Gauss–Newton projection of θ onto r(θ) = N(X; θ) − y = 0.  With n ≤ P each
// step is the minimum-norm correction δ = −Jᵀ(JJᵀ + μI)⁻¹r; otherwise the
// damped normal equations (JᵀJ + μI)δ = −Jᵀr are solved.  Returns the result
// when the residual reaches `tol` without the norm blowing up.
inline std::optional<std::vector<Matrix>> gauss_newton_polish(std::vector<Matrix> w, const Matrix& x, std::span<const double> y,
                                                              double tol, std::size_t max_params) {
    const std::size_t n = y.size();
    const Vector theta0 = flatten(w);
    const std::size_t p = theta0.size();
    if (std::min(n, p) > max_params) return std::nullopt;
    const double norm0 = norm2(theta0);

    for (int it = 0; it < 30; ++it) {
        const auto tr = forward_batch(w, x);
        Vector r(n);
        double worst = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            r[t] = tr.post.back()(0, t) - y[t];
            worst = std::max(worst, std::abs(r[t]));
        }
        if (worst <= tol) {
            if (norm2(flatten(w)) > 1.01 * norm0) return std::nullopt;
            return w;
        }
        Matrix jac(n, p);
        Vector e(n, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            std::fill(e.begin(), e.end(), 0.0);
            e[t] = 1.0;
            const Vector g = flatten(backward_batch(w, tr, e));
            std::copy(g.begin(), g.end(), jac.row(t).begin());
        }
        Vector delta(p, 0.0);
        try {
            if (n <= p) {
                Matrix jjt(n, n);
                for (std::size_t a = 0; a < n; ++a)
                    for (std::size_t b = a; b < n; ++b) jjt(a, b) = jjt(b, a) = dot(jac.row(a), jac.row(b));
                double trace = 0.0;
                for (std::size_t a = 0; a < n; ++a) trace += jjt(a, a);
                for (std::size_t a = 0; a < n; ++a) jjt(a, a) += 1e-13 * trace / static_cast<double>(n) + 1e-300;
                const Vector lam = cholesky_solve(jjt, r);
                for (std::size_t t = 0; t < n; ++t) {
                    const auto row = jac.row(t);
                    for (std::size_t q = 0; q < p; ++q) delta[q] -= row[q] * lam[t];
                }
            } else {
                Matrix jtj(p, p);
                Vector jtr(p, 0.0);
                for (std::size_t t = 0; t < n; ++t) {
                    const auto row = jac.row(t);
                    for (std::size_t a = 0; a < p; ++a) {
                        if (row[a] == 0.0) continue;
                        jtr[a] -= row[a] * r[t];
                        for (std::size_t b = 0; b < p; ++b) jtj(a, b) += row[a] * row[b];
                    }
                }
                double trace = 0.0;
                for (std::size_t a = 0; a < p; ++a) trace += jtj(a, a);
                for (std::size_t a = 0; a < p; ++a) jtj(a, a) += 1e-13 * trace / static_cast<double>(p) + 1e-300;
                delta = cholesky_solve(jtj, jtr);
            }
        } catch (const NumericalError&) {
            return std::nullopt;
        }
        Vector theta = flatten(w);
        for (std::size_t q = 0; q < p; ++q) theta[q] += delta[q];
        if (!all_finite(theta)) return std::nullopt;
        unflatten_into(theta, w);
    }
    return std::nullopt;
}

inline TrainOutcome train_once(const Architecture& arch, const Dataset& data, const TrainConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Matrix> w = gaussian_init(arch, rng).weights();
    const Matrix x = inputs_as_columns(data);
    const std::span<const double> y(data.labels);
    const std::size_t n = data.size();

    constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::vector<Matrix> m1, m2;
    for (const auto& m : w) {
        m1.emplace_back(m.rows(), m.cols());
        m2.emplace_back(m.rows(), m.cols());
    }

    double lr = cfg.learning_rate;
    double wd = cfg.weight_decay;
    const int anneal_start = cfg.max_epochs - cfg.anneal_epochs;
    const double anneal_rate =
        cfg.anneal_epochs > 0 ? std::pow(cfg.anneal_floor, 1.0 / static_cast<double>(cfg.anneal_epochs)) : 1.0;

    std::optional<std::vector<Matrix>> best;
    double best_sq = std::numeric_limits<double>::infinity();
    std::vector<Matrix> closest = w;
    double closest_res = std::numeric_limits<double>::infinity();

    auto consider = [&](const std::vector<Matrix>& cand, double residual) {
        if (residual < closest_res) {
            closest_res = residual;
            closest = cand;
        }
        if (residual <= cfg.interpolation_tol) {
            double sq = 0.0;
            for (const auto& m : cand)
                for (double e : m.entries()) sq += e * e;
            if (sq < best_sq) {
                best_sq = sq;
                best = cand;
            }
        }
    };

    Vector cot(n);
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        if (std::find(cfg.lr_drop_epochs.begin(), cfg.lr_drop_epochs.end(), epoch) != cfg.lr_drop_epochs.end()) {
            lr /= cfg.lr_drop_factor;
            wd /= cfg.lr_drop_factor;
        }
        if (epoch >= anneal_start) wd *= anneal_rate;

        const auto tr = forward_batch(w, x);
        const Matrix& out = tr.post.back();
        const double residual = max_abs_residual(out, y);
        consider(w, residual);
        if (cfg.accuracy_stop <= 1.0 && sign_accuracy(out, y) > cfg.accuracy_stop) break;

        for (std::size_t t = 0; t < n; ++t) cot[t] = 2.0 * (out(0, t) - y[t]) / static_cast<double>(n);
        auto grads = backward_batch(w, tr, cot);
        const double bc1 = 1.0 - std::pow(beta1, epoch + 1);
        const double bc2 = 1.0 - std::pow(beta2, epoch + 1);
        for (std::size_t l = 0; l < w.size(); ++l) {
            auto we = w[l].entries();
            auto ge = grads[l].entries();
            auto a = m1[l].entries();
            auto b = m2[l].entries();
            for (std::size_t i = 0; i < we.size(); ++i) {
                const double g = ge[i] + wd * we[i];
                a[i] = beta1 * a[i] + (1.0 - beta1) * g;
                b[i] = beta2 * b[i] + (1.0 - beta2) * g * g;
                we[i] -= lr * (a[i] / bc1) / (std::sqrt(b[i] / bc2) + adam_eps);
            }
        }
    }
    {
        const auto tr = forward_batch(w, x);
        consider(w, max_abs_residual(tr.post.back(), y));
    }

    if (cfg.polish) {
        // Project the winner (or, failing that, the closest iterate) onto the
        // interpolation constraints; the projected point replaces it.
        const std::vector<Matrix>& start = best ? *best : closest;
        if (auto polished = gauss_newton_polish(start, x, y, cfg.interpolation_tol * 1e-6, cfg.polish_max_params)) {
            const auto tr = forward_batch(*polished, x);
            const double residual = max_abs_residual(tr.post.back(), y);
            if (residual <= cfg.interpolation_tol) {
                best = std::move(polished);
                closest_res = std::min(closest_res, residual);
            }
        }
    }

    TrainOutcome res{std::nullopt, NetworkParams(arch, closest), closest_res};
    if (best) res.best = NetworkParams(arch, *best);
    return res;
}

}  // namespace detail

/// Gradient-based proxy for the minimum-norm oracle: full-batch Adam on the
/// mean squared error with coupled weight decay, a geometric decay-anneal
/// phase, an optional Gauss–Newton polish, and a final layer rebalancing.
///
/// Among iterates within interpolation_tol the one with smallest ‖θ‖² is
/// returned.  Deterministic for a fixed cfg.seed.
inline NetworkParams train_min_norm(const Architecture& arch, const Dataset& data, const TrainConfig& cfg) {
    arch.validate();
    cfg.validate();
    data.validate();
    if (data.input_dim() != static_cast<std::size_t>(arch.input_dim))
        throw InputError("train_min_norm: dataset dimension does not match the architecture");

    std::optional<NetworkParams> best;
    std::optional<NetworkParams> closest;
    double closest_res = std::numeric_limits<double>::infinity();
    std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(0x5eed)};
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(cfg.max_attempts));
    seq.generate(seeds.begin(), seeds.end());
    int successes = 0;
    for (int r = 0; r < cfg.max_attempts && successes < cfg.restarts; ++r) {
        auto outcome = detail::train_once(arch, data, cfg, r == 0 ? cfg.seed : seeds[r]);
        if (outcome.best) {
            ++successes;
            if (!best || squared_norm(*outcome.best) < squared_norm(*best)) best = std::move(outcome.best);
        }
        if (outcome.closest_residual < closest_res) {
            closest_res = outcome.closest_residual;
            closest = std::move(outcome.closest);
        }
    }
    if (!best)
        throw ConvergenceError("train_min_norm: interpolation tolerance not reached (best residual " +
                                   std::to_string(closest_res) + ")",
                               closest_res, closest);
    return rebalance_layers(*best);
}

// ---------------------------------------------------------------------------
// Brute-force oracle over activation patterns
// ---------------------------------------------------------------------------

struct BruteForceConfig {
    int penalty_stages = 8;
    double penalty_growth = 10.0;
    double initial_penalty = 1000.0;
    int restarts = 16;
    std::uint64_t seed = 0;
    /// Largest admissible number of activation patterns, 2^20.
    std::uint64_t max_patterns = std::uint64_t{1} << 20;
    int newton_iterations = 60;
    /// Pre-activation slack when checking a solution against its pattern.
    double consistency_tol = 1e-9;
    /// Largest interpolation residual of the real ReLU network accepted.
    double feasibility_tol = 1e-9;

    void validate() const {
        if (penalty_stages < 1 || restarts < 1 || newton_iterations < 1) throw InputError("BruteForceConfig: counts must be positive");
        if (!(penalty_growth > 1.0) || !(initial_penalty > 0.0)) throw InputError("BruteForceConfig: bad penalty schedule");
    }
};

inline void to_json(nlohmann::json& j, const BruteForceConfig& c) {
    j = {{"penalty_stages", c.penalty_stages},       {"penalty_growth", c.penalty_growth},
         {"initial_penalty", c.initial_penalty},     {"restarts", c.restarts},
         {"seed", c.seed},                           {"max_patterns", c.max_patterns},
         {"newton_iterations", c.newton_iterations}, {"consistency_tol", c.consistency_tol},
         {"feasibility_tol", c.feasibility_tol}};
}

inline void from_json(const nlohmann::json& j, BruteForceConfig& c) {
    c.penalty_stages = j.value("penalty_stages", c.penalty_stages);
    c.penalty_growth = j.value("penalty_growth", c.penalty_growth);
    c.initial_penalty = j.value("initial_penalty", c.initial_penalty);
    c.restarts = j.value("restarts", c.restarts);
    c.seed = j.value("seed", c.seed);
    c.max_patterns = j.value("max_patterns", c.max_patterns);
    c.newton_iterations = j.value("newton_iterations", c.newton_iterations);
    c.consistency_tol = j.value("consistency_tol", c.consistency_tol);
    c.feasibility_tol = j.value("feasibility_tol", c.feasibility_tol);
}

struct OracleCertificate {
    double equidist_spread = 0.0;
    std::optional<double> lower_bound;
    std::uint64_t patterns_explored = 0;
};

struct OracleResult {
    NetworkParams params;
    double objective = 0.0;  // ‖θ‖²
    OracleCertificate certificate;
};

inline nlohmann::json oracle_metadata(const OracleResult& r) {
    nlohmann::json cert = {{"equidist_spread", r.certificate.equidist_spread},
                           {"patterns_explored", r.certificate.patterns_explored}};
    cert["lower_bound"] = r.certificate.lower_bound ? nlohmann::json(*r.certificate.lower_bound) : nlohmann::json(nullptr);
    return {{"objective", r.objective}, {"certificate", cert}};
}

/// One bit per (hidden layer ℓ, unit j, data point i); bit set = unit active.
/// Bit position ((ℓ−1)·d + j)·n + i, so patterns enumerate in lexicographic
/// order of their integer encoding.
class ActivationPattern {
public:
    ActivationPattern(const Architecture& arch, std::size_t n, std::uint64_t bits) : arch_(arch), n_(n), bits_(bits) {}

    bool active(int layer, int unit, std::size_t point) const {
        const std::size_t pos = (static_cast<std::size_t>(layer - 1) * arch_.width + unit) * n_ + point;
        return (bits_ >> pos) & 1u;
    }

    /// True when some data point has every unit of some hidden layer inactive;
    /// the homogeneous network then outputs 0, contradicting |y| ≥ 1.
    bool prunable() const {
        for (int l = 1; l < arch_.depth; ++l)
            for (std::size_t i = 0; i < n_; ++i) {
                bool any = false;
                for (int j = 0; j < arch_.width && !any; ++j) any = active(l, j, i);
                if (!any) return true;
            }
        return false;
    }

    /// Gate matrices (d × n) for each hidden layer.
    std::vector<Matrix> masks() const {
        std::vector<Matrix> out;
        for (int l = 1; l < arch_.depth; ++l) {
            Matrix m(arch_.width, n_);
            for (int j = 0; j < arch_.width; ++j)
                for (std::size_t i = 0; i < n_; ++i) m(j, i) = active(l, j, i) ? 1.0 : 0.0;
            out.push_back(std::move(m));
        }
        return out;
    }

    std::uint64_t bits() const noexcept { return bits_; }

private:
    Architecture arch_;
    std::size_t n_;
    std::uint64_t bits_;
};

/// Number of pattern bits, (L−1)·d·n.
inline std::uint64_t pattern_bit_count(const Architecture& arch, std::size_t n) {
    return static_cast<std::uint64_t>(arch.hidden_units()) * n;
}

/// Non-prunable patterns in enumeration order.
inline std::vector<std::uint64_t> enumerate_patterns(const Architecture& arch, std::size_t n, std::uint64_t max_patterns) {
    const std::uint64_t bits = pattern_bit_count(arch, n);
    if (bits >= 63 || (std::uint64_t{1} << bits) > max_patterns)
        throw CapacityError("brute_force_oracle: 2^" + std::to_string(bits) + " activation patterns exceed the guard of " +
                            std::to_string(max_patterns));
    std::vector<std::uint64_t> out;
    for (std::uint64_t b = 0; b < (std::uint64_t{1} << bits); ++b)
        if (!ActivationPattern(arch, n, b).prunable()) out.push_back(b);
    return out;
}

namespace detail {

// min ‖θ‖² + ρ·‖r(θ)‖² for the network with fixed ReLU gates, where
// r_i = N_masked(x_i; θ) − y_i.
class MaskedProblem {
public:
    MaskedProblem(const Architecture& arch, const Dataset& data, std::vector<Matrix> masks)
        : arch_(arch), x_(inputs_as_columns(data)), y_(data.labels), masks_(std::move(masks)),
          work_(NetworkParams::zeros(arch).weights()) {}

    std::size_t dim() const { return arch_.parameter_count(); }
    std::size_t points() const { return y_.size(); }

    Vector residuals(std::span<const double> theta) {
        unflatten_into(theta, work_);
        const auto tr = forward_batch(work_, x_, &masks_);
        Vector r(y_.size());
        for (std::size_t t = 0; t < y_.size(); ++t) r[t] = tr.post.back()(0, t) - y_[t];
        return r;
    }

    double objective(std::span<const double> theta, double rho) {
        const Vector r = residuals(theta);
        return dot(theta, theta) + rho * dot(r, r);
    }

    Vector gradient(std::span<const double> theta, double rho) {
        unflatten_into(theta, work_);
        const auto tr = forward_batch(work_, x_, &masks_);
        Vector cot(y_.size());
        for (std::size_t t = 0; t < y_.size(); ++t) cot[t] = 2.0 * rho * (tr.post.back()(0, t) - y_[t]);
        Vector g = flatten(backward_batch(work_, tr, cot, &masks_));
        for (std::size_t q = 0; q < g.size(); ++q) g[q] += 2.0 * theta[q];
        return g;
    }

    Matrix jacobian(std::span<const double> theta) {
        unflatten_into(theta, work_);
        const auto tr = forward_batch(work_, x_, &masks_);
        Matrix jac(y_.size(), dim());
        Vector e(y_.size());
        for (std::size_t t = 0; t < y_.size(); ++t) {
            std::fill(e.begin(), e.end(), 0.0);
            e[t] = 1.0;
            const Vector g = flatten(backward_batch(work_, tr, e, &masks_));
            for (std::size_t q = 0; q < g.size(); ++q) jac(t, q) = g[q];
        }
        return jac;
    }

    /// Central-difference Hessian of the penalised objective from exact gradients.
    Matrix hessian(std::span<const double> theta, double rho) {
        const std::size_t p = dim();
        Matrix h(p, p);
        Vector probe(theta.begin(), theta.end());
        for (std::size_t q = 0; q < p; ++q) {
            const double step = 1e-6 * std::max(1.0, std::abs(theta[q]));
            probe[q] = theta[q] + step;
            const Vector gp = gradient(probe, rho);
            probe[q] = theta[q] - step;
            const Vector gm = gradient(probe, rho);
            probe[q] = theta[q];
            for (std::size_t a = 0; a < p; ++a) h(a, q) = (gp[a] - gm[a]) / (2.0 * step);
        }
        for (std::size_t a = 0; a < p; ++a)
            for (std::size_t b = a + 1; b < p; ++b) {
                const double s = 0.5 * (h(a, b) + h(b, a));
                h(a, b) = h(b, a) = s;
            }
        return h;
    }

private:
    Architecture arch_;
    Matrix x_;
    Vector y_;
    std::vector<Matrix> masks_;
    std::vector<Matrix> work_;
};

// Damped Newton on the penalised objective; the damping μ is raised until the
// shifted Hessian is positive definite and the step decreases the objective.
inline void minimize_penalized(MaskedProblem& prob, Vector& theta, double rho, int iterations) {
    double f = prob.objective(theta, rho);
    double mu = 1e-6;
    for (int it = 0; it < iterations; ++it) {
        const Vector g = prob.gradient(theta, rho);
        if (norm2(g) <= 1e-13 * (1.0 + f)) return;
        const Matrix h = prob.hessian(theta, rho);
        bool accepted = false;
        for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
            Matrix shifted = h;
            for (std::size_t a = 0; a < shifted.rows(); ++a) shifted(a, a) += mu;
            Vector step;
            try {
                step = cholesky_solve(shifted, scaled(g, -1.0));
            } catch (const NumericalError&) {
                mu = std::max(mu * 10.0, 1e-6);
                continue;
            }
            Vector trial = theta;
            for (std::size_t q = 0; q < trial.size(); ++q) trial[q] += step[q];
            const double ft = prob.objective(trial, rho);
            if (std::isfinite(ft) && ft <= f) {
                const double dx = norm2(step);
                theta = std::move(trial);
                const double drop = f - ft;
                f = ft;
                mu = std::max(mu / 10.0, 1e-12);
                accepted = true;
                if (dx <= 1e-13 * (1.0 + norm2(theta)) || drop <= 1e-16 * f) return;
            } else {
                mu = std::max(mu * 10.0, 1e-6);
            }
        }
        if (!accepted) return;
    }
}

// Minimum-norm Gauss–Newton corrections δ = −Jᵀ(JJᵀ)⁻¹r onto r(θ) = 0.
inline void project_to_constraints(MaskedProblem& prob, Vector& theta) {
    for (int it = 0; it < 8; ++it) {
        const Vector r = prob.residuals(theta);
        if (norm2(r) <= 1e-15) return;
        const Matrix jac = prob.jacobian(theta);
        const std::size_t n = jac.rows();
        Matrix jjt(n, n);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) jjt(a, b) = dot(jac.row(a), jac.row(b));
        double tr = 0.0;
        for (std::size_t a = 0; a < n; ++a) tr += jjt(a, a);
        for (std::size_t a = 0; a < n; ++a) jjt(a, a) += 1e-14 * tr + 1e-300;
        Vector lam;
        try {
            lam = cholesky_solve(jjt, r);
        } catch (const NumericalError&) {
            return;
        }
        for (std::size_t q = 0; q < theta.size(); ++q)
            for (std::size_t t = 0; t < n; ++t) theta[q] -= jac(t, q) * lam[t];
    }
}

inline bool consistent_with_pattern(const NetworkParams& params, const Dataset& data, const ActivationPattern& pattern,
                                    double tol) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto trace = forward(params, data.inputs[i]).trace;
        for (int l = 1; l < params.depth(); ++l) {
            const Vector& h = trace.pre[l - 1];
            double scale = 1.0;
            for (double e : h) scale = std::max(scale, std::abs(e));
            for (int j = 0; j < params.arch().width; ++j) {
                const bool on = pattern.active(l, j, i);
                if (on && h[j] < -tol * scale) return false;
                if (!on && h[j] > tol * scale) return false;
            }
        }
    }
    return true;
}

}  // namespace detail

/// Exact minimum-norm interpolation for tiny architectures.  Every
/// non-prunable ReLU activation pattern is solved as a smooth
/// equality-constrained problem by a multi-start quadratic-penalty method; a
/// solution counts only if it is consistent with its own pattern and the real
/// ReLU network interpolates.  Returns the global best (first found on ties).
inline OracleResult brute_force_oracle(const Architecture& arch, const Dataset& data, const BruteForceConfig& cfg) {
    arch.validate();
    cfg.validate();
    data.validate();
    if (data.input_dim() != static_cast<std::size_t>(arch.input_dim))
        throw InputError("brute_force_oracle: dataset dimension does not match the architecture");

    const auto patterns = enumerate_patterns(arch, data.size(), cfg.max_patterns);
    std::optional<NetworkParams> best;
    double best_obj = std::numeric_limits<double>::infinity();

    for (std::size_t pi = 0; pi < patterns.size(); ++pi) {
        const ActivationPattern pattern(arch, data.size(), patterns[pi]);
        detail::MaskedProblem prob(arch, data, pattern.masks());
        for (int r = 0; r < cfg.restarts; ++r) {
            std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(patterns[pi]), static_cast<std::uint64_t>(r)};
            std::mt19937_64 rng(seq);
            Vector theta = gaussian_init(arch, rng).flatten();
            double rho = cfg.initial_penalty;
            for (int s = 0; s < cfg.penalty_stages; ++s, rho *= cfg.penalty_growth)
                detail::minimize_penalized(prob, theta, rho, cfg.newton_iterations);
            detail::project_to_constraints(prob, theta);
            if (!all_finite(theta)) continue;

            NetworkParams cand = NetworkParams::unflatten(arch, theta);
            if (interpolation_residual(cand, data) > cfg.feasibility_tol) continue;
            if (!detail::consistent_with_pattern(cand, data, pattern, cfg.consistency_tol)) continue;
            const double obj = squared_norm(cand);
            if (obj < best_obj * (1.0 - 1e-12)) {
                best_obj = obj;
                best = std::move(cand);
            }
        }
    }
    if (!best) throw InfeasibilityError("brute_force_oracle: no activation pattern yielded a consistent interpolant");

    OracleResult res{*best, best_obj, {}};
    res.certificate.patterns_explored = patterns.size();
    res.certificate.equidist_spread = check_equidistribution(*best, 0.0).spread;
    if (auto toy = match_toy_family(arch, data)) res.certificate.lower_bound = toy_norm_lower_bound(toy->first, toy->second);
    return res;
}

}  // namespace minstab
