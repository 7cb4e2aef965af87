#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "minstab/error.hpp"
#include "minstab/linalg.hpp"
#include "minstab/matrix.hpp"

namespace minstab {

/// Architecture ⟨L, d, d0⟩ of a bias-free fully-connected ReLU network with a
/// scalar output.  Layer ℓ (1-based) maps ℝ^{d_{ℓ-1}} → ℝ^{d_ℓ} with d_L = 1.
struct Architecture {
    int depth = 2;      // L ≥ 2
    int width = 1;      // d ≥ 1
    int input_dim = 1;  // d0 ≥ 1

    void validate() const {
        if (depth < 2) throw InputError("Architecture: depth must be at least 2");
        if (width < 1) throw InputError("Architecture: width must be at least 1");
        if (input_dim < 1) throw InputError("Architecture: input_dim must be at least 1");
    }

    std::size_t layer_rows(int layer) const { return layer == depth ? 1 : static_cast<std::size_t>(width); }
    std::size_t layer_cols(int layer) const {
        return layer == 1 ? static_cast<std::size_t>(input_dim) : static_cast<std::size_t>(width);
    }

    /// Total number of hidden ReLU units, (L−1)·d.
    int hidden_units() const { return (depth - 1) * width; }

    std::size_t parameter_count() const {
        std::size_t total = 0;
        for (int l = 1; l <= depth; ++l) total += layer_rows(l) * layer_cols(l);
        return total;
    }

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Weights θ = (W₁ … W_L).  Shapes are checked against the architecture and
/// every entry must be finite; the object is immutable once built.
class NetworkParams {
public:
    NetworkParams(Architecture arch, std::vector<Matrix> weights) : arch_(arch), weights_(std::move(weights)) {
        arch_.validate();
        if (weights_.size() != static_cast<std::size_t>(arch_.depth))
            throw InputError("NetworkParams: expected " + std::to_string(arch_.depth) + " weight matrices");
        for (int l = 1; l <= arch_.depth; ++l) {
            const Matrix& w = weights_[l - 1];
            if (w.rows() != arch_.layer_rows(l) || w.cols() != arch_.layer_cols(l))
                throw InputError("NetworkParams: layer " + std::to_string(l) + " has the wrong shape");
            if (!w.all_finite()) throw InputError("NetworkParams: layer " + std::to_string(l) + " has non-finite entries");
        }
    }

    /// All-zero parameters of the given architecture.
    static NetworkParams zeros(Architecture arch) {
        arch.validate();
        std::vector<Matrix> w;
        for (int l = 1; l <= arch.depth; ++l) w.emplace_back(arch.layer_rows(l), arch.layer_cols(l));
        return {arch, std::move(w)};
    }

    const Architecture& arch() const noexcept { return arch_; }
    int depth() const noexcept { return arch_.depth; }
    const std::vector<Matrix>& weights() const noexcept { return weights_; }

    /// 1-based layer access, 1 ≤ ℓ ≤ L.
    const Matrix& layer(int l) const {
        if (l < 1 || l > arch_.depth) throw InputError("NetworkParams: layer index out of range");
        return weights_[l - 1];
    }

    NetworkParams with_layer(int l, Matrix w) const {
        auto copy = weights_;
        if (l < 1 || l > arch_.depth) throw InputError("NetworkParams: layer index out of range");
        copy[l - 1] = std::move(w);
        return {arch_, std::move(copy)};
    }

    NetworkParams scaled(double alpha) const {
        auto copy = weights_;
        for (auto& w : copy) w *= alpha;
        return {arch_, std::move(copy)};
    }

    /// Flattened parameters, layer by layer in row-major order.
    Vector flatten() const {
        Vector out;
        out.reserve(arch_.parameter_count());
        for (const auto& w : weights_) out.insert(out.end(), w.entries().begin(), w.entries().end());
        return out;
    }

    static NetworkParams unflatten(const Architecture& arch, std::span<const double> flat) {
        if (flat.size() != arch.parameter_count()) throw InputError("NetworkParams: flat size mismatch");
        std::vector<Matrix> w;
        std::size_t off = 0;
        for (int l = 1; l <= arch.depth; ++l) {
            const std::size_t r = arch.layer_rows(l), c = arch.layer_cols(l);
            w.emplace_back(r, c, Vector(flat.begin() + off, flat.begin() + off + r * c));
            off += r * c;
        }
        return {arch, std::move(w)};
    }

    friend bool operator==(const NetworkParams&, const NetworkParams&) = default;

private:
    Architecture arch_;
    std::vector<Matrix> weights_;
};

/// Pre-activations h₁…h_L and post-activations y₀…y_L of one forward pass
/// (stored 0-based: pre[ℓ−1] = h_ℓ, post[ℓ] = y_ℓ).
struct ActivationTrace {
    std::vector<Vector> pre;
    std::vector<Vector> post;
};

struct ForwardResult {
    double output = 0.0;
    ActivationTrace trace;
};

namespace detail {

inline void check_input(const NetworkParams& params, std::span<const double> x) {
    if (x.size() != static_cast<std::size_t>(params.arch().input_dim))
        throw InputError("network: input has length " + std::to_string(x.size()) + ", expected " +
                         std::to_string(params.arch().input_dim));
    if (!all_finite(x)) throw InputError("network: non-finite input");
}

inline void check_hidden_index(const NetworkParams& params, int k) {
    if (k < 1 || k > params.depth() - 1) throw InputError("network: layer index must satisfy 1 <= k <= L-1");
}

}  // namespace detail

inline ForwardResult forward(const NetworkParams& params, std::span<const double> x) {
    detail::check_input(params, x);
    ForwardResult res;
    res.trace.post.emplace_back(x.begin(), x.end());
    for (int l = 1; l <= params.depth(); ++l) {
        Vector h = matvec(params.layer(l), res.trace.post.back());
        Vector y = l < params.depth() ? relu(h) : h;
        res.trace.pre.push_back(std::move(h));
        res.trace.post.push_back(std::move(y));
    }
    res.output = res.trace.post.back().front();
    return res;
}

/// N(x; θ) without keeping the trace.
inline double predict(const NetworkParams& params, std::span<const double> x) {
    detail::check_input(params, x);
    Vector y(x.begin(), x.end());
    for (int l = 1; l < params.depth(); ++l) y = relu(matvec(params.layer(l), y));
    return matvec(params.layer(params.depth()), y).front();
}

/// N^{1:k−1}(x): the post-activation y_{k−1} (x itself for k = 1).
inline Vector truncated_forward(const NetworkParams& params, std::span<const double> x, int k) {
    detail::check_input(params, x);
    if (k < 1 || k > params.depth()) throw InputError("truncated_forward: layer index must satisfy 1 <= k <= L");
    Vector y(x.begin(), x.end());
    for (int l = 1; l < k; ++l) y = relu(matvec(params.layer(l), y));
    return y;
}

/// Applies ReLU to z (a pre-activation at layer k) and then layers k+1 … L.
inline double tail_forward(const NetworkParams& params, std::span<const double> z, int k) {
    detail::check_hidden_index(params, k);
    if (z.size() != static_cast<std::size_t>(params.arch().width)) throw InputError("tail_forward: z must have length d");
    Vector y = relu(z);
    for (int l = k + 1; l < params.depth(); ++l) y = relu(matvec(params.layer(l), y));
    return matvec(params.layer(params.depth()), y).front();
}

/// Leading right singular vector of a nonzero matrix under the SVD sign convention.
inline Vector leading_right_vector(const Matrix& w) {
    if (w.is_zero()) throw DomainError("leading_right_vector: zero matrix");
    return svd(w).right_vector(0);
}

/// Sub-network f_k(x) = v_kᵀ·N^{1:k−1}(x) with v_k cached at construction.
class SubNetwork {
public:
    SubNetwork(NetworkParams params, int k) : params_(std::move(params)), k_(k) {
        const NetworkParams& p = params_;
        detail::check_hidden_index(p, k);
        if (p.layer(k).is_zero()) throw DomainError("subnetwork: layer " + std::to_string(k) + " is zero");
        direction_ = leading_right_vector(p.layer(k));
    }

    double operator()(std::span<const double> x) const {
        return dot(direction_, truncated_forward(params_, x, k_));
    }

    const Vector& direction() const noexcept { return direction_; }
    int layer() const noexcept { return k_; }

private:
    NetworkParams params_;
    int k_;
    Vector direction_;
};

inline double subnetwork_eval(const NetworkParams& params, std::span<const double> x, int k) {
    return SubNetwork(params, k)(x);
}

struct ParamNorm {
    double total = 0.0;
    Vector per_layer;
};

inline ParamNorm param_norm(const NetworkParams& params) {
    ParamNorm out;
    double sq = 0.0;
    for (const auto& w : params.weights()) {
        const double f = frobenius_norm(w);
        out.per_layer.push_back(f);
        sq += f * f;
    }
    out.total = std::sqrt(sq);
    return out;
}

/// ‖θ‖², the oracle objective.
inline double squared_norm(const NetworkParams& params) {
    double sq = 0.0;
    for (const auto& w : params.weights())
        for (double e : w.entries()) sq += e * e;
    return sq;
}

}  // namespace minstab
