#pragma once

#include <vector>

#include "minstab/dataset.hpp"
#include "minstab/matrix.hpp"

// Batched forward/backward passes shared by the trainer and the pattern oracle.
// Activations are stored unit-major: a layer's batch is a (units × n) matrix
// whose column t belongs to data point t.

namespace minstab::detail {

inline Matrix inputs_as_columns(const Dataset& data) {
    Matrix x(data.input_dim(), data.size());
    for (std::size_t t = 0; t < data.size(); ++t)
        for (std::size_t j = 0; j < data.input_dim(); ++j) x(j, t) = data.inputs[t][j];
    return x;
}

struct BatchTrace {
    std::vector<Matrix> pre;   // pre[ℓ-1] = H_ℓ
    std::vector<Matrix> post;  // post[ℓ] = Y_ℓ, post[0] = X
};

/// Forward pass on a batch.  With `masks` (one 0/1 matrix per hidden layer) the
/// ReLU is replaced by the fixed gate H ⊙ M.
inline BatchTrace forward_batch(const std::vector<Matrix>& w, const Matrix& x, const std::vector<Matrix>* masks = nullptr) {
    BatchTrace tr;
    tr.post.push_back(x);
    const std::size_t depth = w.size();
    for (std::size_t l = 0; l < depth; ++l) {
        Matrix h = matmul(w[l], tr.post.back());
        Matrix y = h;
        if (l + 1 < depth) {
            auto ye = y.entries();
            if (masks) {
                const auto me = (*masks)[l].entries();
                for (std::size_t i = 0; i < ye.size(); ++i) ye[i] = me[i] != 0.0 ? ye[i] : 0.0;
            } else {
                for (auto& e : ye) e = e > 0.0 ? e : 0.0;
            }
        }
        tr.pre.push_back(std::move(h));
        tr.post.push_back(std::move(y));
    }
    return tr;
}

/// Gradient of Σ_t g_t·N(x_t) with respect to every weight, given the output
/// cotangent g (length n).
inline std::vector<Matrix> backward_batch(const std::vector<Matrix>& w, const BatchTrace& tr, std::span<const double> g,
                                          const std::vector<Matrix>* masks = nullptr) {
    const std::size_t depth = w.size();
    const std::size_t n = tr.post.front().cols();
    std::vector<Matrix> grads(depth);
    Matrix delta(1, n, Vector(g.begin(), g.end()));
    for (std::size_t l = depth; l-- > 0;) {
        const Matrix& y_prev = tr.post[l];
        Matrix gw(w[l].rows(), w[l].cols());
        for (std::size_t i = 0; i < gw.rows(); ++i) {
            const auto di = delta.row(i);
            for (std::size_t j = 0; j < gw.cols(); ++j) {
                const auto yj = y_prev.row(j);
                double acc = 0.0;
                for (std::size_t t = 0; t < n; ++t) acc += di[t] * yj[t];
                gw(i, j) = acc;
            }
        }
        grads[l] = std::move(gw);
        if (l == 0) break;
        Matrix back(w[l].cols(), n);
        for (std::size_t i = 0; i < w[l].rows(); ++i) {
            const auto di = delta.row(i);
            for (std::size_t k = 0; k < w[l].cols(); ++k) {
                const double wik = w[l](i, k);
                if (wik == 0.0) continue;
                for (std::size_t t = 0; t < n; ++t) back(k, t) += wik * di[t];
            }
        }
        const Matrix& h_prev = tr.pre[l - 1];
        auto be = back.entries();
        if (masks) {
            const auto me = (*masks)[l - 1].entries();
            for (std::size_t i = 0; i < be.size(); ++i)
                if (me[i] == 0.0) be[i] = 0.0;
        } else {
            const auto he = h_prev.entries();
            for (std::size_t i = 0; i < be.size(); ++i)
                if (!(he[i] > 0.0)) be[i] = 0.0;
        }
        delta = std::move(back);
    }
    return grads;
}

inline Vector flatten(const std::vector<Matrix>& w) {
    Vector out;
    for (const auto& m : w) out.insert(out.end(), m.entries().begin(), m.entries().end());
    return out;
}

inline void unflatten_into(std::span<const double> flat, std::vector<Matrix>& w) {
    std::size_t off = 0;
    for (auto& m : w) {
        auto e = m.entries();
        std::copy(flat.begin() + off, flat.begin() + off + e.size(), e.begin());
        off += e.size();
    }
}

}  // namespace minstab::detail
