#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "minstab/error.hpp"
#include "minstab/matrix.hpp"

namespace minstab {

/// Thin singular value decomposition m = U·diag(s)·Vᵀ with r = min(rows, cols)
/// singular triplets.
///
/// Singular values are sorted descending.  Each pair (uⱼ, vⱼ) is signed so that
/// the entry of vⱼ with the largest magnitude is positive (lowest index wins
/// ties), which makes the decomposition deterministic up to genuinely repeated
/// singular values.
struct SvdResult {
    Vector singular_values;
    Matrix left;   // rows × r, orthonormal columns
    Matrix right;  // cols × r, orthonormal columns
    /// Set when s₁ − s₂ < 1e-8·s₁: the leading right vector is ill-conditioned.
    bool near_degenerate = false;

    static constexpr double kRankTolerance = 1e-12;
    static constexpr double kDegeneracyGap = 1e-8;

    Vector left_vector(std::size_t j) const { return left.column(j); }
    Vector right_vector(std::size_t j) const { return right.column(j); }

    /// Number of singular values above kRankTolerance·s₁.
    std::size_t rank() const {
        if (singular_values.empty() || singular_values.front() == 0.0) return 0;
        const double cut = kRankTolerance * singular_values.front();
        return static_cast<std::size_t>(
            std::count_if(singular_values.begin(), singular_values.end(), [cut](double s) { return s > cut; }));
    }

    Matrix reconstruct() const {
        Matrix out(left.rows(), right.rows());
        for (std::size_t j = 0; j < singular_values.size(); ++j)
            for (std::size_t a = 0; a < left.rows(); ++a) {
                const double us = left(a, j) * singular_values[j];
                for (std::size_t b = 0; b < right.rows(); ++b) out(a, b) += us * right(b, j);
            }
        return out;
    }
};

namespace detail {

// Columns of `cols` are orthonormal except those flagged in `missing`, which are
// rebuilt by Gram–Schmidt against the standard basis.
inline void complete_orthonormal(std::vector<Vector>& cols, const std::vector<bool>& missing) {
    const std::size_t m = cols.empty() ? 0 : cols.front().size();
    std::size_t next_basis = 0;
    for (std::size_t j = 0; j < cols.size(); ++j) {
        if (!missing[j]) continue;
        for (; next_basis < m; ++next_basis) {
            Vector cand(m, 0.0);
            cand[next_basis] = 1.0;
            for (int pass = 0; pass < 2; ++pass)
                for (std::size_t o = 0; o < cols.size(); ++o) {
                    if (o == j || (missing[o] && o > j)) continue;
                    const double proj = dot(cand, cols[o]);
                    for (std::size_t i = 0; i < m; ++i) cand[i] -= proj * cols[o][i];
                }
            const double nrm = norm2(cand);
            if (nrm > 1e-8) {
                for (auto& c : cand) c /= nrm;
                cols[j] = std::move(cand);
                ++next_basis;
                break;
            }
        }
    }
}

// One-sided (Hestenes) Jacobi on a tall matrix (rows ≥ cols).  Returns the
// decomposition without the sign convention applied.
inline SvdResult jacobi_svd_tall(const Matrix& a) {
    constexpr int kMaxSweeps = 100;
    constexpr double kOffDiagonalTol = 1e-12;

    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    std::vector<Vector> u(n, Vector(m));
    std::vector<Vector> v(n, Vector(n, 0.0));
    for (std::size_t j = 0; j < n; ++j) {
        u[j] = a.column(j);
        v[j][j] = 1.0;
    }

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        double worst = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    alpha += u[p][i] * u[p][i];
                    beta += u[q][i] * u[q][i];
                    gamma += u[p][i] * u[q][i];
                }
                if (gamma == 0.0 || alpha == 0.0 || beta == 0.0) continue;
                const double ratio = std::abs(gamma) / std::sqrt(alpha * beta);
                worst = std::max(worst, ratio);
                if (ratio < 1e-15) continue;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double up = u[p][i], uq = u[q][i];
                    u[p][i] = c * up - s * uq;
                    u[q][i] = s * up + c * uq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v[p][i], vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        if (worst < kOffDiagonalTol) break;
    }

    Vector sv(n);
    for (std::size_t j = 0; j < n; ++j) sv[j] = norm2(u[j]);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sv[x] > sv[y]; });

    const double s_max = n ? sv[order.front()] : 0.0;
    std::vector<Vector> uc(n), vc(n);
    Vector s_sorted(n);
    std::vector<bool> missing(n, false);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        s_sorted[j] = sv[src];
        vc[j] = v[src];
        if (sv[src] > 1e-14 * s_max && sv[src] > 0.0) {
            uc[j] = scaled(u[src], 1.0 / sv[src]);
        } else {
            uc[j] = Vector(m, 0.0);
            missing[j] = true;
        }
    }
    complete_orthonormal(uc, missing);

    SvdResult out;
    out.singular_values = std::move(s_sorted);
    out.left = Matrix(m, n);
    out.right = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < m; ++i) out.left(i, j) = uc[j][i];
        for (std::size_t i = 0; i < n; ++i) out.right(i, j) = vc[j][i];
    }
    return out;
}

}  // namespace detail

inline SvdResult svd(const Matrix& m) {
    if (m.size() == 0) throw InputError("svd: empty matrix");
    if (!m.all_finite()) throw InputError("svd: non-finite entries");

    SvdResult out;
    if (m.rows() >= m.cols()) {
        out = detail::jacobi_svd_tall(m);
    } else {
        SvdResult t = detail::jacobi_svd_tall(m.transposed());
        out.singular_values = std::move(t.singular_values);
        out.left = std::move(t.right);
        out.right = std::move(t.left);
    }

    for (std::size_t j = 0; j < out.singular_values.size(); ++j) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < out.right.rows(); ++i) {
            const double mag = std::abs(out.right(i, j));
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        if (out.right(arg, j) < 0.0) {
            for (std::size_t i = 0; i < out.right.rows(); ++i) out.right(i, j) = -out.right(i, j);
            for (std::size_t i = 0; i < out.left.rows(); ++i) out.left(i, j) = -out.left(i, j);
        }
    }

    const auto& s = out.singular_values;
    out.near_degenerate = s.size() >= 2 && s[0] > 0.0 && (s[0] - s[1]) < SvdResult::kDegeneracyGap * s[0];
    return out;
}

/// Entrywise ‖m‖_F.
inline double frobenius_norm(const Matrix& m) {
    if (!m.all_finite()) throw InputError("frobenius_norm: non-finite entries");
    double acc = 0.0;
    for (double e : m.entries()) acc += e * e;
    return std::sqrt(acc);
}

inline double spectral_norm(const Matrix& m) { return svd(m).singular_values.front(); }

/// ‖m‖_F / ‖m‖₂, in [1, √min(rows, cols)].
inline double stable_rank(const Matrix& m) {
    const double fro = frobenius_norm(m);
    if (fro == 0.0) throw DomainError("stable_rank: undefined for the zero matrix");
    const double spec = spectral_norm(m);
    return std::clamp(fro / spec, 1.0, std::sqrt(static_cast<double>(std::min(m.rows(), m.cols()))));
}

/// Solves a·x = b for symmetric positive definite `a` by Cholesky.
inline Vector cholesky_solve(Matrix a, Vector b) {
    const std::size_t n = a.rows();
    if (a.cols() != n || b.size() != n) throw InputError("cholesky_solve: dimension mismatch");
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
        if (!(d > 0.0) || !std::isfinite(d)) throw NumericalError("cholesky_solve: matrix not positive definite");
        const double ljj = std::sqrt(d);
        a(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
            a(i, j) = s / ljj;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a(i, k) * b[k];
        b[i] = s / a(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= a(k, i) * b[k];
        b[i] = s / a(i, i);
    }
    return b;
}

}  // namespace minstab
