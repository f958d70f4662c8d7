#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "qwalk/errors.hpp"
#include "qwalk/geometry.hpp"

namespace qwalk {

using cplx = std::complex<double>;
using SparseOp = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;
using Coin = Eigen::Matrix2cd;

enum Spin : int { Up = 0, Down = 1 };

/// Basis layout: site-major with spin as the fastest index.
inline std::size_t basis_index(std::size_t site, int spin) noexcept {
    return 2 * site + static_cast<std::size_t>(spin);
}

struct CoinParameters {
    double alpha = std::numbers::pi / 4;
    double beta = std::numbers::pi / 4;
    /// Phase on the second row of both coins; breaks the reflection symmetry
    /// of the spectrum about the real axis.
    double phase = std::numbers::pi / 4;

    void validate() const {
        constexpr double eps = 1e-12;
        const auto in_range = [](double a) {
            return std::isfinite(a) && a >= -eps && a <= std::numbers::pi / 2 + eps;
        };
        if (!in_range(alpha) || !in_range(beta)) {
            throw ConfigError("coin angles must lie in [0, pi/2] (alpha=" + std::to_string(alpha) +
                              ", beta=" + std::to_string(beta) + ")");
        }
        if (!std::isfinite(phase)) throw ConfigError("coin phase must be finite");
    }
};

/// [[cos t, sin t], [-e^{i phi} sin t, e^{i phi} cos t]]
inline Coin coin_matrix(double angle, double phase) {
    const cplx e = std::polar(1.0, phase);
    Coin c;
    c << std::cos(angle), std::sin(angle), -e * std::sin(angle), e * std::cos(angle);
    return c;
}

namespace detail {

inline SparseOp permutation_from_targets(const std::vector<std::size_t>& target) {
    const auto dim = static_cast<Eigen::Index>(target.size());
    std::vector<Eigen::Triplet<cplx>> trips;
    trips.reserve(target.size());
    for (std::size_t col = 0; col < target.size(); ++col) {
        trips.emplace_back(static_cast<Eigen::Index>(target[col]), static_cast<Eigen::Index>(col),
                           cplx{1.0, 0.0});
    }
    SparseOp op(dim, dim);
    op.setFromTriplets(trips.begin(), trips.end());
    return op;
}

}  // namespace detail

/// Horizontal step: up-spins move right, down-spins move left; at the last
/// column of a row (w(n)) an up-spin flips to down in place, at column 0 a
/// down-spin flips to up.
inline SparseOp build_shift_horizontal(const GridGeometry& g) {
    std::vector<std::size_t> target(2 * g.site_count());
    for (std::size_t s = 0; s < g.site_count(); ++s) {
        const auto [m, n] = g.site(s);
        const int right = g.shape_w(n);
        target[basis_index(s, Up)] =
            m < right ? basis_index(g.require_index(m + 1, n), Up) : basis_index(s, Down);
        target[basis_index(s, Down)] =
            m > 0 ? basis_index(g.require_index(m - 1, n), Down) : basis_index(s, Up);
    }
    return detail::permutation_from_targets(target);
}

/// Vertical step, same rule with the top row given by f(m).
inline SparseOp build_shift_vertical(const GridGeometry& g) {
    std::vector<std::size_t> target(2 * g.site_count());
    for (std::size_t s = 0; s < g.site_count(); ++s) {
        const auto [m, n] = g.site(s);
        const int top = g.shape_f(m);
        target[basis_index(s, Up)] =
            n < top ? basis_index(g.require_index(m, n + 1), Up) : basis_index(s, Down);
        target[basis_index(s, Down)] =
            n > 0 ? basis_index(g.require_index(m, n - 1), Down) : basis_index(s, Up);
    }
    return detail::permutation_from_targets(target);
}

/// I (x) C: the same 2x2 coin on every site.
inline SparseOp build_coin_layer(std::size_t site_count, const Coin& coin) {
    std::vector<Eigen::Triplet<cplx>> trips;
    trips.reserve(4 * site_count);
    for (std::size_t s = 0; s < site_count; ++s) {
        for (int r = 0; r < 2; ++r) {
            for (int c = 0; c < 2; ++c) {
                if (coin(r, c) != cplx{}) {
                    trips.emplace_back(static_cast<Eigen::Index>(basis_index(s, r)),
                                       static_cast<Eigen::Index>(basis_index(s, c)), coin(r, c));
                }
            }
        }
    }
    const auto dim = static_cast<Eigen::Index>(2 * site_count);
    SparseOp op(dim, dim);
    op.setFromTriplets(trips.begin(), trips.end());
    return op;
}

/// Stable 64-bit FNV-1a hash of the operator parameters, used to key caches
/// and stamp exported files.
inline std::uint64_t parameter_hash(const GridGeometry& g, const CoinParameters& coins) {
    std::uint64_t h = 1469598103934665603ull;
    const auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xffu;
            h *= 1099511628211ull;
        }
    };
    mix(static_cast<std::uint64_t>(g.kind()));
    mix(static_cast<std::uint64_t>(g.m_R()));
    mix(static_cast<std::uint64_t>(g.n_U()));
    mix(std::bit_cast<std::uint64_t>(coins.alpha));
    mix(std::bit_cast<std::uint64_t>(coins.beta));
    mix(std::bit_cast<std::uint64_t>(coins.phase));
    return h;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// One time step Q = W_n (I (x) C2) W_m (I (x) C1) on the spin (x) position space.
class WalkOperator {
public:
    WalkOperator(GridGeometry geometry, CoinParameters coins)
        : geometry_(std::make_shared<const GridGeometry>(std::move(geometry))), coins_(coins) {
        coins_.validate();
        const auto& g = *geometry_;
        coin1_ = build_coin_layer(g.site_count(), coin_matrix(coins_.alpha, coins_.phase));
        coin2_ = build_coin_layer(g.site_count(), coin_matrix(coins_.beta, coins_.phase));
        shift_m_ = build_shift_horizontal(g);
        shift_n_ = build_shift_vertical(g);
        SparseOp tmp = shift_m_ * coin1_;
        tmp = coin2_ * tmp;
        matrix_ = shift_n_ * tmp;
        matrix_.makeCompressed();
    }

    const GridGeometry& geometry() const noexcept { return *geometry_; }
    std::shared_ptr<const GridGeometry> geometry_ptr() const noexcept { return geometry_; }
    const CoinParameters& coins() const noexcept { return coins_; }
    Eigen::Index dimension() const noexcept { return matrix_.rows(); }

    const SparseOp& matrix() const noexcept { return matrix_; }
    const SparseOp& coin1() const noexcept { return coin1_; }
    const SparseOp& coin2() const noexcept { return coin2_; }
    const SparseOp& shift_m() const noexcept { return shift_m_; }
    const SparseOp& shift_n() const noexcept { return shift_n_; }

    CMatrix to_dense() const { return CMatrix(matrix_); }

    std::uint64_t hash() const { return parameter_hash(*geometry_, coins_); }

private:
    std::shared_ptr<const GridGeometry> geometry_;
    CoinParameters coins_;
    SparseOp coin1_;
    SparseOp coin2_;
    SparseOp shift_m_;
    SparseOp shift_n_;
    SparseOp matrix_;
};

inline WalkOperator build_step_operator(const GridGeometry& g, const CoinParameters& coins) {
    return WalkOperator(g, coins);
}

/// max |(A^dagger A - I)_ij|
inline double unitarity_defect(const SparseOp& a) {
    const SparseOp prod = SparseOp(a.adjoint()) * a;
    double worst = 0.0;
    for (Eigen::Index r = 0; r < prod.outerSize(); ++r) {
        bool saw_diag = false;
        for (SparseOp::InnerIterator it(prod, r); it; ++it) {
            cplx v = it.value();
            if (it.col() == r) {
                v -= 1.0;
                saw_diag = true;
            }
            worst = std::max(worst, std::abs(v));
        }
        if (!saw_diag) worst = std::max(worst, 1.0);
    }
    return worst;
}

/// Coordinate-triplet dump: a header line then "row col re im" per entry.
inline void write_triplets(std::ostream& os, const WalkOperator& op) {
    const auto& g = op.geometry();
    char line[128];
    os << "# dimension " << op.dimension() << " hash " << hash_hex(op.hash()) << " kind "
       << to_string(g.kind()) << " m_R " << g.m_R() << " n_U " << g.n_U() << '\n';
    const auto& a = op.matrix();
    for (Eigen::Index r = 0; r < a.outerSize(); ++r) {
        for (SparseOp::InnerIterator it(a, r); it; ++it) {
            std::snprintf(line, sizeof line, "%ld %ld %.17g %.17g\n", static_cast<long>(it.row()),
                          static_cast<long>(it.col()), it.value().real(), it.value().imag());
            os << line;
        }
    }
}

}  // namespace qwalk
