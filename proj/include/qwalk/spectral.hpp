#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <lapacke.h>

#include "qwalk/errors.hpp"
#include "qwalk/walker.hpp"

namespace qwalk {

constexpr double two_pi = 2.0 * std::numbers::pi;

/// Phase in [0, 2 pi).
inline double wrap_phase(double theta) {
    double t = std::fmod(theta, two_pi);
    if (t < 0) t += two_pi;
    if (t >= two_pi) t = 0.0;
    return t;
}

/// Phase in (-pi, pi], the convention used when labelling eigenstates.
inline double signed_phase(double theta) {
    double t = wrap_phase(theta);
    return t > std::numbers::pi ? t - two_pi : t;
}

struct SpectralDecomposition {
    std::vector<double> eigenphases;  // ascending, in [0, 2 pi)
    CMatrix eigenvectors;             // column j pairs with eigenphases[j]
    std::vector<double> residuals;    // |Q v - e^{i theta} v|

    std::size_t size() const noexcept { return eigenphases.size(); }
    CVector eigenvector(std::size_t j) const {
        return eigenvectors.col(static_cast<Eigen::Index>(j));
    }
};

struct DiagonalizeOptions {
    Eigen::Index dimension_cap = 10000;
    double tolerance = 1e-8;
};

/// Full eigendecomposition of the one-step unitary.
///
/// Q is normal, so its complex Schur form is diagonal and the Schur vectors
/// are an orthonormal eigenbasis even inside degenerate clusters.
inline SpectralDecomposition diagonalize(const WalkOperator& op, DiagonalizeOptions opts = {}) {
    const Eigen::Index n = op.dimension();
    if (n > opts.dimension_cap) {
        throw ConfigError("operator dimension " + std::to_string(n) + " exceeds the cap of " +
                          std::to_string(opts.dimension_cap));
    }
    if (n == 0) throw ConfigError("cannot diagonalize an empty operator");

    CMatrix a = op.to_dense();
    CMatrix schur_vectors(n, n);
    std::vector<lapack_complex_double> w(static_cast<std::size_t>(n));
    lapack_int sdim = 0;
    const lapack_int info = LAPACKE_zgees(
        LAPACK_COL_MAJOR, 'V', 'N', nullptr, static_cast<lapack_int>(n),
        reinterpret_cast<lapack_complex_double*>(a.data()), static_cast<lapack_int>(n), &sdim,
        w.data(), reinterpret_cast<lapack_complex_double*>(schur_vectors.data()),
        static_cast<lapack_int>(n));
    if (info != 0) {
        throw NumericalError("zgees failed with info=" + std::to_string(info));
    }

    std::vector<double> raw_phase(static_cast<std::size_t>(n));
    std::vector<cplx> lambda(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) {
        lambda[j] = a(j, j);
        raw_phase[j] = wrap_phase(std::arg(lambda[j]));
    }
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return raw_phase[x] < raw_phase[y]; });

    SpectralDecomposition out;
    out.eigenphases.resize(static_cast<std::size_t>(n));
    out.residuals.resize(static_cast<std::size_t>(n));
    out.eigenvectors.resize(n, n);

    double worst_modulus = 0.0;
    double worst_residual = 0.0;
    std::size_t worst_index = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto src = static_cast<Eigen::Index>(order[k]);
        CVector v = schur_vectors.col(src);
        v /= v.norm();
        // fix the global phase: largest component real and positive
        Eigen::Index pivot = 0;
        v.cwiseAbs().maxCoeff(&pivot);
        v *= std::conj(v(pivot)) / std::abs(v(pivot));

        const cplx eig = std::polar(1.0, raw_phase[order[k]]);
        const double res = (op.matrix() * v - eig * v).norm();
        const double mod = std::abs(std::abs(lambda[order[k]]) - 1.0);

        out.eigenphases[k] = raw_phase[order[k]];
        out.residuals[k] = res;
        out.eigenvectors.col(static_cast<Eigen::Index>(k)) = v;

        worst_modulus = std::max(worst_modulus, mod);
        if (res > worst_residual) {
            worst_residual = res;
            worst_index = k;
        }
    }
    if (worst_modulus > opts.tolerance || worst_residual > opts.tolerance) {
        throw NumericalError("eigendecomposition failed residual check: max | |lambda|-1 | = " +
                             std::to_string(worst_modulus) + ", max residual = " +
                             std::to_string(worst_residual) + " at sorted index " +
                             std::to_string(worst_index));
    }
    return out;
}

/// Nearest-neighbour spacings on the unit circle, including the wrap-around
/// gap, rescaled by N / (2 pi) so that their mean is one.
inline std::vector<double> unfold_spacings(std::span<const double> phases) {
    if (phases.size() < 2) throw ConfigError("unfolding needs at least two eigenphases");
    for (std::size_t i = 0; i < phases.size(); ++i) {
        if (!(phases[i] >= 0.0 && phases[i] < two_pi)) {
            throw ConfigError("eigenphases must lie in [0, 2 pi)");
        }
        if (i > 0 && phases[i] < phases[i - 1]) {
            throw ConfigError("eigenphases must be sorted ascending");
        }
    }
    const double n = static_cast<double>(phases.size());
    const double scale = n / two_pi;
    std::vector<double> s(phases.size());
    for (std::size_t i = 0; i + 1 < phases.size(); ++i) s[i] = (phases[i + 1] - phases[i]) * scale;
    s.back() = (phases.front() + two_pi - phases.back()) * scale;
    return s;
}

inline double poisson_pdf(double s) {
    if (s < 0) throw ConfigError("spacing must be non-negative");
    return std::exp(-s);
}

inline double wigner_pdf(double s) {
    if (s < 0) throw ConfigError("spacing must be non-negative");
    return std::numbers::pi / 2 * s * std::exp(-std::numbers::pi * s * s / 4);
}

struct BrodyCoefficients {
    double a;
    double b;
};

inline BrodyCoefficients brody_coefficients(double delta) {
    if (!(delta >= 0.0 && delta <= 1.0)) throw ConfigError("Brody delta must lie in [0, 1]");
    const double b = std::pow(std::tgamma((delta + 2) / (delta + 1)), delta + 1);
    return {(delta + 1) * b, b};
}

/// a s^delta exp(-b s^(delta+1)); delta = 0 is Poisson, delta = 1 is Wigner.
inline double brody_pdf(double s, double delta) {
    if (s < 0) throw ConfigError("spacing must be non-negative");
    const auto [a, b] = brody_coefficients(delta);
    const double sd = delta == 0.0 ? 1.0 : std::pow(s, delta);
    return a * sd * std::exp(-b * sd * s);
}

struct SpacingHistogram {
    std::vector<double> spacings;
    std::vector<double> bin_edges;  // bin_count + 1 entries
    std::vector<double> density;    // integrates to one over the edges
    std::size_t overflow = 0;       // samples above s_max, folded into the last bin

    std::size_t bin_count() const noexcept { return density.size(); }
    double bin_width(std::size_t i) const { return bin_edges[i + 1] - bin_edges[i]; }
    double bin_center(std::size_t i) const { return 0.5 * (bin_edges[i] + bin_edges[i + 1]); }
};

inline SpacingHistogram spacing_histogram(std::span<const double> spacings, int bin_count,
                                          double s_max) {
    if (spacings.empty()) throw ConfigError("spacing histogram needs at least one spacing");
    if (bin_count < 5) throw ConfigError("spacing histogram needs at least 5 bins");
    if (!(s_max > 0.0)) throw ConfigError("spacing histogram needs s_max > 0");

    SpacingHistogram h;
    h.spacings.assign(spacings.begin(), spacings.end());
    const auto bins = static_cast<std::size_t>(bin_count);
    const double width = s_max / bin_count;
    h.bin_edges.resize(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) h.bin_edges[i] = width * static_cast<double>(i);
    h.bin_edges.back() = s_max;

    std::vector<std::size_t> counts(bins, 0);
    for (double s : spacings) {
        if (s < 0) throw ConfigError("spacing must be non-negative");
        if (s >= s_max) {
            ++h.overflow;
            ++counts.back();
            continue;
        }
        auto idx = static_cast<std::size_t>(s / width);
        if (idx >= bins) idx = bins - 1;
        ++counts[idx];
    }
    const double total = static_cast<double>(spacings.size());
    h.density.resize(bins);
    for (std::size_t i = 0; i < bins; ++i) {
        h.density[i] = static_cast<double>(counts[i]) / (total * h.bin_width(i));
    }
    return h;
}

/// sqrt(mean over bins of (density - pdf(bin centre))^2)
inline double rms_error(const SpacingHistogram& h, const std::function<double(double)>& pdf) {
    if (h.density.empty()) throw ConfigError("empty histogram");
    double acc = 0.0;
    for (std::size_t i = 0; i < h.bin_count(); ++i) {
        const double d = h.density[i] - pdf(h.bin_center(i));
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(h.bin_count()));
}

struct BrodyFit {
    double delta = 0.0;
    double rms_error = 0.0;  // of the fitted Brody density
    double rms_wigner = 0.0;
    double rms_poisson = 0.0;
};

/// Least-squares Brody fit: dense scan of delta over [0, 1] with step 1e-3.
inline BrodyFit fit_brody(const SpacingHistogram& h) {
    std::size_t occupied = 0;
    for (double d : h.density) occupied += d > 0.0 ? 1 : 0;
    if (h.bin_count() < 2 || occupied < 2) {
        throw ConfigError("degenerate histogram: need at least two occupied bins to fit");
    }
    BrodyFit fit;
    fit.rms_error = std::numeric_limits<double>::infinity();
    constexpr int steps = 1000;
    for (int i = 0; i <= steps; ++i) {
        const double delta = static_cast<double>(i) / steps;
        const double e = rms_error(h, [delta](double s) { return brody_pdf(s, delta); });
        if (e < fit.rms_error) {
            fit.rms_error = e;
            fit.delta = delta;
        }
    }
    fit.rms_wigner = rms_error(h, wigner_pdf);
    fit.rms_poisson = rms_error(h, poisson_pdf);
    return fit;
}

/// Kolmogorov-Smirnov distance between the empirical distribution of xs and
/// a continuous CDF.
inline double ks_distance(std::vector<double> xs, const std::function<double(double)>& cdf) {
    if (xs.empty()) throw ConfigError("KS distance of an empty sample");
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = cdf(xs[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

}  // namespace qwalk
