#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "qwalk/dynamics.hpp"
#include "qwalk/errors.hpp"
#include "qwalk/spectral.hpp"

namespace qwalk {

/// Closed interval [lo, hi].
struct Interval {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();

    bool contains(double x) const noexcept { return x >= lo && x <= hi; }
    bool empty() const noexcept { return lo > hi; }
    static Interval all() { return {}; }
};

/// (sum_i |v_i|^4)^{-1} over every site-spin component.
///
/// Vectors within 1e-8 of unit norm are renormalized first; anything further
/// off is rejected.
inline double participation_ratio(const CVector& v) {
    const double nrm = v.norm();
    if (nrm == 0.0) throw NumericalError("participation ratio of the zero vector");
    if (std::abs(nrm - 1.0) > 1e-8) {
        throw NumericalError("participation ratio needs a unit vector (norm = " +
                             std::to_string(nrm) + ")");
    }
    const double inv2 = 1.0 / (nrm * nrm);
    double s = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double p = std::norm(v(i)) * inv2;
        s += p * p;
    }
    return 1.0 / s;
}

struct PRRecord {
    std::size_t index = 0;   // column in the decomposition
    double eigenphase = 0.0; // in (-pi, pi]
    double pr = 0.0;
};

struct PRReport {
    std::vector<PRRecord> records;
    std::size_t dimension = 0;
    double mean = 0.0;
    double median = 0.0;
};

inline PRReport pr_report(const SpectralDecomposition& d) {
    PRReport r;
    r.dimension = static_cast<std::size_t>(d.eigenvectors.rows());
    r.records.reserve(d.size());
    for (std::size_t j = 0; j < d.size(); ++j) {
        r.records.push_back({j, signed_phase(d.eigenphases[j]), participation_ratio(d.eigenvector(j))});
    }
    if (!r.records.empty()) {
        std::vector<double> prs;
        prs.reserve(r.records.size());
        for (const auto& rec : r.records) prs.push_back(rec.pr);
        double sum = 0.0;
        for (double p : prs) sum += p;
        r.mean = sum / static_cast<double>(prs.size());
        std::sort(prs.begin(), prs.end());
        const std::size_t h = prs.size() / 2;
        r.median = prs.size() % 2 ? prs[h] : 0.5 * (prs[h - 1] + prs[h]);
    }
    return r;
}

/// Density histogram over fixed edges.
struct DensityHistogram {
    std::vector<double> bin_edges;
    std::vector<double> density;
    std::vector<std::size_t> counts;

    double bin_width(std::size_t i) const { return bin_edges[i + 1] - bin_edges[i]; }
    double bin_center(std::size_t i) const { return 0.5 * (bin_edges[i] + bin_edges[i + 1]); }

    /// Probability mass of samples in [lo, hi], bins weighted by overlap.
    double mass(double lo, double hi) const {
        double m = 0.0;
        for (std::size_t i = 0; i < density.size(); ++i) {
            const double a = std::max(lo, bin_edges[i]);
            const double b = std::min(hi, bin_edges[i + 1]);
            if (b > a) m += density[i] * (b - a);
        }
        return m;
    }
};

/// PR density histogram on [1, dimension].
inline DensityHistogram pr_histogram(const PRReport& report, int bin_count) {
    if (report.records.empty()) throw ConfigError("PR histogram of an empty report");
    if (bin_count < 1) throw ConfigError("PR histogram needs at least one bin");
    const double lo = 1.0;
    const double hi = std::max(2.0, static_cast<double>(report.dimension));
    const auto bins = static_cast<std::size_t>(bin_count);
    const double width = (hi - lo) / bin_count;
    DensityHistogram h;
    h.bin_edges.resize(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) h.bin_edges[i] = lo + width * static_cast<double>(i);
    h.bin_edges.back() = hi;
    h.counts.assign(bins, 0);
    for (const auto& rec : report.records) {
        auto idx = static_cast<std::ptrdiff_t>(std::floor((rec.pr - lo) / width));
        idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(bins) - 1);
        ++h.counts[static_cast<std::size_t>(idx)];
    }
    const double total = static_cast<double>(report.records.size());
    h.density.resize(bins);
    for (std::size_t i = 0; i < bins; ++i) {
        h.density[i] = static_cast<double>(h.counts[i]) / (total * h.bin_width(i));
    }
    return h;
}

/// Eigenstates whose PR and signed eigenphase fall in both windows, sorted
/// by ascending PR.
inline std::vector<PRRecord> select_states(const PRReport& report, Interval pr_range,
                                           Interval phase_range) {
    std::vector<PRRecord> out;
    for (const auto& rec : report.records) {
        if (pr_range.contains(rec.pr) && phase_range.contains(rec.eigenphase)) out.push_back(rec);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const PRRecord& a, const PRRecord& b) { return a.pr < b.pr; });
    return out;
}

inline std::vector<PRRecord> select_states(const SpectralDecomposition& d, Interval pr_range,
                                           Interval phase_range) {
    return select_states(pr_report(d), pr_range, phase_range);
}

inline ProbabilityGrid eigenstate_probability(const SpectralDecomposition& d,
                                              std::shared_ptr<const GridGeometry> g,
                                              std::size_t index) {
    if (index >= d.size()) {
        throw ConfigError("eigenstate index " + std::to_string(index) + " out of range");
    }
    if (static_cast<std::size_t>(d.eigenvectors.rows()) != 2 * g->site_count()) {
        throw ConfigError("decomposition does not match the geometry");
    }
    CVector v = d.eigenvector(index);
    v /= v.norm();
    return probability_from_amplitudes(std::move(g), v);
}

}  // namespace qwalk
