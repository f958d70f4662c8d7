#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qwalk/errors.hpp"
#include "qwalk/walker.hpp"

namespace qwalk {

/// Amplitudes (U, D) on every site, stored as [U_0, D_0, U_1, D_1, ...] in
/// site-index order.
struct WalkerState {
    std::shared_ptr<const GridGeometry> geometry;
    CVector amplitudes;

    double norm() const { return amplitudes.norm(); }
    cplx up(std::size_t site) const { return amplitudes(static_cast<Eigen::Index>(basis_index(site, Up))); }
    cplx down(std::size_t site) const {
        return amplitudes(static_cast<Eigen::Index>(basis_index(site, Down)));
    }
};

/// p(m, n) = |U|^2 + |D|^2 per site.
struct ProbabilityGrid {
    std::shared_ptr<const GridGeometry> geometry;
    std::vector<double> p;  // indexed by site

    /// Zero outside the domain.
    double at(int m, int n) const {
        const auto idx = geometry->index_of(m, n);
        return idx ? p[*idx] : 0.0;
    }
    double total() const {
        double s = 0.0;
        for (double v : p) s += v;
        return s;
    }
};

inline ProbabilityGrid probability_from_amplitudes(std::shared_ptr<const GridGeometry> g,
                                                   const CVector& amps) {
    ProbabilityGrid out{std::move(g), {}};
    out.p.resize(out.geometry->site_count());
    for (std::size_t s = 0; s < out.p.size(); ++s) {
        out.p[s] = std::norm(amps(static_cast<Eigen::Index>(basis_index(s, Up)))) +
                   std::norm(amps(static_cast<Eigen::Index>(basis_index(s, Down))));
    }
    return out;
}

inline ProbabilityGrid probability_grid(const WalkerState& state) {
    return probability_from_amplitudes(state.geometry, state.amplitudes);
}

/// A walker sitting on a single site with spinor (up_amp, down_amp).
inline WalkerState centered_initial_state(std::shared_ptr<const GridGeometry> g, int m0, int n0,
                                          cplx up_amp, cplx down_amp) {
    const std::size_t site = g->require_index(m0, n0);
    const double nrm = std::norm(up_amp) + std::norm(down_amp);
    if (std::abs(nrm - 1.0) > 1e-12) {
        throw ConfigError("initial spinor is not normalized (|u|^2+|d|^2 = " + std::to_string(nrm) +
                          ")");
    }
    WalkerState st{g, CVector::Zero(static_cast<Eigen::Index>(2 * g->site_count()))};
    st.amplitudes(static_cast<Eigen::Index>(basis_index(site, Up))) = up_amp;
    st.amplitudes(static_cast<Eigen::Index>(basis_index(site, Down))) = down_amp;
    return st;
}

inline WalkerState centered_initial_state(const GridGeometry& g, int m0, int n0, cplx up_amp,
                                          cplx down_amp) {
    return centered_initial_state(std::make_shared<const GridGeometry>(g), m0, n0, up_amp,
                                  down_amp);
}

/// One application of the step operator.
inline WalkerState apply(const WalkOperator& op, const WalkerState& state) {
    if (state.amplitudes.size() != op.dimension()) {
        throw NumericalError("state dimension " + std::to_string(state.amplitudes.size()) +
                             " does not match operator dimension " +
                             std::to_string(op.dimension()));
    }
    return WalkerState{state.geometry, op.matrix() * state.amplitudes};
}

struct Snapshot {
    int t = 0;
    ProbabilityGrid grid;
    std::optional<CVector> amplitudes;
};

struct Evolution {
    std::vector<Snapshot> snapshots;
    WalkerState final_state;
};

/// Applies the operator `steps` times, recording the probability grid after
/// exactly t applications for every t in snapshot_times.
inline Evolution evolve(const WalkerState& state, const WalkOperator& op, int steps,
                        const std::vector<int>& snapshot_times, bool keep_amplitudes = false) {
    if (steps < 0) throw ConfigError("evolve: negative step count");
    if (!std::is_sorted(snapshot_times.begin(), snapshot_times.end())) {
        throw ConfigError("evolve: snapshot times must be sorted");
    }
    if (!snapshot_times.empty() && (snapshot_times.front() < 0 || snapshot_times.back() > steps)) {
        throw ConfigError("evolve: snapshot times must lie in [0, steps]");
    }
    if (state.amplitudes.size() != op.dimension()) {
        throw NumericalError("evolve: state dimension does not match operator dimension");
    }
    if (state.geometry && !(*state.geometry == op.geometry())) {
        throw NumericalError("evolve: state and operator live on different geometries");
    }

    Evolution out{{}, state};
    auto next = snapshot_times.begin();
    const auto record = [&](int t) {
        while (next != snapshot_times.end() && *next == t) {
            Snapshot snap{t, probability_grid(out.final_state), std::nullopt};
            if (keep_amplitudes) snap.amplitudes = out.final_state.amplitudes;
            out.snapshots.push_back(std::move(snap));
            ++next;
        }
    };
    record(0);
    CVector buf(out.final_state.amplitudes.size());
    for (int t = 1; t <= steps; ++t) {
        buf.noalias() = op.matrix() * out.final_state.amplitudes;
        out.final_state.amplitudes.swap(buf);
        record(t);
    }
    return out;
}

/// max |p - q| over sites
inline double max_abs_difference(const ProbabilityGrid& p, const ProbabilityGrid& q) {
    if (!(*p.geometry == *q.geometry)) throw ConfigError("probability grids on different geometries");
    double d = 0.0;
    for (std::size_t i = 0; i < p.p.size(); ++i) d = std::max(d, std::abs(p.p[i] - q.p[i]));
    return d;
}

/// L1 distance over the union of both supports, comparing site (m, n) by
/// coordinates so that grids on different geometries can be compared.
inline double l1_distance(const ProbabilityGrid& p, const ProbabilityGrid& q) {
    double d = 0.0;
    for (std::size_t i = 0; i < p.p.size(); ++i) {
        const auto [m, n] = p.geometry->site(i);
        d += std::abs(p.p[i] - q.at(m, n));
    }
    for (std::size_t i = 0; i < q.p.size(); ++i) {
        const auto [m, n] = q.geometry->site(i);
        if (!p.geometry->contains(m, n)) d += q.p[i];
    }
    return d;
}

/// max |p - q| comparing by coordinates (zero outside each domain).
inline double max_abs_difference_by_site(const ProbabilityGrid& p, const ProbabilityGrid& q) {
    double d = 0.0;
    for (std::size_t i = 0; i < p.p.size(); ++i) {
        const auto [m, n] = p.geometry->site(i);
        d = std::max(d, std::abs(p.p[i] - q.at(m, n)));
    }
    for (std::size_t i = 0; i < q.p.size(); ++i) {
        const auto [m, n] = q.geometry->site(i);
        if (!p.geometry->contains(m, n)) d = std::max(d, q.p[i]);
    }
    return d;
}

}  // namespace qwalk
