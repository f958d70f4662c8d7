#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "qwalk/dynamics.hpp"

using namespace qwalk;

namespace {

constexpr double pi = std::numbers::pi;
const CoinParameters symmetric{pi / 4, pi / 4, pi / 4};
const CoinParameters asymmetric{pi / 4, pi / 3, pi / 4};
const cplx inv_sqrt2{1.0 / std::numbers::sqrt2, 0.0};
const cplx i_sqrt2{0.0, 1.0 / std::numbers::sqrt2};

// Dense rectangle walk built directly from the lattice rules, without the
// library's shift builders. Index = 2 * (n * (m_R + 1) + m) + spin.
CMatrix reference_rectangle_operator(int m_R, int n_U, const CoinParameters& c) {
    const int width = m_R + 1;
    const Eigen::Index dim = 2 * width * (n_U + 1);
    const auto idx = [width](int m, int n, int spin) { return 2 * (n * width + m) + spin; };
    CMatrix wm = CMatrix::Zero(dim, dim);
    CMatrix wn = CMatrix::Zero(dim, dim);
    for (int n = 0; n <= n_U; ++n) {
        for (int m = 0; m <= m_R; ++m) {
            if (m < m_R) wm(idx(m + 1, n, 0), idx(m, n, 0)) = 1; else wm(idx(m, n, 1), idx(m, n, 0)) = 1;
            if (m > 0) wm(idx(m - 1, n, 1), idx(m, n, 1)) = 1; else wm(idx(m, n, 0), idx(m, n, 1)) = 1;
            if (n < n_U) wn(idx(m, n + 1, 0), idx(m, n, 0)) = 1; else wn(idx(m, n, 1), idx(m, n, 0)) = 1;
            if (n > 0) wn(idx(m, n - 1, 1), idx(m, n, 1)) = 1; else wn(idx(m, n, 0), idx(m, n, 1)) = 1;
        }
    }
    const auto coin = [dim](double a, double phi) {
        const cplx e = std::polar(1.0, phi);
        CMatrix out = CMatrix::Zero(dim, dim);
        for (Eigen::Index s = 0; s < dim; s += 2) {
            out(s, s) = std::cos(a);
            out(s, s + 1) = std::sin(a);
            out(s + 1, s) = -e * std::sin(a);
            out(s + 1, s + 1) = e * std::cos(a);
        }
        return out;
    };
    return wn * coin(c.beta, c.phase) * wm * coin(c.alpha, c.phase);
}

// Sites where the stadium and rectangle shift rules differ: outside the
// stadium, or on a stadium boundary that is not also a rectangle boundary.
int contact_distance(const GridGeometry& stadium, int m0, int n0) {
    int best = 1 << 30;
    for (int n = 0; n <= stadium.n_U(); ++n) {
        for (int m = 0; m <= stadium.m_R(); ++m) {
            const bool outside = !stadium.contains(m, n);
            const bool h_edge = stadium.contains(m, n) && m == stadium.shape_w(n) && m < stadium.m_R();
            const bool v_edge = stadium.contains(m, n) && n == stadium.shape_f(m) && n < stadium.n_U();
            if (outside || h_edge || v_edge) best = std::min(best, std::max(std::abs(m - m0), std::abs(n - n0)));
        }
    }
    return best;
}

}  // namespace

TEST(InitialState, SingleSiteSpinor) {
    const auto g = build_geometry(DomainKind::QuarterStadium, 10, 5);
    const auto st = centered_initial_state(g, 4, 2, inv_sqrt2, i_sqrt2);
    EXPECT_NEAR(st.norm(), 1.0, 1e-15);
    const auto s = g.require_index(4, 2);
    EXPECT_EQ(st.up(s), inv_sqrt2);
    EXPECT_EQ(st.down(s), i_sqrt2);
    const auto p = probability_grid(st);
    EXPECT_NEAR(p.at(4, 2), 1.0, 1e-15);
    EXPECT_EQ(p.at(3, 2), 0.0);
    EXPECT_EQ(p.at(10, 5), 0.0);  // off-domain corner
}

TEST(InitialState, Errors) {
    const auto g = build_geometry(DomainKind::QuarterStadium, 10, 5);
    EXPECT_THROW(centered_initial_state(g, 10, 5, inv_sqrt2, i_sqrt2), ConfigError);
    EXPECT_THROW(centered_initial_state(g, 1, 1, 1.0, 1.0), ConfigError);
}

TEST(Apply, BasisStateSpreadsToAtMostFourComponents) {
    const auto g = std::make_shared<const GridGeometry>(build_geometry(DomainKind::Rectangle, 10, 6));
    const WalkOperator q(*g, asymmetric);
    WalkerState st{g, CVector::Zero(q.dimension())};
    st.amplitudes(static_cast<Eigen::Index>(basis_index(g->require_index(5, 3), Up))) = 1.0;
    const auto out = apply(q, st);
    int nonzero = 0;
    for (Eigen::Index i = 0; i < out.amplitudes.size(); ++i) nonzero += std::abs(out.amplitudes(i)) > 1e-15;
    EXPECT_EQ(nonzero, 4);
    EXPECT_NEAR(out.norm(), 1.0, 1e-14);
    WalkerState wrong{g, CVector::Zero(4)};
    EXPECT_THROW(apply(q, wrong), NumericalError);
}

TEST(Apply, MatchesIndependentDenseOracle) {
    for (const auto& coins : {symmetric, asymmetric}) {
        const WalkOperator q(build_geometry(DomainKind::Rectangle, 3, 1), coins);
        const CMatrix ref = reference_rectangle_operator(3, 1, coins);
        EXPECT_LT((q.to_dense() - ref).cwiseAbs().maxCoeff(), 1e-15);

        const auto g = q.geometry_ptr();
        auto st = centered_initial_state(g, 1, 0, inv_sqrt2, i_sqrt2);
        CVector dense = st.amplitudes;
        for (int t = 0; t < 50; ++t) {
            st = apply(q, st);
            dense = ref * dense;
        }
        EXPECT_LT((st.amplitudes - dense).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Evolve, NormPreservedOverLongRuns) {
    const auto g = std::make_shared<const GridGeometry>(build_geometry(DomainKind::QuarterStadium, 40, 20));
    const WalkOperator q(*g, asymmetric);
    const auto st = centered_initial_state(g, 20, 10, inv_sqrt2, i_sqrt2);
    const auto ev = evolve(st, q, 232, {0, 100, 232});
    EXPECT_NEAR(ev.final_state.norm(), 1.0, 1e-12);
    ASSERT_EQ(ev.snapshots.size(), 3u);
    for (const auto& s : ev.snapshots) EXPECT_NEAR(s.grid.total(), 1.0, 1e-12);
}

TEST(Evolve, SnapshotsAtRequestedTimes) {
    const auto g = std::make_shared<const GridGeometry>(build_geometry(DomainKind::Rectangle, 12, 6));
    const WalkOperator q(*g, symmetric);
    const auto st = centered_initial_state(g, 6, 3, inv_sqrt2, i_sqrt2);
    const auto ev = evolve(st, q, 10, {0, 3, 3, 10}, true);
    ASSERT_EQ(ev.snapshots.size(), 4u);
    EXPECT_EQ(ev.snapshots[0].t, 0);
    EXPECT_NEAR(ev.snapshots[0].grid.at(6, 3), 1.0, 1e-15);
    EXPECT_EQ(ev.snapshots[1].t, 3);
    EXPECT_EQ(ev.snapshots[2].t, 3);
    ASSERT_TRUE(ev.snapshots[3].amplitudes);
    EXPECT_EQ((*ev.snapshots[3].amplitudes - ev.final_state.amplitudes).norm(), 0.0);

    WalkerState manual = st;
    for (int t = 0; t < 3; ++t) manual = apply(q, manual);
    EXPECT_EQ(max_abs_difference(ev.snapshots[1].grid, probability_grid(manual)), 0.0);
}

TEST(Evolve, Errors) {
    const auto g = std::make_shared<const GridGeometry>(build_geometry(DomainKind::Rectangle, 6, 3));
    const WalkOperator q(*g, symmetric);
    const auto st = centered_initial_state(g, 3, 1, inv_sqrt2, i_sqrt2);
    EXPECT_THROW(evolve(st, q, -1, {}), ConfigError);
    EXPECT_THROW(evolve(st, q, 5, {3, 1}), ConfigError);
    EXPECT_THROW(evolve(st, q, 5, {6}), ConfigError);
    const WalkOperator other(build_geometry(DomainKind::QuarterStadium, 6, 3), symmetric);
    EXPECT_THROW(evolve(st, other, 5, {}), NumericalError);
}

TEST(Evolve, SupportStaysInChebyshevBall) {
    const auto g = std::make_shared<const GridGeometry>(build_geometry(DomainKind::Rectangle, 60, 30));
    const WalkOperator q(*g, asymmetric);
    const auto st = centered_initial_state(g, 30, 15, inv_sqrt2, i_sqrt2);
    std::vector<int> times{1, 5, 10, 14};
    const auto ev = evolve(st, q, 14, times);
    for (const auto& snap : ev.snapshots) {
        for (std::size_t i = 0; i < snap.grid.p.size(); ++i) {
            const auto [m, n] = g->site(i);
            if (std::max(std::abs(m - 30), std::abs(n - 15)) > snap.t) {
                ASSERT_EQ(snap.grid.p[i], 0.0) << "t=" << snap.t << " m=" << m << " n=" << n;
            }
        }
    }
}

TEST(Evolve, ProbabilitySumsToOneAfterHundredSteps) {
    const auto g = std::make_shared<const GridGeometry>(build_geometry(DomainKind::QuarterStadium, 50, 25));
    const WalkOperator q(*g, symmetric);
    const auto ev = evolve(centered_initial_state(g, 25, 12, inv_sqrt2, i_sqrt2), q, 100, {100});
    EXPECT_NEAR(ev.snapshots.at(0).grid.total(), 1.0, 1e-12);
}

TEST(Evolve, RectangleAndStadiumAgreeBeforeFirstContact) {
    const auto rect = std::make_shared<const GridGeometry>(build_geometry(DomainKind::Rectangle, 40, 20));
    const auto stad = std::make_shared<const GridGeometry>(build_geometry(DomainKind::QuarterStadium, 40, 20));
    const int m0 = 20, n0 = 10;
    const int d = contact_distance(*stad, m0, n0);
    ASSERT_GT(d, 2);
    std::vector<int> times;
    for (int t = 0; t <= 3 * d; ++t) times.push_back(t);
    const auto er = evolve(centered_initial_state(rect, m0, n0, inv_sqrt2, i_sqrt2),
                           WalkOperator(*rect, symmetric), 3 * d, times);
    const auto es = evolve(centered_initial_state(stad, m0, n0, inv_sqrt2, i_sqrt2),
                           WalkOperator(*stad, symmetric), 3 * d, times);
    for (int t = 0; t < d; ++t) {
        EXPECT_LT(max_abs_difference_by_site(er.snapshots[t].grid, es.snapshots[t].grid), 1e-12) << t;
    }
    EXPECT_GT(l1_distance(er.snapshots[3 * d].grid, es.snapshots[3 * d].grid), 0.01);
}

TEST(GridComparison, DistancesAcrossGeometries) {
    const auto rect = std::make_shared<const GridGeometry>(build_geometry(DomainKind::Rectangle, 10, 5));
    const auto stad = std::make_shared<const GridGeometry>(build_geometry(DomainKind::QuarterStadium, 10, 5));
    const auto a = probability_grid(centered_initial_state(rect, 10, 5, 1.0, 0.0));
    const auto b = probability_grid(centered_initial_state(stad, 0, 0, 1.0, 0.0));
    EXPECT_DOUBLE_EQ(l1_distance(a, b), 2.0);
    EXPECT_DOUBLE_EQ(max_abs_difference_by_site(a, b), 1.0);
    EXPECT_DOUBLE_EQ(l1_distance(a, a), 0.0);
    EXPECT_THROW(max_abs_difference(a, b), ConfigError);
}
