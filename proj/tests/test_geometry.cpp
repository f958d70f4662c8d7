#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "qwalk/geometry.hpp"

using namespace qwalk;

namespace {

// Independent enumeration straight from the shape-function definitions,
// using floating-point sqrt with floor.
std::size_t brute_force_stadium_sites(int m_R, int n_U) {
    const int m_C = m_R / 2;
    std::size_t count = 0;
    for (int n = 0; n <= n_U; ++n) {
        for (int m = 0; m <= m_R; ++m) {
            const double f = m <= m_C ? n_U : std::floor(std::sqrt(double(n_U * n_U - (m - m_C) * (m - m_C))));
            if (n <= f) ++count;
        }
    }
    return count;
}

}  // namespace

TEST(Geometry, RectangleSiteCount) {
    const auto g = build_geometry(DomainKind::Rectangle, 50, 25);
    EXPECT_EQ(g.site_count(), 51u * 26u);
    EXPECT_EQ(g.m_C(), 50);
    for (int m = 0; m <= 50; ++m) EXPECT_EQ(g.shape_f(m), 25);
    for (int n = 0; n <= 25; ++n) EXPECT_EQ(g.shape_w(n), 50);
}

TEST(Geometry, StadiumShapeFunctions) {
    const auto g = build_geometry(DomainKind::QuarterStadium, 50, 25);
    EXPECT_EQ(g.m_C(), 25);
    EXPECT_EQ(g.shape_f(0), 25);
    EXPECT_EQ(g.shape_f(25), 25);
    EXPECT_EQ(g.shape_f(40), 20);  // floor(sqrt(625 - 225))
    EXPECT_EQ(g.shape_f(49), 7);   // floor(sqrt(625 - 576))
    EXPECT_EQ(g.shape_f(50), 0);
    EXPECT_EQ(g.shape_w(0), 50);
    EXPECT_EQ(g.shape_w(15), 45);
    EXPECT_EQ(g.shape_w(25), 25);
}

TEST(Geometry, StadiumSiteCountFrozen) {
    const auto g = build_geometry(DomainKind::QuarterStadium, 50, 25);
    EXPECT_EQ(g.site_count(), brute_force_stadium_sites(50, 25));
    EXPECT_EQ(g.site_count(), 1166u);
    EXPECT_EQ(build_geometry(DomainKind::QuarterStadium, 150, 75).site_count(),
              brute_force_stadium_sites(150, 75));
    // The floor convention keeps the corner (m_R, 0).
    EXPECT_TRUE(g.contains(50, 0));
}

TEST(Geometry, DualityIsExhaustive) {
    for (int m_R = 2; m_R <= 60; m_R += 2) {
        const auto g = build_geometry(DomainKind::QuarterStadium, m_R, m_R / 2);
        for (int m = 0; m <= g.m_R(); ++m) {
            for (int n = 0; n <= g.n_U(); ++n) {
                ASSERT_EQ(n <= g.shape_f(m), m <= g.shape_w(n)) << "m_R=" << m_R << " m=" << m << " n=" << n;
                ASSERT_EQ(g.contains(m, n), n <= g.shape_f(m));
            }
        }
    }
}

TEST(Geometry, Monotonicity) {
    const auto g = build_geometry(DomainKind::QuarterStadium, 80, 40);
    for (int m = g.m_C(); m < g.m_R(); ++m) EXPECT_GE(g.shape_f(m), g.shape_f(m + 1));
    for (int n = 0; n < g.n_U(); ++n) EXPECT_GE(g.shape_w(n), g.shape_w(n + 1));
}

TEST(Geometry, IndexIsRowMajorBijection) {
    for (auto kind : {DomainKind::Rectangle, DomainKind::QuarterStadium}) {
        const auto g = build_geometry(kind, 20, 10);
        std::set<std::size_t> seen;
        Site prev{-1, -1};
        for (std::size_t i = 0; i < g.site_count(); ++i) {
            const auto s = g.site(i);
            ASSERT_EQ(g.index_of(s.m, s.n), i);
            seen.insert(i);
            if (i > 0) {
                EXPECT_TRUE(s.n > prev.n || (s.n == prev.n && s.m == prev.m + 1));
            }
            prev = s;
        }
        EXPECT_EQ(seen.size(), g.site_count());
        EXPECT_FALSE(g.index_of(-1, 0));
        EXPECT_FALSE(g.index_of(0, 11));
        EXPECT_FALSE(g.index_of(21, 0));
    }
    const auto s = build_geometry(DomainKind::QuarterStadium, 20, 10);
    EXPECT_FALSE(s.index_of(20, 10));
    EXPECT_THROW(s.require_index(20, 10), ConfigError);
}

TEST(Geometry, InvalidDimensions) {
    EXPECT_THROW(build_geometry(DomainKind::QuarterStadium, 51, 25), ConfigError);
    EXPECT_THROW(build_geometry(DomainKind::QuarterStadium, 50, 24), ConfigError);
    EXPECT_THROW(build_geometry(DomainKind::Rectangle, 1, 5), ConfigError);
    EXPECT_THROW(build_geometry(DomainKind::Rectangle, 5, 0), ConfigError);
    const auto g = build_geometry(DomainKind::QuarterStadium, 10, 5);
    EXPECT_THROW(g.shape_f(11), ConfigError);
    EXPECT_THROW(g.shape_f(-1), ConfigError);
    EXPECT_THROW(g.shape_w(6), ConfigError);
    EXPECT_THROW(parse_domain_kind("sinai"), ConfigError);
}

TEST(Geometry, JsonSummary) {
    const auto g = build_geometry(DomainKind::QuarterStadium, 10, 5);
    const auto j = geometry_summary(g);
    EXPECT_EQ(j.at("kind"), "stadium");
    EXPECT_EQ(j.at("m_C"), 5);
    EXPECT_EQ(j.at("site_count"), g.site_count());
    EXPECT_EQ(j.at("f").size(), 11u);
    EXPECT_EQ(j.at("w").size(), 6u);
    EXPECT_EQ(j.at("w").at(0), 10);
}
