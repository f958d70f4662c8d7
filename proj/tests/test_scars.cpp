#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include <gtest/gtest.h>

#include "qwalk/scars.hpp"

using namespace qwalk;

namespace {

constexpr double pi = std::numbers::pi;

std::shared_ptr<const GridGeometry> stadium(int m_R) {
    return std::make_shared<const GridGeometry>(build_geometry(DomainKind::QuarterStadium, m_R, m_R / 2));
}

const PeriodicOrbit& find_orbit(const std::vector<PeriodicOrbit>& lib, const std::string& name) {
    for (const auto& o : lib) {
        if (o.name == name) return o;
    }
    throw std::runtime_error("no orbit " + name);
}

double distance_to_segment(double x, double y, Point a, Point b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double t = std::clamp(((x - a.x) * dx + (y - a.y) * dy) / (dx * dx + dy * dy), 0.0, 1.0);
    return std::hypot(x - a.x - t * dx, y - a.y - t * dy);
}

// Scar mass within `radius` of the orbit polyline.
double mass_near_orbit(const ScarFunction& sf, const PeriodicOrbit& o, double radius) {
    double m = 0.0;
    for (std::size_t i = 0; i < sf.probability.p.size(); ++i) {
        const auto [x, y] = sf.geometry->site(i);
        double d = 1e300;
        for (std::size_t v = 0; v + 1 < o.vertices.size(); ++v) {
            d = std::min(d, distance_to_segment(x, y, o.vertices[v], o.vertices[v + 1]));
        }
        if (d <= radius) m += sf.probability.p[i];
    }
    return m;
}

ScarFunction default_scar(std::shared_ptr<const GridGeometry> g, const PeriodicOrbit& o, int n) {
    const double L = o.length();
    const double k = (two_pi * n + o.total_bounce_phase()) / L;
    return build_scar_function(g, o, k, default_sigma(L, n), n);
}

ProbabilityGrid point_mass(std::shared_ptr<const GridGeometry> g, std::size_t site) {
    ProbabilityGrid p{g, std::vector<double>(g->site_count(), 0.0)};
    p.p[site] = 1.0;
    return p;
}

}  // namespace

TEST(OrbitLibrary, DefaultStadiumOrbits) {
    const auto g = stadium(50);
    const auto lib = default_orbit_library(*g);
    ASSERT_EQ(lib.size(), 4u);
    std::set<std::string> names;
    for (const auto& o : lib) {
        names.insert(o.name);
        for (const auto& v : o.vertices) EXPECT_TRUE(inside_billiard(*g, v));
    }
    EXPECT_EQ(names, (std::set<std::string>{"bouncing_ball", "rectangle", "whispering_gallery", "bow_tie"}));
    EXPECT_NEAR(find_orbit(lib, "bouncing_ball").length(), 50.0, 1e-12);
    EXPECT_NEAR(find_orbit(lib, "rectangle").length(), 2 * (25 + 25 * std::numbers::sqrt2), 1e-9);
    const double arc = pi * 25 / 2;
    EXPECT_NEAR(find_orbit(lib, "whispering_gallery").path_length(), arc, 0.05 * arc);
    EXPECT_NEAR(find_orbit(lib, "bow_tie").length(), 129.90, 0.01);
}

TEST(OrbitLibrary, BowTieReflectsIntoVerticalLeg) {
    const auto g = stadium(50);
    const auto lib = default_orbit_library(*g);
    const auto& bt = find_orbit(lib, "bow_tie");
    const Point p = bt.vertices[1];
    const Point c{25.0, 0.0};
    // incoming direction from the origin, outgoing straight down; the arc
    // normal must bisect them
    const double nx = (p.x - c.x) / 25.0, ny = (p.y - c.y) / 25.0;
    const double ilen = std::hypot(p.x, p.y);
    const double ix = p.x / ilen, iy = p.y / ilen;
    const double dot = ix * nx + iy * ny;
    EXPECT_NEAR(ix - 2 * dot * nx, 0.0, 1e-9);
    EXPECT_NEAR(iy - 2 * dot * ny, -1.0, 1e-9);
}

TEST(OrbitLibrary, RectangleHasNone) {
    EXPECT_TRUE(default_orbit_library(build_geometry(DomainKind::Rectangle, 50, 25)).empty());
}

TEST(OrbitLibrary, ValidationErrors) {
    const auto g = stadium(50);
    using B = BounceType;
    EXPECT_THROW(validate_orbit(*g, {"x", {{1, 1}}, {B::StraightWall}, false}), ConfigError);
    EXPECT_THROW(validate_orbit(*g, {"x", {{1, 1}, {2, 2}}, {B::StraightWall}, false}), ConfigError);
    EXPECT_THROW(validate_orbit(*g, {"x", {{1, 1}, {50, 25}}, {B::Arc, B::Arc}, false}), ConfigError);
    EXPECT_THROW(validate_orbit(*g, {"x", {{1, 1}, {1, 1}}, {B::Arc, B::Arc}, false}), ConfigError);
    EXPECT_THROW(parse_bounce_type("mirror"), ConfigError);
}

TEST(OrbitLibrary, FileRoundTripInRadiusUnits) {
    const auto g = stadium(50);
    const auto lib = default_orbit_library(*g);
    const auto path = std::filesystem::temp_directory_path() / "qwalk_orbits_roundtrip.json";
    {
        std::ofstream out(path);
        out << orbit_library_json(lib, g->n_U(), "radius").dump(2);
    }
    const auto big = stadium(100);
    const auto scaled = load_orbit_library(path.string(), *big);
    ASSERT_EQ(scaled.size(), lib.size());
    for (std::size_t i = 0; i < lib.size(); ++i) {
        EXPECT_EQ(scaled[i].name, lib[i].name);
        EXPECT_EQ(scaled[i].bounce_types, lib[i].bounce_types);
        EXPECT_NEAR(scaled[i].length(), 2.0 * lib[i].length(), 1e-9);
    }
    std::filesystem::remove(path);

    EXPECT_THROW(load_orbit_library("/nonexistent/orbits.json", *g), ConfigError);
    EXPECT_THROW(parse_orbit_library({{"units", "furlongs"}, {"orbits", nlohmann::json::array()}}, *g), ConfigError);
    EXPECT_THROW(parse_orbit_library({{"orbits", {{{"name", "x"}}}}}, *g), ConfigError);
}

TEST(Quantization, Examples) {
    const auto q = quantize_wavenumber(two_pi, 3.2);
    EXPECT_EQ(q.n_bs, 3);
    EXPECT_NEAR(q.k, 3.0, 1e-15);
    for (double L : {7.3, 50.0, 120.71}) {
        for (double k : {0.2, 1.0, 2.9}) {
            if (k * L / two_pi < 0.5) continue;
            EXPECT_LE(std::abs(quantize_wavenumber(L, k).k - k), pi / L + 1e-12);
        }
    }
    EXPECT_THROW(quantize_wavenumber(10.0, 0.1), ConfigError);
    EXPECT_THROW(quantize_wavenumber(-1.0, 1.0), ConfigError);
    const auto bb = quantize_wavenumber(150.0, 16.5027);
    EXPECT_EQ(bb.n_bs, 394);
    EXPECT_NEAR(bb.k, 16.5027, pi / 150.0);
}

TEST(ScarFunction, NormalizedAndConcentrated) {
    const auto g = stadium(100);
    const auto lib = default_orbit_library(*g);
    const auto& bb = find_orbit(lib, "bouncing_ball");
    const auto sf = default_scar(g, bb, 10);
    EXPECT_NEAR(sf.probability.total(), 1.0, 1e-12);
    EXPECT_GT(mass_near_orbit(sf, bb, 3 * sf.sigma), 0.95);
    for (const auto& o : lib) {
        const auto s = default_scar(g, o, 12);
        EXPECT_NEAR(s.probability.total(), 1.0, 1e-12);
        EXPECT_GT(mass_near_orbit(s, o, 4 * s.sigma), 0.95) << o.name;
    }
}

TEST(ScarFunction, PhaseWindsByQuantumNumber) {
    const auto g = stadium(50);
    for (const auto& o : default_orbit_library(*g)) {
        const auto segs = o.circuit();
        const double L = o.length();
        EXPECT_NEAR(segs.back().start + std::hypot(segs.back().b.x - segs.back().a.x,
                                                   segs.back().b.y - segs.back().a.y), L, 1e-9);
        for (int n : {1, 3, 7}) {
            const auto q = quantize_wavenumber(L, (two_pi * n + o.total_bounce_phase()) / L, o.total_bounce_phase());
            // accumulated phase: propagation plus every bounce, including the
            // one that closes the circuit
            const double closing = bounce_phase(o.bounce_types.front());
            const double total = q.k * L - segs.back().phase - closing;
            EXPECT_EQ(q.n_bs, n);
            EXPECT_NEAR(total / two_pi, n, 1e-9) << o.name;
        }
    }
    using B = BounceType;
    const PeriodicOrbit tri{"triangle", {{1, 1}, {9, 1}, {5, 4}}, {B::StraightWall, B::StraightWall, B::StraightWall}, true};
    EXPECT_NEAR(tri.length(), 8 + 5 + 5, 1e-12);
    EXPECT_NEAR(tri.total_bounce_phase(), 3 * pi, 1e-12);
    EXPECT_EQ(tri.circuit().size(), 3u);
}

TEST(ScarFunction, BouncingBallAntinodes) {
    const auto g = stadium(100);
    const auto lib = default_orbit_library(*g);
    const auto& bb = find_orbit(lib, "bouncing_ball");
    const int column = 25;
    int previous = 0;
    for (int n = 2; n <= 8; ++n) {
        const auto sf = default_scar(g, bb, n);
        const int count = count_antinodes_along_column(sf.probability, column, 0, g->n_U());
        EXPECT_NEAR(count, sf.k * g->n_U() / pi, 1.0) << "n=" << n;
        EXPECT_GT(count, previous) << "n=" << n;
        previous = count;
    }
}

TEST(ScarFunction, Errors) {
    const auto g = stadium(50);
    const auto lib = default_orbit_library(*g);
    const auto& bb = find_orbit(lib, "bouncing_ball");
    EXPECT_THROW(build_scar_function(g, bb, 1.0, 0.0), ConfigError);
    using B = BounceType;
    EXPECT_THROW(build_scar_function(g, {"out", {{0, 0}, {60, 0}}, {B::SymmetryAxis, B::Arc}, false}, 1.0, 1.0),
                 ConfigError);
}

TEST(Overlap, Properties) {
    const auto g = stadium(50);
    const auto lib = default_orbit_library(*g);
    const auto a = default_scar(g, lib[0], 4).probability;
    const auto b = default_scar(g, lib[1], 6).probability;
    for (auto metric : {OverlapMetric::Bhattacharyya, OverlapMetric::Cosine, OverlapMetric::Intersection}) {
        EXPECT_NEAR(overlap(a, a, metric), 1.0, 1e-12);
        EXPECT_NEAR(overlap(a, b, metric), overlap(b, a, metric), 1e-15);
        EXPECT_GE(overlap(a, b, metric), 0.0);
        EXPECT_LT(overlap(a, b, metric), 1.0 - 1e-6);
        EXPECT_EQ(overlap(point_mass(g, 0), point_mass(g, 1), metric), 0.0);
    }
    const auto other = std::make_shared<const GridGeometry>(build_geometry(DomainKind::Rectangle, 50, 25));
    EXPECT_THROW(overlap(a, point_mass(other, 0)), ConfigError);
}

TEST(RankCandidates, WindowPermutation) {
    const auto g = stadium(10);
    const auto d = diagonalize(WalkOperator(*g, {pi / 4, pi / 4, pi / 4}));
    const auto report = pr_report(d);
    const auto lib = default_orbit_library(*g);
    const auto& bb = find_orbit(lib, "bouncing_ball");
    const auto sf = build_scar_function(g, bb, (two_pi + pi) / bb.length(), 1.0, 1);
    EXPECT_TRUE(rank_candidates(d, sf, {1e6, 2e6}).empty());

    const Interval window{report.median * 0.5, report.median * 1.5};
    const auto ranked = rank_candidates(d, report, sf, window, OverlapMetric::Cosine);
    std::set<std::size_t> got, expected;
    for (const auto& c : ranked) got.insert(c.index);
    for (const auto& rec : report.records) {
        if (window.contains(rec.pr)) expected.insert(rec.index);
    }
    EXPECT_EQ(got, expected);
    for (std::size_t i = 1; i < ranked.size(); ++i) EXPECT_GE(ranked[i - 1].overlap, ranked[i].overlap);

    ScarSearch search;
    search.sigmas = {0.0, 1.5};
    const auto best = best_scar_match(d, report, g, bb, window, search);
    ASSERT_FALSE(ranked.empty());
    EXPECT_GE(best.best.overlap, 0.0);
    EXPECT_TRUE(window.contains(best.best.pr));
}
