#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qwalk/dynamics.hpp"
#include "qwalk/errors.hpp"
#include "qwalk/localization.hpp"
#include "qwalk/spectral.hpp"

namespace qwalk {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

/// What the orbit hits at a vertex. Symmetry-axis vertices lie on the lines
/// x = 0 or y = 0 that cut the full stadium down to its quarter.
enum class BounceType { StraightWall, Arc, SymmetryAxis };

inline std::string to_string(BounceType b) {
    switch (b) {
        case BounceType::StraightWall: return "wall";
        case BounceType::Arc: return "arc";
        case BounceType::SymmetryAxis: return "axis";
    }
    return "wall";
}

inline BounceType parse_bounce_type(const std::string& s) {
    if (s == "wall") return BounceType::StraightWall;
    if (s == "arc") return BounceType::Arc;
    if (s == "axis") return BounceType::SymmetryAxis;
    throw ConfigError("unknown bounce type '" + s + "'");
}

/// Phase picked up at a bounce: pi at hard walls, nothing on symmetry axes.
inline double bounce_phase(BounceType b) {
    return b == BounceType::SymmetryAxis ? 0.0 : std::numbers::pi;
}

/// Polygonal periodic orbit in lattice units (x = m, y = n).
///
/// A closed orbit runs v0 -> v1 -> ... -> v_{K-1} -> v0. An open orbit is a
/// self-retracing path: both end vertices are perpendicular bounces and one
/// period is v0 -> ... -> v_{K-1} -> ... -> v0.
struct PeriodicOrbit {
    std::string name;
    std::vector<Point> vertices;
    std::vector<BounceType> bounce_types;
    bool closed = false;

    struct Segment {
        Point a;
        Point b;
        double start = 0.0;   // arclength at a, along one period
        double phase = 0.0;   // accumulated bounce phase before a
    };

    /// The segments traversed in one period, in order.
    std::vector<Segment> circuit() const {
        std::vector<std::size_t> path;
        const std::size_t k = vertices.size();
        for (std::size_t i = 0; i < k; ++i) path.push_back(i);
        if (closed) {
            path.push_back(0);
        } else {
            for (std::size_t i = k - 1; i-- > 0;) path.push_back(i);
        }
        std::vector<Segment> segs;
        double arclength = 0.0;
        double phase = 0.0;
        for (std::size_t i = 0; i + 1 < path.size(); ++i) {
            const Point a = vertices[path[i]];
            const Point b = vertices[path[i + 1]];
            if (i > 0) phase += bounce_phase(bounce_types[path[i]]);
            segs.push_back({a, b, arclength, phase});
            arclength += std::hypot(b.x - a.x, b.y - a.y);
        }
        return segs;
    }

    /// Length of one period.
    double length() const {
        const double p = path_length();
        if (closed) {
            return p + std::hypot(vertices.front().x - vertices.back().x,
                                  vertices.front().y - vertices.back().y);
        }
        return 2.0 * p;
    }

    /// Length of the vertex polyline v0 -> ... -> v_{K-1}.
    double path_length() const {
        double p = 0.0;
        for (std::size_t i = 0; i + 1 < vertices.size(); ++i) {
            p += std::hypot(vertices[i + 1].x - vertices[i].x, vertices[i + 1].y - vertices[i].y);
        }
        return p;
    }

    /// Sum of bounce phases over one period.
    double total_bounce_phase() const {
        double ph = 0.0;
        if (closed) {
            for (auto b : bounce_types) ph += bounce_phase(b);
        } else {
            for (std::size_t i = 0; i < bounce_types.size(); ++i) {
                const double p = bounce_phase(bounce_types[i]);
                ph += (i == 0 || i + 1 == bounce_types.size()) ? p : 2.0 * p;
            }
        }
        return ph;
    }
};

/// Continuous billiard test: 0 <= x <= m_R, 0 <= y, and below the top wall
/// or the arc of radius n_U centred at (m_C, 0).
inline bool inside_billiard(const GridGeometry& g, Point p, double tol = 1e-9) {
    if (p.x < -tol || p.y < -tol || p.x > g.m_R() + tol || p.y > g.n_U() + tol) return false;
    if (g.kind() == DomainKind::Rectangle || p.x <= g.m_C()) return true;
    return std::hypot(p.x - g.m_C(), p.y) <= g.n_U() + tol;
}

inline void validate_orbit(const GridGeometry& g, const PeriodicOrbit& o) {
    if (o.vertices.size() < 2) throw ConfigError("orbit '" + o.name + "' needs at least two vertices");
    if (o.bounce_types.size() != o.vertices.size()) {
        throw ConfigError("orbit '" + o.name + "' needs one bounce type per vertex");
    }
    for (std::size_t i = 0; i < o.vertices.size(); ++i) {
        if (!inside_billiard(g, o.vertices[i])) {
            throw ConfigError("orbit '" + o.name + "' vertex " + std::to_string(i) +
                              " lies outside the billiard");
        }
        const Point next = o.vertices[(i + 1) % o.vertices.size()];
        if (i + 1 < o.vertices.size() || o.closed) {
            if (std::hypot(next.x - o.vertices[i].x, next.y - o.vertices[i].y) < 1e-12) {
                throw ConfigError("orbit '" + o.name + "' has repeated consecutive vertices");
            }
        }
    }
    if (!(o.length() > 0)) throw ConfigError("orbit '" + o.name + "' has zero length");
}

/// The four short orbits of the quarter stadium used for scar functions:
/// the vertical bouncing ball, the rectangle orbit, a whispering-gallery
/// polygon along the arc and the bow-tie. Coordinates scale with the
/// geometry. Returns an empty list (with a warning) for the rectangle.
inline std::vector<PeriodicOrbit> default_orbit_library(const GridGeometry& g,
                                                        int gallery_chords = 6) {
    if (g.kind() != DomainKind::QuarterStadium) {
        std::cerr << "warning: no periodic-orbit library for the rectangle billiard\n";
        return {};
    }
    const double a = g.m_C();
    const double r = g.n_U();
    using B = BounceType;
    std::vector<PeriodicOrbit> lib;

    lib.push_back({"bouncing_ball", {{a / 2, 0.0}, {a / 2, r}}, {B::SymmetryAxis, B::StraightWall}, false});

    const double h = r / std::numbers::sqrt2;
    lib.push_back({"rectangle", {{0.0, h}, {a + h, h}, {a + h, 0.0}},
                   {B::SymmetryAxis, B::Arc, B::SymmetryAxis}, false});

    PeriodicOrbit gallery{"whispering_gallery", {}, {}, false};
    for (int j = 0; j <= gallery_chords; ++j) {
        const double phi = std::numbers::pi / 2 * j / gallery_chords;
        gallery.vertices.push_back({a + r * std::cos(phi), r * std::sin(phi)});
        gallery.bounce_types.push_back(j == 0 ? B::SymmetryAxis
                                       : j == gallery_chords ? B::StraightWall
                                                             : B::Arc);
    }
    lib.push_back(std::move(gallery));

    // Bow-tie arc vertex: the chord through the centre reflects into a
    // vertical segment, i.e. a*tan(phi) = |P(phi)|.
    const auto mismatch = [&](double phi) {
        const double px = a + r * std::cos(phi);
        const double py = r * std::sin(phi);
        return a * std::tan(phi) - std::hypot(px, py);
    };
    double lo = 1e-6;
    double hi = std::numbers::pi / 2 - 1e-6;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (mismatch(mid) < 0 ? lo : hi) = mid;
    }
    const double phi = 0.5 * (lo + hi);
    const Point p{a + r * std::cos(phi), r * std::sin(phi)};
    lib.push_back({"bow_tie", {{0.0, 0.0}, p, {p.x, 0.0}},
                   {B::SymmetryAxis, B::Arc, B::SymmetryAxis}, false});

    for (const auto& o : lib) validate_orbit(g, o);
    return lib;
}

// --- orbit library files -------------------------------------------------
//
// {"units": "cells" | "radius",
//  "orbits": [{"name": ..., "closed": false,
//              "vertices": [[x, y], ...], "bounces": ["axis", "wall", ...]}]}
//
// "radius" coordinates are multiplied by n_U on load.

inline nlohmann::json orbit_library_json(const std::vector<PeriodicOrbit>& lib, double scale = 1.0,
                                         const std::string& units = "cells") {
    nlohmann::json orbits = nlohmann::json::array();
    for (const auto& o : lib) {
        nlohmann::json verts = nlohmann::json::array();
        nlohmann::json bounces = nlohmann::json::array();
        for (const auto& v : o.vertices) verts.push_back({v.x / scale, v.y / scale});
        for (auto b : o.bounce_types) bounces.push_back(to_string(b));
        orbits.push_back({{"name", o.name}, {"closed", o.closed}, {"vertices", verts},
                          {"bounces", bounces}});
    }
    return {{"units", units}, {"orbits", orbits}};
}

inline std::vector<PeriodicOrbit> parse_orbit_library(const nlohmann::json& doc,
                                                      const GridGeometry& g) {
    std::vector<PeriodicOrbit> lib;
    try {
        const std::string units = doc.value("units", "cells");
        double scale = 1.0;
        if (units == "radius") {
            scale = g.n_U();
        } else if (units != "cells") {
            throw ConfigError("orbit library: unknown units '" + units + "'");
        }
        for (const auto& jo : doc.at("orbits")) {
            PeriodicOrbit o;
            o.name = jo.at("name").get<std::string>();
            o.closed = jo.value("closed", false);
            for (const auto& v : jo.at("vertices")) {
                o.vertices.push_back({v.at(0).get<double>() * scale, v.at(1).get<double>() * scale});
            }
            for (const auto& b : jo.at("bounces")) o.bounce_types.push_back(parse_bounce_type(b.get<std::string>()));
            validate_orbit(g, o);
            lib.push_back(std::move(o));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("orbit library: ") + e.what());
    }
    return lib;
}

inline std::vector<PeriodicOrbit> load_orbit_library(const std::string& path, const GridGeometry& g) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open orbit library '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("orbit library '" + path + "': " + e.what());
    }
    return parse_orbit_library(doc, g);
}

// --- scar functions ------------------------------------------------------

struct QuantizedWavenumber {
    double k = 0.0;
    int n_bs = 0;
};

/// Bohr-Sommerfeld: k L = 2 pi n + correction, with n the integer nearest to
/// the target.
inline QuantizedWavenumber quantize_wavenumber(double length, double k_target,
                                               double phase_correction = 0.0) {
    if (!(length > 0)) throw ConfigError("orbit length must be positive");
    if (!(k_target > 0)) throw ConfigError("target wavenumber must be positive");
    const int n = static_cast<int>(std::lround((k_target * length - phase_correction) / two_pi));
    if (n <= 0) {
        throw ConfigError("Bohr-Sommerfeld quantum number is zero for k=" + std::to_string(k_target) +
                          ", L=" + std::to_string(length));
    }
    return {(two_pi * n + phase_correction) / length, n};
}

/// Transverse width of a wave packet at wavenumber k: sqrt(L / (2 pi n)).
inline double default_sigma(double length, int n_bs) {
    return std::sqrt(length / (two_pi * n_bs));
}

struct ScarFunction {
    std::shared_ptr<const GridGeometry> geometry;
    std::string orbit_name;
    double k = 0.0;
    int n_bs = 0;
    double sigma = 0.0;
    std::vector<cplx> field;  // per site, unit l2 norm
    ProbabilityGrid probability;
};

/// Plane wave along each orbit segment times a transverse Gaussian:
///   sum_seg exp(i (k xi + bounce phase)) exp(-eta^2 / (2 sigma^2))
/// where xi is the arclength along the period and eta the signed distance
/// from the segment, over sites whose projection falls on the segment.
inline ScarFunction build_scar_function(std::shared_ptr<const GridGeometry> g,
                                        const PeriodicOrbit& orbit, double k, double sigma,
                                        int n_bs = -1) {
    validate_orbit(*g, orbit);
    if (!(sigma > 0)) throw ConfigError("scar width sigma must be positive");
    if (sigma < 1.0) {
        std::cerr << "warning: scar width sigma=" << sigma << " is below one lattice cell\n";
    }
    const auto segs = orbit.circuit();
    ScarFunction sf;
    sf.geometry = g;
    sf.orbit_name = orbit.name;
    sf.k = k;
    sf.n_bs = n_bs >= 0 ? n_bs : static_cast<int>(std::floor(k * orbit.length() / two_pi + 1e-9));
    sf.sigma = sigma;
    sf.field.assign(g->site_count(), cplx{});
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const double cutoff = 6.0 * sigma;
    for (const auto& s : segs) {
        const double dx = s.b.x - s.a.x;
        const double dy = s.b.y - s.a.y;
        const double len = std::hypot(dx, dy);
        const double ux = dx / len;
        const double uy = dy / len;
        for (std::size_t i = 0; i < g->site_count(); ++i) {
            const auto [m, n] = g->site(i);
            const double rx = m - s.a.x;
            const double ry = n - s.a.y;
            const double xi = rx * ux + ry * uy;
            if (xi < 0.0 || xi > len) continue;
            const double eta = -rx * uy + ry * ux;
            if (std::abs(eta) > cutoff) continue;
            sf.field[i] += std::polar(std::exp(-eta * eta * inv2s2), k * (s.start + xi) + s.phase);
        }
    }
    double total = 0.0;
    for (const auto& f : sf.field) total += std::norm(f);
    if (total == 0.0) throw NumericalError("scar function for '" + orbit.name + "' is empty");
    const double inv = 1.0 / std::sqrt(total);
    sf.probability.geometry = g;
    sf.probability.p.resize(sf.field.size());
    for (std::size_t i = 0; i < sf.field.size(); ++i) {
        sf.field[i] *= inv;
        sf.probability.p[i] = std::norm(sf.field[i]);
    }
    return sf;
}

enum class OverlapMetric {
    Bhattacharyya,  // sum sqrt(p q)
    Cosine,         // sum p q / (|p| |q|)
    Intersection,   // sum min(p, q)
};

/// Overlap of two probability grids on the same geometry, in [0, 1].
inline double overlap(const ProbabilityGrid& p, const ProbabilityGrid& q,
                      OverlapMetric metric = OverlapMetric::Cosine) {
    if (!(*p.geometry == *q.geometry)) throw ConfigError("overlap: grids on different geometries");
    double s = 0.0;
    if (metric == OverlapMetric::Bhattacharyya) {
        for (std::size_t i = 0; i < p.p.size(); ++i) s += std::sqrt(std::max(0.0, p.p[i] * q.p[i]));
        return std::min(s, 1.0);
    }
    if (metric == OverlapMetric::Intersection) {
        for (std::size_t i = 0; i < p.p.size(); ++i) s += std::min(p.p[i], q.p[i]);
        return std::clamp(s, 0.0, 1.0);
    }
    double pp = 0.0;
    double qq = 0.0;
    for (std::size_t i = 0; i < p.p.size(); ++i) {
        s += p.p[i] * q.p[i];
        pp += p.p[i] * p.p[i];
        qq += q.p[i] * q.p[i];
    }
    if (pp == 0.0 || qq == 0.0) return 0.0;
    return std::min(s / std::sqrt(pp * qq), 1.0);
}

struct Candidate {
    std::size_t index = 0;
    double overlap = 0.0;
    double pr = 0.0;
    double eigenphase = 0.0;  // (-pi, pi]
};

/// Eigenstates in the PR window, by descending overlap with the scar.
inline std::vector<Candidate> rank_candidates(const SpectralDecomposition& d, const PRReport& report,
                                              const ScarFunction& scar, Interval pr_window,
                                              OverlapMetric metric = OverlapMetric::Cosine) {
    std::vector<Candidate> out;
    for (const auto& rec : report.records) {
        if (!pr_window.contains(rec.pr)) continue;
        const auto p = eigenstate_probability(d, scar.geometry, rec.index);
        out.push_back({rec.index, overlap(p, scar.probability, metric), rec.pr, rec.eigenphase});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Candidate& a, const Candidate& b) { return a.overlap > b.overlap; });
    return out;
}

inline std::vector<Candidate> rank_candidates(const SpectralDecomposition& d,
                                              const ScarFunction& scar, Interval pr_window) {
    return rank_candidates(d, pr_report(d), scar, pr_window);
}

struct ScarSearch {
    std::vector<int> quantum_numbers;  // n_bs values to try; empty = 1..n_max
    std::vector<double> sigmas;        // entries <= 0 stand for the default width; empty = {0}
    double k_max = std::numbers::pi;   // lattice Nyquist limit
    double phase_correction_scale = 1.0;  // 1 includes the bounce phases in k L
    OverlapMetric metric = OverlapMetric::Cosine;
};

struct ScarMatch {
    std::string orbit_name;
    QuantizedWavenumber wavenumber;
    double sigma = 0.0;
    Candidate best;
};

/// Best (k, sigma, eigenstate) for one orbit: scans Bohr-Sommerfeld levels and
/// widths, ranking the states of the PR window against every scar function.
inline ScarMatch best_scar_match(const SpectralDecomposition& d, const PRReport& report,
                                 std::shared_ptr<const GridGeometry> g, const PeriodicOrbit& orbit,
                                 Interval pr_window, const ScarSearch& search = {}) {
    const double length = orbit.length();
    const double correction = search.phase_correction_scale * orbit.total_bounce_phase();
    std::vector<int> levels = search.quantum_numbers;
    if (levels.empty()) {
        for (int n = 1; (two_pi * n + correction) / length <= search.k_max; ++n) levels.push_back(n);
    }

    std::vector<PRRecord> window;
    std::vector<ProbabilityGrid> grids;
    for (const auto& rec : report.records) {
        if (!pr_window.contains(rec.pr)) continue;
        window.push_back(rec);
        grids.push_back(eigenstate_probability(d, g, rec.index));
    }

    ScarMatch best;
    best.orbit_name = orbit.name;
    best.best.overlap = -1.0;
    for (int n : levels) {
        const QuantizedWavenumber kw{(two_pi * n + correction) / length, n};
        std::vector<double> sigmas = search.sigmas;
        if (sigmas.empty()) sigmas.push_back(0.0);
        for (double& sigma : sigmas) {
            if (sigma <= 0.0) sigma = std::max(1.0, default_sigma(length, n));
        }
        for (double sigma : sigmas) {
            const auto scar = build_scar_function(g, orbit, kw.k, sigma, n);
            for (std::size_t w = 0; w < window.size(); ++w) {
                const double ov = overlap(grids[w], scar.probability, search.metric);
                if (ov > best.best.overlap) {
                    best.wavenumber = kw;
                    best.sigma = sigma;
                    best.best = {window[w].index, ov, window[w].pr, window[w].eigenphase};
                }
            }
        }
    }
    return best;
}

/// Count of local maxima of p along the column m = column, rows [lo, hi].
inline int count_antinodes_along_column(const ProbabilityGrid& p, int column, int lo, int hi) {
    int count = 0;
    for (int n = lo; n <= hi; ++n) {
        const double c = p.at(column, n);
        const double below = n > lo ? p.at(column, n - 1) : -1.0;
        const double above = n < hi ? p.at(column, n + 1) : -1.0;
        if (c > below && c >= above && c > 0.0) ++count;
    }
    return count;
}

}  // namespace qwalk
