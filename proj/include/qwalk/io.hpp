#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qwalk/dynamics.hpp"
#include "qwalk/errors.hpp"
#include "qwalk/spectral.hpp"

namespace qwalk::io {

namespace fs = std::filesystem;

/// Shortest round-trip text for a double.
inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    write_text(path, j.dump(2) + "\n");
}

/// CSV with one row per site: m,n,p
inline std::string probability_csv(const ProbabilityGrid& grid) {
    std::ostringstream os;
    os << "m,n,p\n";
    for (std::size_t i = 0; i < grid.p.size(); ++i) {
        const auto [m, n] = grid.geometry->site(i);
        os << m << ',' << n << ',' << fmt(grid.p[i]) << '\n';
    }
    return os.str();
}

// --- eigendecomposition cache ---------------------------------------------
//
// Little-endian binary:
//   char[8] magic "QWEIG001" | u64 parameter hash | u64 dimension
//   f64[dim] eigenphases | f64[dim] residuals | c128[dim*dim] eigenvectors
//   (column-major) | u64 FNV-1a checksum of everything after the magic.

namespace detail {

constexpr std::array<char, 8> cache_magic{'Q', 'W', 'E', 'I', 'G', '0', '0', '1'};

struct Fnv {
    std::uint64_t h = 1469598103934665603ull;
    void add(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    }
};

}  // namespace detail

inline void save_decomposition(const fs::path& path, std::uint64_t hash,
                               const SpectralDecomposition& d) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const std::uint64_t dim = d.size();
    detail::Fnv sum;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write cache '" + path.string() + "'");
    const auto put = [&](const void* p, std::size_t n) {
        out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        sum.add(p, n);
    };
    out.write(detail::cache_magic.data(), detail::cache_magic.size());
    put(&hash, sizeof hash);
    put(&dim, sizeof dim);
    put(d.eigenphases.data(), dim * sizeof(double));
    put(d.residuals.data(), dim * sizeof(double));
    put(d.eigenvectors.data(), dim * dim * sizeof(cplx));
    out.write(reinterpret_cast<const char*>(&sum.h), sizeof sum.h);
    if (!out) throw ConfigError("failed writing cache '" + path.string() + "'");
}

/// Loads a cached decomposition. Returns nullopt when the file is missing,
/// truncated, corrupt, or was written for different parameters.
inline std::optional<SpectralDecomposition> load_decomposition(const fs::path& path,
                                                               std::uint64_t expected_hash,
                                                               std::string* why = nullptr) {
    const auto fail = [why](std::string msg) -> std::optional<SpectralDecomposition> {
        if (why) *why = std::move(msg);
        return std::nullopt;
    };
    std::ifstream in(path, std::ios::binary);
    if (!in) return fail("missing");
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != detail::cache_magic) return fail("bad magic");
    detail::Fnv sum;
    const auto get = [&](void* p, std::size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        sum.add(p, n);
        return static_cast<bool>(in);
    };
    std::uint64_t hash = 0;
    std::uint64_t dim = 0;
    if (!get(&hash, sizeof hash) || !get(&dim, sizeof dim)) return fail("truncated header");
    if (hash != expected_hash) return fail("parameter hash mismatch");
    if (dim == 0 || dim > 100000) return fail("implausible dimension");
    SpectralDecomposition d;
    d.eigenphases.resize(dim);
    d.residuals.resize(dim);
    d.eigenvectors.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    if (!get(d.eigenphases.data(), dim * sizeof(double)) ||
        !get(d.residuals.data(), dim * sizeof(double)) ||
        !get(d.eigenvectors.data(), dim * dim * sizeof(cplx))) {
        return fail("truncated payload");
    }
    std::uint64_t stored = 0;
    in.read(reinterpret_cast<char*>(&stored), sizeof stored);
    if (!in || stored != sum.h) return fail("checksum mismatch");
    return d;
}

// --- images ----------------------------------------------------------------

struct Rgb {
    unsigned char r, g, b;
};

/// Perceptual dark-blue -> yellow ramp on [0, 1].
inline Rgb colormap(double t) {
    static constexpr std::array<std::array<double, 3>, 6> stops{{
        {0.050, 0.030, 0.530},
        {0.420, 0.000, 0.660},
        {0.700, 0.150, 0.530},
        {0.900, 0.390, 0.310},
        {0.990, 0.660, 0.150},
        {0.940, 0.975, 0.130},
    }};
    t = std::clamp(t, 0.0, 1.0) * (stops.size() - 1);
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), stops.size() - 2);
    const double f = t - static_cast<double>(i);
    const auto mix = [&](int c) {
        return static_cast<unsigned char>(
            std::lround(255.0 * (stops[i][c] * (1 - f) + stops[i + 1][c] * f)));
    };
    return {mix(0), mix(1), mix(2)};
}

/// Binary PPM heatmap of a probability grid, each frame scaled to its own
/// maximum. Sites outside the domain are drawn white; n grows upwards.
/// `comment` goes into the header as a PPM comment line.
inline void write_heatmap_ppm(const fs::path& path, const ProbabilityGrid& grid, int cell = 4,
                              const std::string& comment = "") {
    const auto& g = *grid.geometry;
    double pmax = 0.0;
    for (double v : grid.p) pmax = std::max(pmax, v);
    const int width = (g.m_R() + 1) * cell;
    const int height = (g.n_U() + 1) * cell;
    std::vector<unsigned char> pix(static_cast<std::size_t>(width) * height * 3, 255);
    for (std::size_t i = 0; i < grid.p.size(); ++i) {
        const auto [m, n] = g.site(i);
        const Rgb c = colormap(pmax > 0 ? grid.p[i] / pmax : 0.0);
        const int row0 = (g.n_U() - n) * cell;
        for (int dy = 0; dy < cell; ++dy) {
            for (int dx = 0; dx < cell; ++dx) {
                const auto off = (static_cast<std::size_t>(row0 + dy) * width + m * cell + dx) * 3;
                pix[off] = c.r;
                pix[off + 1] = c.g;
                pix[off + 2] = c.b;
            }
        }
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << "P6\n";
    if (!comment.empty()) out << "# " << comment << "\n";
    out << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
}

struct Curve {
    std::string label;
    std::string color;
    std::string dash;  // SVG stroke-dasharray, empty = solid
    std::vector<double> x;
    std::vector<double> y;
};

/// Histogram bars with overlaid curves as a standalone SVG.
inline std::string histogram_svg(const std::vector<double>& edges, const std::vector<double>& density,
                                 const std::vector<Curve>& curves, const std::string& xlabel,
                                 const std::string& ylabel, const std::string& title) {
    const double w = 640, h = 420, left = 60, right = 20, top = 30, bottom = 50;
    const double x0 = edges.front(), x1 = edges.back();
    double ymax = 0.0;
    for (double d : density) ymax = std::max(ymax, d);
    for (const auto& c : curves) {
        for (double v : c.y) ymax = std::max(ymax, v);
    }
    ymax = ymax > 0 ? ymax * 1.08 : 1.0;
    const auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * (w - left - right); };
    const auto sy = [&](double y) { return h - bottom - y / ymax * (h - top - bottom); };

    std::ostringstream os;
    os.precision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\">" << title << "</text>\n";
    for (std::size_t i = 0; i < density.size(); ++i) {
        const double bx = sx(edges[i]);
        const double bw = sx(edges[i + 1]) - bx;
        const double by = sy(density[i]);
        os << "<rect x=\"" << bx << "\" y=\"" << by << "\" width=\"" << bw << "\" height=\""
           << (h - bottom - by) << "\" fill=\"#9ecae1\" stroke=\"#3182bd\" stroke-width=\"0.5\"/>\n";
    }
    double ly = top + 10;
    for (const auto& c : curves) {
        os << "<polyline fill=\"none\" stroke=\"" << c.color << "\" stroke-width=\"2\"";
        if (!c.dash.empty()) os << " stroke-dasharray=\"" << c.dash << "\"";
        os << " points=\"";
        for (std::size_t i = 0; i < c.x.size(); ++i) os << sx(c.x[i]) << ',' << sy(c.y[i]) << ' ';
        os << "\"/>\n";
        os << "<line x1=\"" << w - 170 << "\" y1=\"" << ly << "\" x2=\"" << w - 140 << "\" y2=\"" << ly
           << "\" stroke=\"" << c.color << "\" stroke-width=\"2\"";
        if (!c.dash.empty()) os << " stroke-dasharray=\"" << c.dash << "\"";
        os << "/><text x=\"" << w - 135 << "\" y=\"" << ly + 4 << "\">" << c.label << "</text>\n";
        ly += 16;
    }
    os << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\""
       << h - bottom << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
       << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4;
        const double yv = ymax * i / 4;
        os << "<text x=\"" << sx(xv) << "\" y=\"" << h - bottom + 16 << "\" text-anchor=\"middle\">"
           << xv << "</text>\n";
        os << "<text x=\"" << left - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << yv
           << "</text>\n";
    }
    os << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\">"
       << xlabel << "</text>\n";
    os << "<text x=\"16\" y=\"" << (top + h - bottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
       << (top + h - bottom) / 2 << ")\">" << ylabel << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

}  // namespace qwalk::io
