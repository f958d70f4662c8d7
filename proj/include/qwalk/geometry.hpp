#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "qwalk/errors.hpp"

namespace qwalk {

enum class DomainKind { Rectangle, QuarterStadium };

inline std::string_view to_string(DomainKind kind) {
    return kind == DomainKind::Rectangle ? "rectangle" : "stadium";
}

inline DomainKind parse_domain_kind(std::string_view name) {
    if (name == "rectangle") return DomainKind::Rectangle;
    if (name == "stadium" || name == "quarter_stadium") return DomainKind::QuarterStadium;
    throw ConfigError("unknown domain kind '" + std::string(name) + "'");
}

struct Site {
    int m = 0;
    int n = 0;
    friend bool operator==(const Site&, const Site&) = default;
};

namespace detail {

// floor(sqrt(v)) for v >= 0, exact on integers
inline std::int64_t isqrt(std::int64_t v) {
    if (v <= 0) return 0;
    std::int64_t r = 0;
    std::int64_t bit = std::int64_t{1} << 62;
    while (bit > v) bit >>= 2;
    while (bit != 0) {
        if (v >= r + bit) {
            v -= r + bit;
            r = (r >> 1) + bit;
        } else {
            r >>= 1;
        }
        bit >>= 2;
    }
    return r;
}

}  // namespace detail

/// Lattice billiard: either the full rectangle [0, m_R] x [0, n_U] or the
/// upper-right quarter of a Bunimovich stadium whose straight part ends at
/// column m_C and whose arc has radius n_U, centred at (m_C, 0).
///
/// Sites are enumerated row-major (n outer, m inner); the enumeration order
/// is part of the on-disk cache format and must not change.
class GridGeometry {
public:
    static GridGeometry build(DomainKind kind, int m_R, int n_U) {
        if (m_R < 2 || n_U < 1) {
            throw ConfigError("grid requires m_R >= 2 and n_U >= 1 (got m_R=" +
                              std::to_string(m_R) + ", n_U=" + std::to_string(n_U) + ")");
        }
        if (kind == DomainKind::QuarterStadium) {
            if (m_R % 2 != 0) {
                throw ConfigError("quarter stadium requires even m_R (got " +
                                  std::to_string(m_R) + ")");
            }
            if (n_U != m_R / 2) {
                throw ConfigError("quarter stadium requires n_U = m_R/2 (got m_R=" +
                                  std::to_string(m_R) + ", n_U=" + std::to_string(n_U) + ")");
            }
        }
        return GridGeometry(kind, m_R, n_U);
    }

    DomainKind kind() const noexcept { return kind_; }
    int m_R() const noexcept { return m_R_; }
    int n_U() const noexcept { return n_U_; }
    /// First column of the arc; equals m_R for the rectangle.
    int m_C() const noexcept { return m_C_; }

    /// Topmost row reachable in column m.
    int shape_f(int m) const {
        if (m < 0 || m > m_R_) {
            throw ConfigError("shape_f: column " + std::to_string(m) + " outside [0, " +
                              std::to_string(m_R_) + "]");
        }
        return f_[static_cast<std::size_t>(m)];
    }

    /// Rightmost column reachable in row n.
    int shape_w(int n) const {
        if (n < 0 || n > n_U_) {
            throw ConfigError("shape_w: row " + std::to_string(n) + " outside [0, " +
                              std::to_string(n_U_) + "]");
        }
        return w_[static_cast<std::size_t>(n)];
    }

    bool contains(int m, int n) const noexcept {
        return m >= 0 && n >= 0 && m <= m_R_ && n <= n_U_ && n <= f_[static_cast<std::size_t>(m)];
    }

    std::optional<std::size_t> index_of(int m, int n) const noexcept {
        if (m < 0 || n < 0 || m > m_R_ || n > n_U_) return std::nullopt;
        const auto slot = table_[cell(m, n)];
        if (slot < 0) return std::nullopt;
        return static_cast<std::size_t>(slot);
    }

    /// Like index_of, but throws for points outside the domain.
    std::size_t require_index(int m, int n) const {
        if (auto idx = index_of(m, n)) return *idx;
        throw ConfigError("site (" + std::to_string(m) + ", " + std::to_string(n) +
                          ") is outside the " + std::string(to_string(kind_)) + " domain");
    }

    const std::vector<Site>& sites() const noexcept { return sites_; }
    std::size_t site_count() const noexcept { return sites_.size(); }
    const Site& site(std::size_t idx) const { return sites_.at(idx); }

    const std::vector<int>& f_table() const noexcept { return f_; }
    const std::vector<int>& w_table() const noexcept { return w_; }

    friend bool operator==(const GridGeometry& a, const GridGeometry& b) noexcept {
        return a.kind_ == b.kind_ && a.m_R_ == b.m_R_ && a.n_U_ == b.n_U_;
    }

private:
    GridGeometry(DomainKind kind, int m_R, int n_U)
        : kind_(kind), m_R_(m_R), n_U_(n_U),
          m_C_(kind == DomainKind::Rectangle ? m_R : m_R / 2) {
        f_.resize(static_cast<std::size_t>(m_R_) + 1);
        w_.resize(static_cast<std::size_t>(n_U_) + 1);
        const std::int64_t r2 = std::int64_t{n_U_} * n_U_;
        for (int m = 0; m <= m_R_; ++m) {
            if (kind_ == DomainKind::Rectangle || m <= m_C_) {
                f_[static_cast<std::size_t>(m)] = n_U_;
            } else {
                const std::int64_t d = m - m_C_;
                f_[static_cast<std::size_t>(m)] = static_cast<int>(detail::isqrt(r2 - d * d));
            }
        }
        for (int n = 0; n <= n_U_; ++n) {
            w_[static_cast<std::size_t>(n)] =
                kind_ == DomainKind::Rectangle
                    ? m_R_
                    : m_C_ + static_cast<int>(detail::isqrt(r2 - std::int64_t{n} * n));
        }

        table_.assign(static_cast<std::size_t>(m_R_ + 1) * static_cast<std::size_t>(n_U_ + 1), -1);
        for (int n = 0; n <= n_U_; ++n) {
            for (int m = 0; m <= w_[static_cast<std::size_t>(n)]; ++m) {
                table_[cell(m, n)] = static_cast<std::int64_t>(sites_.size());
                sites_.push_back({m, n});
            }
        }
    }

    std::size_t cell(int m, int n) const noexcept {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(m_R_ + 1) +
               static_cast<std::size_t>(m);
    }

    DomainKind kind_;
    int m_R_;
    int n_U_;
    int m_C_;
    std::vector<int> f_;
    std::vector<int> w_;
    std::vector<Site> sites_;
    std::vector<std::int64_t> table_;
};

inline GridGeometry build_geometry(DomainKind kind, int m_R, int n_U) {
    return GridGeometry::build(kind, m_R, n_U);
}

/// Reproducibility summary: kind, extents, site count and both shape tables.
inline nlohmann::json geometry_summary(const GridGeometry& g) {
    return nlohmann::json{
        {"kind", std::string(to_string(g.kind()))},
        {"m_R", g.m_R()},
        {"n_U", g.n_U()},
        {"m_C", g.m_C()},
        {"site_count", g.site_count()},
        {"f", g.f_table()},
        {"w", g.w_table()},
    };
}

}  // namespace qwalk
