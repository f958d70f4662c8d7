#pragma once

#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "qwalk/dynamics.hpp"
#include "qwalk/errors.hpp"
#include "qwalk/geometry.hpp"
#include "qwalk/io.hpp"
#include "qwalk/localization.hpp"
#include "qwalk/scars.hpp"
#include "qwalk/spectral.hpp"
#include "qwalk/walker.hpp"

namespace qwalk {

inline constexpr const char* version = "1.0.0";

namespace fs = std::filesystem;
using nlohmann::json;

// --- configuration -------------------------------------------------------

/// Angle as a number (radians) or an expression "pi", "pi/4", "3*pi/8",
/// "0.5".
inline double parse_angle(const json& j) {
    if (j.is_number()) return j.get<double>();
    if (!j.is_string()) throw ConfigError("angle must be a number or a string like \"pi/4\"");
    std::string s;
    for (char c : j.get<std::string>()) {
        if (!std::isspace(static_cast<unsigned char>(c))) s += c;
    }
    const auto bad = [&] { return ConfigError("cannot parse angle '" + j.get<std::string>() + "'"); };
    const auto number = [&](const std::string& t) {
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(t, &used);
        } catch (const std::exception&) {
            throw bad();
        }
        if (used != t.size()) throw bad();
        return v;
    };
    const auto pos = s.find("pi");
    if (pos == std::string::npos) return number(s);
    double factor = 1.0;
    if (pos > 0) {
        if (s[pos - 1] != '*') throw bad();
        factor = number(s.substr(0, pos - 1));
    }
    std::string rest = s.substr(pos + 2);
    double divisor = 1.0;
    if (!rest.empty()) {
        if (rest[0] != '/') throw bad();
        divisor = number(rest.substr(1));
        if (divisor == 0.0) throw bad();
    }
    return factor * std::numbers::pi / divisor;
}

inline const std::vector<std::string>& known_stages() {
    static const std::vector<std::string> s{"evolve", "spectrum", "stats", "pr", "scars"};
    return s;
}

struct EvolveSettings {
    std::optional<Site> start;  // default: (m_R / 2, n_U / 2)
    cplx up{1.0 / std::numbers::sqrt2, 0.0};
    cplx down{0.0, 1.0 / std::numbers::sqrt2};
    int steps = 232;
    std::vector<int> snapshots{38, 76, 152, 232};
    int cell = 4;  // heatmap pixels per site
};

struct StatsSettings {
    int bins = 30;
    double s_max = 4.0;
};

struct PRSettings {
    int bins = 25;
};

struct ScarSettings {
    std::string orbit_file;  // empty = built-in library
    Interval pr_window{600.0, 950.0};
    std::vector<double> sigmas{0.0, 1.0, 1.5, 2.0, 3.0};
    double k_max = std::numbers::pi;
    std::vector<int> quantum_numbers;
    std::vector<double> k_targets;
    double phase_correction_scale = 1.0;
    OverlapMetric metric = OverlapMetric::Cosine;
    double threshold = 0.5;
    double bouncing_ball_threshold = 0.6;
    int top = 10;
};

inline std::string to_string(OverlapMetric m) {
    switch (m) {
        case OverlapMetric::Bhattacharyya: return "bhattacharyya";
        case OverlapMetric::Cosine: return "cosine";
        case OverlapMetric::Intersection: return "intersection";
    }
    return "cosine";
}

inline OverlapMetric parse_overlap_metric(const std::string& s) {
    if (s == "bhattacharyya") return OverlapMetric::Bhattacharyya;
    if (s == "cosine") return OverlapMetric::Cosine;
    if (s == "intersection") return OverlapMetric::Intersection;
    throw ConfigError("unknown overlap metric '" + s + "'");
}

struct RunConfig {
    std::string name = "run";
    DomainKind kind = DomainKind::QuarterStadium;
    int m_R = 50;
    int n_U = 25;
    CoinParameters coins;
    std::vector<std::string> stages{"spectrum", "stats", "pr"};
    EvolveSettings evolve;
    StatsSettings stats;
    PRSettings pr;
    ScarSettings scars;
    fs::path output_dir = "qwalk-out";
    fs::path cache_dir = ".qwalk-cache";
    fs::path base_dir = ".";  // relative orbit files resolve against this
    std::uint64_t seed = 12345;

    GridGeometry geometry() const { return build_geometry(kind, m_R, n_U); }

    fs::path orbit_path() const {
        if (scars.orbit_file.empty()) return {};
        fs::path p = scars.orbit_file;
        return p.is_absolute() ? p : base_dir / p;
    }

    bool has_stage(const std::string& s) const {
        return std::find(stages.begin(), stages.end(), s) != stages.end();
    }

    /// Everything that determines numerical outputs, in canonical form.
    json normalized() const {
        json j;
        j["geometry"] = {{"kind", to_string(kind)}, {"m_R", m_R}, {"n_U", n_U}};
        j["coins"] = {{"alpha", coins.alpha}, {"beta", coins.beta}, {"phase", coins.phase}};
        j["stages"] = stages;
        json ev;
        if (evolve.start) ev["start"] = {evolve.start->m, evolve.start->n};
        ev["up"] = {evolve.up.real(), evolve.up.imag()};
        ev["down"] = {evolve.down.real(), evolve.down.imag()};
        ev["steps"] = evolve.steps;
        ev["snapshots"] = evolve.snapshots;
        ev["cell"] = evolve.cell;
        j["evolve"] = ev;
        j["stats"] = {{"bins", stats.bins}, {"s_max", stats.s_max}};
        j["pr"] = {{"bins", pr.bins}};
        json sc;
        sc["orbit_file"] = scars.orbit_file;
        sc["pr_window"] = {scars.pr_window.lo, scars.pr_window.hi};
        sc["sigmas"] = scars.sigmas;
        sc["k_max"] = scars.k_max;
        sc["quantum_numbers"] = scars.quantum_numbers;
        sc["k_targets"] = scars.k_targets;
        sc["phase_correction_scale"] = scars.phase_correction_scale;
        sc["metric"] = to_string(scars.metric);
        sc["threshold"] = scars.threshold;
        sc["bouncing_ball_threshold"] = scars.bouncing_ball_threshold;
        sc["top"] = scars.top;
        j["scars"] = sc;
        j["seed"] = seed;
        return j;
    }

    /// FNV-1a over the canonical config and the orbit file contents.
    std::uint64_t hash() const {
        std::uint64_t h = 1469598103934665603ull;
        const auto add = [&h](const std::string& s) {
            for (unsigned char c : s) {
                h ^= c;
                h *= 1099511628211ull;
            }
        };
        add(normalized().dump());
        const auto p = orbit_path();
        if (!p.empty()) {
            std::ifstream in(p, std::ios::binary);
            std::ostringstream os;
            os << in.rdbuf();
            add(os.str());
        }
        return h;
    }
};

namespace detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

inline cplx parse_complex(const json& j, const std::string& what) {
    if (j.is_number()) return {j.get<double>(), 0.0};
    if (j.is_array() && j.size() == 2) return {j[0].get<double>(), j[1].get<double>()};
    throw ConfigError(what + " must be a number or [re, im]");
}

inline Interval parse_interval(const json& j, const std::string& what) {
    if (j.is_string() && j.get<std::string>() == "all") return Interval::all();
    if (j.is_array() && j.size() == 2) {
        const Interval iv{j[0].get<double>(), j[1].get<double>()};
        if (iv.empty()) throw ConfigError(what + " is empty");
        return iv;
    }
    throw ConfigError(what + " must be [lo, hi] or \"all\"");
}

}  // namespace detail

/// Parses and validates a run configuration. `base_dir` anchors relative
/// orbit-file paths.
inline RunConfig parse_config(const json& j, const fs::path& base_dir = ".") {
    RunConfig c;
    c.base_dir = base_dir;
    try {
        detail::check_keys(j, "config", {"name", "geometry", "coins", "stages", "evolve", "stats", "pr",
                                         "scars", "output_dir", "cache_dir", "seed"});
        c.name = j.value("name", c.name);
        const auto& g = j.at("geometry");
        detail::check_keys(g, "geometry", {"kind", "m_R", "n_U"});
        c.kind = parse_domain_kind(g.at("kind").get<std::string>());
        c.m_R = g.at("m_R").get<int>();
        c.n_U = g.at("n_U").get<int>();
        if (j.contains("coins")) {
            const auto& co = j.at("coins");
            detail::check_keys(co, "coins", {"alpha", "beta", "phase"});
            if (co.contains("alpha")) c.coins.alpha = parse_angle(co.at("alpha"));
            if (co.contains("beta")) c.coins.beta = parse_angle(co.at("beta"));
            if (co.contains("phase")) c.coins.phase = parse_angle(co.at("phase"));
        }
        if (j.contains("stages")) c.stages = j.at("stages").get<std::vector<std::string>>();
        if (j.contains("evolve")) {
            const auto& e = j.at("evolve");
            detail::check_keys(e, "evolve", {"start", "up", "down", "steps", "snapshots", "cell"});
            if (e.contains("start")) {
                const auto s = e.at("start").get<std::vector<int>>();
                if (s.size() != 2) throw ConfigError("evolve.start must be [m, n]");
                c.evolve.start = Site{s[0], s[1]};
            }
            if (e.contains("up")) c.evolve.up = detail::parse_complex(e.at("up"), "evolve.up");
            if (e.contains("down")) c.evolve.down = detail::parse_complex(e.at("down"), "evolve.down");
            c.evolve.steps = e.value("steps", c.evolve.steps);
            if (e.contains("snapshots")) c.evolve.snapshots = e.at("snapshots").get<std::vector<int>>();
            c.evolve.cell = e.value("cell", c.evolve.cell);
        }
        if (j.contains("stats")) {
            const auto& s = j.at("stats");
            detail::check_keys(s, "stats", {"bins", "s_max"});
            c.stats.bins = s.value("bins", c.stats.bins);
            c.stats.s_max = s.value("s_max", c.stats.s_max);
        }
        if (j.contains("pr")) {
            const auto& p = j.at("pr");
            detail::check_keys(p, "pr", {"bins"});
            c.pr.bins = p.value("bins", c.pr.bins);
        }
        if (j.contains("scars")) {
            const auto& s = j.at("scars");
            detail::check_keys(s, "scars", {"orbit_file", "pr_window", "sigmas", "k_max", "quantum_numbers",
                                            "k_targets", "phase_correction_scale", "metric", "threshold",
                                            "bouncing_ball_threshold", "top"});
            if (s.contains("orbit_file") && !s.at("orbit_file").is_null()) {
                c.scars.orbit_file = s.at("orbit_file").get<std::string>();
            }
            if (s.contains("pr_window")) c.scars.pr_window = detail::parse_interval(s.at("pr_window"), "scars.pr_window");
            if (s.contains("sigmas")) c.scars.sigmas = s.at("sigmas").get<std::vector<double>>();
            if (s.contains("k_max")) c.scars.k_max = parse_angle(s.at("k_max"));
            if (s.contains("quantum_numbers")) c.scars.quantum_numbers = s.at("quantum_numbers").get<std::vector<int>>();
            if (s.contains("k_targets")) c.scars.k_targets = s.at("k_targets").get<std::vector<double>>();
            c.scars.phase_correction_scale = s.value("phase_correction_scale", c.scars.phase_correction_scale);
            if (s.contains("metric")) c.scars.metric = parse_overlap_metric(s.at("metric").get<std::string>());
            c.scars.threshold = s.value("threshold", c.scars.threshold);
            c.scars.bouncing_ball_threshold = s.value("bouncing_ball_threshold", c.scars.bouncing_ball_threshold);
            c.scars.top = s.value("top", c.scars.top);
        }
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        if (j.contains("cache_dir")) c.cache_dir = j.at("cache_dir").get<std::string>();
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    // validation
    const auto g = c.geometry();
    c.coins.validate();
    std::set<std::string> seen;
    for (const auto& s : c.stages) {
        if (std::find(known_stages().begin(), known_stages().end(), s) == known_stages().end()) {
            throw ConfigError("unknown stage '" + s + "'");
        }
        if (!seen.insert(s).second) throw ConfigError("stage '" + s + "' listed twice");
        if ((s == "stats" || s == "pr" || s == "scars") && !seen.count("spectrum")) {
            throw ConfigError("stage '" + s + "' needs 'spectrum' earlier in the stage list");
        }
    }
    if (c.stages.empty()) throw ConfigError("no stages requested");
    if (c.evolve.steps < 0) throw ConfigError("evolve.steps must be non-negative");
    if (!std::is_sorted(c.evolve.snapshots.begin(), c.evolve.snapshots.end()) ||
        (!c.evolve.snapshots.empty() &&
         (c.evolve.snapshots.front() < 0 || c.evolve.snapshots.back() > c.evolve.steps))) {
        throw ConfigError("evolve.snapshots must be sorted and lie in [0, steps]");
    }
    if (c.evolve.start && !g.contains(c.evolve.start->m, c.evolve.start->n)) {
        throw ConfigError("evolve.start lies outside the domain");
    }
    if (std::abs(std::norm(c.evolve.up) + std::norm(c.evolve.down) - 1.0) > 1e-12) {
        throw ConfigError("evolve spinor is not normalized");
    }
    if (c.evolve.cell < 1 || c.evolve.cell > 32) throw ConfigError("evolve.cell must lie in [1, 32]");
    if (c.stats.bins < 5) throw ConfigError("stats.bins must be at least 5");
    if (!(c.stats.s_max > 0)) throw ConfigError("stats.s_max must be positive");
    if (c.pr.bins < 1) throw ConfigError("pr.bins must be positive");
    if (!(c.scars.k_max > 0)) throw ConfigError("scars.k_max must be positive");
    for (int n : c.scars.quantum_numbers) {
        if (n <= 0) throw ConfigError("scars.quantum_numbers must be positive");
    }
    if (c.scars.top < 1) throw ConfigError("scars.top must be positive");
    const auto op = c.orbit_path();
    if (!op.empty() && !fs::exists(op)) throw ConfigError("orbit file '" + op.string() + "' does not exist");
    return c;
}

inline RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path.string() + "': " + e.what());
    }
    if (!j.contains("name")) j["name"] = path.stem().string();
    return parse_config(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

// --- manifest ------------------------------------------------------------

struct StageRecord {
    std::string name;
    std::string status = "pending";  // ok | failed | skipped
    double seconds = 0.0;
    std::string error;
};

struct RunManifest {
    std::string name;
    std::string config_hash;
    std::string operator_hash;
    fs::path output_dir;
    std::vector<std::string> artifacts;  // relative to output_dir
    std::vector<StageRecord> stages;
    bool cache_hit = false;
    bool complete = false;
    int exit_code = 0;  // 0 ok, 2 config error, 3 numerical failure

    json to_json(const json& config) const {
        json st = json::array();
        for (const auto& s : stages) {
            json r{{"name", s.name}, {"status", s.status}, {"seconds", s.seconds}};
            if (!s.error.empty()) r["error"] = s.error;
            st.push_back(r);
        }
        return {{"tool", "qwalk"},     {"version", version},         {"name", name},
                {"config_hash", config_hash}, {"operator_hash", operator_hash},
                {"config", config},    {"cache_hit", cache_hit},     {"complete", complete},
                {"exit_code", exit_code}, {"stages", st},            {"artifacts", artifacts}};
    }
};

// --- stage context -------------------------------------------------------

namespace detail {

struct Context {
    const RunConfig& cfg;
    std::shared_ptr<const GridGeometry> geometry;
    std::optional<WalkOperator> op;
    std::optional<SpectralDecomposition> decomposition;
    std::optional<PRReport> pr;
    RunManifest& manifest;
    std::ostream& log;

    const WalkOperator& walk() {
        if (!op) op.emplace(*geometry, cfg.coins);
        return *op;
    }

    fs::path out(const std::string& rel) const { return cfg.output_dir / rel; }

    json sidecar(const std::string& what, const std::vector<std::string>& columns, std::size_t rows) const {
        return {{"config_hash", manifest.config_hash}, {"tool_version", version}, {"content", what},
                {"columns", columns}, {"rows", rows}};
    }

    /// CSV plus JSON sidecar (same stem).
    void table(const std::string& rel, const std::string& what, const std::vector<std::string>& columns,
               const std::string& body, std::size_t rows, json extra = json::object()) {
        std::string header;
        for (std::size_t i = 0; i < columns.size(); ++i) header += (i ? "," : "") + columns[i];
        io::write_text(out(rel), header + "\n" + body);
        json meta = sidecar(what, columns, rows);
        for (auto& [k, v] : extra.items()) meta[k] = v;
        const std::string side = fs::path(rel).replace_extension(".json").string();
        io::write_json(out(side), meta);
        manifest.artifacts.push_back(rel);
        manifest.artifacts.push_back(side);
    }

    void document(const std::string& rel, json j) {
        j["config_hash"] = manifest.config_hash;
        j["tool_version"] = version;
        io::write_json(out(rel), j);
        manifest.artifacts.push_back(rel);
    }

    void heatmap(const std::string& rel, const ProbabilityGrid& grid, int cell) {
        io::write_heatmap_ppm(out(rel), grid, cell, "config_hash " + manifest.config_hash);
        manifest.artifacts.push_back(rel);
    }

    void svg(const std::string& rel, std::string text) {
        const auto pos = text.find('\n');
        text.insert(pos + 1, "<!-- config_hash " + manifest.config_hash + " -->\n");
        io::write_text(out(rel), text);
        manifest.artifacts.push_back(rel);
    }

    const SpectralDecomposition& spectrum() {
        if (!decomposition) throw ConfigError("spectrum stage has not run");
        return *decomposition;
    }
};

inline std::string pad(int t, int width) {
    std::ostringstream os;
    os << std::setw(width) << std::setfill('0') << t;
    return os.str();
}

inline void stage_evolve(Context& ctx) {
    const auto& e = ctx.cfg.evolve;
    const auto& g = *ctx.geometry;
    const Site start = e.start.value_or(Site{g.m_R() / 2, g.n_U() / 2});
    const auto st = centered_initial_state(ctx.geometry, start.m, start.n, e.up, e.down);
    const auto ev = evolve(st, ctx.walk(), e.steps, e.snapshots);
    const int width = static_cast<int>(std::to_string(std::max(1, e.steps)).size());
    std::ostringstream summary;
    for (const auto& snap : ev.snapshots) {
        const std::string stem = "evolve/p_t" + pad(snap.t, width);
        ctx.table(stem + ".csv", "probability grid", {"m", "n", "p"},
                  io::probability_csv(snap.grid).substr(6), snap.grid.p.size(),
                  {{"t", snap.t}, {"start", {start.m, start.n}}});
        ctx.heatmap(stem + ".ppm", snap.grid, e.cell);
        double pmax = 0.0;
        for (double v : snap.grid.p) pmax = std::max(pmax, v);
        summary << snap.t << ',' << io::fmt(snap.grid.total()) << ',' << io::fmt(pmax) << ','
                << io::fmt(snap.grid.at(start.m, start.n)) << '\n';
    }
    ctx.table("evolve/summary.csv", "snapshot summary", {"t", "total", "p_max", "p_start"}, summary.str(),
              ev.snapshots.size());
}

inline void stage_spectrum(Context& ctx) {
    const auto& op = ctx.walk();
    const fs::path cache = ctx.cfg.cache_dir / ("eig_" + hash_hex(op.hash()) + ".bin");
    std::string why;
    if (auto d = io::load_decomposition(cache, op.hash(), &why)) {
        ctx.log << "[" << ctx.cfg.name << "] cache hit: " << cache.string() << "\n";
        ctx.decomposition = std::move(d);
        ctx.manifest.cache_hit = true;
    } else {
        if (why != "missing") {
            std::cerr << "warning: ignoring cache '" << cache.string() << "' (" << why << "), recomputing\n";
        }
        ctx.log << "[" << ctx.cfg.name << "] diagonalizing dimension " << op.dimension() << "\n";
        ctx.decomposition = diagonalize(op);
        // write then rename so concurrent runs never see a partial file
        const fs::path tmp = cache.string() + ".tmp" +
                             std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
        io::save_decomposition(tmp, op.hash(), *ctx.decomposition);
        fs::rename(tmp, cache);
    }
    const auto& d = *ctx.decomposition;
    std::ostringstream body;
    double worst = 0.0;
    for (std::size_t j = 0; j < d.size(); ++j) {
        body << j << ',' << io::fmt(d.eigenphases[j]) << ',' << io::fmt(signed_phase(d.eigenphases[j])) << ','
             << io::fmt(d.residuals[j]) << '\n';
        worst = std::max(worst, d.residuals[j]);
    }
    ctx.table("spectrum/eigenphases.csv", "eigenphases of the one-step operator",
              {"index", "phase", "signed_phase", "residual"}, body.str(), d.size(),
              {{"dimension", d.size()}, {"max_residual", worst}, {"operator_hash", hash_hex(op.hash())}});
}

inline void stage_stats(Context& ctx) {
    const auto& d = ctx.spectrum();
    const auto s = unfold_spacings(d.eigenphases);
    const auto h = spacing_histogram(s, ctx.cfg.stats.bins, ctx.cfg.stats.s_max);
    const auto fit = fit_brody(h);
    std::size_t zero = 0;
    for (double x : s) zero += x == 0.0;

    std::ostringstream sp;
    for (std::size_t i = 0; i < s.size(); ++i) sp << i << ',' << io::fmt(s[i]) << '\n';
    ctx.table("stats/spacings.csv", "unfolded nearest-neighbour spacings", {"index", "s"}, sp.str(), s.size());

    std::ostringstream hb;
    for (std::size_t i = 0; i < h.bin_count(); ++i) {
        const double c = h.bin_center(i);
        hb << io::fmt(h.bin_edges[i]) << ',' << io::fmt(h.bin_edges[i + 1]) << ',' << io::fmt(h.density[i]) << ','
           << io::fmt(brody_pdf(c, fit.delta)) << ',' << io::fmt(wigner_pdf(c)) << ',' << io::fmt(poisson_pdf(c))
           << '\n';
    }
    ctx.table("stats/histogram.csv", "spacing histogram with model densities at bin centres",
              {"lo", "hi", "density", "brody", "wigner", "poisson"}, hb.str(), h.bin_count(),
              {{"overflow", h.overflow}});

    ctx.document("stats/stats.json", {{"geometry", to_string(ctx.geometry->kind())},
                                      {"alpha", ctx.cfg.coins.alpha},
                                      {"beta", ctx.cfg.coins.beta},
                                      {"levels", d.size()},
                                      {"bins", h.bin_count()},
                                      {"s_max", ctx.cfg.stats.s_max},
                                      {"overflow", h.overflow},
                                      {"zero_spacings", zero},
                                      {"brody_delta", fit.delta},
                                      {"rms_brody", fit.rms_error},
                                      {"rms_wigner", fit.rms_wigner},
                                      {"rms_poisson", fit.rms_poisson},
                                      {"first_bin_density", h.density.front()}});

    std::vector<io::Curve> curves(3);
    curves[0] = {"Brody d=" + io::fmt(fit.delta).substr(0, 5), "#d62728", "", {}, {}};
    curves[1] = {"Wigner", "#2ca02c", "6 3", {}, {}};
    curves[2] = {"Poisson", "#7f7f7f", "2 3", {}, {}};
    for (int i = 0; i <= 200; ++i) {
        const double x = ctx.cfg.stats.s_max * i / 200.0;
        const double y[3] = {brody_pdf(x, fit.delta), wigner_pdf(x), poisson_pdf(x)};
        for (int c = 0; c < 3; ++c) {
            curves[c].x.push_back(x);
            curves[c].y.push_back(y[c]);
        }
    }
    ctx.svg("stats/histogram.svg", io::histogram_svg(h.bin_edges, h.density, curves, "s", "P(s)",
                                                     ctx.cfg.name + ": unfolded spacing distribution"));
}

inline void stage_pr(Context& ctx) {
    const auto& d = ctx.spectrum();
    ctx.pr = pr_report(d);
    const auto& r = *ctx.pr;
    std::ostringstream body;
    for (const auto& rec : r.records) {
        body << rec.index << ',' << io::fmt(rec.eigenphase) << ',' << io::fmt(rec.pr) << '\n';
    }
    ctx.table("pr/pr.csv", "participation ratio per eigenstate", {"index", "eigenphase", "pr"}, body.str(),
              r.records.size());
    const auto h = pr_histogram(r, ctx.cfg.pr.bins);
    std::ostringstream hb;
    std::size_t mode = 0;
    for (std::size_t i = 0; i < h.density.size(); ++i) {
        hb << io::fmt(h.bin_edges[i]) << ',' << io::fmt(h.bin_edges[i + 1]) << ',' << h.counts[i] << ','
           << io::fmt(h.density[i]) << '\n';
        if (h.counts[i] > h.counts[mode]) mode = i;
    }
    ctx.table("pr/histogram.csv", "participation ratio histogram", {"lo", "hi", "count", "density"}, hb.str(),
              h.density.size());
    ctx.document("pr/pr.json", {{"geometry", to_string(ctx.geometry->kind())},
                                {"dimension", r.dimension},
                                {"sites", ctx.geometry->site_count()},
                                {"mean", r.mean},
                                {"median", r.median},
                                {"mean_over_dimension", r.mean / static_cast<double>(r.dimension)},
                                {"mode_bin", {h.bin_edges[mode], h.bin_edges[mode + 1]}}});
    ctx.svg("pr/histogram.svg", io::histogram_svg(h.bin_edges, h.density, {}, "PR", "density",
                                                  ctx.cfg.name + ": participation ratios"));
}

/// Orbits for the scar stage. Libraries are defined on the quarter stadium;
/// a rectangle run keeps the orbits that never touch the arc.
inline std::vector<PeriodicOrbit> scar_library(const RunConfig& cfg, const GridGeometry& g) {
    const bool stadium_dims = g.m_R() % 2 == 0 && g.n_U() == g.m_R() / 2;
    if (g.kind() == DomainKind::QuarterStadium) {
        return cfg.orbit_path().empty() ? default_orbit_library(g) : load_orbit_library(cfg.orbit_path().string(), g);
    }
    if (!stadium_dims) return {};
    const auto stadium = build_geometry(DomainKind::QuarterStadium, g.m_R(), g.n_U());
    const auto lib = cfg.orbit_path().empty() ? default_orbit_library(stadium)
                                              : load_orbit_library(cfg.orbit_path().string(), stadium);
    std::vector<PeriodicOrbit> flat;
    for (const auto& o : lib) {
        if (std::find(o.bounce_types.begin(), o.bounce_types.end(), BounceType::Arc) == o.bounce_types.end()) {
            validate_orbit(g, o);
            flat.push_back(o);
        }
    }
    return flat;
}

inline void stage_scars(Context& ctx) {
    const auto& d = ctx.spectrum();
    if (!ctx.pr) ctx.pr = pr_report(d);
    const auto& sc = ctx.cfg.scars;
    const auto lib = scar_library(ctx.cfg, *ctx.geometry);

    std::ostringstream body;
    json matches = json::array();
    bool all_pass = !lib.empty();
    for (const auto& orbit : lib) {
        ScarSearch search;
        search.sigmas = sc.sigmas;
        search.k_max = sc.k_max;
        search.phase_correction_scale = sc.phase_correction_scale;
        search.metric = sc.metric;
        search.quantum_numbers = sc.quantum_numbers;
        const double correction = sc.phase_correction_scale * orbit.total_bounce_phase();
        for (double kt : sc.k_targets) {
            search.quantum_numbers.push_back(quantize_wavenumber(orbit.length(), kt, correction).n_bs);
        }
        const auto m = best_scar_match(d, *ctx.pr, ctx.geometry, orbit, sc.pr_window, search);
        const bool found = m.best.overlap >= 0.0;
        const double need = orbit.name == "bouncing_ball" ? sc.bouncing_ball_threshold : sc.threshold;
        const bool pass = found && m.best.overlap >= need;
        all_pass = all_pass && pass;
        body << orbit.name << ',' << io::fmt(orbit.length()) << ',' << m.wavenumber.n_bs << ','
             << io::fmt(m.wavenumber.k) << ',' << io::fmt(m.sigma) << ','
             << (found ? std::to_string(m.best.index) : "") << ',' << io::fmt(found ? m.best.overlap : 0.0) << ','
             << io::fmt(m.best.pr) << ',' << io::fmt(m.best.eigenphase) << '\n';
        matches.push_back({{"orbit", orbit.name},
                           {"length", orbit.length()},
                           {"n_bs", m.wavenumber.n_bs},
                           {"k", m.wavenumber.k},
                           {"sigma", m.sigma},
                           {"found", found},
                           {"index", m.best.index},
                           {"overlap", found ? m.best.overlap : 0.0},
                           {"pr", m.best.pr},
                           {"eigenphase", m.best.eigenphase},
                           {"threshold", need},
                           {"pass", pass}});
        if (!found) continue;

        const auto scar = build_scar_function(ctx.geometry, orbit, m.wavenumber.k, m.sigma, m.wavenumber.n_bs);
        const auto state = eigenstate_probability(d, ctx.geometry, m.best.index);
        const std::string stem = "scars/" + orbit.name;
        ctx.table(stem + "_scar.csv", "scar function probability", {"m", "n", "p"},
                  io::probability_csv(scar.probability).substr(6), scar.probability.p.size(),
                  {{"k", scar.k}, {"n_bs", scar.n_bs}, {"sigma", scar.sigma}});
        ctx.table(stem + "_state.csv", "best matching eigenstate probability", {"m", "n", "p"},
                  io::probability_csv(state).substr(6), state.p.size(), {{"index", m.best.index}});
        ctx.heatmap(stem + "_scar.ppm", scar.probability, 8);
        ctx.heatmap(stem + "_state.ppm", state, 8);

        const auto ranked = rank_candidates(d, *ctx.pr, scar, sc.pr_window, sc.metric);
        std::ostringstream rk;
        const std::size_t top = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(sc.top));
        for (std::size_t i = 0; i < top; ++i) {
            rk << i + 1 << ',' << ranked[i].index << ',' << io::fmt(ranked[i].overlap) << ','
               << io::fmt(ranked[i].pr) << ',' << io::fmt(ranked[i].eigenphase) << '\n';
        }
        ctx.table(stem + "_ranking.csv", "eigenstates in the PR window ranked by overlap",
                  {"rank", "index", "overlap", "pr", "eigenphase"}, rk.str(), top);
    }
    ctx.table("scars/matches.csv", "best scar match per orbit",
              {"orbit", "length", "n_bs", "k", "sigma", "index", "overlap", "pr", "eigenphase"}, body.str(),
              lib.size());
    ctx.document("scars/scars.json", {{"geometry", to_string(ctx.geometry->kind())},
                                      {"metric", to_string(sc.metric)},
                                      {"pr_window", {sc.pr_window.lo, sc.pr_window.hi}},
                                      {"orbits", lib.size()},
                                      {"matches", matches},
                                      {"scarring", all_pass}});
}

}  // namespace detail

/// Runs the configured stages in order. A failing stage stops the run; the
/// manifest (always written) records which stages completed.
inline RunManifest run(const RunConfig& cfg, std::ostream& log = std::clog) {
    RunManifest man;
    man.name = cfg.name;
    man.output_dir = cfg.output_dir;
    man.config_hash = hash_hex(cfg.hash());
    for (const auto& s : cfg.stages) man.stages.push_back({s, "pending", 0.0, {}});
    fs::create_directories(cfg.output_dir);
    fs::create_directories(cfg.cache_dir);

    std::optional<detail::Context> ctx;
    bool failed = false;
    try {
        auto g = std::make_shared<const GridGeometry>(cfg.geometry());
        ctx.emplace(detail::Context{cfg, g, std::nullopt, std::nullopt, std::nullopt, man, log});
        man.operator_hash = hash_hex(parameter_hash(*g, cfg.coins));
    } catch (const ConfigError& e) {
        failed = true;
        man.exit_code = 2;
        for (auto& s : man.stages) s.status = "skipped";
        man.stages.front().error = e.what();
    }
    for (auto& st : man.stages) {
        if (failed) {
            st.status = "skipped";
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        try {
            if (st.name == "evolve") detail::stage_evolve(*ctx);
            else if (st.name == "spectrum") detail::stage_spectrum(*ctx);
            else if (st.name == "stats") detail::stage_stats(*ctx);
            else if (st.name == "pr") detail::stage_pr(*ctx);
            else if (st.name == "scars") detail::stage_scars(*ctx);
            st.status = "ok";
        } catch (const ConfigError& e) {
            st.status = "failed";
            st.error = e.what();
            man.exit_code = 2;
            failed = true;
        } catch (const NumericalError& e) {
            st.status = "failed";
            st.error = e.what();
            man.exit_code = 3;
            failed = true;
        } catch (const std::exception& e) {
            st.status = "failed";
            st.error = e.what();
            man.exit_code = 3;
            failed = true;
        }
        st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log << "[" << cfg.name << "] " << st.name << ": " << st.status << " (" << std::fixed
            << std::setprecision(2) << st.seconds << " s)" << std::defaultfloat << "\n";
        if (!st.error.empty()) log << "[" << cfg.name << "]   " << st.error << "\n";
    }
    man.complete = !failed;
    io::write_json(cfg.output_dir / "manifest.json", man.to_json(cfg.normalized()));
    return man;
}

/// Runs independent configs on a pool of `workers` threads. Results keep
/// the input order.
inline std::vector<RunManifest> run_many(const std::vector<RunConfig>& configs, int workers,
                                         std::ostream& log = std::clog) {
    std::vector<RunManifest> out(configs.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    const auto worker = [&] {
        for (std::size_t i = next++; i < configs.size(); i = next++) {
            std::ostringstream buf;
            out[i] = run(configs[i], buf);
            std::lock_guard lock(log_mutex);
            log << buf.str();
        }
    };
    const auto n = static_cast<std::size_t>(std::clamp<int>(workers, 1, 64));
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < std::min(n, configs.size()); ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return out;
}

// --- comparison ----------------------------------------------------------

namespace detail {

inline std::optional<json> read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) return std::nullopt;
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception&) {
        throw ConfigError("malformed JSON in '" + p.string() + "'");
    }
}

}  // namespace detail

/// Side-by-side summary of two finished runs (by output directory): mean PR,
/// spacing-statistics fit and scar matches. Writes compare.csv/.json into
/// `out_dir` and returns the report.
inline json compare(const fs::path& run_a, const fs::path& run_b, const fs::path& out_dir) {
    const auto ma = detail::read_json(run_a / "manifest.json");
    const auto mb = detail::read_json(run_b / "manifest.json");
    if (!ma) throw ConfigError("no manifest in '" + run_a.string() + "'");
    if (!mb) throw ConfigError("no manifest in '" + run_b.string() + "'");

    struct Row {
        std::string name;
        std::optional<double> a;
        std::optional<double> b;
    };
    std::vector<Row> rows;
    std::vector<std::string> common;
    const auto numeric = [&](const std::string& file, const std::vector<std::pair<std::string, std::string>>& keys) {
        const auto ja = detail::read_json(run_a / file);
        const auto jb = detail::read_json(run_b / file);
        if (ja && jb) common.push_back(file);
        for (const auto& [label, key] : keys) {
            Row r{label, std::nullopt, std::nullopt};
            if (ja && ja->contains(key)) r.a = ja->at(key).get<double>();
            if (jb && jb->contains(key)) r.b = jb->at(key).get<double>();
            if (r.a || r.b) rows.push_back(r);
        }
    };
    numeric("pr/pr.json", {{"dimension", "dimension"},
                           {"average PR", "mean"},
                           {"median PR", "median"},
                           {"average PR / dimension", "mean_over_dimension"}});
    numeric("stats/stats.json", {{"Brody delta", "brody_delta"},
                                 {"RMS error Brody", "rms_brody"},
                                 {"RMS error Wigner", "rms_wigner"},
                                 {"RMS error Poisson", "rms_poisson"},
                                 {"first bin density", "first_bin_density"}});
    const auto sa = detail::read_json(run_a / "scars/scars.json");
    const auto sb = detail::read_json(run_b / "scars/scars.json");
    if (sa && sb) common.push_back("scars/scars.json");
    const auto best_overlap = [](const std::optional<json>& s) -> std::optional<double> {
        if (!s) return std::nullopt;
        double best = 0.0;
        for (const auto& m : s->at("matches")) best = std::max(best, m.at("overlap").get<double>());
        return best;
    };
    const auto hits = [](const std::optional<json>& s) -> std::optional<double> {
        if (!s) return std::nullopt;
        double n = 0;
        for (const auto& m : s->at("matches")) n += m.at("pass").get<bool>() ? 1 : 0;
        return n;
    };
    if (sa || sb) {
        rows.push_back({"best scar overlap", best_overlap(sa), best_overlap(sb)});
        rows.push_back({"scar hits", hits(sa), hits(sb)});
    }
    if (common.empty()) throw ConfigError("runs share no comparable stages (need pr, stats or scars)");

    const auto scarring = [](const std::optional<json>& s) -> std::string {
        if (!s) return "n/a";
        return s->at("scarring").get<bool>() ? "yes" : "no";
    };
    std::ostringstream csv;
    csv << "quantity,a,b,delta\n";
    json jrows = json::array();
    for (const auto& r : rows) {
        csv << '"' << r.name << "\"," << (r.a ? io::fmt(*r.a) : "") << ',' << (r.b ? io::fmt(*r.b) : "") << ','
            << (r.a && r.b ? io::fmt(*r.b - *r.a) : "") << '\n';
        json jr{{"quantity", r.name}};
        jr["a"] = r.a ? json(*r.a) : json(nullptr);
        jr["b"] = r.b ? json(*r.b) : json(nullptr);
        jr["delta"] = r.a && r.b ? json(*r.b - *r.a) : json(nullptr);
        jrows.push_back(jr);
    }
    csv << "\"scarring\"," << scarring(sa) << ',' << scarring(sb) << ",\n";
    const std::string hash_a = ma->at("config_hash");
    const std::string hash_b = mb->at("config_hash");
    json report{{"tool_version", version},
                {"a", {{"name", ma->at("name")}, {"dir", run_a.string()}, {"config_hash", hash_a},
                       {"geometry", ma->at("config").at("geometry")}, {"scarring", scarring(sa)}}},
                {"b", {{"name", mb->at("name")}, {"dir", run_b.string()}, {"config_hash", hash_b},
                       {"geometry", mb->at("config").at("geometry")}, {"scarring", scarring(sb)}}},
                {"config_hash", hash_a + "+" + hash_b},
                {"compared", common},
                {"rows", jrows}};
    io::write_text(out_dir / "compare.csv", csv.str());
    io::write_json(out_dir / "compare.json", report);
    return report;
}

/// Fixed-width text rendering of a compare() report.
inline std::string format_comparison(const json& report) {
    std::ostringstream os;
    const auto cell = [](const json& v) {
        if (v.is_null()) return std::string("-");
        std::ostringstream s;
        s << std::setprecision(6) << v.get<double>();
        return s.str();
    };
    os << std::left << std::setw(26) << "quantity" << std::setw(16) << report["a"]["name"].get<std::string>()
       << std::setw(16) << report["b"]["name"].get<std::string>() << "delta\n";
    for (const auto& r : report["rows"]) {
        os << std::setw(26) << r["quantity"].get<std::string>() << std::setw(16) << cell(r["a"]) << std::setw(16)
           << cell(r["b"]) << cell(r["delta"]) << "\n";
    }
    os << std::setw(26) << "scarring" << std::setw(16) << report["a"]["scarring"].get<std::string>()
       << std::setw(16) << report["b"]["scarring"].get<std::string>() << "\n";
    return os.str();
}

// --- self test -----------------------------------------------------------

struct SelfCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Quick internal consistency checks on small grids.
inline std::vector<SelfCheck> selftest(std::uint64_t seed, const fs::path& scratch) {
    std::vector<SelfCheck> out;
    const auto check = [&out](std::string name, bool pass, std::string detail) {
        out.push_back({std::move(name), pass, std::move(detail)});
    };
    constexpr double pi = std::numbers::pi;

    double worst = 0.0;
    for (auto kind : {DomainKind::Rectangle, DomainKind::QuarterStadium}) {
        for (int m_R : {6, 10}) {
            for (double beta : {pi / 4, pi / 3}) {
                worst = std::max(worst, unitarity_defect(WalkOperator(build_geometry(kind, m_R, m_R / 2),
                                                                      {pi / 4, beta, pi / 4}).matrix()));
            }
        }
    }
    check("unitarity", worst < 1e-12, "max defect " + io::fmt(worst));

    const auto g = std::make_shared<const GridGeometry>(build_geometry(DomainKind::QuarterStadium, 20, 10));
    const WalkOperator q(*g, {pi / 4, pi / 3, pi / 4});
    const auto ev = evolve(centered_initial_state(g, 10, 5, {1 / std::numbers::sqrt2, 0}, {0, 1 / std::numbers::sqrt2}),
                           q, 200, {200});
    check("norm conservation", std::abs(ev.final_state.norm() - 1.0) < 1e-12,
          "norm after 200 steps " + io::fmt(ev.final_state.norm()));

    double endpoint = 0.0;
    for (double s = 0.0; s <= 5.0; s += 0.05) {
        endpoint = std::max({endpoint, std::abs(brody_pdf(s, 0.0) - poisson_pdf(s)),
                             std::abs(brody_pdf(s, 1.0) - wigner_pdf(s))});
    }
    check("Brody endpoints", endpoint < 1e-12, "max deviation " + io::fmt(endpoint));

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, two_pi);
    std::vector<double> phases(10000);
    for (auto& x : phases) x = u(rng);
    std::sort(phases.begin(), phases.end());
    const auto s = unfold_spacings(phases);
    double mean = 0.0;
    for (double x : s) mean += x;
    mean /= static_cast<double>(s.size());
    const double ks = ks_distance(s, [](double x) { return 1.0 - std::exp(-x); });
    check("unfolding", std::abs(mean - 1.0) < 1e-12 && ks < 0.02,
          "mean " + io::fmt(mean) + ", KS vs Poisson " + io::fmt(ks));

    const WalkOperator small(build_geometry(DomainKind::QuarterStadium, 8, 4), {pi / 4, pi / 4, pi / 4});
    const auto d = diagonalize(small);
    double res = 0.0;
    for (double r : d.residuals) res = std::max(res, r);
    check("diagonalization", res < 1e-10, "max residual " + io::fmt(res));

    fs::create_directories(scratch);
    const auto file = scratch / "selftest_cache.bin";
    io::save_decomposition(file, small.hash(), d);
    const auto back = io::load_decomposition(file, small.hash());
    fs::remove(file);
    check("cache round trip", back && back->eigenphases == d.eigenphases &&
                                  (back->eigenvectors - d.eigenvectors).cwiseAbs().maxCoeff() == 0.0,
          "");
    return out;
}

}  // namespace qwalk
