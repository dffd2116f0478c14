#pragma once

// Command-line surface: CSV dataset ingestion with line-numbered diagnostics,
// a flat run configuration shared by every subcommand, and the subcommand
// implementations themselves (prior, fit, select-nu, reml, simulate,
// coverage, semivariogram, bench).  Each command writes CSV/JSON artifacts
// into an output directory and echoes all resolved settings into its JSON so
// a run can be reproduced from the artifact alone.  Outputs are deterministic
// for a fixed seed; only the generated_at stamp and wall-clock timing fields
// vary between identical runs.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gfref/bayes.hpp"
#include "gfref/likelihoods.hpp"
#include "gfref/priors.hpp"
#include "gfref/simstudy.hpp"

namespace gfref::cli {

using Json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

// ---------------------------------------------------------------------------
// Dataset ingestion
// ---------------------------------------------------------------------------

struct ColumnSpec {
    std::string x = "x";
    std::string y = "y";
    std::string z = "z";
    std::string covariate_prefix = "f";  // extra columns must start with this
};

struct Dataset {
    DataVector data;  // intercept synthesized as the first covariate column
    std::string source;
    std::vector<std::string> covariate_columns;  // as found, in header order
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string::size_type start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(trim(line.substr(start)));
            return out;
        }
        out.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
}

inline std::optional<double> parse_double(const std::string& field) {
    const char* b = field.data();
    const char* e = b + field.size();
    if (b != e && *b == '+') ++b;  // from_chars rejects an explicit plus sign
    double v = 0.0;
    const auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc{} || r.ptr != e || b == e) return std::nullopt;
    return v;
}

inline std::string line_err(const std::string& path, std::size_t line, const std::string& what) {
    return path + ": line " + std::to_string(line) + ": " + what;
}

}  // namespace detail

// Reads a plain numeric CSV with header columns x, y, z and optional
// covariate columns (prefix "f", e.g. f2..f6), in any order.  The returned
// design carries a synthesized intercept followed by the covariates in header
// order.  All failures name the offending line (and column where it applies).
inline Dataset load_dataset(const std::string& path, const ColumnSpec& spec = {}) {
    std::ifstream is(path);
    if (!is) throw validation_error("load_dataset: cannot open '" + path + "'");

    std::string line;
    if (!std::getline(is, line)) throw validation_error(path + ": empty file");
    const auto header = detail::split(line, ',');

    constexpr int kNone = -1;
    int cx = kNone, cy = kNone, cz = kNone;
    std::vector<std::pair<int, std::string>> covs;  // column index, name
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
        const auto& name = header[static_cast<std::size_t>(c)];
        int* slot = name == spec.x ? &cx : name == spec.y ? &cy : name == spec.z ? &cz : nullptr;
        if (slot != nullptr) {
            if (*slot != kNone) throw validation_error(path + ": duplicate column '" + name + "'");
            *slot = c;
        } else if (name.rfind(spec.covariate_prefix, 0) == 0 && name.size() > spec.covariate_prefix.size()) {
            covs.emplace_back(c, name);
        } else {
            throw validation_error(path + ": unrecognized column '" + name + "' (expected " + spec.x +
                                   ", " + spec.y + ", " + spec.z + ", or " + spec.covariate_prefix +
                                   "...)");
        }
    }
    for (const auto& [need, col] : {std::pair{spec.x, cx}, {spec.y, cy}, {spec.z, cz}})
        if (col == kNone) throw validation_error(path + ": missing required column '" + need + "'");

    const std::size_t width = header.size();
    std::vector<std::array<double, 2>> xy;
    std::vector<double> zs;
    std::vector<std::vector<double>> fs;
    std::vector<std::size_t> file_lines;  // 1-based line number of each data row
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split(line, ',');
        if (fields.size() != width)
            throw validation_error(detail::line_err(path, lineno,
                                                    "expected " + std::to_string(width) + " fields, found " +
                                                        std::to_string(fields.size())));
        auto field_at = [&](int c, const std::string& name) {
            const auto& f = fields[static_cast<std::size_t>(c)];
            if (f.empty())
                throw validation_error(detail::line_err(path, lineno, "missing value in column '" + name + "'"));
            const auto v = detail::parse_double(f);
            if (!v || !std::isfinite(*v))
                throw validation_error(
                    detail::line_err(path, lineno, "invalid numeric value '" + f + "' in column '" + name + "'"));
            return *v;
        };
        xy.push_back({field_at(cx, spec.x), field_at(cy, spec.y)});
        zs.push_back(field_at(cz, spec.z));
        std::vector<double> row;
        row.reserve(covs.size());
        for (const auto& [c, name] : covs) row.push_back(field_at(c, name));
        fs.push_back(std::move(row));
        file_lines.push_back(lineno);
    }
    const auto n = static_cast<Eigen::Index>(zs.size());
    if (n == 0) throw validation_error(path + ": no data rows");

    // Report duplicates with file line numbers before the design's own check
    // turns them into row indices.
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < i; ++j)
            if (xy[static_cast<std::size_t>(i)] == xy[static_cast<std::size_t>(j)]) {
                std::ostringstream os;
                os << path << ": duplicate coordinates (" << xy[static_cast<std::size_t>(i)][0] << ", "
                   << xy[static_cast<std::size_t>(i)][1] << ") at lines "
                   << file_lines[static_cast<std::size_t>(j)] << " and "
                   << file_lines[static_cast<std::size_t>(i)];
                throw validation_error(os.str());
            }

    Locations locs(n, 2);
    Eigen::VectorXd z(n);
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(n, 1 + static_cast<Eigen::Index>(covs.size()));
    for (Eigen::Index i = 0; i < n; ++i) {
        locs(i, 0) = xy[static_cast<std::size_t>(i)][0];
        locs(i, 1) = xy[static_cast<std::size_t>(i)][1];
        z(i) = zs[static_cast<std::size_t>(i)];
        for (std::size_t k = 0; k < covs.size(); ++k)
            X(i, 1 + static_cast<Eigen::Index>(k)) = fs[static_cast<std::size_t>(i)][k];
    }

    Dataset ds;
    try {
        ds.data = DataVector(SpatialDesign(std::move(locs), std::move(X)), std::move(z));
    } catch (const validation_error& e) {
        throw validation_error(path + ": " + e.what());
    }
    ds.source = path;
    for (const auto& [c, name] : covs) ds.covariate_columns.push_back(name);
    return ds;
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

// One flat bag of settings; every subcommand reads the fields it understands
// and echoes the resolved values into its JSON output.
struct RunConfig {
    // shared
    std::string data_path;
    std::string out_dir = ".";
    double nu = 0.5;
    int threads = 1;
    std::uint64_t seed = 0;
    std::string trend = "auto";  // auto | data | constant | quadratic

    // spectral tuning (approximate prior, smoothness scan)
    int m1 = 0, m2 = 0;   // 0 = auto-tune from the design
    double delta = 0.0;   // 0 = auto-tune
    int truncation = 5;

    // prior tabulation
    std::string prior = "approx";  // exact | approx | inverse-gamma
    int points = 200;
    bool normalize = false;
    double ig_shape = 0.5;
    double ig_rate = 0.014142135623730951;  // sqrt(2)/100

    // posterior sampling
    int draws = 4000;
    bool exact_marginal = false;
    double level = 0.95;

    // smoothness scan
    std::string nu_grid = "0.25:3.0:12";  // lo:hi:count or a comma list
    int theta_points = 120;

    // restricted maximum likelihood
    std::string method = "exact";  // exact | approx

    // lattice design and truth (simulate, coverage)
    int grid_m1 = 0, grid_m2 = 0;
    double spacing = 0.0;
    std::string beta = "1";  // comma list, length must match the trend's p
    double sigma2 = 1.0;
    double theta = 0.2;

    // coverage study
    std::string priors = "exact,approx,inverse-gamma";
    int replicates = 300;
    bool mle = false;  // adds profile-likelihood intervals and ML points

    // semivariogram
    int bins = 15;

    // bench
    int n = 400;
    int p = 1;
    int evals = 500;
    std::string kinds = "exact,approx";
};

// Default thread count from the environment; flags still win over this.
inline int threads_from_env(int fallback) {
    const char* s = std::getenv("GFREF_THREADS");
    if (s == nullptr) return fallback;
    int v = 0;
    const auto r = std::from_chars(s, s + std::strlen(s), v);
    if (r.ec != std::errc{} || *r.ptr != '\0' || v < 1) return fallback;
    return v;
}

// key=value defaults file.  Blank lines and '#' comments are skipped; values
// read from here lose to explicit command-line flags, which callers enforce
// by only applying keys whose options were not given on the command line.
inline std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw validation_error("cannot open config file '" + path + "'");
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos || detail::trim(t.substr(0, eq)).empty())
            throw validation_error(detail::line_err(path, static_cast<std::size_t>(lineno),
                                                    "expected key=value, found '" + t + "'"));
        out.emplace_back(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    }
    return out;
}

namespace detail {

inline std::string utc_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// FNV-1a over the tabulation bytes: a stable fingerprint tying reports to the
// exact prior they were computed under.
inline std::string tabulation_hash(const TabulatedDensity& d) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const double* p, Eigen::Index n) {
        const auto* b = reinterpret_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < sizeof(double) * static_cast<std::size_t>(n); ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    mix(d.theta_grid.data(), d.theta_grid.size());
    mix(d.log_values.data(), d.log_values.size());
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw validation_error("cannot write '" + p.string() + "'");
    os << content;
    os.flush();
    if (!os) throw validation_error("failed while writing '" + p.string() + "'");
}

template <class T>
std::string csv_string(const T& value) {
    std::ostringstream os;
    to_csv(value, os);
    return os.str();
}

template <class T>
Json module_json(const T& value) {
    std::ostringstream os;
    to_json(value, os);
    return Json::parse(os.str());
}

inline double finite_or_nan(double v) { return std::isfinite(v) ? v : std::numeric_limits<double>::quiet_NaN(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Argument helpers
// ---------------------------------------------------------------------------

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
    std::vector<std::string> out;
    for (const auto& tok : detail::split(s, sep))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

inline Eigen::VectorXd parse_number_list(const std::string& spec, const std::string& what) {
    const auto toks = split_list(spec);
    if (toks.empty()) throw validation_error(what + ": empty number list");
    Eigen::VectorXd v(static_cast<Eigen::Index>(toks.size()));
    for (std::size_t i = 0; i < toks.size(); ++i) {
        const auto x = detail::parse_double(toks[i]);
        if (!x || !std::isfinite(*x))
            throw validation_error(what + ": could not parse '" + toks[i] + "'");
        v(static_cast<Eigen::Index>(i)) = *x;
    }
    return v;
}

// Either "lo:hi:count" (inclusive linear grid) or a comma list of values.
inline Eigen::VectorXd parse_grid_spec(const std::string& spec, const std::string& what) {
    if (spec.find(':') == std::string::npos) return parse_number_list(spec, what);
    const auto parts = detail::split(spec, ':');
    if (parts.size() != 3) throw validation_error(what + ": expected lo:hi:count, got '" + spec + "'");
    const auto lo = detail::parse_double(parts[0]);
    const auto hi = detail::parse_double(parts[1]);
    int count = 0;
    const auto r = std::from_chars(parts[2].data(), parts[2].data() + parts[2].size(), count);
    if (!lo || !hi || r.ec != std::errc{} || r.ptr != parts[2].data() + parts[2].size())
        throw validation_error(what + ": could not parse '" + spec + "'");
    if (count < 1) throw validation_error(what + ": count must be positive");
    if (count > 1 && !(*hi > *lo)) throw validation_error(what + ": need hi > lo");
    return Eigen::VectorXd::LinSpaced(count, *lo, *hi);
}

enum class Trend { data, constant, quadratic };

inline const char* to_string(Trend t) {
    switch (t) {
        case Trend::data: return "data";
        case Trend::constant: return "constant";
        default: return "quadratic";
    }
}

inline Trend resolve_trend(const std::string& name, bool has_data) {
    if (name == "auto") return has_data ? Trend::data : Trend::constant;
    if (name == "data") {
        if (!has_data) throw validation_error("trend 'data' needs --data");
        return Trend::data;
    }
    if (name == "constant") return Trend::constant;
    if (name == "quadratic") return Trend::quadratic;
    throw validation_error("unknown trend '" + name + "' (expected auto, data, constant, quadratic)");
}

// ---------------------------------------------------------------------------
// Shared resolution steps
// ---------------------------------------------------------------------------

namespace detail {

struct ResolvedData {
    DataVector data;
    Trend trend = Trend::data;
    Json echo;  // source, n, p, trend, covariate columns
};

inline ResolvedData resolved_data(const RunConfig& cfg) {
    if (cfg.data_path.empty()) throw validation_error("this command needs --data");
    Dataset ds = load_dataset(cfg.data_path);
    const Trend t = resolve_trend(cfg.trend, true);
    SpatialDesign design = t == Trend::data        ? ds.data.design
                           : t == Trend::constant ? constant_mean_design(ds.data.design.locations)
                                                   : quadratic_trend_design(ds.data.design.locations);
    ResolvedData out{DataVector(std::move(design), ds.data.z), t, Json{}};
    out.echo["source"] = ds.source;
    out.echo["n"] = out.data.n();
    out.echo["p"] = out.data.p();
    out.echo["trend"] = to_string(t);
    out.echo["covariate_columns"] = ds.covariate_columns;
    return out;
}

struct ResolvedDesign {
    SpatialDesign design;
    Trend trend = Trend::constant;
    Json echo;
};

// Design for data-free commands: CSV locations when --data is given (the
// response column is ignored), otherwise a regular lattice from the flags.
inline ResolvedDesign resolved_design_source(const RunConfig& cfg) {
    if (!cfg.data_path.empty()) {
        auto in = resolved_data(cfg);
        return {std::move(in.data.design), in.trend, std::move(in.echo)};
    }
    if (cfg.grid_m1 < 1 || cfg.grid_m2 < 1 || !(cfg.spacing > 0.0))
        throw validation_error("need --data or all of --grid-m1, --grid-m2, --spacing");
    const Trend t = resolve_trend(cfg.trend, false);
    if (t == Trend::data) throw validation_error("trend 'data' needs --data");
    Locations locs = regular_grid_locations(cfg.grid_m1, cfg.grid_m2, cfg.spacing);
    SpatialDesign design =
        t == Trend::constant ? constant_mean_design(std::move(locs)) : quadratic_trend_design(std::move(locs));
    ResolvedDesign out{std::move(design), t, Json{}};
    out.echo["grid_m1"] = cfg.grid_m1;
    out.echo["grid_m2"] = cfg.grid_m2;
    out.echo["spacing"] = cfg.spacing;
    out.echo["n"] = out.design.n();
    out.echo["p"] = out.design.p();
    out.echo["trend"] = to_string(t);
    return out;
}

}  // namespace detail

struct SpectralSettings {
    int m1 = 0, m2 = 0;
    double delta = 0.0;
    bool tuned = false;  // values came from tune_defaults rather than flags
};

inline SpectralSettings resolve_spectral(const RunConfig& cfg, const SpatialDesign& design) {
    const bool any = cfg.m1 > 0 || cfg.m2 > 0 || cfg.delta > 0.0;
    const bool all = cfg.m1 > 0 && cfg.m2 > 0 && cfg.delta > 0.0;
    if (any && !all) throw validation_error("give all of --m1, --m2, --delta or none (auto-tuned)");
    if (all) return {cfg.m1, cfg.m2, cfg.delta, false};
    const TuningReport rep = tune_defaults(design, cfg.nu);
    return {rep.m1, rep.m2, rep.delta, true};
}

inline std::string canonical_prior_name(std::string k) {
    std::transform(k.begin(), k.end(), k.begin(), [](unsigned char c) { return std::tolower(c); });
    if (k == "exact" || k == "exact-ref") return "exact-ref";
    if (k == "approx" || k == "approx-ref" || k == "approximate") return "approx-ref";
    if (k == "ig" || k == "inverse-gamma") return "inverse-gamma";
    throw validation_error("unknown prior kind '" + k + "' (expected exact, approx, inverse-gamma)");
}

struct BuiltPrior {
    TabulatedDensity density;  // unnormalized tabulation on the default range
    PriorKind kind = PriorKind::custom;
    std::string name;
    SpectralSettings spectral;  // meaningful for the approximate kind only
};

// Tabulates the requested prior for the given design over the default range.
// The approximate reference prior with a non-constant mean needs covariates
// defined at the spectral grid nodes, which the CLI supports through the
// quadratic coordinate trend.
inline BuiltPrior build_prior(const std::string& kind_name, const SpatialDesign& design, Trend trend,
                              const RunConfig& cfg) {
    BuiltPrior bp;
    bp.name = canonical_prior_name(kind_name);
    const ThetaRange range = default_prior_range(design);
    if (bp.name == "exact-ref") {
        bp.kind = PriorKind::exact_ref;
        bp.density = tabulate_density([&](double t) { return exact_ref_prior(t, design, cfg.nu); },
                                      range.lo, range.hi, cfg.points);
    } else if (bp.name == "approx-ref") {
        bp.kind = PriorKind::approx_ref;
        bp.spectral = resolve_spectral(cfg, design);
        const SpectralDesign spectral =
            build_spectral_design(bp.spectral.m1, bp.spectral.m2, bp.spectral.delta);
        const AliasConfig alias{bp.spectral.delta, cfg.truncation};
        if (design.p() == 1) {
            bp.density = tabulate_density(
                [&](double t) {
                    return approx_ref_prior_const(t, spectral, MaternParams{1.0, t, cfg.nu}, alias);
                },
                range.lo, range.hi, cfg.points);
        } else {
            if (trend != Trend::quadratic)
                throw validation_error(
                    "the approximate prior with a non-constant mean needs covariates defined at the "
                    "spectral grid nodes; rerun with --trend quadratic or --trend constant");
            const AuxGrid grid =
                build_aux_grid(bounding_box(design.locations), bp.spectral.m1, bp.spectral.m2, bp.spectral.delta);
            SpectralBasis basis = build_H1(grid, spectral);
            build_X1(basis, quadratic_trend_covariates(grid.points()));
            bp.density = tabulate_density(
                [&](double t) {
                    return approx_ref_prior_general(t, basis, MaternParams{1.0, t, cfg.nu}, alias);
                },
                range.lo, range.hi, cfg.points);
        }
    } else {
        bp.kind = PriorKind::inverse_gamma;
        if (!(cfg.ig_shape > 0.0) || !(cfg.ig_rate > 0.0))
            throw validation_error("--ig-shape and --ig-rate must be positive");
        bp.density = tabulate_log_density(
            [&](double t) { return log_inverse_gamma_density(t, cfg.ig_shape, cfg.ig_rate); }, range.lo,
            range.hi, cfg.points);
    }
    return bp;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace detail {

inline Json envelope(const char* command) {
    Json j;
    j["command"] = command;
    j["generated_at"] = utc_timestamp();
    return j;
}

inline void add_prior_config(Json& c, const BuiltPrior& bp, const RunConfig& cfg) {
    c["kind"] = bp.name;
    c["points"] = cfg.points;
    if (bp.kind == PriorKind::approx_ref) {
        c["m1"] = bp.spectral.m1;
        c["m2"] = bp.spectral.m2;
        c["delta"] = bp.spectral.delta;
        c["truncation"] = cfg.truncation;
        c["tuned"] = bp.spectral.tuned;
    }
    if (bp.kind == PriorKind::inverse_gamma) {
        c["ig_shape"] = cfg.ig_shape;
        c["ig_rate"] = cfg.ig_rate;
    }
}

inline std::filesystem::path prepare_out_dir(const RunConfig& cfg) {
    const std::filesystem::path dir(cfg.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw validation_error("cannot create output directory '" + cfg.out_dir + "': " + ec.message());
    return dir;
}

inline Json cmd_prior(const RunConfig& cfg) {
    auto in = resolved_data(cfg);
    const BuiltPrior bp = build_prior(cfg.prior, in.data.design, in.trend, cfg);

    const auto upper = tail_diagnostic(bp.density);
    const auto lower = origin_diagnostic(bp.density);
    TabulatedDensity out_density = cfg.normalize ? normalize(bp.density) : bp.density;

    Json j = envelope("prior");
    Json& c = j["config"];
    c["data"] = cfg.data_path;
    c["out"] = cfg.out_dir;
    c["nu"] = cfg.nu;
    c["trend"] = to_string(in.trend);
    c["normalize"] = cfg.normalize;
    add_prior_config(c, bp, cfg);
    j["dataset"] = in.echo;
    j["diagnostics"] = Json{{"upper_tail", to_string(upper.verdict)},
                            {"upper_slope", finite_or_nan(upper.slope)},
                            {"origin", to_string(lower.verdict)},
                            {"origin_slope", finite_or_nan(lower.slope)}};
    j["tabulation_hash"] = tabulation_hash(out_density);
    j["artifacts"] = Json::array({"prior.csv", "prior.json"});

    const auto dir = prepare_out_dir(cfg);
    write_file(dir / "prior.csv", csv_string(out_density));
    write_file(dir / "prior.json", j.dump(2) + "\n");
    return j;
}

inline Json cmd_fit(const RunConfig& cfg) {
    auto in = resolved_data(cfg);
    const BuiltPrior bp = build_prior(cfg.prior, in.data.design, in.trend, cfg);

    const MarginalPosterior marg = build_marginal_posterior(in.data, cfg.nu, bp.density);
    SampleOptions opts;
    opts.exact_marginal = cfg.exact_marginal;
    const PosteriorDraws draws = sample_posterior(marg, in.data, bp.kind, cfg.draws, cfg.seed, opts);
    const PosteriorSummary summary = summarize_posterior(draws, marg.mode_theta, cfg.level);

    Json j = envelope("fit");
    Json& c = j["config"];
    c["data"] = cfg.data_path;
    c["out"] = cfg.out_dir;
    c["nu"] = cfg.nu;
    c["trend"] = to_string(in.trend);
    c["draws"] = cfg.draws;
    c["seed"] = cfg.seed;
    c["level"] = cfg.level;
    c["exact_marginal"] = cfg.exact_marginal;
    add_prior_config(c, bp, cfg);
    j["dataset"] = in.echo;
    j["prior"] = Json{{"kind", bp.name},
                      {"tabulation_hash", tabulation_hash(bp.density)},
                      {"propriety", to_string(marg.propriety)},
                      {"failed_evaluations", marg.failed_evaluations}};
    j["summary"] = module_json(summary);
    j["artifacts"] = Json::array({"draws.csv", "summary.json"});

    const auto dir = prepare_out_dir(cfg);
    write_file(dir / "draws.csv", csv_string(draws));
    write_file(dir / "summary.json", j.dump(2) + "\n");
    return j;
}

inline Json cmd_select_nu(const RunConfig& cfg) {
    auto in = resolved_data(cfg);
    const Eigen::VectorXd grid = parse_grid_spec(cfg.nu_grid, "--nu-grid");
    const SpectralSettings ss = resolve_spectral(cfg, in.data.design);
    const SpectralDesign spectral = build_spectral_design(ss.m1, ss.m2, ss.delta);
    const AliasConfig alias{ss.delta, cfg.truncation};
    const SmoothnessScan scan = integrated_lik_nu(grid, in.data, alias, spectral, cfg.theta_points);

    Json j = envelope("select-nu");
    Json& c = j["config"];
    c["data"] = cfg.data_path;
    c["out"] = cfg.out_dir;
    c["nu_grid"] = std::vector<double>(grid.data(), grid.data() + grid.size());
    c["theta_points"] = cfg.theta_points;
    c["trend"] = to_string(in.trend);
    c["m1"] = ss.m1;
    c["m2"] = ss.m2;
    c["delta"] = ss.delta;
    c["truncation"] = cfg.truncation;
    c["tuned"] = ss.tuned;
    j["dataset"] = in.echo;
    j["nu_hat"] = finite_or_nan(scan.nu_hat);
    int flagged = 0;
    for (const char f : scan.flagged) flagged += f ? 1 : 0;
    j["flagged"] = flagged;
    j["artifacts"] = Json::array({"scan.csv", "select_nu.json"});

    const auto dir = prepare_out_dir(cfg);
    write_file(dir / "scan.csv", csv_string(scan));
    write_file(dir / "select_nu.json", j.dump(2) + "\n");
    return j;
}

inline Json cmd_reml(const RunConfig& cfg) {
    auto in = resolved_data(cfg);
    RemlMethod method;
    if (cfg.method == "exact")
        method = RemlMethod::exact;
    else if (cfg.method == "approx" || cfg.method == "approximate")
        method = RemlMethod::approximate;
    else
        throw validation_error("unknown method '" + cfg.method + "' (expected exact, approx)");
    const RemlFit fit = reml_fit(in.data, method, cfg.nu);

    Json j = envelope("reml");
    Json& c = j["config"];
    c["data"] = cfg.data_path;
    c["out"] = cfg.out_dir;
    c["nu"] = cfg.nu;
    c["trend"] = to_string(in.trend);
    c["method"] = method == RemlMethod::exact ? "exact" : "approx";
    j["dataset"] = in.echo;
    j["fit"] = Json{{"sigma2", fit.sigma2},
                    {"theta", fit.theta},
                    {"converged", fit.converged},
                    {"at_lower_bound", fit.at_lower_bound},
                    {"at_upper_bound", fit.at_upper_bound},
                    {"objective", finite_or_nan(fit.objective)},
                    {"iterations", fit.iterations}};
    j["artifacts"] = Json::array({"reml.json"});

    const auto dir = prepare_out_dir(cfg);
    write_file(dir / "reml.json", j.dump(2) + "\n");
    return j;
}

inline Json cmd_simulate(const RunConfig& cfg) {
    auto src = resolved_design_source(cfg);
    const Eigen::VectorXd beta = parse_number_list(cfg.beta, "--beta");
    if (beta.size() != src.design.p())
        throw validation_error("--beta needs " + std::to_string(src.design.p()) + " entries for trend '" +
                               to_string(src.trend) + "' (got " + std::to_string(beta.size()) + ")");
    const GrfParams truth{beta, cfg.sigma2, cfg.theta, cfg.nu};
    const DataVector sim = simulate_grf(src.design, truth, cfg.seed);

    // Round-trip friendly CSV: covariate columns come back as f2..fp.
    std::ostringstream os;
    os.precision(17);
    os << "x,y,z";
    for (Eigen::Index k = 1; k < sim.p(); ++k) os << ",f" << k + 1;
    os << '\n';
    for (Eigen::Index i = 0; i < sim.n(); ++i) {
        os << sim.design.locations(i, 0) << ',' << sim.design.locations(i, 1) << ',' << sim.z(i);
        for (Eigen::Index k = 1; k < sim.p(); ++k) os << ',' << sim.design.X(i, k);
        os << '\n';
    }

    Json j = envelope("simulate");
    Json& c = j["config"];
    c["out"] = cfg.out_dir;
    c["seed"] = cfg.seed;
    c["nu"] = cfg.nu;
    c["sigma2"] = cfg.sigma2;
    c["theta"] = cfg.theta;
    c["beta"] = std::vector<double>(beta.data(), beta.data() + beta.size());
    j["design"] = src.echo;
    j["artifacts"] = Json::array({"simulated.csv", "simulate.json"});

    const auto dir = prepare_out_dir(cfg);
    write_file(dir / "simulated.csv", os.str());
    write_file(dir / "simulate.json", j.dump(2) + "\n");
    return j;
}

inline Json cmd_coverage(const RunConfig& cfg) {
    auto src = resolved_design_source(cfg);
    const Eigen::VectorXd beta = parse_number_list(cfg.beta, "--beta");
    if (beta.size() != src.design.p())
        throw validation_error("--beta needs " + std::to_string(src.design.p()) + " entries for trend '" +
                               to_string(src.trend) + "' (got " + std::to_string(beta.size()) + ")");

    ExperimentConfig ec;
    ec.design = src.design;
    ec.truth = GrfParams{beta, cfg.sigma2, cfg.theta, cfg.nu};
    Json prior_echo = Json::array();
    for (const auto& kind : split_list(cfg.priors)) {
        const BuiltPrior bp = build_prior(kind, src.design, src.trend, cfg);
        Json pe;
        pe["kind"] = bp.name;
        if (bp.kind == PriorKind::approx_ref) {
            pe["m1"] = bp.spectral.m1;
            pe["m2"] = bp.spectral.m2;
            pe["delta"] = bp.spectral.delta;
            pe["tuned"] = bp.spectral.tuned;
        }
        pe["tabulation_hash"] = tabulation_hash(bp.density);
        prior_echo.push_back(std::move(pe));
        ec.priors.push_back(PriorEntry{bp.kind, bp.density, bp.name});
    }
    ec.mle_theta_ci = cfg.mle;
    ec.mle_sigma2_ci = cfg.mle;
    ec.replicates = cfg.replicates;
    ec.n_draws = cfg.draws;
    ec.level = cfg.level;
    ec.seed = cfg.seed;
    ec.threads = cfg.threads;
    const ExperimentReport report = coverage_experiment(ec);

    Json j = envelope("coverage");
    Json& c = j["config"];
    c["out"] = cfg.out_dir;
    c["nu"] = cfg.nu;
    c["sigma2"] = cfg.sigma2;
    c["theta"] = cfg.theta;
    c["beta"] = std::vector<double>(beta.data(), beta.data() + beta.size());
    c["replicates"] = cfg.replicates;
    c["draws"] = cfg.draws;
    c["level"] = cfg.level;
    c["seed"] = cfg.seed;
    c["threads"] = cfg.threads;
    c["mle"] = cfg.mle;
    c["points"] = cfg.points;
    c["priors"] = std::move(prior_echo);
    j["design"] = src.echo;
    j["report"] = module_json(report);
    j["artifacts"] = Json::array({"coverage.csv", "coverage.json"});

    const auto dir = prepare_out_dir(cfg);
    write_file(dir / "coverage.csv", csv_string(report));
    write_file(dir / "coverage.json", j.dump(2) + "\n");
    return j;
}

inline Json cmd_semivariogram(const RunConfig& cfg) {
    auto in = resolved_data(cfg);
    const Semivariogram sv = empirical_semivariogram(in.data, cfg.nu, cfg.bins);

    Json j = envelope("semivariogram");
    Json& c = j["config"];
    c["data"] = cfg.data_path;
    c["out"] = cfg.out_dir;
    c["nu"] = cfg.nu;
    c["bins"] = cfg.bins;
    c["trend"] = to_string(in.trend);
    j["dataset"] = in.echo;
    j["result"] = module_json(sv);
    j["artifacts"] = Json::array({"semivariogram.csv", "semivariogram.json"});

    const auto dir = prepare_out_dir(cfg);
    write_file(dir / "semivariogram.csv", csv_string(sv));
    write_file(dir / "semivariogram.json", j.dump(2) + "\n");
    return j;
}

inline Json cmd_bench(const RunConfig& cfg) {
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cfg.n))));
    if (side < 2 || side * side != cfg.n)
        throw validation_error("--n must be a perfect square lattice size (e.g. 100, 400, 1600)");
    if (cfg.p != 1 && cfg.p != 6)
        throw validation_error("--p must be 1 (constant mean) or 6 (quadratic trend)");
    if (cfg.evals < 1) throw validation_error("--evals must be positive");

    const double spacing = 0.1;
    Locations locs = regular_grid_locations(side, side, spacing);
    const SpatialDesign design =
        cfg.p == 1 ? constant_mean_design(std::move(locs)) : quadratic_trend_design(std::move(locs));
    const ThetaRange range = default_prior_range(design);
    const Eigen::VectorXd ts = log_spaced_grid(range.lo, range.hi, cfg.evals);

    std::vector<std::string> kinds;
    for (const auto& k : split_list(cfg.kinds)) {
        const std::string name = canonical_prior_name(k);
        if (name == "inverse-gamma")
            throw validation_error("--kinds compares the exact and approximate reference priors");
        if (std::find(kinds.begin(), kinds.end(), name) == kinds.end()) kinds.push_back(name);
    }
    if (kinds.empty()) throw validation_error("--kinds must name exact, approx, or both");

    struct Row {
        std::string kind;
        double seconds = 0.0;
        double checksum = 0.0;  // sum of evaluated densities; pins the work down
    };
    std::vector<Row> rows;
    for (const auto& kind : kinds) {
        Row row{kind, 0.0, 0.0};
        if (kind == "exact-ref") {
            const auto t0 = std::chrono::steady_clock::now();
            for (Eigen::Index i = 0; i < ts.size(); ++i) row.checksum += exact_ref_prior(ts(i), design, cfg.nu);
            row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        } else {
            if (side % 2 != 0)
                throw validation_error("--n lattice side must be even for the approximate prior");
            const SpectralDesign spectral = build_spectral_design(side, side, spacing);
            const AliasConfig alias{spacing, cfg.truncation};
            if (cfg.p == 1) {
                const auto t0 = std::chrono::steady_clock::now();
                for (Eigen::Index i = 0; i < ts.size(); ++i)
                    row.checksum += approx_ref_prior_const(ts(i), spectral, MaternParams{1.0, ts(i), cfg.nu}, alias);
                row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            } else {
                const AuxGrid grid = build_aux_grid(bounding_box(design.locations), side, side, spacing);
                SpectralBasis basis = build_H1(grid, spectral);
                build_X1(basis, quadratic_trend_covariates(grid.points()));
                const auto t0 = std::chrono::steady_clock::now();
                for (Eigen::Index i = 0; i < ts.size(); ++i)
                    row.checksum += approx_ref_prior_general(ts(i), basis, MaternParams{1.0, ts(i), cfg.nu}, alias);
                row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            }
        }
        rows.push_back(std::move(row));
    }

    std::ostringstream csv;
    csv.precision(10);
    csv << "kind,n,p,nu,evaluations,seconds,seconds_per_eval\n";
    for (const auto& r : rows)
        csv << r.kind << ',' << cfg.n << ',' << cfg.p << ',' << cfg.nu << ',' << cfg.evals << ','
            << r.seconds << ',' << r.seconds / cfg.evals << '\n';

    Json j = envelope("bench");
    Json& c = j["config"];
    c["out"] = cfg.out_dir;
    c["n"] = cfg.n;
    c["p"] = cfg.p;
    c["nu"] = cfg.nu;
    c["evals"] = cfg.evals;
    c["truncation"] = cfg.truncation;
    c["spacing"] = spacing;
    Json results = Json::array();
    const Row* exact = nullptr;
    const Row* approx = nullptr;
    for (const auto& r : rows) {
        results.push_back(Json{{"kind", r.kind},
                               {"seconds", r.seconds},
                               {"seconds_per_eval", r.seconds / cfg.evals},
                               {"checksum", finite_or_nan(r.checksum)}});
        if (r.kind == "exact-ref") exact = &r;
        if (r.kind == "approx-ref") approx = &r;
    }
    j["results"] = std::move(results);
    if (exact != nullptr && approx != nullptr && approx->seconds > 0.0)
        j["exact_over_approx"] = exact->seconds / approx->seconds;
    j["artifacts"] = Json::array({"bench.csv", "bench.json"});

    const auto dir = prepare_out_dir(cfg);
    write_file(dir / "bench.csv", csv.str());
    write_file(dir / "bench.json", j.dump(2) + "\n");
    return j;
}

inline Json dispatch(const std::string& command, const RunConfig& cfg) {
    if (command == "prior") return cmd_prior(cfg);
    if (command == "fit") return cmd_fit(cfg);
    if (command == "select-nu") return cmd_select_nu(cfg);
    if (command == "reml") return cmd_reml(cfg);
    if (command == "simulate") return cmd_simulate(cfg);
    if (command == "coverage") return cmd_coverage(cfg);
    if (command == "semivariogram") return cmd_semivariogram(cfg);
    if (command == "bench") return cmd_bench(cfg);
    throw validation_error("unknown command '" + command + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline Json error_json(const char* kind, const std::string& what) {
    Json j;
    j["error"] = Json{{"kind", kind}, {"what", what}};
    return j;
}

// Runs fn (returning the command's primary JSON document), prints the result
// to out, and maps failures onto the documented exit codes with a
// machine-readable error JSON on err.
template <class Fn>
int guarded(Fn&& fn, std::ostream& out, std::ostream& err) {
    try {
        const Json j = fn();
        out << j.dump(2) << '\n';
        return kExitOk;
    } catch (const validation_error& e) {
        err << error_json("validation", e.what()).dump(2) << '\n';
        return kExitValidation;
    } catch (const numerical_error& e) {
        err << error_json("numerical", e.what()).dump(2) << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << error_json("internal", e.what()).dump(2) << '\n';
        return kExitNumerical;
    }
}

inline int run_command(const std::string& command, const RunConfig& cfg, std::ostream& out,
                       std::ostream& err) {
    return guarded([&] { return detail::dispatch(command, cfg); }, out, err);
}

}  // namespace gfref::cli
