#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gfref/cli.hpp>

using namespace gfref;
using cli::RunConfig;
using Json = cli::Json;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

namespace fs = std::filesystem;

// Unique scratch directory, removed when the test ends.
struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("gfref_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string str(const std::string& name = "") const { return (name.empty() ? path : path / name).string(); }
};

void write_text(const fs::path& p, const std::string& content) {
    std::ofstream os(p, std::ios::binary);
    REQUIRE(os.good());
    os << content;
}

std::string read_text(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

std::size_t count_lines(const std::string& text) {
    std::size_t n = 0;
    for (const char c : text)
        if (c == '\n') ++n;
    return n;
}

Json parse_file(const fs::path& p) { return Json::parse(read_text(p)); }

// Drops the fields that legitimately differ between identical runs.
Json stable_view(Json j) {
    j.erase("generated_at");
    if (j.contains("report")) j["report"].erase("wall_seconds");
    return j;
}

struct RunResult {
    int code = -1;
    std::string out, err;
};

RunResult run(const std::string& command, const RunConfig& cfg) {
    std::ostringstream out, err;
    const int code = cli::run_command(command, cfg, out, err);
    return {code, out.str(), err.str()};
}

// Writes a small simulated dataset and returns its CSV path.
std::string make_dataset(const TempDir& dir, int m, double spacing, const std::string& trend,
                         const std::string& beta, double theta, std::uint64_t seed) {
    RunConfig cfg;
    cfg.out_dir = dir.str("sim_" + std::to_string(seed));
    cfg.grid_m1 = m;
    cfg.grid_m2 = m;
    cfg.spacing = spacing;
    cfg.trend = trend;
    cfg.beta = beta;
    cfg.theta = theta;
    cfg.seed = seed;
    const auto r = run("simulate", cfg);
    REQUIRE(r.code == cli::kExitOk);
    return cfg.out_dir + "/simulated.csv";
}

}  // namespace

TEST_CASE("dataset loading accepts the documented layouts", "[cli]") {
    TempDir dir;

    SECTION("minimal three-row file") {
        write_text(dir.path / "a.csv", "x,y,z\n0,0,1.5\n1,0,2\n0,1,-0.5\n");
        const auto ds = cli::load_dataset(dir.str("a.csv"));
        CHECK(ds.data.n() == 3);
        CHECK(ds.data.p() == 1);
        CHECK(ds.covariate_columns.empty());
        CHECK(ds.data.z(2) == Approx(-0.5));
        CHECK(ds.data.design.X(1, 0) == 1.0);
    }

    SECTION("covariate columns in header order, any layout") {
        write_text(dir.path / "b.csv",
                   "z,f3,x,f2,y\n"
                   "1.0, 0.5 ,0,7,0\n"
                   "2.0,0.25,1,8,0\n"
                   "3.0,0.125,0,9,1\n"
                   "4.0,0.0625,1,10,1\n");
        const auto ds = cli::load_dataset(dir.str("b.csv"));
        CHECK(ds.data.p() == 3);  // intercept + f3 + f2
        REQUIRE(ds.covariate_columns == std::vector<std::string>{"f3", "f2"});
        CHECK(ds.data.design.X(0, 1) == Approx(0.5));   // f3 first, as in the header
        CHECK(ds.data.design.X(0, 2) == Approx(7.0));
        CHECK(ds.data.z(3) == Approx(4.0));
    }

    SECTION("carriage returns, blank tail lines, explicit plus signs") {
        write_text(dir.path / "c.csv", "x,y,z\r\n0,0,+1.5\r\n1,0,2e-1\r\n0,1,3\r\n\n");
        const auto ds = cli::load_dataset(dir.str("c.csv"));
        CHECK(ds.data.n() == 3);
        CHECK(ds.data.z(0) == Approx(1.5));
        CHECK(ds.data.z(1) == Approx(0.2));
    }
}

TEST_CASE("dataset loading reports precise failures", "[cli]") {
    TempDir dir;
    auto expect_throw = [&](const std::string& content, const std::string& needle) {
        write_text(dir.path / "t.csv", content);
        CHECK_THROWS_WITH(cli::load_dataset(dir.str("t.csv")), ContainsSubstring(needle));
    };

    CHECK_THROWS_WITH(cli::load_dataset(dir.str("missing.csv")), ContainsSubstring("cannot open"));
    expect_throw("x,y,z\n", "no data rows");
    expect_throw("x,y\n0,0\n", "missing required column 'z'");
    expect_throw("x,y,z,w\n0,0,1,2\n", "unrecognized column 'w'");
    expect_throw("x,y,z,x\n0,0,1,2\n", "duplicate column 'x'");
    expect_throw("x,y,z\n0,0,1\n1,0\n", "line 3");
    expect_throw("x,y,z\n0,0,1\n1,,2\n", "missing value in column 'y'");
    expect_throw("x,y,z\n0,0,1\n1,0,2\n0,1,NaN\n", "invalid numeric value 'NaN'");
    expect_throw("x,y,z\n0,0,1\n1,0,2\n0,1,abc\n", "line 4");

    SECTION("duplicate coordinates name both offending lines") {
        write_text(dir.path / "d.csv", "x,y,z\n0,0,1\n0.25,0.5,2\n1,1,3\n0.25,0.5,4\n");
        CHECK_THROWS_WITH(cli::load_dataset(dir.str("d.csv")),
                          ContainsSubstring("lines 3 and 5"));
    }

    SECTION("too few rows for the covariates, prefixed with the path") {
        write_text(dir.path / "e.csv", "x,y,z,f2\n0,0,1,1\n1,0,2,2\n");
        CHECK_THROWS_WITH(cli::load_dataset(dir.str("e.csv")), ContainsSubstring("e.csv"));
    }
}

TEST_CASE("environment and argument helpers", "[cli]") {
    SECTION("threads from the environment") {
        ::setenv("GFREF_THREADS", "7", 1);
        CHECK(cli::threads_from_env(1) == 7);
        ::setenv("GFREF_THREADS", "abc", 1);
        CHECK(cli::threads_from_env(2) == 2);
        ::setenv("GFREF_THREADS", "0", 1);
        CHECK(cli::threads_from_env(2) == 2);
        ::unsetenv("GFREF_THREADS");
        CHECK(cli::threads_from_env(3) == 3);
    }

    SECTION("number lists and grid specs") {
        const auto v = cli::parse_number_list("1,0.5,-2", "--beta");
        REQUIRE(v.size() == 3);
        CHECK(v(2) == Approx(-2.0));
        CHECK_THROWS_AS(cli::parse_number_list("1,zap", "--beta"), validation_error);

        const auto g = cli::parse_grid_spec("0.5:2.0:4", "--nu-grid");
        REQUIRE(g.size() == 4);
        CHECK(g(0) == Approx(0.5));
        CHECK(g(1) == Approx(1.0));
        CHECK(g(3) == Approx(2.0));
        CHECK(cli::parse_grid_spec("0.7", "--nu-grid").size() == 1);
        CHECK(cli::parse_grid_spec("0.5,1.5", "--nu-grid").size() == 2);
        CHECK_THROWS_AS(cli::parse_grid_spec("a:b:c", "--nu-grid"), validation_error);
        CHECK_THROWS_AS(cli::parse_grid_spec("1:2:0", "--nu-grid"), validation_error);
    }

    SECTION("config files") {
        TempDir dir;
        write_text(dir.path / "c.cfg", "draws=300\n# comment\n  seed = 9 \n\nkinds=exact,approx\n");
        const auto kv = cli::parse_config_file(dir.str("c.cfg"));
        REQUIRE(kv.size() == 3);
        CHECK(kv[0] == std::pair<std::string, std::string>("draws", "300"));
        CHECK(kv[1] == std::pair<std::string, std::string>("seed", "9"));
        CHECK(kv[2].second == "exact,approx");
        write_text(dir.path / "bad.cfg", "draws\n");
        CHECK_THROWS_WITH(cli::parse_config_file(dir.str("bad.cfg")), ContainsSubstring("line 1"));
        CHECK_THROWS_WITH(cli::parse_config_file(dir.str("nope.cfg")), ContainsSubstring("cannot open"));
    }

    SECTION("prior kinds and trends") {
        CHECK(cli::canonical_prior_name("Exact") == "exact-ref");
        CHECK(cli::canonical_prior_name("approx") == "approx-ref");
        CHECK(cli::canonical_prior_name("ig") == "inverse-gamma");
        CHECK_THROWS_AS(cli::canonical_prior_name("flat"), validation_error);

        CHECK(cli::resolve_trend("auto", true) == cli::Trend::data);
        CHECK(cli::resolve_trend("auto", false) == cli::Trend::constant);
        CHECK_THROWS_AS(cli::resolve_trend("data", false), validation_error);
        CHECK_THROWS_AS(cli::resolve_trend("spline", true), validation_error);
    }
}

TEST_CASE("simulate writes a round-trip dataset", "[cli]") {
    TempDir dir;
    RunConfig cfg;
    cfg.out_dir = dir.str("a");
    cfg.grid_m1 = 6;
    cfg.grid_m2 = 6;
    cfg.spacing = 0.2;
    cfg.trend = "quadratic";
    cfg.beta = "0.2,-0.5,0.1,0.9,-1,1.2";
    cfg.theta = 0.3;
    cfg.seed = 11;
    const auto r = run("simulate", cfg);
    REQUIRE(r.code == cli::kExitOk);

    const auto ds = cli::load_dataset(dir.str("a") + "/simulated.csv");
    CHECK(ds.data.n() == 36);
    CHECK(ds.data.p() == 6);
    CHECK(ds.covariate_columns ==
          std::vector<std::string>{"f2", "f3", "f4", "f5", "f6"});

    const Json meta = parse_file(fs::path(dir.str("a")) / "simulate.json");
    CHECK(meta["config"]["beta"].size() == 6);
    CHECK(meta["design"]["trend"] == "quadratic");
    CHECK(meta["design"]["n"] == 36);

    SECTION("same seed, same bytes; new seed, new field") {
        cfg.out_dir = dir.str("b");
        REQUIRE(run("simulate", cfg).code == cli::kExitOk);
        CHECK(read_text(dir.path / "a" / "simulated.csv") == read_text(dir.path / "b" / "simulated.csv"));

        cfg.out_dir = dir.str("c");
        cfg.seed = 12;
        REQUIRE(run("simulate", cfg).code == cli::kExitOk);
        CHECK(read_text(dir.path / "a" / "simulated.csv") != read_text(dir.path / "c" / "simulated.csv"));
    }

    SECTION("coefficient count must match the trend") {
        cfg.out_dir = dir.str("d");
        cfg.beta = "1,2";
        const auto bad = run("simulate", cfg);
        CHECK(bad.code == cli::kExitValidation);
        CHECK_THAT(bad.err, ContainsSubstring("--beta"));
        CHECK(Json::parse(bad.err)["error"]["kind"] == "validation");
    }
}

TEST_CASE("prior command tabulates with echoed tuning", "[cli]") {
    TempDir dir;
    const auto csv = make_dataset(dir, 8, 0.15, "constant", "1", 0.25, 21);

    RunConfig cfg;
    cfg.data_path = csv;
    cfg.prior = "approx";
    cfg.points = 150;
    cfg.out_dir = dir.str("p");
    const auto r = run("prior", cfg);
    REQUIRE(r.code == cli::kExitOk);

    const std::string table = read_text(fs::path(cfg.out_dir) / "prior.csv");
    CHECK(count_lines(table) == 151);
    CHECK(table.rfind("theta,density,log_density\n", 0) == 0);

    const Json j = parse_file(fs::path(cfg.out_dir) / "prior.json");
    CHECK(j["config"]["tuned"] == true);
    const int m1 = j["config"]["m1"].get<int>();
    CHECK(m1 >= 4);
    CHECK(m1 % 2 == 0);
    const auto loaded = cli::load_dataset(csv);
    const auto rep = tune_defaults(constant_mean_design(loaded.data.design.locations), cfg.nu);
    CHECK(m1 == rep.m1);
    CHECK(j["config"]["delta"].get<double>() == Approx(rep.delta));
    CHECK(j["diagnostics"]["upper_tail"] == "proper");
    CHECK(j["tabulation_hash"].get<std::string>().size() == 16);

    SECTION("normalized output integrates to one") {
        cfg.normalize = true;
        cfg.out_dir = dir.str("pn");
        REQUIRE(run("prior", cfg).code == cli::kExitOk);
        std::ifstream is(fs::path(cfg.out_dir) / "prior.csv");
        std::string line;
        std::getline(is, line);  // header
        std::vector<double> t, d;
        while (std::getline(is, line)) {
            const auto f = cli::split_list(line);
            REQUIRE(f.size() == 3);
            t.push_back(std::stod(f[0]));
            d.push_back(std::stod(f[1]));
        }
        double mass = 0.0;
        for (std::size_t i = 0; i + 1 < t.size(); ++i)
            mass += 0.5 * (d[i] + d[i + 1]) * (t[i + 1] - t[i]);
        CHECK(mass == Approx(1.0).margin(0.05));
    }

    SECTION("exact kind") {
        cfg.prior = "exact";
        cfg.points = 60;
        cfg.out_dir = dir.str("pe");
        REQUIRE(run("prior", cfg).code == cli::kExitOk);
        CHECK(count_lines(read_text(fs::path(cfg.out_dir) / "prior.csv")) == 61);
    }

    SECTION("partial tuning flags are rejected") {
        cfg.m1 = 10;
        cfg.out_dir = dir.str("pp");
        const auto bad = run("prior", cfg);
        CHECK(bad.code == cli::kExitValidation);
        CHECK_THAT(bad.err, ContainsSubstring("--m1, --m2, --delta"));
    }

    SECTION("general-mean approximate prior needs an evaluable trend") {
        const auto quad = make_dataset(dir, 6, 0.2, "quadratic", "0.2,-0.5,0.1,0.9,-1,1.2", 0.3, 5);
        cfg.data_path = quad;
        cfg.out_dir = dir.str("pq");
        cfg.trend = "quadratic";
        cfg.points = 80;
        REQUIRE(run("prior", cfg).code == cli::kExitOk);

        cfg.trend = "data";  // same columns, but no rule for grid nodes
        cfg.out_dir = dir.str("pd");
        const auto bad = run("prior", cfg);
        CHECK(bad.code == cli::kExitValidation);
        CHECK_THAT(bad.err, ContainsSubstring("--trend quadratic"));
    }
}

TEST_CASE("fit produces a traceable summary", "[cli]") {
    TempDir dir;
    const auto csv = make_dataset(dir, 7, 0.15, "constant", "1", 0.25, 5);

    RunConfig cfg;
    cfg.data_path = csv;
    cfg.prior = "approx";
    cfg.draws = 400;
    cfg.seed = 7;
    cfg.level = 0.9;
    cfg.points = 150;
    cfg.out_dir = dir.str("f1");
    const auto r = run("fit", cfg);
    REQUIRE(r.code == cli::kExitOk);

    const Json j = parse_file(fs::path(cfg.out_dir) / "summary.json");
    CHECK(j["prior"]["propriety"] == "proper");
    CHECK(j["prior"]["tabulation_hash"].get<std::string>().size() == 16);
    CHECK(j["config"]["seed"] == 7);
    CHECK(j["config"]["draws"] == 400);
    const double acc = j["summary"]["acceptance_rate"].get<double>();
    CHECK(acc > 0.0);
    CHECK(acc <= 1.0);
    CHECK(j["summary"]["n_draws"] == 400);
    CHECK(j["summary"]["theta"]["mode"].get<double>() > 0.0);
    REQUIRE(j["summary"]["theta"]["hpd"].size() == 2);
    CHECK(j["summary"]["theta"]["hpd"][0].get<double>() < j["summary"]["theta"]["hpd"][1].get<double>());

    const std::string draws = read_text(fs::path(cfg.out_dir) / "draws.csv");
    CHECK(count_lines(draws) == 401);
    CHECK(draws.rfind("beta_1,sigma2,theta\n", 0) == 0);

    SECTION("identical runs are byte-identical modulo the timestamp") {
        REQUIRE(run("fit", cfg).code == cli::kExitOk);  // overwrite in place
        CHECK(read_text(fs::path(cfg.out_dir) / "draws.csv") == draws);
        CHECK(stable_view(parse_file(fs::path(cfg.out_dir) / "summary.json")) == stable_view(j));
    }

    SECTION("the seed matters") {
        cfg.out_dir = dir.str("f3");
        cfg.seed = 8;
        REQUIRE(run("fit", cfg).code == cli::kExitOk);
        CHECK(read_text(dir.path / "f3" / "draws.csv") != draws);
    }
}

TEST_CASE("exit codes map the error taxonomy", "[cli]") {
    std::ostringstream out, err;

    SECTION("success passes the document through") {
        const int code = cli::guarded([] { return Json{{"ok", true}}; }, out, err);
        CHECK(code == cli::kExitOk);
        CHECK_THAT(out.str(), ContainsSubstring("\"ok\""));
        CHECK(err.str().empty());
    }

    SECTION("validation failures exit 2") {
        const int code =
            cli::guarded([]() -> Json { throw validation_error("bad input"); }, out, err);
        CHECK(code == cli::kExitValidation);
        CHECK(Json::parse(err.str())["error"]["kind"] == "validation");
    }

    SECTION("numerical failures exit 3") {
        const int code =
            cli::guarded([]() -> Json { throw numerical_error("did not converge"); }, out, err);
        CHECK(code == cli::kExitNumerical);
        CHECK(Json::parse(err.str())["error"]["kind"] == "numerical");
    }

    SECTION("unexpected failures are labeled internal") {
        const int code =
            cli::guarded([]() -> Json { throw std::runtime_error("surprise"); }, out, err);
        CHECK(code == cli::kExitNumerical);
        CHECK(Json::parse(err.str())["error"]["kind"] == "internal");
    }

    SECTION("unknown commands and missing files are validation errors") {
        RunConfig cfg;
        const auto bad = run("transmogrify", cfg);
        CHECK(bad.code == cli::kExitValidation);
        CHECK_THAT(bad.err, ContainsSubstring("unknown command"));

        cfg.data_path = "/nonexistent/data.csv";
        const auto missing = run("fit", cfg);
        CHECK(missing.code == cli::kExitValidation);
        CHECK_THAT(missing.err, ContainsSubstring("cannot open"));
    }
}

TEST_CASE("reml command covers both methods", "[cli]") {
    TempDir dir;
    const auto csv = make_dataset(dir, 8, 0.15, "constant", "1", 0.2, 31);

    RunConfig cfg;
    cfg.data_path = csv;
    cfg.out_dir = dir.str("r1");
    REQUIRE(run("reml", cfg).code == cli::kExitOk);
    const Json exact = parse_file(fs::path(cfg.out_dir) / "reml.json");
    CHECK(exact["config"]["method"] == "exact");
    CHECK(exact["fit"]["sigma2"].get<double>() > 0.0);
    CHECK(exact["fit"]["theta"].get<double>() > 0.0);
    CHECK(exact["fit"].contains("converged"));

    cfg.method = "approx";
    cfg.out_dir = dir.str("r2");
    REQUIRE(run("reml", cfg).code == cli::kExitOk);
    const Json approx = parse_file(fs::path(cfg.out_dir) / "reml.json");
    CHECK(approx["config"]["method"] == "approx");
    CHECK(approx["fit"]["sigma2"].get<double>() > 0.0);

    cfg.trend = "quadratic";
    cfg.out_dir = dir.str("r3");
    const auto bad = run("reml", cfg);
    CHECK(bad.code == cli::kExitValidation);
    CHECK_THAT(bad.err, ContainsSubstring("constant mean"));
}

TEST_CASE("select-nu scans a smoothness grid", "[cli]") {
    TempDir dir;
    const auto csv = make_dataset(dir, 8, 0.15, "constant", "1", 0.2, 13);

    RunConfig cfg;
    cfg.data_path = csv;
    cfg.nu_grid = "0.5,1.0";
    cfg.theta_points = 48;
    cfg.m1 = 10;
    cfg.m2 = 10;
    cfg.delta = 0.15;
    cfg.out_dir = dir.str("s");
    const auto r = run("select-nu", cfg);
    REQUIRE(r.code == cli::kExitOk);

    CHECK(count_lines(read_text(fs::path(cfg.out_dir) / "scan.csv")) == 3);
    const Json j = parse_file(fs::path(cfg.out_dir) / "select_nu.json");
    CHECK(j["config"]["tuned"] == false);
    const double nu_hat = j["nu_hat"].get<double>();
    CHECK((nu_hat == Approx(0.5) || nu_hat == Approx(1.0)));
}

TEST_CASE("coverage command is deterministic across thread counts", "[cli]") {
    TempDir dir;
    RunConfig cfg;
    cfg.grid_m1 = 6;
    cfg.grid_m2 = 6;
    cfg.spacing = 0.2;
    cfg.trend = "constant";
    cfg.beta = "1";
    cfg.theta = 0.3;
    cfg.priors = "inverse-gamma";
    cfg.replicates = 4;
    cfg.draws = 300;
    cfg.level = 0.9;
    cfg.seed = 3;
    cfg.threads = 2;
    cfg.points = 120;
    cfg.out_dir = dir.str("c1");
    const auto r = run("coverage", cfg);
    REQUIRE(r.code == cli::kExitOk);

    const Json j = parse_file(fs::path(cfg.out_dir) / "coverage.json");
    CHECK(j["report"]["methods"][0]["name"] == "inverse-gamma");
    CHECK(j["report"]["failure_fraction"].get<double>() == 0.0);
    CHECK(j["config"]["threads"] == 2);
    CHECK(j["config"]["priors"][0]["tabulation_hash"].get<std::string>().size() == 16);

    SECTION("one worker, same table") {
        cfg.threads = 1;
        cfg.out_dir = dir.str("c2");
        REQUIRE(run("coverage", cfg).code == cli::kExitOk);
        CHECK(read_text(dir.path / "c2" / "coverage.csv") == read_text(dir.path / "c1" / "coverage.csv"));
    }

    SECTION("maximum likelihood only") {
        cfg.priors = "";
        cfg.mle = true;
        cfg.replicates = 3;
        cfg.out_dir = dir.str("c3");
        REQUIRE(run("coverage", cfg).code == cli::kExitOk);
        const Json m = parse_file(fs::path(cfg.out_dir) / "coverage.json");
        REQUIRE(m["report"]["methods"].size() == 1);
        CHECK(m["report"]["methods"][0]["name"] == "mle");
        CHECK(m["report"]["methods"][0]["theta"]["n_used"] == 3);
    }
}

TEST_CASE("semivariogram command fits the binned cloud", "[cli]") {
    TempDir dir;
    const auto csv = make_dataset(dir, 7, 0.15, "constant", "1", 0.2, 17);

    RunConfig cfg;
    cfg.data_path = csv;
    cfg.bins = 8;
    cfg.out_dir = dir.str("v");
    REQUIRE(run("semivariogram", cfg).code == cli::kExitOk);

    const std::string table = read_text(fs::path(cfg.out_dir) / "semivariogram.csv");
    CHECK(count_lines(table) >= 4);
    CHECK(table.rfind("r_lo,", 0) == 0);
    const Json j = parse_file(fs::path(cfg.out_dir) / "semivariogram.json");
    CHECK(j["result"]["fit"]["sigma2"].get<double>() >= 0.0);
    CHECK(j["result"]["fit"]["theta"].get<double>() > 0.0);
    CHECK(j["config"]["bins"] == 8);
}

TEST_CASE("bench times the prior evaluations", "[cli]") {
    TempDir dir;
    RunConfig cfg;
    cfg.n = 36;
    cfg.p = 1;
    cfg.evals = 4;
    cfg.out_dir = dir.str("b");
    const auto r = run("bench", cfg);
    REQUIRE(r.code == cli::kExitOk);

    const std::string table = read_text(fs::path(cfg.out_dir) / "bench.csv");
    CHECK(count_lines(table) == 3);
    CHECK(table.rfind("kind,n,p,nu,evaluations,seconds,seconds_per_eval\n", 0) == 0);
    const Json j = parse_file(fs::path(cfg.out_dir) / "bench.json");
    REQUIRE(j["results"].size() == 2);
    for (const auto& row : j["results"]) CHECK(row["seconds"].get<double>() >= 0.0);
    CHECK(j["exact_over_approx"].get<double>() > 0.0);

    SECTION("input validation") {
        cfg.n = 35;
        CHECK(run("bench", cfg).code == cli::kExitValidation);
        cfg.n = 36;
        cfg.p = 3;
        CHECK(run("bench", cfg).code == cli::kExitValidation);
        cfg.p = 1;
        cfg.kinds = "inverse-gamma";
        CHECK(run("bench", cfg).code == cli::kExitValidation);
    }
}

#ifdef GFREF_CLI_PATH
namespace {

int run_binary(const std::string& args) {
    const int rc = std::system((std::string(GFREF_CLI_PATH) + " " + args).c_str());
    REQUIRE(rc != -1);
    return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("binary end-to-end", "[cli]") {
    TempDir dir;

    SECTION("help exits cleanly") {
        CHECK(run_binary("--help > /dev/null 2>&1") == 0);
        CHECK(run_binary("fit --help > /dev/null 2>&1") == 0);
    }

    SECTION("missing required input is a validation error") {
        CHECK(run_binary("fit > /dev/null 2>&1") == cli::kExitValidation);
        CHECK(run_binary("fit --data /nonexistent.csv > /dev/null 2>&1") == cli::kExitValidation);
    }

    SECTION("config file defaults lose to explicit flags") {
        const std::string sim = dir.str("sim");
        REQUIRE(run_binary("simulate --grid-m1 7 --grid-m2 7 --spacing 0.15 --trend constant"
                           " --beta 1 --theta 0.25 --seed 4 --out " +
                           sim + " > /dev/null 2>&1") == 0);

        write_text(dir.path / "fit.cfg", "draws=300\nseed=9\n");
        const std::string out = dir.str("fit");
        REQUIRE(run_binary("fit --data " + sim + "/simulated.csv --prior inverse-gamma --config " +
                           dir.str("fit.cfg") + " --seed 7 --points 120 --out " + out +
                           " > /dev/null 2>&1") == 0);
        const Json j = parse_file(fs::path(out) / "summary.json");
        CHECK(j["config"]["draws"] == 300);  // from the config file
        CHECK(j["config"]["seed"] == 7);     // the flag wins
    }

    SECTION("GFREF_THREADS seeds the default thread count") {
        const std::string out = dir.str("cov");
        REQUIRE(run_binary("coverage --grid-m1 5 --grid-m2 5 --spacing 0.2 --trend constant"
                           " --beta 1 --theta 0.3 --priors inverse-gamma --replicates 2"
                           " --draws 200 --points 100 --seed 1 --out " +
                           out + " > /dev/null 2>&1 ") == 0);
        const Json one = parse_file(fs::path(out) / "coverage.json");
        CHECK(one["config"]["threads"] == 1);

        const std::string out3 = dir.str("cov3");
        const int rc = std::system(("GFREF_THREADS=3 " + std::string(GFREF_CLI_PATH) +
                                    " coverage --grid-m1 5 --grid-m2 5 --spacing 0.2 --trend constant"
                                    " --beta 1 --theta 0.3 --priors inverse-gamma --replicates 2"
                                    " --draws 200 --points 100 --seed 1 --out " +
                                    out3 + " > /dev/null 2>&1")
                                       .c_str());
        REQUIRE(rc != -1);
        REQUIRE(WEXITSTATUS(rc) == 0);
        const Json three = parse_file(fs::path(out3) / "coverage.json");
        CHECK(three["config"]["threads"] == 3);

        SECTION("and the report itself does not depend on it") {
            CHECK(read_text(fs::path(out) / "coverage.csv") ==
                  read_text(fs::path(out3) / "coverage.csv"));
        }
    }
}
#endif
