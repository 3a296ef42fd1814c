#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "omm/config.hpp"
#include "omm/io.hpp"

using namespace omm;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;

namespace {

namespace fs = std::filesystem;

// Scratch directory next to the test binary, recreated per run.
fs::path scratch() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "omm_io_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ini_file parse_ini(const std::string& text, const std::string& origin = "test.ini") {
    std::istringstream in(text);
    return ini_file::parse(in, origin);
}

}  // namespace

TEST_CASE("numeric formatting round-trips exactly and prefers short forms", "[io]") {
    for (double v : {0.0, 1.0, -1.0, 0.1, 2.0 / 3.0, 1.0 / 3.0, 3.141592653589793,
                     0.00390625, 1e300, 1e-300, -7.25, 51600.0}) {
        CHECK(std::stod(fmt(v)) == v);
    }
    CHECK(fmt(1.0) == "1");
    CHECK(fmt(0.1) == "0.1");
    CHECK(fmt(-2.5) == "-2.5");
    CHECK(fmt(0.00390625) == "0.00390625");  // 2^-8 is exact, no digit spray
}

TEST_CASE("trace CSV schema and round trip", "[io]") {
    iterate_trace trace;
    trace.records.push_back({1, -2.5, -2.25, 4.0, 2, 17, 0.125, 0.25, 1.0});
    trace.records.push_back({2, -2.625, -2.5, 8.0, 0, 15, 0.0625, 0.25, 0.5});

    const std::string path = (scratch() / "trace.csv").string();
    write_trace_csv(path, trace);

    const csv_table t = read_csv(path);
    CHECK(t.header == std::vector<std::string>{"iter", "E0", "Emu", "L", "backtracks", "nnz",
                                               "step_norm", "mu"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0][0] == 1.0);
    CHECK(t.rows[0][1] == -2.5);
    CHECK(t.rows[0][2] == -2.25);
    CHECK(t.rows[0][3] == 4.0);
    CHECK(t.rows[0][4] == 2.0);
    CHECK(t.rows[0][5] == 17.0);
    CHECK(t.rows[0][6] == 0.125);
    CHECK(t.rows[0][7] == 0.25);
    CHECK(t.rows[1][1] == -2.625);
}

TEST_CASE("convergence CSV schema with optional order columns", "[io]") {
    convergence_row a;
    a.mu = 0.5;
    a.min_gap_emu = 0.25;
    a.e0_excess = 0.0625;
    a.dist = 0.125;
    convergence_row b = a;
    b.mu = 0.25;
    b.order_gap = 1.0;
    b.order_e0 = 2.0;
    b.order_dist = 1.0;

    const std::string path = (scratch() / "convergence.csv").string();
    write_convergence_csv(path, {a, b});

    const csv_table t = read_csv(path);
    CHECK(t.header == std::vector<std::string>{"mu", "min_gap_Emu", "order1", "e0_excess",
                                               "order2", "dist", "order3"});
    REQUIRE(t.rows.size() == 2);
    CHECK(std::isnan(t.rows[0][2]));  // first row has no orders
    CHECK(t.raw[0][2].empty());
    CHECK(t.rows[1][2] == 1.0);
    CHECK(t.rows[1][4] == 2.0);
}

TEST_CASE("headerless matrix CSV", "[io]") {
    Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    const std::string path = (scratch() / "grid.csv").string();
    write_matrix_csv(path, m);
    CHECK(slurp(path) == "1,2,3\n4,5,6\n");
}

TEST_CASE("iterate triplet dump lists nonzeros in column-major order", "[io]") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 2);
    x(0, 0) = 1.5;
    x(1, 1) = -2.0;
    const std::string path = (scratch() / "x.triplets").string();
    write_matrix_triplets(path, x);
    CHECK(slurp(path) == "3 2\n0 0 1.5\n1 1 -2\n");
}

TEST_CASE("xy series writer", "[io]") {
    const std::string path = (scratch() / "xy.csv").string();
    write_xy_csv(path, "t", "err", {1.0, 2.0}, {0.5, 0.25});
    const csv_table t = read_csv(path);
    CHECK(t.header == std::vector<std::string>{"t", "err"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[1][1] == 0.25);

    CHECK_THROWS_AS(write_xy_csv(path, "t", "err", {1.0}, {}), std::invalid_argument);
}

TEST_CASE("writers create missing directories", "[io]") {
    const fs::path nested = scratch() / "deep" / "er" / "file.csv";
    write_xy_csv(nested.string(), "a", "b", {1.0}, {2.0});
    CHECK(fs::exists(nested));
}

TEST_CASE("CSV reader tolerates labels, CRLF, and trailing commas", "[io]") {
    const fs::path p = scratch() / "messy.csv";
    {
        std::ofstream out(p, std::ios::binary);
        out << "name,value\r\n";
        out << "alpha,1.5\r\n";
        out << "\r\n";                 // blank line disappears
        out << "beta,2.5,\n";          // trailing comma adds an empty cell
        out << "gamma,not_a_number\n";
    }
    const csv_table t = read_csv(p.string());
    CHECK(t.header == std::vector<std::string>{"name", "value"});
    REQUIRE(t.rows.size() == 3);
    CHECK(std::isnan(t.rows[0][0]));  // label column parses as NaN
    CHECK(t.raw[0][0] == "alpha");
    CHECK(t.rows[0][1] == 1.5);
    REQUIRE(t.rows[1].size() == 3);
    CHECK(std::isnan(t.rows[1][2]));
    CHECK(t.raw[1][2].empty());
    CHECK(std::isnan(t.rows[2][1]));
    CHECK(t.raw[2][1] == "not_a_number");

    CHECK(t.column("value") == std::size_t{1});
    CHECK_FALSE(t.column("missing").has_value());

    const csv_table h = read_csv(p.string(), false);
    CHECK(h.header.empty());
    CHECK(h.rows.size() == 4);  // the header line becomes data

    CHECK_THROWS_AS(read_csv((scratch() / "nope.csv").string()), std::runtime_error);
}

TEST_CASE("run manifest serialization", "[io]") {
    run_manifest man;
    man.command = "solve";
    man.config_path = "conf.ini";
    man.resolved = json{{"n", 800}};
    man.seeds = {42, 43};
    man.outputs = {"trace.csv"};
    man.started_at = "2026-01-01T00:00:00Z";
    man.finished_at = "2026-01-01T00:00:01Z";

    const json j = man.to_json();
    CHECK(j.at("command") == "solve");
    CHECK(j.at("config") == "conf.ini");
    CHECK(j.at("resolved").at("n") == 800);
    CHECK(j.at("seeds") == json({42, 43}));
    CHECK(j.at("outputs") == json({"trace.csv"}));
    CHECK(j.at("library_version") == OMM_VERSION);
    CHECK(std::string(OMM_VERSION) == "0.1.0");

    const std::string path = (scratch() / "manifest.json").string();
    man.write(path);
    std::ifstream in(path);
    const json back = json::parse(in);
    CHECK(back == j);
}

TEST_CASE("timestamps are ISO-8601 UTC", "[io]") {
    const std::string ts = timestamp_utc();
    REQUIRE(ts.size() == 20);
    CHECK(ts[4] == '-');
    CHECK(ts[10] == 'T');
    CHECK(ts.back() == 'Z');
}

TEST_CASE("INI parsing", "[config]") {
    SECTION("sections, comments, whitespace") {
        const ini_file f = parse_ini("; leading comment\n"
                                     "[problem]\n"
                                     "n = 150   # inline comment\n"
                                     "alpha=-10\n"
                                     "\n"
                                     "[solver]\n"
                                     "  variant =  block_dynamic  \n");
        CHECK(f.has("problem", "n"));
        CHECK(f.get("problem", "n", "") == "150");
        CHECK(f.get("problem", "alpha", "") == "-10");
        CHECK(f.get("solver", "variant", "") == "block_dynamic");
        CHECK_FALSE(f.has("solver", "n"));
        CHECK(f.get("solver", "n", "fallback") == "fallback");
        CHECK(f.entries().size() == 3);
    }

    SECTION("diagnostics carry origin and line number") {
        CHECK_THROWS_MATCHES(parse_ini("[problem\n"), config_error,
                             MessageMatches(ContainsSubstring("test.ini:1")));
        CHECK_THROWS_MATCHES(parse_ini("[a]\njust words\n"), config_error,
                             MessageMatches(ContainsSubstring("test.ini:2")));
        CHECK_THROWS_MATCHES(parse_ini("[a]\n= 3\n"), config_error,
                             MessageMatches(ContainsSubstring("empty key")));
        CHECK_THROWS_AS(ini_file::load("/definitely/not/here.ini"), config_error);
    }

    SECTION("typed getters") {
        const ini_file f = parse_ini("[s]\n"
                                     "d = 2.5\n"
                                     "i = 12\n"
                                     "u = 9000000000000000000\n"
                                     "b1 = yes\n"
                                     "b0 = 0\n"
                                     "list = 1, 2.5, -3\n"
                                     "ints = 4,8\n"
                                     "badnum = 1.5x\n"
                                     "badint = 12x\n"
                                     "badbool = maybe\n");
        CHECK(f.get_double("s", "d", 0.0) == 2.5);
        CHECK(f.get_double("s", "missing", -1.5) == -1.5);
        CHECK(f.get_long("s", "i", 0) == 12);
        CHECK(f.get_u64("s", "u", 0) == 9000000000000000000ULL);
        CHECK(f.get_bool("s", "b1", false));
        CHECK_FALSE(f.get_bool("s", "b0", true));
        CHECK(f.get_doubles("s", "list", {}) == std::vector<double>{1.0, 2.5, -3.0});
        CHECK(f.get_ints("s", "ints", {}) == std::vector<int>{4, 8});
        CHECK(f.get_ints("s", "missing", {7}) == std::vector<int>{7});

        CHECK_THROWS_AS(f.get_double("s", "badnum", 0.0), config_error);
        CHECK_THROWS_AS(f.get_long("s", "badint", 0), config_error);
        CHECK_THROWS_AS(f.get_long("s", "d", 0), config_error);  // trailing .5 rejected
        CHECK_THROWS_AS(f.get_bool("s", "badbool", false), config_error);
        CHECK_THROWS_AS(f.get_doubles("s", "badnum", {}), config_error);
    }
}

TEST_CASE("problem configuration", "[config]") {
    SECTION("defaults") {
        const problem_config p = problem_config::from_ini(parse_ini(""));
        CHECK(p.n == 800);
        CHECK(p.alpha == -100.0);
        CHECK(p.beta == 0.1);
        CHECK(p.m == 10);
        CHECK(p.domain == 10.0);
        CHECK(p.wells == 10);
        CHECK(p.shift_margin == 10.0);
        CHECK_FALSE(p.explicit_shift);
        CHECK(p.grid().n_points == 800);
        CHECK(p.grid().domain_length == 10.0);
        CHECK(p.centers().size() == 10);
        CHECK(p.centers().front() == 0.5);
        CHECK(p.shift().mode == shift_policy::kind::auto_margin);
    }

    SECTION("overrides and explicit shift") {
        const problem_config p = problem_config::from_ini(parse_ini("[problem]\n"
                                                                    "n = 150\n"
                                                                    "alpha = -10\n"
                                                                    "m = 5\n"
                                                                    "wells = 5\n"
                                                                    "shift_eta = 900\n"));
        CHECK(p.n == 150);
        CHECK(p.m == 5);
        CHECK(p.explicit_shift);
        CHECK(p.shift_eta == 900.0);
        CHECK(p.shift().mode == shift_policy::kind::explicit_eta);
        CHECK(p.potential().centers.size() == 5);
    }

    SECTION("validation") {
        CHECK_THROWS_AS(problem_config::from_ini(parse_ini("[problem]\nn = 1\n")), config_error);
        CHECK_THROWS_AS(problem_config::from_ini(parse_ini("[problem]\nm = 0\n")), config_error);
        CHECK_THROWS_AS(problem_config::from_ini(parse_ini("[problem]\nn = 10\nm = 10\n")),
                        config_error);
        CHECK_THROWS_AS(problem_config::from_ini(parse_ini("[problem]\ndomain = 0\n")),
                        config_error);
        CHECK_THROWS_AS(problem_config::from_ini(parse_ini("[problem]\nwells = 0\n")),
                        config_error);
    }

    SECTION("curvature-scale default step parameter") {
        const problem_config p = problem_config::from_ini(parse_ini(""));
        // h = 10/800, so 4 * (2/h^2 + 100) = 4 * 12900.
        CHECK_THAT(default_l0(p), Catch::Matchers::WithinRel(51600.0, 1e-12));
    }
}

TEST_CASE("initial-condition configuration", "[config]") {
    const init_config d = init_config::from_ini(parse_ini(""));
    CHECK(d.l_support == 10);
    CHECK(d.seed == 42);

    const init_config c = init_config::from_ini(parse_ini("[init]\nl_support = 4\nseed = 7\n"));
    CHECK(c.l_support == 4);
    CHECK(c.seed == 7);

    CHECK_THROWS_AS(init_config::from_ini(parse_ini("[init]\nl_support = -1\n")), config_error);
}

TEST_CASE("name parsing round trips", "[config]") {
    for (solver_variant v : {solver_variant::ista_backtrack, solver_variant::ista_dynamic,
                             solver_variant::block_dynamic}) {
        CHECK(parse_variant(variant_name(v)) == v);
    }
    CHECK_THROWS_AS(parse_variant("fista"), config_error);

    CHECK(parse_block_order("sequential") == block_order::sequential);
    CHECK(parse_block_order("random_permutation") == block_order::random_permutation);
    CHECK(parse_block_order("random") == block_order::random_permutation);
    CHECK_THROWS_AS(parse_block_order("sorted"), config_error);
    CHECK(block_order_name(block_order::sequential) == "sequential");
    CHECK(block_order_name(block_order::random_permutation) == "random_permutation");
}

TEST_CASE("mu schedule text form", "[config]") {
    const mu_schedule s = parse_mu_schedule("0:0.1, 100:1.0, 500:0.1");
    REQUIRE(s.pieces.size() == 3);
    CHECK(s.at(99) == 0.1);
    CHECK(s.at(100) == 1.0);
    CHECK(s.at(500) == 0.1);

    CHECK_THROWS_AS(parse_mu_schedule("5"), config_error);
    CHECK_THROWS_AS(parse_mu_schedule("a:b"), config_error);
    CHECK_THROWS_AS(parse_mu_schedule("100:1.0"), std::invalid_argument);  // must start at 0
}

TEST_CASE("solver configuration", "[config]") {
    const problem_config p = problem_config::from_ini(parse_ini(""));

    SECTION("defaults resolve l0 against the problem") {
        const solver_config s = solver_from_ini(parse_ini(""), p);
        CHECK(s.variant == solver_variant::ista_dynamic);
        CHECK(s.schedule == block_order::sequential);
        CHECK_THAT(s.l0, Catch::Matchers::WithinRel(default_l0(p), 1e-15));
        CHECK(s.eta_bt == 2.0);
        CHECK(s.c1 == 1.5);
        CHECK(s.c2 == 2.0);
        CHECK(s.tol == 1e-6);
        CHECK(s.max_iters == 10000);
        CHECK(s.seed == 0);
        CHECK_FALSE(s.track_entry_activity);
        CHECK(s.mu.pieces.size() == 1);
        CHECK(s.mu.at(0) == 0.0);
    }

    SECTION("explicit values win") {
        const solver_config s = solver_from_ini(parse_ini("[solver]\n"
                                                          "variant = block_dynamic\n"
                                                          "block_order = random\n"
                                                          "l0 = 5.5\n"
                                                          "tol = 1e-9\n"
                                                          "seed = 99\n"
                                                          "track_entries = yes\n"
                                                          "[mu]\n"
                                                          "value = 0.25\n"),
                                                p);
        CHECK(s.variant == solver_variant::block_dynamic);
        CHECK(s.schedule == block_order::random_permutation);
        CHECK(s.l0 == 5.5);
        CHECK(s.tol == 1e-9);
        CHECK(s.seed == 99);
        CHECK(s.track_entry_activity);
        CHECK(s.mu.at(1000) == 0.25);
    }

    SECTION("a schedule overrides a constant value") {
        const solver_config s = solver_from_ini(parse_ini("[mu]\n"
                                                          "value = 0.25\n"
                                                          "schedule = 0:0.1,10:1.0\n"),
                                                p);
        CHECK(s.mu.at(0) == 0.1);
        CHECK(s.mu.at(10) == 1.0);
    }

    SECTION("invalid settings are rejected at parse time") {
        CHECK_THROWS_AS(solver_from_ini(parse_ini("[solver]\nvariant = fista\n"), p),
                        config_error);
        CHECK_THROWS_AS(solver_from_ini(parse_ini("[solver]\ntol = 0\n"), p),
                        std::invalid_argument);
        CHECK_THROWS_AS(solver_from_ini(parse_ini("[mu]\nvalue = -1\n"), p),
                        std::invalid_argument);
    }
}

TEST_CASE("experiment configuration", "[config]") {
    SECTION("defaults") {
        const experiment_config c = experiment_config::from_ini(parse_ini(""));
        CHECK(c.out_dir == "out");
        CHECK(c.threads == 1);
        CHECK(c.alphas == std::vector<double>{-100.0, -10.0});
        CHECK(c.ladder_top_exp == -8);
        CHECK(c.ladder_count == 5);
        CHECK(c.trials == 100);
        CHECK(c.ensemble_mus == std::vector<double>{0.5, 10.0});
        CHECK(c.methods == std::vector<std::string>{"ista_dynamic", "block_dynamic",
                                                    "truncated_sd"});
        CHECK(c.l_values == std::vector<int>{4, 8, 12, 16});
        CHECK(c.base_mu == 0.1);
        CHECK(c.pulse_mu == 1.0);
        CHECK(c.pulse_start == 100);
        CHECK(c.pulse_end == 500);
    }

    SECTION("overrides") {
        const experiment_config c = experiment_config::from_ini(
            parse_ini("[experiment]\n"
                      "out = results\n"
                      "threads = 2\n"
                      "alphas = -50\n"
                      "ladder_top_exp = -4\n"
                      "ladder_count = 3\n"
                      "trials = 10\n"
                      "mus = 0.5\n"
                      "methods = ista_dynamic, truncated_sd\n"
                      "l_values = 6\n"
                      "base_mu = 0.2\n"
                      "pulse_mu = 2.0\n"
                      "pulse_start = 50\n"
                      "pulse_end = 150\n"));
        CHECK(c.out_dir == "results");
        CHECK(c.threads == 2);
        CHECK(c.alphas == std::vector<double>{-50.0});
        CHECK(c.ladder_top_exp == -4);
        CHECK(c.ladder_count == 3);
        CHECK(c.trials == 10);
        CHECK(c.ensemble_mus == std::vector<double>{0.5});
        CHECK(c.methods == std::vector<std::string>{"ista_dynamic", "truncated_sd"});
        CHECK(c.l_values == std::vector<int>{6});
        CHECK(c.base_mu == 0.2);
        CHECK(c.pulse_mu == 2.0);
        CHECK(c.pulse_start == 50);
        CHECK(c.pulse_end == 150);
    }

    SECTION("validation") {
        CHECK_THROWS_AS(experiment_config::from_ini(parse_ini("[experiment]\nthreads = 0\n")),
                        config_error);
        CHECK_THROWS_AS(experiment_config::from_ini(parse_ini("[experiment]\ntrials = 0\n")),
                        config_error);
        CHECK_THROWS_AS(experiment_config::from_ini(parse_ini("[experiment]\nladder_count = 0\n")),
                        config_error);
    }
}
