#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "esnrmt/experiment.hpp"

using namespace esnrmt;

namespace {

namespace fs = std::filesystem;

ExperimentConfig parse(const std::string& text, const std::string& cmd = "sweep") {
  return parse_config(text, cmd);
}

const std::string kSweepBase = R"({
  "matrix": {"kind": "haar", "sigma": 0.5},
  "task": {"kind": "delay", "tau": 1},
  "n": 20, "T": 40, "T_hat": 30,
  "trials": 1, "seed": 5,
  "eta2": [0.01, 0.1]
})";

std::string with_field(const std::string& base, const std::string& key,
                       const std::string& json_value) {
  // splice "key": value before the final closing brace
  const auto pos = base.find_last_of('}');
  return base.substr(0, pos) + ", \"" + key + "\": " + json_value + "}";
}

bool rows_equal(const ResultRow& a, const ResultRow& b) {
  auto same = [](double x, double y) {
    return (std::isnan(x) && std::isnan(y)) || x == y;
  };
  return same(a.eta2, b.eta2) && same(a.train_nmse_mc, b.train_nmse_mc) &&
         same(a.train_nmse_mc_std, b.train_nmse_mc_std) &&
         same(a.test_nmse_mc, b.test_nmse_mc) && same(a.test_nmse_mc_std, b.test_nmse_mc_std) &&
         same(a.train_nmse_theory_fixedW, b.train_nmse_theory_fixedW) &&
         same(a.test_nmse_theory_fixedW, b.test_nmse_theory_fixedW) &&
         same(a.train_nmse_theory_limit, b.train_nmse_theory_limit) &&
         same(a.test_nmse_theory_limit, b.test_nmse_theory_limit) && a.n == b.n && a.T == b.T &&
         a.That == b.That && a.trials == b.trials && a.seed == b.seed;
}

struct TempFile {
  fs::path path;
  explicit TempFile(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove(path);
  }
  ~TempFile() { fs::remove(path); }
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  out << text;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ESNRMT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("config parsing: grids, tasks, and defaults") {
  const ExperimentConfig cfg = parse(kSweepBase);
  CHECK(cfg.n == 20);
  CHECK(cfg.T == 40);
  CHECK(cfg.That == 30);
  CHECK(cfg.trials == 1);
  CHECK(cfg.seed == 5);
  CHECK(cfg.theory == ExperimentConfig::Theory::Both);
  REQUIRE(cfg.eta2.size() == 2);
  CHECK(cfg.eta2[0] == 0.01);
  CHECK(cfg.eta2[1] == 0.1);
  CHECK(cfg.matrix.kind == MatrixSpec::Kind::HaarScaled);
  CHECK(cfg.task.kind == TaskSpec::Kind::Delay);

  // log-spaced grid object: exact decade steps
  const ExperimentConfig grid = parse(R"({
    "matrix": {"kind": "haar", "sigma": 0.5},
    "task": {"kind": "delay", "tau": 0},
    "n": 10, "T": 20, "T_hat": 20, "seed": 1,
    "eta2": {"min": 1e-4, "max": 1.0, "points": 5}
  })");
  REQUIRE(grid.eta2.size() == 5);
  for (int i = 0; i < 5; ++i)
    CHECK(grid.eta2[i] == doctest::Approx(std::pow(10.0, -4 + i)).epsilon(1e-14));

  // single-point grid collapses to the minimum
  const ExperimentConfig one = parse(R"({
    "matrix": {"kind": "haar", "sigma": 0.5},
    "task": {"kind": "delay", "tau": 0},
    "n": 10, "T": 20, "T_hat": 20, "seed": 1,
    "eta2": {"min": 0.3, "max": 9.0, "points": 1}
  })");
  REQUIRE(one.eta2.size() == 1);
  CHECK(one.eta2[0] == 0.3);

  // explicit lists are sorted ascending
  const ExperimentConfig lst = parse(R"({
    "matrix": {"kind": "haar", "sigma": 0.5},
    "task": {"kind": "delay", "tau": 0},
    "n": 10, "T": 20, "T_hat": 20, "seed": 1,
    "eta2": [0.5, 0.002], "theory": "fixed_w"
  })");
  REQUIRE(lst.eta2.size() == 2);
  CHECK(lst.eta2[0] == 0.002);
  CHECK(lst.eta2[1] == 0.5);
  CHECK(lst.theory == ExperimentConfig::Theory::FixedW);
}

TEST_CASE("config parsing: rejections") {
  // unknown keys at every level
  CHECK_THROWS_AS(parse(with_field(kSweepBase, "bogus", "1")), ConfigError);
  CHECK_THROWS_AS(parse(R"({
    "matrix": {"kind": "haar", "sigma": 0.5, "rho": 2},
    "task": {"kind": "delay", "tau": 1},
    "n": 10, "T": 20, "T_hat": 20, "seed": 1, "eta2": [0.1]
  })"), ConfigError);
  CHECK_THROWS_AS(parse(R"({
    "matrix": {"kind": "haar", "sigma": 0.5},
    "task": {"kind": "delay", "tau": 1, "lag": 3},
    "n": 10, "T": 20, "T_hat": 20, "seed": 1, "eta2": [0.1]
  })"), ConfigError);
  CHECK_THROWS_AS(parse(with_field(kSweepBase, "solver", R"({"tolerance": 1e-8})")),
                  ConfigError);
  CHECK_THROWS_AS(parse(with_field(kSweepBase, "impulsive", R"({"p": 0.1, "var": 1})")),
                  ConfigError);

  // malformed JSON and wrong root type
  CHECK_THROWS_AS(parse("not json at all"), ConfigError);
  CHECK_THROWS_AS(parse("[1, 2, 3]"), ConfigError);

  // seed must be an explicit unsigned integer
  CHECK_THROWS_AS(parse(R"({
    "matrix": {"kind": "haar", "sigma": 0.5},
    "task": {"kind": "delay", "tau": 1},
    "n": 10, "T": 20, "T_hat": 20, "eta2": [0.1]
  })"), ConfigError);
  CHECK_THROWS_AS(parse(R"({
    "matrix": {"kind": "haar", "sigma": 0.5},
    "task": {"kind": "delay", "tau": 1},
    "n": 10, "T": 20, "T_hat": 20, "seed": -3, "eta2": [0.1]
  })"), ConfigError);

  // the theory excludes the square window n = T
  CHECK_THROWS_AS(parse(R"({
    "matrix": {"kind": "haar", "sigma": 0.5},
    "task": {"kind": "delay", "tau": 1},
    "n": 20, "T": 20, "T_hat": 20, "seed": 1, "eta2": [0.1]
  })"), ConfigError);

  // grid abuse
  CHECK_THROWS_AS(parse(with_field(kSweepBase, "eta2", "[]")), ConfigError);
  CHECK_THROWS_AS(parse(with_field(kSweepBase, "eta2", "[-0.1]")), ConfigError);
  CHECK_THROWS_AS(parse(with_field(kSweepBase, "eta2", R"({"min": 0, "max": 1, "points": 3})")),
                  ConfigError);
  CHECK_THROWS_AS(parse(with_field(kSweepBase, "eta2", R"({"min": 1, "max": 0.1, "points": 3})")),
                  ConfigError);
  CHECK_THROWS_AS(parse(with_field(kSweepBase, "eta2", R"({"min": 0.1, "max": 1, "points": 0})")),
                  ConfigError);

  // matrix and task domain errors surface as config errors
  CHECK_THROWS_AS(parse(R"({
    "matrix": {"kind": "haar", "sigma": 1.2},
    "task": {"kind": "delay", "tau": 1},
    "n": 10, "T": 20, "T_hat": 20, "seed": 1, "eta2": [0.1]
  })"), ConfigError);
  CHECK_THROWS_AS(parse(R"({
    "matrix": {"kind": "left_rotation", "sigma": 0.5},
    "task": {"kind": "delay", "tau": 1},
    "n": 10, "T": 20, "T_hat": 20, "seed": 1, "eta2": [0.1]
  })"), ConfigError);
  CHECK_THROWS_AS(parse(R"({
    "matrix": {"kind": "multi_memory"},
    "task": {"kind": "delay", "tau": 1},
    "n": 10, "T": 20, "T_hat": 20, "seed": 1, "eta2": [0.1]
  })"), ConfigError);
  CHECK_THROWS_AS(parse(R"({
    "matrix": {"kind": "haar", "sigma": 0.5},
    "task": {"kind": "sorting"},
    "n": 10, "T": 20, "T_hat": 20, "seed": 1, "eta2": [0.1]
  })"), ConfigError);
  CHECK_THROWS_AS(parse(R"({
    "matrix": {"kind": "haar", "sigma": 0.5},
    "task": {"kind": "linear_filter"},
    "n": 10, "T": 20, "T_hat": 20, "seed": 1, "eta2": [0.1]
  })"), ConfigError);
  CHECK_THROWS_AS(parse(R"({
    "matrix": {"kind": "haar", "sigma": 0.5},
    "task": {"kind": "ar1_delay", "q": 1.0, "tau": 1},
    "n": 10, "T": 20, "T_hat": 20, "seed": 1, "eta2": [0.1]
  })"), ConfigError);

  // option domains
  CHECK_THROWS_AS(parse(with_field(kSweepBase, "theory", "\"exact\"")), ConfigError);
  CHECK_THROWS_AS(parse(with_field(kSweepBase, "trials", "0")), ConfigError);
  CHECK_THROWS_AS(parse(with_field(kSweepBase, "redraw_w_per_trial", "\"yes\"")), ConfigError);
  CHECK_THROWS_AS(parse(with_field(kSweepBase, "impulsive", R"({"p": 1.5, "s2": 0.1})")),
                  ConfigError);
  CHECK_THROWS_AS(parse(with_field(kSweepBase, "impulsive", R"({"p": 0.5, "s2": -1})")),
                  ConfigError);
  CHECK_THROWS_AS(parse(with_field(kSweepBase, "solver", R"({"damping": 1.0})")), ConfigError);
  CHECK_THROWS_AS(parse(with_field(kSweepBase, "solver", R"({"toeplitz_path": "fft"})")),
                  ConfigError);
  CHECK_THROWS_AS(parse(with_field(kSweepBase, "input", R"({"mode": "laser"})")), ConfigError);

  // per-command requirements
  CHECK_THROWS_AS(parse_config(R"({
    "matrix": {"kind": "haar", "sigma": 0.5},
    "n": 30, "T": 20, "seed": 1
  })", "memory-curve"), ConfigError);  // needs n < T
  CHECK_THROWS_AS(parse_config(R"({
    "matrix": {"kind": "haar", "sigma": 0.5},
    "n": 10, "T": 20, "seed": 1, "tau_max": -1
  })", "memory-curve"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({
    "matrix": {"kind": "haar", "sigma": 0.5},
    "n": 10, "T": 20, "seed": 1, "eta2_probe": 0
  })", "memory-curve"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({
    "task": {"kind": "delay", "tau": 1},
    "n": 10, "T": 20, "T_hat": 20, "seed": 1
  })", "design"), ConfigError);  // sigma_candidates missing
  CHECK_THROWS_AS(parse_config(R"({
    "task": {"kind": "delay", "tau": 1},
    "n": 10, "T": 20, "T_hat": 20, "seed": 1, "sigma_candidates": [1.0]
  })", "design"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({
    "task": {"kind": "delay", "tau": 1},
    "n": 10, "T": 20, "T_hat": 20, "seed": 1,
    "sigma_candidates": [0.5], "design_gamma": 0
  })", "design"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({
    "task": {"kind": "delay", "tau": 1},
    "n": 10, "T": 20, "T_hat": 20, "trials": 1, "seed": 1, "eta2": [0.1]
  })", "compare"), ConfigError);  // matrices missing
  CHECK_THROWS_AS(parse_config(R"({
    "matrices": [{"kind": "haar", "sigma": 0.5, "label": "a"}],
    "task": {"kind": "delay", "tau": 1},
    "n": 10, "T": 20, "T_hat": 20, "seed": 1, "eta2": [0.1]
  })", "compare"), ConfigError);  // needs two entries
  CHECK_THROWS_AS(parse_config(R"({
    "matrices": [{"kind": "haar", "sigma": 0.5}, {"kind": "wigner", "sigma": 0.5}],
    "task": {"kind": "delay", "tau": 1},
    "n": 10, "T": 20, "T_hat": 20, "seed": 1, "eta2": [0.1]
  })", "compare"), ConfigError);  // labels required
}

TEST_CASE("thread resolution: flag, environment override, validation") {
  const char* saved = std::getenv("ESN_RMT_THREADS");
  const std::string saved_copy = saved ? saved : "";
  unsetenv("ESN_RMT_THREADS");

  CHECK(resolve_threads(0) == 1);
  CHECK(resolve_threads(-2) == 1);
  CHECK(resolve_threads(4) == 4);

  setenv("ESN_RMT_THREADS", "8", 1);
  CHECK(resolve_threads(2) == 8);
  setenv("ESN_RMT_THREADS", "abc", 1);
  CHECK_THROWS_AS(resolve_threads(1), ConfigError);
  setenv("ESN_RMT_THREADS", "0", 1);
  CHECK_THROWS_AS(resolve_threads(1), ConfigError);
  setenv("ESN_RMT_THREADS", "3x", 1);
  CHECK_THROWS_AS(resolve_threads(1), ConfigError);

  if (saved)
    setenv("ESN_RMT_THREADS", saved_copy.c_str(), 1);
  else
    unsetenv("ESN_RMT_THREADS");
}

TEST_CASE("sweep: row shape, determinism, theory column policy") {
  const ExperimentConfig cfg = parse(kSweepBase);
  const auto rows = run_sweep(cfg, 1);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].eta2 == 0.01);
  CHECK(rows[1].eta2 == 0.1);
  for (const auto& r : rows) {
    CHECK(r.n == 20);
    CHECK(r.T == 40);
    CHECK(r.That == 30);
    CHECK(r.trials == 1);
    CHECK(r.seed == 5);
    CHECK(r.train_nmse_mc >= 0.0);
    CHECK(std::isfinite(r.train_nmse_mc));
    CHECK(r.test_nmse_mc > 0.0);
    CHECK(std::isfinite(r.test_nmse_mc));
    // single trial: no spread
    CHECK(r.train_nmse_mc_std == 0.0);
    CHECK(r.test_nmse_mc_std == 0.0);
    // theory = both on a Haar ensemble: all four columns populated
    CHECK(std::isfinite(r.train_nmse_theory_fixedW));
    CHECK(std::isfinite(r.test_nmse_theory_fixedW));
    CHECK(std::isfinite(r.train_nmse_theory_limit));
    CHECK(std::isfinite(r.test_nmse_theory_limit));
  }

  // bit-identical rerun
  const auto rows2 = run_sweep(cfg, 1);
  REQUIRE(rows2.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows_equal(rows[i], rows2[i]));

  // trials > 1: noise realizations differ, spread appears
  ExperimentConfig multi = cfg;
  multi.trials = 3;
  const auto rows3 = run_sweep(multi, 1);
  CHECK(rows3[0].test_nmse_mc_std > 0.0);
  CHECK(rows3[0].trials == 3);
  // more workers than trials: same result
  const auto rows3b = run_sweep(multi, 8);
  for (std::size_t i = 0; i < rows3.size(); ++i) CHECK(rows_equal(rows3[i], rows3b[i]));

  // theory = none leaves NaN columns
  ExperimentConfig none = cfg;
  none.theory = ExperimentConfig::Theory::None;
  const auto rows4 = run_sweep(none, 1);
  CHECK(std::isnan(rows4[0].train_nmse_theory_fixedW));
  CHECK(std::isnan(rows4[0].test_nmse_theory_fixedW));
  CHECK(std::isnan(rows4[0].train_nmse_theory_limit));
  CHECK(std::isnan(rows4[0].test_nmse_theory_limit));
  // and the Monte Carlo side is unaffected
  CHECK(rows4[0].test_nmse_mc == rows[0].test_nmse_mc);

  // fixed_w only
  ExperimentConfig fw = cfg;
  fw.theory = ExperimentConfig::Theory::FixedW;
  const auto rows5 = run_sweep(fw, 1);
  CHECK(std::isfinite(rows5[0].train_nmse_theory_fixedW));
  CHECK(std::isnan(rows5[0].train_nmse_theory_limit));

  // limit-only on an ensemble without closed forms is a config error
  ExperimentConfig lim = cfg;
  lim.theory = ExperimentConfig::Theory::Limit;
  lim.matrix = MatrixSpec::wigner(cfg.n, 0.5);
  CHECK_THROWS_AS(run_sweep(lim, 1), ConfigError);

  // a zero target cannot be normalized
  ExperimentConfig zero = cfg;
  Vector zb(2);
  zb << 0.0, 0.0;
  zero.task = TaskSpec::linear_filter(zb);
  CHECK_THROWS_AS(run_sweep(zero, 1), ConfigError);
}

TEST_CASE("sweep: monte carlo tracks both theory paths at moderate size") {
  ExperimentConfig cfg = parse(R"({
    "matrix": {"kind": "haar", "sigma": 0.7},
    "task": {"kind": "delay", "tau": 1},
    "n": 100, "T": 200, "T_hat": 200,
    "trials": 6, "seed": 11,
    "eta2": [0.1]
  })");
  const auto rows = run_sweep(cfg, 1);
  REQUIRE(rows.size() == 1);
  const ResultRow& r = rows[0];
  CHECK(std::abs(r.test_nmse_mc - r.test_nmse_theory_fixedW) < 0.3 * r.test_nmse_theory_fixedW);
  CHECK(std::abs(r.test_nmse_mc - r.test_nmse_theory_limit) < 0.4 * r.test_nmse_theory_limit);
  CHECK(std::abs(r.train_nmse_mc - r.train_nmse_theory_fixedW) <
        0.3 * r.train_nmse_theory_fixedW);
}

TEST_CASE("sweep: impulsive pollution hits only the test window") {
  const ExperimentConfig clean = parse(kSweepBase);
  ExperimentConfig dirty = clean;
  dirty.impulsive_p = 1.0;
  dirty.impulsive_s2 = 1.0;
  const auto a = run_sweep(clean, 1);
  const auto b = run_sweep(dirty, 1);
  for (std::size_t i = 0; i < a.size(); ++i) {
    // training inputs untouched: identical trajectories and readouts
    CHECK(a[i].train_nmse_mc == b[i].train_nmse_mc);
    // heavy pollution must degrade the test error
    CHECK(b[i].test_nmse_mc > a[i].test_nmse_mc);
  }
}

TEST_CASE("memory curve: closed form tracks the generic solver") {
  ExperimentConfig cfg = parse_config(R"({
    "matrix": {"kind": "haar", "sigma": 0.9},
    "n": 200, "T": 400, "seed": 3,
    "tau_max": 3, "draws": 3
  })", "memory-curve");
  const auto rows = run_memory_curve(cfg, 1);
  REQUIRE(rows.size() == 4);
  for (int tau = 0; tau <= 3; ++tau) {
    CHECK(rows[tau].tau == tau);
    CHECK(rows[tau].draws == 3);
    CHECK(rows[tau].mc_std >= 0.0);
    CHECK(std::isfinite(rows[tau].mc_limit));
    CHECK(std::abs(rows[tau].mc_mean - rows[tau].mc_limit) < 0.05 * rows[tau].mc_limit);
  }
  // successive decay by roughly sigma^2
  CHECK(rows[1].mc_mean < rows[0].mc_mean);
  CHECK(rows[2].mc_mean < rows[1].mc_mean);

  // tau_max = 0: single row
  ExperimentConfig single = cfg;
  single.tau_max = 0;
  CHECK(run_memory_curve(single, 1).size() == 1);
}

TEST_CASE("memory curve: symmetric reservoirs forget faster than i.i.d. ones") {
  const std::string base = R"({
    "matrix": {"kind": "KIND", "sigma": 0.5},
    "n": 100, "T": 200, "seed": 4,
    "tau_max": 3, "draws": 1
  })";
  std::string iid_text = base;
  iid_text.replace(iid_text.find("KIND"), 4, "gaussian_iid");
  std::string wig_text = base;
  wig_text.replace(wig_text.find("KIND"), 4, "wigner");
  const auto iid = run_memory_curve(parse_config(iid_text, "memory-curve"), 1);
  const auto wig = run_memory_curve(parse_config(wig_text, "memory-curve"), 1);
  REQUIRE(iid.size() == 4);
  REQUIRE(wig.size() == 4);
  // no closed-form column for either ensemble
  CHECK(std::isnan(iid[0].mc_limit));
  CHECK(std::isnan(wig[0].mc_limit));
  for (int tau = 1; tau <= 3; ++tau) CHECK(wig[tau].mc_mean < iid[tau].mc_mean);
}

TEST_CASE("design: geometric filter picks sigma^2 = |alpha|") {
  ExperimentConfig cfg = parse_config(R"({
    "task": {"kind": "linear_filter", "b": [1.0, -0.25, 0.0625, -0.015625, 0.00390625, -0.0009765625]},
    "n": 200, "T": 400, "T_hat": 400, "seed": 2,
    "sigma_candidates": [0.3, 0.5, 0.7],
    "eta2_check": 1e-3
  })", "design");
  const auto rows = run_design(cfg);
  REQUIRE(rows.size() == 3);
  // ranks are a permutation of 1..3 consistent with the scores
  int best = -1;
  for (int i = 0; i < 3; ++i)
    if (rows[i].rank == 1) best = i;
  REQUIRE(best >= 0);
  CHECK(rows[best].sigma == 0.5);
  for (int i = 0; i < 3; ++i)
    if (i != best) CHECK(rows[best].score < rows[i].score);
  // the invariant test error at eta2_check preserves the ranking
  for (int i = 0; i < 3; ++i)
    if (i != best) CHECK(rows[best].test_nmse < rows[i].test_nmse);

  // an identity task (delay 0) concentrates the profile at lag zero: the
  // shortest memory wins
  ExperimentConfig id = cfg;
  id.task = TaskSpec::delay(0);
  const auto rows2 = run_design(id);
  for (int i = 0; i < 3; ++i)
    if (rows2[i].rank == 1) CHECK(rows2[i].sigma == 0.3);

  // single candidate: returned unconditionally
  ExperimentConfig solo = cfg;
  solo.sigma_candidates = {0.6};
  const auto rows3 = run_design(solo);
  REQUIRE(rows3.size() == 1);
  CHECK(rows3[0].rank == 1);
  CHECK(rows3[0].sigma == 0.6);

  // a numerically zero target has no usable delay profile
  ExperimentConfig degenerate = cfg;
  Vector tiny(1);
  tiny << 1e-30;
  degenerate.task = TaskSpec::linear_filter(tiny);
  CHECK_THROWS_AS(run_design(degenerate), NumericError);
}

TEST_CASE("compare: aligned labeled sweeps") {
  const std::string text = R"({
    "matrices": [
      {"kind": "haar", "sigma": 0.5, "label": "orth"},
      {"kind": "haar", "sigma": 0.5, "label": "same"},
      {"kind": "wigner", "sigma": 0.5, "label": "sym"}
    ],
    "task": {"kind": "delay", "tau": 1},
    "n": 20, "T": 40, "T_hat": 30,
    "trials": 1, "seed": 5, "eta2": [0.01, 0.1],
    "theory": "limit"
  })";
  const ExperimentConfig cfg = parse_config(text, "compare");
  REQUIRE(cfg.matrices.size() == 3);
  const auto runs = run_compare(cfg, 1);
  REQUIRE(runs.size() == 3);
  CHECK(runs[0].first == "orth");
  CHECK(runs[2].first == "sym");
  for (const auto& [label, rows] : runs) {
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].eta2 == 0.01);
    CHECK(rows[1].eta2 == 0.1);
  }
  // identical specs under different labels give identical columns
  for (std::size_t i = 0; i < 2; ++i) CHECK(rows_equal(runs[0].second[i], runs[1].second[i]));
  // the unsupported ensemble was downgraded to the fixed-W theory
  CHECK(std::isfinite(runs[0].second[0].test_nmse_theory_limit));
  CHECK(std::isnan(runs[2].second[0].test_nmse_theory_limit));
  CHECK(std::isfinite(runs[2].second[0].test_nmse_theory_fixedW));
}

TEST_CASE("result writers: memory-curve, design, and compare schemas") {
  TempFile f("esnrmt_writer_check.csv");

  MemoryCurveRow m;
  m.tau = 2;
  m.mc_mean = 1.0 / 3.0;
  m.mc_std = 0.0;
  m.mc_limit = std::nan("");
  m.n = 10;
  m.T = 20;
  m.draws = 1;
  m.seed = 9;
  write_memory_curve_csv(f.path.string(), {m}, false);
  std::ifstream in(f.path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "tau,mc_mean,mc_std,mc_limit,n,T,draws,seed");
  REQUIRE(std::getline(in, line));
  std::stringstream row(line);
  std::string cell;
  std::getline(row, cell, ',');
  CHECK(cell == "2");
  std::getline(row, cell, ',');
  CHECK(std::stod(cell) == m.mc_mean);
  std::getline(row, cell, ',');
  std::getline(row, cell, ',');
  CHECK(std::isnan(std::stod(cell)));
  in.close();

  DesignRow d;
  d.sigma = 0.5;
  d.score = 2.25;
  d.test_nmse = 0.125;
  d.rank = 1;
  write_design_csv(f.path.string(), {d}, false);
  std::ifstream in2(f.path);
  REQUIRE(std::getline(in2, line));
  CHECK(line == "sigma,score,test_nmse,rank");
  REQUIRE(std::getline(in2, line));
  CHECK(line == "0.5,2.25,0.125,1");
  in2.close();

  ResultRow r;
  r.eta2 = 0.25;
  std::vector<std::pair<std::string, std::vector<ResultRow>>> runs = {{"a", {r}}, {"b", {r}}};
  write_compare_csv(f.path.string(), runs, false);
  std::ifstream in3(f.path);
  REQUIRE(std::getline(in3, line));
  CHECK(line ==
        "eta2,train_nmse_mc_a,test_nmse_mc_a,train_nmse_theory_fixedW_a,"
        "test_nmse_theory_fixedW_a,train_nmse_theory_limit_a,test_nmse_theory_limit_a,"
        "train_nmse_mc_b,test_nmse_mc_b,train_nmse_theory_fixedW_b,"
        "test_nmse_theory_fixedW_b,train_nmse_theory_limit_b,test_nmse_theory_limit_b");
  in3.close();

  // compare writer rejects ragged grids
  std::vector<std::pair<std::string, std::vector<ResultRow>>> ragged = {{"a", {r, r}},
                                                                        {"b", {r}}};
  CHECK_THROWS_AS(write_compare_csv(f.path.string(), ragged, false), std::invalid_argument);
  CHECK_THROWS_AS(write_compare_csv(f.path.string(), {}, false), std::invalid_argument);
}

TEST_CASE("cli: exit codes and reproducible artifacts") {
  TempFile cfg_file("esnrmt_cli_cfg.json");
  TempFile out_file("esnrmt_cli_out.csv");
  const std::string cfg_arg = " --config " + cfg_file.path.string();
  const std::string out_arg = " --out " + out_file.path.string();

  write_text(cfg_file.path, kSweepBase);
  CHECK(run_cli("sweep" + cfg_arg + out_arg + " --no-timestamp") == 0);
  const std::string first = read_text(out_file.path);
  CHECK(first.rfind("eta2,", 0) == 0);

  // byte-identical rerun without the timestamp line
  CHECK(run_cli("sweep" + cfg_arg + out_arg + " --no-timestamp") == 0);
  CHECK(read_text(out_file.path) == first);

  // with the stamp the payload is unchanged after the comment line
  CHECK(run_cli("sweep" + cfg_arg + out_arg) == 0);
  const std::string stamped = read_text(out_file.path);
  CHECK(stamped.rfind("# generated ", 0) == 0);
  CHECK(stamped.substr(stamped.find('\n') + 1) == first);

  // config rejection -> exit 2
  write_text(cfg_file.path, with_field(kSweepBase, "bogus", "1"));
  CHECK(run_cli("sweep" + cfg_arg + out_arg) == 2);
  CHECK(run_cli("sweep --config /nonexistent.json" + out_arg) == 2);

  // CLI misuse -> exit 2; help -> exit 0
  CHECK(run_cli("sweep" + out_arg) == 2);
  CHECK(run_cli("transmogrify" + cfg_arg + out_arg) == 2);
  CHECK(run_cli("--help") == 0);

  // invalid thread override -> exit 2
  write_text(cfg_file.path, kSweepBase);
  {
    const std::string cmd = std::string("ESN_RMT_THREADS=abc ") + ESNRMT_CLI_PATH + " sweep" +
                            cfg_arg + out_arg + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(rc) == 2);
  }

  // numeric failure -> exit 3: the low-noise probe cannot resolve deep delays
  write_text(cfg_file.path, R"({
    "matrix": {"kind": "haar", "sigma": 0.9},
    "n": 100, "T": 200, "seed": 3,
    "tau_max": 80, "draws": 1
  })");
  CHECK(run_cli("memory-curve" + cfg_arg + out_arg) == 3);

  // memory-curve and design artifacts via the CLI
  write_text(cfg_file.path, R"({
    "matrix": {"kind": "haar", "sigma": 0.9},
    "n": 50, "T": 100, "seed": 3,
    "tau_max": 2, "draws": 1
  })");
  CHECK(run_cli("memory-curve" + cfg_arg + out_arg + " --no-timestamp") == 0);
  CHECK(read_text(out_file.path).rfind("tau,", 0) == 0);

  write_text(cfg_file.path, R"({
    "task": {"kind": "linear_filter", "b": [1.0, -0.25, 0.0625]},
    "n": 30, "T": 120, "T_hat": 60, "seed": 2,
    "sigma_candidates": [0.3, 0.5, 0.7]
  })");
  CHECK(run_cli("design" + cfg_arg + out_arg + " --no-timestamp") == 0);
  CHECK(read_text(out_file.path).rfind("sigma,", 0) == 0);

  write_text(cfg_file.path, R"({
    "matrices": [
      {"kind": "haar", "sigma": 0.5, "label": "orth"},
      {"kind": "wigner", "sigma": 0.5, "label": "sym"}
    ],
    "task": {"kind": "delay", "tau": 1},
    "n": 20, "T": 40, "T_hat": 30,
    "trials": 1, "seed": 5, "eta2": [0.1], "theory": "fixed_w"
  })");
  CHECK(run_cli("compare" + cfg_arg + out_arg + " --no-timestamp") == 0);
  CHECK(read_text(out_file.path).rfind("eta2,train_nmse_mc_orth", 0) == 0);
}
