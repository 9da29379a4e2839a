#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "esnrmt/closedform.hpp"
#include "esnrmt/tasks.hpp"

namespace esnrmt {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  // model
  MatrixSpec matrix;
  std::vector<std::pair<std::string, MatrixSpec>> matrices;  // compare
  enum class InputMode { UnitGaussian, Eigvec };
  InputMode input_mode = InputMode::UnitGaussian;
  int eigvec_index = 0;

  // task and sizes
  TaskSpec task;
  int n = 0, T = 0, That = 0;
  int trials = 1;
  std::uint64_t seed = 0;
  std::vector<double> eta2;  // log-spaced grid or explicit list

  enum class Theory { None, FixedW, Limit, Both };
  Theory theory = Theory::Both;
  bool redraw_w_per_trial = false;
  SolverSettings solver;

  // optional impulsive pollution of the test input
  double impulsive_p = 0.0;
  double impulsive_s2 = 0.0;

  // memory-curve
  int tau_max = 10;
  double eta2_probe = 1e-8;
  int draws = 1;

  // design
  std::vector<double> sigma_candidates;
  double design_gamma = 1e-6;
  int design_k = 20;
  double eta2_check = 1e-3;
};

// Parses the JSON config for one of: sweep, memory-curve, design, compare.
// Throws ConfigError on missing/invalid fields.
ExperimentConfig parse_config(const std::string& json_text, const std::string& command);
ExperimentConfig load_config(const std::string& path, const std::string& command);

std::vector<ResultRow> run_sweep(const ExperimentConfig& cfg, int threads);

struct MemoryCurveRow {
  int tau = 0;
  double mc_mean = 0.0, mc_std = 0.0;
  double mc_limit = 0.0;  // closed form when available, else NaN
  int n = 0, T = 0, draws = 0;
  std::uint64_t seed = 0;
};
std::vector<MemoryCurveRow> run_memory_curve(const ExperimentConfig& cfg, int threads);
void write_memory_curve_csv(const std::string& path, const std::vector<MemoryCurveRow>& rows,
                            bool stamp);

struct DesignRow {
  double sigma = 0.0;
  double score = 0.0;      // b_hat^T D^{-1} b_hat, lower is better
  double test_nmse = 0.0;  // invariant-ensemble test error at eta2_check
  int rank = 0;
};
std::vector<DesignRow> run_design(const ExperimentConfig& cfg);
void write_design_csv(const std::string& path, const std::vector<DesignRow>& rows, bool stamp);

std::vector<std::pair<std::string, std::vector<ResultRow>>> run_compare(
    const ExperimentConfig& cfg, int threads);
// One merged CSV: shared eta2 column, then per-label mc/theory columns.
void write_compare_csv(const std::string& path,
                       const std::vector<std::pair<std::string, std::vector<ResultRow>>>& runs,
                       bool stamp);

int resolve_threads(int cli_threads);  // --threads, else ESN_RMT_THREADS, else 1

}  // namespace esnrmt
