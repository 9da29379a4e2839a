#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "esnrmt/esn.hpp"

namespace esnrmt {

struct MackeyGlassParams {
  double beta = 0.2;
  double gamma = 0.1;
  double tau = 17.0;
  double dt = 0.1;
  int transient = 1000;  // integrator steps discarded
  int stride = 10;       // integrator steps per output sample
};

// Standardized (mean 0, variance 1) Mackey-Glass series, RK4 with the delayed
// value held constant within a step.
Vector mackey_glass(int length, std::uint64_t seed, const MackeyGlassParams& params = {});

struct TaskSpec {
  enum class Kind {
    MackeyGlassAhead,  // predict u_{t+steps} from Mackey-Glass input
    Delay,             // reproduce u_{t-tau}, iid N(0,1) input
    LinearFilter,      // r_t = sum_k b_k u_{t-k}, iid N(0,1) input
    Impulse,           // u = sqrt(T) delta_0, r = sqrt(T) delta_tau
    Ar1Delay,          // reproduce u_{t-tau}, stationary AR(1) input
    CsvSeries,         // predict column shifted by `shift` from a CSV series
  };

  Kind kind = Kind::MackeyGlassAhead;
  int steps = 1;       // MackeyGlassAhead, CsvSeries shift
  int tau = 0;         // Delay, Impulse, Ar1Delay
  Vector b;            // LinearFilter
  double q = 0.5;      // Ar1Delay correlation
  std::string path;    // CsvSeries

  static TaskSpec mackey_glass_ahead(int steps = 1);
  static TaskSpec delay(int tau);
  static TaskSpec linear_filter(Vector b);
  static TaskSpec impulse(int tau);
  static TaskSpec ar1_delay(double q, int tau);
  static TaskSpec csv_series(std::string path, int shift = 1);
};

// Train window [0,T) and test window [T, T+T_hat) cut from one generated
// series; each window carries the true preceding samples as history.
Episode build_task(const TaskSpec& spec, int T, int T_hat, std::uint64_t seed);

// Adds N(0, s2) impulses to each stored sample independently with
// probability p. Returns the hit mask (1 where a sample was perturbed).
std::vector<std::uint8_t> inject_impulsive_noise(Series& u, double p, double s2,
                                                 std::uint64_t seed);

// Single numeric column, or "t,value" pairs; optional header line. Throws on
// non-numeric payload.
Vector load_series_csv(const std::string& path);

struct ResultRow {
  double eta2 = 0.0;
  double train_nmse_mc = 0.0, train_nmse_mc_std = 0.0;
  double test_nmse_mc = 0.0, test_nmse_mc_std = 0.0;
  double train_nmse_theory_fixedW = 0.0, test_nmse_theory_fixedW = 0.0;
  double train_nmse_theory_limit = 0.0, test_nmse_theory_limit = 0.0;
  int n = 0, T = 0, That = 0, trials = 0;
  std::uint64_t seed = 0;
};

// Fixed column schema, 17 significant digits, atomic replace of the target.
// If stamp is true the first line is a "# generated ..." comment.
void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows, bool stamp);

}  // namespace esnrmt
