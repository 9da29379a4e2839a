#include "esnrmt/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace esnrmt {

namespace {

Vector standardized(Vector v) {
  v.array() -= v.mean();
  const double sd = std::sqrt(v.squaredNorm() / v.size());
  if (!(sd > 0.0)) throw std::runtime_error("constant series cannot be standardized");
  return v / sd;
}

// full holds samples for times -H .. full.size()-H-1; target(t) is the
// desired output at window time t in [0, T + T_hat).
Episode from_full_series(const Vector& full, int H, int T, int T_hat,
                         const std::function<double(int)>& target) {
  Episode ep;
  ep.u.data = full.head(H + T);
  ep.u.history = H;
  ep.u_hat.data = full.head(H + T + T_hat);
  ep.u_hat.history = H + T;
  ep.r.resize(T);
  for (int t = 0; t < T; ++t) ep.r[t] = target(t);
  ep.r_hat.resize(T_hat);
  for (int t = 0; t < T_hat; ++t) ep.r_hat[t] = target(T + t);
  return ep;
}

Vector iid_gaussian(int length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector v(length);
  for (int i = 0; i < length; ++i) v[i] = gauss(rng);
  return v;
}

}  // namespace

Vector mackey_glass(int length, std::uint64_t seed, const MackeyGlassParams& p) {
  if (length <= 0) throw std::invalid_argument("mackey_glass: length must be positive");
  if (p.dt <= 0.0 || p.tau <= 0.0 || p.stride <= 0 || p.transient < 0 || p.beta <= 0.0 ||
      p.gamma <= 0.0)
    throw std::invalid_argument("mackey_glass: invalid parameters");
  const int delay_steps = std::max(1, static_cast<int>(std::lround(p.tau / p.dt)));
  const long total = static_cast<long>(p.transient) + static_cast<long>(length) * p.stride;
  std::vector<double> traj(static_cast<std::size_t>(total) + delay_steps + 1);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i <= delay_steps; ++i) traj[i] = 1.2 + 0.01 * gauss(rng);
  for (long s = 0; s < total; ++s) {
    const long i = delay_steps + s;
    const double xd = traj[i - delay_steps];
    const double a = p.beta * xd / (1.0 + std::pow(xd, 10.0));
    auto f = [&](double v) { return a - p.gamma * v; };
    const double x0 = traj[i];
    const double k1 = f(x0);
    const double k2 = f(x0 + 0.5 * p.dt * k1);
    const double k3 = f(x0 + 0.5 * p.dt * k2);
    const double k4 = f(x0 + p.dt * k3);
    traj[i + 1] = x0 + p.dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
  }
  Vector out(length);
  for (int j = 0; j < length; ++j)
    out[j] = traj[delay_steps + p.transient + static_cast<long>(j) * p.stride];
  return standardized(std::move(out));
}

TaskSpec TaskSpec::mackey_glass_ahead(int steps) {
  TaskSpec s;
  s.kind = Kind::MackeyGlassAhead;
  s.steps = steps;
  return s;
}

TaskSpec TaskSpec::delay(int tau) {
  TaskSpec s;
  s.kind = Kind::Delay;
  s.tau = tau;
  return s;
}

TaskSpec TaskSpec::linear_filter(Vector b) {
  TaskSpec s;
  s.kind = Kind::LinearFilter;
  s.b = std::move(b);
  return s;
}

TaskSpec TaskSpec::impulse(int tau) {
  TaskSpec s;
  s.kind = Kind::Impulse;
  s.tau = tau;
  return s;
}

TaskSpec TaskSpec::ar1_delay(double q, int tau) {
  TaskSpec s;
  s.kind = Kind::Ar1Delay;
  s.q = q;
  s.tau = tau;
  return s;
}

TaskSpec TaskSpec::csv_series(std::string path, int shift) {
  TaskSpec s;
  s.kind = Kind::CsvSeries;
  s.path = std::move(path);
  s.steps = shift;
  return s;
}

Episode build_task(const TaskSpec& spec, int T, int T_hat, std::uint64_t seed) {
  if (T <= 0 || T_hat <= 0)
    throw std::invalid_argument("build_task: window lengths must be positive");
  switch (spec.kind) {
    case TaskSpec::Kind::MackeyGlassAhead: {
      if (spec.steps <= 0) throw std::invalid_argument("build_task: steps must be positive");
      const int H = T - 1;
      Vector full = mackey_glass(H + T + T_hat + spec.steps, seed);
      return from_full_series(full, H, T, T_hat,
                              [&](int t) { return full[H + t + spec.steps]; });
    }
    case TaskSpec::Kind::Delay: {
      if (spec.tau < 0) throw std::invalid_argument("build_task: tau must be nonnegative");
      const int H = std::max(T - 1, spec.tau);
      Vector full = iid_gaussian(H + T + T_hat, seed);
      return from_full_series(full, H, T, T_hat, [&](int t) { return full[H + t - spec.tau]; });
    }
    case TaskSpec::Kind::LinearFilter: {
      if (spec.b.size() == 0) throw std::invalid_argument("build_task: empty filter");
      const int H = std::max<int>(T - 1, static_cast<int>(spec.b.size()) - 1);
      Vector full = iid_gaussian(H + T + T_hat, seed);
      return from_full_series(full, H, T, T_hat, [&](int t) {
        double acc = 0.0;
        for (int k = 0; k < spec.b.size(); ++k) acc += spec.b[k] * full[H + t - k];
        return acc;
      });
    }
    case TaskSpec::Kind::Impulse: {
      if (spec.tau < 0 || spec.tau >= T || spec.tau >= T_hat)
        throw std::invalid_argument("build_task: impulse delay must fit in both windows");
      Episode ep;
      ep.u.data = Vector::Zero(T);
      ep.u.history = 0;
      ep.u.data[0] = std::sqrt(static_cast<double>(T));
      ep.r = Vector::Zero(T);
      ep.r[spec.tau] = std::sqrt(static_cast<double>(T));
      ep.u_hat.data = Vector::Zero(T_hat);
      ep.u_hat.history = 0;
      ep.u_hat.data[0] = std::sqrt(static_cast<double>(T_hat));
      ep.r_hat = Vector::Zero(T_hat);
      ep.r_hat[spec.tau] = std::sqrt(static_cast<double>(T_hat));
      return ep;
    }
    case TaskSpec::Kind::Ar1Delay: {
      if (!(std::abs(spec.q) < 1.0))
        throw std::invalid_argument("build_task: AR(1) correlation must satisfy |q| < 1");
      if (spec.tau < 0) throw std::invalid_argument("build_task: tau must be nonnegative");
      const int H = std::max(T - 1, spec.tau);
      Vector full(H + T + T_hat);
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> gauss(0.0, 1.0);
      full[0] = gauss(rng);
      const double w = std::sqrt(1.0 - spec.q * spec.q);
      for (int i = 1; i < full.size(); ++i) full[i] = spec.q * full[i - 1] + w * gauss(rng);
      return from_full_series(full, H, T, T_hat, [&](int t) { return full[H + t - spec.tau]; });
    }
    case TaskSpec::Kind::CsvSeries: {
      if (spec.steps <= 0) throw std::invalid_argument("build_task: shift must be positive");
      Vector raw = load_series_csv(spec.path);
      const long need = static_cast<long>(T) + T_hat + spec.steps;
      if (raw.size() < need)
        throw std::invalid_argument("build_task: series file too short for the requested windows");
      const int H = static_cast<int>(std::min<long>(T - 1, raw.size() - need));
      Vector full = standardized(raw.head(H + need));
      return from_full_series(full, H, T, T_hat,
                              [&](int t) { return full[H + t + spec.steps]; });
    }
  }
  throw std::logic_error("build_task: unknown task kind");
}

std::vector<std::uint8_t> inject_impulsive_noise(Series& u, double p, double s2,
                                                 std::uint64_t seed) {
  if (p < 0.0 || p > 1.0)
    throw std::invalid_argument("inject_impulsive_noise: probability must lie in [0, 1]");
  if (s2 < 0.0) throw std::invalid_argument("inject_impulsive_noise: variance must be nonnegative");
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(u.data.size()), 0);
  if (p == 0.0 || s2 == 0.0) return mask;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution hit(p);
  std::normal_distribution<double> gauss(0.0, std::sqrt(s2));
  for (int i = 0; i < u.data.size(); ++i) {
    if (hit(rng)) {
      u.data[i] += gauss(rng);
      mask[static_cast<std::size_t>(i)] = 1;
    }
  }
  return mask;
}

Vector load_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open series file: " + path);
  std::vector<double> vals;
  std::string line;
  int lineno = 0;
  bool header_allowed = true;
  while (std::getline(in, line)) {
    ++lineno;
    while (!line.empty() &&
           (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
      line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::string field = line;
    const auto comma = line.find_last_of(',');
    if (comma != std::string::npos) field = line.substr(comma + 1);
    std::size_t used = 0;
    double v = 0.0;
    bool ok = true;
    try {
      v = std::stod(field, &used);
    } catch (const std::exception&) {
      ok = false;
    }
    while (ok && used < field.size() && std::isspace(static_cast<unsigned char>(field[used])))
      ++used;
    if (ok && used == field.size()) {
      if (!std::isfinite(v))
        throw std::runtime_error("non-finite value in " + path + " line " +
                                 std::to_string(lineno));
      vals.push_back(v);
      header_allowed = false;
    } else if (header_allowed) {
      header_allowed = false;  // one leading header line is tolerated
    } else {
      throw std::runtime_error("non-numeric value in " + path + " line " +
                               std::to_string(lineno));
    }
  }
  if (vals.empty()) throw std::runtime_error("empty series file: " + path);
  return Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows, bool stamp) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    if (stamp) {
      const std::time_t now = std::time(nullptr);
      char buf[64];
      std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
      out << "# generated " << buf << "\n";
    }
    out << "eta2,train_nmse_mc,train_nmse_mc_std,test_nmse_mc,test_nmse_mc_std,"
           "train_nmse_theory_fixedW,test_nmse_theory_fixedW,"
           "train_nmse_theory_limit,test_nmse_theory_limit,n,T,That,trials,seed\n";
    out << std::setprecision(17);
    for (const auto& r : rows) {
      out << r.eta2 << ',' << r.train_nmse_mc << ',' << r.train_nmse_mc_std << ','
          << r.test_nmse_mc << ',' << r.test_nmse_mc_std << ',' << r.train_nmse_theory_fixedW
          << ',' << r.test_nmse_theory_fixedW << ',' << r.train_nmse_theory_limit << ','
          << r.test_nmse_theory_limit << ',' << r.n << ',' << r.T << ',' << r.That << ','
          << r.trials << ',' << r.seed << '\n';
    }
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw std::runtime_error("cannot replace " + target.string() + ": " + ec.message());
}

}  // namespace esnrmt
