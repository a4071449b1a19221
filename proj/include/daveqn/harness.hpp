#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "daveqn/objective.hpp"
#include "daveqn/oracle.hpp"
#include "daveqn/runtime.hpp"

namespace daveqn {

/// Flat key = value experiment configuration. '#' starts a comment.
struct ExperimentConfig {
  std::string problem;  // synthetic-logistic | synthetic-quadratic | libsvm
  std::string libsvm_path;
  double lambda = 0.1;
  int n = 2;
  int p = 4;
  int m_per = 20;
  double condition_target = 10.0;
  std::uint64_t seed = 1;
  std::string delay_model = "round-robin";  // round-robin | uniform:<d> | heavytail:<cap>
  std::string init = "scaled:auto";         // scaled:auto | scaled:<c> | exact-hessian
  std::int64_t max_updates = 2000;
  std::optional<double> target_subopt;
  int repetitions = 1;
  std::string output_dir = "out";
};

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }

  ExperimentConfig c;
  auto take = [&kv](const char* key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto num = [](const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config field '" + key + "': bad number '" + v + "'");
    }
  };
  if (auto v = take("problem")) c.problem = *v;
  if (auto v = take("libsvm_path")) c.libsvm_path = *v;
  if (auto v = take("lambda")) c.lambda = num("lambda", *v);
  if (auto v = take("n")) c.n = static_cast<int>(num("n", *v));
  if (auto v = take("p")) c.p = static_cast<int>(num("p", *v));
  if (auto v = take("m_per")) c.m_per = static_cast<int>(num("m_per", *v));
  if (auto v = take("condition_target")) c.condition_target = num("condition_target", *v);
  if (auto v = take("seed")) c.seed = static_cast<std::uint64_t>(num("seed", *v));
  if (auto v = take("delay_model")) c.delay_model = *v;
  if (auto v = take("init")) c.init = *v;
  if (auto v = take("max_updates")) c.max_updates = static_cast<std::int64_t>(num("max_updates", *v));
  if (auto v = take("target_subopt")) c.target_subopt = num("target_subopt", *v);
  if (auto v = take("repetitions")) c.repetitions = static_cast<int>(num("repetitions", *v));
  if (auto v = take("output_dir")) c.output_dir = *v;
  if (!kv.empty()) throw ConfigError("config: unknown field '" + kv.begin()->first + "'");

  if (const char* env = std::getenv("DAVEQN_OUT")) c.output_dir = env;

  if (c.problem != "synthetic-logistic" && c.problem != "synthetic-quadratic" &&
      c.problem != "libsvm")
    throw ConfigError("config field 'problem': expected synthetic-logistic, "
                      "synthetic-quadratic or libsvm");
  if (c.problem == "libsvm" && c.libsvm_path.empty())
    throw ConfigError("config field 'libsvm_path': required for problem = libsvm");
  if (c.n < 1) throw ConfigError("config field 'n': must be >= 1");
  if (c.lambda < 0) throw ConfigError("config field 'lambda': must be >= 0");
  if (c.repetitions < 1) throw ConfigError("config field 'repetitions': must be >= 1");
  return c;
}

inline DelayModel parse_delay_model(const std::string& s) {
  if (s == "round-robin") return FixedRoundRobin{};
  auto colon = s.find(':');
  std::string head = s.substr(0, colon);
  double arg = colon == std::string::npos ? -1.0 : std::atof(s.c_str() + colon + 1);
  if (head == "uniform" && arg >= 0.0) return UniformBounded{arg};
  if (head == "heavytail" && arg > 0.0) return HeavyTailBoundedMean{arg};
  throw ConfigError("config field 'delay_model': bad value '" + s + "'");
}

inline std::pair<InitMode, std::optional<double>> parse_init(const std::string& s) {
  if (s == "exact-hessian") return {InitMode::ExactLocalHessian, std::nullopt};
  if (s == "scaled:auto") return {InitMode::ScaledIdentity, std::nullopt};
  if (s.rfind("scaled:", 0) == 0) {
    double c = std::atof(s.c_str() + 7);
    if (c > 0.0) return {InitMode::ScaledIdentity, c};
  }
  throw ConfigError("config field 'init': bad value '" + s + "'");
}

inline SynthProblem build_problem(const ExperimentConfig& c) {
  if (c.problem == "synthetic-logistic")
    return synth_problem(c.seed, c.n, c.p, c.m_per, c.condition_target, c.lambda);
  if (c.problem == "synthetic-quadratic")
    return synth_quadratic(c.seed, c.n, c.p, c.condition_target);
  Shard full = load_libsvm(c.libsvm_path);
  SynthProblem prob;
  prob.spec.kind = ObjectiveKind::Logistic;
  prob.spec.lambda = c.lambda;
  prob.shards = partition(full, c.n, c.seed);
  return prob;
}

/// Damped Newton on the pooled objective, to gradient norm <= tol.
inline Reference reference_optimum(const ObjectiveSpec& spec, const std::vector<Shard>& shards,
                                   double tol = 1e-12, int max_iters = 200) {
  int p = shards.front().dim;
  Vector x(p, 0.0);
  for (int it = 0; it < max_iters; ++it) {
    Vector g = pooled_grad(spec, shards, x);
    if (norm2(g) <= tol) {
      Reference ref;
      ref.x_star = x;
      ref.f_star = pooled_value(spec, shards, x);
      return ref;
    }
    SymMatrix H = pooled_hessian(spec, shards, x);
    Vector step = spd_factor_solve(H, g);
    // Terminal regime: the objective decrease is below rounding noise, so a
    // line search can stall on steps too small to move x. Full Newton steps
    // are safe and quadratically convergent here.
    if (norm2(step) <= 1e-6 * (1.0 + norm2(x))) {
      x = x - step;
      continue;
    }
    double fx = pooled_value(spec, shards, x);
    double slope = dot(g, step);
    double eta = 1.0;
    Vector cand = x - step;
    while (eta > 1e-12 && pooled_value(spec, shards, cand) > fx - 1e-4 * eta * slope) {
      eta *= 0.5;
      cand = x - eta * step;
    }
    // Near the optimum the Armijo test drowns in rounding noise; the full
    // Newton step is reliable there, so fall back to it.
    x = (eta > 1e-12) ? cand : x - step;
  }
  throw ConfigError("reference_optimum: no convergence within iteration cap");
}

struct EpochStats {
  int m;
  std::int64_t T_m;
  double max_residual;
  double rho;  // NaN for the first epoch
};

struct TraceAnalysis {
  std::vector<EpochStats> epochs;  // completed epochs only
  bool last_ratios_decreasing = false;
  double linear_rate_fit = 0.0;  // slope of log max-residual per epoch, early epochs
};

struct ParsedTraceRow {
  std::int64_t t;
  double wall_s;
  int worker;
  std::int64_t d;
  std::int64_t D;
  int epoch;
  double subopt;
  double residual;
};

inline std::vector<ParsedTraceRow> parse_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("trace: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != trace_csv_header())
    throw ConfigError("trace: bad header in " + path);
  std::vector<ParsedTraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ParsedTraceRow r;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    if (!(ls >> r.t >> r.wall_s >> r.worker >> r.d >> r.D >> r.epoch >> r.subopt >> r.residual))
      throw ConfigError("trace: malformed row in " + path);
    rows.push_back(r);
  }
  return rows;
}

/// Per-epoch max residuals and the successive-epoch ratios rho_m. The last
/// (incomplete) epoch is dropped. Requires >= 3 completed epochs.
inline TraceAnalysis analyze_trace(const std::vector<ParsedTraceRow>& rows, int last_k = 3) {
  std::map<int, EpochStats> by_epoch;
  for (const auto& r : rows) {
    auto [it, fresh] = by_epoch.try_emplace(
        r.epoch, EpochStats{r.epoch, r.t, r.residual, std::numeric_limits<double>::quiet_NaN()});
    if (!fresh) it->second.max_residual = std::max(it->second.max_residual, r.residual);
  }
  if (by_epoch.size() < 4)  // need >= 3 completed epochs plus the open one
    throw ConfigError("analyze: fewer than 3 completed epochs");
  TraceAnalysis out;
  for (auto& [m, st] : by_epoch) out.epochs.push_back(st);
  out.epochs.pop_back();  // last epoch is still open
  out.epochs.front().T_m = 0;
  for (std::size_t i = 1; i < out.epochs.size(); ++i)
    out.epochs[i].rho = out.epochs[i].max_residual / out.epochs[i - 1].max_residual;

  int k = std::min<int>(last_k, static_cast<int>(out.epochs.size()) - 1);
  out.last_ratios_decreasing = k >= 2;
  for (std::size_t i = out.epochs.size() - k + 1; i < out.epochs.size(); ++i)
    if (!(out.epochs[i].rho < out.epochs[i - 1].rho)) out.last_ratios_decreasing = false;

  // Least-squares slope of log10(max residual) over the first half of epochs.
  std::size_t half = std::max<std::size_t>(2, out.epochs.size() / 2);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t cnt = 0;
  for (std::size_t i = 0; i < half && i < out.epochs.size(); ++i) {
    if (out.epochs[i].max_residual <= 0) continue;
    double xi = static_cast<double>(i), yi = std::log10(out.epochs[i].max_residual);
    sx += xi;
    sy += yi;
    sxx += xi * xi;
    sxy += xi * yi;
    ++cnt;
  }
  if (cnt >= 2) out.linear_rate_fit = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
  return out;
}

struct RunReport {
  std::vector<std::string> trace_paths;
  std::string summary_path;
  std::vector<SimResult> runs;
  Reference reference;
};

inline void write_trace(const Trace& trace, const std::string& path) {
  std::ofstream out(path);
  out << to_csv(trace);
}

/// Execute the configured simulator run(s); repetitions increment the seed.
inline RunReport cmd_run(const ExperimentConfig& c) {
  namespace fs = std::filesystem;
  fs::create_directories(c.output_dir);
  auto [init_mode, init_scale] = parse_init(c.init);

  RunReport report;
  // The dataset is fixed by the config seed; repetitions only reseed the
  // asynchrony schedule.
  SynthProblem prob = build_problem(c);
  report.reference = reference_optimum(prob.spec, prob.shards);
  for (int rep = 0; rep < c.repetitions; ++rep) {
    SimConfig sim;
    sim.spec = prob.spec;
    sim.shards = prob.shards;
    sim.delay_model = parse_delay_model(c.delay_model);
    sim.seed = c.seed + static_cast<std::uint64_t>(rep);
    sim.max_updates = c.max_updates;
    sim.target_subopt = c.target_subopt;
    sim.init_mode = init_mode;
    sim.init_scale = init_scale;
    sim.reference = report.reference;

    SimResult res = run_simulated(sim);
    std::string trace_path = c.output_dir + "/trace_" + std::to_string(rep) + ".csv";
    write_trace(res.trace, trace_path);
    report.trace_paths.push_back(trace_path);
    report.runs.push_back(std::move(res));
  }

  report.summary_path = c.output_dir + "/summary.txt";
  std::ofstream sum(report.summary_path);
  for (int rep = 0; rep < c.repetitions; ++rep) {
    const SimResult& res = report.runs[rep];
    std::int64_t to_target = -1;
    if (c.target_subopt)
      for (const auto& r : res.trace.rows)
        if (r.subopt <= *c.target_subopt) {
          to_target = r.t;
          break;
        }
    sum << "rep " << rep << ": updates=" << res.master.t
        << " epochs_completed=" << res.trace.epoch_boundaries.size() - 1
        << " updates_to_target=" << to_target << " wall_s=" << res.trace.wall_s
        << " degenerate_events=" << res.master.degenerate_events
        << (res.trace.aborted_non_finite ? " ABORTED_NON_FINITE" : "") << "\n";
  }
  if (c.repetitions > 1) {
    // Average suboptimality at aligned update counts across repetitions.
    std::size_t min_len = report.runs.front().trace.rows.size();
    for (const auto& r : report.runs) min_len = std::min(min_len, r.trace.rows.size());
    std::ofstream avg(c.output_dir + "/avg_subopt.csv");
    avg << "t,subopt_avg\n";
    for (std::size_t i = 0; i < min_len; ++i) {
      double s = 0;
      for (const auto& r : report.runs) s += r.trace.rows[i].subopt;
      char buf[64];
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, s / c.repetitions);
      avg << buf;
    }
    sum << "averaged over " << c.repetitions << " repetitions: see avg_subopt.csv\n";
  }
  return report;
}

inline std::string cmd_reference_optimum(const ExperimentConfig& c) {
  namespace fs = std::filesystem;
  fs::create_directories(c.output_dir);
  SynthProblem prob = build_problem(c);
  Reference ref = reference_optimum(prob.spec, prob.shards);
  std::string path = c.output_dir + "/reference.txt";
  std::ofstream out(path);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", ref.f_star);
  out << "f_star = " << buf << "\n";
  out << "x_star =";
  for (double v : ref.x_star) {
    std::snprintf(buf, sizeof buf, " %.17g", v);
    out << buf;
  }
  out << "\n";
  return path;
}

inline std::string cmd_analyze(const std::vector<std::string>& trace_paths,
                               const std::string& out_path) {
  std::ofstream out(out_path);
  out << "trace,m,T_m,max_residual,rho_m,last_ratios_decreasing\n";
  for (const auto& path : trace_paths) {
    TraceAnalysis an = analyze_trace(parse_trace_csv(path));
    for (const auto& e : an.epochs) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s,%d,%lld,%.17g,%.17g,%d\n", path.c_str(), e.m,
                    static_cast<long long>(e.T_m), e.max_residual, e.rho,
                    an.last_ratios_decreasing ? 1 : 0);
      out << buf;
    }
  }
  return out_path;
}

/// Centralized gradient descent with Armijo backtracking, emitting the same
/// trace schema for comparability.
inline RunReport cmd_baseline_gd(const ExperimentConfig& c) {
  namespace fs = std::filesystem;
  fs::create_directories(c.output_dir);
  SynthProblem prob = build_problem(c);
  Reference ref = reference_optimum(prob.spec, prob.shards);

  int p = prob.shards.front().dim;
  Vector x(p, 0.0);
  Trace trace;
  double eta = 1.0;
  for (std::int64_t t = 1; t <= c.max_updates; ++t) {
    Vector g = pooled_grad(prob.spec, prob.shards, x);
    double fx = pooled_value(prob.spec, prob.shards, x);
    double g2 = dot(g, g);
    eta *= 2.0;  // allow the stepsize to grow back between iterations
    Vector cand = x - eta * g;
    while (eta > 1e-16 && pooled_value(prob.spec, prob.shards, cand) > fx - 0.5 * eta * g2) {
      eta *= 0.5;
      cand = x - eta * g;
    }
    x = cand;
    TraceRow row;
    row.t = t;
    row.wall_s = static_cast<double>(t);
    row.worker = 0;
    row.epoch = static_cast<int>(t);
    row.subopt = pooled_value(prob.spec, prob.shards, x) - ref.f_star;
    row.residual = norm2(x - ref.x_star);
    trace.rows.push_back(row);
    if (c.target_subopt && row.subopt <= *c.target_subopt) break;
  }
  RunReport report;
  report.reference = ref;
  std::string path = c.output_dir + "/baseline_gd.csv";
  write_trace(trace, path);
  report.trace_paths.push_back(path);
  report.summary_path = c.output_dir + "/baseline_summary.txt";
  std::ofstream sum(report.summary_path);
  std::int64_t to_target = -1;
  if (c.target_subopt)
    for (const auto& r : trace.rows)
      if (r.subopt <= *c.target_subopt) {
        to_target = r.t;
        break;
      }
  sum << "updates=" << trace.rows.size() << " updates_to_target=" << to_target << "\n";
  SimResult res;
  res.trace = std::move(trace);
  report.runs.push_back(std::move(res));
  return report;
}

}  // namespace daveqn
