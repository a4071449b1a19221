#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "daveqn/harness.hpp"
#include "daveqn/runtime_tcp.hpp"

namespace {

using namespace daveqn;

int do_run(const std::string& config_path) {
  ExperimentConfig c = parse_config(config_path);
  RunReport report = cmd_run(c);
  for (const auto& p : report.trace_paths) std::printf("trace: %s\n", p.c_str());
  std::printf("summary: %s\n", report.summary_path.c_str());
  return 0;
}

int do_reference(const std::string& config_path) {
  ExperimentConfig c = parse_config(config_path);
  std::string path = cmd_reference_optimum(c);
  std::printf("reference: %s\n", path.c_str());
  return 0;
}

int do_analyze(const std::vector<std::string>& traces, const std::string& out) {
  std::string path = cmd_analyze(traces, out);
  std::printf("analysis: %s\n", path.c_str());
  return 0;
}

int do_baseline(const std::string& config_path) {
  ExperimentConfig c = parse_config(config_path);
  RunReport report = cmd_baseline_gd(c);
  std::printf("trace: %s\n", report.trace_paths.front().c_str());
  std::printf("summary: %s\n", report.summary_path.c_str());
  return 0;
}

int do_master(const std::string& config_path, const std::string& listen, int port, int workers) {
  ExperimentConfig c = parse_config(config_path);
  SynthProblem prob = build_problem(c);
  TcpMasterConfig mc;
  mc.listen_addr = listen;
  mc.port = port;
  mc.n_expected = workers > 0 ? workers : c.n;
  mc.spec = prob.spec;
  mc.shards = prob.shards;
  mc.max_updates = c.max_updates;
  mc.target_subopt = c.target_subopt;
  mc.reference = reference_optimum(prob.spec, prob.shards);
  mc.on_listening = [](int bound) { std::printf("listening on port %d\n", bound); };
  TcpRunResult res = run_master_tcp(std::move(mc));
  std::filesystem::create_directories(c.output_dir);
  std::string path = c.output_dir + "/tcp_trace.csv";
  write_trace(res.trace, path);
  std::printf("updates: %lld\ntrace: %s\n", static_cast<long long>(res.master.t), path.c_str());
  return 0;
}

int do_worker(const std::string& config_path, const std::string& connect, int port, int id) {
  ExperimentConfig c = parse_config(config_path);
  SynthProblem prob = build_problem(c);
  if (id < 0 || id >= static_cast<int>(prob.shards.size()))
    throw ConfigError("worker id out of range for configured n");
  TcpWorkerConfig wc;
  wc.master_addr = connect;
  wc.port = port;
  wc.worker_id = id;
  wc.spec = prob.spec;
  wc.shard = prob.shards[id];
  std::int64_t rounds = run_worker_tcp(wc);
  std::printf("worker %d done after %lld rounds\n", id, static_cast<long long>(rounds));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DAve-QN asynchronous distributed quasi-Newton experiments"};
  app.require_subcommand(1);

  std::string config_path, listen = "127.0.0.1", connect = "127.0.0.1";
  std::string analysis_out = "analysis.csv";
  std::vector<std::string> traces;
  int port = 0, workers = 0, worker_id = 0;

  auto* run = app.add_subcommand("run", "Run a simulated experiment from a config file");
  run->add_option("config", config_path, "experiment config file")->required();

  auto* reference = app.add_subcommand("reference", "Compute the reference optimum x*, f*");
  reference->add_option("config", config_path)->required();

  auto* analyze = app.add_subcommand("analyze", "Epoch residual ratios from trace CSVs");
  analyze->add_option("traces", traces, "trace CSV paths")->required();
  analyze->add_option("-o,--out", analysis_out, "output CSV path");

  auto* baseline = app.add_subcommand("baseline-gd", "Centralized gradient-descent baseline");
  baseline->add_option("config", config_path)->required();

  auto* master = app.add_subcommand("master", "Run the TCP master");
  master->add_option("--config", config_path)->required();
  master->add_option("--listen", listen, "listen address");
  master->add_option("--port", port, "listen port (0 = ephemeral)");
  master->add_option("--workers", workers, "expected worker count (default: config n)");

  auto* worker = app.add_subcommand("worker", "Run a TCP worker");
  worker->add_option("--config", config_path)->required();
  worker->add_option("--connect", connect, "master address");
  worker->add_option("--port", port, "master port")->required();
  worker->add_option("--id", worker_id, "worker id in [0, n)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return do_run(config_path);
    if (*reference) return do_reference(config_path);
    if (*analyze) return do_analyze(traces, analysis_out);
    if (*baseline) return do_baseline(config_path);
    if (*master) return do_master(config_path, listen, port, workers);
    if (*worker) return do_worker(config_path, connect, port, worker_id);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
