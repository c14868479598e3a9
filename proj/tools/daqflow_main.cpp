// daqflow command line: run a scenario, run a canned experiment, or rerun
// the command recorded in a CSV written by either.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "daqflow/config.hpp"
#include "daqflow/experiments.hpp"
#include "daqflow/scenario.hpp"

namespace fs = std::filesystem;
using namespace daqflow;

namespace {

constexpr int kExitInvariant = 2;
constexpr int kExitConfig = 3;

fs::path default_out_dir() {
  const char* env = std::getenv("DAQFLOW_OUT_DIR");
  return env && *env ? fs::path(env) : fs::path(".");
}

struct RunArgs {
  std::string config;
  fs::path out_dir;
  std::vector<std::string> settings;
  bool trace = false;
  std::string sink = "null";
};

std::vector<fs::path> run_command(const RunArgs& args, const std::string& stem) {
  ScenarioConfig cfg;
  if (!args.config.empty()) overlay_config_file(cfg, args.config);
  for (const auto& s : args.settings) apply_assignment(cfg, s);
  validate(cfg);

  fs::create_directories(args.out_dir);
  std::vector<fs::path> written;
  RunOptions options;
  std::ofstream trace;
  if (args.trace) {
    const auto path = args.out_dir / (stem + ".trace");
    trace.open(path, std::ios::binary | std::ios::trunc);
    if (!trace) throw std::runtime_error("cannot write " + path.string());
    options.trace = &trace;
    written.push_back(path);
  }
  if (args.sink != "null") {
    options.sink = std::make_unique<SfoFileWriter>(args.sink);
    written.push_back(args.sink);
  }
  const auto snapshot = run_scenario(cfg, std::move(options));
  CsvTable table = snapshot_table(snapshot, scenario_columns());
  table.comments = provenance_comments("run", cfg);
  const auto csv = args.out_dir / (stem + ".csv");
  table.write(csv);
  written.insert(written.begin(), csv);
  return written;
}

struct Recorded {
  std::string command;
  std::string hash;
  std::vector<std::string> settings;
};

Recorded read_provenance(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw ConfigError("cannot read " + csv.string());
  Recorded r;
  std::string line;
  while (std::getline(in, line) && line.starts_with("# ")) {
    const std::string body = line.substr(2);
    if (body.starts_with("daqflow ")) {
      r.command = body.substr(8);
    } else if (body.starts_with("config_hash=")) {
      r.hash = body.substr(12);
    } else if (body.starts_with("config:")) {
      std::istringstream words(body.substr(7));
      std::string w;
      while (words >> w) r.settings.push_back(w);
    }
  }
  if (r.command.empty() || r.hash.empty()) {
    throw ConfigError(csv.string() + " carries no daqflow provenance comments");
  }
  return r;
}

std::vector<fs::path> rerun_command(const fs::path& csv, const fs::path& out_dir) {
  const Recorded rec = read_provenance(csv);
  const std::string stem = csv.stem().string();
  if (rec.command == "run") {
    ScenarioConfig cfg;
    for (const auto& s : rec.settings) apply_assignment(cfg, s);
    if (config_hash(cfg) != rec.hash) throw ConfigError("recorded config does not match its hash");
    RunArgs args;
    args.out_dir = out_dir;
    args.settings = rec.settings;
    return run_command(args, stem);
  }
  if (rec.command.starts_with("exp ")) {
    ExperimentRequest request;
    request.name = rec.command.substr(4);
    // The recorded settings are complete, so presets are overridden exactly.
    request.settings = rec.settings;
    const ScenarioConfig cfg = experiment_config(request.name, std::nullopt, request.settings);
    if (config_hash(cfg) != rec.hash) throw ConfigError("recorded config does not match its hash");
    request.out_dir = out_dir;
    return run_experiment(request);
  }
  throw ConfigError("cannot rerun command '" + rec.command + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"daqflow: discrete-event simulator of a trigger/DAQ dataflow"};
  app.require_subcommand(1);

  RunArgs run_args;
  run_args.out_dir = default_out_dir();
  auto* run = app.add_subcommand("run", "run one scenario and write <out>/<config stem>.csv");
  run->add_option("config", run_args.config, "key=value config file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", run_args.out_dir, "output directory (default $DAQFLOW_OUT_DIR or .)");
  run->add_option("--set", run_args.settings, "override a config key (key=value), repeatable");
  run->add_flag("--trace", run_args.trace, "write the delivery trace to <out>/<config stem>.trace");
  run->add_option("--sink", run_args.sink, "SFO output file, or null");

  ExperimentRequest exp_request;
  exp_request.out_dir = default_out_dir();
  std::string calibration;
  auto* exp = app.add_subcommand("exp", "run a canned experiment and write <out>/<name>.csv");
  exp->add_option("name", exp_request.name, "exp-a | exp-b | exp-c | calibrate")->required();
  exp->add_option("--out", exp_request.out_dir, "output directory (default $DAQFLOW_OUT_DIR or .)");
  exp->add_option("--set", exp_request.settings, "override a config key (key=value), repeatable");
  exp->add_flag("--trace", exp_request.trace, "write the trace of the first sweep point");
  exp->add_option("--calibration", calibration, "calibration file written by `exp calibrate`")
      ->check(CLI::ExistingFile);

  std::string rerun_csv;
  fs::path rerun_out = default_out_dir();
  auto* rerun = app.add_subcommand("rerun", "repeat the run recorded in a CSV's comment lines");
  rerun->add_option("csv", rerun_csv, "CSV written by run or exp")->required()->check(CLI::ExistingFile);
  rerun->add_option("--out", rerun_out, "output directory (default $DAQFLOW_OUT_DIR or .)");

  CLI11_PARSE(app, argc, argv);

  try {
    std::vector<fs::path> written;
    if (*run) {
      written = run_command(run_args, fs::path(run_args.config).stem().string());
    } else if (*exp) {
      if (!calibration.empty()) exp_request.calibration = calibration;
      written = run_experiment(exp_request);
    } else {
      written = rerun_command(rerun_csv, rerun_out);
    }
    for (const auto& p : written) std::cout << "wrote " << p.string() << '\n';
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InvariantViolation& e) {
    std::cerr << e.what() << '\n';
    return kExitInvariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
