#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <nvdb/experiment.hpp>

namespace fs = std::filesystem;
using namespace nvdb;

namespace {

constexpr int kConfigError = 2;
constexpr int kNumericalError = 3;

struct Common {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string shots;  // integer or "inf"; empty keeps the config value
  std::string out;
  unsigned jobs = 1;
};

ExperimentConfig load(const Common& o) {
  if (o.config.empty() == o.preset.empty()) throw ConfigError("give exactly one of --config or --preset", "");
  const fs::path path = o.config.empty() ? preset_path(o.preset) : fs::path(o.config);
  auto c = parse_config_text(read_text_file(path));
  if (o.seed) c.sampling.seed = *o.seed;
  if (!o.shots.empty()) {
    if (o.shots == "inf") {
      c.sampling.shots.reset();
    } else {
      std::uint64_t n = 0;
      const auto [end, ec] = std::from_chars(o.shots.data(), o.shots.data() + o.shots.size(), n);
      if (ec != std::errc() || end != o.shots.data() + o.shots.size() || n < 1) {
        throw ConfigError("expected a positive integer or 'inf'", "--shots");
      }
      c.sampling.shots = n;
    }
  }
  return c;
}

void emit(const Common& o, const std::string& file, const std::string& text) {
  if (o.out.empty()) {
    std::cout << text;
    return;
  }
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / file, text);
}

void add_common(CLI::App* app, Common& o, bool sampling) {
  app->add_option("--config", o.config, "Experiment config file (YAML)");
  app->add_option("--preset", o.preset, "Shipped preset name (fig2-hybrid, fig2-direct, fig3-t2sweep, fig4-radial)");
  if (sampling) {
    app->add_option("--seed", o.seed, "Base RNG seed (overrides sampling.seed)");
    app->add_option("--shots", o.shots, "Shots per point, or 'inf' (overrides sampling.shots)");
    app->add_option("--out", o.out, "Output directory (default: tables to stdout)");
    app->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
  }
}

std::vector<double> parse_list(const std::string& text, const char* flag) {
  std::vector<double> v;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    double x = 0.0;
    const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
    if (item.empty() || ec != std::errc() || end != item.data() + item.size()) {
      throw ConfigError("'" + item + "' is not a number", flag);
    }
    v.push_back(x);
  }
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nvdb: hybrid NV-DB sensing simulator"};
  app.require_subcommand(1);

  Common o;
  bool emit_resolved = false;

  auto* couplings = app.add_subcommand("couplings", "Print the pairwise ZZ coupling table");
  add_common(couplings, o, false);

  auto* validate = app.add_subcommand("validate", "Check a config and its pulse schedule");
  add_common(validate, o, false);
  validate->add_flag("--emit-resolved", emit_resolved, "Print the resolved config");

  auto* run = app.add_subcommand("run", "Simulate, sample, fit and write a run bundle");
  add_common(run, o, true);
  run->add_flag("--emit-resolved", emit_resolved, "Print the resolved config and exit");

  std::string param, values;
  std::optional<std::size_t> seeds;
  auto* sweep_cmd = app.add_subcommand("sweep", "Sweep one config parameter");
  add_common(sweep_cmd, o, true);
  sweep_cmd->add_option("--param", param, "Dotted parameter path (default: the config's sweep block)");
  sweep_cmd->add_option("--values", values, "Comma-separated values");
  sweep_cmd->add_option("--seeds", seeds, "Seeds per value")->check(CLI::PositiveNumber);

  std::string shot_list = "10000,50000,100000";
  std::size_t curve_seeds = 10;
  auto* curve = app.add_subcommand("snr-curve", "Hybrid and direct SNR against the number of shots");
  add_common(curve, o, true);
  curve->add_option("--shot-list", shot_list, "Comma-separated shot counts");
  curve->add_option("--seeds", curve_seeds, "Seeds per shot count")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (couplings->parsed()) {
      const auto c = load(o);
      write_couplings(std::cout, std::cerr, system_of(c));
      return 0;
    }
    if (validate->parsed()) {
      const auto c = load(o);
      const auto tl = timeline_of(c, c.sequence.t_max_us);
      const auto bad = validate_timeline(tl);
      for (const auto& v : bad) std::cerr << "schedule: " << v.message << '\n';
      if (!bad.empty()) return kConfigError;
      if (emit_resolved) std::cout << emit_config(c);
      else std::cout << "ok\n";
      return 0;
    }
    if (run->parsed()) {
      const auto c = load(o);
      if (emit_resolved) {
        std::cout << emit_config(c);
        return 0;
      }
      const auto r = nvdb::run(c, {o.jobs});
      if (!o.out.empty()) {
        write_run(r, o.out);
        std::cerr << "wrote " << o.out << '\n';
      } else {
        std::ostringstream sig;
        write_signal_csv(sig, r.signal);
        std::cout << sig.str();
      }
      const auto& f = r.fits.front();
      std::cerr << "g_est = " << fmt9(f.g()) << " MHz, sigma_g = " << fmt9(f.sigma_g()) << " MHz\n";
      return 0;
    }
    if (sweep_cmd->parsed()) {
      const auto c = load(o);
      SweepSpec spec = c.sweep ? *c.sweep : SweepSpec{};
      if (!param.empty()) spec.parameter = param;
      if (!values.empty()) spec.values = parse_list(values, "--values");
      if (seeds) spec.seeds = *seeds;
      if (spec.parameter.empty()) throw ConfigError("no parameter to sweep (use --param or a sweep block)", "sweep.parameter");
      const auto r = nvdb::sweep(c, spec, {o.jobs});
      std::ostringstream table, runs;
      write_sweep_csv(table, r);
      write_sweep_records_csv(runs, r);
      emit(o, "sweep.csv", table.str());
      if (!o.out.empty()) {
        emit(o, "sweep_runs.csv", runs.str());
        emit(o, "resolved.yaml", emit_config(c));
      }
      return 0;
    }
    if (curve->parsed()) {
      const auto c = load(o);
      std::vector<std::uint64_t> shots;
      for (double x : parse_list(shot_list, "--shot-list")) {
        if (!(x >= 1) || x != std::floor(x)) throw ConfigError("shot counts must be positive integers", "--shot-list");
        shots.push_back(static_cast<std::uint64_t>(x));
      }
      std::ostringstream table;
      write_snr_curve_csv(table, snr_curve(c, shots, curve_seeds, {o.jobs}));
      emit(o, "snr_curve.csv", table.str());
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
