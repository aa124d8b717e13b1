#ifndef NVDB_CONFIG_HPP
#define NVDB_CONFIG_HPP

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "errors.hpp"
#include "sequence.hpp"
#include "spinsys.hpp"
#include "units.hpp"

namespace nvdb {

struct NoiseSettings {
  double temperature_k = 300.0;
  std::map<std::string, double> m_override;
  bool dissipation = true;
};

struct SequenceSettings {
  Protocol protocol = Protocol::Hybrid;
  PulseMode mode = PulseMode::Finite;
  double rabi_mhz = 10.0;
  bool crosstalk = true;
  std::optional<Timings> timings;  // us; nullopt = auto
  double t_max_us = 3.0;
  std::size_t n_points = 121;
};

struct SamplingSettings {
  std::optional<std::uint64_t> shots = 50000;  // nullopt = infinite (noiseless)
  std::uint64_t seed = 1;
  std::size_t repeats = 1;
};

struct AnalysisSettings {
  std::size_t zero_pad = 8;
  std::size_t fit_starts = 3;
};

struct SweepSpec {
  std::string parameter;
  std::vector<double> values;
  std::vector<std::string> outputs{"g_est", "sigma_g"};
  std::size_t seeds = 1;
};

struct ExperimentConfig {
  SystemDescription system;
  NoiseSettings noise;
  SequenceSettings sequence;
  SamplingSettings sampling;
  AnalysisSettings analysis;
  std::optional<SweepSpec> sweep;
};

inline const std::set<std::string>& sweep_outputs() {
  static const std::set<std::string> names{"g_est", "sigma_g", "snr", "peak_ratio", "snr_ratio", "amplitude"};
  return names;
}

namespace detail {

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

inline void check_keys(const YAML::Node& node, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!node.IsMap()) throw ConfigError("expected a mapping", path);
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "'", join_path(path, key));
  }
}

template <typename T>
T scalar(const YAML::Node& node, const std::string& path) {
  if (!node.IsScalar()) throw ConfigError("expected a scalar", path);
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("cannot read value '" + node.Scalar() + "'", path);
  }
}

inline double number(const YAML::Node& node, const std::string& path) {
  const double v = scalar<double>(node, path);
  if (!std::isfinite(v)) throw ConfigError("value must be finite", path);
  return v;
}

inline double positive(const YAML::Node& node, const std::string& path) {
  const double v = number(node, path);
  if (!(v > 0.0)) throw ConfigError("value must be positive", path);
  return v;
}

inline std::uint64_t count(const YAML::Node& node, const std::string& path, std::uint64_t min = 0) {
  if (!node.IsScalar()) throw ConfigError("expected an integer", path);
  const auto& s = node.Scalar();
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw ConfigError("expected a non-negative integer", path);
  if (v < min) throw ConfigError("value must be at least " + std::to_string(min), path);
  return v;
}

inline Eigen::Vector3d vec3(const YAML::Node& node, const std::string& path) {
  if (!node.IsSequence() || node.size() != 3) throw ConfigError("expected a list of three numbers", path);
  return {number(node[0], path + ".0"), number(node[1], path + ".1"), number(node[2], path + ".2")};
}

inline SiteKind site_kind(const YAML::Node& node, const std::string& path) {
  const auto s = scalar<std::string>(node, path);
  if (s == "NV") return SiteKind::NV;
  if (s == "DB") return SiteKind::DB;
  if (s == "LABEL") return SiteKind::Label;
  throw ConfigError("kind must be NV, DB or LABEL", path);
}

inline SystemDescription parse_system(const YAML::Node& node, const std::string& path) {
  check_keys(node, path, {"sites", "field_direction", "couplings_mhz"});
  SystemDescription d;
  const auto sites = node["sites"];
  if (!sites || !sites.IsSequence() || sites.size() == 0) {
    throw ConfigError("expected a non-empty list of sites", path + ".sites");
  }
  for (std::size_t i = 0; i < sites.size(); ++i) {
    const auto sp = path + ".sites." + std::to_string(i);
    const auto s = sites[i];
    check_keys(s, sp, {"name", "kind", "position_nm", "larmor_mhz", "t1_us", "t2_us"});
    for (const char* req : {"name", "kind", "position_nm", "larmor_mhz", "t1_us", "t2_us"}) {
      if (!s[req]) throw ConfigError("missing required key", join_path(sp, req));
    }
    SpinSite site;
    site.name = scalar<std::string>(s["name"], sp + ".name");
    site.kind = site_kind(s["kind"], sp + ".kind");
    site.position = vec3(s["position_nm"], sp + ".position_nm");
    site.larmor = mhz(number(s["larmor_mhz"], sp + ".larmor_mhz"));
    site.t1 = positive(s["t1_us"], sp + ".t1_us");
    site.t2 = positive(s["t2_us"], sp + ".t2_us");
    d.sites.push_back(std::move(site));
  }
  if (node["field_direction"]) {
    d.field_direction = vec3(node["field_direction"], path + ".field_direction");
    const double n = d.field_direction.norm();
    if (!(n > 0.0)) throw ConfigError("field direction must be non-zero", path + ".field_direction");
    d.field_direction /= n;
  }
  if (const auto ov = node["couplings_mhz"]) {
    if (!ov.IsSequence()) throw ConfigError("expected a list of [site, site, MHz] entries", path + ".couplings_mhz");
    for (std::size_t i = 0; i < ov.size(); ++i) {
      const auto op = path + ".couplings_mhz." + std::to_string(i);
      if (!ov[i].IsSequence() || ov[i].size() != 3) throw ConfigError("expected [site, site, MHz]", op);
      d.overrides.push_back({scalar<std::string>(ov[i][0], op + ".0"), scalar<std::string>(ov[i][1], op + ".1"),
                             mhz(number(ov[i][2], op + ".2"))});
    }
  }
  return d;
}

inline NoiseSettings parse_noise(const YAML::Node& node, const std::string& path) {
  check_keys(node, path, {"temperature_k", "m_override", "dissipation"});
  NoiseSettings n;
  if (node["temperature_k"]) n.temperature_k = positive(node["temperature_k"], path + ".temperature_k");
  if (const auto m = node["m_override"]) {
    if (!m.IsMap()) throw ConfigError("expected a mapping of site name to m", path + ".m_override");
    for (const auto& kv : m) {
      const auto name = kv.first.as<std::string>();
      const double v = number(kv.second, path + ".m_override." + name);
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("m must lie in [0, 1]", path + ".m_override." + name);
      n.m_override[name] = v;
    }
  }
  if (node["dissipation"]) n.dissipation = scalar<bool>(node["dissipation"], path + ".dissipation");
  return n;
}

inline SequenceSettings parse_sequence(const YAML::Node& node, const std::string& path) {
  check_keys(node, path, {"protocol", "mode", "rabi_mhz", "crosstalk", "timings", "t_grid"});
  SequenceSettings s;
  if (node["protocol"]) {
    const auto p = scalar<std::string>(node["protocol"], path + ".protocol");
    if (p == "hybrid") s.protocol = Protocol::Hybrid;
    else if (p == "direct") s.protocol = Protocol::Direct;
    else throw ConfigError("protocol must be hybrid or direct", path + ".protocol");
  }
  if (node["mode"]) {
    const auto m = scalar<std::string>(node["mode"], path + ".mode");
    if (m == "ideal") s.mode = PulseMode::Ideal;
    else if (m == "finite") s.mode = PulseMode::Finite;
    else throw ConfigError("mode must be ideal or finite", path + ".mode");
  }
  if (node["rabi_mhz"]) s.rabi_mhz = positive(node["rabi_mhz"], path + ".rabi_mhz");
  if (node["crosstalk"]) s.crosstalk = scalar<bool>(node["crosstalk"], path + ".crosstalk");
  if (const auto t = node["timings"]) {
    const auto tp = path + ".timings";
    if (t.IsScalar()) {
      if (t.Scalar() != "auto") throw ConfigError("expected 'auto' or a mapping of tau values", tp);
    } else {
      check_keys(t, tp, {"tau1_us", "tau2_us", "tau3_us"});
      Timings tm;
      if (t["tau1_us"]) tm.tau1 = positive(t["tau1_us"], tp + ".tau1_us");
      if (t["tau2_us"]) tm.tau2 = positive(t["tau2_us"], tp + ".tau2_us");
      if (t["tau3_us"]) tm.tau3 = positive(t["tau3_us"], tp + ".tau3_us");
      s.timings = tm;
    }
  }
  if (const auto g = node["t_grid"]) {
    const auto gp = path + ".t_grid";
    check_keys(g, gp, {"t_max_us", "n_points"});
    if (g["t_max_us"]) s.t_max_us = positive(g["t_max_us"], gp + ".t_max_us");
    if (g["n_points"]) s.n_points = count(g["n_points"], gp + ".n_points", 2);
  }
  if (s.timings) {
    const auto& tm = *s.timings;
    if (s.protocol == Protocol::Hybrid && !(tm.tau1 > 0.0 && tm.tau2 > 0.0)) {
      throw ConfigError("hybrid protocol needs tau1_us and tau2_us", path + ".timings");
    }
    if (s.protocol == Protocol::Direct && !(tm.tau3 > 0.0)) {
      throw ConfigError("direct protocol needs tau3_us", path + ".timings");
    }
  }
  return s;
}

inline SamplingSettings parse_sampling(const YAML::Node& node, const std::string& path) {
  check_keys(node, path, {"shots", "seed", "repeats"});
  SamplingSettings s;
  if (const auto n = node["shots"]) {
    if (n.IsScalar() && (n.Scalar() == "inf" || n.Scalar() == ".inf")) {
      s.shots.reset();
    } else {
      s.shots = count(n, path + ".shots", 1);
    }
  }
  if (node["seed"]) s.seed = count(node["seed"], path + ".seed");
  if (node["repeats"]) s.repeats = count(node["repeats"], path + ".repeats", 1);
  return s;
}

inline AnalysisSettings parse_analysis(const YAML::Node& node, const std::string& path) {
  check_keys(node, path, {"zero_pad", "fit_starts"});
  AnalysisSettings a;
  if (node["zero_pad"]) a.zero_pad = count(node["zero_pad"], path + ".zero_pad", 1);
  if (node["fit_starts"]) a.fit_starts = count(node["fit_starts"], path + ".fit_starts", 1);
  return a;
}

inline SweepSpec parse_sweep(const YAML::Node& node, const std::string& path) {
  check_keys(node, path, {"parameter", "values", "outputs", "seeds"});
  SweepSpec s;
  if (!node["parameter"]) throw ConfigError("missing required key", path + ".parameter");
  s.parameter = scalar<std::string>(node["parameter"], path + ".parameter");
  const auto v = node["values"];
  if (!v || !v.IsSequence() || v.size() == 0) throw ConfigError("expected a non-empty list", path + ".values");
  for (std::size_t i = 0; i < v.size(); ++i) s.values.push_back(number(v[i], path + ".values." + std::to_string(i)));
  if (const auto o = node["outputs"]) {
    if (!o.IsSequence() || o.size() == 0) throw ConfigError("expected a non-empty list", path + ".outputs");
    s.outputs.clear();
    for (std::size_t i = 0; i < o.size(); ++i) {
      const auto name = scalar<std::string>(o[i], path + ".outputs." + std::to_string(i));
      if (!sweep_outputs().count(name)) throw ConfigError("unknown output '" + name + "'", path + ".outputs." + std::to_string(i));
      s.outputs.push_back(name);
    }
  }
  if (node["seeds"]) s.seeds = count(node["seeds"], path + ".seeds", 1);
  return s;
}

}  // namespace detail

inline ExperimentConfig parse_config(const YAML::Node& root) {
  using namespace detail;
  check_keys(root, "", {"system", "noise", "sequence", "sampling", "analysis", "sweep"});
  if (!root["system"]) throw ConfigError("missing required key", "system");
  ExperimentConfig c;
  c.system = parse_system(root["system"], "system");
  if (root["noise"]) c.noise = parse_noise(root["noise"], "noise");
  if (root["sequence"]) c.sequence = parse_sequence(root["sequence"], "sequence");
  if (root["sampling"]) c.sampling = parse_sampling(root["sampling"], "sampling");
  if (root["analysis"]) c.analysis = parse_analysis(root["analysis"], "analysis");
  if (root["sweep"]) c.sweep = parse_sweep(root["sweep"], "sweep");
  // Building the system here surfaces geometry and naming errors before any computation.
  try {
    build_system(c.system);
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), "system");
  }
  for (const auto& [name, m] : c.noise.m_override) {
    bool found = false;
    for (const auto& s : c.system.sites) found = found || s.name == name;
    if (!found) throw ConfigError("unknown site '" + name + "'", "noise.m_override." + name);
  }
  const bool has_db = c.system.sites.size() == 4;
  if (c.sequence.protocol == Protocol::Hybrid && !has_db) {
    throw ConfigError("hybrid protocol needs a DB site", "sequence.protocol");
  }
  if (c.sequence.protocol == Protocol::Direct && has_db) {
    throw ConfigError("direct protocol takes a system without DB", "sequence.protocol");
  }
  return c;
}

inline YAML::Node load_yaml_text(const std::string& text) {
  try {
    return YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("YAML syntax error: ") + e.what(), "");
  }
}

inline ExperimentConfig parse_config_text(const std::string& text) { return parse_config(load_yaml_text(text)); }

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'", "");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Preset directory: $NVDB_PRESET_DIR if set, otherwise the source tree's presets/.
inline std::filesystem::path preset_directory() {
  if (const char* env = std::getenv("NVDB_PRESET_DIR"); env && *env) return env;
#ifdef NVDB_PRESET_DIR
  return NVDB_PRESET_DIR;
#else
  return "presets";
#endif
}

inline std::filesystem::path preset_path(const std::string& name) {
  const auto p = preset_directory() / (name + ".yaml");
  if (!std::filesystem::exists(p)) throw ConfigError("unknown preset '" + name + "' (looked for " + p.string() + ")", "");
  return p;
}

/// Shortest decimal that reads back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

/// Fully resolved configuration with every default written out; parses back to an identical config.
inline std::string emit_config(const ExperimentConfig& c) {
  YAML::Emitter out;
  auto num = [&](double v) { out << YAML::Value << format_number(v); };
  auto vec = [&](const Eigen::Vector3d& v) {
    out << YAML::Flow << YAML::BeginSeq;
    for (int i = 0; i < 3; ++i) out << format_number(v[i]);
    out << YAML::EndSeq;
  };
  out << YAML::BeginMap;
  out << YAML::Key << "system" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "field_direction" << YAML::Value;
  vec(c.system.field_direction);
  out << YAML::Key << "sites" << YAML::Value << YAML::BeginSeq;
  for (const auto& s : c.system.sites) {
    out << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << s.name;
    out << YAML::Key << "kind" << YAML::Value << std::string(to_string(s.kind));
    out << YAML::Key << "position_nm" << YAML::Value;
    vec(s.position);
    out << YAML::Key << "larmor_mhz";
    num(to_mhz(s.larmor));
    out << YAML::Key << "t1_us";
    num(s.t1);
    out << YAML::Key << "t2_us";
    num(s.t2);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  if (!c.system.overrides.empty()) {
    out << YAML::Key << "couplings_mhz" << YAML::Value << YAML::BeginSeq;
    for (const auto& o : c.system.overrides) {
      out << YAML::Flow << YAML::BeginSeq << o.a << o.b << format_number(to_mhz(o.value)) << YAML::EndSeq;
    }
    out << YAML::EndSeq;
  }
  out << YAML::EndMap;

  out << YAML::Key << "noise" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "temperature_k";
  num(c.noise.temperature_k);
  if (!c.noise.m_override.empty()) {
    out << YAML::Key << "m_override" << YAML::Value << YAML::BeginMap;
    for (const auto& [k, v] : c.noise.m_override) {
      out << YAML::Key << k;
      num(v);
    }
    out << YAML::EndMap;
  }
  out << YAML::Key << "dissipation" << YAML::Value << c.noise.dissipation;
  out << YAML::EndMap;

  const auto& q = c.sequence;
  out << YAML::Key << "sequence" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "protocol" << YAML::Value << std::string(to_string(q.protocol));
  out << YAML::Key << "mode" << YAML::Value << std::string(to_string(q.mode));
  out << YAML::Key << "rabi_mhz";
  num(q.rabi_mhz);
  out << YAML::Key << "crosstalk" << YAML::Value << q.crosstalk;
  out << YAML::Key << "timings" << YAML::Value;
  if (!q.timings) {
    out << "auto";
  } else {
    out << YAML::BeginMap;
    if (q.protocol == Protocol::Hybrid) {
      out << YAML::Key << "tau1_us";
      num(q.timings->tau1);
      out << YAML::Key << "tau2_us";
      num(q.timings->tau2);
    } else {
      out << YAML::Key << "tau3_us";
      num(q.timings->tau3);
    }
    out << YAML::EndMap;
  }
  out << YAML::Key << "t_grid" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "t_max_us";
  num(q.t_max_us);
  out << YAML::Key << "n_points" << YAML::Value << q.n_points;
  out << YAML::EndMap << YAML::EndMap;

  out << YAML::Key << "sampling" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "shots" << YAML::Value;
  if (c.sampling.shots) out << *c.sampling.shots;
  else out << "inf";
  out << YAML::Key << "seed" << YAML::Value << c.sampling.seed;
  out << YAML::Key << "repeats" << YAML::Value << c.sampling.repeats;
  out << YAML::EndMap;

  out << YAML::Key << "analysis" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "zero_pad" << YAML::Value << c.analysis.zero_pad;
  out << YAML::Key << "fit_starts" << YAML::Value << c.analysis.fit_starts;
  out << YAML::EndMap;

  if (c.sweep) {
    out << YAML::Key << "sweep" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "parameter" << YAML::Value << c.sweep->parameter;
    out << YAML::Key << "values" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (double v : c.sweep->values) out << format_number(v);
    out << YAML::EndSeq;
    out << YAML::Key << "outputs" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& o : c.sweep->outputs) out << o;
    out << YAML::EndSeq;
    out << YAML::Key << "seeds" << YAML::Value << c.sweep->seeds;
    out << YAML::EndMap;
  }
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

/// Sets the scalar at a dotted path. List elements are addressed by index or, for lists
/// of named mappings, by name (system.sites.DB.t2_us).
inline YAML::Node with_override(const YAML::Node& root, const std::string& path, const std::string& value) {
  YAML::Node copy = YAML::Clone(root);
  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  if (parts.empty()) throw ConfigError("empty parameter path", path);
  YAML::Node cur = copy;
  std::string walked;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& key = parts[i];
    walked = detail::join_path(walked, key);
    const bool last = i + 1 == parts.size();
    if (cur.IsSequence()) {
      std::size_t idx = cur.size();
      const auto [end, ec] = std::from_chars(key.data(), key.data() + key.size(), idx);
      if (ec != std::errc() || end != key.data() + key.size()) {
        idx = cur.size();
        for (std::size_t k = 0; k < cur.size(); ++k) {
          if (cur[k].IsMap() && cur[k]["name"] && cur[k]["name"].Scalar() == key) idx = k;
        }
      }
      if (idx >= cur.size()) throw ConfigError("parameter path does not resolve", walked);
      if (last) {
        if (!cur[idx].IsScalar()) throw ConfigError("parameter path must name a scalar", walked);
        cur[idx] = value;
      } else {
        cur.reset(cur[idx]);
      }
    } else if (cur.IsMap()) {
      if (last) {
        if (cur[key] && !cur[key].IsScalar()) throw ConfigError("parameter path must name a scalar", walked);
        cur[key] = value;
      } else {
        if (!cur[key]) throw ConfigError("parameter path does not resolve", walked);
        cur.reset(cur[key]);
      }
    } else {
      throw ConfigError("parameter path does not resolve", walked);
    }
  }
  return copy;
}

inline ExperimentConfig with_parameter(const ExperimentConfig& base, const std::string& path, double value) {
  auto node = with_override(load_yaml_text(emit_config(base)), path, format_number(value));
  try {
    return parse_config(node);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("after setting '") + path + "': " + e.what(), path);
  }
}

}  // namespace nvdb

#endif
