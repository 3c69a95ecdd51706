#pragma once

// Project configuration: one JSON file describing the network, droop
// parameters, synthesis and filter options, and named scenarios. Parsing is
// strict: unknown keys are rejected so typos fail loudly before any
// pipeline stage runs.

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsf/barrier.hpp"
#include "gsf/grid.hpp"
#include "gsf/sim.hpp"

namespace gsf::config {

using nlohmann::json;

namespace detail {

inline void check_keys(const json& j, const std::vector<std::string>& allowed,
                       const std::string& where) {
  if (!j.is_object())
    throw std::runtime_error("config: " + where + " must be an object");
  for (const auto& [key, _] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw std::runtime_error("config: unknown key '" + key + "' in " +
                               where);
}

inline json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("config: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config: " + path.string() + ": " + e.what());
  }
  return j;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

}  // namespace detail

struct SynthesisConfig {
  int degree = 4;
  int multiplier_degree = 2;
  double kappa = 1.0;
  double eps = 1e-4;
  double c = 0.0;  // common barrier level
  int rounds = 150;
  int trig_degree = 3;
  int policy_degree = 1;
  // per-variable-kind box ranges, instantiated per inverter
  Eigen::Vector2d th_range{-0.6, 0.6};
  Eigen::Vector2d om_range{-1.0, 1.0};
  Eigen::Vector2d vm_range{-0.5, 0.3};

  barrier::Box box_for(const std::vector<std::string>& state) const {
    barrier::Box b;
    b.lo.resize(int(state.size()));
    b.hi.resize(int(state.size()));
    for (size_t k = 0; k < state.size(); ++k) {
      Eigen::Vector2d r = state[k].rfind("th", 0) == 0   ? th_range
                          : state[k].rfind("om", 0) == 0 ? om_range
                                                         : vm_range;
      b.lo[int(k)] = r[0];
      b.hi[int(k)] = r[1];
    }
    return b;
  }
};

struct FilterConfig {
  double beta_max = 1.0;  // ignored in auto mode
  bool beta_auto = false; // bisect beta_max against the actuator limits
  double gamma = 100.0;
  double r_max = -1.0;
  Eigen::Vector2d u_limit{1e30, 1e30};
};

struct BoundsGrid {
  int inverter = 0;
  int om_n = 21, vm_n = 21;
  Eigen::Vector2d om_range{-1.0, 1.0};
  Eigen::Vector2d vm_range{-0.4, 0.2};
};

struct SweepConfig {
  std::string scenario;
  int runs = 100;
};

struct ProjectConfig {
  grid::NetworkModel net;  // as described, before Kron reduction
  std::vector<grid::InverterParams> params;  // per reduced inverter bus
  Eigen::VectorXd P_target, Q_target;        // per reduced bus
  int slack = 0;
  double v_unsafe_lo = -0.4, v_unsafe_hi = 0.2;
  SynthesisConfig synthesis;
  FilterConfig filter;
  std::map<std::string, sim::Scenario> scenarios;
  SweepConfig sweep;
  BoundsGrid bounds_grid;
  std::string output_dir = "out";
  uint64_t hash = 0;  // over the config and network file bytes
};

namespace detail {

inline Eigen::Vector2d range2(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2)
    throw std::runtime_error("config: " + where + " must be [lo, hi]");
  Eigen::Vector2d r(j[0].get<double>(), j[1].get<double>());
  return r;
}

inline grid::NetworkModel parse_network(const json& j) {
  check_keys(j, {"buses", "lines"}, "network");
  grid::NetworkModel net;
  for (const auto& jb : j.at("buses")) {
    check_keys(jb, {"kind", "v0", "P", "Q"}, "network.buses[]");
    grid::Bus b;
    std::string kind = jb.value("kind", "inverter");
    if (kind == "inverter")
      b.kind = grid::BusKind::Inverter;
    else if (kind == "load")
      b.kind = grid::BusKind::Load;
    else
      throw std::runtime_error("config: bus kind '" + kind + "' unknown");
    b.v0 = jb.value("v0", 1.0);
    b.P = jb.value("P", 0.0);
    b.Q = jb.value("Q", 0.0);
    net.buses.push_back(b);
  }
  for (const auto& jl : j.at("lines")) {
    check_keys(jl, {"from", "to", "r", "x", "b"}, "network.lines[]");
    net.lines.push_back({jl.at("from").get<int>(), jl.at("to").get<int>(),
                         jl.at("r").get<double>(), jl.at("x").get<double>(),
                         jl.value("b", 0.0)});
  }
  net.build_admittance();
  return net;
}

inline std::vector<sim::DispatchStep> parse_dispatch_steps(const json& j) {
  std::vector<sim::DispatchStep> out;
  for (const auto& js : j) {
    check_keys(js, {"t", "up", "uq"}, "scenario dispatch step");
    sim::DispatchStep d;
    d.t = js.value("t", 0.0);
    d.u = Eigen::Vector2d(js.value("up", 0.0), js.value("uq", 0.0));
    out.push_back(d);
  }
  return out;
}

inline sim::Scenario parse_scenario(const json& j, int n_inverters,
                                    const std::string& name) {
  check_keys(j,
             {"horizon", "step", "dispatch", "disturbance", "resample_period",
              "neighbor_scale", "filter", "seed", "blowup_norm"},
             "scenarios." + name);
  sim::Scenario sc;
  sc.horizon = j.value("horizon", 10.0);
  sc.step = j.value("step", 1e-3);
  sc.resample_period = j.value("resample_period", 0.1);
  sc.neighbor_scale = j.value("neighbor_scale", 1.0);
  sc.seed = j.value("seed", uint64_t(0));
  sc.blowup_norm = j.value("blowup_norm", 1e3);

  std::string dist = j.value("disturbance", "none");
  if (dist == "none")
    sc.disturbance = sim::DisturbanceMode::None;
  else if (dist == "frozen")
    sc.disturbance = sim::DisturbanceMode::Frozen;
  else if (dist == "resampled")
    sc.disturbance = sim::DisturbanceMode::Resampled;
  else
    throw std::runtime_error("config: disturbance mode '" + dist +
                             "' unknown in scenarios." + name);

  std::string fm = j.value("filter", "off");
  if (fm == "on")
    sc.filter = sim::FilterMode::On;
  else if (fm == "off")
    sc.filter = sim::FilterMode::Off;
  else
    throw std::runtime_error("config: filter mode '" + fm +
                             "' unknown in scenarios." + name);

  if (j.contains("dispatch")) {
    const json& jd = j.at("dispatch");
    if (jd.is_object()) {
      // one constant dispatch for every inverter
      check_keys(jd, {"up", "uq"}, "scenarios." + name + ".dispatch");
      sim::DispatchStep d;
      d.u = Eigen::Vector2d(jd.value("up", 0.0), jd.value("uq", 0.0));
      sc.dispatch.assign(n_inverters, {d});
    } else {
      for (const auto& ji : jd)
        sc.dispatch.push_back(parse_dispatch_steps(ji));
    }
  }
  sc.validate(n_inverters);
  return sc;
}

}  // namespace detail

inline ProjectConfig load(const std::filesystem::path& path) {
  json j = detail::load_json(path);
  detail::check_keys(j,
                     {"network_file", "inverters", "powerflow", "unsafe",
                      "synthesis", "filter", "scenarios", "sweep",
                      "bounds_grid", "output_dir"},
                     "config root");

  ProjectConfig cfg;
  std::filesystem::path net_path =
      path.parent_path() / j.at("network_file").get<std::string>();
  json jnet = detail::load_json(net_path);
  cfg.net = detail::parse_network(jnet);

  int n_red = int(cfg.net.inverter_buses().size());

  {
    const json& ji = j.at("inverters");
    detail::check_keys(ji, {"lambda_p", "lambda_q", "tau"}, "inverters");
    grid::InverterParams p;
    p.lambda_p = ji.value("lambda_p", 2.43);
    p.lambda_q = ji.value("lambda_q", 0.2);
    p.tau = ji.value("tau", 0.5);
    p.validate();
    cfg.params.assign(n_red, p);
  }

  {
    const json& jp = j.at("powerflow");
    detail::check_keys(jp, {"P", "Q", "slack"}, "powerflow");
    auto vec = [&](const char* key) {
      const json& a = jp.at(key);
      if (int(a.size()) != n_red)
        throw std::runtime_error(
            std::string("config: powerflow.") + key + " needs one entry per " +
            "inverter bus (" + std::to_string(n_red) + ")");
      Eigen::VectorXd v(n_red);
      for (int k = 0; k < n_red; ++k) v[k] = a[k].get<double>();
      return v;
    };
    cfg.P_target = vec("P");
    cfg.Q_target = vec("Q");
    cfg.slack = jp.value("slack", 0);
  }

  if (j.contains("unsafe")) {
    detail::check_keys(j["unsafe"], {"v_min", "v_max"}, "unsafe");
    cfg.v_unsafe_lo = j["unsafe"].value("v_min", -0.4);
    cfg.v_unsafe_hi = j["unsafe"].value("v_max", 0.2);
    if (cfg.v_unsafe_lo >= 0.0 || cfg.v_unsafe_hi <= 0.0)
      throw std::runtime_error("config: unsafe band must exclude v = 0");
  }

  if (j.contains("synthesis")) {
    const json& js = j["synthesis"];
    detail::check_keys(js,
                       {"degree", "multiplier_degree", "kappa", "eps", "c",
                        "rounds", "trig_degree", "policy_degree", "box"},
                       "synthesis");
    auto& s = cfg.synthesis;
    s.degree = js.value("degree", 4);
    s.multiplier_degree = js.value("multiplier_degree", 2);
    s.kappa = js.value("kappa", 1.0);
    s.eps = js.value("eps", 1e-4);
    s.c = js.value("c", 0.0);
    s.rounds = js.value("rounds", 150);
    s.trig_degree = js.value("trig_degree", 3);
    s.policy_degree = js.value("policy_degree", 1);
    if (js.contains("box")) {
      detail::check_keys(js["box"], {"th", "om", "vm"}, "synthesis.box");
      if (js["box"].contains("th"))
        s.th_range = detail::range2(js["box"]["th"], "synthesis.box.th");
      if (js["box"].contains("om"))
        s.om_range = detail::range2(js["box"]["om"], "synthesis.box.om");
      if (js["box"].contains("vm"))
        s.vm_range = detail::range2(js["box"]["vm"], "synthesis.box.vm");
    }
  }

  if (j.contains("filter")) {
    const json& jf = j["filter"];
    detail::check_keys(jf, {"beta_max", "gamma", "r_max", "u_limit"},
                       "filter");
    cfg.filter.gamma = jf.value("gamma", 100.0);
    cfg.filter.r_max = jf.value("r_max", -1.0);
    if (jf.contains("beta_max")) {
      if (jf["beta_max"].is_string()) {
        if (jf["beta_max"].get<std::string>() != "auto")
          throw std::runtime_error(
              "config: filter.beta_max must be a number or \"auto\"");
        cfg.filter.beta_auto = true;
      } else {
        cfg.filter.beta_max = jf["beta_max"].get<double>();
      }
    }
    if (jf.contains("u_limit"))
      cfg.filter.u_limit = detail::range2(jf["u_limit"], "filter.u_limit");
  }

  if (j.contains("scenarios"))
    for (const auto& [name, js] : j["scenarios"].items())
      cfg.scenarios[name] = detail::parse_scenario(js, n_red, name);

  if (j.contains("sweep")) {
    detail::check_keys(j["sweep"], {"scenario", "runs"}, "sweep");
    cfg.sweep.scenario = j["sweep"].value("scenario", "");
    cfg.sweep.runs = j["sweep"].value("runs", 100);
    if (!cfg.sweep.scenario.empty() &&
        !cfg.scenarios.count(cfg.sweep.scenario))
      throw std::runtime_error("config: sweep.scenario '" +
                               cfg.sweep.scenario + "' is not defined");
  }

  if (j.contains("bounds_grid")) {
    const json& jg = j["bounds_grid"];
    detail::check_keys(jg, {"inverter", "om", "vm", "om_n", "vm_n"},
                       "bounds_grid");
    cfg.bounds_grid.inverter = jg.value("inverter", 0);
    cfg.bounds_grid.om_n = jg.value("om_n", 21);
    cfg.bounds_grid.vm_n = jg.value("vm_n", 21);
    if (jg.contains("om"))
      cfg.bounds_grid.om_range = detail::range2(jg["om"], "bounds_grid.om");
    if (jg.contains("vm"))
      cfg.bounds_grid.vm_range = detail::range2(jg["vm"], "bounds_grid.vm");
  }

  cfg.output_dir = j.value("output_dir", "out");

  cfg.hash = detail::fnv1a(jnet.dump(), detail::fnv1a(j.dump()));
  return cfg;
}

}  // namespace gsf::config
