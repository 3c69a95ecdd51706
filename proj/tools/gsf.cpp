// Pipeline driver: powerflow -> synth -> bounds / simulate / sweep ->
// export-plots. Stages communicate only through files in the output
// directory, so each can be re-run independently. Exit codes: 0 success,
// 1 synthesis/verification/simulation failure, 2 config or I/O error.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "gsf/config.hpp"
#include "gsf/filter.hpp"
#include "gsf/sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using gsf::poly::Polynomial;
namespace grid = gsf::grid;
namespace barrier = gsf::barrier;

namespace {

struct Cli {
  std::string config_path;
  std::string out_override;
  std::string scenario;
  uint64_t seed = 0;
  bool seed_set = false;
  int inverter = -1;
  double beta = -1.0, gamma = -1.0;  // < 0 means: use the config value
};

struct Pipeline {
  gsf::config::ProjectConfig cfg;
  grid::NetworkModel reduced;
  grid::PowerFlowResult pf;
  grid::Decomposition dec;
  fs::path out;
  uint64_t seed = 0;
};

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)v);
  return buf;
}

json meta(const Pipeline& p) {
  return {{"config_hash", hex64(p.cfg.hash)}, {"seed", p.seed}};
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

void write_json(const fs::path& path, const json& j) {
  write_file(path, j.dump(2) + "\n");
}

std::string csv_header(const Pipeline& p) {
  return "# config " + hex64(p.cfg.hash) + " seed " + std::to_string(p.seed) +
         "\n";
}

Pipeline setup(const Cli& cli) {
  Pipeline p;
  p.cfg = gsf::config::load(cli.config_path);
  if (cli.gamma >= 0.0) p.cfg.filter.gamma = cli.gamma;
  if (cli.beta >= 0.0) {
    p.cfg.filter.beta_max = cli.beta;
    p.cfg.filter.beta_auto = false;
  }
  p.seed = cli.seed_set ? cli.seed : 1;
  p.out = cli.out_override.empty() ? fs::path(p.cfg.output_dir)
                                   : fs::path(cli.out_override);
  p.reduced = grid::kron_reduce(p.cfg.net);
  p.pf = grid::power_flow(p.reduced, p.cfg.P_target, p.cfg.Q_target,
                          p.cfg.slack);
  if (p.pf.converged)
    p.dec = grid::assemble_dynamics(p.reduced, p.cfg.params, p.pf, p.cfg.slack,
                                    p.cfg.synthesis.trig_degree);
  return p;
}

std::vector<std::string> sub_state(const grid::InverterDynamics& inv) {
  // barrier templates range over (om, vm) only
  std::vector<std::string> s;
  for (const auto& v : inv.state)
    if (v.rfind("th", 0) != 0) s.push_back(v);
  return s;
}

std::string vm_var(const grid::InverterDynamics& inv) {
  for (const auto& v : inv.state)
    if (v.rfind("vm", 0) == 0) return v;
  throw std::runtime_error("inverter state without a voltage component");
}

barrier::UnsafeSet unsafe_for(const Pipeline& p, int i) {
  Polynomial vm = Polynomial::variable(vm_var(p.dec.inverters[i]));
  barrier::UnsafeSet u;
  u.w = {p.cfg.v_unsafe_lo - vm, vm - p.cfg.v_unsafe_hi};
  return u;
}

std::vector<barrier::Box> boxes_for(const Pipeline& p) {
  std::vector<barrier::Box> boxes;
  for (const auto& inv : p.dec.inverters)
    boxes.push_back(p.cfg.synthesis.box_for(inv.state));
  return boxes;
}

fs::path cert_path(const Pipeline& p, int i) {
  return p.out / ("cert_" + std::to_string(i) + ".json");
}
fs::path policy_path(const Pipeline& p, int i) {
  return p.out / ("policy_" + std::to_string(i) + ".json");
}

barrier::BarrierCertificate load_cert(const Pipeline& p, int i) {
  json j = gsf::config::detail::load_json(cert_path(p, i));
  if (!j.value("found", false))
    throw std::runtime_error("cert_" + std::to_string(i) +
                             ".json records a failed synthesis; re-run synth");
  barrier::BarrierCertificate cert;
  cert.state = j.at("state").get<std::vector<std::string>>();
  cert.B = Polynomial::parse(j.at("B").get<std::string>());
  cert.c = j.at("c").get<double>();
  cert.kappa = j.at("kappa").get<double>();
  return cert;
}

std::vector<Polynomial> load_policy(const Pipeline& p, int i) {
  json j = gsf::config::detail::load_json(policy_path(p, i));
  return {Polynomial::parse(j.at("u_p").get<std::string>()),
          Polynomial::parse(j.at("u_q").get<std::string>())};
}

std::vector<Polynomial> channel_gradients(const Pipeline& p, int i,
                                          const barrier::BarrierCertificate& c) {
  const auto& inv = p.dec.inverters[i];
  std::vector<Polynomial> gB(2);
  for (int k = 0; k < 2; ++k)
    for (int r = 0; r < inv.dim(); ++r)
      if (inv.g(r, k) != 0.0)
        gB[k] += inv.g(r, k) * c.B.derivative(inv.state[r]);
  return gB;
}

// Filter over the full inverter state (the certificate may use a sub-state;
// extra components are simply ignored by its polynomials).
gsf::filter::SafetyFilter make_filter(const Pipeline& p, int i,
                                      const barrier::BarrierCertificate& cert,
                                      const std::vector<Polynomial>& u_star) {
  barrier::BarrierCertificate full = cert;
  full.state = p.dec.inverters[i].state;
  gsf::filter::SafetyFilter f(full, u_star,
                              channel_gradients(p, i, cert));
  f.gamma = p.cfg.filter.gamma;
  f.r_max = p.cfg.filter.r_max;
  f.u_lo = -p.cfg.filter.u_limit;
  f.u_hi = p.cfg.filter.u_limit;
  if (p.cfg.filter.beta_auto)
    f.beta_max = gsf::filter::choose_beta_max(
        full, u_star, f.gB, p.cfg.filter.u_limit,
        p.cfg.synthesis.box_for(full.state), 10000, p.seed);
  else
    f.beta_max = p.cfg.filter.beta_max;
  return f;
}

gsf::sim::Model load_model(const Pipeline& p, bool with_filters) {
  gsf::sim::Model model;
  model.dec = p.dec;
  model.boxes = boxes_for(p);
  for (int i = 0; i < int(p.dec.inverters.size()); ++i) {
    model.certs.push_back(load_cert(p, i));
    model.unsafe.push_back(unsafe_for(p, i));
    if (with_filters)
      model.filters.push_back(
          make_filter(p, i, model.certs[i], load_policy(p, i)));
  }
  return model;
}

int cmd_powerflow(const Cli& cli) {
  Pipeline p = setup(cli);
  json j;
  j["meta"] = meta(p);
  j["converged"] = p.pf.converged;
  j["iterations"] = p.pf.iterations;
  j["residual"] = p.pf.residual;
  j["original_buses"] = p.cfg.net.inverter_buses();
  j["theta"] = std::vector<double>(p.pf.theta.data(),
                                   p.pf.theta.data() + p.pf.theta.size());
  j["v"] = std::vector<double>(p.pf.v.data(), p.pf.v.data() + p.pf.v.size());
  j["P"] = std::vector<double>(p.pf.P.data(), p.pf.P.data() + p.pf.P.size());
  j["Q"] = std::vector<double>(p.pf.Q.data(), p.pf.Q.data() + p.pf.Q.size());
  write_json(p.out / "equilibrium.json", j);
  if (!p.pf.converged) {
    std::cerr << "power flow did not converge (residual "
              << p.pf.residual << ")\n";
    return 1;
  }
  std::cout << "power flow converged in " << p.pf.iterations
            << " iterations, residual " << p.pf.residual << "\n";
  for (int k = 0; k < p.pf.v.size(); ++k)
    std::cout << "  bus " << k << ": v = " << p.pf.v[k]
              << ", theta = " << p.pf.theta[k] << "\n";
  return 0;
}

int cmd_synth(const Cli& cli) {
  Pipeline p = setup(cli);
  if (!p.pf.converged) {
    std::cerr << "power flow did not converge; aborting synthesis\n";
    return 1;
  }
  const int m = int(p.dec.inverters.size());
  std::vector<barrier::BarrierCertificate> certs(m);
  std::vector<std::vector<Polynomial>> policies(m);
  std::vector<barrier::Box> boxes = boxes_for(p);
  bool ok = true;

  for (int i = 0; i < m; ++i) {
    const auto& inv = p.dec.inverters[i];
    barrier::SynthOptions so;
    so.degree = p.cfg.synthesis.degree;
    so.multiplier_degree = p.cfg.synthesis.multiplier_degree;
    so.kappa = p.cfg.synthesis.kappa;
    so.eps = p.cfg.synthesis.eps;
    so.box = boxes[i];
    so.template_vars = sub_state(inv);
    so.alternation.rounds = p.cfg.synthesis.rounds;

    std::cout << "inverter " << i << ": synthesizing barrier over "
              << int(so.template_vars.size()) << " variables... " << std::flush;
    barrier::SynthResult res =
        barrier::synth_isolated(inv.f, inv.state, unsafe_for(p, i), so);
    res.cert.c = p.cfg.synthesis.c;
    certs[i] = res.cert;
    std::cout << (res.found ? "found" : "FAILED") << " (margin "
              << res.alternation.margin << ", "
              << int(res.alternation.log.size()) << " rounds)\n";
    ok = ok && res.found;

    json jc;
    jc["meta"] = meta(p);
    jc["inverter"] = i;
    jc["found"] = res.found;
    jc["state"] = res.cert.state;
    jc["B"] = res.cert.B.to_string();
    jc["c"] = res.cert.c;
    jc["kappa"] = res.cert.kappa;
    jc["margin"] = res.alternation.margin;
    json recs = json::array();
    for (const auto& r : res.cert.records)
      recs.push_back({{"condition", r.condition},
                      {"passed", r.passed},
                      {"margin", r.margin},
                      {"note", r.note}});
    jc["records"] = recs;
    write_json(cert_path(p, i), jc);
  }
  if (!ok) {
    std::cerr << "barrier synthesis failed for at least one inverter\n";
    return 1;
  }

  gsf::rng::SplitMix64 root(p.seed);
  for (int i = 0; i < m; ++i) {
    barrier::PolicyOptions po;
    po.degree = p.cfg.synthesis.policy_degree;
    po.multiplier_degree = p.cfg.synthesis.multiplier_degree;
    po.seed = root.fork(uint64_t(i)).next();
    std::cout << "inverter " << i << ": synthesizing policy... " << std::flush;
    barrier::PolicyResult pr = barrier::synth_policy(certs, p.dec, i, boxes, po);
    policies[i] = pr.u;
    std::cout << "u_bar = " << pr.u_bar
              << (pr.fallback ? " (closed-form fallback)" : "") << "\n";

    json jp;
    jp["meta"] = meta(p);
    jp["inverter"] = i;
    jp["u_p"] = pr.u[0].to_string();
    jp["u_q"] = pr.u[1].to_string();
    jp["u_bar"] = pr.u_bar;
    jp["margin"] = pr.margin;
    jp["fallback"] = pr.fallback;
    jp["beta"] = pr.beta;
    jp["note"] = pr.note;
    write_json(policy_path(p, i), jp);
  }

  barrier::DistributedOptions dopts;
  dopts.seed = p.seed;
  std::cout << "verifying distributed invariance...\n";
  auto reports = barrier::verify_distributed(certs, p.dec, policies, boxes,
                                             dopts);
  json jv;
  jv["meta"] = meta(p);
  json arr = json::array();
  for (const auto& r : reports) {
    std::cout << "  inverter " << r.inverter << ": "
              << (r.pass ? "pass" : "FAIL")
              << (r.sos_certified ? " (SOS)" : " (sampled)") << ", margin "
              << r.margin << "\n";
    json cpl = json::object();
    for (const auto& [jn, v] : r.coupling_min) cpl[std::to_string(jn)] = v;
    arr.push_back({{"inverter", r.inverter},
                   {"pass", r.pass},
                   {"sos_certified", r.sos_certified},
                   {"sampling_fallback", r.sampling_fallback},
                   {"margin", r.margin},
                   {"coupling_min", cpl},
                   {"note", r.note}});
    ok = ok && r.pass;
  }
  jv["reports"] = arr;
  jv["all_pass"] = ok;
  write_json(p.out / "verification.json", jv);
  if (!ok) {
    std::cerr << "distributed verification failed\n";
    return 1;
  }
  std::cout << "wrote certificates, policies and verification to " << p.out
            << "\n";
  return 0;
}

int cmd_bounds(const Cli& cli) {
  Pipeline p = setup(cli);
  int i = cli.inverter >= 0 ? cli.inverter : p.cfg.bounds_grid.inverter;
  if (i < 0 || i >= int(p.dec.inverters.size()))
    throw std::runtime_error("bounds: inverter index out of range");
  auto cert = load_cert(p, i);
  auto filter = make_filter(p, i, cert, load_policy(p, i));
  const auto& gridcfg = p.cfg.bounds_grid;
  const auto& inv = p.dec.inverters[i];

  std::ostringstream os;
  os << csv_header(p) << "# inverter " << i << " beta_max "
     << filter.beta_max << " gamma " << filter.gamma << "\n"
     << "om,vm,B,R,ua_p,ut_p,ua_q,ut_q,no_guarantee,capped,zero_ok_p,zero_ok_q\n";
  // grid over the (om, vm) slice at th = 0
  int om_idx = -1, vm_idx = -1;
  for (int r = 0; r < inv.dim(); ++r) {
    if (inv.state[r].rfind("om", 0) == 0) om_idx = r;
    if (inv.state[r].rfind("vm", 0) == 0) vm_idx = r;
  }
  for (int a = 0; a < gridcfg.om_n; ++a)
    for (int b = 0; b < gridcfg.vm_n; ++b) {
      Eigen::VectorXd x = Eigen::VectorXd::Zero(inv.dim());
      x[om_idx] = gridcfg.om_range[0] +
                  (gridcfg.om_range[1] - gridcfg.om_range[0]) * a /
                      std::max(1, gridcfg.om_n - 1);
      x[vm_idx] = gridcfg.vm_range[0] +
                  (gridcfg.vm_range[1] - gridcfg.vm_range[0]) * b /
                      std::max(1, gridcfg.vm_n - 1);
      gsf::filter::Bounds bb = gsf::filter::bounds(filter, x);
      os << gsf::poly::format_double(x[om_idx]) << ','
         << gsf::poly::format_double(x[vm_idx]) << ','
         << gsf::poly::format_double(bb.B) << ','
         << gsf::poly::format_double(bb.R) << ','
         << gsf::poly::format_double(bb.u_alpha[0]) << ','
         << gsf::poly::format_double(bb.u_theta[0]) << ','
         << gsf::poly::format_double(bb.u_alpha[1]) << ','
         << gsf::poly::format_double(bb.u_theta[1]) << ','
         << int(bb.no_guarantee) << ',' << int(bb.capped) << ','
         << int(!bb.no_guarantee && bb.u_alpha[0] <= 0.0 && 0.0 <= bb.u_theta[0])
         << ','
         << int(!bb.no_guarantee && bb.u_alpha[1] <= 0.0 && 0.0 <= bb.u_theta[1])
         << '\n';
    }
  fs::path out = p.out / ("bounds_" + std::to_string(i) + ".csv");
  write_file(out, os.str());
  std::cout << "wrote " << out << " (" << gridcfg.om_n << "x" << gridcfg.vm_n
            << " grid, beta_max " << filter.beta_max << ")\n";
  return 0;
}

const gsf::sim::Scenario& pick_scenario(const Pipeline& p,
                                        const std::string& name) {
  auto it = p.cfg.scenarios.find(name);
  if (it == p.cfg.scenarios.end())
    throw std::runtime_error("scenario '" + name + "' is not defined");
  return it->second;
}

int cmd_simulate(const Cli& cli) {
  Pipeline p = setup(cli);
  gsf::sim::Scenario sc = pick_scenario(p, cli.scenario);
  if (cli.seed_set) sc.seed = cli.seed;
  gsf::sim::Model model =
      load_model(p, sc.filter == gsf::sim::FilterMode::On);

  gsf::sim::SimTrace tr = gsf::sim::integrate(model, sc);
  gsf::sim::RunStats st = gsf::sim::summarize(model, tr);

  fs::path trace_out = p.out / ("trace_" + cli.scenario + ".csv");
  write_file(trace_out, csv_header(p) + gsf::sim::trace_csv(tr, p.dec));

  json js;
  js["meta"] = meta(p);
  js["scenario"] = cli.scenario;
  js["scenario_seed"] = sc.seed;
  js["steps"] = tr.steps();
  js["violations"] = st.violations;
  js["min_barrier"] = st.min_barrier;
  js["filter_duty"] = st.filter_duty;
  js["blew_up"] = st.blew_up;
  js["trace_hash"] = hex64(tr.hash());
  write_json(p.out / ("summary_" + cli.scenario + ".json"), js);

  std::cout << "scenario " << cli.scenario << ": " << tr.steps() << " steps, "
            << st.violations << " unsafe steps, min barrier margin "
            << st.min_barrier << ", filter duty " << st.filter_duty << "\n";
  if (st.blew_up) {
    std::cerr << "trajectory left the blow-up ball; truncated\n";
    return 1;
  }
  return 0;
}

int cmd_sweep(const Cli& cli) {
  Pipeline p = setup(cli);
  std::string name = !cli.scenario.empty() ? cli.scenario
                                           : p.cfg.sweep.scenario;
  gsf::sim::Scenario sc = pick_scenario(p, name);
  if (cli.seed_set) sc.seed = cli.seed;
  gsf::sim::Model model =
      load_model(p, sc.filter == gsf::sim::FilterMode::On);

  gsf::sim::MonteCarloResult mc =
      gsf::sim::monte_carlo(model, sc, p.cfg.sweep.runs);
  fs::path out = p.out / ("sweep_" + name + ".csv");
  write_file(out, csv_header(p) + mc.csv());

  double worst = 0.0;
  for (const auto& r : mc.runs) worst = std::min(worst, r.min_barrier);
  json js;
  js["meta"] = meta(p);
  js["scenario"] = name;
  js["runs"] = int(mc.runs.size());
  js["runs_with_violation"] = mc.runs_with_violation;
  js["worst_min_barrier"] = worst;
  write_json(p.out / ("sweep_" + name + ".json"), js);

  std::cout << "sweep " << name << ": " << mc.runs.size() << " runs, "
            << mc.runs_with_violation << " with violations, worst barrier "
            << "margin " << worst << "\n";
  return 0;
}

int cmd_export_plots(const Cli& cli) {
  Pipeline p = setup(cli);
  int i = cli.inverter >= 0 ? cli.inverter : p.cfg.bounds_grid.inverter;

  // the scripts run from inside the output directory: gnuplot <name>.gp
  std::string trace = "set datafile separator ','\n"
      "set datafile commentschars '#'\n"
      "set key autotitle columnhead\n"
      "set xlabel 't [s]'\n"
      "set terminal pngcairo size 1000,700\n";
  for (const auto& [name, _] : p.cfg.scenarios) {
    std::string body = trace;
    body += "set output 'trace_" + name + ".png'\n";
    body += "set multiplot layout 2,1\n";
    body += "set ylabel 'voltage deviation'\n";
    body += "plot for [i=0:3] 'trace_" + name +
            ".csv' using 1:($2==i?$5:1/0) with lines title sprintf('v_%d',i), "
            "-0.4 with lines dt 2 lc 'red' notitle, "
            "0.2 with lines dt 2 lc 'red' notitle\n";
    body += "set ylabel 'barrier value'\n";
    body += "plot for [i=0:3] 'trace_" + name +
            ".csv' using 1:($2==i?$6:1/0) with lines title sprintf('B_%d',i)\n";
    body += "unset multiplot\n";
    write_file(p.out / ("plot_trace_" + name + ".gp"), body);
  }

  std::string bounds = "set datafile separator ','\n"
      "set datafile commentschars '#'\n"
      "set terminal pngcairo size 1200,500\n"
      "set output 'bounds_" + std::to_string(i) + ".png'\n"
      "set multiplot layout 1,2\n"
      "set xlabel 'omega'\nset ylabel 'v'\n"
      "set title 'admissible width, q channel'\n"
      "plot 'bounds_" + std::to_string(i) + ".csv' skip 3 using 1:2:($8-$7) "
      "with image notitle\n"
      "set title 'zero input admissible (q)'\n"
      "plot 'bounds_" + std::to_string(i) + ".csv' skip 3 using 1:2:12 "
      "with image notitle\n"
      "unset multiplot\n";
  write_file(p.out / ("plot_bounds_" + std::to_string(i) + ".gp"), bounds);

  std::string sweep_name =
      !cli.scenario.empty() ? cli.scenario : p.cfg.sweep.scenario;
  if (!sweep_name.empty()) {
    std::string sw = "set datafile separator ','\n"
        "set datafile commentschars '#'\n"
        "set key autotitle columnhead\n"
        "set terminal pngcairo size 800,600\n"
        "set output 'sweep_" + sweep_name + ".png'\n"
        "set xlabel 'run'\nset ylabel 'min barrier margin'\n"
        "plot 'sweep_" + sweep_name + ".csv' using 0:3 with points pt 7 "
        "title 'min B - c per run', 0 with lines dt 2 lc 'red' notitle\n";
    write_file(p.out / ("plot_sweep_" + sweep_name + ".gp"), sw);
  }
  std::cout << "wrote gnuplot scripts to " << p.out
            << " (run them from inside that directory)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"barrier-certificate safety filters for droop-controlled "
               "microgrids"};
  app.require_subcommand(1);

  Cli cli;
  app.add_option("--config", cli.config_path, "project config (JSON)")
      ->required();
  app.add_option("--seed", cli.seed, "override the pipeline seed");
  app.add_option("--out", cli.out_override, "override the output directory");
  app.add_option("--inverter", cli.inverter, "inverter index");
  app.add_option("--beta", cli.beta, "override filter beta_max");
  app.add_option("--gamma", cli.gamma, "override filter gamma");

  auto* pf = app.add_subcommand("powerflow", "solve for the equilibrium");
  auto* sy = app.add_subcommand("synth",
                                "synthesize certificates and policies");
  auto* bo = app.add_subcommand("bounds", "tabulate safe-input bounds");
  auto* si = app.add_subcommand("simulate", "integrate one scenario");
  si->add_option("--scenario", cli.scenario, "scenario name")->required();
  auto* sw = app.add_subcommand("sweep", "randomized scenario sweep");
  sw->add_option("--scenario", cli.scenario, "scenario name");
  auto* ep = app.add_subcommand("export-plots", "write gnuplot scripts");
  ep->add_option("--scenario", cli.scenario, "scenario name");

  try {
    app.parse(argc, argv);
    cli.seed_set = app.count("--seed") > 0;
    if (pf->parsed()) return cmd_powerflow(cli);
    if (sy->parsed()) return cmd_synth(cli);
    if (bo->parsed()) return cmd_bounds(cli);
    if (si->parsed()) return cmd_simulate(cli);
    if (sw->parsed()) return cmd_sweep(cli);
    if (ep->parsed()) return cmd_export_plots(cli);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? 2 : 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
