// tlc: event-driven fluid traffic simulator with exact per-parameter
// sample-path gradients and an online signal-timing optimizer.

#include <chrono>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "tlc/io.hpp"

namespace fs = std::filesystem;
using namespace tlc;

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    out.push_back(std::stoull(s.substr(pos, next - pos)));
    pos = next + 1;
  }
  if (out.empty()) throw ScenarioError("seed list is empty");
  return out;
}

int worker_count(std::size_t tasks) {
  int w = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("TLC_WORKERS")) w = std::max(1, std::atoi(env));
  return std::max(1, std::min<int>(w, static_cast<int>(tasks)));
}

// Run one job per index on a small worker pool; jobs may throw. Results are
// collected in index order so output is deterministic regardless of timing.
void run_pool(std::size_t n, const std::function<void(std::size_t)>& job) {
  const int workers = worker_count(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::vector<std::exception_ptr> errs(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try { job(i); } catch (...) { errs[i] = std::current_exception(); }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

struct CommonOpts {
  std::string scenario;
  std::string seed_list = "1";
  double horizon = -1;    // <0: take from scenario
  std::string out = "out";
};

void add_common(CLI::App* cmd, CommonOpts& o, bool need_scenario = true) {
  auto* s = cmd->add_option("--scenario", o.scenario, "scenario JSON file");
  if (need_scenario) s->required();
  cmd->add_option("--seed", o.seed_list, "seed or comma-separated seed list");
  cmd->add_option("--horizon", o.horizon, "simulation horizon in seconds");
  cmd->add_option("--out", o.out, "output directory");
}

double horizon_of(const CommonOpts& o, const Scenario& s) {
  return o.horizon > 0 ? o.horizon : s.sim.horizon;
}

SimEngine make_engine(const Scenario& s, std::uint64_t seed, double horizon,
                      EngineConfig cfg, const Perturbation* pert = nullptr,
                      const ControllerSetup* ctrl = nullptr) {
  return SimEngine(s.net, ctrl ? *ctrl : s.make_controller(),
                   s.make_arrivals(seed, horizon, pert), cfg);
}

struct OptRunOut {
  std::vector<IterationRecord> history;
  bool diverged = false;
  std::uint64_t hash = 0;
};

OptRunOut run_optimize(const Scenario& s, std::uint64_t seed, double horizon,
                       const OptimizerConfig& ocfg, bool freeze,
                       const Perturbation* pert = nullptr,
                       const ControllerSetup* ctrl = nullptr) {
  EngineConfig cfg = s.make_engine_config();
  cfg.ipa = !freeze || (ctrl == nullptr);
  if (ctrl && ctrl->type == CtrlType::Webster) cfg.ipa = false;
  SimEngine eng = make_engine(s, seed, horizon, cfg, pert, ctrl);
  OptRunOut r;
  auto res = online_optimize(eng, horizon, ocfg, freeze);
  r.history = std::move(res.history);
  r.diverged = res.diverged;
  r.hash = eng.log_hash();
  return r;
}

double tail_mean_wait(const std::vector<IterationRecord>& h, std::size_t tail = 5) {
  if (h.empty()) return 0;
  std::size_t n = std::min(tail, h.size());
  double s = 0;
  for (std::size_t i = h.size() - n; i < h.size(); ++i) s += h[i].wait;
  return s / n;
}

// ---- simulate --------------------------------------------------------------

int cmd_simulate(const CommonOpts& o, bool with_traj) {
  Scenario s = load_scenario(o.scenario);
  double T = horizon_of(o, s);
  auto seeds = parse_seeds(o.seed_list);

  std::vector<MetricsReport> reports(seeds.size());
  run_pool(seeds.size(), [&](std::size_t i) {
    EngineConfig cfg = s.make_engine_config();
    cfg.record_log = true;
    cfg.record_traj = with_traj;
    cfg.invariant_checks = true;
    SimEngine eng = make_engine(s, seeds[i], T, cfg);
    eng.run_until(T);
    if (eng.invariant_violations() > 0)
      throw SimAbort("invariant violations detected: " +
                     std::to_string(eng.invariant_violations()));
    MetricsReport m = collect_metrics(s.net, eng, T);
    reports[i] = m;
    std::string tag = "_seed" + std::to_string(seeds[i]);
    write_event_log_csv(fs::path(o.out) / ("events" + tag + ".csv"), eng.log());
    if (with_traj)
      write_trajectory_csv(fs::path(o.out) / ("trajectory" + tag + ".csv"), eng.trajectory());
    json jm = metrics_json(s.net, m, eng.totals());
    jm["seed"] = seeds[i];
    jm["max_conservation_residual"] = max_conservation_residual(eng.totals());
    open_out(fs::path(o.out) / ("metrics" + tag + ".json")) << jm.dump(2) << '\n';
  });

  for (std::size_t i = 0; i < seeds.size(); ++i)
    std::cout << "seed " << seeds[i] << ": cost=" << fmt(reports[i].mean_queue_cost)
              << " wait=" << fmt(reports[i].mean_waiting_time)
              << " events=" << reports[i].events << " hash=" << reports[i].log_hash << "\n";
  return 0;
}

// ---- optimize --------------------------------------------------------------

int cmd_optimize(const CommonOpts& o, const OptimizerConfig& ocfg, bool freeze) {
  Scenario s = load_scenario(o.scenario);
  if (s.ctrl_type != CtrlType::Adaptive)
    throw ScenarioError("optimize requires controller.type = ipa-adaptive");
  double T = horizon_of(o, s);
  auto seeds = parse_seeds(o.seed_list);

  std::vector<OptRunOut> runs(seeds.size());
  run_pool(seeds.size(), [&](std::size_t i) {
    runs[i] = run_optimize(s, seeds[i], T, ocfg, freeze);
  });

  double first = 0, last = 0;
  bool any_div = false;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const auto& h = runs[i].history;
    std::string tag = "_seed" + std::to_string(seeds[i]);
    write_history_csv(fs::path(o.out) / ("history" + tag + ".csv"), s.net, h);
    json jg = json::array();
    for (const auto& rec : h) jg.push_back(gradient_json(s.net, rec.window, rec.grad));
    open_out(fs::path(o.out) / ("gradients" + tag + ".json")) << jg.dump(2) << '\n';
    if (!h.empty()) {
      first += h.front().wait;
      last += tail_mean_wait(h);
    }
    any_div = any_div || runs[i].diverged;
  }
  first /= seeds.size();
  last /= seeds.size();

  json summary;
  summary["seeds"] = seeds;
  summary["windows"] = runs[0].history.size();
  summary["first_window_wait"] = first;
  summary["final_wait_tail5"] = last;
  summary["reduction"] = first > 0 ? 1.0 - last / first : 0.0;
  summary["diverged"] = any_div;
  open_out(fs::path(o.out) / "summary.json") << summary.dump(2) << '\n';
  std::cout << "wait " << fmt(first) << " -> " << fmt(last) << "  (reduction "
            << fmt(100.0 * summary["reduction"].get<double>()) << "%)\n";
  return any_div ? 2 : 0;
}

// ---- compare-webster -------------------------------------------------------

int cmd_compare_webster(const CommonOpts& o, const OptimizerConfig& ocfg) {
  Scenario s = load_scenario(o.scenario);
  double T = horizon_of(o, s);
  auto seeds = parse_seeds(o.seed_list);

  ControllerSetup webster;
  std::string webster_err;
  try {
    Scenario sw = s;
    sw.ctrl_type = CtrlType::Webster;
    webster = sw.make_controller();
  } catch (const std::exception& e) {
    webster_err = e.what();
  }

  struct Pair { OptRunOut adaptive, fixed; };
  std::vector<Pair> runs(seeds.size());
  run_pool(seeds.size(), [&](std::size_t i) {
    // common random numbers: identical exogenous traces feed both runs
    runs[i].adaptive = run_optimize(s, seeds[i], T, ocfg, false);
    if (webster_err.empty())
      runs[i].fixed = run_optimize(s, seeds[i], T, ocfg, true, nullptr, &webster);
  });

  json summary;
  summary["seeds"] = seeds;
  if (!webster_err.empty()) summary["webster_error"] = webster_err;
  json per = json::array();
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    auto out = open_out(fs::path(o.out) / ("paired_seed" + std::to_string(seeds[i]) + ".csv"));
    out << "window,t_end,adaptive_cost,adaptive_wait,webster_cost,webster_wait\n";
    const auto& a = runs[i].adaptive.history;
    const auto& w = runs[i].fixed.history;
    for (std::size_t k = 0; k < a.size(); ++k) {
      out << a[k].window << ',' << fmt(a[k].t_end) << ',' << fmt(a[k].cost) << ','
          << fmt(a[k].wait) << ',';
      if (k < w.size()) out << fmt(w[k].cost) << ',' << fmt(w[k].wait) << '\n';
      else out << ",\n";
    }
    json e;
    e["seed"] = seeds[i];
    e["adaptive_final_wait"] = tail_mean_wait(a);
    e["webster_final_wait"] = tail_mean_wait(w);
    e["adaptive_below_webster"] = !w.empty() && tail_mean_wait(a) < tail_mean_wait(w);
    per.push_back(e);
    std::cout << "seed " << seeds[i] << ": adaptive=" << fmt(tail_mean_wait(a))
              << " webster=" << (w.empty() ? "n/a" : fmt(tail_mean_wait(w))) << "\n";
  }
  summary["runs"] = per;
  open_out(fs::path(o.out) / "summary.json") << summary.dump(2) << '\n';
  return 0;
}

// ---- adapt -----------------------------------------------------------------

int cmd_adapt(const CommonOpts& o, const OptimizerConfig& ocfg, std::string group,
              double factor, double t_on, double t_off) {
  Scenario s = load_scenario(o.scenario);
  if (s.ctrl_type != CtrlType::Adaptive)
    throw ScenarioError("adapt requires controller.type = ipa-adaptive");
  double T = horizon_of(o, s);
  if (t_off < 0) t_off = T;
  if (!(t_on < t_off)) throw ScenarioError("adapt: need t_on < t_off");
  Perturbation pert;
  pert.active = true;
  pert.group = group == "rr" ? 0 : group == "rc" ? 1 : group == "cr" ? 2 : group == "cc" ? 3 : -1;
  if (pert.group < 0) throw ScenarioError("adapt: group must be rr/rc/cr/cc");
  pert.factor = factor;
  pert.t_on = t_on;
  pert.t_off = t_off;

  auto seeds = parse_seeds(o.seed_list);
  std::vector<OptRunOut> runs(seeds.size());
  run_pool(seeds.size(), [&](std::size_t i) {
    runs[i] = run_optimize(s, seeds[i], T, ocfg, false, &pert);
  });

  json summary;
  summary["seeds"] = seeds;
  summary["perturbation"] = {{"group", group}, {"factor", factor},
                             {"t_on", t_on}, {"t_off", t_off}};
  summary["no_recovery_segment"] = t_off >= T;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    write_history_csv(
        fs::path(o.out) / ("history_seed" + std::to_string(seeds[i]) + ".csv"), s.net,
        runs[i].history,
        [&](const IterationRecord& r) {
          bool on = r.t_end > t_on && r.t_end - ocfg.window < t_off;
          return std::string(on ? "1" : "0");
        },
        "perturbed");
  }
  open_out(fs::path(o.out) / "summary.json") << summary.dump(2) << '\n';
  std::cout << "adapt histories written to " << o.out << "\n";
  return 0;
}

// ---- benchmark -------------------------------------------------------------

int cmd_benchmark(const CommonOpts& o, int rows, const std::string& cols_list) {
  auto seeds = parse_seeds(o.seed_list);
  std::vector<std::uint64_t> cols;
  for (auto c : parse_seeds(cols_list)) cols.push_back(c);

  // demand/controller defaults come from the scenario when given
  OdGroups groups{0.02, 0.01, 0.01, 0.01};
  SimSettings sim;
  sim.horizon = 2000;
  std::vector<double> theta0 = {20, 40, 10};
  if (!o.scenario.empty()) {
    Scenario s = load_scenario(o.scenario);
    sim = s.sim;
    if (!s.theta.empty())
      theta0 = {s.theta[0].theta_min, s.theta[0].theta_max, s.theta[0].s};
    if (!s.flows.empty()) {
      // recover group rates from any representative flow of each group
      groups = OdGroups{};
      for (const auto& f : s.flows) {
        double* slot[] = {&groups.rr, &groups.rc, &groups.cr, &groups.cc};
        *slot[od_group_index(f)] = f.rate;
      }
    }
  }
  double T = o.horizon > 0 ? o.horizon : sim.horizon;

  struct Row { int n; std::uint64_t seed; double with_s, without_s, ipa_s; std::uint64_t events; };
  std::vector<Row> rows_out;
  auto out = open_out(fs::path(o.out) / "benchmark.csv");
  out << "rows,cols,seed,seconds_with_ipa,seconds_without_ipa,ipa_seconds,events\n";

  auto timed_run = [&](const Scenario& s, std::uint64_t seed, bool ipa,
                       std::uint64_t* events) {
    EngineConfig cfg = s.make_engine_config();
    cfg.ipa = ipa;
    SimEngine eng = make_engine(s, seed, T, cfg);
    auto t0 = std::chrono::steady_clock::now();
    // exercise the full per-window gradient path, not just the simulation
    long windows = std::max(1l, static_cast<long>(T / 1000));
    for (long l = 1; l <= windows; ++l) {
      eng.run_until(T * static_cast<double>(l) / windows);
      eng.finalize_window();
    }
    auto t1 = std::chrono::steady_clock::now();
    if (events) *events = eng.events_processed();
    return std::chrono::duration<double>(t1 - t0).count();
  };

  for (auto nc : cols) {
    json jg;
    jg["grid"] = {{"rows", rows}, {"cols", nc}};
    jg["demand"] = {{"groups", {{"rr", groups.rr}, {"rc", groups.rc},
                                {"cr", groups.cr}, {"cc", groups.cc}}}};
    jg["controller"] = {{"type", "ipa-adaptive"}, {"theta", theta0}};
    jg["sim"] = {{"horizon", T}, {"vehicle_length", sim.vehicle_length},
                 {"speed", sim.speed}, {"departure_rate", sim.departure_rate},
                 {"bin_width", sim.bin_width}};
    Scenario s = build_scenario(jg);
    for (auto seed : seeds) {
      std::uint64_t events = 0;
      double w = timed_run(s, seed, true, &events);
      double wo = timed_run(s, seed, false, nullptr);
      Row r{static_cast<int>(nc), seed, w, wo, std::max(0.0, w - wo), events};
      rows_out.push_back(r);
      out << rows << ',' << nc << ',' << seed << ',' << fmt(w) << ',' << fmt(wo) << ','
          << fmt(r.ipa_s) << ',' << events << '\n';
      out.flush();
      std::cout << "grid " << rows << "x" << nc << " seed " << seed << ": with=" << fmt(w)
                << "s without=" << fmt(wo) << "s ipa=" << fmt(r.ipa_s) << "s events=" << events
                << "\n";
    }
  }

  // fit mean IPA time per column count
  std::vector<double> xs, ys, es;
  for (auto nc : cols) {
    double t = 0, ev = 0;
    int k = 0;
    for (const auto& r : rows_out)
      if (r.n == static_cast<int>(nc)) { t += r.ipa_s; ev += static_cast<double>(r.events); ++k; }
    xs.push_back(static_cast<double>(nc));
    ys.push_back(t / k);
    es.push_back(ev / k);
  }
  auto [slope, icpt, r2] = linear_fit(xs, ys);
  auto [eslope, eicpt, er2] = linear_fit(xs, es);
  json summary;
  summary["rows"] = rows;
  summary["ipa_time_fit"] = {{"slope", slope}, {"intercept", icpt}, {"r_squared", r2}};
  summary["events_fit"] = {{"slope", eslope}, {"intercept", eicpt}, {"r_squared", er2}};
  open_out(fs::path(o.out) / "summary.json") << summary.dump(2) << '\n';
  std::cout << "ipa time vs cols: slope=" << fmt(slope) << " r2=" << fmt(r2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event-driven fluid traffic simulator with exact signal-timing gradients"};
  app.require_subcommand(1);

  CommonOpts so, oo, wo, ao, bo;
  bool with_traj = true;
  OptimizerConfig ocfg;
  bool freeze = false;
  std::string group = "rc";
  double factor = 2.0, t_on = 8000.0, t_off = -1.0;
  int bm_rows = 2;
  std::string bm_cols = "2,3,4,5,6,7,8,9,10";

  auto* sim = app.add_subcommand("simulate", "run one simulation per seed, export traces");
  add_common(sim, so);
  sim->add_flag("--traj,!--no-traj", with_traj, "write trajectory CSV");

  auto add_opt_flags = [&](CLI::App* c) {
    c->add_option("--window", ocfg.window, "gradient window length (s)");
    c->add_option("--rho-time", ocfg.rho0_time, "base step size for clock bounds");
    c->add_option("--rho-thresh", ocfg.rho0_thresh, "base step size for thresholds");
  };
  auto* opt = app.add_subcommand("optimize", "online gradient descent on the signal parameters");
  add_common(opt, oo);
  add_opt_flags(opt);
  opt->add_flag("--freeze", freeze, "evaluate only, no parameter updates");

  auto* cw = app.add_subcommand("compare-webster", "paired adaptive vs fixed-cycle runs");
  add_common(cw, wo);
  add_opt_flags(cw);

  auto* ad = app.add_subcommand("adapt", "optimize through a demand perturbation");
  add_common(ad, ao);
  add_opt_flags(ad);
  ad->add_option("--group", group, "OD group to perturb (rr/rc/cr/cc)");
  ad->add_option("--factor", factor, "rate multiplier during the perturbation");
  ad->add_option("--t-on", t_on, "perturbation start (s)");
  ad->add_option("--t-off", t_off, "perturbation end (s); default: horizon");

  auto* bm = app.add_subcommand("benchmark", "gradient-update cost vs grid size");
  add_common(bm, bo, false);
  bm->add_option("--rows", bm_rows, "grid rows (fixed)");
  bm->add_option("--cols", bm_cols, "comma-separated list of column counts");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(so, with_traj);
    if (opt->parsed()) return cmd_optimize(oo, ocfg, freeze);
    if (cw->parsed()) return cmd_compare_webster(wo, ocfg);
    if (ad->parsed()) return cmd_adapt(ao, ocfg, group, factor, t_on, t_off);
    if (bm->parsed()) return cmd_benchmark(bo, bm_rows, bm_cols);
  } catch (const ScenarioError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const SimAbort& e) {
    std::cerr << "runtime diagnostic: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
