#pragma once

#include <fstream>

#include <json.hpp>

#include "tlc/optimizer.hpp"

namespace tlc {

using nlohmann::json;

// Scenario validation problem: maps to CLI exit code 1.
struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SimSettings {
  double horizon = 10000.0;
  std::uint64_t seed = 1;
  double vehicle_length = 5.0;
  double speed = 10.0;
  double departure_rate = 1.3;   // H
  double bin_width = 50.0;       // Poisson demand bin t_w
};

struct Scenario {
  NetworkSpec net;
  std::optional<GridLayout> layout;
  RoutedDemand demand;               // turn ratios + per-queue mean flow
  std::vector<OdFlow> flows;         // grid OD flows (empty for explicit nets)
  std::vector<std::pair<QueueId, double>> entry_rates;  // explicit-net demand
  std::string demand_mode = "poisson";
  Perturbation pert;
  CtrlType ctrl_type = CtrlType::Adaptive;
  std::vector<PhaseParams> theta;
  SimSettings sim;

  ArrivalProcess make_arrivals(std::uint64_t seed, double horizon,
                               const Perturbation* pert_override = nullptr) const {
    const Perturbation& p = pert_override ? *pert_override : pert;
    if (!flows.empty()) {
      if (demand_mode == "constant")
        return constant_rate_traces(net, demand, flows, horizon, p);
      return poisson_rate_trace(net, demand, flows, sim.bin_width, horizon, seed, p);
    }
    // explicit network: per-entry constant or Poisson-binned rates
    if (demand_mode == "constant") {
      ArrivalProcess a = ArrivalProcess::zeros(net.num_queues());
      for (auto [q, r] : entry_rates) {
        a.traces[q].times = {0.0};
        a.traces[q].rates = {r};
      }
      return a;
    }
    ArrivalProcess a = ArrivalProcess::zeros(net.num_queues());
    for (std::size_t i = 0; i < entry_rates.size(); ++i) {
      auto [q, r] = entry_rates[i];
      std::seed_seq sq{seed, static_cast<std::uint64_t>(i) + 1};
      std::mt19937_64 rng(sq);
      RateTrace& tr = a.traces[q];
      std::size_t nbins = static_cast<std::size_t>(std::ceil(horizon / sim.bin_width));
      double last = -1;
      for (std::size_t b = 0; b < nbins; ++b) {
        std::poisson_distribution<long> pois(r * sim.bin_width);
        double rate = static_cast<double>(pois(rng)) / sim.bin_width;
        if (rate != last) {
          tr.times.push_back(b * sim.bin_width);
          tr.rates.push_back(rate);
          last = rate;
        }
      }
      if (tr.times.empty()) { tr.times = {0.0}; tr.rates = {0.0}; }
    }
    return a;
  }

  // Mean flow through each queue, used for Webster critical-flow ratios.
  std::vector<double> mean_queue_flow() const {
    if (!demand.queue_flow.empty()) return demand.queue_flow;
    // explicit network: push entry rates through the turn ratio table
    std::vector<double> flow(net.num_queues(), 0.0);
    for (int iter = 0; iter < 64; ++iter) {
      std::vector<double> nxt(net.num_queues(), 0.0);
      for (auto [q, r] : entry_rates) nxt[q] += r;
      for (std::size_t q = 0; q < net.num_queues(); ++q)
        for (const auto& [d, g] : net.turn.ratios[q]) nxt[d] += flow[q] * g;
      double diff = 0;
      for (std::size_t q = 0; q < net.num_queues(); ++q) diff += std::abs(nxt[q] - flow[q]);
      flow.swap(nxt);
      if (diff < 1e-12) break;
    }
    return flow;
  }

  ControllerSetup make_controller() const {
    ControllerSetup c;
    c.type = ctrl_type;
    if (ctrl_type == CtrlType::Adaptive) {
      c.theta = theta;
      return c;
    }
    std::vector<double> flow = mean_queue_flow();
    c.webster_duration.assign(net.num_phases(), 0.0);
    c.theta.assign(net.num_phases(), PhaseParams{});
    for (const auto& node : net.nodes) {
      std::vector<double> crit;
      for (PhaseId p : node.phases) {
        double f = 0;
        for (QueueId q : net.phases[p].queues) f = std::max(f, flow[q]);
        crit.push_back(f);
      }
      WebsterPlan plan = webster_plan(crit, sim.departure_rate);
      for (std::size_t i = 0; i < node.phases.size(); ++i)
        c.webster_duration[node.phases[i]] = plan.greens[i] + plan.lost_time;
    }
    return c;
  }

  EngineConfig make_engine_config() const {
    EngineConfig cfg;
    cfg.vehicle_len = sim.vehicle_length;
    cfg.H = sim.departure_rate;
    return cfg;
  }
};

namespace detail {

inline Orientation parse_orientation(const std::string& s) {
  if (s == "E" || s == "east") return Orientation::East;
  if (s == "S" || s == "south") return Orientation::South;
  if (s == "W" || s == "west") return Orientation::West;
  if (s == "N" || s == "north") return Orientation::North;
  throw ScenarioError("unknown orientation '" + s + "'");
}

inline TurnDir parse_turn(const std::string& s) {
  if (s == "straight") return TurnDir::Straight;
  if (s == "left") return TurnDir::Left;
  if (s == "right") return TurnDir::Right;
  throw ScenarioError("unknown turn direction '" + s + "'");
}

inline std::vector<PhaseParams> parse_theta(const json& j, std::size_t nphases) {
  std::vector<PhaseParams> th(nphases);
  if (j.is_null()) return th;
  auto one = [](const json& t) {
    if (!t.is_array() || t.size() != 3)
      throw ScenarioError("controller.theta entries must be [theta_min, theta_max, s]");
    return PhaseParams{t[0].get<double>(), t[1].get<double>(), t[2].get<double>()};
  };
  if (j.is_array() && !j.empty() && j[0].is_array()) {
    if (j.size() != nphases)
      throw ScenarioError("controller.theta has " + std::to_string(j.size()) +
                          " entries for " + std::to_string(nphases) + " phases");
    for (std::size_t i = 0; i < nphases; ++i) th[i] = one(j[i]);
  } else {
    PhaseParams p = one(j);
    th.assign(nphases, p);
  }
  for (const auto& p : th)
    if (!p.feasible()) throw ScenarioError("controller.theta outside the feasible set");
  return th;
}

inline NetworkSpec parse_explicit_network(const json& jn) {
  NetworkSpec net;
  for (const auto& jq : jn.at("queues")) {
    Queue q;
    q.id = static_cast<QueueId>(net.queues.size());
    q.name = jq.value("name", "q" + std::to_string(q.id));
    q.node = jq.at("node").get<NodeId>();
    q.capacity = jq.value("capacity", -1.0);
    if (q.capacity < 0) q.capacity = kInfCapacity;
    q.length = jq.value("length", 300.0);
    q.weight = jq.value("weight", 1.0);
    q.speed = jq.value("speed", 10.0);
    if (jq.contains("movements"))
      for (const auto& jm : jq["movements"])
        q.movements.push_back({parse_orientation(jm.at("origin").get<std::string>()),
                               parse_turn(jm.at("dir").get<std::string>()),
                               jm.value("controllable", true)});
    if (jq.contains("downstream"))
      for (const auto& d : jq["downstream"]) q.downstream.push_back(d.get<QueueId>());
    net.queues.push_back(std::move(q));
  }
  int nnodes = 0;
  for (const auto& q : net.queues) nnodes = std::max(nnodes, q.node + 1);
  net.nodes.resize(nnodes);
  for (int n = 0; n < nnodes; ++n) net.nodes[n].id = n;
  for (const auto& q : net.queues) net.nodes[q.node].queues.push_back(q.id);
  for (const auto& jp : jn.at("phases")) {
    Phase p;
    p.id = static_cast<PhaseId>(net.phases.size());
    p.node = jp.at("node").get<NodeId>();
    for (const auto& q : jp.at("queues")) p.queues.push_back(q.get<QueueId>());
    if (p.node < 0 || p.node >= nnodes) throw ScenarioError("phase references unknown intersection");
    net.nodes[p.node].phases.push_back(p.id);
    net.phases.push_back(std::move(p));
  }
  net.finalize();
  if (jn.contains("turn_ratios")) {
    const json& jt = jn["turn_ratios"];
    for (std::size_t q = 0; q < net.num_queues(); ++q) {
      std::string key = std::to_string(q);
      if (!jt.contains(key)) continue;
      double sink = 0.0;
      for (auto it = jt[key].begin(); it != jt[key].end(); ++it) {
        if (it.key() == "sink") {
          sink = it.value().get<double>();
          continue;
        }
        QueueId d = std::stoi(it.key());
        net.turn.ratios[q][d] = it.value().get<double>();
      }
      // the share leaving the network must be declared explicitly; rows that
      // silently leak flow mid-network are caught by validate()
      net.turn.sink_share[q] = sink;
    }
  }
  return net;
}

}  // namespace detail

inline Scenario build_scenario(const json& j) {
  Scenario s;
  if (j.contains("grid") == j.contains("network"))
    throw ScenarioError("scenario needs exactly one of 'grid' or 'network'");

  // sim settings first: speed feeds the grid template
  if (j.contains("sim")) {
    const json& js = j["sim"];
    s.sim.horizon = js.value("horizon", s.sim.horizon);
    s.sim.seed = js.value("seed", s.sim.seed);
    s.sim.vehicle_length = js.value("vehicle_length", s.sim.vehicle_length);
    s.sim.speed = js.value("speed", s.sim.speed);
    s.sim.departure_rate = js.value("departure_rate", s.sim.departure_rate);
    s.sim.bin_width = js.value("bin_width", s.sim.bin_width);
  }
  if (!(s.sim.horizon > 0)) throw ScenarioError("sim.horizon must be > 0");
  if (!(s.sim.vehicle_length > 0) || !(s.sim.speed > 0) || !(s.sim.departure_rate > 0))
    throw ScenarioError("sim.vehicle_length, sim.speed, sim.departure_rate must be > 0");

  const json& jd = j.contains("demand") ? j["demand"] : json::object();
  s.demand_mode = jd.value("mode", std::string("poisson"));
  if (s.demand_mode != "poisson" && s.demand_mode != "constant")
    throw ScenarioError("demand.mode must be 'poisson' or 'constant'");

  if (j.contains("grid")) {
    const json& jg = j["grid"];
    GridTemplate tmpl;
    tmpl.capacity = jg.value("capacity", tmpl.capacity);
    tmpl.speed = s.sim.speed;
    tmpl.weight = jg.value("weight", tmpl.weight);
    GridNetwork g = grid_network(jg.value("rows", 2), jg.value("cols", 3),
                                 jg.value("road_length", 300.0), tmpl);
    s.net = std::move(g.spec);
    s.layout = std::move(g.layout);

    OdGroups groups;
    if (jd.contains("groups")) {
      const json& gg = jd["groups"];
      groups.rr = gg.value("rr", 0.0);
      groups.rc = gg.value("rc", 0.0);
      groups.cr = gg.value("cr", 0.0);
      groups.cc = gg.value("cc", 0.0);
    }
    s.flows = expand_od_groups(*s.layout, groups);
    if (!s.flows.empty()) {
      s.demand = derive_turn_ratios(*s.layout, s.net, s.flows);
      s.net.turn = s.demand.turn;
    }
  } else {
    s.net = detail::parse_explicit_network(j["network"]);
    if (jd.contains("entry_rates")) {
      for (auto it = jd["entry_rates"].begin(); it != jd["entry_rates"].end(); ++it) {
        QueueId q = -1;
        for (const auto& qq : s.net.queues)
          if (qq.name == it.key()) q = qq.id;
        if (q < 0) {
          try { q = std::stoi(it.key()); } catch (...) {}
        }
        if (q < 0 || q >= static_cast<QueueId>(s.net.num_queues()))
          throw ScenarioError("demand.entry_rates: unknown queue '" + it.key() + "'");
        s.entry_rates.push_back({q, it.value().get<double>()});
      }
      std::sort(s.entry_rates.begin(), s.entry_rates.end());
    }
  }

  if (jd.contains("perturbation")) {
    const json& jp = jd["perturbation"];
    s.pert.active = true;
    std::string g = jp.value("group", std::string("rc"));
    s.pert.group = g == "rr" ? 0 : g == "rc" ? 1 : g == "cr" ? 2 : g == "cc" ? 3 : -1;
    if (s.pert.group < 0) throw ScenarioError("demand.perturbation.group must be rr/rc/cr/cc");
    s.pert.factor = jp.value("factor", 2.0);
    s.pert.t_on = jp.value("t_on", 0.0);
    s.pert.t_off = jp.value("t_off", s.sim.horizon);
    if (!(s.pert.t_on < s.pert.t_off))
      throw ScenarioError("demand.perturbation: t_on must be < t_off");
  }

  const json& jc = j.contains("controller") ? j["controller"] : json::object();
  std::string ctype = jc.value("type", std::string("ipa-adaptive"));
  if (ctype == "ipa-adaptive" || ctype == "adaptive") s.ctrl_type = CtrlType::Adaptive;
  else if (ctype == "webster") s.ctrl_type = CtrlType::Webster;
  else throw ScenarioError("controller.type must be 'ipa-adaptive' or 'webster'");
  s.theta = detail::parse_theta(jc.contains("theta") ? jc["theta"] : json(),
                                s.net.num_phases());

  auto diags = s.net.validate(s.sim.vehicle_length);
  if (!diags.empty()) {
    std::string msg = "network validation failed:";
    for (const auto& d : diags) msg += "\n  - " + d;
    throw ScenarioError(msg);
  }
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ScenarioError("scenario JSON parse error: " + std::string(e.what()));
  }
  return build_scenario(j);
}

}  // namespace tlc
