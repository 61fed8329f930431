#pragma once

#include "tlc/scenario.hpp"

namespace tlc::testing {

// A chain of single-queue intersections: q0 -> q1 -> ... -> q_{n-1} -> sink.
// Each node has `phases_per_node` phases; its queue sits in phase 0 only, so
// with one phase the light is effectively always green.
struct ChainOpts {
  int n = 1;
  int phases_per_node = 1;
  double capacity = kInfCapacity;
  double length = 300.0;
  double speed = 10.0;
};

inline NetworkSpec chain_network(const ChainOpts& o) {
  NetworkSpec net;
  net.nodes.resize(o.n);
  for (int i = 0; i < o.n; ++i) {
    net.nodes[i].id = i;
    Queue q;
    q.id = static_cast<QueueId>(net.queues.size());
    q.node = i;
    q.name = "q" + std::to_string(i);
    q.capacity = i == 0 ? kInfCapacity : o.capacity;  // entry stays unbounded
    q.length = o.length;
    q.speed = o.speed;
    q.movements = {{Orientation::West, TurnDir::Straight, true}};
    net.nodes[i].queues.push_back(q.id);
    QueueId main_q = q.id;
    net.queues.push_back(std::move(q));
    // extra phases cycle through a demand-free cross queue, giving the main
    // queue genuine red intervals
    QueueId cross_q = -1;
    if (o.phases_per_node > 1) {
      Queue cq;
      cq.id = static_cast<QueueId>(net.queues.size());
      cq.node = i;
      cq.name = "q" + std::to_string(i) + "x";
      cq.length = o.length;
      cq.speed = o.speed;
      cq.movements = {{Orientation::North, TurnDir::Straight, true}};
      net.nodes[i].queues.push_back(cq.id);
      cross_q = cq.id;
      net.queues.push_back(std::move(cq));
    }
    for (int p = 0; p < o.phases_per_node; ++p) {
      Phase ph;
      ph.id = static_cast<PhaseId>(net.phases.size());
      ph.node = i;
      ph.queues = {p == 0 ? main_q : cross_q};
      net.nodes[i].phases.push_back(ph.id);
      net.phases.push_back(std::move(ph));
    }
  }
  // chain the main queues together
  for (int i = 0; i + 1 < o.n; ++i) {
    QueueId a = -1, b = -1;
    for (const auto& q : net.queues) {
      if (q.name == "q" + std::to_string(i)) a = q.id;
      if (q.name == "q" + std::to_string(i + 1)) b = q.id;
    }
    net.queues[a].downstream = {b};
  }
  net.finalize();
  for (int i = 0; i + 1 < o.n; ++i) {
    QueueId a = -1, b = -1;
    for (const auto& q : net.queues) {
      if (q.name == "q" + std::to_string(i)) a = q.id;
      if (q.name == "q" + std::to_string(i + 1)) b = q.id;
    }
    net.turn.ratios[a][b] = 1.0;
    net.turn.sink_share[a] = 0.0;
  }
  return net;
}

inline QueueId chain_queue(const NetworkSpec& net, int i) {
  for (const auto& q : net.queues)
    if (q.name == "q" + std::to_string(i)) return q.id;
  return -1;
}

inline ArrivalProcess const_arrivals(const NetworkSpec& net, QueueId q, double rate) {
  ArrivalProcess a = ArrivalProcess::zeros(net.num_queues());
  a.traces[q].times = {0.0};
  a.traces[q].rates = {rate};
  return a;
}

inline ControllerSetup adaptive(const NetworkSpec& net, PhaseParams p = {1e7, 2e7, 0.0}) {
  ControllerSetup c;
  c.theta.assign(net.num_phases(), p);
  return c;
}

inline Scenario default_grid_scenario(double rr = 0.02, double rc = 0.01, double cr = 0.01,
                                      double cc = 0.01, int rows = 2, int cols = 3) {
  json j;
  j["grid"] = {{"rows", rows}, {"cols", cols}, {"road_length", 300.0}};
  j["demand"] = {{"mode", "poisson"},
                 {"groups", {{"rr", rr}, {"rc", rc}, {"cr", cr}, {"cc", cc}}}};
  j["controller"] = {{"type", "ipa-adaptive"}, {"theta", {20.0, 40.0, 10.0}}};
  j["sim"] = {{"horizon", 2000.0}, {"seed", 1}};
  return build_scenario(j);
}

}  // namespace tlc::testing
