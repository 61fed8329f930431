#pragma once

#include "tlc/network.hpp"

namespace tlc {

// Controllable vector theta_p = [theta_min, theta_max, s] per phase.
struct PhaseParams {
  double theta_min = 20.0;
  double theta_max = 40.0;
  double s = 10.0;

  bool feasible() const { return theta_min >= 0 && theta_max >= theta_min && s >= 0; }
  double& comp(int c) { return c == 0 ? theta_min : c == 1 ? theta_max : s; }
  double comp(int c) const { return c == 0 ? theta_min : c == 1 ? theta_max : s; }
};

// Flattened parameter indexing: i = 3 * global_phase + component,
// component 0 = theta_min, 1 = theta_max, 2 = s.
struct ParamIndex {
  PhaseId phase = 0;
  int comp = 0;

  int flat() const { return 3 * phase + comp; }
  static ParamIndex from_flat(int i) { return {i / 3, i % 3}; }
  static int count(const NetworkSpec& net) { return 3 * static_cast<int>(net.num_phases()); }
};

enum class Region { X0, X1, X2, X3, X4, X5, X6 };

// Queue-content state-space partition for the enabled phase: x_p is the
// largest content among enabled queues, x_pbar among competing queues.
// Boundaries: >= s counts as the high side, exact 0 as the empty side.
inline Region classify_region(double x_p, double x_pbar, double s) {
  if (x_p <= 0 && x_pbar <= 0) return Region::X0;
  if (x_p > 0 && x_pbar <= 0) return Region::X1;
  if (x_p <= 0) return Region::X2;
  bool hp = x_p >= s, hb = x_pbar >= s;
  if (!hp && !hb) return Region::X3;
  if (!hp) return Region::X4;
  if (!hb) return Region::X5;
  return Region::X6;
}

// Quasi-dynamic phase control. Returns 1 to keep the enabled phase GREEN;
// 0 triggers the cyclic switch to the next phase.
inline int control_decision(Region r, double z, const PhaseParams& p) {
  switch (r) {
    case Region::X1: return 1;
    case Region::X2: return 0;
    case Region::X4: return z < p.theta_min ? 1 : 0;
    default: return z < p.theta_max ? 1 : 0;  // X0, X3, X5, X6
  }
}

// v_q = 1 iff q is in the enabled phase; queues without controllable
// movements are permanently GREEN.
inline int queue_signal(const NetworkSpec& net, PhaseId enabled, QueueId q) {
  if (!net.queues[q].has_controllable()) return 1;
  const Phase& p = net.phases[enabled];
  for (QueueId qi : p.queues)
    if (qi == q) return 1;
  return 0;
}

// Fixed-cycle baseline plan for one intersection.
struct WebsterPlan {
  double cycle = 0.0;          // C, including lost time
  double lost_time = 0.0;      // per phase
  std::vector<double> greens;  // effective greens per phase, cycle order
};

// Webster's formula: C = (1.5 * L_total + 5) / (1 - Y) with Y the sum of
// critical flow ratios; effective greens split in proportion to the ratios,
// floored at min_green.
inline WebsterPlan webster_plan(const std::vector<double>& critical_flows,
                                double saturation_rate, double lost_time_per_phase = 2.0,
                                double min_green = 5.0) {
  if (critical_flows.empty()) throw std::invalid_argument("webster_plan: no phases");
  if (!(saturation_rate > 0)) throw std::invalid_argument("webster_plan: saturation rate must be > 0");
  double Y = 0.0;
  std::vector<double> y;
  for (double f : critical_flows) {
    y.push_back(std::max(0.0, f) / saturation_rate);
    Y += y.back();
  }
  if (Y >= 1.0)
    throw std::runtime_error("webster_plan: demand exceeds capacity; Webster undefined");
  const double L = lost_time_per_phase * static_cast<double>(critical_flows.size());
  double C = (1.5 * L + 5.0) / (1.0 - Y);
  WebsterPlan plan;
  plan.lost_time = lost_time_per_phase;
  double effective = std::max(C - L, min_green * critical_flows.size());
  for (double yi : y)
    plan.greens.push_back(std::max(min_green, Y > 0 ? effective * yi / Y
                                                    : effective / critical_flows.size()));
  plan.cycle = L;
  for (double gi : plan.greens) plan.cycle += gi;
  return plan;
}

}  // namespace tlc
