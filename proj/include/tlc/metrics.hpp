#pragma once

#include "tlc/engine.hpp"

namespace tlc {

struct MetricsReport {
  double horizon = 0;
  double mean_queue_cost = 0;     // L: time-averaged weighted total content
  double mean_waiting_time = 0;   // queued vehicle-seconds per network exit
  double time_distance_ratio = 0; // travel seconds per meter advanced
  double exits = 0;               // vehicles that left through a boundary
  double total_in = 0, total_out = 0, total_shed = 0;
  bool no_departures = false;     // waiting time undefined (reported as 0)
  std::uint64_t events = 0;
  std::uint64_t log_hash = 0;
};

// L = (1/T) sum_q w_q int x_q dt, computed from the engine's exact
// piecewise-quadratic accumulators.
inline double mean_queue_cost(const NetworkSpec& net, const std::vector<QueueTotals>& tot,
                              double horizon) {
  double s = 0;
  for (std::size_t q = 0; q < tot.size(); ++q) s += net.queues[q].weight * tot[q].int_x;
  return s / std::max(horizon, 1e-12);
}

inline MetricsReport collect_metrics(const NetworkSpec& net, SimEngine& eng, double horizon) {
  MetricsReport r;
  r.horizon = horizon;
  const auto& tot = eng.totals();
  double int_x = 0, dist_out = 0, time_travel = 0;
  for (std::size_t q = 0; q < tot.size(); ++q) {
    const Queue& qq = net.queues[q];
    int_x += tot[q].int_x;
    r.total_in += tot[q].cum_in;
    r.total_out += tot[q].cum_out;
    r.total_shed += tot[q].cum_shed;
    dist_out += tot[q].cum_out * qq.length;
    time_travel += tot[q].cum_out * qq.length / qq.speed;
  }
  r.mean_queue_cost = mean_queue_cost(net, tot, horizon);
  r.exits = eng.network_exits();
  if (r.total_out > 1e-9) r.mean_waiting_time = int_x / r.total_out;
  else r.no_departures = true;
  if (dist_out > 1e-9) r.time_distance_ratio = (time_travel + int_x) / dist_out;
  r.events = eng.events_processed();
  r.log_hash = eng.log_hash();
  return r;
}

// Per-queue conservation residual: cum_in - cum_out - cum_shed - (x_final - 0).
inline double conservation_residual(const QueueTotals& t) {
  return t.cum_in - t.cum_out - t.cum_shed - t.x_final;
}

inline double max_conservation_residual(const std::vector<QueueTotals>& tot) {
  double m = 0;
  for (const auto& t : tot) m = std::max(m, std::abs(conservation_residual(t)));
  return m;
}

}  // namespace tlc
