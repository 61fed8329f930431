#pragma once

#include <cstdint>
#include <random>

#include "tlc/grid.hpp"

namespace tlc {

// Piecewise-constant exogenous rate trace for one entry queue.
struct RateTrace {
  std::vector<double> times;   // jump times, strictly increasing, times[0] == 0
  std::vector<double> rates;   // rate on [times[k], times[k+1])

  double at(double t) const {
    if (times.empty()) return 0.0;
    std::size_t i = std::upper_bound(times.begin(), times.end(), t) - times.begin();
    return i == 0 ? 0.0 : rates[i - 1];
  }
};

// Exogenous demand for a whole network: one trace per queue (empty for
// non-entry queues).
struct ArrivalProcess {
  std::vector<RateTrace> traces;

  static ArrivalProcess zeros(std::size_t nq) {
    ArrivalProcess a;
    a.traces.resize(nq);
    return a;
  }
};

// Optional demand perturbation: scale one OD group's rate inside [t_on, t_off).
struct Perturbation {
  bool active = false;
  int group = 1;               // 0=rr 1=rc 2=cr 3=cc
  double factor = 1.0;
  double t_on = 0.0, t_off = 0.0;
};

inline int od_group_index(const OdFlow& f) {
  return (f.origin.row ? 0 : 2) + (f.exit.row ? 0 : 1);
}

// Deterministic constant-rate traces: each entry queue carries the sum of the
// mean rates of OD flows entering through it.
inline ArrivalProcess constant_rate_traces(const NetworkSpec& net,
                                           const RoutedDemand& demand,
                                           const std::vector<OdFlow>& flows,
                                           double horizon,
                                           const Perturbation& pert = {}) {
  ArrivalProcess out = ArrivalProcess::zeros(net.num_queues());
  std::vector<double> base(net.num_queues(), 0.0), extra(net.num_queues(), 0.0);
  for (std::size_t i = 0; i < flows.size(); ++i) {
    QueueId q0 = demand.paths[i].first.front();
    base[q0] += flows[i].rate;
    if (pert.active && od_group_index(flows[i]) == pert.group)
      extra[q0] += flows[i].rate * (pert.factor - 1.0);
  }
  for (std::size_t q = 0; q < net.num_queues(); ++q) {
    if (base[q] <= 0) continue;
    RateTrace& tr = out.traces[q];
    tr.times = {0.0};
    tr.rates = {base[q]};
    if (pert.active && extra[q] != 0 && pert.t_on < horizon) {
      tr.times.push_back(pert.t_on);
      tr.rates.push_back(base[q] + extra[q]);
      if (pert.t_off < horizon) {
        tr.times.push_back(pert.t_off);
        tr.rates.push_back(base[q]);
      }
    }
  }
  return out;
}

// Binned Poisson demand: per OD flow, draw Poisson counts over bins of width
// t_w and emit piecewise-constant rates N/t_w, summed per entry queue.
// Deterministic given (seed, flow order).
inline ArrivalProcess poisson_rate_trace(const NetworkSpec& net,
                                         const RoutedDemand& demand,
                                         const std::vector<OdFlow>& flows,
                                         double t_w, double horizon, std::uint64_t seed,
                                         const Perturbation& pert = {}) {
  if (!(t_w > 0)) throw std::invalid_argument("poisson_rate_trace: bin width must be > 0");
  const std::size_t nbins = static_cast<std::size_t>(std::ceil(horizon / t_w));
  std::vector<std::vector<double>> binned(net.num_queues());

  for (std::size_t i = 0; i < flows.size(); ++i) {
    const OdFlow& f = flows[i];
    QueueId q0 = demand.paths[i].first.front();
    if (binned[q0].empty()) binned[q0].assign(nbins, 0.0);
    // one substream per OD flow so traces are stable under flow reordering-free edits
    std::seed_seq sq{seed, static_cast<std::uint64_t>(i) + 1};
    std::mt19937_64 rng(sq);
    for (std::size_t b = 0; b < nbins; ++b) {
      double rate = f.rate;
      double t0 = b * t_w;
      if (pert.active && od_group_index(f) == pert.group && t0 >= pert.t_on && t0 < pert.t_off)
        rate *= pert.factor;
      std::poisson_distribution<long> pois(rate * t_w);
      binned[q0][b] += static_cast<double>(pois(rng)) / t_w;
    }
  }

  ArrivalProcess out = ArrivalProcess::zeros(net.num_queues());
  for (std::size_t q = 0; q < net.num_queues(); ++q) {
    if (binned[q].empty()) continue;
    RateTrace& tr = out.traces[q];
    double last = -1.0;
    for (std::size_t b = 0; b < nbins; ++b) {
      if (binned[q][b] != last) {
        tr.times.push_back(b * t_w);
        tr.rates.push_back(binned[q][b]);
        last = binned[q][b];
      }
    }
    if (tr.times.empty()) { tr.times = {0.0}; tr.rates = {0.0}; }
  }
  return out;
}

}  // namespace tlc
