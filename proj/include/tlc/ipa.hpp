#pragma once

#include <deque>
#include <optional>

#include "tlc/controller.hpp"

namespace tlc {
namespace ipa {

inline constexpr double kGrazingEps = 1e-12;

// tau' for a guard x_q = threshold crossed with slope `net_rate`:
// tau' = (d(threshold)/dTheta_i - x') / rate. Returns nullopt on a grazing
// contact (rate ~ 0), which the caller logs and skips.
inline std::optional<double> crossing_time_derivative(double threshold_sens, double x_prime,
                                                      double net_rate) {
  if (std::abs(net_rate) < kGrazingEps) return std::nullopt;
  return (threshold_sens - x_prime) / net_rate;
}

// tau' for a burst head/tail joining its downstream queue. `f` is the burst
// speed of the upstream queue, `xdot_dst` the downstream content slope just
// before the event, `anchor` the tau' memo of the generating G / G^e event.
inline std::optional<double> join_time_derivative(double f, double veh_len, double xdot_dst,
                                                  double anchor, double x_prime_dst) {
  double denom = f + veh_len * xdot_dst;
  if (std::abs(denom) < 1e-9) return std::nullopt;
  return f / denom * (anchor - veh_len / f * x_prime_dst);
}

// Eq-style NEP contribution: sum of x' plateaus times inter-event gaps.
// `times` are the event times inside the NEP bracketed by [xi, eta];
// values[o] is x'(times[o]^+) with times[0] == xi and the last entry the
// final plateau start. Used by tests as an independent route; the engine
// accumulates the same integral incrementally.
inline double nep_contribution(const std::vector<double>& times,
                               const std::vector<double>& values, double eta) {
  double sum = 0.0;
  for (std::size_t o = 0; o < times.size(); ++o) {
    double end = o + 1 < times.size() ? times[o + 1] : eta;
    sum += values[o] * (end - times[o]);
  }
  return sum;
}

// Dense per-queue, per-parameter derivative storage with lazily flushed
// gradient accumulation (sum of w_q * integral of x' over NEPs).
class DerivState {
 public:
  void init(std::size_t nq, int nparams, const std::vector<double>& weights) {
    nq_ = nq;
    np_ = nparams;
    w_ = weights;
    xp_.assign(nq * nparams, 0.0);
    nonzero_.assign(nq, 0);
    last_flush_.assign(nq, 0.0);
    acc_.assign(nparams, 0.0);
  }

  int params() const { return np_; }
  double* row(QueueId q) { return xp_.data() + static_cast<std::size_t>(q) * np_; }
  const double* row(QueueId q) const { return xp_.data() + static_cast<std::size_t>(q) * np_; }
  bool row_nonzero(QueueId q) const { return nonzero_[q] != 0; }

  // Fold x'(.)*dt into the gradient accumulator up to time t, then leave the
  // row ready to be modified.
  void flush(QueueId q, double t) {
    double dt = t - last_flush_[q];
    last_flush_[q] = t;
    if (dt <= 0 || !nonzero_[q]) return;
    const double wq = w_[q];
    const double* r = row(q);
    for (int i = 0; i < np_; ++i) acc_[i] += wq * r[i] * dt;
  }

  // Boundary update x' += (f_before - f_after) * tau' at an event time t.
  void rate_jump(QueueId q, double t, double f_before, double f_after, const double* tau) {
    double d = f_before - f_after;
    if (d == 0.0) return;
    flush(q, t);
    double* r = row(q);
    bool nz = false;
    for (int i = 0; i < np_; ++i) {
      r[i] += d * tau[i];
      nz |= r[i] != 0.0;
    }
    nonzero_[q] = nz;
  }

  // Empty periods pin x' to zero exactly.
  void reset_row(QueueId q, double t) {
    flush(q, t);
    if (!nonzero_[q]) return;
    std::fill_n(row(q), np_, 0.0);
    nonzero_[q] = 0;
  }

  double max_abs_row(QueueId q) const {
    double m = 0.0;
    const double* r = row(q);
    for (int i = 0; i < np_; ++i) m = std::max(m, std::abs(r[i]));
    return m;
  }

  // Close a window: flush everything at t, return the accumulated gradient
  // scaled by 1/window_len, and zero the accumulators.
  std::vector<double> finalize_window(double t, double window_len) {
    for (std::size_t q = 0; q < nq_; ++q) flush(static_cast<QueueId>(q), t);
    std::vector<double> g(acc_);
    for (double& v : g) v /= window_len;
    std::fill(acc_.begin(), acc_.end(), 0.0);
    return g;
  }

 private:
  std::size_t nq_ = 0;
  int np_ = 0;
  std::vector<double> w_;
  std::vector<double> xp_;
  std::vector<char> nonzero_;
  std::vector<double> last_flush_;
  std::vector<double> acc_;
};

// Sliding-window arrival-rate estimator (N_q / t_w) mirroring a detector that
// counts joining vehicles. Samples of (time, cumulative inflow) are pushed at
// rate-change events; estimates interpolate linearly in between.
class RateWindow {
 public:
  explicit RateWindow(double window = 50.0) : window_(window) {}

  void push(double t, double cum) {
    if (!samples_.empty() && samples_.back().first == t)
      samples_.back().second = cum;
    else
      samples_.push_back({t, cum});
    while (samples_.size() > 2 && samples_[1].first <= t - window_) samples_.pop_front();
  }

  double estimate(double t, double cum_now) const {
    if (samples_.empty()) return 0.0;
    double t0 = t - window_;
    if (t0 <= samples_.front().first)
      return (cum_now - samples_.front().second) / std::max(window_, t - samples_.front().first);
    // locate the segment containing t0 and interpolate
    double c0 = samples_.back().second;
    for (std::size_t i = 1; i < samples_.size(); ++i) {
      if (samples_[i].first >= t0) {
        const auto& [ta, ca] = samples_[i - 1];
        const auto& [tb, cb] = samples_[i];
        c0 = tb > ta ? ca + (cb - ca) * (t0 - ta) / (tb - ta) : ca;
        break;
      }
    }
    if (samples_.back().first < t0)
      c0 = samples_.back().second + (cum_now - samples_.back().second) *
                                        (t0 - samples_.back().first) /
                                        std::max(1e-12, t - samples_.back().first);
    return (cum_now - c0) / window_;
  }

 private:
  double window_;
  std::deque<std::pair<double, double>> samples_;
};

}  // namespace ipa
}  // namespace tlc
