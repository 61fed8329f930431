#pragma once

#include <cstdint>
#include <cstring>
#include <functional>

#include "tlc/arrivals.hpp"
#include "tlc/controller.hpp"
#include "tlc/ipa.hpp"

namespace tlc {

struct SimAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class EventKind : std::uint8_t {
  ExoJump,        // exogenous rate trace jump
  HitCapacity,    // [x up c]
  LeaveCapacity,  // [x down c] (induced)
  ClockMin,       // [z up theta_min]
  ClockMax,       // [z up theta_max]
  WebsterSwitch,  // fixed-cycle timer
  HitEmpty,       // [x down 0] (E)
  DownThreshold,  // [x down s_p]
  UpThreshold,    // [x up s_p]
  BurstJoin,      // J: burst head reaches downstream queue
  BurstJoinEnd,   // J^e: burst tail reaches downstream queue
  PhaseSwitch,    // induced
  RedToGreen,     // induced, per queue
  GreenToRed,     // induced, per queue
  BurstGen,       // G
  BurstGenEnd,    // G^e
  NepStart,       // S
  NepEnd,         // E bookkeeping
};

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::ExoJump: return "exo_jump";
    case EventKind::HitCapacity: return "x_up_c";
    case EventKind::LeaveCapacity: return "x_down_c";
    case EventKind::ClockMin: return "z_up_min";
    case EventKind::ClockMax: return "z_up_max";
    case EventKind::WebsterSwitch: return "webster_switch";
    case EventKind::HitEmpty: return "x_down_0";
    case EventKind::DownThreshold: return "x_down_s";
    case EventKind::UpThreshold: return "x_up_s";
    case EventKind::BurstJoin: return "join";
    case EventKind::BurstJoinEnd: return "join_end";
    case EventKind::PhaseSwitch: return "phase_switch";
    case EventKind::RedToGreen: return "r2g";
    case EventKind::GreenToRed: return "g2r";
    case EventKind::BurstGen: return "burst_gen";
    case EventKind::BurstGenEnd: return "burst_gen_end";
    case EventKind::NepStart: return "nep_start";
    case EventKind::NepEnd: return "nep_end";
  }
  return "?";
}

struct LogRecord {
  double t = 0;
  EventKind kind = EventKind::ExoJump;
  std::int32_t id = -1;     // queue, phase or node depending on kind
  double value = 0;
};

struct EngineConfig {
  double vehicle_len = 5.0;    // meters incl. headway
  double H = 1.3;              // saturation departure rate, vehicles/s
  bool ipa = true;
  bool record_log = false;
  bool record_traj = false;
  bool invariant_checks = false;
  std::uint64_t event_cap = 10'000'000;
  bool windowed_rates = false;  // use N/t_w arrival estimates in tau' formulas
  double rate_window = 50.0;
  bool window_reset = true;     // restart derivative state at window marks
                                // (treat each window's opening content and
                                // signal phase as parameter-independent)
  double min_dwell = 1.0;       // effective lower bound on theta_min: a phase
                                // holds the light at least this long, so no
                                // parameter choice can make switching chatter
                                // without bound
};

enum class CtrlType { Adaptive, Webster };

struct ControllerSetup {
  CtrlType type = CtrlType::Adaptive;
  std::vector<PhaseParams> theta;         // per global phase (adaptive)
  std::vector<double> webster_duration;   // per global phase: green + lost time
};

struct QueueTotals {
  double cum_in = 0, cum_out = 0, cum_shed = 0, int_x = 0;
  double x_final = 0;
  long neps = 0;
};

struct WindowStats {
  double t_begin = 0, t_end = 0;
  double cost = 0;            // weighted mean queue length over the window
  double wait = 0;            // vehicle-seconds queued per vehicle leaving the network
  double exits = 0;
};

class SimEngine {
 public:
  SimEngine(const NetworkSpec& net, ControllerSetup ctrl, ArrivalProcess arrivals,
            EngineConfig cfg)
      : net_(net), ctrl_(std::move(ctrl)), arr_(std::move(arrivals)), cfg_(cfg) {
    const std::size_t nq = net_.num_queues();
    const std::size_t nn = net_.nodes.size();
    if (arr_.traces.size() != nq) throw std::invalid_argument("arrival process size mismatch");
    if (ctrl_.type == CtrlType::Adaptive && ctrl_.theta.size() != net_.num_phases())
      throw std::invalid_argument("theta size mismatch");
    if (ctrl_.type == CtrlType::Webster && ctrl_.webster_duration.size() != net_.num_phases())
      throw std::invalid_argument("webster plan size mismatch");

    np_ = ParamIndex::count(net_);
    x_.assign(nq, 0.0);
    alpha_.assign(nq, 0.0);
    beta_.assign(nq, 0.0);
    xdot_.assign(nq, 0.0);
    shed_rate_.assign(nq, 0.0);
    at_cap_.assign(nq, 0);
    in_nep_.assign(nq, 0);
    v_.assign(nq, 0);
    totals_.assign(nq, QueueTotals{});
    exo_idx_.assign(nq, 0);
    phase_pos_.assign(nn, 0);
    z_start_.assign(nn, 0.0);
    burst_seq_.assign(nq, 0);

    std::vector<double> w(nq);
    for (std::size_t q = 0; q < nq; ++q) w[q] = net_.queues[q].weight;
    deriv_.init(nq, np_, w);
    zeros_.assign(np_, 0.0);
    tau_scratch_.assign(np_, 0.0);
    tau_own_.assign(np_, 0.0);
    node_touched_.assign(net.nodes.size(), 0);
    tau_act_.assign(nn, std::vector<double>(np_, 0.0));
    if (cfg_.windowed_rates)
      rate_windows_.assign(nq, ipa::RateWindow(cfg_.rate_window));

    xdot_before_.assign(nq, 0.0);
    beta_before_.assign(nq, 0.0);
    legs_into_.assign(nq, {});
    last_alpha_seen_.assign(nq, -1.0);
    for (std::size_t q = 0; q < nq; ++q)
      v_[q] = static_cast<char>(
          queue_signal(net_, enabled_phase(net_.queues[q].node), static_cast<QueueId>(q)));
    sync(zeros_.data());
    eval_controllers(zeros_.data());
    mark_window();
  }

  double time() const { return t_; }
  std::uint64_t events_processed() const { return events_; }
  std::uint64_t log_hash() const { return hash_; }
  long degenerate_crossings() const { return degenerate_; }
  long invariant_violations() const { return invariant_violations_; }
  double reset_residual_max() const { return reset_residual_max_; }
  const std::vector<LogRecord>& log() const { return log_; }
  const std::vector<LogRecord>& trajectory() const { return traj_; }
  const std::vector<QueueTotals>& totals() {
    for (std::size_t q = 0; q < x_.size(); ++q) totals_[q].x_final = x_[q];
    return totals_;
  }
  double queue_content(QueueId q) const { return x_[q]; }
  const ipa::DerivState& deriv() const { return deriv_; }
  const std::vector<PhaseParams>& theta() const { return ctrl_.theta; }

  double network_exits() const {
    double e = 0;
    for (std::size_t q = 0; q < x_.size(); ++q)
      e += totals_[q].cum_out * net_.turn.sink_share[q];
    return e;
  }

  void run_until(double t_stop) {
    while (true) {
      Cand c = next_event(t_stop);
      if (!c.valid) {
        advance_to(t_stop);
        return;
      }
      if (++events_ > cfg_.event_cap)
        throw SimAbort("event cap exceeded (possible Zeno loop) at t=" + std::to_string(t_));
      advance_to(c.t);
      dispatch(c);
      if (cfg_.invariant_checks) check_invariants();
    }
  }

  // Close the current gradient/cost window, returning dL/dTheta per flat
  // parameter index. Derivative state x' carries across the boundary.
  std::vector<double> finalize_window() {
    double w = t_ - window_begin_;
    auto g = deriv_.finalize_window(t_, std::max(w, 1e-12));
    return g;
  }

  WindowStats window_stats() {
    WindowStats s;
    s.t_begin = window_begin_;
    s.t_end = t_;
    double w = std::max(t_ - window_begin_, 1e-12);
    double intx = 0, wint = 0, out = 0;
    for (std::size_t q = 0; q < x_.size(); ++q) {
      intx += totals_[q].int_x - mark_int_x_[q];
      wint += net_.queues[q].weight * (totals_[q].int_x - mark_int_x_[q]);
      out += totals_[q].cum_out;
    }
    out -= mark_out_;
    s.cost = wint / w;
    s.exits = network_exits() - mark_exits_;
    s.wait = out > 1e-9 ? intx / out : 0.0;
    return s;
  }

  void mark_window() {
    window_begin_ = t_;
    // restart the derivative state: the content at the window boundary acts
    // as an initial condition for the window ahead and does not depend on the
    // parameters that will be in force there (they are updated between
    // windows). Carrying sensitivities over would also let the cumulative
    // drift of switch times grow without bound and swamp the window gradient.
    if (cfg_.window_reset) {
      for (auto& ta : tau_act_) std::fill(ta.begin(), ta.end(), 0.0);
      if (cfg_.ipa) {
        for (std::size_t q = 0; q < x_.size(); ++q)
          deriv_.reset_row(static_cast<QueueId>(q), t_);
        for (auto& b : bursts_) {
          std::fill(b.tau_g.begin(), b.tau_g.end(), 0.0);
          std::fill(b.tau_e.begin(), b.tau_e.end(), 0.0);
        }
      }
    }
    mark_int_x_.resize(x_.size());
    mark_out_ = 0;
    for (std::size_t q = 0; q < x_.size(); ++q) {
      mark_int_x_[q] = totals_[q].int_x;
      mark_out_ += totals_[q].cum_out;
    }
    mark_exits_ = network_exits();
  }

  // Install new controller parameters mid-run. A clock bound that the enabled
  // phase has already passed triggers an immediate switch.
  void set_theta(std::vector<PhaseParams> theta) {
    if (theta.size() != net_.num_phases()) throw std::invalid_argument("theta size mismatch");
    ctrl_.theta = std::move(theta);
    for (NodeId n = 0; n < static_cast<NodeId>(net_.nodes.size()); ++n) {
      if (!should_switch(n)) continue;
      std::fill(node_touched_.begin(), node_touched_.end(), 0);
      node_touched_[n] = 1;
      PhaseId p = enabled_phase(n);
      std::copy(tau_act_[n].begin(), tau_act_[n].end(), tau_scratch_.begin());
      Region r = node_region(n);
      int comp = r == Region::X4 || r == Region::X2 ? 0 : 1;
      if (!(comp == 0 && ctrl_.theta[p].theta_min < cfg_.min_dwell))
        tau_scratch_[ParamIndex{p, comp}.flat()] += 1.0;
      eval_controllers(tau_scratch_.data());
    }
    eval_controllers(zeros_.data());
  }

  PhaseId enabled_phase(NodeId n) const {
    return net_.nodes[n].phases[phase_pos_[n]];
  }
  double clock(NodeId n) const { return t_ - z_start_[n]; }
  int signal(QueueId q) const { return v_[q]; }
  double departure_rate(QueueId q) const { return beta_[q]; }
  double arrival_rate(QueueId q) const { return alpha_[q]; }

  // Transit delay for a burst from q_u entering q_d.
  double delay(QueueId q_u, QueueId q_d) const {
    const Queue& d = net_.queues[q_d];
    return (d.length - x_[q_d] * cfg_.vehicle_len) / net_.queues[q_u].speed;
  }

 private:
  struct BurstLeg {
    QueueId dst = -1;
    double rate = 0;
    bool head_joined = false;
    bool tail_joined = false;
  };
  struct Burst {
    QueueId origin = -1;
    long m = 0;
    double t_head = 0;
    double t_tail = -1;   // < 0 while generation is open
    bool gen_open = true;
    std::vector<BurstLeg> legs;
    std::vector<double> tau_g, tau_e;
  };

  struct Cand {
    bool valid = false;
    double t = 0;
    int cls = 99;
    EventKind kind = EventKind::ExoJump;
    int a = -1;   // queue or node
    int b = -1;   // burst index
    int c = -1;   // leg index
  };

  static constexpr double kEps = 1e-9;

  // ---- logging -------------------------------------------------------------

  void log_event(EventKind k, int id, double value) {
    hash_ = fnv(hash_, static_cast<std::uint64_t>(k) * 1315423911u + static_cast<std::uint64_t>(id));
    hash_ = fnv(hash_, bits(t_));
    if (cfg_.record_log) log_.push_back({t_, k, id, value});
  }
  static std::uint64_t bits(double d) {
    std::uint64_t u;
    std::memcpy(&u, &d, sizeof(u));
    return u;
  }
  static std::uint64_t fnv(std::uint64_t h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
    return h;
  }

  // ---- continuous advance --------------------------------------------------

  void advance_to(double tn) {
    double dt = tn - t_;
    if (dt <= 0) { t_ = std::max(t_, tn); return; }
    for (std::size_t q = 0; q < x_.size(); ++q) {
      QueueTotals& tot = totals_[q];
      tot.int_x += x_[q] * dt + 0.5 * xdot_[q] * dt * dt;
      tot.cum_in += alpha_[q] * dt;
      tot.cum_out += beta_[q] * dt;
      tot.cum_shed += shed_rate_[q] * dt;
      x_[q] += xdot_[q] * dt;
      if (!in_nep_[q]) x_[q] = 0.0;  // EP content is exactly zero
      if (cfg_.record_traj && xdot_[q] != 0) traj_.push_back({tn, EventKind::NepStart, static_cast<int>(q), x_[q]});
    }
    t_ = tn;
  }

  // ---- rate recomputation and induced bookkeeping --------------------------

  double exo_rate(QueueId q) const {
    const RateTrace& tr = arr_.traces[q];
    return tr.times.empty() ? 0.0 : tr.rates[exo_idx_[q]];
  }

  bool downstream_open(QueueId q) const {
    for (QueueId d : net_.queues[q].downstream)
      if (at_cap_[d]) return false;
    return true;
  }

  // Recompute alpha/beta/xdot to a fixed point, then apply derivative boundary
  // updates, burst generation transitions and NEP starts, all with the tau'
  // of the discrete transition being applied.
  void sync(const double* tau) {
    const std::size_t nq = x_.size();
    std::copy(xdot_.begin(), xdot_.end(), xdot_before_.begin());
    std::copy(beta_.begin(), beta_.end(), beta_before_.begin());
    alpha_before_ = alpha_;

    for (int iter = 0;; ++iter) {
      bool changed = false;
      for (std::size_t q = 0; q < nq; ++q) {
        double a;
        if (net_.queues[q].is_entry()) {
          a = exo_rate(static_cast<QueueId>(q));
        } else {
          a = 0.0;
          for (const auto& [bi, li] : legs_into_[q]) {
            const BurstLeg& leg = bursts_[bi].legs[li];
            if (leg.head_joined && !leg.tail_joined) a += leg.rate;
          }
        }
        alpha_[q] = a;
      }
      for (std::size_t q = 0; q < nq; ++q) {
        double b = 0.0;
        if (v_[q] && downstream_open(static_cast<QueueId>(q))) {
          // a queue at (or crossing) zero with its NEP still open keeps
          // discharging at H until its own empty event is dispatched, so a
          // coincident crossing elsewhere cannot absorb its transition
          bool queued = x_[q] > 0 || in_nep_[q];
          b = queued ? cfg_.H : std::min(alpha_[q], cfg_.H);
        }
        beta_[q] = b;
      }
      for (std::size_t q = 0; q < nq; ++q) {
        double raw = alpha_[q] - beta_[q];
        if (at_cap_[q]) {
          if (raw < -1e-15) {
            at_cap_[q] = 0;  // content leaves capacity with this transition
            log_event(EventKind::LeaveCapacity, static_cast<int>(q), x_[q]);
            changed = true;
          } else {
            raw = std::max(raw, 0.0);
          }
        }
        double shed = 0.0;
        if (at_cap_[q] && alpha_[q] - beta_[q] > 0) {
          shed = alpha_[q] - beta_[q];
          raw = 0.0;
        }
        xdot_[q] = raw;
        shed_rate_[q] = shed;
      }
      if (!changed || iter > static_cast<int>(nq) + 2) break;
    }

    for (std::size_t q = 0; q < nq; ++q)
      if (xdot_[q] != xdot_before_[q] || alpha_[q] != alpha_before_[q])
        node_touched_[net_.queues[q].node] = 1;

    // derivative boundary updates: x' += (f_before - f_after) * tau'
    if (cfg_.ipa) {
      for (std::size_t q = 0; q < nq; ++q)
        if (xdot_[q] != xdot_before_[q])
          deriv_.rate_jump(static_cast<QueueId>(q), t_, xdot_before_[q], xdot_[q], tau);
    }

    // burst generation transitions: beta crossing zero either way
    for (std::size_t q = 0; q < nq; ++q) {
      if (beta_before_[q] == 0.0 && beta_[q] > 0.0) burst_gen(static_cast<QueueId>(q), tau);
      else if (beta_before_[q] > 0.0 && beta_[q] == 0.0) burst_gen_end(static_cast<QueueId>(q), tau);
      beta_before_[q] = beta_[q];
      xdot_before_[q] = xdot_[q];
    }

    // NEP starts: content becomes positive from zero
    for (std::size_t q = 0; q < nq; ++q) {
      if (!in_nep_[q] && x_[q] <= 0 && xdot_[q] > 0) {
        in_nep_[q] = 1;
        totals_[q].neps++;
        log_event(EventKind::NepStart, static_cast<int>(q), 0.0);
      }
      if (cfg_.windowed_rates && alpha_[q] != last_alpha_seen_ref(q))
        push_rate_sample(static_cast<QueueId>(q));
    }
  }

  double& last_alpha_seen_ref(std::size_t q) {
    if (last_alpha_seen_.size() != x_.size()) last_alpha_seen_.assign(x_.size(), -1.0);
    return last_alpha_seen_[q];
  }
  void push_rate_sample(QueueId q) {
    rate_windows_[q].push(t_, totals_[q].cum_in);
    last_alpha_seen_ref(q) = alpha_[q];
  }
  double alpha_for_ipa(QueueId q) const {
    if (!cfg_.windowed_rates) return alpha_[q];
    return rate_windows_[q].estimate(t_, totals_[q].cum_in);
  }

  void burst_gen(QueueId q, const double* tau) {
    Burst b;
    b.origin = q;
    b.m = ++burst_seq_[q];
    b.t_head = t_;
    b.tau_g.assign(tau, tau + np_);
    for (const auto& [d, g] : net_.turn.ratios[q])
      if (g > 0) b.legs.push_back({d, g * beta_[q], false, false});
    log_event(EventKind::BurstGen, q, beta_[q]);
    if (b.legs.empty()) return;  // pure sink queue: nothing to trace
    bursts_.push_back(std::move(b));
    index_burst(bursts_.size() - 1);
  }

  void burst_gen_end(QueueId q, const double* tau) {
    for (std::size_t i = bursts_.size(); i-- > 0;) {
      Burst& b = bursts_[i];
      if (b.origin == q && b.gen_open) {
        b.gen_open = false;
        b.t_tail = t_;
        b.tau_e.assign(tau, tau + np_);
        log_event(EventKind::BurstGenEnd, q, 0.0);
        return;
      }
    }
    log_event(EventKind::BurstGenEnd, q, 0.0);  // sink-only origin: no traced burst
  }

  void index_burst(std::size_t bi) {
    if (legs_into_.size() != x_.size()) legs_into_.assign(x_.size(), {});
    for (std::size_t li = 0; li < bursts_[bi].legs.size(); ++li)
      legs_into_[bursts_[bi].legs[li].dst].push_back({static_cast<int>(bi), static_cast<int>(li)});
  }

  void rebuild_leg_index() {
    legs_into_.assign(x_.size(), {});
    for (std::size_t bi = 0; bi < bursts_.size(); ++bi) index_burst(bi);
  }

  void retire_finished_bursts() {
    bool any = false;
    for (std::size_t bi = 0; bi < bursts_.size();) {
      const Burst& b = bursts_[bi];
      bool done = !b.gen_open;
      for (const auto& l : b.legs) done = done && l.tail_joined;
      if (done) {
        bursts_.erase(bursts_.begin() + static_cast<long>(bi));
        any = true;
      } else {
        ++bi;
      }
    }
    if (any) rebuild_leg_index();
  }

  // ---- controller ----------------------------------------------------------

  Region node_region(NodeId n) const {
    PhaseId p = enabled_phase(n);
    const Phase& ph = net_.phases[p];
    double xp = 0, xb = 0;
    for (QueueId q : net_.nodes[n].queues) {
      if (!net_.queues[q].has_controllable()) continue;
      bool in_p = std::find(ph.queues.begin(), ph.queues.end(), q) != ph.queues.end();
      // a content pinned exactly on a boundary (crossing events land on 0 or
      // s) counts as the side the trajectory is moving toward, so the switch
      // decision taken at the crossing matches the post-event region instead
      // of being deferred to an unrelated later event
      double xe = x_[q] + (xdot_[q] > 0 ? kEps : xdot_[q] < 0 ? -kEps : 0.0);
      (in_p ? xp : xb) = std::max(in_p ? xp : xb, xe);
    }
    double s = ctrl_.type == CtrlType::Adaptive ? ctrl_.theta[p].s : 0.0;
    return classify_region(xp, xb, s);
  }

  // theta_min as the engine enforces it: never below the dwell floor
  double eff_theta_min(PhaseId p) const {
    return std::max(ctrl_.theta[p].theta_min, cfg_.min_dwell);
  }

  bool should_switch(NodeId n) const {
    if (ctrl_.type != CtrlType::Adaptive) return false;
    PhaseId p = enabled_phase(n);
    double z = clock(n) + kEps;  // guard boundaries count as reached
    Region r = node_region(n);
    PhaseParams th = ctrl_.theta[p];
    th.theta_min = eff_theta_min(p);
    if (control_decision(r, z, th) != 0) return false;
    // an "empty GREEN" switch honors the guaranteed minimum green: the switch
    // instant becomes max(emptying time, theta_min), which (a) bounds the
    // switching frequency -- an instant switch back and forth under constant
    // light demand never terminates (a Zeno loop) -- and (b) keeps every
    // switch time continuous in the parameters, which the gradient estimator
    // relies on (an instant rule flips discontinuously with burst timing)
    if (r == Region::X2 && z < th.theta_min) return false;
    return true;
  }

  void do_switch(NodeId n, const double* tau) {
    node_touched_[n] = 1;
    PhaseId old_p = enabled_phase(n);
    phase_pos_[n] = (phase_pos_[n] + 1) % static_cast<int>(net_.nodes[n].phases.size());
    PhaseId new_p = enabled_phase(n);
    z_start_[n] = t_;
    std::copy(tau, tau + np_, tau_act_[n].begin());
    log_event(EventKind::PhaseSwitch, new_p, static_cast<double>(old_p));
    for (QueueId q : net_.nodes[n].queues) {
      int nv = queue_signal(net_, new_p, q);
      if (nv != v_[q]) {
        v_[q] = nv;
        log_event(nv ? EventKind::RedToGreen : EventKind::GreenToRed, q, 0.0);
      }
    }
    sync(tau);
  }

  void eval_controllers(const double* tau) {
    for (int guard = 0; guard < 64; ++guard) {
      bool switched = false;
      for (NodeId n = 0; n < static_cast<NodeId>(net_.nodes.size()); ++n)
        if (should_switch(n)) {
          const double* use = tau;
          if (tau != zeros_.data() && !node_touched_[n]) {
            // coincident with the dispatched event but not induced by it:
            // this is the node's own clock guard firing, so its switch time
            // moves with the corresponding clock bound instead
            std::copy(tau_act_[n].begin(), tau_act_[n].end(), tau_own_.begin());
            Region r = node_region(n);
            PhaseId p = enabled_phase(n);
            int comp = r == Region::X4 || r == Region::X2 ? 0 : 1;
            if (!(comp == 0 && ctrl_.theta[p].theta_min < cfg_.min_dwell))
              tau_own_[ParamIndex{p, comp}.flat()] += 1.0;
            use = tau_own_.data();
          }
          do_switch(n, use);
          switched = true;
        }
      if (!switched) { retire_finished_bursts(); return; }
    }
    throw SimAbort("controller switch cascade did not settle (theta_max ~ 0?)");
  }

  // ---- event scan ----------------------------------------------------------

  Cand next_event(double t_stop) {
    Cand best;
    best.t = t_stop;
    auto consider = [&](double t, int cls, EventKind k, int a, int b, int c) {
      if (t > t_stop + kEps) return;
      if (best.valid) {
        if (t > best.t + kEps) return;
        if (t >= best.t - kEps &&
            std::tie(cls, a, b, c) >= std::tie(best.cls, best.a, best.b, best.c))
          return;
        if (t >= best.t - kEps) t = std::min(t, best.t);
      } else if (t > t_stop) {
        return;
      }
      best = {true, t, cls, k, a, b, c};
    };

    const std::size_t nq = x_.size();
    for (std::size_t q = 0; q < nq; ++q) {
      const RateTrace& tr = arr_.traces[q];
      if (exo_idx_[q] + 1 < tr.times.size())
        consider(tr.times[exo_idx_[q] + 1], 0, EventKind::ExoJump, static_cast<int>(q), -1, -1);
    }

    for (std::size_t q = 0; q < nq; ++q) {
      double xd = xdot_[q];
      if (xd == 0) continue;
      const Queue& qq = net_.queues[q];
      if (xd > 0 && std::isfinite(qq.capacity) && !at_cap_[q]) {
        // a queue already sitting at capacity (e.g. a coalesced simultaneous
        // crossing) must fire now rather than be skipped
        double gap = qq.capacity - x_[q];
        consider(gap > 1e-12 ? t_ + gap / xd : t_, 1, EventKind::HitCapacity, static_cast<int>(q), -1, -1);
      }
      if (ctrl_.type == CtrlType::Adaptive) {
        double s = ctrl_.theta[enabled_phase(qq.node)].s;
        if (s > 1e-12) {
          if (xd < 0 && x_[q] > s + 1e-12)
            consider(t_ + (x_[q] - s) / -xd, 3, EventKind::DownThreshold, static_cast<int>(q), -1, -1);
          if (xd > 0 && x_[q] < s - 1e-12)
            consider(t_ + (s - x_[q]) / xd, 3, EventKind::UpThreshold, static_cast<int>(q), -1, -1);
        }
      }
      if (xd < 0 && x_[q] > 1e-12)
        consider(t_ + x_[q] / -xd, 3, EventKind::HitEmpty, static_cast<int>(q), -1, -1);
      else if (xd < 0 && in_nep_[q])
        // at (or fractionally past) zero with the NEP still open: two queues
        // crossed simultaneously and only the first was dispatched — fire now
        consider(t_, 3, EventKind::HitEmpty, static_cast<int>(q), -1, -1);
    }

    for (NodeId n = 0; n < static_cast<NodeId>(net_.nodes.size()); ++n) {
      PhaseId p = enabled_phase(n);
      double z = clock(n);
      if (ctrl_.type == CtrlType::Adaptive) {
        const PhaseParams& th = ctrl_.theta[p];
        double tmin = eff_theta_min(p);
        if (z < tmin - kEps)
          consider(z_start_[n] + tmin, 2, EventKind::ClockMin, n, -1, -1);
        if (z < th.theta_max - kEps)
          consider(z_start_[n] + th.theta_max, 2, EventKind::ClockMax, n, -1, -1);
      } else {
        consider(z_start_[n] + ctrl_.webster_duration[p], 2, EventKind::WebsterSwitch, n, -1, -1);
      }
    }

    for (std::size_t bi = 0; bi < bursts_.size(); ++bi) {
      const Burst& b = bursts_[bi];
      double f = net_.queues[b.origin].speed;
      for (std::size_t li = 0; li < b.legs.size(); ++li) {
        const BurstLeg& leg = b.legs[li];
        if (leg.tail_joined) continue;
        double slope = 1.0 + cfg_.vehicle_len / f * xdot_[leg.dst];
        double dcur = delay(b.origin, leg.dst);
        if (!leg.head_joined) {
          double gap = dcur - (t_ - b.t_head);
          if (gap <= 1e-12)
            consider(t_, 5, EventKind::BurstJoin, b.origin, static_cast<int>(bi), static_cast<int>(li));
          else if (slope > 1e-12)
            consider(t_ + gap / slope, 5, EventKind::BurstJoin, b.origin, static_cast<int>(bi), static_cast<int>(li));
        } else if (!b.gen_open) {
          double gap = dcur - (t_ - b.t_tail);
          if (gap <= 1e-12)
            consider(t_, 5, EventKind::BurstJoinEnd, b.origin, static_cast<int>(bi), static_cast<int>(li));
          else if (slope > 1e-12)
            consider(t_ + gap / slope, 5, EventKind::BurstJoinEnd, b.origin, static_cast<int>(bi), static_cast<int>(li));
        }
      }
    }
    return best;
  }

  // ---- event dispatch ------------------------------------------------------

  void grazing(EventKind k, int id) {
    ++degenerate_;
    log_event(k, id, -1.0);  // value -1 marks a skipped derivative contribution
  }

  void dispatch(const Cand& c) {
    double* tau = tau_scratch_.data();
    std::fill(tau_scratch_.begin(), tau_scratch_.end(), 0.0);

    // track which intersections this event actually touches, so that a
    // coincident (same-timestamp) switch elsewhere does not inherit this
    // event's time derivative
    std::fill(node_touched_.begin(), node_touched_.end(), 0);
    switch (c.kind) {
      case EventKind::ClockMin:
      case EventKind::ClockMax:
      case EventKind::WebsterSwitch:
        node_touched_[c.a] = 1;
        break;
      case EventKind::BurstJoin:
      case EventKind::BurstJoinEnd:
        node_touched_[net_.queues[bursts_[c.b].legs[c.c].dst].node] = 1;
        break;
      default:
        node_touched_[net_.queues[c.a].node] = 1;
        break;
    }

    switch (c.kind) {
      case EventKind::ExoJump: {
        const RateTrace& tr = arr_.traces[c.a];
        while (exo_idx_[c.a] + 1 < tr.times.size() && tr.times[exo_idx_[c.a] + 1] <= t_ + kEps)
          exo_idx_[c.a]++;
        log_event(EventKind::ExoJump, c.a, tr.rates[exo_idx_[c.a]]);
        sync(tau);
        break;
      }
      case EventKind::HitCapacity: {
        QueueId q = c.a;
        x_[q] = net_.queues[q].capacity;
        if (cfg_.ipa) {
          auto tp = ipa::crossing_time_derivative(0.0, 0.0, xdot_[q]);
          if (!tp) grazing(c.kind, q);
          else
            for (int i = 0; i < np_; ++i)
              tau[i] = (0.0 - deriv_.row(q)[i]) / (alpha_for_ipa(q) - beta_[q] == 0 ? xdot_[q]
                         : alpha_for_ipa(q) - beta_[q]);
        }
        at_cap_[q] = 1;
        log_event(EventKind::HitCapacity, q, x_[q]);
        sync(tau);
        break;
      }
      case EventKind::ClockMin:
      case EventKind::ClockMax: {
        NodeId n = c.a;
        PhaseId p = enabled_phase(n);
        double bound = c.kind == EventKind::ClockMin ? eff_theta_min(p)
                                                     : ctrl_.theta[p].theta_max;
        z_start_[n] = t_ - bound;  // snap the clock to the bound exactly
        if (cfg_.ipa) {
          std::copy(tau_act_[n].begin(), tau_act_[n].end(), tau_scratch_.begin());
          // when theta_min sits below the dwell floor the bound is the floor,
          // a constant, and the firing time carries no theta_min sensitivity
          bool clamped = c.kind == EventKind::ClockMin &&
                         ctrl_.theta[p].theta_min < cfg_.min_dwell;
          if (!clamped) tau[ParamIndex{p, c.kind == EventKind::ClockMin ? 0 : 1}.flat()] += 1.0;
        }
        log_event(c.kind, p, bound);
        break;
      }
      case EventKind::WebsterSwitch: {
        log_event(c.kind, c.a, 0.0);
        do_switch(c.a, tau);
        break;
      }
      case EventKind::HitEmpty: {
        QueueId q = c.a;
        double xdot_minus = xdot_[q];
        x_[q] = 0.0;
        if (cfg_.ipa && deriv_.row_nonzero(q)) {
          double denom = alpha_for_ipa(q) - beta_[q];
          if (std::abs(denom) < ipa::kGrazingEps) denom = xdot_minus;
          if (std::abs(denom) < ipa::kGrazingEps) grazing(c.kind, q);
          else
            for (int i = 0; i < np_; ++i) tau[i] = -deriv_.row(q)[i] / denom;
        }
        log_event(EventKind::HitEmpty, q, 0.0);
        // close the NEP flag first so this sync (and only this one) carries
        // the queue's own discharge transition
        bool was_nep = in_nep_[q];
        in_nep_[q] = 0;
        sync(tau);
        // E_q: the boundary update drives x' to zero, which we pin exactly
        // (the IPA reset property)
        if (was_nep) {
          reset_residual_max_ = std::max(reset_residual_max_, deriv_.max_abs_row(q));
          deriv_.reset_row(q, t_);
          log_event(EventKind::NepEnd, q, 0.0);
        }
        break;
      }
      case EventKind::DownThreshold:
      case EventKind::UpThreshold: {
        QueueId q = c.a;
        PhaseId p = enabled_phase(net_.queues[q].node);
        double s = ctrl_.theta[p].s;
        double xdot_minus = xdot_[q];
        x_[q] = s;
        if (cfg_.ipa) {
          double denom = alpha_for_ipa(q) - beta_[q];
          if (std::abs(denom) < ipa::kGrazingEps) denom = xdot_minus;
          if (std::abs(denom) < ipa::kGrazingEps) grazing(c.kind, q);
          else {
            int si = ParamIndex{p, 2}.flat();
            for (int i = 0; i < np_; ++i)
              tau[i] = ((i == si ? 1.0 : 0.0) - deriv_.row(q)[i]) / denom;
          }
        }
        log_event(c.kind, q, s);
        sync(tau);
        break;
      }
      case EventKind::BurstJoin:
      case EventKind::BurstJoinEnd: {
        Burst& b = bursts_[c.b];
        BurstLeg& leg = b.legs[c.c];
        QueueId dst = leg.dst;
        if (cfg_.ipa) {
          double f = net_.queues[b.origin].speed;
          double denom = f + cfg_.vehicle_len * xdot_[dst];
          if (std::abs(denom) < 1e-9) grazing(c.kind, dst);
          else {
            const std::vector<double>& anchor = c.kind == EventKind::BurstJoin ? b.tau_g : b.tau_e;
            double scale = f / denom;
            for (int i = 0; i < np_; ++i)
              tau[i] = scale * (anchor[i] - cfg_.vehicle_len / f * deriv_.row(dst)[i]);
          }
        }
        if (c.kind == EventKind::BurstJoin) leg.head_joined = true;
        else leg.tail_joined = true;
        log_event(c.kind, dst, leg.rate);
        sync(tau);
        break;
      }
      default:
        throw SimAbort("unexpected scheduled event kind");
    }
    eval_controllers(tau);
  }

  // ---- invariants ----------------------------------------------------------

  void check_invariants() {
    for (std::size_t q = 0; q < x_.size(); ++q) {
      const Queue& qq = net_.queues[q];
      if (x_[q] < -1e-9 || (std::isfinite(qq.capacity) && x_[q] > qq.capacity + 1e-9))
        ++invariant_violations_;
      if (!downstream_open(static_cast<QueueId>(q)) && beta_[q] != 0.0) ++invariant_violations_;
      if (v_[q] != queue_signal(net_, enabled_phase(qq.node), static_cast<QueueId>(q)))
        ++invariant_violations_;
    }
  }

  // ---- members -------------------------------------------------------------

  const NetworkSpec& net_;
  ControllerSetup ctrl_;
  ArrivalProcess arr_;
  EngineConfig cfg_;
  int np_ = 0;

  double t_ = 0;
  std::vector<double> x_, alpha_, beta_, xdot_, shed_rate_;
  std::vector<char> at_cap_, in_nep_, v_;
  std::vector<QueueTotals> totals_;
  std::vector<std::size_t> exo_idx_;
  std::vector<int> phase_pos_;
  std::vector<double> z_start_;
  std::vector<long> burst_seq_;
  std::vector<Burst> bursts_;
  std::vector<std::vector<std::pair<int, int>>> legs_into_;

  ipa::DerivState deriv_;
  std::vector<double> zeros_, tau_scratch_, tau_own_;
  std::vector<double> alpha_before_;
  std::vector<char> node_touched_;
  std::vector<std::vector<double>> tau_act_;
  std::vector<ipa::RateWindow> rate_windows_;
  std::vector<double> last_alpha_seen_;

  std::vector<double> xdot_before_, beta_before_;

  double window_begin_ = 0;
  std::vector<double> mark_int_x_;
  double mark_exits_ = 0, mark_out_ = 0;

  std::uint64_t events_ = 0;
  std::uint64_t hash_ = 1469598103934665603ull;
  long degenerate_ = 0;
  long invariant_violations_ = 0;
  double reset_residual_max_ = 0;
  std::vector<LogRecord> log_, traj_;
};

}  // namespace tlc
