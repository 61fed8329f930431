#pragma once

#include "tlc/metrics.hpp"

namespace tlc {

struct OptimizerConfig {
  double window = 250.0;          // seconds per gradient window; short windows
                                  // keep the sample gradient tightly
                                  // concentrated (long ones let switch-time
                                  // sensitivities compound through the
                                  // network and the variance blows up)
  double rho0_time = 5.0;         // base step for theta_min / theta_max
  double rho0_thresh = 2.0;       // base step for s
  double theta_max_cap = 120.0;   // keep cycle parameters in a sane box
  double s_cap = 60.0;
  double theta_min_floor = 1.0;   // matches the engine dwell floor; below it
                                  // theta_min is inert (no gradient signal)
  double min_gap = 1.0;           // enforced theta_max - theta_min >= gap
  int divergence_patience = 5;    // consecutive windows above the abort bar
  double divergence_factor = 10.0;
  double grad_clip = 5.0;         // per-component clip; congested windows can
                                  // spike the sample gradient by orders of
                                  // magnitude (0 disables)
};

// Project onto the feasible set: componentwise nonnegative, bounded above,
// and theta_max >= theta_min + gap (theta_max yields).
inline std::vector<PhaseParams> project_params(std::vector<PhaseParams> th,
                                               const OptimizerConfig& cfg = {}) {
  for (auto& p : th) {
    p.theta_min = std::clamp(p.theta_min, cfg.theta_min_floor, cfg.theta_max_cap);
    p.theta_max = std::clamp(p.theta_max, 0.0, cfg.theta_max_cap);
    p.s = std::clamp(p.s, 0.0, cfg.s_cap);
    if (p.theta_max < p.theta_min + cfg.min_gap) p.theta_max = p.theta_min + cfg.min_gap;
  }
  return th;
}

// One projected gradient-descent step with per-component-class step sizes
// rho_l = rho0 / sqrt(l), l >= 1.
inline std::vector<PhaseParams> descent_step(const std::vector<PhaseParams>& th,
                                             const std::vector<double>& grad, long l,
                                             const OptimizerConfig& cfg = {}) {
  std::vector<PhaseParams> out = th;
  double scale = 1.0 / std::sqrt(static_cast<double>(std::max(l, 1l)));
  for (std::size_t p = 0; p < th.size(); ++p)
    for (int c = 0; c < 3; ++c) {
      double rho = (c == 2 ? cfg.rho0_thresh : cfg.rho0_time) * scale;
      double g = grad[ParamIndex{static_cast<PhaseId>(p), c}.flat()];
      if (cfg.grad_clip > 0) g = std::clamp(g, -cfg.grad_clip, cfg.grad_clip);
      out[p].comp(c) = th[p].comp(c) - rho * g;
    }
  return project_params(out, cfg);
}

struct IterationRecord {
  long window = 0;
  double t_end = 0;
  double cost = 0;
  double wait = 0;
  double grad_norm = 0;
  std::vector<double> grad;
  std::vector<PhaseParams> theta;
};

struct OptimizeResult {
  std::vector<IterationRecord> history;
  std::vector<PhaseParams> theta_final;
  bool diverged = false;
};

// Online loop: run the engine window by window, closing a gradient window and
// stepping theta at each boundary. Derivative state persists across windows;
// cost accumulators reset. `freeze` disables updates (evaluation-only runs).
inline OptimizeResult online_optimize(SimEngine& eng, double horizon,
                                      const OptimizerConfig& cfg = {}, bool freeze = false,
                                      const std::function<void(const IterationRecord&)>& on_window = {}) {
  OptimizeResult res;
  long windows = static_cast<long>(std::llround(horizon / cfg.window));
  double first_cost = -1;
  int bad = 0;
  for (long l = 1; l <= windows; ++l) {
    eng.run_until(static_cast<double>(l) * cfg.window);
    auto grad = eng.finalize_window();
    WindowStats ws = eng.window_stats();
    eng.mark_window();

    IterationRecord rec;
    rec.window = l;
    rec.t_end = eng.time();
    rec.cost = ws.cost;
    rec.wait = ws.wait;
    for (double g : grad) rec.grad_norm += g * g;
    rec.grad_norm = std::sqrt(rec.grad_norm);

    if (!freeze) {
      eng.set_theta(descent_step(eng.theta(), grad, l, cfg));
    }
    rec.grad = std::move(grad);
    rec.theta = eng.theta();
    res.history.push_back(rec);
    if (on_window) on_window(rec);

    if (first_cost < 0 && ws.cost > 0) first_cost = ws.cost;
    if (first_cost > 0 && ws.cost > cfg.divergence_factor * first_cost) {
      if (++bad >= cfg.divergence_patience) {
        res.diverged = true;
        break;
      }
    } else {
      bad = 0;
    }
  }
  res.theta_final = eng.theta();
  return res;
}

}  // namespace tlc
