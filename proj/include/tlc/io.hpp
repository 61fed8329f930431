#pragma once

#include <filesystem>
#include <fstream>

#include "tlc/scenario.hpp"

namespace tlc {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  return out;
}

inline void write_event_log_csv(const std::filesystem::path& p,
                                const std::vector<LogRecord>& log) {
  auto out = open_out(p);
  out << "time,event_kind,id,value\n";
  for (const auto& r : log)
    out << fmt(r.t) << ',' << to_string(r.kind) << ',' << r.id << ',' << fmt(r.value) << '\n';
}

inline void write_trajectory_csv(const std::filesystem::path& p,
                                 const std::vector<LogRecord>& traj) {
  auto out = open_out(p);
  out << "time,queue,x\n";
  for (const auto& r : traj)
    out << fmt(r.t) << ',' << r.id << ',' << fmt(r.value) << '\n';
}

inline json metrics_json(const NetworkSpec& net, const MetricsReport& m,
                         const std::vector<QueueTotals>& tot) {
  json j;
  j["horizon"] = m.horizon;
  j["mean_queue_cost"] = m.mean_queue_cost;
  j["mean_waiting_time"] = m.mean_waiting_time;
  j["no_departures"] = m.no_departures;
  j["time_distance_ratio"] = m.time_distance_ratio;
  j["network_exits"] = m.exits;
  j["total_in"] = m.total_in;
  j["total_out"] = m.total_out;
  j["total_shed"] = m.total_shed;
  j["events"] = m.events;
  j["log_hash"] = m.log_hash;
  json per;
  for (std::size_t q = 0; q < tot.size(); ++q) {
    json e;
    e["queue"] = net.queues[q].name;
    e["cum_in"] = tot[q].cum_in;
    e["cum_out"] = tot[q].cum_out;
    e["cum_shed"] = tot[q].cum_shed;
    e["int_x"] = tot[q].int_x;
    e["x_final"] = tot[q].x_final;
    e["neps"] = tot[q].neps;
    e["conservation_residual"] = conservation_residual(tot[q]);
    per.push_back(e);
  }
  j["queues"] = per;
  return j;
}

inline std::string param_label(const NetworkSpec& net, int flat) {
  ParamIndex pi = ParamIndex::from_flat(flat);
  const char* comp = pi.comp == 0 ? "theta_min" : pi.comp == 1 ? "theta_max" : "s";
  return "n" + std::to_string(net.phases[pi.phase].node) + ".p" + std::to_string(pi.phase) +
         "." + comp;
}

inline json gradient_json(const NetworkSpec& net, long window, const std::vector<double>& g) {
  json j;
  j["window"] = window;
  json m;
  for (std::size_t i = 0; i < g.size(); ++i) m[param_label(net, static_cast<int>(i))] = g[i];
  j["dL_dtheta"] = m;
  return j;
}

inline void write_history_csv(const std::filesystem::path& p, const NetworkSpec& net,
                              const std::vector<IterationRecord>& hist,
                              const std::function<std::string(const IterationRecord&)>& extra_col = {},
                              const std::string& extra_header = {}) {
  auto out = open_out(p);
  out << "window,t_end,cost,wait,grad_norm";
  for (std::size_t p2 = 0; p2 < net.num_phases(); ++p2)
    out << ",p" << p2 << "_min,p" << p2 << "_max,p" << p2 << "_s";
  if (!extra_header.empty()) out << ',' << extra_header;
  out << '\n';
  for (const auto& r : hist) {
    out << r.window << ',' << fmt(r.t_end) << ',' << fmt(r.cost) << ',' << fmt(r.wait) << ','
        << fmt(r.grad_norm);
    for (const auto& th : r.theta)
      out << ',' << fmt(th.theta_min) << ',' << fmt(th.theta_max) << ',' << fmt(th.s);
    if (extra_col) out << ',' << extra_col(r);
    out << '\n';
  }
}

// Ordinary least squares of y on x; returns (slope, intercept, r_squared).
inline std::tuple<double, double, double> linear_fit(const std::vector<double>& x,
                                                     const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) return {0, 0, 0};
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
    syy += y[i] * y[i];
  }
  double den = n * sxx - sx * sx;
  if (std::abs(den) < 1e-15) return {0, sy / n, 0};
  double slope = (n * sxy - sx * sy) / den;
  double icpt = (sy - slope * sx) / n;
  double ss_res = 0, ss_tot = 0, ym = sy / n;
  for (std::size_t i = 0; i < n; ++i) {
    double f = slope * x[i] + icpt;
    ss_res += (y[i] - f) * (y[i] - f);
    ss_tot += (y[i] - ym) * (y[i] - ym);
  }
  double r2 = ss_tot > 1e-15 ? 1.0 - ss_res / ss_tot : 1.0;
  return {slope, icpt, r2};
}

}  // namespace tlc
