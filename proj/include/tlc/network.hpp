#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace tlc {

using QueueId = int;
using PhaseId = int;   // global phase index across all intersections
using NodeId = int;

inline constexpr double kInfCapacity = std::numeric_limits<double>::infinity();

enum class Orientation { East, South, West, North };
enum class TurnDir { Straight, Left, Right };

inline const char* to_string(Orientation o) {
  switch (o) {
    case Orientation::East: return "E";
    case Orientation::South: return "S";
    case Orientation::West: return "W";
    case Orientation::North: return "N";
  }
  return "?";
}

inline const char* to_string(TurnDir d) {
  switch (d) {
    case TurnDir::Straight: return "straight";
    case TurnDir::Left: return "left";
    case TurnDir::Right: return "right";
  }
  return "?";
}

// A traffic stream identified by where it comes from and where it turns.
struct Movement {
  Orientation origin = Orientation::West;
  TurnDir dir = TurnDir::Straight;
  bool controllable = true;
};

// Fluid buffer on a lane segment. `speed` is the free-flow speed of bursts
// departing this queue; `capacity` may be infinite (entry queues by default).
struct Queue {
  QueueId id = -1;
  NodeId node = -1;                    // intersection the queue discharges into
  std::string name;
  std::vector<Movement> movements;
  double capacity = kInfCapacity;      // vehicles
  double length = 300.0;               // meters
  double weight = 1.0;
  double speed = 10.0;                 // m/s
  std::vector<QueueId> downstream;     // sorted, unique
  std::vector<QueueId> upstream;       // derived, sorted

  bool is_entry() const { return upstream.empty(); }
  bool has_controllable() const {
    for (const auto& m : movements)
      if (m.controllable) return true;
    return false;
  }
};

struct Phase {
  PhaseId id = -1;
  NodeId node = -1;
  std::vector<QueueId> queues;         // enabled queue set Q_p
};

struct Intersection {
  NodeId id = -1;
  std::vector<QueueId> queues;
  std::vector<PhaseId> phases;         // cyclic activation order
};

// Per-queue split of departing flow over downstream queues; the remainder
// (1 - sum) leaves the network.
struct TurnRatioTable {
  // ratios[q] maps downstream queue id -> share in [0,1]
  std::vector<std::map<QueueId, double>> ratios;
  std::vector<double> sink_share;

  void resize(std::size_t n) {
    ratios.assign(n, {});
    sink_share.assign(n, 1.0);
  }
  double share(QueueId q, QueueId qd) const {
    auto it = ratios[q].find(qd);
    return it == ratios[q].end() ? 0.0 : it->second;
  }
};

struct NetworkSpec {
  std::vector<Intersection> nodes;
  std::vector<Queue> queues;
  std::vector<Phase> phases;
  TurnRatioTable turn;
  std::vector<QueueId> entry_queues;   // queues with no upstream

  std::size_t num_queues() const { return queues.size(); }
  std::size_t num_phases() const { return phases.size(); }

  void finalize() {
    // Derive upstream sets from downstream lists and collect entry queues.
    for (auto& q : queues) q.upstream.clear();
    for (auto& q : queues) {
      std::sort(q.downstream.begin(), q.downstream.end());
      q.downstream.erase(std::unique(q.downstream.begin(), q.downstream.end()),
                         q.downstream.end());
      for (QueueId d : q.downstream) queues[d].upstream.push_back(q.id);
    }
    entry_queues.clear();
    for (auto& q : queues) {
      std::sort(q.upstream.begin(), q.upstream.end());
      if (q.upstream.empty()) entry_queues.push_back(q.id);
    }
    if (turn.ratios.size() != queues.size()) turn.resize(queues.size());
  }

  // Returns an empty list when the spec is consistent.
  std::vector<std::string> validate(double vehicle_len = 0.0) const;
};

inline std::vector<std::string> NetworkSpec::validate(double vehicle_len) const {
  std::vector<std::string> diags;
  auto complain = [&](std::string msg) { diags.push_back(std::move(msg)); };

  const int nq = static_cast<int>(queues.size());
  for (int i = 0; i < nq; ++i) {
    const Queue& q = queues[i];
    if (q.id != i) complain("queue " + q.name + ": id mismatch");
    if (q.node < 0 || q.node >= static_cast<int>(nodes.size()))
      complain("queue " + q.name + ": dangling intersection reference");
    if (!(q.capacity > 0)) complain("queue " + q.name + ": capacity must be > 0");
    if (!(q.length > 0)) complain("queue " + q.name + ": road length must be > 0");
    if (q.weight < 0) complain("queue " + q.name + ": negative weight");
    if (!(q.speed > 0)) complain("queue " + q.name + ": speed must be > 0");
    if (vehicle_len > 0 && std::isfinite(q.capacity) &&
        q.capacity * vehicle_len > q.length + 1e-9)
      complain("queue " + q.name + ": capacity * vehicle length exceeds road length");
    for (QueueId d : q.downstream)
      if (d < 0 || d >= nq) complain("queue " + q.name + ": dangling downstream reference");
    std::set<std::pair<int, int>> seen;
    for (const auto& m : q.movements) {
      // uniqueness of (orientation, direction) is checked per approach below
      (void)m;
    }
    (void)seen;
  }

  // (orientation, direction) appears at most once per approach of an intersection
  for (const auto& node : nodes) {
    std::set<std::tuple<int, int>> pairs;
    for (QueueId qi : node.queues) {
      if (qi < 0 || qi >= nq) { complain("intersection queue reference out of range"); continue; }
      for (const auto& m : queues[qi].movements) {
        auto key = std::make_tuple(static_cast<int>(m.origin), static_cast<int>(m.dir));
        if (!pairs.insert(key).second)
          complain("intersection " + std::to_string(node.id) + ": movement " +
                   std::string(to_string(m.origin)) + "-" + to_string(m.dir) +
                   " appears in more than one queue");
      }
    }
    if (node.phases.size() < 1) complain("intersection " + std::to_string(node.id) + ": no phases");
  }

  // connectivity symmetry
  for (const auto& q : queues)
    for (QueueId d : q.downstream) {
      if (d < 0 || d >= nq) continue;  // already reported as dangling
      const auto& up = queues[d].upstream;
      if (!std::binary_search(up.begin(), up.end(), q.id))
        complain("connectivity asymmetry between " + q.name + " and " + queues[d].name);
    }

  // phase membership
  for (const auto& p : phases) {
    if (p.queues.empty()) complain("phase " + std::to_string(p.id) + ": empty queue set");
    for (QueueId qi : p.queues) {
      if (qi < 0 || qi >= nq) { complain("phase " + std::to_string(p.id) + ": dangling queue reference"); continue; }
      if (queues[qi].node != p.node)
        complain("phase " + std::to_string(p.id) + ": queue " + queues[qi].name +
                 " belongs to another intersection");
    }
  }
  std::vector<int> phase_hits(nq, 0);
  for (const auto& p : phases)
    for (QueueId qi : p.queues)
      if (qi >= 0 && qi < nq) phase_hits[qi]++;
  for (const auto& q : queues) {
    if (q.has_controllable() && phase_hits[q.id] == 0)
      complain("queue " + q.name + ": has controllable movements but appears in no phase");
    if (!q.has_controllable() && !q.movements.empty() && phase_hits[q.id] > 0)
      complain("queue " + q.name + ": only uncontrollable movements but appears in a phase");
  }

  // turn ratio rows sum to 1 (including the sink share)
  if (turn.ratios.size() == queues.size()) {
    for (const auto& q : queues) {
      double s = turn.sink_share[q.id];
      for (const auto& [d, g] : turn.ratios[q.id]) {
        s += g;
        if (g < -1e-12 || g > 1 + 1e-12)
          complain("queue " + q.name + ": turn ratio out of [0,1]");
        if (!std::binary_search(q.downstream.begin(), q.downstream.end(), d))
          complain("queue " + q.name + ": turn ratio references non-downstream queue");
      }
      if (std::abs(s - 1.0) > 1e-9) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6g", s);
        complain("queue " + q.name + ": ratios sum to " + buf);
      }
    }
  }
  return diags;
}

}  // namespace tlc
