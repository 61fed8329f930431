#pragma once

#include <array>
#include <deque>
#include <optional>
#include <tuple>

#include "tlc/network.hpp"

namespace tlc {

// Compass heading of traffic travelling away from a given origin orientation:
// an approach "from West" carries eastbound traffic, and so on.
enum class Heading { East, South, West, North };

inline Heading heading_from(Orientation o) {
  switch (o) {
    case Orientation::West: return Heading::East;
    case Orientation::East: return Heading::West;
    case Orientation::North: return Heading::South;
    case Orientation::South: return Heading::North;
  }
  return Heading::East;
}

inline Orientation approach_for(Heading h) {
  // side of the next intersection the traffic arrives on
  switch (h) {
    case Heading::East: return Orientation::West;
    case Heading::West: return Orientation::East;
    case Heading::South: return Orientation::North;
    case Heading::North: return Orientation::South;
  }
  return Orientation::West;
}

inline Heading turn(Heading h, TurnDir d) {
  if (d == TurnDir::Straight) return h;
  int i = static_cast<int>(h);
  // Heading enum is ordered clockwise: E, S, W, N. Right = clockwise.
  return static_cast<Heading>(d == TurnDir::Right ? (i + 1) % 4 : (i + 3) % 4);
}

inline std::pair<int, int> delta(Heading h) {
  switch (h) {
    case Heading::East: return {0, 1};
    case Heading::West: return {0, -1};
    case Heading::South: return {1, 0};
    case Heading::North: return {-1, 0};
  }
  return {0, 0};
}

struct GridTemplate {
  double road_length = 300.0;
  double capacity = 48.0;       // internal queues; entries are unbounded
  double speed = 10.0;
  double weight = 1.0;
};

// A directed boundary stub: the grid side where an OD flow enters or leaves.
struct BoundaryEdge {
  NodeId node = -1;
  Orientation side = Orientation::West;  // approach side (entry) / exit side
  bool row = false;                      // true for W/E stubs

  bool operator==(const BoundaryEdge& o) const {
    return node == o.node && side == o.side;
  }
  bool operator<(const BoundaryEdge& o) const {
    return std::tie(node, side) < std::tie(o.node, o.side);
  }
};

struct OdFlow {
  BoundaryEdge origin;      // entry stub (approach side)
  BoundaryEdge exit;        // exit stub (side the flow leaves through)
  double rate = 0.0;        // vehicles/s
};

// Poisson rates per OD group: row-to-row, row-to-column, column-to-row,
// column-to-column.
struct OdGroups {
  double rr = 0.0, rc = 0.0, cr = 0.0, cc = 0.0;
};

// Layout bookkeeping kept alongside a generated grid NetworkSpec.
struct GridLayout {
  int rows = 0, cols = 0;
  GridTemplate tmpl;
  // queue ids per (node, approach): [node][side][0]=left queue, [1]=straight+right
  std::vector<std::array<std::array<QueueId, 2>, 4>> seg_queue;
  std::vector<BoundaryEdge> entries;   // sorted
  std::vector<BoundaryEdge> exits;     // sorted

  NodeId node_at(int r, int c) const { return r * cols + c; }
  bool inside(int r, int c) const { return r >= 0 && r < rows && c >= 0 && c < cols; }
  QueueId queue_of(NodeId n, Orientation side, bool left) const {
    return seg_queue[n][static_cast<int>(side)][left ? 0 : 1];
  }
};

struct GridNetwork {
  NetworkSpec spec;
  GridLayout layout;
};

// m*n intersections wired as parallel arteries. Each approach carries one
// left-turn queue and one straight+right queue; four phases per intersection
// (W/E straight, W/E left, S/N straight, S/N left). Boundary approaches become
// entry queues with unbounded capacity.
inline GridNetwork grid_network(int rows, int cols, double road_length,
                                GridTemplate tmpl = {}) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("grid_network: grid must be at least 1x1");
  if (!(road_length > 0)) throw std::invalid_argument("grid_network: road_length must be > 0");
  tmpl.road_length = road_length;

  GridNetwork g;
  g.layout.rows = rows;
  g.layout.cols = cols;
  g.layout.tmpl = tmpl;

  NetworkSpec& net = g.spec;
  const int N = rows * cols;
  net.nodes.resize(N);
  g.layout.seg_queue.resize(N);

  const Orientation sides[4] = {Orientation::East, Orientation::South,
                                Orientation::West, Orientation::North};

  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      NodeId n = g.layout.node_at(r, c);
      net.nodes[n].id = n;
      for (Orientation side : sides) {
        Heading h = heading_from(side);
        auto [dr, dc] = delta(h);
        bool entry = !g.layout.inside(r - dr, c - dc);  // no upstream neighbor
        for (int li = 0; li < 2; ++li) {
          Queue q;
          q.id = static_cast<QueueId>(net.queues.size());
          q.node = n;
          q.name = "n" + std::to_string(n) + "-" + to_string(side) + (li == 0 ? "-L" : "-SR");
          q.length = road_length;
          q.speed = tmpl.speed;
          q.weight = tmpl.weight;
          q.capacity = entry ? kInfCapacity : tmpl.capacity;
          if (li == 0) {
            q.movements = {{side, TurnDir::Left, true}};
          } else {
            q.movements = {{side, TurnDir::Straight, true}, {side, TurnDir::Right, false}};
          }
          g.layout.seg_queue[n][static_cast<int>(side)][li] = q.id;
          net.nodes[n].queues.push_back(q.id);
          net.queues.push_back(std::move(q));
        }
        if (entry)
          g.layout.entries.push_back({n, side, side == Orientation::West || side == Orientation::East});
      }
    }

  // wire downstream sets
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      NodeId n = g.layout.node_at(r, c);
      for (Orientation side : sides) {
        Heading in = heading_from(side);
        for (int li = 0; li < 2; ++li) {
          Queue& q = net.queues[g.layout.seg_queue[n][static_cast<int>(side)][li]];
          for (const auto& m : q.movements) {
            Heading out = turn(in, m.dir);
            auto [dr, dc] = delta(out);
            if (g.layout.inside(r + dr, c + dc)) {
              NodeId v = g.layout.node_at(r + dr, c + dc);
              Orientation ap = approach_for(out);
              q.downstream.push_back(g.layout.queue_of(v, ap, true));
              q.downstream.push_back(g.layout.queue_of(v, ap, false));
            }
          }
        }
      }
    }

  // phases: (W/E straight+right), (W/E left), (S/N straight+right), (S/N left)
  for (int n = 0; n < N; ++n) {
    auto add_phase = [&](std::vector<QueueId> qs) {
      Phase p;
      p.id = static_cast<PhaseId>(net.phases.size());
      p.node = n;
      p.queues = std::move(qs);
      net.nodes[n].phases.push_back(p.id);
      net.phases.push_back(std::move(p));
    };
    auto qid = [&](Orientation s, bool left) { return g.layout.queue_of(n, s, left); };
    add_phase({qid(Orientation::West, false), qid(Orientation::East, false)});
    add_phase({qid(Orientation::West, true), qid(Orientation::East, true)});
    add_phase({qid(Orientation::South, false), qid(Orientation::North, false)});
    add_phase({qid(Orientation::South, true), qid(Orientation::North, true)});
  }

  // exit stubs: headings that leave the grid
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      for (Heading h : {Heading::East, Heading::South, Heading::West, Heading::North}) {
        auto [dr, dc] = delta(h);
        if (!g.layout.inside(r + dr, c + dc)) {
          bool row = h == Heading::East || h == Heading::West;
          // identify the exit stub by the side of the node it leaves through
          Orientation side = h == Heading::East   ? Orientation::East
                             : h == Heading::West ? Orientation::West
                             : h == Heading::South ? Orientation::South
                                                   : Orientation::North;
          g.layout.exits.push_back({g.layout.node_at(r, c), side, row});
        }
      }
  std::sort(g.layout.entries.begin(), g.layout.entries.end());
  std::sort(g.layout.exits.begin(), g.layout.exits.end());

  net.finalize();
  return g;
}

inline Heading exit_heading(const BoundaryEdge& e) {
  switch (e.side) {
    case Orientation::East: return Heading::East;
    case Orientation::West: return Heading::West;
    case Orientation::South: return Heading::South;
    case Orientation::North: return Heading::North;
  }
  return Heading::East;
}

// One OD flow per ordered pair of distinct boundary stubs. A stub used both
// ways (entry and its own exit twin) is excluded as a U-turn.
inline std::vector<OdFlow> expand_od_groups(const GridLayout& lay, const OdGroups& g) {
  std::vector<OdFlow> flows;
  for (const auto& in : lay.entries)
    for (const auto& out : lay.exits) {
      if (in.node == out.node && in.side == out.side) continue;  // same stub
      double rate = in.row ? (out.row ? g.rr : g.rc) : (out.row ? g.cr : g.cc);
      if (rate <= 0) continue;
      flows.push_back({in, out, rate});
    }
  return flows;
}

// Deterministic shortest route from an entry stub to an exit stub over the
// queue graph. BFS over (node, heading) states; expansion order prefers
// straight, then right, then left, which fixes ties reproducibly.
// Returns the queue sequence traversed, or nullopt when no route exists.
inline std::optional<std::vector<QueueId>> route_od(const GridLayout& lay,
                                                    const BoundaryEdge& origin,
                                                    const BoundaryEdge& exit) {
  struct State { NodeId n; Heading h; };
  auto key = [&](NodeId n, Heading h) { return n * 4 + static_cast<int>(h); };
  const int S = lay.rows * lay.cols * 4;
  std::vector<int> prev_state(S, -2);      // -2 unvisited, -1 start
  std::vector<TurnDir> prev_turn(S, TurnDir::Straight);

  Heading h0 = heading_from(origin.side);
  std::deque<State> bfs;
  bfs.push_back({origin.node, h0});
  prev_state[key(origin.node, h0)] = -1;

  const TurnDir prefs[3] = {TurnDir::Straight, TurnDir::Right, TurnDir::Left};
  int goal = -1;
  TurnDir goal_turn = TurnDir::Straight;
  while (!bfs.empty() && goal < 0) {
    State s = bfs.front();
    bfs.pop_front();
    int r = s.n / lay.cols, c = s.n % lay.cols;
    for (TurnDir d : prefs) {
      Heading h2 = turn(s.h, d);
      auto [dr, dc] = delta(h2);
      if (!lay.inside(r + dr, c + dc)) {
        Heading eh = exit_heading(exit);
        if (s.n == exit.node && h2 == eh) {
          goal = key(s.n, s.h);
          goal_turn = d;
          break;
        }
        continue;
      }
      NodeId v = lay.node_at(r + dr, c + dc);
      int k = key(v, h2);
      if (prev_state[k] == -2) {
        prev_state[k] = key(s.n, s.h);
        prev_turn[k] = d;
        bfs.push_back({v, h2});
      }
    }
  }
  if (goal < 0) return std::nullopt;

  // walk back, collecting the maneuver taken at each node
  std::vector<std::pair<int, TurnDir>> steps;  // (state key, turn taken there)
  steps.push_back({goal, goal_turn});
  int cur = goal;
  while (prev_state[cur] != -1) {
    steps.push_back({prev_state[cur], prev_turn[cur]});
    cur = prev_state[cur];
  }
  std::reverse(steps.begin(), steps.end());

  std::vector<QueueId> path;
  for (auto [k, d] : steps) {
    NodeId n = k / 4;
    Heading h = static_cast<Heading>(k % 4);
    path.push_back(lay.queue_of(n, approach_for(h), d == TurnDir::Left));
  }
  return path;
}

struct RoutedDemand {
  TurnRatioTable turn;
  std::vector<double> queue_flow;                    // mean vehicles/s through each queue
  std::vector<std::pair<std::vector<QueueId>, double>> paths;  // queue path + rate per OD
};

// Accumulate turn ratios from explicit (path, rate) assignments. Rows sum to 1
// with the remainder booked as sink share; unused queues are pure sinks.
inline RoutedDemand ratios_from_paths(
    const NetworkSpec& net,
    const std::vector<std::pair<std::vector<QueueId>, double>>& paths) {
  RoutedDemand out;
  out.paths = paths;
  const std::size_t nq = net.num_queues();
  out.queue_flow.assign(nq, 0.0);
  std::vector<std::map<QueueId, double>> flow(nq);
  std::vector<double> sink_flow(nq, 0.0);
  for (const auto& [path, rate] : paths) {
    for (std::size_t i = 0; i < path.size(); ++i) {
      out.queue_flow[path[i]] += rate;
      if (i + 1 < path.size())
        flow[path[i]][path[i + 1]] += rate;
      else
        sink_flow[path[i]] += rate;
    }
  }
  out.turn.resize(nq);
  for (std::size_t q = 0; q < nq; ++q) {
    if (out.queue_flow[q] <= 0) continue;  // no flow: full sink share
    double tot = out.queue_flow[q];
    double assigned = 0.0;
    for (const auto& [d, f] : flow[q]) {
      out.turn.ratios[q][d] = f / tot;
      assigned += f / tot;
    }
    out.turn.sink_share[q] = 1.0 - assigned;
  }
  return out;
}

// Route every OD flow over its deterministic shortest path and derive the
// turn ratio table. Throws when an OD pair has no route.
inline RoutedDemand derive_turn_ratios(const GridLayout& lay, const NetworkSpec& net,
                                       const std::vector<OdFlow>& flows) {
  std::vector<std::pair<std::vector<QueueId>, double>> paths;
  for (const auto& f : flows) {
    auto p = route_od(lay, f.origin, f.exit);
    if (!p)
      throw std::runtime_error("derive_turn_ratios: no route for OD pair at nodes " +
                               std::to_string(f.origin.node) + " -> " +
                               std::to_string(f.exit.node));
    paths.push_back({std::move(*p), f.rate});
  }
  return ratios_from_paths(net, paths);
}

}  // namespace tlc
