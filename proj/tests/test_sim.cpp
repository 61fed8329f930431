#include <doctest.h>

#include "tlc/metrics.hpp"

#include "helpers.hpp"

using namespace tlc;
using namespace tlc::testing;

namespace {

// n_feeders single-queue intersections all discharging into one target queue,
// every light permanently green. Feeder i gets share[i] of its own outflow
// routed to the target.
NetworkSpec fan_in_network(int n_feeders, const std::vector<double>& share) {
  NetworkSpec net;
  net.nodes.resize(n_feeders + 1);
  for (int i = 0; i <= n_feeders; ++i) {
    net.nodes[i].id = i;
    Queue q;
    q.id = i;
    q.node = i;
    q.name = "q" + std::to_string(i);
    q.movements = {{Orientation::West, TurnDir::Straight, true}};
    if (i < n_feeders) q.downstream = {n_feeders};
    net.nodes[i].queues = {i};
    Phase p;
    p.id = i;
    p.node = i;
    p.queues = {i};
    net.nodes[i].phases = {i};
    net.phases.push_back(p);
    net.queues.push_back(std::move(q));
  }
  net.finalize();
  for (int i = 0; i < n_feeders; ++i) {
    net.turn.ratios[i][n_feeders] = share[i];
    net.turn.sink_share[i] = 1.0 - share[i];
  }
  return net;
}

}  // namespace

TEST_CASE("departure rate: saturation when queued, zero on red") {
  NetworkSpec net = chain_network({.n = 1, .phases_per_node = 2});
  QueueId q0 = chain_queue(net, 0);
  SUBCASE("green and queued discharges at H = 1.3") {
    SimEngine eng(net, adaptive(net), const_arrivals(net, q0, 2.0), {});
    eng.run_until(10.0);
    CHECK(eng.queue_content(q0) == doctest::Approx(7.0));  // (2 - 1.3) * 10
    CHECK(eng.departure_rate(q0) == doctest::Approx(1.3));
  }
  SUBCASE("red light means zero departures") {
    ControllerSetup ctrl;
    ctrl.type = CtrlType::Webster;
    ctrl.webster_duration = {5.0, 1e6};  // green 5 s, then red for good
    SimEngine eng(net, ctrl, const_arrivals(net, q0, 0.5), {});
    eng.run_until(20.0);
    CHECK(eng.signal(q0) == 0);
    CHECK(eng.departure_rate(q0) == 0.0);
    CHECK(eng.queue_content(q0) == doctest::Approx(0.5 * 15.0));
  }
}

TEST_CASE("arrival superposition: burst at recorded rate times gamma") {
  NetworkSpec net = fan_in_network(2, {0.5, 0.5});
  ArrivalProcess arr = const_arrivals(net, 0, 2.0);
  SimEngine eng(net, adaptive(net), arr, {});
  eng.run_until(35.0);  // join after Delta = 300/10 = 30 s
  CHECK(eng.arrival_rate(2) == doctest::Approx(0.65));  // 0.5 * 1.3
  CHECK(eng.arrival_rate(1) == 0.0);                    // no inbound bursts
}

TEST_CASE("transit delay tracks downstream content") {
  // two saturated feeders make the target grow at 2.6 - 1.3 = 1.3 veh/s
  NetworkSpec net = fan_in_network(2, {1.0, 1.0});
  ArrivalProcess arr = const_arrivals(net, 0, 2.0);
  arr.traces[1] = arr.traces[0];
  SimEngine eng(net, adaptive(net), arr, {});
  eng.run_until(30.0);
  CHECK(eng.queue_content(2) == doctest::Approx(0.0));
  CHECK(eng.delay(0, 2) == doctest::Approx(30.0));  // empty road: L/f
  eng.run_until(30.0 + 20.0 / 1.3);
  CHECK(eng.queue_content(2) == doctest::Approx(20.0));
  CHECK(eng.delay(0, 2) == doctest::Approx(20.0));  // (300 - 100)/10
  eng.run_until(30.0 + 60.0 / 1.3);
  CHECK(eng.delay(0, 2) == doctest::Approx(0.0).epsilon(1e-9));  // road full
}

TEST_CASE("burst join solves the moving-target linear root") {
  // feeders 0 and 1 join at t = 30 and start filling the target at 1.3 veh/s;
  // feeder 2 starts at t = 15, so its head must catch Delta shrinking at 0.65:
  // t - 15 = 30 - 0.65 (t - 30)  =>  t = 64.5 / 1.65 = 39.0909...
  NetworkSpec net = fan_in_network(3, {1.0, 1.0, 1.0});
  ArrivalProcess arr = const_arrivals(net, 0, 2.0);
  arr.traces[1] = arr.traces[0];
  arr.traces[2].times = {0.0, 15.0};
  arr.traces[2].rates = {0.0, 2.0};
  EngineConfig cfg;
  cfg.record_log = true;
  SimEngine eng(net, adaptive(net), arr, cfg);
  eng.run_until(50.0);
  std::vector<double> join_times;
  for (const auto& r : eng.log())
    if (r.kind == EventKind::BurstJoin && r.id == 3) join_times.push_back(r.t);
  REQUIRE(join_times.size() == 3);
  CHECK(join_times[0] == doctest::Approx(30.0));
  CHECK(join_times[1] == doctest::Approx(30.0));
  CHECK(join_times[2] == doctest::Approx(64.5 / 1.65).epsilon(1e-9));
}

TEST_CASE("clock guards fire at exact thresholds; zero demand has only signal events") {
  NetworkSpec net = chain_network({.n = 1, .phases_per_node = 2});
  ControllerSetup ctrl = adaptive(net, PhaseParams{20, 40, 0});
  EngineConfig cfg;
  cfg.record_log = true;
  SimEngine eng(net, ctrl, ArrivalProcess::zeros(net.num_queues()), cfg);
  eng.run_until(200.0);
  bool saw_min = false, saw_max = false;
  for (const auto& r : eng.log()) {
    switch (r.kind) {
      case EventKind::ClockMin:
        saw_min = true;
        CHECK(std::fmod(r.t, 20.0) == doctest::Approx(0.0));
        break;
      case EventKind::ClockMax:
        saw_max = true;
        CHECK(std::fmod(r.t, 40.0) == doctest::Approx(0.0));
        break;
      case EventKind::PhaseSwitch:
      case EventKind::RedToGreen:
      case EventKind::GreenToRed:
        break;
      default:
        FAIL("unexpected event kind in an empty network: ", to_string(r.kind));
    }
  }
  CHECK(saw_min);
  CHECK(saw_max);
  for (std::size_t q = 0; q < net.num_queues(); ++q)
    CHECK(eng.queue_content(static_cast<QueueId>(q)) == 0.0);
}

TEST_CASE("queue drains to the empty event at the exact linear root") {
  NetworkSpec net = chain_network({.n = 1});
  ArrivalProcess arr = const_arrivals(net, 0, 2.3);
  arr.traces[0].times = {0.0, 10.0};
  arr.traces[0].rates = {2.3, 0.0};
  EngineConfig cfg;
  cfg.record_log = true;
  SimEngine eng(net, adaptive(net), arr, cfg);
  eng.run_until(30.0);
  double t_empty = -1;
  int neps = 0;
  for (const auto& r : eng.log()) {
    if (r.kind == EventKind::HitEmpty) t_empty = r.t;
    if (r.kind == EventKind::NepStart) ++neps;
  }
  CHECK(t_empty == doctest::Approx(10.0 + 10.0 / 1.3).epsilon(1e-12));
  CHECK(neps == 1);
  CHECK(eng.queue_content(0) == 0.0);
}

TEST_CASE("undersaturated pass-through never queues") {
  NetworkSpec net = chain_network({.n = 1});
  SimEngine eng(net, adaptive(net), const_arrivals(net, 0, 0.5), {});
  eng.run_until(1000.0);
  const auto& tot = eng.totals();
  CHECK(tot[0].cum_out == doctest::Approx(500.0));
  CHECK(tot[0].int_x == 0.0);
  CHECK(tot[0].neps == 0);
}

TEST_CASE("capacity, blocking and shed accounting on a throttled chain") {
  NetworkSpec net = chain_network({.n = 2, .phases_per_node = 2, .capacity = 2.0});
  QueueId q0 = chain_queue(net, 0), q1 = chain_queue(net, 1);
  ControllerSetup ctrl;
  ctrl.type = CtrlType::Webster;
  // node 0 keeps q0 green forever; node 1 goes red almost immediately
  ctrl.webster_duration.assign(net.num_phases(), 1.0);
  ctrl.webster_duration[net.nodes[0].phases[0]] = 1e9;
  ctrl.webster_duration[net.nodes[1].phases[0]] = 1e-3;
  ctrl.webster_duration[net.nodes[1].phases[1]] = 1e9;
  EngineConfig cfg;
  cfg.record_log = true;
  cfg.invariant_checks = true;
  SimEngine eng(net, ctrl, const_arrivals(net, q0, 2.0), cfg);
  eng.run_until(120.0);

  CHECK(eng.queue_content(q1) == doctest::Approx(2.0));
  CHECK(eng.departure_rate(q0) == 0.0);  // blocked by the full downstream queue
  CHECK(eng.invariant_violations() == 0);
  bool hit_cap = false;
  for (const auto& r : eng.log())
    if (r.kind == EventKind::HitCapacity && r.id == q1) hit_cap = true;
  CHECK(hit_cap);
  const auto& tot = eng.totals();
  CHECK(tot[q1].cum_shed > 1.0);  // burst tail kept flowing into the full queue
  CHECK(std::abs(conservation_residual(tot[q1])) < 1e-9 * 120.0);
  CHECK(std::abs(conservation_residual(tot[q0])) < 1e-9 * 120.0);
}

TEST_CASE("bursts join in generation order (FIFO)") {
  NetworkSpec net = chain_network({.n = 2});
  QueueId q0 = chain_queue(net, 0), q1 = chain_queue(net, 1);
  ArrivalProcess arr = ArrivalProcess::zeros(net.num_queues());
  arr.traces[q0].times = {0.0, 40.0, 50.0};
  arr.traces[q0].rates = {0.5, 0.0, 0.5};
  EngineConfig cfg;
  cfg.record_log = true;
  SimEngine eng(net, adaptive(net), arr, cfg);
  eng.run_until(120.0);
  std::vector<std::pair<double, EventKind>> burst_events;
  for (const auto& r : eng.log())
    if ((r.kind == EventKind::BurstJoin || r.kind == EventKind::BurstJoinEnd) && r.id == q1)
      burst_events.push_back({r.t, r.kind});
  REQUIRE(burst_events.size() == 3);  // second burst's tail never closes
  CHECK(burst_events[0] == std::pair{30.0, EventKind::BurstJoin});
  CHECK(burst_events[1] == std::pair{70.0, EventKind::BurstJoinEnd});
  CHECK(burst_events[2] == std::pair{80.0, EventKind::BurstJoin});
  // a generation-end induced by the demand dropping to zero happens once
  int gen_ends_by_45 = 0;
  for (const auto& r : eng.log())
    if (r.kind == EventKind::BurstGenEnd && r.id == q0 && r.t < 45.0) ++gen_ends_by_45;
  CHECK(gen_ends_by_45 == 1);
}

TEST_CASE("2x3 grid with Poisson demand: conservation, capacity and determinism") {
  Scenario s = default_grid_scenario();
  const double T = 2000.0;
  EngineConfig cfg = s.make_engine_config();
  cfg.invariant_checks = true;
  std::vector<std::uint64_t> hashes;
  for (int rep = 0; rep < 2; ++rep) {
    SimEngine eng(s.net, s.make_controller(), s.make_arrivals(7, T), cfg);
    eng.run_until(T);
    CHECK(eng.invariant_violations() == 0);
    CHECK(max_conservation_residual(eng.totals()) < 1e-9 * T);
    hashes.push_back(eng.log_hash());
  }
  CHECK(hashes[0] == hashes[1]);  // bit-identical replay
  SimEngine other(s.net, s.make_controller(), s.make_arrivals(8, T), cfg);
  other.run_until(T);
  CHECK(other.log_hash() != hashes[0]);
}
