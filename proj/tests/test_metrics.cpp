#include <doctest.h>

#include "tlc/metrics.hpp"

#include "helpers.hpp"

using namespace tlc;
using namespace tlc::testing;

TEST_CASE("mean queue cost from integral bookkeeping") {
  NetworkSpec net = chain_network({.n = 1});
  std::vector<QueueTotals> tot(net.num_queues());
  SUBCASE("identically empty trace") {
    CHECK(mean_queue_cost(net, tot, 100.0) == 0.0);
  }
  SUBCASE("triangle 0 -> 10 -> 0 over 100 s") {
    tot[0].int_x = 500.0;  // triangle area
    CHECK(mean_queue_cost(net, tot, 100.0) == doctest::Approx(5.0));
  }
  SUBCASE("doubling weights doubles the cost exactly") {
    tot[0].int_x = 123.456;
    double base = mean_queue_cost(net, tot, 100.0);
    net.queues[0].weight *= 2.0;
    CHECK(mean_queue_cost(net, tot, 100.0) == doctest::Approx(2.0 * base));
  }
}

TEST_CASE("engine integral matches the closed-form triangle") {
  // alpha = 2.3 for 10 s then 0: x ramps to 10 at slope 1, drains at 1.3
  NetworkSpec net = chain_network({.n = 1});
  ArrivalProcess arr = const_arrivals(net, 0, 2.3);
  arr.traces[0].times = {0.0, 10.0};
  arr.traces[0].rates = {2.3, 0.0};
  SimEngine eng(net, adaptive(net), arr, {});
  const double T = 30.0;
  eng.run_until(T);
  MetricsReport m = collect_metrics(net, eng, T);
  double area = 0.5 * 10.0 * (10.0 + 10.0 / 1.3);  // triangle over [0, 17.69]
  CHECK(m.mean_queue_cost == doctest::Approx(area / T).epsilon(1e-9));
  CHECK(m.total_out == doctest::Approx(23.0).epsilon(1e-9));
  CHECK(m.mean_waiting_time == doctest::Approx(area / 23.0).epsilon(1e-9));
}

TEST_CASE("waiting time is queued time per discharged vehicle") {
  NetworkSpec net = chain_network({.n = 1});
  SUBCASE("empty network reports zero with the flag") {
    SimEngine eng(net, adaptive(net), ArrivalProcess::zeros(net.num_queues()), {});
    eng.run_until(100.0);
    MetricsReport m = collect_metrics(net, eng, 100.0);
    CHECK(m.mean_waiting_time == 0.0);
    CHECK(m.no_departures);
  }
  SUBCASE("undersaturated pass-through never waits") {
    SimEngine eng(net, adaptive(net), const_arrivals(net, 0, 0.5), {});
    eng.run_until(1000.0);
    MetricsReport m = collect_metrics(net, eng, 1000.0);
    CHECK(m.mean_waiting_time == 0.0);
    CHECK(!m.no_departures);
  }
}

TEST_CASE("time-distance ratio") {
  NetworkSpec net = chain_network({.n = 1});
  SUBCASE("free flow gives the inverse speed, 0.1 s/m") {
    SimEngine eng(net, adaptive(net), const_arrivals(net, 0, 0.5), {});
    eng.run_until(1000.0);
    MetricsReport m = collect_metrics(net, eng, 1000.0);
    CHECK(m.time_distance_ratio == doctest::Approx(0.1));
  }
  SUBCASE("waiting raises the ratio above 1/f") {
    ArrivalProcess arr = const_arrivals(net, 0, 2.3);
    arr.traces[0].times = {0.0, 10.0};
    arr.traces[0].rates = {2.3, 0.0};
    SimEngine eng(net, adaptive(net), arr, {});
    eng.run_until(1000.0);
    MetricsReport m = collect_metrics(net, eng, 1000.0);
    CHECK(m.time_distance_ratio > 0.1);
    // per-unit arithmetic: (travel + wait) / distance
    double expect = (23.0 * 30.0 + m.mean_waiting_time * 23.0) / (23.0 * 300.0);
    CHECK(m.time_distance_ratio == doctest::Approx(expect).epsilon(1e-9));
  }
  SUBCASE("ratio never beats free flow on a grid run") {
    Scenario s = default_grid_scenario();
    SimEngine eng(s.net, s.make_controller(), s.make_arrivals(9, 2000.0),
                  s.make_engine_config());
    eng.run_until(2000.0);
    MetricsReport m = collect_metrics(s.net, eng, 2000.0);
    CHECK(m.time_distance_ratio >= 0.1 - 1e-12);
  }
}

TEST_CASE("direct ratio arithmetic: 6 s of waiting over 600 m at 10 m/s") {
  CHECK((60.0 + 6.0) / 600.0 == doctest::Approx(0.11));
}
