#include <doctest.h>

#include "tlc/metrics.hpp"

#include "helpers.hpp"

using namespace tlc;
using namespace tlc::testing;

TEST_CASE("default grid scenario builds and validates") {
  Scenario s = default_grid_scenario();
  CHECK(s.net.num_queues() == 48);
  CHECK(s.theta.size() == 24);
  CHECK(s.theta[0].theta_min == 20);
  CHECK(s.flows.size() == 90);  // 10 entries x 10 exits minus same-stub pairs
  CHECK(s.net.validate(s.sim.vehicle_length).empty());
}

TEST_CASE("malformed scenarios are rejected with diagnostics") {
  json j;
  SUBCASE("neither grid nor network") { CHECK_THROWS_AS(build_scenario(j), ScenarioError); }
  SUBCASE("both grid and network") {
    j["grid"] = {{"rows", 1}, {"cols", 1}};
    j["network"] = {{"queues", json::array()}, {"phases", json::array()}};
    CHECK_THROWS_AS(build_scenario(j), ScenarioError);
  }
  SUBCASE("bad theta shape") {
    j["grid"] = {{"rows", 1}, {"cols", 1}};
    j["controller"] = {{"type", "ipa-adaptive"}, {"theta", {20.0, 40.0}}};
    CHECK_THROWS_AS(build_scenario(j), ScenarioError);
  }
  SUBCASE("infeasible theta") {
    j["grid"] = {{"rows", 1}, {"cols", 1}};
    j["controller"] = {{"type", "ipa-adaptive"}, {"theta", {40.0, 20.0, 10.0}}};
    CHECK_THROWS_AS(build_scenario(j), ScenarioError);
  }
  SUBCASE("unknown controller type") {
    j["grid"] = {{"rows", 1}, {"cols", 1}};
    j["controller"] = {{"type", "magic"}};
    CHECK_THROWS_AS(build_scenario(j), ScenarioError);
  }
  SUBCASE("unknown perturbation group") {
    j["grid"] = {{"rows", 1}, {"cols", 1}};
    j["demand"] = {{"perturbation", {{"group", "xy"}}}};
    CHECK_THROWS_AS(build_scenario(j), ScenarioError);
  }
  SUBCASE("nonpositive horizon") {
    j["grid"] = {{"rows", 1}, {"cols", 1}};
    j["sim"] = {{"horizon", -5.0}};
    CHECK_THROWS_AS(build_scenario(j), ScenarioError);
  }
}

TEST_CASE("explicit network: two one-queue intersections in a chain") {
  json j;
  j["network"] = {
      {"queues",
       {{{"name", "a"}, {"node", 0}, {"movements", {{{"origin", "W"}, {"dir", "straight"}}}},
         {"downstream", {1}}},
        {{"name", "b"},
         {"node", 1},
         {"capacity", 48.0},
         {"movements", {{{"origin", "W"}, {"dir", "straight"}}}}}}},
      {"phases", {{{"node", 0}, {"queues", {0}}}, {{"node", 1}, {"queues", {1}}}}},
      {"turn_ratios", {{"0", {{"1", 1.0}}}}}};
  j["demand"] = {{"mode", "constant"}, {"entry_rates", {{"a", 0.5}}}};
  Scenario s = build_scenario(j);
  CHECK(s.net.num_queues() == 2);
  CHECK(s.net.queues[0].downstream == std::vector<QueueId>{1});
  auto arr = s.make_arrivals(1, 100.0);
  CHECK(arr.traces[0].at(50.0) == doctest::Approx(0.5));

  SUBCASE("gamma row off by 0.1 is caught at validation") {
    j["network"]["turn_ratios"]["0"]["1"] = 0.9;
    try {
      build_scenario(j);
      FAIL("expected a validation error");
    } catch (const ScenarioError& e) {
      CHECK(std::string(e.what()).find("ratios sum to 0.9") != std::string::npos);
    }
  }
}

TEST_CASE("arrival traces are deterministic per seed and perturbation scales one group") {
  Scenario s = default_grid_scenario();
  auto a1 = s.make_arrivals(42, 2000.0);
  auto a2 = s.make_arrivals(42, 2000.0);
  auto a3 = s.make_arrivals(43, 2000.0);
  bool same = true, differ = false;
  for (std::size_t q = 0; q < a1.traces.size(); ++q) {
    same = same && a1.traces[q].times == a2.traces[q].times &&
           a1.traces[q].rates == a2.traces[q].rates;
    differ = differ || a1.traces[q].rates != a3.traces[q].rates;
  }
  CHECK(same);
  CHECK(differ);

  // constant mode: doubling the rc group raises exactly the row-entry queues
  Scenario sc = s;
  sc.demand_mode = "constant";
  Perturbation pert{true, 1, 2.0, 500.0, 1500.0};
  auto base = sc.make_arrivals(1, 2000.0);
  auto pr = sc.make_arrivals(1, 2000.0, &pert);
  int scaled = 0;
  for (std::size_t q = 0; q < base.traces.size(); ++q) {
    if (base.traces[q].times.empty()) continue;
    double b = base.traces[q].at(1000.0), p = pr.traces[q].at(1000.0);
    CHECK(pr.traces[q].at(100.0) == doctest::Approx(b));
    CHECK(pr.traces[q].at(1900.0) == doctest::Approx(b));
    if (p > b + 1e-12) ++scaled;
  }
  CHECK(scaled > 0);
}

TEST_CASE("zero-demand scenario produces all-zero metrics") {
  Scenario s = default_grid_scenario(0, 0, 0, 0);
  SimEngine eng(s.net, s.make_controller(), s.make_arrivals(1, 1000.0),
                s.make_engine_config());
  eng.run_until(1000.0);
  MetricsReport m = collect_metrics(s.net, eng, 1000.0);
  CHECK(m.mean_queue_cost == 0.0);
  CHECK(m.mean_waiting_time == 0.0);
  CHECK(m.total_in == 0.0);
  CHECK(m.total_out == 0.0);
}

TEST_CASE("webster controller setup from the scenario") {
  Scenario s = default_grid_scenario();
  s.ctrl_type = CtrlType::Webster;
  ControllerSetup c = s.make_controller();
  CHECK(c.type == CtrlType::Webster);
  REQUIRE(c.webster_duration.size() == s.net.num_phases());
  for (double d : c.webster_duration) CHECK(d >= 5.0 + 2.0 - 1e-9);
}
