#include <memory>

#include "doctest.h"
#include "daqflow/roi_collection.hpp"
#include "daqflow/ros.hpp"
#include "daqflow/scenario.hpp"

using namespace daqflow;

namespace {

LinkModel link_with_latency(SimTime latency) {
  LinkModel l;
  l.prop_latency_us = latency;
  return l;
}

// Four ROS units of 12 links, a pseudo-ROS and one L2PU whose decisions
// land on a recording stand-in for the supervisor.
struct L2Fixture {
  Kernel kernel{5};
  Geometry geometry{48, 12, 230, {}};
  std::vector<std::unique_ptr<RosUnit>> units;
  std::unique_ptr<PseudoRos> pros;
  std::unique_ptr<L2ProcessingUnit> pu;
  std::vector<Message> decisions;
  ComponentId sv = 0;

  explicit L2Fixture(L2puParams params = {}, LinkModel ros_link = link_with_latency(5),
                     LinkModel pu_link = link_with_latency(5)) {
    std::vector<ComponentId> ids;
    for (std::uint32_t u = 0; u < 4; ++u) {
      units.push_back(std::make_unique<RosUnit>(kernel, u, geometry, ros_link, BusModel{}));
      ids.push_back(units.back()->id());
      for (std::uint32_t link : geometry.links_of_unit(u)) {
        for (std::uint32_t id = 1; id <= 4; ++id) {
          units.back()->rob_insert(make_fragment(48, link, EventId{id}, 230));
        }
      }
    }
    pros = std::make_unique<PseudoRos>(kernel, geometry, LinkModel{});
    pu = std::make_unique<L2ProcessingUnit>(kernel, 0, geometry, pu_link, ids,
                                            pros->id(), params);
    sv = kernel.add_component("sv", LinkModel{}, [this](const Message& m) { decisions.push_back(m); });
  }

  SimTime collect(std::uint32_t id, std::vector<std::uint32_t> robs) {
    const auto record =
        build_roi_record(geometry, EventId{id}, {RoiItem{Subdetector::calo, std::move(robs)}}, {});
    kernel.schedule_at(kernel.now(), [this, record] { pu->collect_roi(sv, record); });
    kernel.run_to_quiescence();
    return pu->collect_times().back();
  }
};

}  // namespace

TEST_SUITE("roi_collection") {

TEST_CASE("routing and least-loaded choice") {
  CHECK(supervisor_for(EventId{7}, 3) == 1);
  const std::uint32_t loads[] = {2, 1, 1};
  CHECK(least_loaded(loads) == 1);
  const std::uint32_t single[] = {9};
  CHECK(least_loaded(single) == 0);
}

TEST_CASE("ROI builder drops malformed ROIs to the dead-letter counter") {
  Kernel k(1);
  Geometry g{48, 12, 230, {}};
  int assigned = 0;
  const auto sv = k.add_component("sv", LinkModel{}, [&](const Message&) { ++assigned; });
  RoiBuilder roib(k, g, LinkModel{}, {sv});
  k.schedule_at(0, [&] {
    roib.ingest(EventId{2}, {}, {});
    roib.ingest(EventId{3}, {RoiItem{Subdetector::calo, {1}}}, {});
  });
  k.run_to_quiescence();
  CHECK(roib.dead_letters() == 1);
  CHECK(roib.records_built() == 1);
  CHECK(assigned == 1);
}

TEST_CASE("one-ROB ROI: one request and a hand-computed collect time") {
  L2Fixture f;
  const SimTime t = f.collect(1, {13});
  CHECK(f.pu->counters().requests_sent == 1);
  const SimTime req = serialization_us(kEnvelopeBytes + kControlPayloadBytes + 4, 125'000'000) + 5;
  const SimTime bus = BusModel{}.transfer_time(944);
  const SimTime resp = serialization_us(kEnvelopeBytes + 944, 125'000'000) + 5;
  CHECK(t == req + bus + resp);
}

TEST_CASE("same bytes over more units take longer") {
  // per-message costs are what make the spread expensive, so use the default links
  const ScenarioConfig cfg;
  L2Fixture a({}, cfg.link(Role::ros), cfg.link(Role::l2pu));
  L2Fixture b({}, cfg.link(Role::ros), cfg.link(Role::l2pu));
  const SimTime one_unit = a.collect(1, {0, 1, 2, 3});
  const SimTime four_units = b.collect(1, {0, 12, 24, 36});
  CHECK(b.pu->counters().requests_sent == 4);
  CHECK(a.pu->counters().requests_sent == 1);
  CHECK(four_units > one_unit);
}

TEST_CASE("lost responses: collect time equals the timeout") {
  LinkModel lossy = link_with_latency(5);
  lossy.loss_prob = 1.0;
  L2Fixture f({}, lossy);
  CHECK(f.collect(1, {13, 30}) == 10'000);
  CHECK(f.pu->counters().roi_timeouts == 2);
}

TEST_CASE("decisions: reject-only stub and fixed processing time") {
  L2puParams params;
  params.stub = DecisionStub{0.0, ProcTimeDist::constant, 10'000};
  L2Fixture f(params);
  for (std::uint32_t id = 1; id <= 4; ++id) f.collect(id, {id});
  REQUIRE(f.decisions.size() == 4);
  for (const auto& d : f.decisions) CHECK_FALSE(std::get<Decision>(d.body).accept);
  CHECK(f.pu->counters().rejects == 4);
  CHECK(f.pros->counters().records_stored == 0);
  for (SimTime lat : f.pu->decision_latencies()) CHECK(lat >= 10'000);
}

TEST_CASE("accepts store the LVL2 result in the pseudo-ROS") {
  L2puParams params;
  params.stub = DecisionStub{1.0, ProcTimeDist::constant, 100};
  L2Fixture f(params);
  f.collect(2, {5});
  CHECK(f.pros->counters().records_stored == 1);
  CHECK(f.pros->occupancy_bytes() == 1024 + kFragmentHeaderBytes);
}

TEST_CASE("pseudo-ROS serves results, substitutes and clears") {
  Kernel k(1);
  Geometry g{48, 12, 230, {}};
  PseudoRos pros(k, g, LinkModel{});
  std::vector<Message> got;
  const auto req = k.add_component("req", LinkModel{}, [&](const Message& m) { got.push_back(m); });
  pros.store(ROBFragment{48, EventId{1}, FragmentStatus::ok, 256});
  auto ask = [&](std::uint32_t id) {
    k.send(make_message(MessageKind::data_request, req, pros.id(), EventId{id}, DataRequest{}));
    k.run_to_quiescence();
  };
  ask(1);
  ask(2);
  k.send(make_message(MessageKind::clear, req, pros.id(), EventId{1}, ClearBatch{{EventId{1}}}));
  k.run_to_quiescence();
  ask(1);
  REQUIRE(got.size() == 3);
  CHECK(got[0].payload_bytes == 1024 + kFragmentHeaderBytes);
  CHECK(got[1].payload_bytes == 24);
  CHECK(got[2].payload_bytes == 24);
  CHECK(pros.counters().unknown_requests == 2);
  CHECK(pros.occupancy_bytes() == 0);
  pros.store(ROBFragment{48, EventId{5}, FragmentStatus::ok, 1});
  CHECK_THROWS_AS(pros.store(ROBFragment{48, EventId{5}, FragmentStatus::ok, 1}), ProtocolError);
}

TEST_CASE("supervisor spreads Poisson arrivals evenly over four L2PUs") {
  ScenarioConfig cfg;
  cfg.seed = 17;
  cfg.duration_s = 2.5;
  cfg.l1_rate_hz = 5000;
  cfg.n_sv = 1;
  cfg.n_l2pu = 4;
  cfg.l2_accept_prob = 0.0;
  cfg.l2_proc_dist = ProcTimeDist::exponential;
  cfg.l2_proc_time_us = 10'000;
  cfg.ef_enabled = false;
  Scenario s(cfg);
  s.run();
  const auto shares = s.supervisor(0).assignments();
  std::uint64_t total = 0;
  for (auto n : shares) total += n;
  REQUIRE(total >= 10'000);
  for (auto n : shares) CHECK(std::abs(static_cast<double>(n) / total - 0.25) <= 0.02);
  CHECK(s.supervisor(0).counters().balance_violations == 0);
}

TEST_CASE("accepted fraction at 0.03") {
  ScenarioConfig cfg;
  cfg.seed = 3;
  cfg.duration_s = 2.0;
  cfg.l1_rate_hz = 20'000;
  cfg.n_l2pu = 16;
  cfg.l2_proc_time_us = 500;
  cfg.ef_enabled = false;
  Scenario s(cfg);
  s.run();
  std::uint64_t accepts = 0, decisions = 0;
  for (std::size_t i = 0; i < cfg.n_l2pu; ++i) {
    accepts += s.l2pu(i).counters().accepts;
    decisions += s.l2pu(i).counters().accepts + s.l2pu(i).counters().rejects;
  }
  REQUIRE(decisions == s.events_generated());
  // binomial: 3 sigma at n=40000 is ~0.0026
  CHECK(std::abs(static_cast<double>(accepts) / decisions - 0.03) <= 0.003);
}

}
