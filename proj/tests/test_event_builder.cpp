#include <memory>
#include <sstream>

#include "doctest.h"
#include "daqflow/event_builder.hpp"
#include "daqflow/roi_collection.hpp"
#include "daqflow/ros.hpp"
#include "daqflow/scenario.hpp"

using namespace daqflow;

namespace {

struct DfmFixture {
  Kernel kernel{2};
  std::vector<std::vector<EventId>> assigned{2};
  std::vector<Message> clears;
  std::vector<ComponentId> sfis;
  std::unique_ptr<DataFlowManager> dfm;

  explicit DfmFixture(DfmParams params = {}, double assign_loss = 0.0) {
    for (int i = 0; i < 2; ++i) {
      sfis.push_back(kernel.add_component("s" + std::to_string(i), LinkModel{},
                                          [this, i](const Message& m) { assigned[i].push_back(m.l1id); }));
    }
    const auto ros = kernel.add_component("r", LinkModel{}, [this](const Message& m) { clears.push_back(m); });
    LinkModel link;
    link.loss_prob = assign_loss;
    dfm = std::make_unique<DataFlowManager>(kernel, link, sfis, std::vector<ComponentId>{ros}, params);
  }
  void at_now(std::function<void()> f) {
    kernel.schedule_at(kernel.now(), std::move(f));
    kernel.run_until(kernel.now());
  }
};

// Four ROS units with events 1..n stored, a pseudo-ROS holding their LVL2
// results, one SFI and a recording stand-in for the DFM.
struct SfiFixture {
  Kernel kernel{8};
  Geometry geometry{48, 12, 230, {}};
  std::vector<std::unique_ptr<RosUnit>> units;
  std::unique_ptr<PseudoRos> pros;
  std::unique_ptr<SubFarmInput> sfi;
  std::vector<EventId> eoes;
  ComponentId dfm = 0;
  std::ostringstream trace;

  explicit SfiFixture(SfiParams params, std::uint32_t events = 3) {
    std::vector<ComponentId> ids;
    for (std::uint32_t u = 0; u < 4; ++u) {
      units.push_back(std::make_unique<RosUnit>(kernel, u, geometry, LinkModel{}, BusModel{}));
      ids.push_back(units.back()->id());
      for (std::uint32_t link : geometry.links_of_unit(u)) {
        for (std::uint32_t id = 1; id <= events; ++id) {
          units.back()->rob_insert(make_fragment(48, link, EventId{id}, 230));
        }
      }
    }
    pros = std::make_unique<PseudoRos>(kernel, geometry, LinkModel{});
    for (std::uint32_t id = 1; id <= events; ++id) {
      pros->store(ROBFragment{48, EventId{id}, FragmentStatus::ok, 256});
    }
    sfi = std::make_unique<SubFarmInput>(kernel, 0, geometry, LinkModel{}, ids, pros->id(), params);
    dfm = kernel.add_component("dfm", LinkModel{}, [this](const Message& m) { eoes.push_back(m.l1id); });
    kernel.set_trace(&trace);
  }
  void build(std::uint32_t id) {
    kernel.schedule_at(kernel.now(), [this, id] { sfi->build(dfm, EventId{id}); });
  }
};

SfiParams no_ef(std::uint32_t credits = 8) {
  SfiParams p;
  p.max_credits = credits;
  p.ef_enabled = false;
  return p;
}

}  // namespace

TEST_SUITE("event_builder") {

TEST_CASE("DFM assigns to the least loaded SFI") {
  DfmFixture f;
  f.at_now([&] {
    for (std::uint32_t id = 1; id <= 5; ++id) f.dfm->on_decision(EventId{id}, true);
  });
  CHECK(f.dfm->sfi_loads()[0] == 3);
  CHECK(f.dfm->sfi_loads()[1] == 2);
  f.at_now([&] { f.dfm->on_eoe(EventId{2}); });
  CHECK(f.dfm->sfi_loads()[1] == 1);
  f.at_now([&] { f.dfm->on_decision(EventId{6}, true); });
  f.kernel.run_until(f.kernel.now() + 10);
  REQUIRE_FALSE(f.assigned[1].empty());
  CHECK(f.assigned[1].back() == EventId{6});
  CHECK(f.dfm->counters().balance_spread_max <= 1);
}

TEST_CASE("duplicate decisions and stale EOEs") {
  DfmFixture f;
  f.at_now([&] {
    f.dfm->on_decision(EventId{1}, true);
    f.dfm->on_decision(EventId{1}, true);
    f.dfm->on_eoe(EventId{77});
  });
  CHECK(f.dfm->counters().assigned == 1);
  CHECK(f.dfm->counters().duplicate_decisions == 1);
  CHECK(f.dfm->counters().stale_eoe == 1);
  CHECK(f.dfm->sfi_loads()[0] == 1);
}

TEST_CASE("a full batch flushes immediately") {
  DfmFixture f;
  f.at_now([&] {
    for (std::uint32_t id = 1; id <= 300; ++id) f.dfm->on_decision(EventId{id}, false);
  });
  CHECK(f.dfm->counters().clear_batches == 1);
  CHECK(f.dfm->clear_batch_size() == 0);
  f.kernel.run_to_quiescence();
  REQUIRE(f.clears.size() == 1);
  CHECK(std::get<ClearBatch>(f.clears[0].body).ids.size() == 300);
  for (const auto& [id, rec] : f.dfm->ledger()) CHECK(rec.flush_count == 1);
}

TEST_CASE("a lone id is flushed by the timer") {
  DfmFixture f;
  f.kernel.run_until(50);
  f.at_now([&] { f.dfm->on_decision(EventId{1}, false); });
  f.kernel.run_until(50 + 99'999);
  CHECK(f.dfm->counters().clear_batches == 0);
  f.kernel.run_until(50 + 100'000);
  CHECK(f.dfm->counters().clear_batches == 1);
}

TEST_CASE("lost EB_ASSIGN: the build timeout disposes the event") {
  DfmParams params;
  params.build_timeout_us = 5'000;
  DfmFixture f(params, 1.0);
  f.at_now([&] {
    for (std::uint32_t id = 1; id <= 3; ++id) f.dfm->on_decision(EventId{id}, true);
  });
  f.kernel.run_to_quiescence();
  CHECK(f.dfm->counters().lost_builds == 3);
  CHECK(f.dfm->counters().lost_builds + f.dfm->counters().built == f.dfm->counters().assigned);
  for (const auto& [id, rec] : f.dfm->ledger()) {
    CHECK(rec.disposition == Disposition::timed_out);
    CHECK(rec.flush_count == 1);
  }
  CHECK(f.dfm->pending_builds() == 0);
}

TEST_CASE("credits bound the requests in flight") {
  SfiFixture f(no_ef(2), 1);
  f.build(1);
  f.kernel.run_to_quiescence();
  CHECK(f.sfi->counters().credits_hwm == 2);
  CHECK(f.sfi->counters().requests_sent == 5);
  // the third request is delivered only after the first response reached the SFI
  std::istringstream in(f.trace.str());
  std::string line;
  int requests = 0;
  bool response_seen = false;
  while (std::getline(in, line)) {
    if (line.find(" DATA_RESPONSE ") != std::string::npos && line.find(" sfi0 ") != std::string::npos) {
      response_seen = true;
    }
    if (line.find(" DATA_REQUEST sfi0 ") != std::string::npos && ++requests == 3) {
      CHECK(response_seen);
    }
  }
  CHECK(requests == 5);
}

TEST_CASE("a complete 48-link event") {
  SfiFixture f(no_ef(), 1);
  f.build(1);
  f.kernel.run_to_quiescence();
  REQUIRE(f.eoes.size() == 1);
  CHECK(f.sfi->counters().built == 1);
  CHECK(f.sfi->counters().partial_events == 0);
  const std::uint64_t expected = 24 + 48 * 944 + (24 + 1024);
  CHECK(f.sfi->counters().built_bytes == expected);
  CHECK(expected == 46'384);
  // a 95 MB/s input bound allows about 2 kHz per SFI
  CHECK(95e6 / expected == doctest::Approx(2000).epsilon(0.05));
  CHECK(f.sfi->counters().bytes_ingested == 48 * 944 + 24 + 1024);
}

TEST_CASE("a dead unit: one retry, then a partial event with 12 substitutes") {
  SfiFixture f(no_ef(), 1);
  const ComponentId dead = f.units[2]->id();
  f.kernel.set_drop_filter([dead](const Message& m) { return m.src == dead; });
  SfiParams p;
  f.build(1);
  f.kernel.run_to_quiescence();
  CHECK(f.sfi->counters().retries == 1);
  CHECK(f.sfi->counters().missing_responders == 1);
  CHECK(f.sfi->counters().partial_events == 1);
  REQUIRE(f.eoes.size() == 1);
  CHECK(f.sfi->counters().built_bytes == 24 + 36 * 944 + 12 * 24 + (24 + 1024));
  CHECK(f.kernel.now() >= 2 * p.frag_timeout_us);
}

TEST_CASE("duplicate assignment is ignored") {
  SfiFixture f(no_ef(), 1);
  f.build(1);
  f.build(1);
  f.kernel.run_to_quiescence();
  CHECK(f.sfi->counters().duplicate_assignments == 1);
  CHECK(f.eoes.size() == 1);
}

TEST_CASE("a CLEAR lost on one unit leaks fragments and is reported") {
  ScenarioConfig cfg;
  cfg.seed = 4;
  cfg.duration_s = 0.2;
  cfg.l1_rate_hz = 2000;
  cfg.ef_enabled = false;
  cfg.strict = false;
  Scenario s(cfg);
  const ComponentId victim = s.ros(1).id();
  s.kernel().set_drop_filter(
      [victim](const Message& m) { return m.kind == MessageKind::clear && m.dst == victim; });
  s.run();
  CHECK(s.ros(1).occupancy_bytes() > 0);
  CHECK(s.ros(0).occupancy_bytes() == 0);
  const auto report = s.conservation();
  CHECK(report.undisposed == 0);
  CHECK_FALSE(report.violations(true).empty());
  CHECK_THROWS_AS(s.check_invariants(), InvariantViolation);
}

TEST_CASE("assigned = built + timed out under loss") {
  ScenarioConfig cfg;
  cfg.seed = 12;
  cfg.duration_s = 0.5;
  cfg.l1_rate_hz = 4000;
  cfg.l2_accept_prob = 0.2;
  cfg.ef_enabled = false;
  apply_setting(cfg, "loss_prob", "0.01");
  Scenario s(cfg);
  s.run();
  const auto& c = s.dfm().counters();
  CHECK(c.assigned == c.built + c.lost_builds);
  CHECK(s.dfm().pending_builds() == 0);
  CHECK(s.conservation().undisposed == 0);
}

}
