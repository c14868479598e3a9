#include "doctest.h"
#include "daqflow/ros.hpp"

using namespace daqflow;

namespace {

struct RosFixture {
  Kernel kernel{1};
  Geometry geometry{48, 12, 230, {}};
  RosUnit unit{kernel, 1, geometry, LinkModel{}, BusModel{}};
  std::vector<Message> responses;
  ComponentId requester = kernel.add_component(
      "req", LinkModel{}, [this](const Message& m) { responses.push_back(m); });

  void fill(std::uint32_t first_id, std::uint32_t count) {
    for (std::uint32_t id = first_id; id < first_id + count; ++id) {
      for (std::uint32_t link : geometry.links_of_unit(1)) {
        unit.rob_insert(make_fragment(48, link, EventId{id}, 230));
      }
    }
  }
  void request(std::uint32_t id, std::vector<std::uint32_t> slots) {
    kernel.send(make_message(MessageKind::data_request, requester, unit.id(), EventId{id},
                             DataRequest{std::move(slots)}));
    kernel.run_to_quiescence();
  }
};

}  // namespace

TEST_SUITE("ros") {

TEST_CASE("ROB buffer accounting") {
  RobBuffer rob(0, kDefaultRobCapacityBytes);
  CHECK(rob.insert(make_fragment(48, 0, EventId{1}, 230)) == RobBuffer::InsertResult::stored);
  CHECK(rob.occupancy_bytes() == 944);
  CHECK_THROWS_AS(rob.insert(make_fragment(48, 0, EventId{1}, 230)), ProtocolError);
  CHECK(rob.erase(EventId{1}));
  CHECK_FALSE(rob.erase(EventId{1}));
  CHECK(rob.occupancy_bytes() == 0);
  CHECK(rob.high_watermark_bytes() == 944);
}

TEST_CASE("capacity of 2.5 MB refuses the overflowing fragment") {
  Kernel k(1);
  Geometry g{12, 12, 230, {}};
  RosUnit unit(k, 0, g, LinkModel{}, BusModel{});
  const std::uint64_t fits = kDefaultRobCapacityBytes / 944;  // 2777 fragments
  for (std::uint32_t id = 1; id <= fits; ++id) unit.rob_insert(make_fragment(12, 0, EventId{id}, 230));
  CHECK(unit.counters().xoff_events == 0);
  CHECK(unit.rob(0).occupancy_bytes() == fits * 944);
  unit.rob_insert(make_fragment(12, 0, EventId{static_cast<std::uint32_t>(fits + 1)}, 230));
  CHECK(unit.counters().xoff_events == 1);
  CHECK(unit.rob(0).occupancy_bytes() == fits * 944);
  CHECK(unit.rob(0).occupancy_bytes() <= kDefaultRobCapacityBytes);
}

TEST_CASE("fragments are routed to the owning unit only") {
  RosFixture f;
  CHECK_THROWS_AS(f.unit.rob_insert(make_fragment(48, 11, EventId{1}, 230)), ProtocolError);
  CHECK_THROWS_AS(f.unit.rob_insert(make_fragment(48, 24, EventId{1}, 230)), ProtocolError);
  f.unit.rob_insert(make_fragment(48, 13, EventId{1}, 230));
  CHECK(f.unit.rob(1).size() == 1);
}

TEST_CASE("ROI request for one slot") {
  RosFixture f;
  f.fill(1, 1);
  f.request(1, {4});
  REQUIRE(f.responses.size() == 1);
  CHECK(f.responses[0].kind == MessageKind::data_response);
  CHECK(f.responses[0].payload_bytes == 944);
  CHECK(f.responses[0].wire_bytes() == 944 + kEnvelopeBytes);
  const auto& frags = std::get<FragmentList>(f.responses[0].body).fragments;
  CHECK(frags.at(0).source_id == 16);
}

TEST_CASE("event-building request collects the whole unit") {
  RosFixture f;
  f.fill(1, 1);
  f.request(1, {});
  REQUIRE(f.responses.size() == 1);
  CHECK(f.responses[0].payload_bytes == 12 * 944);
  CHECK(f.responses[0].payload_bytes == 11'328);
  CHECK(f.unit.counters().unknown_requests == 0);
}

TEST_CASE("bus collection time per fragment") {
  RosFixture f;
  f.fill(1, 1);
  const SimTime t0 = f.kernel.now();
  f.request(1, {});
  // idle hosts: bus time, then envelope+payload over the link both ways
  const SimTime bus = 12 * BusModel{}.transfer_time(944);
  const SimTime req_ser = serialization_us(kEnvelopeBytes + kControlPayloadBytes, 125'000'000);
  const SimTime resp_ser = serialization_us(kEnvelopeBytes + 11'328, 125'000'000);
  CHECK(f.kernel.now() == t0 + req_ser + bus + resp_ser);
}

TEST_CASE("request for a cleared event returns a substitute") {
  RosFixture f;
  f.fill(1, 1);
  f.unit.handle_clear(std::vector<EventId>{EventId{1}});
  f.request(1, {0});
  REQUIRE(f.responses.size() == 1);
  CHECK(f.responses[0].payload_bytes == 24);
  const auto& frag = std::get<FragmentList>(f.responses[0].body).fragments.at(0);
  CHECK(frag.status == FragmentStatus::missing_substitute);
  CHECK(f.unit.counters().unknown_requests == 1);
}

TEST_CASE("grouped clear") {
  RosFixture f;
  f.fill(1, 310);
  const std::uint64_t before = f.unit.occupancy_bytes();
  std::vector<EventId> ids;
  for (std::uint32_t id = 1; id <= 300; ++id) ids.push_back(EventId{id});
  f.unit.handle_clear(ids);
  CHECK(before - f.unit.occupancy_bytes() == 300ull * 12 * 944);
  CHECK(f.unit.occupancy_bytes() == 10ull * 12 * 944);

  f.unit.handle_clear({});
  CHECK(f.unit.occupancy_bytes() == 10ull * 12 * 944);
  f.unit.handle_clear(ids);
  CHECK(f.unit.occupancy_bytes() == 10ull * 12 * 944);
  CHECK(f.unit.counters().fragments_cleared == 300ull * 12);
}

TEST_CASE("requests are served in arrival order") {
  RosFixture f;
  f.fill(1, 3);
  for (std::uint32_t id : {3u, 1u, 2u}) {
    f.kernel.send(make_message(MessageKind::data_request, f.requester, f.unit.id(), EventId{id},
                               DataRequest{}));
  }
  f.kernel.run_to_quiescence();
  REQUIRE(f.responses.size() == 3);
  CHECK(f.responses[0].l1id.value == 3);
  CHECK(f.responses[1].l1id.value == 1);
  CHECK(f.responses[2].l1id.value == 2);
  CHECK(f.unit.counters().queue_hwm >= 1);
}

}
