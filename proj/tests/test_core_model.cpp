#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "daqflow/core_model.hpp"

using namespace daqflow;

TEST_SUITE("core_model") {

TEST_CASE("fragment wire size") {
  CHECK(make_fragment(48, 0, EventId{1}, 0).wire_bytes() == 24);
  // 1.5 MB over 1628 links is ~921 bytes; 230 payload words plus the header.
  const auto f = make_fragment(1628, 7, EventId{42}, 230);
  CHECK(f.wire_bytes() == 944);
  CHECK(f.wire_bytes() == kFragmentHeaderBytes + 4 * 230);
  CHECK(std::abs(static_cast<double>(f.wire_bytes()) - 1.5e6 / 1628) / (1.5e6 / 1628) < 0.03);
  CHECK_THROWS_AS(make_fragment(1628, 1628, EventId{1}, 230), ConfigError);
}

TEST_CASE("rob_map") {
  CHECK(rob_map(13, 12) == RobLocation{1, 1});
  CHECK(rob_map(5, 1) == RobLocation{5, 0});
  CHECK(unit_count(48, 12) == 4);
  CHECK(rob_map(47, 12).unit == 3);
  Geometry g{48, 12, 230, {}};
  CHECK(g.unit_count() == 4);
  CHECK(g.links_of_unit(3).front() == 36);
  CHECK(g.links_of_unit(3).back() == 47);
}

TEST_CASE("rob_map is a bijection onto (unit, slot)") {
  for (std::uint32_t n : {1u, 7u, 48u, 96u, 100u}) {
    for (std::uint32_t g : {1u, 2u, 3u, 5u, 12u, 48u}) {
      if (g > n) continue;
      std::vector<int> seen(static_cast<std::size_t>(unit_count(n, g)) * g, 0);
      for (std::uint32_t s = 0; s < n; ++s) {
        const auto loc = rob_map(s, g);
        REQUIRE(loc.slot < g);
        REQUIRE(loc.unit < unit_count(n, g));
        CHECK(loc.unit * g + loc.slot == s);
        ++seen[loc.unit * g + loc.slot];
      }
      CHECK(std::count(seen.begin(), seen.end(), 1) == static_cast<long>(n));
      // every unit but possibly the last is full
      Geometry geo{n, g, 230, {}};
      std::uint32_t total = 0;
      for (std::uint32_t u = 0; u < geo.unit_count(); ++u) total += geo.links_of_unit(u).size();
      CHECK(total == n);
    }
  }
}

TEST_CASE("ROI record") {
  Geometry g{48, 12, 230, {}};
  const auto rec = build_roi_record(g, EventId{1}, {RoiItem{Subdetector::calo, {0, 1}}},
                                    {RoiItem{Subdetector::muon, {24}}});
  CHECK(rec.unit_spread(12) == 2);
  CHECK(rec.rob_ids().size() == 3);
  CHECK(rec.total_roi_bytes == 3 * 944);
  CHECK(rec.wire_bytes() == 8 + 2 * 4 + 3 * 4);
  CHECK_THROWS_AS(build_roi_record(g, EventId{2}, {}, {}), MalformedRoiError);
  CHECK_THROWS_AS(build_roi_record(g, EventId{3}, {RoiItem{Subdetector::calo, {4}}},
                                   {RoiItem{Subdetector::muon, {4}}}),
                  MalformedRoiError);
  CHECK_THROWS_AS(build_roi_record(g, EventId{4}, {RoiItem{Subdetector::calo, {48}}}, {}),
                  MalformedRoiError);

  // 2% of 48 links is one ROB, i.e. one fragment's worth of data
  const auto small = build_roi_record(g, EventId{5}, {RoiItem{Subdetector::calo, {9}}}, {});
  CHECK(small.total_roi_bytes == 944);
}

namespace {

std::vector<ROBFragment> all_fragments(EventId id, std::uint32_t n) {
  std::vector<ROBFragment> out;
  for (std::uint32_t s = 0; s < n; ++s) out.push_back(make_fragment(n, s, id, 230));
  return out;
}

}  // namespace

TEST_CASE("full event assembly") {
  const EventId id{11};
  const ROBFragment pseudo{48, id, FragmentStatus::ok, 256};
  auto frags = all_fragments(id, 48);
  const auto ev = assemble_full_event(id, frags, pseudo, 48);
  CHECK(ev.completeness == Completeness::complete);
  CHECK(ev.wire_bytes() == 24 + 48 * 944 + pseudo.wire_bytes());
  CHECK(ev.fragments.size() == 49);
  CHECK(ev.pseudo() == pseudo);

  frags.erase(frags.begin() + 17);
  const auto partial = assemble_full_event(id, frags, pseudo, 48);
  CHECK(partial.completeness == Completeness::partial);
  CHECK(partial.fragments[17] == missing_substitute(17, id));
  CHECK(partial.fragments[17].wire_bytes() == 24);
  CHECK(partial.wire_bytes() == 24 + 47 * 944 + 24 + pseudo.wire_bytes());

  auto dup = all_fragments(id, 48);
  dup.push_back(dup[3]);
  CHECK_THROWS_AS(assemble_full_event(id, dup, pseudo, 48), ProtocolError);
}

TEST_CASE("assembly is invariant under fragment permutation") {
  std::mt19937_64 rng(7);
  const EventId id{3};
  const ROBFragment pseudo{24, id, FragmentStatus::ok, 8};
  auto frags = all_fragments(id, 24);
  frags.erase(frags.begin() + 5);
  const auto reference = assemble_full_event(id, frags, pseudo, 24);
  for (int trial = 0; trial < 50; ++trial) {
    std::shuffle(frags.begin(), frags.end(), rng);
    CHECK(assemble_full_event(id, frags, pseudo, 24) == reference);
  }
}

TEST_CASE("event image round-trip") {
  const EventId id{99};
  const ROBFragment pseudo{12, id, FragmentStatus::ok, 4};
  auto frags = all_fragments(id, 12);
  frags.pop_back();
  const auto ev = assemble_full_event(id, frags, pseudo, 12);
  const auto words = encode_event(ev);
  CHECK(words.size() * 4 == ev.wire_bytes());
  CHECK(decode_event(words) == ev);

  auto corrupted = words;
  corrupted[kHeaderWords + kHeaderWords + 1] ^= 1;  // first payload word
  CHECK_THROWS_AS(decode_event(corrupted), ProtocolError);
  corrupted = words;
  corrupted.pop_back();
  CHECK_THROWS_AS(decode_event(corrupted), ProtocolError);
}

TEST_CASE("message wire size is envelope plus payload") {
  FragmentList list{all_fragments(EventId{1}, 12)};
  const auto resp = make_message(MessageKind::data_response, 0, 1, EventId{1}, list);
  CHECK(resp.payload_bytes == 12 * 944);
  CHECK(resp.wire_bytes() == kEnvelopeBytes + 12 * 944);

  const auto req = make_message(MessageKind::data_request, 0, 1, EventId{1}, DataRequest{{2, 5}});
  CHECK(req.payload_bytes == kControlPayloadBytes + 8);

  ClearBatch batch;
  for (std::uint32_t i = 1; i <= 300; ++i) batch.ids.push_back(EventId{i});
  const auto clear = make_message(MessageKind::clear, 0, 1, EventId{1}, batch);
  CHECK(clear.payload_bytes == 300 * kClearBytesPerId);

  CHECK(make_message(MessageKind::eoe, 0, 1, EventId{1}).wire_bytes() ==
        kEnvelopeBytes + kControlPayloadBytes);
  CHECK_THROWS_AS(make_message(MessageKind::clear, 0, 1, EventId{1}, Decision{true}),
                  ProtocolError);
}

TEST_CASE("message kind names") {
  for (std::size_t k = 0; k < kMessageKindCount; ++k) {
    const auto kind = static_cast<MessageKind>(k);
    CHECK(message_kind_from_string(to_string(kind)) == kind);
  }
  CHECK_THROWS_AS(message_kind_from_string("NOPE"), ConfigError);
}

}
