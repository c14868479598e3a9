#include "daqflow/core_model.hpp"

#include <algorithm>
#include <array>
#include <set>

namespace daqflow {

ROBFragment make_fragment(std::uint32_t n_links, std::uint32_t source_id, EventId l1id,
                          std::uint32_t payload_words) {
  if (source_id >= n_links) {
    throw ConfigError("source_id " + std::to_string(source_id) + " out of range (n_links=" +
                      std::to_string(n_links) + ")");
  }
  return {source_id, l1id, FragmentStatus::ok, payload_words};
}

ROBFragment missing_substitute(std::uint32_t source_id, EventId l1id) {
  return {source_id, l1id, FragmentStatus::missing_substitute, 0};
}

std::uint32_t Geometry::unit_count() const { return daqflow::unit_count(n_links, grouping); }

std::uint32_t Geometry::words_for(std::uint32_t source_id) const {
  if (auto it = word_overrides.find(source_id); it != word_overrides.end()) return it->second;
  return fragment_words;
}

std::vector<std::uint32_t> Geometry::links_of_unit(std::uint32_t unit) const {
  std::vector<std::uint32_t> links;
  const std::uint32_t first = unit * grouping;
  for (std::uint32_t l = first; l < n_links && l < first + grouping; ++l) links.push_back(l);
  return links;
}

std::vector<std::uint32_t> RoiRecord::rob_ids() const {
  std::vector<std::uint32_t> ids;
  for (const auto& item : items) ids.insert(ids.end(), item.rob_ids.begin(), item.rob_ids.end());
  return ids;
}

std::uint32_t RoiRecord::unit_spread(std::uint32_t grouping) const {
  std::set<std::uint32_t> units;
  for (auto id : rob_ids()) units.insert(rob_map(id, grouping).unit);
  return static_cast<std::uint32_t>(units.size());
}

std::uint64_t RoiRecord::wire_bytes() const {
  std::uint64_t bytes = 8;
  for (const auto& item : items) bytes += 4 + 4ull * item.rob_ids.size();
  return bytes;
}

RoiRecord build_roi_record(const Geometry& geometry, EventId l1id, std::vector<RoiItem> calo_items,
                           std::vector<RoiItem> muon_items) {
  if (calo_items.empty() && muon_items.empty()) {
    throw MalformedRoiError("empty ROI for l1id " + std::to_string(l1id.value));
  }
  RoiRecord record{l1id, {}, 0};
  std::set<std::uint32_t> seen;
  auto take = [&](std::vector<RoiItem>& items, Subdetector sub) {
    for (auto& item : items) {
      if (item.rob_ids.empty()) throw MalformedRoiError("ROI item without ROBs");
      for (auto rob : item.rob_ids) {
        if (rob >= geometry.n_links) {
          throw MalformedRoiError("ROI references link " + std::to_string(rob));
        }
        if (!seen.insert(rob).second) {
          throw MalformedRoiError("ROB " + std::to_string(rob) + " listed twice");
        }
        record.total_roi_bytes += geometry.fragment_bytes(rob);
      }
      item.subdetector = sub;
      record.items.push_back(std::move(item));
    }
  };
  take(calo_items, Subdetector::calo);
  take(muon_items, Subdetector::muon);
  return record;
}

std::uint64_t FullEvent::wire_bytes() const {
  std::uint64_t bytes = kEventHeaderBytes;
  for (const auto& f : fragments) bytes += f.wire_bytes();
  return bytes;
}

FullEvent assemble_full_event(EventId l1id, std::span<const ROBFragment> fragments,
                              const ROBFragment& pseudo_fragment, std::uint32_t n_sources) {
  std::vector<const ROBFragment*> by_source(n_sources, nullptr);
  for (const auto& f : fragments) {
    if (f.source_id >= n_sources) {
      throw ProtocolError("fragment source " + std::to_string(f.source_id) + " out of range");
    }
    if (by_source[f.source_id] != nullptr) {
      throw ProtocolError("duplicate fragment for source " + std::to_string(f.source_id) +
                          " in event " + std::to_string(l1id.value));
    }
    by_source[f.source_id] = &f;
  }
  FullEvent event{l1id, {}, Completeness::complete};
  event.fragments.reserve(n_sources + 1);
  for (std::uint32_t s = 0; s < n_sources; ++s) {
    event.fragments.push_back(by_source[s] ? *by_source[s] : missing_substitute(s, l1id));
  }
  event.fragments.push_back(pseudo_fragment);
  const bool partial = std::ranges::any_of(event.fragments, [](const ROBFragment& f) {
    return f.status == FragmentStatus::missing_substitute;
  });
  event.completeness = partial ? Completeness::partial : Completeness::complete;
  return event;
}

std::uint32_t payload_word(std::uint32_t source_id, EventId l1id, std::uint32_t index) {
  std::uint64_t x = (static_cast<std::uint64_t>(source_id) << 40) ^
                    (static_cast<std::uint64_t>(l1id.value) << 8) ^ index;
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return static_cast<std::uint32_t>(x ^ (x >> 31));
}

void append_fragment_words(const ROBFragment& fragment, std::vector<std::uint32_t>& out) {
  out.push_back(kFragmentMarker);
  out.push_back(kHeaderWords + fragment.payload_words);
  out.push_back(fragment.source_id);
  out.push_back(fragment.l1id.value);
  out.push_back(static_cast<std::uint32_t>(fragment.status));
  out.push_back(fragment.payload_words);
  for (std::uint32_t i = 0; i < fragment.payload_words; ++i) {
    out.push_back(payload_word(fragment.source_id, fragment.l1id, i));
  }
}

std::vector<std::uint32_t> encode_event(const FullEvent& event) {
  std::vector<std::uint32_t> words;
  words.reserve(event.wire_bytes() / 4);
  words.push_back(kEventMarker);
  words.push_back(static_cast<std::uint32_t>(event.wire_bytes() / 4));
  words.push_back(event.l1id.value);
  words.push_back(static_cast<std::uint32_t>(event.fragments.size()));
  words.push_back(static_cast<std::uint32_t>(event.completeness));
  words.push_back(0);
  for (const auto& f : event.fragments) append_fragment_words(f, words);
  return words;
}

FullEvent decode_event(std::span<const std::uint32_t> words) {
  auto fail = [](const std::string& what) { throw ProtocolError("malformed event image: " + what); };
  if (words.size() < kHeaderWords) fail("short header");
  if (words[0] != kEventMarker) fail("bad event marker");
  if (words[1] != words.size()) fail("event length mismatch");
  if (words[4] > 1) fail("bad completeness flag");
  FullEvent event{EventId{words[2]}, {}, static_cast<Completeness>(words[4])};
  const std::uint32_t n_fragments = words[3];
  std::size_t pos = kHeaderWords;
  for (std::uint32_t i = 0; i < n_fragments; ++i) {
    if (pos + kHeaderWords > words.size()) fail("truncated fragment header");
    if (words[pos] != kFragmentMarker) fail("bad fragment marker");
    const std::uint32_t total = words[pos + 1];
    const std::uint32_t payload = words[pos + 5];
    if (total != kHeaderWords + payload || pos + total > words.size()) fail("fragment length");
    if (words[pos + 4] > 2) fail("bad fragment status");
    ROBFragment f{words[pos + 2], EventId{words[pos + 3]},
                  static_cast<FragmentStatus>(words[pos + 4]), payload};
    for (std::uint32_t w = 0; w < payload; ++w) {
      if (words[pos + kHeaderWords + w] != payload_word(f.source_id, f.l1id, w)) {
        fail("payload mismatch in source " + std::to_string(f.source_id));
      }
    }
    event.fragments.push_back(f);
    pos += total;
  }
  if (pos != words.size()) fail("trailing words");
  return event;
}

namespace {

constexpr std::array<std::string_view, kMessageKindCount> kKindNames = {
    "FRAG_PUSH",   "ROI_INPUT", "ROI_ASSIGN", "DATA_REQUEST", "DATA_RESPONSE",
    "L2_DECISION", "L2_RESULT", "EB_ASSIGN",  "EOE",          "CLEAR",
    "EF_PULL",     "EF_EVENT",  "EF_VERDICT"};

std::uint64_t fragments_bytes(const FragmentList& list) {
  std::uint64_t bytes = 0;
  for (const auto& f : list.fragments) bytes += f.wire_bytes();
  return bytes;
}

std::uint64_t roi_items_bytes(const RoiInput& in) {
  std::uint64_t bytes = 8;
  for (const auto* items : {&in.calo, &in.muon}) {
    for (const auto& item : *items) bytes += 4 + 4ull * item.rob_ids.size();
  }
  return bytes;
}

}  // namespace

std::string_view to_string(MessageKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }

MessageKind message_kind_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == name) return static_cast<MessageKind>(i);
  }
  throw ConfigError("unknown message kind '" + std::string(name) + "'");
}

std::uint64_t payload_bytes_for(MessageKind kind, const MessageBody& body) {
  auto mismatch = [kind]() -> std::uint64_t {
    throw ProtocolError("body type does not match message kind " + std::string(to_string(kind)));
  };
  switch (kind) {
    case MessageKind::frag_push:
    case MessageKind::data_response:
    case MessageKind::l2_result:
      if (auto* list = std::get_if<FragmentList>(&body)) return fragments_bytes(*list);
      return mismatch();
    case MessageKind::roi_input:
      if (auto* in = std::get_if<RoiInput>(&body)) return roi_items_bytes(*in);
      return mismatch();
    case MessageKind::roi_assign:
      if (auto* rec = std::get_if<RoiRecord>(&body)) return rec->wire_bytes();
      return mismatch();
    case MessageKind::data_request:
      if (auto* req = std::get_if<DataRequest>(&body)) {
        return kControlPayloadBytes + 4ull * req->slots.size();
      }
      return mismatch();
    case MessageKind::l2_decision:
      if (std::holds_alternative<Decision>(body)) return kControlPayloadBytes;
      return mismatch();
    case MessageKind::eb_assign:
    case MessageKind::eoe:
    case MessageKind::ef_pull:
      if (std::holds_alternative<std::monostate>(body)) return kControlPayloadBytes;
      return mismatch();
    case MessageKind::clear:
      if (auto* batch = std::get_if<ClearBatch>(&body)) return kClearBytesPerId * batch->ids.size();
      return mismatch();
    case MessageKind::ef_event:
      if (auto* ev = std::get_if<FullEvent>(&body)) return ev->wire_bytes();
      return mismatch();
    case MessageKind::ef_verdict:
      if (auto* v = std::get_if<EfVerdict>(&body)) {
        return kControlPayloadBytes + (v->accept ? v->event.wire_bytes() : 0);
      }
      return mismatch();
  }
  return mismatch();
}

Message make_message(MessageKind kind, ComponentId src, ComponentId dst, EventId l1id,
                     MessageBody body) {
  Message msg{kind, src, dst, l1id, 0, std::move(body)};
  msg.payload_bytes = payload_bytes_for(kind, msg.body);
  return msg;
}

}  // namespace daqflow
