#pragma once

// Domain types shared by every DataFlow component: event identity, ROB
// fragments, ROI records, built events, protocol messages and their wire
// sizes, plus the link -> ROS unit mapping.

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace daqflow {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violation of the message protocol (duplicate fragment, duplicate source...).
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedRoiError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

struct EventId {
  std::uint32_t value = 0;
  friend constexpr auto operator<=>(EventId, EventId) = default;
};

inline constexpr std::uint32_t kHeaderWords = 6;
inline constexpr std::uint64_t kFragmentHeaderBytes = kHeaderWords * 4;
inline constexpr std::uint64_t kEventHeaderBytes = kHeaderWords * 4;
inline constexpr std::uint64_t kEnvelopeBytes = 16;
inline constexpr std::uint64_t kClearBytesPerId = 4;
inline constexpr std::uint64_t kControlPayloadBytes = 8;

inline constexpr std::uint32_t kFragmentMarker = 0xDD1234DD;
inline constexpr std::uint32_t kEventMarker = 0xEE1234EE;

enum class FragmentStatus : std::uint32_t { ok = 0, missing_substitute = 1, corrupt = 2 };

struct ROBFragment {
  std::uint32_t source_id = 0;
  EventId l1id;
  FragmentStatus status = FragmentStatus::ok;
  std::uint32_t payload_words = 0;

  std::uint64_t wire_bytes() const { return kFragmentHeaderBytes + 4ull * payload_words; }
  friend bool operator==(const ROBFragment&, const ROBFragment&) = default;
};

ROBFragment make_fragment(std::uint32_t n_links, std::uint32_t source_id, EventId l1id,
                          std::uint32_t payload_words);

ROBFragment missing_substitute(std::uint32_t source_id, EventId l1id);

/// Detector readout geometry: link count, ROS grouping and per-link
/// fragment sizes (a default plus optional per-link overrides).
struct Geometry {
  std::uint32_t n_links = 48;
  std::uint32_t grouping = 12;
  std::uint32_t fragment_words = 230;
  std::map<std::uint32_t, std::uint32_t> word_overrides;

  std::uint32_t unit_count() const;
  std::uint32_t words_for(std::uint32_t source_id) const;
  std::uint64_t fragment_bytes(std::uint32_t source_id) const {
    return kFragmentHeaderBytes + 4ull * words_for(source_id);
  }
  /// Source id carried by the pseudo-ROS result fragment.
  std::uint32_t pseudo_source_id() const { return n_links; }
  /// Links hosted by a unit, in slot order.
  std::vector<std::uint32_t> links_of_unit(std::uint32_t unit) const;
};

struct RobLocation {
  std::uint32_t unit = 0;
  std::uint32_t slot = 0;
  friend bool operator==(const RobLocation&, const RobLocation&) = default;
};

/// Contiguous block mapping of readout links onto ROS units.
constexpr RobLocation rob_map(std::uint32_t source_id, std::uint32_t grouping) {
  return {source_id / grouping, source_id % grouping};
}

constexpr std::uint32_t unit_count(std::uint32_t n_links, std::uint32_t grouping) {
  return (n_links + grouping - 1) / grouping;
}

enum class Subdetector : std::uint32_t { calo = 0, muon = 1 };

struct RoiItem {
  Subdetector subdetector = Subdetector::calo;
  std::vector<std::uint32_t> rob_ids;
  friend bool operator==(const RoiItem&, const RoiItem&) = default;
};

struct RoiRecord {
  EventId l1id;
  std::vector<RoiItem> items;
  std::uint64_t total_roi_bytes = 0;

  std::vector<std::uint32_t> rob_ids() const;
  std::uint32_t unit_spread(std::uint32_t grouping) const;
  /// 8-byte record header plus 4 bytes per item and per ROB id.
  std::uint64_t wire_bytes() const;
  friend bool operator==(const RoiRecord&, const RoiRecord&) = default;
};

/// Merges calorimeter and muon ROI items into one record. Throws
/// MalformedRoiError on an empty ROI, an empty item, an out-of-range link or
/// a ROB listed twice.
RoiRecord build_roi_record(const Geometry& geometry, EventId l1id, std::vector<RoiItem> calo_items,
                           std::vector<RoiItem> muon_items);

enum class Completeness : std::uint32_t { complete = 0, partial = 1 };

struct FullEvent {
  EventId l1id;
  /// One fragment per source ordered by source id, then the pseudo-ROS fragment.
  std::vector<ROBFragment> fragments;
  Completeness completeness = Completeness::complete;

  std::uint64_t wire_bytes() const;
  const ROBFragment& pseudo() const { return fragments.back(); }
  friend bool operator==(const FullEvent&, const FullEvent&) = default;
};

/// Sorts fragments by source id, substitutes absent sources in [0, n_sources)
/// and appends the pseudo-ROS fragment. Throws ProtocolError on a duplicate or
/// out-of-range source.
FullEvent assemble_full_event(EventId l1id, std::span<const ROBFragment> fragments,
                              const ROBFragment& pseudo_fragment, std::uint32_t n_sources);

/// Deterministic payload content of one fragment word.
std::uint32_t payload_word(std::uint32_t source_id, EventId l1id, std::uint32_t index);

void append_fragment_words(const ROBFragment& fragment, std::vector<std::uint32_t>& out);
/// Event image as 32-bit words: 6-word event header then every fragment.
std::vector<std::uint32_t> encode_event(const FullEvent& event);
FullEvent decode_event(std::span<const std::uint32_t> words);

// --- protocol messages ---

enum class MessageKind : std::uint8_t {
  frag_push,
  roi_input,
  roi_assign,
  data_request,
  data_response,
  l2_decision,
  l2_result,
  eb_assign,
  eoe,
  clear,
  ef_pull,
  ef_event,
  ef_verdict,
};
inline constexpr std::size_t kMessageKindCount = 13;

std::string_view to_string(MessageKind kind);
MessageKind message_kind_from_string(std::string_view name);

using ComponentId = std::uint32_t;

struct FragmentList {
  std::vector<ROBFragment> fragments;
};

struct RoiInput {
  std::vector<RoiItem> calo;
  std::vector<RoiItem> muon;
};

/// Empty slot list requests every ROB of the unit (local event building).
struct DataRequest {
  std::vector<std::uint32_t> slots;
  bool all() const { return slots.empty(); }
};

struct Decision {
  bool accept = false;
};

struct ClearBatch {
  std::vector<EventId> ids;
};

struct EfVerdict {
  bool accept = false;
  FullEvent event;
};

using MessageBody = std::variant<std::monostate, FragmentList, RoiInput, RoiRecord, DataRequest,
                                 Decision, ClearBatch, FullEvent, EfVerdict>;

struct Message {
  MessageKind kind = MessageKind::eb_assign;
  ComponentId src = 0;
  ComponentId dst = 0;
  EventId l1id;
  std::uint64_t payload_bytes = 0;
  MessageBody body;

  std::uint64_t wire_bytes() const { return kEnvelopeBytes + payload_bytes; }
};

/// Payload size of a message kind carrying the given body. Throws
/// ProtocolError when the body type does not belong to the kind.
std::uint64_t payload_bytes_for(MessageKind kind, const MessageBody& body);

Message make_message(MessageKind kind, ComponentId src, ComponentId dst, EventId l1id,
                     MessageBody body = {});

}  // namespace daqflow

template <>
struct std::hash<daqflow::EventId> {
  std::size_t operator()(daqflow::EventId id) const noexcept {
    return std::hash<std::uint32_t>{}(id.value);
  }
};
