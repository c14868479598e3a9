#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "daqflow/core_model.hpp"
#include "daqflow/sim_kernel.hpp"

namespace daqflow {

inline constexpr std::uint64_t kDefaultRobCapacityBytes = 2'621'440;  // 2.5 MB

/// Per-link fragment store. Fragments leave only through an explicit erase.
class RobBuffer {
 public:
  enum class InsertResult { stored, refused };

  RobBuffer(std::uint32_t slot, std::uint64_t capacity_bytes)
      : slot_(slot), capacity_bytes_(capacity_bytes) {}

  /// Refuses the fragment when it would overflow the buffer; throws
  /// ProtocolError when the event is already stored.
  InsertResult insert(const ROBFragment& fragment);
  std::optional<ROBFragment> find(EventId l1id) const;
  bool erase(EventId l1id);

  std::uint32_t slot() const { return slot_; }
  std::uint64_t capacity_bytes() const { return capacity_bytes_; }
  std::uint64_t occupancy_bytes() const { return occupancy_bytes_; }
  std::uint64_t high_watermark_bytes() const { return high_watermark_bytes_; }
  std::size_t size() const { return store_.size(); }

 private:
  std::uint32_t slot_;
  std::uint64_t capacity_bytes_;
  std::uint64_t occupancy_bytes_ = 0;
  std::uint64_t high_watermark_bytes_ = 0;
  std::unordered_map<EventId, ROBFragment> store_;
};

struct RosCounters {
  std::uint64_t fragments_inserted = 0;
  std::uint64_t fragments_cleared = 0;
  std::uint64_t xoff_events = 0;
  std::uint64_t unknown_requests = 0;
  std::uint64_t clears_applied = 0;
  std::uint64_t requests = 0;
  std::uint64_t response_bytes = 0;
  std::uint64_t queue_hwm = 0;
};

/// One ROS unit: ROBs for a contiguous block of links plus the IOManager
/// that serves data requests in arrival order, collecting fragments over the
/// unit's internal bus one transfer at a time.
class RosUnit {
 public:
  RosUnit(Kernel& kernel, std::uint32_t unit_index, const Geometry& geometry, LinkModel link,
          BusModel bus, std::uint64_t rob_capacity_bytes = kDefaultRobCapacityBytes);

  ComponentId id() const { return id_; }
  std::uint32_t unit_index() const { return unit_index_; }
  std::uint32_t first_link() const { return first_link_; }
  std::size_t slot_count() const { return robs_.size(); }

  void rob_insert(const ROBFragment& fragment);
  void handle_clear(std::span<const EventId> ids);

  const RobBuffer& rob(std::uint32_t slot) const { return robs_.at(slot); }
  std::uint64_t occupancy_bytes() const;
  std::uint64_t max_rob_high_watermark() const;
  const RosCounters& counters() const { return counters_; }

 private:
  void on_message(const Message& msg);
  void service_next();

  Kernel& kernel_;
  ComponentId id_;
  std::uint32_t unit_index_;
  std::uint32_t first_link_;
  BusModel bus_;
  std::vector<RobBuffer> robs_;
  std::deque<Message> pending_;
  bool serving_ = false;
  RosCounters counters_;
};

}  // namespace daqflow
