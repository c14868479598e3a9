#pragma once

// LVL2 data path: ROI Builder, L2 supervisors, L2 processing units and the
// pseudo-ROS that keeps LVL2 results for event building.

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <unordered_map>
#include <vector>

#include "daqflow/core_model.hpp"
#include "daqflow/sim_kernel.hpp"

namespace daqflow {

enum class ProcTimeDist { constant, exponential };

/// Stand-in for a trigger algorithm: a processing delay and a coin flip.
struct DecisionStub {
  double accept_prob = 0.0;
  ProcTimeDist dist = ProcTimeDist::constant;
  SimTime mean_us = 0;

  SimTime draw_time(RngStream& rng) const;
  bool decide(RngStream& rng) const { return rng.bernoulli(accept_prob); }
};

/// Supervisor index for an event: l1id modulo the supervisor count.
constexpr std::uint32_t supervisor_for(EventId l1id, std::uint32_t n_supervisors) {
  return l1id.value % n_supervisors;
}

/// Index of the smallest load; ties go to the lowest index.
std::size_t least_loaded(std::span<const std::uint32_t> loads);

class RoiBuilder {
 public:
  RoiBuilder(Kernel& kernel, const Geometry& geometry, LinkModel link,
             std::vector<ComponentId> supervisors);

  ComponentId id() const { return id_; }
  /// Builds the record and routes it to its supervisor; a malformed ROI is
  /// counted as a dead letter and dropped.
  void ingest(EventId l1id, std::vector<RoiItem> calo, std::vector<RoiItem> muon);

  std::uint64_t records_built() const { return records_built_; }
  std::uint64_t dead_letters() const { return dead_letters_; }

 private:
  Kernel& kernel_;
  ComponentId id_;
  Geometry geometry_;
  std::vector<ComponentId> supervisors_;
  std::uint64_t records_built_ = 0;
  std::uint64_t dead_letters_ = 0;
};

struct SupervisorCounters {
  std::uint64_t decisions_forwarded = 0;
  std::uint64_t unknown_decisions = 0;
  /// Assignments made while the chosen unit was not among the least loaded.
  std::uint64_t balance_violations = 0;
};

class L2Supervisor {
 public:
  L2Supervisor(Kernel& kernel, std::uint32_t index, LinkModel link, std::vector<ComponentId> pus,
               ComponentId dfm);

  ComponentId id() const { return id_; }
  /// Chooses the least loaded L2PU, records the assignment and forwards the ROI.
  std::size_t assign(const RoiRecord& roi);

  std::span<const std::uint32_t> loads() const { return loads_; }
  std::span<const std::uint64_t> assignments() const { return assignments_; }
  std::size_t pending() const { return pending_.size(); }
  const SupervisorCounters& counters() const { return counters_; }

 private:
  void on_message(const Message& msg);

  Kernel& kernel_;
  ComponentId id_;
  std::vector<ComponentId> pus_;
  ComponentId dfm_;
  std::vector<std::uint32_t> loads_;
  std::vector<std::uint64_t> assignments_;
  std::unordered_map<EventId, std::size_t> pending_;
  SupervisorCounters counters_;
};

struct L2puParams {
  DecisionStub stub{0.03, ProcTimeDist::constant, 10'000};
  SimTime response_timeout_us = 10'000;
  std::uint64_t result_bytes = 1024;
};

struct L2puCounters {
  std::uint64_t rois = 0;
  std::uint64_t requests_sent = 0;
  std::uint64_t roi_timeouts = 0;
  std::uint64_t late_responses = 0;
  std::uint64_t accepts = 0;
  std::uint64_t rejects = 0;
};

class L2ProcessingUnit {
 public:
  L2ProcessingUnit(Kernel& kernel, std::uint32_t index, const Geometry& geometry, LinkModel link,
                   std::vector<ComponentId> ros_units, ComponentId pseudo_ros, L2puParams params);

  ComponentId id() const { return id_; }
  /// Sends one request per ROS unit touched by the ROI.
  void collect_roi(ComponentId supervisor, const RoiRecord& roi);

  std::size_t active() const { return active_.size(); }
  const L2puCounters& counters() const { return counters_; }
  /// Assignment-to-last-response time per ROI, in completion order.
  const std::vector<SimTime>& collect_times() const { return collect_times_; }
  const std::vector<SimTime>& decision_latencies() const { return decision_latencies_; }

 private:
  struct Collection {
    ComponentId supervisor;
    SimTime assigned_at;
    std::set<std::uint32_t> awaited_units;
    std::uint64_t received_bytes = 0;
  };

  void on_message(const Message& msg);
  void on_response(const Message& msg);
  void on_timeout(EventId l1id, std::uint32_t unit);
  void maybe_complete(EventId l1id);
  void decide(EventId l1id);

  Kernel& kernel_;
  ComponentId id_;
  Geometry geometry_;
  std::vector<ComponentId> ros_units_;
  std::unordered_map<ComponentId, std::uint32_t> unit_of_component_;
  ComponentId pseudo_ros_;
  L2puParams params_;
  std::unordered_map<EventId, Collection> active_;
  L2puCounters counters_;
  std::vector<SimTime> collect_times_;
  std::vector<SimTime> decision_latencies_;
};

struct PseudoRosCounters {
  std::uint64_t records_stored = 0;
  std::uint64_t records_cleared = 0;
  std::uint64_t requests = 0;
  std::uint64_t unknown_requests = 0;
  std::uint64_t clears_applied = 0;
};

/// Holds LVL2 result records and serves them to event building like a ROS unit.
class PseudoRos {
 public:
  PseudoRos(Kernel& kernel, const Geometry& geometry, LinkModel link);

  ComponentId id() const { return id_; }
  void store(const ROBFragment& result);
  std::uint64_t occupancy_bytes() const { return occupancy_bytes_; }
  std::size_t size() const { return store_.size(); }
  const PseudoRosCounters& counters() const { return counters_; }

 private:
  void on_message(const Message& msg);

  Kernel& kernel_;
  ComponentId id_;
  std::uint32_t source_id_;
  std::unordered_map<EventId, ROBFragment> store_;
  std::uint64_t occupancy_bytes_ = 0;
  PseudoRosCounters counters_;
};

}  // namespace daqflow
