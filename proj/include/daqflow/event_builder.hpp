#pragma once

// Event building: the DataFlow Manager (SFI load balancing, grouped clears,
// build timeouts) and the Sub-Farm Inputs that pull every fragment of an
// accepted event with a bounded window of outstanding requests.

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "daqflow/core_model.hpp"
#include "daqflow/sim_kernel.hpp"

namespace daqflow {

enum class Disposition : std::uint8_t { rejected, built, timed_out };

struct DispositionRecord {
  Disposition disposition = Disposition::rejected;
  /// Number of CLEAR batches that carried the id; exactly one once drained.
  std::uint32_t flush_count = 0;
};

struct DfmParams {
  std::uint32_t clear_batch_max = 300;
  SimTime clear_flush_timeout_us = 100'000;
  SimTime build_timeout_us = 1'000'000;
};

struct DfmCounters {
  std::uint64_t decisions = 0;
  std::uint64_t rejects = 0;
  std::uint64_t assigned = 0;
  std::uint64_t built = 0;
  std::uint64_t lost_builds = 0;
  std::uint64_t duplicate_decisions = 0;
  std::uint64_t stale_eoe = 0;
  std::uint64_t clear_batches = 0;
  std::uint64_t ids_flushed = 0;
  /// Largest max-min spread of SFI loads right after an assignment.
  std::uint32_t balance_spread_max = 0;
};

class DataFlowManager {
 public:
  using DispositionObserver = std::function<void(EventId, Disposition)>;

  DataFlowManager(Kernel& kernel, LinkModel link, std::vector<ComponentId> sfis,
                  std::vector<ComponentId> clear_targets, DfmParams params);

  ComponentId id() const { return id_; }

  void on_decision(EventId l1id, bool accept);
  void on_eoe(EventId l1id);
  void on_build_timeout(EventId l1id);
  /// Broadcasts the pending batch to every clear target.
  void flush_clears();

  void set_disposition_observer(DispositionObserver observer) { observer_ = std::move(observer); }

  std::span<const std::uint32_t> sfi_loads() const { return loads_; }
  std::size_t pending_builds() const { return pending_.size(); }
  std::size_t clear_batch_size() const { return batch_.size(); }
  const std::unordered_map<EventId, DispositionRecord>& ledger() const { return ledger_; }
  const std::vector<std::uint32_t>& clear_batch_sizes() const { return batch_sizes_; }
  const DfmCounters& counters() const { return counters_; }

 private:
  struct PendingBuild {
    std::size_t sfi;
    SimTime deadline;
  };

  void on_message(const Message& msg);
  void dispose(EventId l1id, Disposition disposition);

  Kernel& kernel_;
  ComponentId id_;
  std::vector<ComponentId> sfis_;
  std::vector<ComponentId> clear_targets_;
  DfmParams params_;
  std::vector<std::uint32_t> loads_;
  std::unordered_set<EventId> decided_;
  std::unordered_map<EventId, PendingBuild> pending_;
  std::vector<EventId> batch_;
  std::uint64_t flush_generation_ = 0;
  std::unordered_map<EventId, DispositionRecord> ledger_;
  std::vector<std::uint32_t> batch_sizes_;
  DfmCounters counters_;
  DispositionObserver observer_;
};

struct SfiParams {
  std::uint32_t max_credits = 8;
  SimTime frag_timeout_us = 10'000;
  /// Time a built event is held before the EOE goes out.
  SimTime eoe_delay_us = 0;
  bool ef_enabled = true;
};

struct SfiCounters {
  std::uint64_t assignments = 0;
  std::uint64_t duplicate_assignments = 0;
  std::uint64_t requests_sent = 0;
  std::uint64_t retries = 0;
  std::uint64_t missing_responders = 0;
  std::uint64_t late_responses = 0;
  std::uint64_t built = 0;
  std::uint64_t partial_events = 0;
  std::uint64_t bytes_ingested = 0;
  std::uint64_t built_bytes = 0;
  std::uint32_t credits_hwm = 0;
  std::uint64_t ef_pulls = 0;
  std::uint64_t ef_events_sent = 0;
  std::uint64_t discarded = 0;
};

class SubFarmInput {
 public:
  SubFarmInput(Kernel& kernel, std::uint32_t index, const Geometry& geometry, LinkModel link,
               std::vector<ComponentId> ros_units, ComponentId pseudo_ros, SfiParams params);

  ComponentId id() const { return id_; }

  /// Starts building `l1id`; the EOE goes back to `dfm`.
  void build(ComponentId dfm, EventId l1id);

  std::uint32_t credits_in_flight() const { return credits_; }
  std::size_t building() const { return builds_.size(); }
  std::size_t built_queue_size() const { return built_queue_.size(); }
  std::size_t parked_pulls() const { return parked_pulls_.size(); }
  const SfiCounters& counters() const { return counters_; }
  /// Completion time of every built event.
  const std::vector<SimTime>& build_times() const { return build_times_; }

 private:
  struct Build {
    ComponentId dfm;
    std::uint32_t remaining;
    std::vector<ROBFragment> fragments;
    std::optional<ROBFragment> pseudo;
  };
  struct Request {
    EventId l1id;
    std::uint32_t responder;
    std::uint32_t attempt;
  };
  struct Outstanding {
    std::uint64_t seq;
    std::uint32_t attempt;
  };

  static std::uint64_t key(EventId l1id, std::uint32_t responder) {
    return (static_cast<std::uint64_t>(l1id.value) << 32) | responder;
  }
  void on_message(const Message& msg);
  void on_response(const Message& msg);
  void on_timeout(EventId l1id, std::uint32_t responder, std::uint64_t seq);
  void responder_done(EventId l1id);
  void pump();
  void complete(EventId l1id);
  void ship();

  Kernel& kernel_;
  ComponentId id_;
  std::uint32_t n_sources_;
  std::vector<ComponentId> responders_;  // ROS units, then the pseudo-ROS
  std::unordered_map<ComponentId, std::uint32_t> responder_index_;
  SfiParams params_;
  std::unordered_set<EventId> seen_;
  std::unordered_map<EventId, Build> builds_;
  std::deque<Request> queue_;
  std::unordered_map<std::uint64_t, Outstanding> outstanding_;
  std::uint64_t next_seq_ = 0;
  std::uint32_t credits_ = 0;
  std::deque<FullEvent> built_queue_;
  std::deque<ComponentId> parked_pulls_;
  std::vector<SimTime> build_times_;
  SfiCounters counters_;
};

}  // namespace daqflow
