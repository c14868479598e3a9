#pragma once

// Full DataFlow pipeline built from a ScenarioConfig: LVL1 source, ROS
// units, ROI builder, supervisors, L2PUs, pseudo-ROS, DFM, SFIs, EF nodes
// and the SFO.

#include <cstdint>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "daqflow/config.hpp"
#include "daqflow/ef_io.hpp"
#include "daqflow/event_builder.hpp"
#include "daqflow/metrics.hpp"
#include "daqflow/roi_collection.hpp"
#include "daqflow/ros.hpp"
#include "daqflow/sim_kernel.hpp"

namespace daqflow {

class InvariantViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// End-of-run bookkeeping: what happened to every LVL1-accepted event.
struct ConservationReport {
  std::uint64_t generated = 0;
  std::uint64_t rejected = 0;
  std::uint64_t built = 0;
  std::uint64_t timed_out = 0;
  /// Generated ids with no disposition.
  std::uint64_t undisposed = 0;
  /// Dispositioned ids not carried by exactly one CLEAR batch.
  std::uint64_t bad_flush_count = 0;
  std::uint64_t rob_occupancy_bytes = 0;
  std::uint64_t pseudo_occupancy_bytes = 0;
  std::uint64_t work_in_flight = 0;
  std::uint64_t ef_mismatch = 0;

  /// Human-readable violations; buffers must be empty only when
  /// `expect_empty_buffers` is set (lossless runs).
  std::vector<std::string> violations(bool expect_empty_buffers) const;
};

/// ROB ids of one ROI, drawn from `rng` per the config's ROI shape.
std::vector<std::uint32_t> draw_roi_robs(const ScenarioConfig& cfg, RngStream& rng);

class Scenario {
 public:
  explicit Scenario(ScenarioConfig cfg, std::unique_ptr<EventSink> sink = nullptr);
  Scenario(const Scenario&) = delete;
  Scenario& operator=(const Scenario&) = delete;

  Kernel& kernel() { return kernel_; }
  void set_trace(std::ostream* out) { kernel_.set_trace(out); }

  /// Generates LVL1 accepts for the configured duration, then runs to quiescence.
  void run();

  MetricsSnapshot snapshot() const;
  ConservationReport conservation() const;
  /// Throws InvariantViolation listing every conservation failure; buffers
  /// must drain only when no link is lossy.
  void check_invariants() const;

  const ScenarioConfig& config() const { return cfg_; }
  std::uint32_t events_generated() const { return next_l1_ - 1; }
  const std::vector<SimTime>& l1_times() const { return l1_times_; }
  const RosUnit& ros(std::size_t i) const { return *ros_.at(i); }
  std::size_t ros_count() const { return ros_.size(); }
  const PseudoRos& pseudo_ros() const { return *pros_; }
  const L2ProcessingUnit& l2pu(std::size_t i) const { return *l2pus_.at(i); }
  const L2Supervisor& supervisor(std::size_t i) const { return *svs_.at(i); }
  const DataFlowManager& dfm() const { return *dfm_; }
  const SubFarmInput& sfi(std::size_t i) const { return *sfis_.at(i); }
  const SubFarmOutput& sfo() const { return *sfo_; }
  void close_sink() { sfo_->close(); }

 private:
  void schedule_l1(std::uint64_t index, SimTime t);
  void trigger();

  ScenarioConfig cfg_;
  Geometry geometry_;
  Kernel kernel_;
  ComponentId lvl1_;
  std::vector<std::unique_ptr<RosUnit>> ros_;
  std::unique_ptr<PseudoRos> pros_;
  std::vector<std::unique_ptr<SubFarmInput>> sfis_;
  std::unique_ptr<DataFlowManager> dfm_;
  std::vector<std::unique_ptr<L2ProcessingUnit>> l2pus_;
  std::vector<std::unique_ptr<L2Supervisor>> svs_;
  std::unique_ptr<RoiBuilder> roib_;
  std::unique_ptr<SubFarmOutput> sfo_;
  std::vector<std::unique_ptr<EfNode>> efs_;
  std::uint32_t next_l1_ = 1;
  std::vector<SimTime> l1_times_;
};

/// Column order of the `run` CSV.
const std::vector<std::string>& scenario_columns();

struct RunOptions {
  std::ostream* trace = nullptr;
  std::unique_ptr<EventSink> sink;
};

/// Runs one scenario; in strict mode a conservation violation throws
/// InvariantViolation.
MetricsSnapshot run_scenario(const ScenarioConfig& cfg, RunOptions options = {});

}  // namespace daqflow
