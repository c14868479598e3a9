#pragma once

// Canned experiments:
//   exp-a      maximum sustainable LVL1 rate of one ROS unit vs ROI-request
//              and event-building fractions
//   exp-b      ROI collection time of one L2PU vs ROI size and unit spread
//   exp-c      event-building rate of one SFI vs grouping, EF I/O off/on
//   calibrate  fits the ROS per-message receive cost and the SFI per-byte
//              cost to the exp-a and exp-c anchors

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "daqflow/config.hpp"
#include "daqflow/metrics.hpp"

namespace daqflow {

// --- exp-a: ROS unit saturation ---

/// Events per exp-a trial.
inline constexpr std::uint32_t kRosTrialEvents = 20'000;
/// Largest tolerated backlog (kernel receive backlog plus request queue).
inline constexpr std::uint64_t kRosBacklogLimit = 64;
/// Bisection stops once (hi - lo) <= kRateTolerance * lo.
inline constexpr double kRateTolerance = 0.02;

struct RosTrial {
  std::uint64_t xoff = 0;
  std::uint64_t slink_backpressure = 0;
  std::uint64_t backlog_hwm = 0;
  std::uint64_t requests = 0;
  bool sustainable() const {
    return xoff == 0 && slink_backpressure == 0 && backlog_hwm <= kRosBacklogLimit;
  }
};

/// Drives a single ROS unit of `cfg.grouping` links at a periodic LVL1 rate:
/// per event, roi_fraction x links single-ROB requests (spread evenly over
/// events) and an event-building request with probability eb_fraction.
RosTrial ros_trial(const ScenarioConfig& cfg, double l1_rate_hz, double roi_fraction,
                   double eb_fraction, std::uint32_t events = kRosTrialEvents,
                   std::ostream* trace = nullptr);

struct RateSearch {
  double max_rate_hz = 0.0;  // largest rate found sustainable
  double bracket_hi_hz = 0.0;
  std::uint32_t trials = 0;
};

/// Geometric bisection of a monotone predicate over [lo, hi].
RateSearch find_max_rate(const std::function<bool(double)>& sustainable, double lo = 100.0,
                         double hi = 400'000.0, double tolerance = kRateTolerance);

/// 1 / (host busy time per event) of the exp-a load.
double ros_analytic_ceiling_hz(const ScenarioConfig& cfg, double roi_fraction, double eb_fraction);

CsvTable run_exp_a(const ScenarioConfig& cfg, std::ostream* trace = nullptr);

// --- exp-b: ROI collection ---

CsvTable run_exp_b(const ScenarioConfig& cfg, std::ostream* trace = nullptr);

// --- exp-c: SFI event building ---

struct BuildRateResult {
  double build_rate_hz = kNaN;
  double ingest_mb_s = kNaN;
  std::uint64_t built = 0;
  SimTime window_us = 0;
};

/// Closed-loop saturation of one SFI: a fixed number of events is kept in
/// flight and each disposition injects the next event.
BuildRateResult sfi_saturation(const ScenarioConfig& cfg, std::ostream* trace = nullptr);

CsvTable run_exp_c(const ScenarioConfig& cfg, std::ostream* trace = nullptr);

// --- calibration ---

inline constexpr double kRosAnchorRateHz = 75'000.0;
inline constexpr double kRosAnchorRoiFraction = 0.04;
inline constexpr double kRosAnchorEbFraction = 0.03;
inline constexpr double kSfiAnchorMbPerS = 95.0;
inline constexpr std::uint32_t kSfiAnchorGrouping = 48;
inline constexpr std::uint32_t kFullScaleFragmentWords = 8138;

struct Calibration {
  SimTime ros_rx_cost_us = 0;
  double ros_rate_hz = 0.0;
  std::uint64_t sfi_cpu_ps_per_byte = 0;
  double sfi_ingest_mb_s = 0.0;

  /// `key=value` lines to overlay on a config.
  std::string config_text(bool full_scale) const;
};

Calibration calibrate(const ScenarioConfig& cfg);

// --- driver ---

const std::vector<std::string>& experiment_names();

/// Defaults for `name`, overlaid with the calibration file and `settings`.
ScenarioConfig experiment_config(const std::string& name,
                                 const std::optional<std::filesystem::path>& calibration,
                                 const std::vector<std::string>& settings);

struct ExperimentRequest {
  std::string name;
  std::optional<std::filesystem::path> calibration;
  std::vector<std::string> settings;
  std::filesystem::path out_dir = ".";
  bool trace = false;
};

/// Runs an experiment and writes `<out_dir>/<name>.csv` (plus the trace of
/// the first sweep point and, for calibrate, the calibration files). Returns
/// the paths written.
std::vector<std::filesystem::path> run_experiment(const ExperimentRequest& request);

/// Comment lines that make a CSV rerunnable.
std::vector<std::string> provenance_comments(const std::string& command, const ScenarioConfig& cfg);

}  // namespace daqflow
