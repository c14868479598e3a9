#pragma once

// Scenario configuration.
//
// File format: one `key=value` per line; `#` starts a comment; blank lines
// are ignored. Every key is optional and unknown keys are rejected. Link
// parameters are set per role as `<role>.<param>` where role is one of
// ros, pros, roib, l2sv, l2pu, dfm, sfi, ef, sfo and param is one of
// bandwidth, latency_us, rx_cost_us, tx_cost_us, cpu_ps_per_byte, loss_prob.
// The bare key `loss_prob` sets the loss probability of every role.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "daqflow/core_model.hpp"
#include "daqflow/roi_collection.hpp"
#include "daqflow/sim_kernel.hpp"

namespace daqflow {

enum class ArrivalProcess { poisson, periodic };

enum class Role : std::uint8_t { ros, pros, roib, l2sv, l2pu, dfm, sfi, ef, sfo };
inline constexpr std::size_t kRoleCount = 9;
std::string_view to_string(Role role);

struct ScenarioConfig {
  std::uint64_t seed = 1;
  double duration_s = 1.0;

  std::uint32_t n_links = 48;
  std::uint32_t grouping = 12;
  std::uint32_t fragment_words = 230;

  double l1_rate_hz = 5000.0;
  ArrivalProcess l1_arrivals = ArrivalProcess::poisson;
  double roi_fraction = 0.02;
  /// Fixed ROB count per ROI; 0 derives it from roi_fraction.
  std::uint32_t roi_robs = 0;
  /// Fixed number of ROS units per ROI; 0 draws the ROBs anywhere.
  std::uint32_t roi_spread = 0;

  double l2_accept_prob = 0.03;
  double ef_accept_prob = 0.10;
  std::uint32_t n_sv = 3;
  std::uint32_t n_l2pu = 8;
  std::uint32_t n_sfi = 2;
  std::uint32_t n_ef = 256;

  ProcTimeDist l2_proc_dist = ProcTimeDist::constant;
  SimTime l2_proc_time_us = 10'000;
  ProcTimeDist ef_proc_dist = ProcTimeDist::constant;
  SimTime ef_proc_time_us = 1'000'000;
  std::uint64_t result_bytes = 1024;

  SimTime l2pu_timeout_us = 10'000;
  SimTime sfi_frag_timeout_us = 10'000;
  SimTime build_timeout_us = 1'000'000;
  SimTime clear_flush_us = 100'000;
  std::uint32_t clear_batch_max = 300;
  std::uint32_t max_credits = 8;
  SimTime sfi_eoe_delay_us = 0;
  bool ef_enabled = true;

  std::uint64_t rob_capacity_bytes = 2'621'440;
  std::uint64_t slink_bandwidth = 160'000'000;
  double l2sv_capacity_hz = 30'000.0;
  bool strict = true;

  BusModel bus;
  std::array<LinkModel, kRoleCount> links = default_links();

  LinkModel& link(Role role) { return links[static_cast<std::size_t>(role)]; }
  const LinkModel& link(Role role) const { return links[static_cast<std::size_t>(role)]; }
  Geometry geometry() const { return Geometry{n_links, grouping, fragment_words, {}}; }
  SimTime duration_us() const;

  static std::array<LinkModel, kRoleCount> default_links();
};

/// Sets one key; throws ConfigError naming the key on an unknown key or a
/// value that does not parse.
void apply_setting(ScenarioConfig& cfg, std::string_view key, std::string_view value);
/// Applies `key=value`.
void apply_assignment(ScenarioConfig& cfg, std::string_view assignment);
/// Throws ConfigError naming the first offending key.
void validate(const ScenarioConfig& cfg);

/// Applies every line of `text` on top of `cfg` (without validating).
void apply_config_text(ScenarioConfig& cfg, std::string_view text, std::string_view origin = "");
ScenarioConfig parse_config(std::string_view text);
ScenarioConfig load_config(const std::filesystem::path& path);
/// Applies a file on top of an existing config (e.g. a calibration file).
void overlay_config_file(ScenarioConfig& cfg, const std::filesystem::path& path);

/// Every key in fixed order, one `key=value` line each; parses back to an
/// identical config.
std::string canonical_dump(const ScenarioConfig& cfg);
/// Keys whose values differ from the defaults, in canonical order.
std::vector<std::string> non_default_settings(const ScenarioConfig& cfg);
/// FNV-1a of the canonical dump, 16 hex digits.
std::string config_hash(const ScenarioConfig& cfg);

}  // namespace daqflow
