#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "daqflow/sim_kernel.hpp"

namespace daqflow {

/// Rates need at least this many samples inside the measurement window.
inline constexpr std::size_t kMinRateSamples = 100;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean(std::span<const SimTime> values);
/// Nearest-rank percentile, `q` in (0, 100].
double percentile(std::vector<SimTime> values, double q);
/// Events per second among `times` falling in [t0, t1); NaN below
/// kMinRateSamples samples.
double window_rate(std::span<const SimTime> times, SimTime t0, SimTime t1);
std::size_t count_in_window(std::span<const SimTime> times, SimTime t0, SimTime t1);

/// Named metric values of one run, iterated in name order.
struct MetricsSnapshot {
  bool empty = true;
  std::map<std::string, double> values;

  void set(const std::string& name, double value) { values[name] = value; }
  double get(const std::string& name) const;
  bool has(const std::string& name) const { return values.contains(name); }
};

/// Integers print without a fraction, NaN as `nan`, others with 6 decimals.
std::string format_value(double v);

/// A CSV document: leading `# ` comment lines, a header row, data rows.
struct CsvTable {
  std::vector<std::string> comments;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(const std::vector<double>& values);
  void write(std::ostream& out) const;
  void write(const std::filesystem::path& path) const;
};

/// A header plus one row for a non-empty snapshot; metrics missing from the
/// snapshot print as `nan`.
CsvTable snapshot_table(const MetricsSnapshot& snapshot, const std::vector<std::string>& columns);

}  // namespace daqflow
