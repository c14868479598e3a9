#include "daqflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace daqflow {

double mean(std::span<const SimTime> values) {
  if (values.empty()) return kNaN;
  const long double sum = std::accumulate(values.begin(), values.end(), 0.0L);
  return static_cast<double>(sum / values.size());
}

double percentile(std::vector<SimTime> values, double q) {
  if (values.empty()) return kNaN;
  std::ranges::sort(values);
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * values.size()));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return static_cast<double>(values[rank - 1]);
}

std::size_t count_in_window(std::span<const SimTime> times, SimTime t0, SimTime t1) {
  return static_cast<std::size_t>(
      std::ranges::count_if(times, [&](SimTime t) { return t >= t0 && t < t1; }));
}

double window_rate(std::span<const SimTime> times, SimTime t0, SimTime t1) {
  if (t1 <= t0) return kNaN;
  const auto n = count_in_window(times, t0, t1);
  if (n < kMinRateSamples) return kNaN;
  return static_cast<double>(n) * 1e6 / static_cast<double>(t1 - t0);
}

double MetricsSnapshot::get(const std::string& name) const {
  auto it = values.find(name);
  if (it == values.end()) throw std::out_of_range("no metric named " + name);
  return it->second;
}

std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  if (v == std::floor(v) && std::fabs(v) < 1e15) {
    std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v));
  } else {
    std::snprintf(buf, sizeof buf, "%.6f", v);
  }
  return buf;
}

void CsvTable::add_row(const std::vector<double>& values) {
  std::vector<std::string> row;
  row.reserve(values.size());
  for (double v : values) row.push_back(format_value(v));
  rows.push_back(std::move(row));
}

void CsvTable::write(std::ostream& out) const {
  for (const auto& c : comments) out << "# " << c << '\n';
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(columns);
  for (const auto& row : rows) line(row);
}

void CsvTable::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write(out);
  if (!out) throw std::runtime_error("write failed on " + path.string());
}

CsvTable snapshot_table(const MetricsSnapshot& snapshot, const std::vector<std::string>& columns) {
  CsvTable table;
  table.columns = columns;
  if (!snapshot.empty) {
    std::vector<double> row;
    for (const auto& c : columns) row.push_back(snapshot.has(c) ? snapshot.get(c) : kNaN);
    table.add_row(row);
  }
  return table;
}

}  // namespace daqflow
