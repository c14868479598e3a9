#include "daqflow/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <type_traits>

namespace daqflow {

namespace {

constexpr std::array<std::string_view, kRoleCount> kRoleNames = {
    "ros", "pros", "roib", "l2sv", "l2pu", "dfm", "sfi", "ef", "sfo"};

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw ConfigError("invalid value '" + std::string(value) + "' for key '" + std::string(key) +
                    "' (expected " + std::string(want) + ")");
}

double parse_double(std::string_view key, std::string_view value) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size() || !std::isfinite(out)) {
    bad_value(key, value, "a number");
  }
  return out;
}

std::uint64_t parse_uint(std::string_view key, std::string_view value) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec == std::errc{} && ptr == value.data() + value.size()) return out;
  // Accept integral values written in floating notation, e.g. 125e6.
  const double d = parse_double(key, value);
  if (d < 0 || d != std::floor(d) || d > 1.8e19) bad_value(key, value, "a non-negative integer");
  return static_cast<std::uint64_t>(d);
}

std::uint32_t parse_u32(std::string_view key, std::string_view value) {
  const auto v = parse_uint(key, value);
  if (v > 0xFFFFFFFFull) bad_value(key, value, "a 32-bit integer");
  return static_cast<std::uint32_t>(v);
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  bad_value(key, value, "true or false");
}

ProcTimeDist parse_dist(std::string_view key, std::string_view value) {
  if (value == "constant") return ProcTimeDist::constant;
  if (value == "exponential") return ProcTimeDist::exponential;
  bad_value(key, value, "constant or exponential");
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}
template <typename T>
  requires std::is_unsigned_v<T> && (!std::is_same_v<T, bool>)
std::string fmt(T v) {
  return std::to_string(v);
}
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(ProcTimeDist d) { return d == ProcTimeDist::constant ? "constant" : "exponential"; }

struct Field {
  std::string key;
  std::function<void(ScenarioConfig&, std::string_view, std::string_view)> set;
  std::function<std::string(const ScenarioConfig&)> get;
};

#define DAQ_FIELD(name, parser)                                                              \
  Field {                                                                                    \
    #name, [](ScenarioConfig& c, std::string_view k, std::string_view v) { c.name = parser(k, v); }, \
        [](const ScenarioConfig& c) { return fmt(c.name); }                                  \
  }

std::vector<Field> build_fields() {
  std::vector<Field> f = {
      DAQ_FIELD(seed, parse_uint),
      DAQ_FIELD(duration_s, parse_double),
      DAQ_FIELD(n_links, parse_u32),
      DAQ_FIELD(grouping, parse_u32),
      DAQ_FIELD(fragment_words, parse_u32),
      DAQ_FIELD(l1_rate_hz, parse_double),
      Field{"l1_arrivals",
            [](ScenarioConfig& c, std::string_view k, std::string_view v) {
              if (v == "poisson") {
                c.l1_arrivals = ArrivalProcess::poisson;
              } else if (v == "periodic") {
                c.l1_arrivals = ArrivalProcess::periodic;
              } else {
                bad_value(k, v, "poisson or periodic");
              }
            },
            [](const ScenarioConfig& c) {
              return std::string(c.l1_arrivals == ArrivalProcess::poisson ? "poisson" : "periodic");
            }},
      DAQ_FIELD(roi_fraction, parse_double),
      DAQ_FIELD(roi_robs, parse_u32),
      DAQ_FIELD(roi_spread, parse_u32),
      DAQ_FIELD(l2_accept_prob, parse_double),
      DAQ_FIELD(ef_accept_prob, parse_double),
      DAQ_FIELD(n_sv, parse_u32),
      DAQ_FIELD(n_l2pu, parse_u32),
      DAQ_FIELD(n_sfi, parse_u32),
      DAQ_FIELD(n_ef, parse_u32),
      DAQ_FIELD(l2_proc_dist, parse_dist),
      DAQ_FIELD(l2_proc_time_us, parse_uint),
      DAQ_FIELD(ef_proc_dist, parse_dist),
      DAQ_FIELD(ef_proc_time_us, parse_uint),
      DAQ_FIELD(result_bytes, parse_uint),
      DAQ_FIELD(l2pu_timeout_us, parse_uint),
      DAQ_FIELD(sfi_frag_timeout_us, parse_uint),
      DAQ_FIELD(build_timeout_us, parse_uint),
      DAQ_FIELD(clear_flush_us, parse_uint),
      DAQ_FIELD(clear_batch_max, parse_u32),
      DAQ_FIELD(max_credits, parse_u32),
      DAQ_FIELD(sfi_eoe_delay_us, parse_uint),
      DAQ_FIELD(ef_enabled, parse_bool),
      DAQ_FIELD(rob_capacity_bytes, parse_uint),
      DAQ_FIELD(slink_bandwidth, parse_uint),
      DAQ_FIELD(l2sv_capacity_hz, parse_double),
      DAQ_FIELD(strict, parse_bool),
      DAQ_FIELD(bus.bandwidth_bytes_per_s, parse_uint),
      DAQ_FIELD(bus.per_transfer_cost_us, parse_uint),
  };
  f[f.size() - 2].key = "bus.bandwidth";
  f[f.size() - 1].key = "bus.transfer_cost_us";

  for (std::size_t r = 0; r < kRoleCount; ++r) {
    const std::string prefix = std::string(kRoleNames[r]) + ".";
    auto link_field = [&](std::string param, auto member, auto parser) {
      f.push_back(Field{prefix + param,
                        [r, member, parser](ScenarioConfig& c, std::string_view k, std::string_view v) {
                          c.links[r].*member = parser(k, v);
                        },
                        [r, member](const ScenarioConfig& c) { return fmt(c.links[r].*member); }});
    };
    link_field("bandwidth", &LinkModel::bandwidth_bytes_per_s, parse_uint);
    link_field("latency_us", &LinkModel::prop_latency_us, parse_uint);
    link_field("rx_cost_us", &LinkModel::per_msg_rx_cost_us, parse_uint);
    link_field("tx_cost_us", &LinkModel::per_msg_tx_cost_us, parse_uint);
    link_field("cpu_ps_per_byte", &LinkModel::cpu_ps_per_byte, parse_uint);
    link_field("loss_prob", &LinkModel::loss_prob, parse_double);
  }
  return f;
}

#undef DAQ_FIELD

const std::vector<Field>& fields() {
  static const std::vector<Field> table = build_fields();
  return table;
}

void require(bool ok, std::string_view key, const std::string& why) {
  if (!ok) throw ConfigError("invalid value for key '" + std::string(key) + "': " + why);
}

void require_probability(double p, std::string_view key) {
  require(p >= 0.0 && p <= 1.0, key, "probability must lie in [0, 1]");
}

}  // namespace

std::string_view to_string(Role role) { return kRoleNames[static_cast<std::size_t>(role)]; }

std::array<LinkModel, kRoleCount> ScenarioConfig::default_links() {
  auto make = [](SimTime rx, SimTime tx, std::uint64_t cpu = 0) {
    return LinkModel{125'000'000, 5, rx, tx, cpu, 0.0};
  };
  std::array<LinkModel, kRoleCount> links;
  links[static_cast<std::size_t>(Role::ros)] = make(7, 6);
  links[static_cast<std::size_t>(Role::pros)] = make(5, 5);
  links[static_cast<std::size_t>(Role::roib)] = make(1, 1);
  links[static_cast<std::size_t>(Role::l2sv)] = make(9, 7);
  links[static_cast<std::size_t>(Role::l2pu)] = make(40, 10);
  links[static_cast<std::size_t>(Role::dfm)] = make(5, 2);
  links[static_cast<std::size_t>(Role::sfi)] = make(8, 4, 1700);
  links[static_cast<std::size_t>(Role::ef)] = make(5, 5);
  links[static_cast<std::size_t>(Role::sfo)] = make(5, 5);
  return links;
}

SimTime ScenarioConfig::duration_us() const {
  return static_cast<SimTime>(std::llround(duration_s * 1e6));
}

void apply_setting(ScenarioConfig& cfg, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  if (key == "loss_prob") {
    const double p = parse_double(key, value);
    for (auto& link : cfg.links) link.loss_prob = p;
    return;
  }
  for (const auto& field : fields()) {
    if (field.key == key) {
      field.set(cfg, key, value);
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + std::string(key) + "'");
}

void apply_assignment(ScenarioConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  }
  apply_setting(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

void apply_config_text(ScenarioConfig& cfg, std::string_view text, std::string_view origin) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_assignment(cfg, line);
    } catch (const ConfigError& e) {
      if (origin.empty()) throw;
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void validate(const ScenarioConfig& cfg) {
  require(cfg.duration_s >= 0.0, "duration_s", "must be non-negative");
  require(cfg.n_links > 0, "n_links", "must be positive");
  require(cfg.grouping > 0, "grouping", "must be positive");
  require(cfg.l1_rate_hz > 0.0, "l1_rate_hz", "must be positive");
  require_probability(cfg.roi_fraction, "roi_fraction");
  require(cfg.roi_robs <= cfg.n_links, "roi_robs", "exceeds n_links");
  require(cfg.roi_spread <= unit_count(cfg.n_links, cfg.grouping), "roi_spread",
          "exceeds the number of ROS units");
  require(cfg.roi_robs == 0 || cfg.roi_spread <= cfg.roi_robs, "roi_spread", "exceeds roi_robs");
  require_probability(cfg.l2_accept_prob, "l2_accept_prob");
  require_probability(cfg.ef_accept_prob, "ef_accept_prob");
  require(cfg.n_sv > 0, "n_sv", "must be positive");
  require(cfg.n_l2pu >= cfg.n_sv, "n_l2pu", "every supervisor needs at least one L2PU");
  require(cfg.n_sfi > 0, "n_sfi", "must be positive");
  require(!cfg.ef_enabled || cfg.n_ef > 0, "n_ef", "must be positive when ef_enabled");
  require(cfg.result_bytes % 4 == 0, "result_bytes", "must be a multiple of 4");
  require(cfg.clear_batch_max > 0, "clear_batch_max", "must be positive");
  require(cfg.max_credits > 0, "max_credits", "must be positive");
  require(cfg.clear_flush_us > 0, "clear_flush_us", "must be positive");
  require(cfg.slink_bandwidth > 0, "slink_bandwidth", "must be positive");
  require(cfg.bus.bandwidth_bytes_per_s > 0, "bus.bandwidth", "must be positive");
  require(cfg.l2sv_capacity_hz > 0.0, "l2sv_capacity_hz", "must be positive");
  for (std::size_t r = 0; r < kRoleCount; ++r) {
    const std::string prefix(kRoleNames[r]);
    require(cfg.links[r].bandwidth_bytes_per_s > 0, prefix + ".bandwidth", "must be positive");
    require_probability(cfg.links[r].loss_prob, prefix + ".loss_prob");
  }
  require(cfg.l1_rate_hz / cfg.n_sv <= cfg.l2sv_capacity_hz, "l1_rate_hz",
          "per-supervisor rate " + fmt(cfg.l1_rate_hz / cfg.n_sv) + " Hz exceeds l2sv_capacity_hz");
}

ScenarioConfig parse_config(std::string_view text) {
  ScenarioConfig cfg;
  apply_config_text(cfg, text);
  validate(cfg);
  return cfg;
}

namespace {
std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}
}  // namespace

ScenarioConfig load_config(const std::filesystem::path& path) {
  ScenarioConfig cfg;
  apply_config_text(cfg, read_file(path), path.string());
  validate(cfg);
  return cfg;
}

void overlay_config_file(ScenarioConfig& cfg, const std::filesystem::path& path) {
  apply_config_text(cfg, read_file(path), path.string());
}

std::string canonical_dump(const ScenarioConfig& cfg) {
  std::string out;
  for (const auto& field : fields()) out += field.key + "=" + field.get(cfg) + "\n";
  return out;
}

std::vector<std::string> non_default_settings(const ScenarioConfig& cfg) {
  const ScenarioConfig defaults;
  std::vector<std::string> out;
  for (const auto& field : fields()) {
    const auto value = field.get(cfg);
    if (value != field.get(defaults)) out.push_back(field.key + "=" + value);
  }
  return out;
}

std::string config_hash(const ScenarioConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : canonical_dump(cfg)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace daqflow
