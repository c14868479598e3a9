#include "daqflow/sim_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace daqflow {

SimTime serialization_us(std::uint64_t bytes, std::uint64_t bytes_per_s) {
  if (bytes_per_s == 0) throw KernelError("zero bandwidth");
  return (bytes * 1'000'000 + bytes_per_s / 2) / bytes_per_s;
}

SimTime cpu_bytes_us(std::uint64_t bytes, std::uint64_t ps_per_byte) {
  return (bytes * ps_per_byte + 500'000) / 1'000'000;
}

SimTime BusModel::transfer_time(std::uint64_t bytes) const {
  return per_transfer_cost_us + serialization_us(bytes, bandwidth_bytes_per_s);
}

double RngStream::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double RngStream::exponential(double mean) { return -std::log1p(-uniform()) * mean; }

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) return 0;
  // Lemire's bounded draw with rejection.
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t x = engine_();
    const unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
    if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream_name) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : stream_name) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  std::uint64_t x = seed ^ h;
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t KernelCounters::total_dropped() const {
  return std::accumulate(dropped.begin(), dropped.end(), std::uint64_t{0});
}

std::uint64_t KernelCounters::total_delivered() const {
  return std::accumulate(delivered.begin(), delivered.end(), std::uint64_t{0});
}

Kernel::Kernel(std::uint64_t seed, KernelOptions options)
    : seed_(seed), options_(std::move(options)) {
  for (auto kind : options_.lossy_kinds) lossy_[static_cast<std::size_t>(kind)] = true;
}

ComponentId Kernel::add_component(std::string name, LinkModel link, Handler handler) {
  if (link.bandwidth_bytes_per_s == 0) throw ConfigError("component " + name + ": zero bandwidth");
  if (!(link.loss_prob >= 0.0 && link.loss_prob <= 1.0)) {
    throw ConfigError("component " + name + ": loss_prob outside [0,1]");
  }
  const auto id = static_cast<ComponentId>(hosts_.size());
  RngStream rng(derive_seed(seed_, name));
  RngStream loss_rng(derive_seed(seed_, name + "/net"));
  hosts_.push_back(Host{std::move(name), link, std::move(handler), 0, {}, rng, loss_rng});
  return id;
}

void Kernel::set_handler(ComponentId id, Handler handler) { host(id).handler = std::move(handler); }

const std::string& Kernel::name(ComponentId id) const { return hosts_.at(id).name; }

const LinkModel& Kernel::link(ComponentId id) const { return hosts_.at(id).link; }

Kernel::Host& Kernel::host(ComponentId id) {
  if (id >= hosts_.size()) throw KernelError("unknown component id " + std::to_string(id));
  return hosts_[id];
}

const HostStats& Kernel::stats(ComponentId id) const { return hosts_.at(id).stats; }

RngStream& Kernel::rng(ComponentId id) { return host(id).rng; }

namespace {
constexpr auto kLater = [](const auto& a, const auto& b) {
  return a.t != b.t ? a.t > b.t : a.seq > b.seq;
};
}  // namespace

void Kernel::schedule_at(SimTime t, Action action) {
  if (t < now_) {
    throw KernelError("schedule_at(" + std::to_string(t) + ") is in the past (now=" +
                      std::to_string(now_) + ")");
  }
  queue_.push_back(Entry{t, next_seq_++, std::move(action)});
  std::push_heap(queue_.begin(), queue_.end(), kLater);
}

void Kernel::send(Message msg) {
  if (msg.dst >= hosts_.size()) {
    throw KernelError("send to unknown component " + std::to_string(msg.dst));
  }
  Host& src = host(msg.src);
  const std::uint64_t bytes = msg.wire_bytes();
  const SimTime ser = serialization_us(bytes, src.link.bandwidth_bytes_per_s);
  const SimTime start = std::max(now_, src.busy_until);
  const SimTime cpu = src.link.per_msg_tx_cost_us + cpu_bytes_us(bytes, src.link.cpu_ps_per_byte);
  src.busy_until = start + cpu + ser;
  src.stats.busy_us += cpu + ser;
  src.stats.bytes_out += bytes;
  ++src.stats.messages_out;
  ++counters_.sent[static_cast<std::size_t>(msg.kind)];

  bool drop = drop_filter_ && drop_filter_(msg);
  if (!drop && lossy(msg.kind) && src.link.loss_prob > 0.0) {
    drop = src.loss_rng.bernoulli(src.link.loss_prob);
  }
  if (drop) {
    ++counters_.dropped[static_cast<std::size_t>(msg.kind)];
    return;
  }
  const SimTime arrival = src.busy_until + src.link.prop_latency_us;
  const SimTime first_byte = arrival - ser;
  schedule_at(arrival, [this, first_byte, m = std::move(msg)]() mutable {
    on_arrival(std::move(m), first_byte);
  });
}

void Kernel::on_arrival(Message msg, SimTime first_byte) {
  Host& dst = host(msg.dst);
  const std::uint64_t bytes = msg.wire_bytes();
  const SimTime ser = serialization_us(bytes, dst.link.bandwidth_bytes_per_s);
  const SimTime in = std::max(now_, std::max(first_byte, dst.busy_until) + ser);
  const SimTime cpu = dst.link.per_msg_rx_cost_us + cpu_bytes_us(bytes, dst.link.cpu_ps_per_byte);
  const SimTime receive_start = std::max(first_byte, dst.busy_until);
  dst.busy_until = in + cpu;
  dst.stats.busy_us += dst.busy_until - receive_start;
  dst.stats.backlog_hwm = std::max(dst.stats.backlog_hwm, ++dst.stats.backlog);
  schedule_at(dst.busy_until, [this, m = std::move(msg)]() {
    --hosts_[m.dst].stats.backlog;
    deliver(m);
  });
}

void Kernel::deliver_at(SimTime t, Message msg) {
  if (msg.dst >= hosts_.size()) {
    throw KernelError("deliver to unknown component " + std::to_string(msg.dst));
  }
  ++counters_.sent[static_cast<std::size_t>(msg.kind)];
  schedule_at(t, [this, m = std::move(msg)]() { deliver(m); });
}

void Kernel::deliver(const Message& msg) {
  Host& dst = hosts_[msg.dst];
  dst.stats.bytes_in += msg.wire_bytes();
  ++dst.stats.messages_in;
  ++counters_.delivered[static_cast<std::size_t>(msg.kind)];
  if (trace_) write_trace(msg);
  if (dst.handler) dst.handler(msg);
}

void Kernel::write_trace(const Message& msg) const {
  *trace_ << now_ << ' ' << to_string(msg.kind) << ' ' << hosts_[msg.src].name << ' '
          << hosts_[msg.dst].name << ' ';
  if (msg.kind == MessageKind::clear) {
    *trace_ << '-';
  } else {
    *trace_ << msg.l1id.value;
  }
  *trace_ << ' ' << msg.wire_bytes() << '\n';
}

void Kernel::execute(Entry entry) {
  if (entry.t == last_action_time_) {
    if (++same_time_actions_ > options_.max_actions_per_timestamp) {
      throw KernelError("livelock guard: more than " +
                        std::to_string(options_.max_actions_per_timestamp) + " actions at t=" +
                        std::to_string(entry.t));
    }
  } else {
    last_action_time_ = entry.t;
    same_time_actions_ = 1;
  }
  now_ = entry.t;
  ++counters_.actions;
  entry.action();
}

void Kernel::run_until(SimTime t_end) {
  while (!queue_.empty() && queue_.front().t <= t_end) {
    std::pop_heap(queue_.begin(), queue_.end(), kLater);
    Entry entry = std::move(queue_.back());
    queue_.pop_back();
    execute(std::move(entry));
  }
  now_ = std::max(now_, t_end);
}

void Kernel::run_to_quiescence() {
  while (!queue_.empty()) {
    std::pop_heap(queue_.begin(), queue_.end(), kLater);
    Entry entry = std::move(queue_.back());
    queue_.pop_back();
    execute(std::move(entry));
  }
}

}  // namespace daqflow
