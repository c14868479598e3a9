#pragma once

// Deterministic discrete-event kernel.
//
// Every registered component is a single-server host: its per-message CPU
// costs and its network interface share one timeline, so a host that is
// sending cannot receive and vice versa. For a message of B wire bytes sent
// at time `now` from S to D:
//
//   start  = max(now, S.busy)
//   S.busy = start + S.tx_cost + cpu(B, S) + ser(B, S.bandwidth)
//   arrive = S.busy + S.latency                 (last byte at D)
//   first  = arrive - ser(B, S.bandwidth)        (first byte at D)
//
// and when the message arrives at D:
//
//   in     = max(arrive, max(first, D.busy) + ser(B, D.bandwidth))
//   D.busy = in + D.rx_cost + cpu(B, D)          (handler runs at D.busy)
//
// ser() and cpu() round half up to whole microseconds. With an idle receiver
// of equal bandwidth the delivery time reduces to
// now + tx_cost + B/bandwidth + latency + rx_cost.

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "daqflow/core_model.hpp"

namespace daqflow {

/// Virtual time in integer microseconds.
using SimTime = std::uint64_t;

class KernelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LinkModel {
  std::uint64_t bandwidth_bytes_per_s = 125'000'000;
  SimTime prop_latency_us = 0;
  SimTime per_msg_rx_cost_us = 0;
  SimTime per_msg_tx_cost_us = 0;
  /// Host CPU time per byte handled (copy cost), picoseconds.
  std::uint64_t cpu_ps_per_byte = 0;
  double loss_prob = 0.0;
};

struct BusModel {
  std::uint64_t bandwidth_bytes_per_s = 528'000'000;
  SimTime per_transfer_cost_us = 1;

  SimTime transfer_time(std::uint64_t bytes) const;
};

/// Round-half-up serialization time of `bytes` at `bytes_per_s`.
SimTime serialization_us(std::uint64_t bytes, std::uint64_t bytes_per_s);
SimTime cpu_bytes_us(std::uint64_t bytes, std::uint64_t ps_per_byte);

/// Seeded random stream. Transforms are written out so draws are identical
/// across standard library implementations.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  double uniform();  // [0, 1)
  bool bernoulli(double p) { return uniform() < p; }
  double exponential(double mean);
  std::uint64_t below(std::uint64_t n);  // [0, n)

 private:
  std::mt19937_64 engine_;
};

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream_name);

struct KernelCounters {
  std::array<std::uint64_t, kMessageKindCount> sent{};
  std::array<std::uint64_t, kMessageKindCount> delivered{};
  std::array<std::uint64_t, kMessageKindCount> dropped{};
  std::uint64_t actions = 0;

  std::uint64_t total_dropped() const;
  std::uint64_t total_delivered() const;
};

struct HostStats {
  SimTime busy_us = 0;
  std::uint64_t bytes_in = 0;
  std::uint64_t bytes_out = 0;
  std::uint64_t messages_in = 0;
  std::uint64_t messages_out = 0;
  /// Messages arrived but not yet handed to the component.
  std::uint64_t backlog = 0;
  std::uint64_t backlog_hwm = 0;
};

struct KernelOptions {
  std::uint64_t max_actions_per_timestamp = 1'000'000;
  /// Kinds subject to LinkModel::loss_prob; other kinds travel reliably.
  std::vector<MessageKind> lossy_kinds = {MessageKind::data_request, MessageKind::data_response,
                                          MessageKind::eb_assign, MessageKind::eoe,
                                          MessageKind::clear};
};

class Kernel {
 public:
  using Action = std::function<void()>;
  using Handler = std::function<void(const Message&)>;
  using DropFilter = std::function<bool(const Message&)>;

  explicit Kernel(std::uint64_t seed, KernelOptions options = {});
  Kernel(const Kernel&) = delete;
  Kernel& operator=(const Kernel&) = delete;

  ComponentId add_component(std::string name, LinkModel link, Handler handler = {});
  void set_handler(ComponentId id, Handler handler);
  const std::string& name(ComponentId id) const;
  const LinkModel& link(ComponentId id) const;
  std::size_t component_count() const { return hosts_.size(); }

  SimTime now() const { return now_; }

  /// Runs `action` at `t`; equal timestamps run in insertion order.
  void schedule_at(SimTime t, Action action);
  void schedule_after(SimTime delay, Action action) { schedule_at(now_ + delay, std::move(action)); }

  /// Sends over the host/network model described at the top of this file.
  void send(Message msg);
  /// Delivers at `t` without touching either host (readout links).
  void deliver_at(SimTime t, Message msg);

  void run_until(SimTime t_end);
  void run_to_quiescence();
  bool idle() const { return queue_.empty(); }

  /// Per-component stream; draws of one component never perturb another's.
  RngStream& rng(ComponentId id);

  const KernelCounters& counters() const { return counters_; }
  const HostStats& stats(ComponentId id) const;

  /// One line per delivery: `<time_us> <KIND> <src> <dst> <l1id|-> <wire_bytes>`.
  void set_trace(std::ostream* out) { trace_ = out; }
  /// Extra fault injection: messages for which the filter returns true are dropped.
  void set_drop_filter(DropFilter filter) { drop_filter_ = std::move(filter); }

 private:
  struct Host {
    std::string name;
    LinkModel link;
    Handler handler;
    SimTime busy_until = 0;
    HostStats stats;
    RngStream rng;
    RngStream loss_rng;
  };
  struct Entry {
    SimTime t;
    std::uint64_t seq;
    Action action;
  };

  Host& host(ComponentId id);
  void execute(Entry entry);
  void on_arrival(Message msg, SimTime first_byte);
  void deliver(const Message& msg);
  void write_trace(const Message& msg) const;
  bool lossy(MessageKind kind) const { return lossy_[static_cast<std::size_t>(kind)]; }

  std::uint64_t seed_;
  KernelOptions options_;
  std::array<bool, kMessageKindCount> lossy_{};
  std::vector<Host> hosts_;
  std::vector<Entry> queue_;
  std::uint64_t next_seq_ = 0;
  SimTime now_ = 0;
  SimTime last_action_time_ = 0;
  std::uint64_t same_time_actions_ = 0;
  KernelCounters counters_;
  std::ostream* trace_ = nullptr;
  DropFilter drop_filter_;
};

}  // namespace daqflow
