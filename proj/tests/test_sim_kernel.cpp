#include <sstream>

#include "doctest.h"
#include "daqflow/sim_kernel.hpp"

using namespace daqflow;

namespace {

LinkModel plain_link(std::uint64_t bw = 125'000'000) {
  LinkModel l;
  l.bandwidth_bytes_per_s = bw;
  return l;
}

Message eoe(ComponentId src, ComponentId dst, std::uint32_t id) {
  return make_message(MessageKind::eoe, src, dst, EventId{id});
}

Message response(ComponentId src, ComponentId dst, std::uint32_t id, std::uint32_t words) {
  return make_message(MessageKind::data_response, src, dst, EventId{id},
                      FragmentList{{ROBFragment{0, EventId{id}, FragmentStatus::ok, words}}});
}

// Reference host model kept separate from the kernel implementation.
struct HostOracle {
  double bw;
  SimTime tx, rx, lat;
  SimTime busy = 0;
};

SimTime oracle_ser(std::uint64_t bytes, double bw) {
  return static_cast<SimTime>(std::floor(bytes * 1e6 / bw + 0.5));
}

struct Arrival {
  SimTime arrive, first;
  std::uint64_t bytes;
};

Arrival oracle_send(HostOracle& s, SimTime now, std::uint64_t bytes) {
  const SimTime start = std::max(now, s.busy);
  s.busy = start + s.tx + oracle_ser(bytes, s.bw);
  const SimTime arrive = s.busy + s.lat;
  return {arrive, arrive - oracle_ser(bytes, s.bw), bytes};
}

// Handler time at d; arrivals must be fed in arrival order.
SimTime oracle_receive(HostOracle& d, const Arrival& a) {
  const SimTime in = std::max(a.arrive, std::max(a.first, d.busy) + oracle_ser(a.bytes, d.bw));
  d.busy = in + d.rx;
  return d.busy;
}

}  // namespace

TEST_SUITE("sim_kernel") {

TEST_CASE("equal timestamps run in insertion order; the past is rejected") {
  Kernel k(1);
  std::string order;
  k.schedule_at(0, [&] { order += 'a'; });
  k.schedule_at(0, [&] { order += 'b'; });
  k.schedule_at(5, [&] {
    order += 'c';
    CHECK_THROWS_AS(k.schedule_at(4, [] {}), KernelError);
  });
  k.run_to_quiescence();
  CHECK(order == "abc");
  CHECK(k.now() == 5);
}

TEST_CASE("serialization arithmetic") {
  CHECK(serialization_us(12'000, 125'000'000) == 96);
  // 0.128 us rounds down to zero
  CHECK(serialization_us(16, 125'000'000) == 0);
  CHECK(serialization_us(63, 125'000'000) == 1);  // 0.504 rounds up
  CHECK(serialization_us(62, 125'000'000) == 0);
  CHECK(cpu_bytes_us(1'000'000, 1700) == 1700);
  CHECK(cpu_bytes_us(300, 1700) == 1);  // 0.51 us
  CHECK(cpu_bytes_us(0, 1700) == 0);
}

TEST_CASE("idle receiver: now + tx + ser + latency + rx") {
  Kernel k(1);
  LinkModel a = plain_link();
  a.per_msg_tx_cost_us = 3;
  a.prop_latency_us = 5;
  LinkModel b = plain_link();
  b.per_msg_rx_cost_us = 7;
  SimTime got = 0;
  const auto src = k.add_component("a", a);
  const auto dst = k.add_component("b", b, [&](const Message&) { got = k.now(); });
  k.schedule_at(100, [&] { k.send(response(src, dst, 1, 2'996)); });  // 12,000 B payload
  k.run_to_quiescence();
  const std::uint64_t bytes = kEnvelopeBytes + 24 + 4 * 2'996;
  CHECK(got == 100 + 3 + oracle_ser(bytes, 125e6) + 5 + 7);
}

TEST_CASE("host model matches the reference timeline") {
  Kernel k(3);
  LinkModel la = plain_link(100'000'000);
  la.per_msg_tx_cost_us = 2;
  la.per_msg_rx_cost_us = 4;
  la.prop_latency_us = 5;
  LinkModel lb = plain_link(50'000'000);
  lb.per_msg_tx_cost_us = 1;
  lb.per_msg_rx_cost_us = 6;
  lb.prop_latency_us = 5;
  std::vector<SimTime> at_b, at_a;
  const auto a = k.add_component("a", la, [&](const Message&) { at_a.push_back(k.now()); });
  const auto b = k.add_component("b", lb, [&](const Message&) { at_b.push_back(k.now()); });

  HostOracle oa{100e6, 2, 4, 5}, ob{50e6, 1, 6, 5};
  std::vector<SimTime> expect_b, expect_a;
  // a bursts three responses to b at t=0 while b sends a small message to a at t=10
  const std::uint32_t words[] = {500, 1000, 250};
  k.schedule_at(0, [&] {
    for (std::uint32_t i = 0; i < 3; ++i) k.send(response(a, b, i + 1, words[i]));
  });
  k.schedule_at(10, [&] { k.send(eoe(b, a, 9)); });
  std::vector<Arrival> to_b;
  for (std::uint32_t i = 0; i < 3; ++i) {
    to_b.push_back(oracle_send(oa, 0, kEnvelopeBytes + 24 + 4ull * words[i]));
  }
  const Arrival to_a = oracle_send(ob, 10, kEnvelopeBytes + kControlPayloadBytes);
  REQUIRE(to_a.arrive < to_b[0].arrive);
  expect_a.push_back(oracle_receive(oa, to_a));
  for (const auto& arr : to_b) expect_b.push_back(oracle_receive(ob, arr));
  k.run_to_quiescence();
  CHECK(at_b == expect_b);
  CHECK(at_a == expect_a);
  CHECK(k.stats(b).messages_in == 3);
  CHECK(k.stats(a).messages_out == 3);
}

TEST_CASE("loss_prob=1 drops every lossy message") {
  Kernel k(1);
  LinkModel lossy = plain_link();
  lossy.loss_prob = 1.0;
  int delivered = 0;
  const auto a = k.add_component("a", lossy);
  const auto b = k.add_component("b", plain_link(), [&](const Message&) { ++delivered; });
  k.schedule_at(0, [&] {
    for (int i = 0; i < 20; ++i) k.send(eoe(a, b, i + 1));
  });
  k.run_to_quiescence();
  CHECK(delivered == 0);
  const auto eoe_kind = static_cast<std::size_t>(MessageKind::eoe);
  CHECK(k.counters().dropped[eoe_kind] == 20);
  CHECK(k.counters().sent[eoe_kind] == 20);
  CHECK(k.counters().total_delivered() == 0);
}

TEST_CASE("empty kernel and error paths") {
  Kernel k(1);
  k.run_to_quiescence();
  CHECK(k.now() == 0);
  CHECK(k.counters().actions == 0);
  CHECK(k.counters().total_delivered() == 0);

  const auto a = k.add_component("a", plain_link());
  CHECK_THROWS_AS(k.send(eoe(a, 42, 1)), KernelError);
  CHECK_THROWS_AS(k.add_component("z", plain_link(0)), ConfigError);
}

TEST_CASE("livelock guard") {
  KernelOptions opts;
  opts.max_actions_per_timestamp = 100;
  Kernel k(1, opts);
  std::function<void()> spin = [&] { k.schedule_at(k.now(), spin); };
  k.schedule_at(7, spin);
  CHECK_THROWS_AS(k.run_to_quiescence(), KernelError);
}

TEST_CASE("run_until stops at the horizon") {
  Kernel k(1);
  int ran = 0;
  for (SimTime t : {5u, 10u, 11u}) k.schedule_at(t, [&] { ++ran; });
  k.run_until(10);
  CHECK(ran == 2);
  CHECK_FALSE(k.idle());
  k.run_to_quiescence();
  CHECK(ran == 3);
}

TEST_CASE("random streams") {
  RngStream a(derive_seed(5, "x")), b(derive_seed(5, "x")), c(derive_seed(5, "y"));
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const double u = a.uniform();
    CHECK(u == b.uniform());
    differs |= u != c.uniform();
  }
  CHECK(differs);

  RngStream r(11);
  int accepts = 0;
  for (int i = 0; i < 100'000; ++i) accepts += r.bernoulli(0.03);
  CHECK(std::abs(accepts / 1e5 - 0.03) <= 0.003);

  double sum = 0;
  for (int i = 0; i < 100'000; ++i) sum += r.exponential(50.0);
  CHECK(sum / 1e5 == doctest::Approx(50.0).epsilon(0.02));

  for (int i = 0; i < 1000; ++i) CHECK(r.below(7) < 7);
}

TEST_CASE("per-component streams are independent of other components' draws") {
  auto draws = [](bool disturb) {
    Kernel k(9);
    const auto a = k.add_component("a", plain_link());
    const auto b = k.add_component("b", plain_link());
    std::vector<double> out;
    for (int i = 0; i < 10; ++i) {
      if (disturb) k.rng(b).uniform();
      out.push_back(k.rng(a).uniform());
    }
    return out;
  };
  CHECK(draws(false) == draws(true));
}

TEST_CASE("trace format and determinism") {
  auto run = [] {
    std::ostringstream trace;
    Kernel k(4);
    k.set_trace(&trace);
    LinkModel l = plain_link();
    l.loss_prob = 0.3;
    const auto a = k.add_component("src", l);
    const auto b = k.add_component("dst", l, [](const Message&) {});
    k.schedule_at(0, [&] {
      for (std::uint32_t i = 1; i <= 50; ++i) k.send(eoe(a, b, i));
      k.send(make_message(MessageKind::clear, a, b, EventId{1}, ClearBatch{{EventId{1}}}));
    });
    k.run_to_quiescence();
    return trace.str();
  };
  const auto t1 = run();
  CHECK(t1 == run());
  std::istringstream in(t1);
  std::string line;
  REQUIRE(std::getline(in, line));
  std::istringstream f(line);
  std::string time, kind, src, dst, id, bytes;
  f >> time >> kind >> src >> dst >> id >> bytes;
  CHECK(kind == "EOE");
  CHECK(src == "src");
  CHECK(dst == "dst");
  CHECK(bytes == "24");
  if (t1.find("CLEAR") != std::string::npos) {
    CHECK(t1.find("CLEAR src dst - 20") != std::string::npos);
  }
}

}
