#include "daqflow/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace daqflow {

std::vector<std::string> ConservationReport::violations(bool expect_empty_buffers) const {
  std::vector<std::string> out;
  auto say = [&](bool bad, const std::string& what, std::uint64_t n) {
    if (bad) out.push_back(what + " (" + std::to_string(n) + ")");
  };
  const std::uint64_t disposed = rejected + built + timed_out;
  say(disposed != generated, "dispositions do not match generated events", disposed);
  say(undisposed != 0, "events without a disposition", undisposed);
  say(bad_flush_count != 0, "events not cleared exactly once", bad_flush_count);
  say(work_in_flight != 0, "work still in flight at quiescence", work_in_flight);
  say(ef_mismatch != 0, "EF/SFO counters disagree", ef_mismatch);
  if (expect_empty_buffers) {
    say(rob_occupancy_bytes != 0, "ROB bytes left after quiescence", rob_occupancy_bytes);
    say(pseudo_occupancy_bytes != 0, "pseudo-ROS bytes left after quiescence",
        pseudo_occupancy_bytes);
  }
  return out;
}

std::vector<std::uint32_t> draw_roi_robs(const ScenarioConfig& cfg, RngStream& rng) {
  std::uint32_t k = cfg.roi_robs;
  if (k == 0) {
    k = static_cast<std::uint32_t>(std::llround(cfg.roi_fraction * cfg.n_links));
    k = std::clamp<std::uint32_t>(k, 1, cfg.n_links);
  }
  auto pick_distinct = [&rng](std::vector<std::uint32_t> pool, std::uint32_t n) {
    n = std::min<std::uint32_t>(n, static_cast<std::uint32_t>(pool.size()));
    for (std::uint32_t i = 0; i < n; ++i) {
      const auto j = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(n);
    return pool;
  };

  if (cfg.roi_spread == 0) {
    std::vector<std::uint32_t> all(cfg.n_links);
    std::iota(all.begin(), all.end(), 0u);
    return pick_distinct(std::move(all), k);
  }
  const Geometry geometry = cfg.geometry();
  std::vector<std::uint32_t> units(geometry.unit_count());
  std::iota(units.begin(), units.end(), 0u);
  units = pick_distinct(std::move(units), cfg.roi_spread);
  k = std::max(k, cfg.roi_spread);
  std::vector<std::uint32_t> robs;
  for (std::uint32_t j = 0; j < units.size(); ++j) {
    const std::uint32_t share = k / cfg.roi_spread + (j < k % cfg.roi_spread ? 1 : 0);
    auto picked = pick_distinct(geometry.links_of_unit(units[j]), share);
    robs.insert(robs.end(), picked.begin(), picked.end());
  }
  return robs;
}

Scenario::Scenario(ScenarioConfig cfg, std::unique_ptr<EventSink> sink)
    : cfg_(std::move(cfg)), geometry_(cfg_.geometry()), kernel_(cfg_.seed) {
  validate(cfg_);
  lvl1_ = kernel_.add_component("lvl1", LinkModel{});

  std::vector<ComponentId> ros_ids;
  for (std::uint32_t u = 0; u < geometry_.unit_count(); ++u) {
    ros_.push_back(std::make_unique<RosUnit>(kernel_, u, geometry_, cfg_.link(Role::ros), cfg_.bus,
                                             cfg_.rob_capacity_bytes));
    ros_ids.push_back(ros_.back()->id());
  }
  pros_ = std::make_unique<PseudoRos>(kernel_, geometry_, cfg_.link(Role::pros));

  const SfiParams sfi_params{cfg_.max_credits, cfg_.sfi_frag_timeout_us, cfg_.sfi_eoe_delay_us,
                             cfg_.ef_enabled};
  std::vector<ComponentId> sfi_ids;
  for (std::uint32_t i = 0; i < cfg_.n_sfi; ++i) {
    sfis_.push_back(std::make_unique<SubFarmInput>(kernel_, i, geometry_, cfg_.link(Role::sfi),
                                                   ros_ids, pros_->id(), sfi_params));
    sfi_ids.push_back(sfis_.back()->id());
  }

  std::vector<ComponentId> clear_targets = ros_ids;
  clear_targets.push_back(pros_->id());
  dfm_ = std::make_unique<DataFlowManager>(
      kernel_, cfg_.link(Role::dfm), sfi_ids, clear_targets,
      DfmParams{cfg_.clear_batch_max, cfg_.clear_flush_us, cfg_.build_timeout_us});

  const L2puParams pu_params{
      DecisionStub{cfg_.l2_accept_prob, cfg_.l2_proc_dist, cfg_.l2_proc_time_us},
      cfg_.l2pu_timeout_us, cfg_.result_bytes};
  for (std::uint32_t i = 0; i < cfg_.n_l2pu; ++i) {
    l2pus_.push_back(std::make_unique<L2ProcessingUnit>(kernel_, i, geometry_,
                                                        cfg_.link(Role::l2pu), ros_ids,
                                                        pros_->id(), pu_params));
  }
  // Supervisor s manages the L2PUs whose index is congruent to s.
  std::vector<ComponentId> sv_ids;
  for (std::uint32_t s = 0; s < cfg_.n_sv; ++s) {
    std::vector<ComponentId> pus;
    for (std::uint32_t i = s; i < cfg_.n_l2pu; i += cfg_.n_sv) pus.push_back(l2pus_[i]->id());
    svs_.push_back(
        std::make_unique<L2Supervisor>(kernel_, s, cfg_.link(Role::l2sv), pus, dfm_->id()));
    sv_ids.push_back(svs_.back()->id());
  }
  roib_ = std::make_unique<RoiBuilder>(kernel_, geometry_, cfg_.link(Role::roib), sv_ids);

  sfo_ = std::make_unique<SubFarmOutput>(kernel_, cfg_.link(Role::sfo), std::move(sink));
  if (cfg_.ef_enabled) {
    const DecisionStub ef_stub{cfg_.ef_accept_prob, cfg_.ef_proc_dist, cfg_.ef_proc_time_us};
    for (std::uint32_t i = 0; i < cfg_.n_ef; ++i) {
      efs_.push_back(std::make_unique<EfNode>(kernel_, i, cfg_.link(Role::ef),
                                              sfi_ids[i % sfi_ids.size()], sfo_->id(), ef_stub));
    }
  }
}

void Scenario::run() {
  for (auto& ef : efs_) ef->start();
  schedule_l1(0, 0);
  kernel_.run_to_quiescence();
}

void Scenario::schedule_l1(std::uint64_t index, SimTime t) {
  if (t >= cfg_.duration_us()) return;
  kernel_.schedule_at(t, [this, index]() {
    trigger();
    SimTime next = 0;
    if (cfg_.l1_arrivals == ArrivalProcess::periodic) {
      next = static_cast<SimTime>(std::llround(static_cast<double>(index + 1) * 1e6 / cfg_.l1_rate_hz));
    } else {
      const double gap = kernel_.rng(lvl1_).exponential(1e6 / cfg_.l1_rate_hz);
      next = kernel_.now() + static_cast<SimTime>(std::llround(gap));
    }
    schedule_l1(index + 1, next);
  });
}

void Scenario::trigger() {
  const EventId l1id{next_l1_++};
  const SimTime now = kernel_.now();
  l1_times_.push_back(now);

  // Links read out in parallel; a unit has its fragments once its slowest
  // link has delivered.
  SimTime ready = now;
  for (std::uint32_t u = 0; u < ros_.size(); ++u) {
    FragmentList push;
    SimTime unit_ready = now;
    for (auto link : geometry_.links_of_unit(u)) {
      push.fragments.push_back(make_fragment(geometry_.n_links, link, l1id, geometry_.words_for(link)));
      unit_ready = std::max(
          unit_ready, now + serialization_us(push.fragments.back().wire_bytes(), cfg_.slink_bandwidth));
    }
    ready = std::max(ready, unit_ready);
    kernel_.deliver_at(unit_ready, make_message(MessageKind::frag_push, lvl1_, ros_[u]->id(), l1id,
                                                std::move(push)));
  }

  const auto robs = draw_roi_robs(cfg_, kernel_.rng(lvl1_));
  const std::size_t n_calo = (robs.size() + 1) / 2;
  RoiInput input;
  input.calo.push_back(RoiItem{Subdetector::calo, {robs.begin(), robs.begin() + n_calo}});
  if (n_calo < robs.size()) {
    input.muon.push_back(RoiItem{Subdetector::muon, {robs.begin() + n_calo, robs.end()}});
  }
  kernel_.deliver_at(ready, make_message(MessageKind::roi_input, lvl1_, roib_->id(), l1id,
                                         std::move(input)));
}

ConservationReport Scenario::conservation() const {
  ConservationReport r;
  r.generated = events_generated();
  const auto& ledger = dfm_->ledger();
  for (const auto& [id, record] : ledger) {
    switch (record.disposition) {
      case Disposition::rejected:
        ++r.rejected;
        break;
      case Disposition::built:
        ++r.built;
        break;
      case Disposition::timed_out:
        ++r.timed_out;
        break;
    }
    if (record.flush_count != 1) ++r.bad_flush_count;
  }
  for (std::uint32_t id = 1; id < next_l1_; ++id) {
    if (!ledger.contains(EventId{id})) ++r.undisposed;
  }
  for (const auto& unit : ros_) r.rob_occupancy_bytes += unit->occupancy_bytes();
  r.pseudo_occupancy_bytes = pros_->occupancy_bytes();

  r.work_in_flight += dfm_->pending_builds() + dfm_->clear_batch_size();
  for (const auto& sv : svs_) r.work_in_flight += sv->pending();
  for (const auto& pu : l2pus_) r.work_in_flight += pu->active();
  std::uint64_t shipped = 0;
  for (const auto& sfi : sfis_) {
    r.work_in_flight += sfi->building() + sfi->credits_in_flight();
    if (cfg_.ef_enabled) r.work_in_flight += sfi->built_queue_size();
    shipped += sfi->counters().ef_events_sent;
  }
  std::uint64_t pulled = 0;
  std::uint64_t accepted = 0;
  for (const auto& ef : efs_) {
    const auto& c = ef->counters();
    pulled += c.pulled;
    accepted += c.accepted;
    if (c.accepted + c.rejected != c.pulled) ++r.ef_mismatch;
    if (ef->busy()) ++r.work_in_flight;
  }
  if (pulled != shipped) ++r.ef_mismatch;
  if (sfo_->counters().records_written != accepted) ++r.ef_mismatch;
  return r;
}

const std::vector<std::string>& scenario_columns() {
  static const std::vector<std::string> columns = {
      "l1_events",         "l1_rate_hz",          "roi_records",
      "roi_dead_letters",  "l2_decisions",        "l2_accepts",
      "l2_collect_mean_us", "l2_collect_p95_us",  "l2_decision_mean_us",
      "l2pu_share_min",    "l2pu_share_max",      "l2sv_balance_violations",
      "eb_assigned",       "eb_built",            "eb_partial",
      "eb_timed_out",      "eb_rate_hz",          "eb_fraction",
      "sfi_ingest_mb_s",   "sfi_retries",         "sfi_missing_responders",
      "sfi_credits_hwm",   "dfm_clear_batches",   "dfm_balance_spread_max",
      "dfm_duplicate_decisions", "ef_pulled",     "ef_accepted",
      "ef_rejected",       "sfo_records",         "sfo_bytes",
      "sfo_rate_hz",       "sfo_fraction",        "ros_xoff",
      "ros_max_rob_hwm_bytes", "ros_queue_hwm",   "ros_unknown_requests",
      "ros_end_occupancy_bytes", "pros_end_occupancy_bytes", "net_dropped",
      "end_time_us"};
  return columns;
}

MetricsSnapshot Scenario::snapshot() const {
  MetricsSnapshot s;
  const std::uint64_t n = events_generated();
  s.empty = n == 0;
  const SimTime t1 = cfg_.duration_us();
  const SimTime t0 = t1 / 2;
  auto ratio = [](double a, double b) { return b > 0 ? a / b : kNaN; };

  s.set("l1_events", static_cast<double>(n));
  s.set("l1_rate_hz", window_rate(l1_times_, t0, t1));
  s.set("roi_records", static_cast<double>(roib_->records_built()));
  s.set("roi_dead_letters", static_cast<double>(roib_->dead_letters()));

  std::vector<SimTime> collect;
  std::vector<SimTime> latency;
  std::uint64_t accepts = 0;
  std::uint64_t decisions = 0;
  for (const auto& pu : l2pus_) {
    collect.insert(collect.end(), pu->collect_times().begin(), pu->collect_times().end());
    latency.insert(latency.end(), pu->decision_latencies().begin(), pu->decision_latencies().end());
    accepts += pu->counters().accepts;
    decisions += pu->counters().accepts + pu->counters().rejects;
  }
  s.set("l2_decisions", static_cast<double>(decisions));
  s.set("l2_accepts", static_cast<double>(accepts));
  s.set("l2_collect_mean_us", mean(collect));
  s.set("l2_collect_p95_us", percentile(collect, 95));
  s.set("l2_decision_mean_us", mean(latency));

  std::vector<std::uint64_t> per_pu(l2pus_.size(), 0);
  std::uint64_t violations = 0;
  for (std::uint32_t sv = 0; sv < svs_.size(); ++sv) {
    const auto counts = svs_[sv]->assignments();
    for (std::uint32_t j = 0; j < counts.size(); ++j) per_pu[sv + j * svs_.size()] = counts[j];
    violations += svs_[sv]->counters().balance_violations;
  }
  const auto total_assigned = std::accumulate(per_pu.begin(), per_pu.end(), std::uint64_t{0});
  const auto [pu_min, pu_max] = std::ranges::minmax(per_pu);
  s.set("l2pu_share_min", ratio(static_cast<double>(pu_min), static_cast<double>(total_assigned)));
  s.set("l2pu_share_max", ratio(static_cast<double>(pu_max), static_cast<double>(total_assigned)));
  s.set("l2sv_balance_violations", static_cast<double>(violations));

  const auto& dfm = dfm_->counters();
  s.set("eb_assigned", static_cast<double>(dfm.assigned));
  s.set("eb_timed_out", static_cast<double>(dfm.lost_builds));
  s.set("dfm_clear_batches", static_cast<double>(dfm.clear_batches));
  s.set("dfm_balance_spread_max", static_cast<double>(dfm.balance_spread_max));
  s.set("dfm_duplicate_decisions", static_cast<double>(dfm.duplicate_decisions));

  std::vector<SimTime> build_times;
  std::uint64_t built = 0, partial = 0, retries = 0, missing = 0, ingested = 0;
  std::uint32_t credits_hwm = 0;
  for (const auto& sfi : sfis_) {
    const auto& c = sfi->counters();
    build_times.insert(build_times.end(), sfi->build_times().begin(), sfi->build_times().end());
    built += c.built;
    partial += c.partial_events;
    retries += c.retries;
    missing += c.missing_responders;
    ingested += c.bytes_ingested;
    credits_hwm = std::max(credits_hwm, c.credits_hwm);
  }
  const double eb_rate = window_rate(build_times, t0, t1);
  s.set("eb_built", static_cast<double>(built));
  s.set("eb_partial", static_cast<double>(partial));
  s.set("eb_rate_hz", eb_rate);
  s.set("eb_fraction", ratio(static_cast<double>(built), static_cast<double>(n)));
  s.set("sfi_ingest_mb_s",
        eb_rate * ratio(static_cast<double>(ingested), static_cast<double>(built)) / 1e6);
  s.set("sfi_retries", static_cast<double>(retries));
  s.set("sfi_missing_responders", static_cast<double>(missing));
  s.set("sfi_credits_hwm", static_cast<double>(credits_hwm));

  std::uint64_t pulled = 0, accepted = 0, rejected = 0;
  for (const auto& ef : efs_) {
    pulled += ef->counters().pulled;
    accepted += ef->counters().accepted;
    rejected += ef->counters().rejected;
  }
  s.set("ef_pulled", static_cast<double>(pulled));
  s.set("ef_accepted", static_cast<double>(accepted));
  s.set("ef_rejected", static_cast<double>(rejected));
  const auto& sfo = sfo_->counters();
  s.set("sfo_records", static_cast<double>(sfo.records_written));
  s.set("sfo_bytes", static_cast<double>(sfo.bytes_written));
  s.set("sfo_rate_hz", window_rate(sfo_->write_times(), t0, t1));
  s.set("sfo_fraction", ratio(static_cast<double>(sfo.records_written), static_cast<double>(n)));

  std::uint64_t xoff = 0, rob_hwm = 0, queue_hwm = 0, unknown = 0, occupancy = 0;
  for (const auto& unit : ros_) {
    const auto& c = unit->counters();
    xoff += c.xoff_events;
    rob_hwm = std::max(rob_hwm, unit->max_rob_high_watermark());
    queue_hwm = std::max(queue_hwm, c.queue_hwm);
    unknown += c.unknown_requests;
    occupancy += unit->occupancy_bytes();
  }
  s.set("ros_xoff", static_cast<double>(xoff));
  s.set("ros_max_rob_hwm_bytes", static_cast<double>(rob_hwm));
  s.set("ros_queue_hwm", static_cast<double>(queue_hwm));
  s.set("ros_unknown_requests", static_cast<double>(unknown));
  s.set("ros_end_occupancy_bytes", static_cast<double>(occupancy));
  s.set("pros_end_occupancy_bytes", static_cast<double>(pros_->occupancy_bytes()));
  s.set("net_dropped", static_cast<double>(kernel_.counters().total_dropped()));
  s.set("end_time_us", static_cast<double>(kernel_.now()));
  return s;
}

void Scenario::check_invariants() const {
  const bool lossless = std::ranges::all_of(cfg_.links, [](const LinkModel& l) {
    return l.loss_prob == 0.0;
  });
  const auto problems = conservation().violations(lossless);
  if (problems.empty()) return;
  std::string message = "invariant violation:";
  for (const auto& p : problems) message += "\n  " + p;
  throw InvariantViolation(message);
}

MetricsSnapshot run_scenario(const ScenarioConfig& cfg, RunOptions options) {
  Scenario scenario(cfg, std::move(options.sink));
  scenario.set_trace(options.trace);
  scenario.run();
  scenario.close_sink();
  if (cfg.strict) scenario.check_invariants();
  return scenario.snapshot();
}

}  // namespace daqflow
