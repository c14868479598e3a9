#include "daqflow/event_builder.hpp"

#include <algorithm>

#include "daqflow/roi_collection.hpp"

namespace daqflow {

DataFlowManager::DataFlowManager(Kernel& kernel, LinkModel link, std::vector<ComponentId> sfis,
                                 std::vector<ComponentId> clear_targets, DfmParams params)
    : kernel_(kernel),
      id_(kernel.add_component("dfm", link)),
      sfis_(std::move(sfis)),
      clear_targets_(std::move(clear_targets)),
      params_(params),
      loads_(sfis_.size(), 0) {
  if (sfis_.empty()) throw ConfigError("DFM needs at least one SFI");
  if (params_.clear_batch_max == 0) throw ConfigError("clear_batch_max must be positive");
  kernel_.set_handler(id_, [this](const Message& msg) { on_message(msg); });
}

void DataFlowManager::on_message(const Message& msg) {
  switch (msg.kind) {
    case MessageKind::l2_decision:
      on_decision(msg.l1id, std::get<Decision>(msg.body).accept);
      break;
    case MessageKind::eoe:
      on_eoe(msg.l1id);
      break;
    default:
      throw ProtocolError("DFM cannot handle " + std::string(to_string(msg.kind)));
  }
}

void DataFlowManager::on_decision(EventId l1id, bool accept) {
  if (!decided_.insert(l1id).second) {
    ++counters_.duplicate_decisions;
    return;
  }
  ++counters_.decisions;
  if (!accept) {
    ++counters_.rejects;
    dispose(l1id, Disposition::rejected);
    return;
  }
  const std::size_t sfi = least_loaded(loads_);
  ++loads_[sfi];
  const auto [lo, hi] = std::ranges::minmax(loads_);
  counters_.balance_spread_max = std::max(counters_.balance_spread_max, hi - lo);
  ++counters_.assigned;
  const SimTime deadline = kernel_.now() + params_.build_timeout_us;
  pending_.emplace(l1id, PendingBuild{sfi, deadline});
  kernel_.send(make_message(MessageKind::eb_assign, id_, sfis_[sfi], l1id));
  kernel_.schedule_at(deadline, [this, l1id]() { on_build_timeout(l1id); });
}

void DataFlowManager::on_eoe(EventId l1id) {
  auto it = pending_.find(l1id);
  if (it == pending_.end()) {
    ++counters_.stale_eoe;
    return;
  }
  --loads_[it->second.sfi];
  pending_.erase(it);
  ++counters_.built;
  dispose(l1id, Disposition::built);
}

void DataFlowManager::on_build_timeout(EventId l1id) {
  auto it = pending_.find(l1id);
  if (it == pending_.end()) return;
  --loads_[it->second.sfi];
  pending_.erase(it);
  ++counters_.lost_builds;
  dispose(l1id, Disposition::timed_out);
}

void DataFlowManager::dispose(EventId l1id, Disposition disposition) {
  ledger_[l1id] = DispositionRecord{disposition, 0};
  batch_.push_back(l1id);
  if (observer_) observer_(l1id, disposition);
  if (batch_.size() >= params_.clear_batch_max) {
    flush_clears();
  } else if (batch_.size() == 1) {
    const auto generation = ++flush_generation_;
    kernel_.schedule_after(params_.clear_flush_timeout_us, [this, generation]() {
      if (generation == flush_generation_) flush_clears();
    });
  }
}

void DataFlowManager::flush_clears() {
  ++flush_generation_;
  if (batch_.empty()) return;
  for (auto target : clear_targets_) {
    kernel_.send(make_message(MessageKind::clear, id_, target, batch_.front(), ClearBatch{batch_}));
  }
  for (auto id : batch_) ++ledger_[id].flush_count;
  ++counters_.clear_batches;
  counters_.ids_flushed += batch_.size();
  batch_sizes_.push_back(static_cast<std::uint32_t>(batch_.size()));
  batch_.clear();
}

SubFarmInput::SubFarmInput(Kernel& kernel, std::uint32_t index, const Geometry& geometry,
                           LinkModel link, std::vector<ComponentId> ros_units,
                           ComponentId pseudo_ros, SfiParams params)
    : kernel_(kernel),
      id_(kernel.add_component("sfi" + std::to_string(index), link)),
      n_sources_(geometry.n_links),
      responders_(std::move(ros_units)),
      params_(params) {
  if (params_.max_credits == 0) throw ConfigError("max_credits must be positive");
  responders_.push_back(pseudo_ros);
  for (std::uint32_t r = 0; r < responders_.size(); ++r) responder_index_[responders_[r]] = r;
  kernel_.set_handler(id_, [this](const Message& msg) { on_message(msg); });
}

void SubFarmInput::on_message(const Message& msg) {
  switch (msg.kind) {
    case MessageKind::eb_assign:
      build(msg.src, msg.l1id);
      break;
    case MessageKind::data_response:
      on_response(msg);
      break;
    case MessageKind::ef_pull:
      ++counters_.ef_pulls;
      parked_pulls_.push_back(msg.src);
      if (!built_queue_.empty()) ship();
      break;
    default:
      throw ProtocolError("SFI cannot handle " + std::string(to_string(msg.kind)));
  }
}

void SubFarmInput::build(ComponentId dfm, EventId l1id) {
  if (!seen_.insert(l1id).second) {
    ++counters_.duplicate_assignments;
    return;
  }
  ++counters_.assignments;
  builds_.emplace(l1id, Build{dfm, static_cast<std::uint32_t>(responders_.size()), {}, {}});
  for (std::uint32_t r = 0; r < responders_.size(); ++r) queue_.push_back({l1id, r, 0});
  pump();
}

void SubFarmInput::pump() {
  while (credits_ < params_.max_credits && !queue_.empty()) {
    const Request req = queue_.front();
    queue_.pop_front();
    const std::uint64_t seq = next_seq_++;
    outstanding_[key(req.l1id, req.responder)] = Outstanding{seq, req.attempt};
    ++credits_;
    counters_.credits_hwm = std::max(counters_.credits_hwm, credits_);
    ++counters_.requests_sent;
    kernel_.send(make_message(MessageKind::data_request, id_, responders_[req.responder], req.l1id,
                              DataRequest{}));
    kernel_.schedule_after(params_.frag_timeout_us, [this, req, seq]() {
      on_timeout(req.l1id, req.responder, seq);
    });
  }
}

void SubFarmInput::on_response(const Message& msg) {
  auto r = responder_index_.find(msg.src);
  if (r == responder_index_.end()) throw ProtocolError("SFI response from unknown component");
  auto it = outstanding_.find(key(msg.l1id, r->second));
  if (it == outstanding_.end()) {
    ++counters_.late_responses;
    return;
  }
  outstanding_.erase(it);
  --credits_;
  counters_.bytes_ingested += msg.payload_bytes;
  auto& build = builds_.at(msg.l1id);
  const auto& fragments = std::get<FragmentList>(msg.body).fragments;
  if (r->second == responders_.size() - 1) {
    if (fragments.size() != 1) throw ProtocolError("pseudo-ROS response must carry one fragment");
    build.pseudo = fragments.front();
  } else {
    build.fragments.insert(build.fragments.end(), fragments.begin(), fragments.end());
  }
  responder_done(msg.l1id);
  pump();
}

void SubFarmInput::on_timeout(EventId l1id, std::uint32_t responder, std::uint64_t seq) {
  auto it = outstanding_.find(key(l1id, responder));
  if (it == outstanding_.end() || it->second.seq != seq) return;
  const std::uint32_t attempt = it->second.attempt;
  outstanding_.erase(it);
  --credits_;
  if (attempt == 0) {
    ++counters_.retries;
    queue_.push_front({l1id, responder, 1});
  } else {
    // Give up: assembly substitutes every fragment this responder owns.
    ++counters_.missing_responders;
    responder_done(l1id);
  }
  pump();
}

void SubFarmInput::responder_done(EventId l1id) {
  if (--builds_.at(l1id).remaining == 0) complete(l1id);
}

void SubFarmInput::complete(EventId l1id) {
  auto node = builds_.extract(l1id);
  Build& build = node.mapped();
  const ROBFragment pseudo =
      build.pseudo.value_or(missing_substitute(n_sources_, l1id));
  FullEvent event = assemble_full_event(l1id, build.fragments, pseudo, n_sources_);
  ++counters_.built;
  if (event.completeness == Completeness::partial) ++counters_.partial_events;
  counters_.built_bytes += event.wire_bytes();
  build_times_.push_back(kernel_.now());

  auto send_eoe = [this, dfm = build.dfm, l1id]() {
    kernel_.send(make_message(MessageKind::eoe, id_, dfm, l1id));
  };
  if (params_.eoe_delay_us == 0) {
    send_eoe();
  } else {
    kernel_.schedule_after(params_.eoe_delay_us, send_eoe);
  }

  if (!params_.ef_enabled) {
    ++counters_.discarded;
    return;
  }
  built_queue_.push_back(std::move(event));
  if (!parked_pulls_.empty()) ship();
}

void SubFarmInput::ship() {
  const ComponentId ef = parked_pulls_.front();
  parked_pulls_.pop_front();
  FullEvent event = std::move(built_queue_.front());
  built_queue_.pop_front();
  ++counters_.ef_events_sent;
  const EventId l1id = event.l1id;
  kernel_.send(make_message(MessageKind::ef_event, id_, ef, l1id, std::move(event)));
}

}  // namespace daqflow
