#include "daqflow/roi_collection.hpp"

#include <algorithm>
#include <cmath>

namespace daqflow {

SimTime DecisionStub::draw_time(RngStream& rng) const {
  if (dist == ProcTimeDist::constant) return mean_us;
  return static_cast<SimTime>(std::llround(rng.exponential(static_cast<double>(mean_us))));
}

std::size_t least_loaded(std::span<const std::uint32_t> loads) {
  return static_cast<std::size_t>(std::ranges::min_element(loads) - loads.begin());
}

RoiBuilder::RoiBuilder(Kernel& kernel, const Geometry& geometry, LinkModel link,
                       std::vector<ComponentId> supervisors)
    : kernel_(kernel),
      id_(kernel.add_component("roib", link)),
      geometry_(geometry),
      supervisors_(std::move(supervisors)) {
  if (supervisors_.empty()) throw ConfigError("ROI builder needs at least one supervisor");
  kernel_.set_handler(id_, [this](const Message& msg) {
    if (msg.kind != MessageKind::roi_input) {
      throw ProtocolError("ROI builder cannot handle " + std::string(to_string(msg.kind)));
    }
    auto input = std::get<RoiInput>(msg.body);
    ingest(msg.l1id, std::move(input.calo), std::move(input.muon));
  });
}

void RoiBuilder::ingest(EventId l1id, std::vector<RoiItem> calo, std::vector<RoiItem> muon) {
  RoiRecord record;
  try {
    record = build_roi_record(geometry_, l1id, std::move(calo), std::move(muon));
  } catch (const MalformedRoiError&) {
    ++dead_letters_;
    return;
  }
  ++records_built_;
  const auto sv = supervisors_[supervisor_for(l1id, static_cast<std::uint32_t>(supervisors_.size()))];
  kernel_.send(make_message(MessageKind::roi_assign, id_, sv, l1id, std::move(record)));
}

L2Supervisor::L2Supervisor(Kernel& kernel, std::uint32_t index, LinkModel link,
                           std::vector<ComponentId> pus, ComponentId dfm)
    : kernel_(kernel),
      id_(kernel.add_component("l2sv" + std::to_string(index), link)),
      pus_(std::move(pus)),
      dfm_(dfm),
      loads_(pus_.size(), 0),
      assignments_(pus_.size(), 0) {
  if (pus_.empty()) throw ConfigError("L2 supervisor needs at least one L2PU");
  kernel_.set_handler(id_, [this](const Message& msg) { on_message(msg); });
}

std::size_t L2Supervisor::assign(const RoiRecord& roi) {
  const std::size_t pu = least_loaded(loads_);
  if (std::ranges::any_of(loads_, [&](std::uint32_t l) { return l < loads_[pu]; })) {
    ++counters_.balance_violations;
  }
  ++loads_[pu];
  ++assignments_[pu];
  pending_[roi.l1id] = pu;
  kernel_.send(make_message(MessageKind::roi_assign, id_, pus_[pu], roi.l1id, roi));
  return pu;
}

void L2Supervisor::on_message(const Message& msg) {
  switch (msg.kind) {
    case MessageKind::roi_assign:
      assign(std::get<RoiRecord>(msg.body));
      break;
    case MessageKind::l2_decision: {
      auto it = pending_.find(msg.l1id);
      if (it == pending_.end()) {
        ++counters_.unknown_decisions;
        return;
      }
      --loads_[it->second];
      pending_.erase(it);
      ++counters_.decisions_forwarded;
      kernel_.send(make_message(MessageKind::l2_decision, id_, dfm_, msg.l1id, msg.body));
      break;
    }
    default:
      throw ProtocolError("L2 supervisor cannot handle " + std::string(to_string(msg.kind)));
  }
}

L2ProcessingUnit::L2ProcessingUnit(Kernel& kernel, std::uint32_t index, const Geometry& geometry,
                                   LinkModel link, std::vector<ComponentId> ros_units,
                                   ComponentId pseudo_ros, L2puParams params)
    : kernel_(kernel),
      id_(kernel.add_component("l2pu" + std::to_string(index), link)),
      geometry_(geometry),
      ros_units_(std::move(ros_units)),
      pseudo_ros_(pseudo_ros),
      params_(params) {
  if (params_.result_bytes % 4 != 0) throw ConfigError("result_bytes must be a multiple of 4");
  for (std::uint32_t u = 0; u < ros_units_.size(); ++u) unit_of_component_[ros_units_[u]] = u;
  kernel_.set_handler(id_, [this](const Message& msg) { on_message(msg); });
}

void L2ProcessingUnit::on_message(const Message& msg) {
  switch (msg.kind) {
    case MessageKind::roi_assign:
      collect_roi(msg.src, std::get<RoiRecord>(msg.body));
      break;
    case MessageKind::data_response:
      on_response(msg);
      break;
    default:
      throw ProtocolError("L2PU cannot handle " + std::string(to_string(msg.kind)));
  }
}

void L2ProcessingUnit::collect_roi(ComponentId supervisor, const RoiRecord& roi) {
  ++counters_.rois;
  std::map<std::uint32_t, std::vector<std::uint32_t>> slots_by_unit;
  for (auto rob : roi.rob_ids()) {
    const auto loc = rob_map(rob, geometry_.grouping);
    slots_by_unit[loc.unit].push_back(loc.slot);
  }
  Collection collection{supervisor, kernel_.now(), {}, 0};
  for (const auto& [unit, slots] : slots_by_unit) collection.awaited_units.insert(unit);
  active_.emplace(roi.l1id, std::move(collection));

  const SimTime deadline = kernel_.now() + params_.response_timeout_us;
  for (auto& [unit, slots] : slots_by_unit) {
    kernel_.send(make_message(MessageKind::data_request, id_, ros_units_.at(unit), roi.l1id,
                              DataRequest{std::move(slots)}));
    ++counters_.requests_sent;
    kernel_.schedule_at(deadline, [this, l1id = roi.l1id, u = unit]() { on_timeout(l1id, u); });
  }
}

void L2ProcessingUnit::on_response(const Message& msg) {
  auto it = active_.find(msg.l1id);
  auto unit = unit_of_component_.find(msg.src);
  if (it == active_.end() || unit == unit_of_component_.end() ||
      it->second.awaited_units.erase(unit->second) == 0) {
    ++counters_.late_responses;
    return;
  }
  it->second.received_bytes += msg.payload_bytes;
  maybe_complete(msg.l1id);
}

void L2ProcessingUnit::on_timeout(EventId l1id, std::uint32_t unit) {
  auto it = active_.find(l1id);
  if (it == active_.end() || it->second.awaited_units.erase(unit) == 0) return;
  ++counters_.roi_timeouts;
  maybe_complete(l1id);
}

void L2ProcessingUnit::maybe_complete(EventId l1id) {
  auto& collection = active_.at(l1id);
  if (!collection.awaited_units.empty()) return;
  collect_times_.push_back(kernel_.now() - collection.assigned_at);
  const SimTime proc = params_.stub.draw_time(kernel_.rng(id_));
  kernel_.schedule_after(proc, [this, l1id]() { decide(l1id); });
}

void L2ProcessingUnit::decide(EventId l1id) {
  auto node = active_.extract(l1id);
  const Collection& collection = node.mapped();
  const bool accept = params_.stub.decide(kernel_.rng(id_));
  if (accept) {
    ++counters_.accepts;
    const auto words = static_cast<std::uint32_t>(params_.result_bytes / 4);
    ROBFragment result{geometry_.pseudo_source_id(), l1id, FragmentStatus::ok, words};
    kernel_.send(make_message(MessageKind::l2_result, id_, pseudo_ros_, l1id,
                              FragmentList{{result}}));
  } else {
    ++counters_.rejects;
  }
  decision_latencies_.push_back(kernel_.now() - collection.assigned_at);
  kernel_.send(
      make_message(MessageKind::l2_decision, id_, collection.supervisor, l1id, Decision{accept}));
}

PseudoRos::PseudoRos(Kernel& kernel, const Geometry& geometry, LinkModel link)
    : kernel_(kernel),
      id_(kernel.add_component("pros", link)),
      source_id_(geometry.pseudo_source_id()) {
  kernel_.set_handler(id_, [this](const Message& msg) { on_message(msg); });
}

void PseudoRos::store(const ROBFragment& result) {
  if (!store_.emplace(result.l1id, result).second) {
    throw ProtocolError("duplicate LVL2 result for l1id " + std::to_string(result.l1id.value));
  }
  occupancy_bytes_ += result.wire_bytes();
  ++counters_.records_stored;
}

void PseudoRos::on_message(const Message& msg) {
  switch (msg.kind) {
    case MessageKind::l2_result:
      for (const auto& f : std::get<FragmentList>(msg.body).fragments) store(f);
      break;
    case MessageKind::data_request: {
      ++counters_.requests;
      ROBFragment fragment;
      if (auto it = store_.find(msg.l1id); it != store_.end()) {
        fragment = it->second;
      } else {
        ++counters_.unknown_requests;
        fragment = missing_substitute(source_id_, msg.l1id);
      }
      kernel_.send(make_message(MessageKind::data_response, id_, msg.src, msg.l1id,
                                FragmentList{{fragment}}));
      break;
    }
    case MessageKind::clear: {
      const auto& ids = std::get<ClearBatch>(msg.body).ids;
      for (auto id : ids) {
        if (auto it = store_.find(id); it != store_.end()) {
          occupancy_bytes_ -= it->second.wire_bytes();
          store_.erase(it);
          ++counters_.records_cleared;
        }
      }
      counters_.clears_applied += ids.size();
      break;
    }
    default:
      throw ProtocolError("pseudo-ROS cannot handle " + std::string(to_string(msg.kind)));
  }
}

}  // namespace daqflow
