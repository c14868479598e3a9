#include "daqflow/ros.hpp"

#include <algorithm>

namespace daqflow {

RobBuffer::InsertResult RobBuffer::insert(const ROBFragment& fragment) {
  if (store_.contains(fragment.l1id)) {
    throw ProtocolError("duplicate fragment for l1id " + std::to_string(fragment.l1id.value) +
                        " in ROB slot " + std::to_string(slot_));
  }
  const std::uint64_t bytes = fragment.wire_bytes();
  if (occupancy_bytes_ + bytes > capacity_bytes_) return InsertResult::refused;
  store_.emplace(fragment.l1id, fragment);
  occupancy_bytes_ += bytes;
  high_watermark_bytes_ = std::max(high_watermark_bytes_, occupancy_bytes_);
  return InsertResult::stored;
}

std::optional<ROBFragment> RobBuffer::find(EventId l1id) const {
  if (auto it = store_.find(l1id); it != store_.end()) return it->second;
  return std::nullopt;
}

bool RobBuffer::erase(EventId l1id) {
  auto it = store_.find(l1id);
  if (it == store_.end()) return false;
  occupancy_bytes_ -= it->second.wire_bytes();
  store_.erase(it);
  return true;
}

RosUnit::RosUnit(Kernel& kernel, std::uint32_t unit_index, const Geometry& geometry,
                 LinkModel link, BusModel bus, std::uint64_t rob_capacity_bytes)
    : kernel_(kernel),
      id_(kernel.add_component("ros" + std::to_string(unit_index), link)),
      unit_index_(unit_index),
      first_link_(unit_index * geometry.grouping),
      bus_(bus) {
  const auto links = geometry.links_of_unit(unit_index);
  if (links.empty()) throw ConfigError("ROS unit " + std::to_string(unit_index) + " has no links");
  for (std::uint32_t slot = 0; slot < links.size(); ++slot) {
    robs_.emplace_back(slot, rob_capacity_bytes);
  }
  kernel_.set_handler(id_, [this](const Message& msg) { on_message(msg); });
}

void RosUnit::rob_insert(const ROBFragment& fragment) {
  if (fragment.source_id < first_link_ || fragment.source_id - first_link_ >= robs_.size()) {
    throw ProtocolError("fragment source " + std::to_string(fragment.source_id) +
                        " does not belong to ROS unit " + std::to_string(unit_index_));
  }
  auto& rob = robs_[fragment.source_id - first_link_];
  if (rob.insert(fragment) == RobBuffer::InsertResult::refused) {
    ++counters_.xoff_events;
  } else {
    ++counters_.fragments_inserted;
  }
}

void RosUnit::handle_clear(std::span<const EventId> ids) {
  for (auto id : ids) {
    for (auto& rob : robs_) {
      if (rob.erase(id)) ++counters_.fragments_cleared;
    }
  }
  counters_.clears_applied += ids.size();
}

std::uint64_t RosUnit::occupancy_bytes() const {
  std::uint64_t total = 0;
  for (const auto& rob : robs_) total += rob.occupancy_bytes();
  return total;
}

std::uint64_t RosUnit::max_rob_high_watermark() const {
  std::uint64_t hwm = 0;
  for (const auto& rob : robs_) hwm = std::max(hwm, rob.high_watermark_bytes());
  return hwm;
}

void RosUnit::on_message(const Message& msg) {
  switch (msg.kind) {
    case MessageKind::frag_push:
      for (const auto& f : std::get<FragmentList>(msg.body).fragments) rob_insert(f);
      break;
    case MessageKind::data_request:
      pending_.push_back(msg);
      counters_.queue_hwm = std::max<std::uint64_t>(counters_.queue_hwm, pending_.size());
      if (!serving_) service_next();
      break;
    case MessageKind::clear:
      handle_clear(std::get<ClearBatch>(msg.body).ids);
      break;
    default:
      throw ProtocolError("ROS unit cannot handle " + std::string(to_string(msg.kind)));
  }
}

void RosUnit::service_next() {
  if (pending_.empty()) {
    serving_ = false;
    return;
  }
  serving_ = true;
  Message req = std::move(pending_.front());
  pending_.pop_front();
  ++counters_.requests;

  const auto& request = std::get<DataRequest>(req.body);
  std::vector<std::uint32_t> slots = request.slots;
  if (request.all()) {
    slots.resize(robs_.size());
    for (std::uint32_t s = 0; s < slots.size(); ++s) slots[s] = s;
  }
  FragmentList response;
  SimTime done = kernel_.now();
  for (auto slot : slots) {
    if (slot >= robs_.size()) {
      throw ProtocolError("request for slot " + std::to_string(slot) + " on ROS unit " +
                          std::to_string(unit_index_));
    }
    auto fragment = robs_[slot].find(req.l1id);
    if (!fragment) {
      ++counters_.unknown_requests;
      fragment = missing_substitute(first_link_ + slot, req.l1id);
    }
    done += bus_.transfer_time(fragment->wire_bytes());
    response.fragments.push_back(*fragment);
  }
  kernel_.schedule_at(done, [this, requester = req.src, l1id = req.l1id,
                             body = std::move(response)]() mutable {
    auto msg = make_message(MessageKind::data_response, id_, requester, l1id, std::move(body));
    counters_.response_bytes += msg.payload_bytes;
    kernel_.send(std::move(msg));
    service_next();
  });
}

}  // namespace daqflow
