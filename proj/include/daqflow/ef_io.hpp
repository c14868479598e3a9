#pragma once

// Event Filter boundary: EF nodes pulling built events from SFIs, and the
// Sub-Farm Output recording accepted events.
//
// SFO file layout (all fields 32-bit little-endian):
//   file header : 0xAA1234AA, record count (patched when the file is closed)
//   per record  : 0xBB1234BB, event image length in bytes, l1id,
//                 flags (bit 0 set = PARTIAL), then the event image
// The event image is the word sequence produced by encode_event().

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <vector>

#include "daqflow/core_model.hpp"
#include "daqflow/roi_collection.hpp"
#include "daqflow/sim_kernel.hpp"

namespace daqflow {

inline constexpr std::uint32_t kSfoFileMagic = 0xAA1234AA;
inline constexpr std::uint32_t kSfoRecordMagic = 0xBB1234BB;
inline constexpr std::uint64_t kSfoFileHeaderBytes = 8;
inline constexpr std::uint64_t kSfoRecordHeaderBytes = 16;

class SinkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EventSink {
 public:
  virtual ~EventSink() = default;
  virtual void write(const FullEvent& event) = 0;
  virtual void close() {}
};

class NullSink final : public EventSink {
 public:
  void write(const FullEvent&) override {}
};

class SfoFileWriter final : public EventSink {
 public:
  explicit SfoFileWriter(const std::filesystem::path& path);
  ~SfoFileWriter() override;

  void write(const FullEvent& event) override;
  /// Patches the record count; further writes are errors.
  void close() override;

  std::uint32_t records() const { return records_; }

 private:
  void put(std::uint32_t word);

  std::filesystem::path path_;
  std::ofstream out_;
  std::uint32_t records_ = 0;
};

/// Parses a complete SFO file; throws SinkError on any framing violation.
std::vector<FullEvent> read_sfo_file(const std::filesystem::path& path);

struct SfoCounters {
  std::uint64_t records_written = 0;
  std::uint64_t bytes_written = 0;
};

class SubFarmOutput {
 public:
  SubFarmOutput(Kernel& kernel, LinkModel link, std::unique_ptr<EventSink> sink);

  ComponentId id() const { return id_; }
  void write(const FullEvent& event);
  void close() { sink_->close(); }
  const SfoCounters& counters() const { return counters_; }
  const std::vector<SimTime>& write_times() const { return write_times_; }

 private:
  Kernel& kernel_;
  ComponentId id_;
  std::unique_ptr<EventSink> sink_;
  SfoCounters counters_;
  std::vector<SimTime> write_times_;
};

struct EfCounters {
  std::uint64_t pulled = 0;
  std::uint64_t accepted = 0;
  std::uint64_t rejected = 0;
};

/// One EF processing node: keeps at most one event in flight and pulls the
/// next one as soon as it has decided.
class EfNode {
 public:
  EfNode(Kernel& kernel, std::uint32_t index, LinkModel link, ComponentId sfi, ComponentId sfo,
         DecisionStub stub);

  ComponentId id() const { return id_; }
  /// Issues the first pull.
  void start();
  bool busy() const { return busy_; }
  const EfCounters& counters() const { return counters_; }

 private:
  void on_event(FullEvent event);
  void pull();

  Kernel& kernel_;
  ComponentId id_;
  ComponentId sfi_;
  ComponentId sfo_;
  DecisionStub stub_;
  bool busy_ = false;
  EfCounters counters_;
};

}  // namespace daqflow
