#include "daqflow/ef_io.hpp"

#include <array>
#include <bit>

namespace daqflow {

namespace {

std::array<char, 4> le_bytes(std::uint32_t word) {
  return {static_cast<char>(word & 0xFF), static_cast<char>((word >> 8) & 0xFF),
          static_cast<char>((word >> 16) & 0xFF), static_cast<char>((word >> 24) & 0xFF)};
}

std::uint32_t le_word(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

SfoFileWriter::SfoFileWriter(const std::filesystem::path& path)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw SinkError("cannot open SFO sink " + path.string());
  put(kSfoFileMagic);
  put(0);
}

SfoFileWriter::~SfoFileWriter() {
  try {
    close();
  } catch (...) {
  }
}

void SfoFileWriter::put(std::uint32_t word) {
  const auto bytes = le_bytes(word);
  out_.write(bytes.data(), bytes.size());
}

void SfoFileWriter::write(const FullEvent& event) {
  if (!out_.is_open()) throw SinkError("write to closed SFO sink " + path_.string());
  const auto image = encode_event(event);
  put(kSfoRecordMagic);
  put(static_cast<std::uint32_t>(image.size() * 4));
  put(event.l1id.value);
  put(event.completeness == Completeness::partial ? 1u : 0u);
  for (auto w : image) put(w);
  if (!out_) throw SinkError("write failed on SFO sink " + path_.string());
  ++records_;
}

void SfoFileWriter::close() {
  if (!out_.is_open()) return;
  out_.seekp(4);
  put(records_);
  out_.close();
  if (out_.fail()) throw SinkError("closing SFO sink " + path_.string() + " failed");
}

std::vector<FullEvent> read_sfo_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SinkError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < kSfoFileHeaderBytes || bytes.size() % 4 != 0) {
    throw SinkError(path.string() + ": truncated or misaligned file");
  }
  if (le_word(bytes.data()) != kSfoFileMagic) throw SinkError(path.string() + ": bad file magic");
  const std::uint32_t count = le_word(bytes.data() + 4);

  std::vector<FullEvent> events;
  std::size_t pos = kSfoFileHeaderBytes;
  while (pos < bytes.size()) {
    if (pos + kSfoRecordHeaderBytes > bytes.size()) throw SinkError("truncated record header");
    if (le_word(&bytes[pos]) != kSfoRecordMagic) throw SinkError("bad record magic");
    const std::uint32_t length = le_word(&bytes[pos + 4]);
    const std::uint32_t l1id = le_word(&bytes[pos + 8]);
    const std::uint32_t flags = le_word(&bytes[pos + 12]);
    pos += kSfoRecordHeaderBytes;
    if (length % 4 != 0 || pos + length > bytes.size()) throw SinkError("bad record length");
    std::vector<std::uint32_t> words(length / 4);
    for (std::size_t i = 0; i < words.size(); ++i) words[i] = le_word(&bytes[pos + 4 * i]);
    pos += length;
    FullEvent event;
    try {
      event = decode_event(words);
    } catch (const ProtocolError& e) {
      throw SinkError(e.what());
    }
    if (event.l1id.value != l1id ||
        (flags & 1u) != static_cast<std::uint32_t>(event.completeness)) {
      throw SinkError("record header disagrees with event image");
    }
    events.push_back(std::move(event));
  }
  if (events.size() != count) {
    throw SinkError(path.string() + ": header announces " + std::to_string(count) +
                    " records, found " + std::to_string(events.size()));
  }
  return events;
}

SubFarmOutput::SubFarmOutput(Kernel& kernel, LinkModel link, std::unique_ptr<EventSink> sink)
    : kernel_(kernel), id_(kernel.add_component("sfo", link)), sink_(std::move(sink)) {
  if (!sink_) sink_ = std::make_unique<NullSink>();
  kernel_.set_handler(id_, [this](const Message& msg) {
    if (msg.kind != MessageKind::ef_verdict) {
      throw ProtocolError("SFO cannot handle " + std::string(to_string(msg.kind)));
    }
    const auto& verdict = std::get<EfVerdict>(msg.body);
    if (verdict.accept) write(verdict.event);
  });
}

void SubFarmOutput::write(const FullEvent& event) {
  sink_->write(event);
  ++counters_.records_written;
  counters_.bytes_written += kSfoRecordHeaderBytes + event.wire_bytes();
  write_times_.push_back(kernel_.now());
}

EfNode::EfNode(Kernel& kernel, std::uint32_t index, LinkModel link, ComponentId sfi,
               ComponentId sfo, DecisionStub stub)
    : kernel_(kernel),
      id_(kernel.add_component("ef" + std::to_string(index), link)),
      sfi_(sfi),
      sfo_(sfo),
      stub_(stub) {
  kernel_.set_handler(id_, [this](const Message& msg) {
    if (msg.kind != MessageKind::ef_event) {
      throw ProtocolError("EF node cannot handle " + std::string(to_string(msg.kind)));
    }
    on_event(std::get<FullEvent>(msg.body));
  });
}

void EfNode::start() {
  kernel_.schedule_at(kernel_.now(), [this]() { pull(); });
}

void EfNode::pull() { kernel_.send(make_message(MessageKind::ef_pull, id_, sfi_, EventId{})); }

void EfNode::on_event(FullEvent event) {
  if (busy_) throw ProtocolError("EF node received a second event while busy");
  busy_ = true;
  ++counters_.pulled;
  const SimTime proc = stub_.draw_time(kernel_.rng(id_));
  kernel_.schedule_after(proc, [this, ev = std::move(event)]() mutable {
    if (stub_.decide(kernel_.rng(id_))) {
      ++counters_.accepted;
      const EventId l1id = ev.l1id;
      kernel_.send(make_message(MessageKind::ef_verdict, id_, sfo_, l1id,
                                EfVerdict{true, std::move(ev)}));
    } else {
      ++counters_.rejected;
    }
    busy_ = false;
    pull();
  });
}

}  // namespace daqflow
