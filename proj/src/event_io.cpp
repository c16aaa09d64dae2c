#include "qkd/event_io.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace qkd::event_io {

namespace {

constexpr char kMagic[8] = {'Q', 'K', 'D', 'E', 'V', 'T', '1', '\0'};

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& buf, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(buf, bits);
}

uint64_t get_u64(const char* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<uint8_t>(p[i]);
  return v;
}
uint32_t get_u32(const char* p) {
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<uint8_t>(p[i]);
  return v;
}

}  // namespace

void write_events(const std::string& path, const DumpHeader& header,
                  const std::vector<link::DetectionEvent>& events) {
  std::string buf;
  buf.reserve(40 + events.size() * 9);
  buf.append(kMagic, 8);
  put_u32(buf, header.version);
  put_u32(buf, 0);
  put_f64(buf, header.resolution_s);
  put_u64(buf, header.config_hash);
  put_u64(buf, static_cast<uint64_t>(events.size()));
  for (const auto& ev : events) {
    put_u64(buf, static_cast<uint64_t>(ev.timestamp_ticks));
    buf.push_back(static_cast<char>(ev.detector));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("short write: " + path);
}

DumpHeader read_events(const std::string& path,
                       std::vector<link::DetectionEvent>& events) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open event dump: " + path);
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (data.size() < 40 || std::memcmp(data.data(), kMagic, 8) != 0)
    throw std::runtime_error("not an event dump: " + path);
  DumpHeader h;
  h.version = get_u32(data.data() + 8);
  if (h.version != 1) throw std::runtime_error("unsupported dump version");
  uint64_t res_bits = get_u64(data.data() + 16);
  std::memcpy(&h.resolution_s, &res_bits, 8);
  h.config_hash = get_u64(data.data() + 24);
  h.count = get_u64(data.data() + 32);
  size_t need = 40 + h.count * 9;
  if (data.size() < need) throw std::runtime_error("truncated event dump");
  events.reserve(events.size() + h.count);
  const char* p = data.data() + 40;
  for (uint64_t i = 0; i < h.count; ++i, p += 9) {
    link::DetectionEvent ev;
    ev.timestamp_ticks = static_cast<int64_t>(get_u64(p));
    uint8_t det = static_cast<uint8_t>(p[8]);
    if (det > 3) throw std::runtime_error("invalid detector id in dump");
    ev.detector = static_cast<link::DetectorId>(det);
    ev.true_slot = -1;
    events.push_back(ev);
  }
  return h;
}

uint64_t fnv1a64(const std::string& data) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace qkd::event_io
