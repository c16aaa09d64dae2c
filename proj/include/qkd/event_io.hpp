#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qkd/link.hpp"

namespace qkd::event_io {

// Binary event-stream dump. Little-endian layout:
//   magic   "QKDEVT1\0"                    8 bytes
//   version u32, reserved u32
//   resolution_s f64
//   config_hash u64
//   count u64
//   records: count * { timestamp_ticks u64, detector u8 }
// Ground-truth fields are not written.
struct DumpHeader {
  uint32_t version = 1;
  double resolution_s = 1e-12;
  uint64_t config_hash = 0;
  uint64_t count = 0;
};

void write_events(const std::string& path, const DumpHeader& header,
                  const std::vector<link::DetectionEvent>& events);

// Appends to `events`; returns the header. Throws std::runtime_error on
// malformed input.
DumpHeader read_events(const std::string& path,
                       std::vector<link::DetectionEvent>& events);

// FNV-1a over a canonical string (used to fingerprint configs in dumps).
uint64_t fnv1a64(const std::string& data);

}  // namespace qkd::event_io
