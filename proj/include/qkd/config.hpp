#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "qkd/feedback.hpp"
#include "qkd/keyrate.hpp"
#include "qkd/link.hpp"
#include "qkd/sync.hpp"

namespace qkd::harness {

// Full run description. One JSON file with nested sections; physical defaults
// follow the reference hardware.
struct RunConfig {
  link::LinkConfig link;
  link::ChannelDriftModel drift;

  int64_t sync_code_length = 50000;
  int sync_random_bits = 9;  // M random slots per code slot
  uint64_t sync_code_seed = 20220418;
  sync::SyncOptions sync_opts;

  bool feedback_enabled = true;
  feedback::FeedbackConfig feedback;
  double x_probe_fraction = 0.05;
  uint64_t probe_slots = 2000000;  // slots per probe evaluation

  keyrate::SecurityParams security;

  double block_duration_s = 1.0;
  double total_duration_s = 10.0;
  double slot_duty = 1.0;  // fraction of each block's slots simulated
  uint64_t seed = 0;
  std::string output_dir = "out";
  bool dump_events = false;

  void validate() const;
  sync::SyncCodeConfig make_code() const;
  uint64_t slots_per_block() const;
};

// Parse/serialize. parse(serialize(cfg)) is the identity.
RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& config);
RunConfig load_run_config(const std::string& path);

// Counts input for the standalone key-rate path. JSON object or single-row
// CSV with the same field names.
struct CountsFile {
  keyrate::SiftedCounts counts;
  optics::IntensitySetting intensities;
  keyrate::SecurityParams security;
  std::optional<double> distance_km;
  std::optional<double> loss_db;
  std::string description;
};

CountsFile load_counts_file(const std::string& path);

}  // namespace qkd::harness
