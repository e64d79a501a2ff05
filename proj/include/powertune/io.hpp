#pragma once

#include <filesystem>
#include <string>

#include "powertune/gaussian_policy.hpp"
#include "powertune/measurement.hpp"

namespace powertune {

inline constexpr const char* kCheckpointSchema = "powertune.checkpoint.v1";
inline constexpr const char* kDatasetSchema = "powertune.dataset.v1";
inline constexpr const char* kRecordSchema = "powertune.record.v1";

void save_policy(const PolicyCheckpoint& ckpt, const std::filesystem::path& path);
PolicyCheckpoint load_policy(const std::filesystem::path& path);

void save_measurement(const MeasurementModel& model, const std::filesystem::path& path);
MeasurementModel load_measurement(const std::filesystem::path& path);

// Line-delimited: schema line, then per-trajectory metadata lines followed by
// one step line each. Numbers round-trip exactly.
void save_dataset(const RealDataset& dataset, const std::filesystem::path& path);
RealDataset load_dataset(const std::filesystem::path& path);

// Write-to-temp-then-rename so partially written files never land.
void atomic_write_text(const std::filesystem::path& path, const std::string& content);

}  // namespace powertune
