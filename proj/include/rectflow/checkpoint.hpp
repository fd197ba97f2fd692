#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "rectflow/flow.hpp"
#include "rectflow/objectives.hpp"
#include "rectflow/parameters.hpp"

namespace rectflow {

enum class CheckpointKind : std::uint32_t { Flow = 1, CleanClassifier = 2, NoiseAwareClassifier = 3 };

std::string to_string(CheckpointKind kind);

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// Binary layout, all integers and reals little-endian:
///   "AFLW" | u32 format version | u32 kind
///   | u64 n + n bytes architecture JSON
///   | u32 array count | per array: u32 n + name, u64 rows, u64 cols,
///     rows * cols f64 in column-major order
///   | u64 n + n bytes dataset JSON | u64 training seed
///   | u32 CRC-32 of every preceding byte
struct Checkpoint {
  CheckpointKind kind = CheckpointKind::Flow;
  nlohmann::json architecture;
  ParameterStore parameters;
  nlohmann::json dataset;
  std::uint64_t seed = 0;
  /// Filled by serialize / deserialize.
  std::uint32_t checksum = 0;
};

std::vector<std::uint8_t> serialize(Checkpoint& ckpt);
/// Throws FormatError on a bad magic, unknown version, truncation or a
/// checksum mismatch.
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, Checkpoint& ckpt);
/// Throws IoError when the file cannot be read.
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const VelocityField& field, const DatasetSpec& dataset, std::uint64_t seed);
Checkpoint make_checkpoint(const Classifier& classifier, const DatasetSpec& dataset, std::uint64_t seed);

/// Frozen field; throws FormatError when the checkpoint holds something else.
VelocityField field_from_checkpoint(const Checkpoint& ckpt);
std::shared_ptr<Classifier> classifier_from_checkpoint(const Checkpoint& ckpt);

}  // namespace rectflow
