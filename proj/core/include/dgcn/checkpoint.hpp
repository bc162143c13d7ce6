#pragma once

// Checkpoint layout (little-endian payloads):
//   "DGCN1\n"
//   "config <nbytes>\n" followed by the rendered key=value config
//   "entries <count>\n"
//   per entry: "name <name>\n" followed by one TNSR tensor record

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dgcn/config.hpp"
#include "dgcn/tensor_io.hpp"

namespace dgcn {

inline constexpr const char* kCheckpointTag = "DGCN1";

struct CheckpointEntry {
  std::string name;
  TensorRecord record;
};

struct Checkpoint {
  RunConfig config;
  std::vector<CheckpointEntry> entries;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const SegModel<T>& model, const RunConfig& config);

/// Parses the whole file; throws FormatError on a tag mismatch, duplicate names or truncation.
Checkpoint read_checkpoint(const std::filesystem::path& path);

using WarningFn = std::function<void(const std::string&)>;

/// Rebuilds the model described by the checkpoint's config and fills every parameter and
/// buffer. Entries stored in another dtype are converted and reported through `warn`.
/// Throws FormatError if names or shapes do not match the config; no model is returned then.
template <typename T>
SegModel<T> load_checkpoint(const std::filesystem::path& path, const WarningFn& warn = {});

template <typename T>
SegModel<T> model_from_checkpoint(const Checkpoint& ckpt, const WarningFn& warn = {});

}  // namespace dgcn
