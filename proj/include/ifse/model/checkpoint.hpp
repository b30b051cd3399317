#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ifse/model/ifsenet.hpp"

namespace ifse::model {

// Single-file container:
//   "IFSECKPT" | u32 format version | u64 header length | JSON header | raw tensor bytes
// The header holds the serialized ModelConfig, a version tag, optional metadata
// and one entry per tensor {name, shape, dtype, offset, trainable}. Tensor data
// is little-endian float32, contiguous, at header-relative offsets.

inline constexpr std::uint32_t kCheckpointFormat = 1;

/// "v1-" + 16 hex digits of a hash over tensor names, shapes and bytes.
std::string version_tag(IfseNet& net);

/// Writes atomically (temporary file + rename). Returns the version tag.
std::string save_checkpoint(IfseNet& net, const std::filesystem::path& path,
                            const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedCheckpoint {
    IfseNet net{nullptr};
    std::string version;
    nlohmann::json metadata;
};

/// Throws IoError for unreadable or corrupt files, and InvalidArgument for a
/// format version this build does not understand.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every "backbone.*" tensor of a container into `net` (shapes must match).
/// Used to install converted ImageNet weights. Returns the number of tensors copied.
std::size_t load_backbone_weights(IfseNet& net, const std::filesystem::path& path);

} // namespace ifse::model
