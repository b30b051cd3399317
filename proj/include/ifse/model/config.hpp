#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ifse::model {

/// Network hyper-parameters. Everything that changes tensor shapes lives here and
/// is serialized into checkpoints.
struct ModelConfig {
    /// "resnet50" (ImageNet layout, load weights with load_backbone_weights) or
    /// "tiny" (small residual net with seeded random weights, for desk-scale runs).
    std::string backbone = "resnet50";
    /// Width C of the reduced backbone features, the support vector and the click vector.
    int feature_channels = 256;
    /// Channels of the first support-path encoder stage; doubles at every pooling stage.
    int support_width = 64;
    /// Output sizes of the parallel query-path branches (one intermediate head each).
    std::vector<int> query_scales{60, 30, 15, 8};
    /// Halving stages in the support encoder. Must be 3 (8x shrink).
    int pooling_depth = 3;
    /// Square training patch / evaluation letterbox size in pixels.
    int input_patch = 512;
    int click_disk_radius = 5;

    int num_query_scales() const { return static_cast<int>(query_scales.size()); }

    /// Throws InvalidArgument on any violated invariant.
    void validate() const;

    /// Small configuration used by tests and smoke runs.
    static ModelConfig tiny(int channels = 16, std::vector<int> scales = {8, 4}, int patch = 64);

    bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Feature stride of every backbone.
inline constexpr int kFeatureStride = 8;

} // namespace ifse::model
