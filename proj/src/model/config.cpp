#include "ifse/model/config.hpp"

#include "ifse/error.hpp"

namespace ifse::model {

void ModelConfig::validate() const {
    if (backbone != "resnet50" && backbone != "tiny") {
        throw InvalidArgument("unknown backbone variant '" + backbone + "'");
    }
    if (feature_channels <= 0 || support_width <= 0) {
        throw InvalidArgument("channel widths must be positive");
    }
    if (pooling_depth != 3) {
        throw InvalidArgument("pooling_depth must be 3 (the support encoder shrinks 8x)");
    }
    if (input_patch <= 0 || input_patch % (1 << pooling_depth) != 0) {
        throw InvalidArgument("input_patch must be a positive multiple of 8");
    }
    if (query_scales.empty()) {
        throw InvalidArgument("at least one query scale is required");
    }
    for (int s : query_scales) {
        if (s <= 0) throw InvalidArgument("query scales must be positive");
    }
    if (click_disk_radius < 0) {
        throw InvalidArgument("click_disk_radius must be >= 0");
    }
}

ModelConfig ModelConfig::tiny(int channels, std::vector<int> scales, int patch) {
    ModelConfig c;
    c.backbone = "tiny";
    c.feature_channels = channels;
    c.support_width = channels;
    c.query_scales = std::move(scales);
    c.input_patch = patch;
    c.click_disk_radius = 3;
    return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"backbone", c.backbone},
                       {"feature_channels", c.feature_channels},
                       {"support_width", c.support_width},
                       {"query_scales", c.query_scales},
                       {"pooling_depth", c.pooling_depth},
                       {"input_patch", c.input_patch},
                       {"click_disk_radius", c.click_disk_radius}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.backbone = j.value("backbone", d.backbone);
    c.feature_channels = j.value("feature_channels", d.feature_channels);
    c.support_width = j.value("support_width", d.support_width);
    c.query_scales = j.value("query_scales", d.query_scales);
    c.pooling_depth = j.value("pooling_depth", d.pooling_depth);
    c.input_patch = j.value("input_patch", d.input_patch);
    c.click_disk_radius = j.value("click_disk_radius", d.click_disk_radius);
}

} // namespace ifse::model
