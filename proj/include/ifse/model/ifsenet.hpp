#pragma once

#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "ifse/model/backbone.hpp"
#include "ifse/model/config.hpp"
#include "ifse/model/ops.hpp"
#include "ifse/model/query_path.hpp"
#include "ifse/model/support_path.hpp"

namespace ifse::model {

struct SupportForward {
    torch::Tensor logits;      // [2,H,W]
    torch::Tensor bottleneck;  // [B,h/8,w/8]
};

/// Everything the query side needs from one support image.
struct SupportState {
    FeatureMap feature;
    torch::Tensor logits;          // [2,H,W]
    torch::Tensor fg;              // [h,w] 0/1 prediction at feature resolution
    torch::Tensor support_vector;  // [C]
    torch::Tensor click_vector;    // [C]
};

struct QueryForward {
    torch::Tensor final_logits;               // [2,H,W]
    std::vector<torch::Tensor> intermediate;  // n maps, [2,s,s]
};

/// Auxiliary inputs of one support image, all float [H,W] of 0/1.
struct SupportInputs {
    torch::Tensor pos_clicks;
    torch::Tensor neg_clicks;
    torch::Tensor prev_mask;
};

struct IfseNetImpl : torch::nn::Module {
    explicit IfseNetImpl(ModelConfig config);

    const ModelConfig& config() const { return config_; }

    /// image: [3,H,W] RGB in [0,255]. Returns reduced features [C,ceil(H/8),ceil(W/8)].
    /// The frozen backbone runs without autograd; only the 1x1 reduction is trained.
    FeatureMap extract_features(const torch::Tensor& image);

    SupportForward support_forward(const FeatureMap& feat, const torch::Tensor& pos_clicks,
                                   const torch::Tensor& neg_clicks, const torch::Tensor& prev_mask);

    torch::Tensor compute_click_vector(const torch::Tensor& bottleneck);

    /// support_forward followed by both vectors.
    SupportState run_support(const FeatureMap& feat, const SupportInputs& in);

    /// Per-support bundles against one query, averaged.
    SupportBundle bundle_for_query(const std::vector<SupportState>& supports, const FeatureMap& query);

    QueryForward query_forward(const FeatureMap& query, const SupportBundle& bundle,
                               const torch::Tensor& prev_query_mask);

    /// Everything except the backbone.
    std::vector<torch::Tensor> trainable_parameters();

    Backbone backbone{nullptr};
    torch::nn::Conv2d reduce{nullptr};
    SupportPath support{nullptr};
    QueryPath query{nullptr};

private:
    ModelConfig config_;
};
TORCH_MODULE(IfseNet);

/// Builds a network with deterministic initialization from `seed`.
IfseNet make_network(const ModelConfig& config, std::uint64_t seed);

/// RGB 8-bit cv::Mat (HxWx3) to a float [3,H,W] tensor in [0,255].
torch::Tensor image_to_tensor(const cv::Mat& rgb);

} // namespace ifse::model
