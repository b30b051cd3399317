#pragma once

#include <vector>

#include <torch/torch.h>

#include "ifse/mask.hpp"

// Parameter-free tensor operations shared by the network, the trainer and the
// tests. Single-image tensors carry no batch dimension: features are [C,h,w],
// logits [2,H,W], masks [H,W].

namespace ifse::model {

/// Feature tensor plus its stride relative to the input image.
struct FeatureMap {
    torch::Tensor data;  // [C,h,w]
    int stride = 8;

    int64_t channels() const { return data.size(0); }
    int64_t height() const { return data.size(1); }
    int64_t width() const { return data.size(2); }
};

/// What the query path receives from the support side.
struct SupportBundle {
    torch::Tensor support_vector;  // [C]
    torch::Tensor click_vector;    // [C]
    torch::Tensor attention_mask;  // [h,w], values in [0,1]
};

/// Width below which a min-max range counts as flat.
inline constexpr double kFlatRange = 1e-6;
/// Added to the cosine denominator.
inline constexpr double kCosineEps = 1e-7;

torch::Tensor mask_to_tensor(const BinaryMask& mask);  // float [H,W] of 0/1
BinaryMask tensor_to_mask(const torch::Tensor& t);     // nonzero -> 1

/// Channel argmax with ties going to background: foreground iff l1 > l0.
torch::Tensor binarize_logits(const torch::Tensor& logits);  // [2,H,W] -> bool [H,W]
BinaryMask logits_to_mask(const torch::Tensor& logits);

/// Bilinear (antialiased) resampling of a float [H,W] map to [h,w].
torch::Tensor resize_map(const torch::Tensor& map, int64_t h, int64_t w);
/// Area-average a 0/1 [H,W] map to [h,w] and keep cells with fraction > 0.5.
torch::Tensor downsample_prediction(const torch::Tensor& fg, int64_t h, int64_t w);
/// Nearest-neighbour resampling of a 0/1 [H,W] map (loss targets).
torch::Tensor nearest_resize(const torch::Tensor& mask, int64_t h, int64_t w);

/// Sum of features over foreground cells divided by the number of those cells;
/// zeros when the foreground is empty.
torch::Tensor compute_support_vector(const torch::Tensor& feat, const torch::Tensor& fg);

/// For each query cell, the largest cosine similarity to any support
/// foreground cell, then min-max normalized over the query map. All zeros for
/// an empty foreground or a flat range.
torch::Tensor attention_prior(const torch::Tensor& support_feat, const torch::Tensor& query_feat,
                              const torch::Tensor& support_fg);

/// Element-wise mean over k bundles. Sums in double so the result does not
/// depend on the order of the list.
SupportBundle aggregate_multi_support(const std::vector<SupportBundle>& bundles);

/// Mean per-pixel binary cross-entropy of 2-channel logits against a 0/1 target.
torch::Tensor pixel_bce(const torch::Tensor& logits, const torch::Tensor& target);

/// (1/k) sum support terms + (1/n) sum intermediate terms + final term.
/// Intermediate targets are q_mask resized by nearest neighbour to each map.
torch::Tensor compute_loss(const std::vector<torch::Tensor>& support_logits,
                           const std::vector<torch::Tensor>& s_masks,
                           const std::vector<torch::Tensor>& intermediate_logits,
                           const torch::Tensor& final_logits, const torch::Tensor& q_mask);

} // namespace ifse::model
