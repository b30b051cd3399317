#pragma once

#include <torch/torch.h>

namespace ifse::model {

/// Convolution (same padding) followed by ReLU.
struct ConvReluImpl : torch::nn::Module {
    ConvReluImpl(int64_t in, int64_t out, int64_t kernel);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(ConvRelu);

/// 3x3 convolution + ReLU.
ConvRelu alpha_block(int64_t in, int64_t out);
/// 1x1 convolution + ReLU.
ConvRelu beta_block(int64_t in, int64_t out);
/// 1x1 convolution to 2 logit channels (background, foreground).
torch::nn::Conv2d head_block(int64_t in);

struct SupportPathOutput {
    torch::Tensor logits;      // [N,2,h,w] at feature resolution
    torch::Tensor bottleneck;  // [N,width*2^depth,h/8,w/8]
};

/// U-shaped support network. The contracting half halves the spatial size
/// `depth` times while doubling channels; each upconv doubles the spatial size
/// and halves the channels before the skip concatenation.
struct SupportPathImpl : torch::nn::Module {
    SupportPathImpl(int64_t feature_channels, int64_t width, int64_t depth);

    /// features: [N,C,h,w]; aux: [N,3,h,w] (positive clicks, negative clicks, previous mask).
    SupportPathOutput forward(const torch::Tensor& features, const torch::Tensor& aux);

    /// 1x1 convolution bringing the bottleneck back to C channels, then spatial mean.
    torch::Tensor click_vector(const torch::Tensor& bottleneck);

    int64_t bottleneck_channels() const { return width_ << depth_; }

    torch::nn::ModuleList encoder{nullptr};
    torch::nn::ModuleList upconvs{nullptr};
    torch::nn::ModuleList decoder{nullptr};
    torch::nn::Conv2d head{nullptr};
    torch::nn::Conv2d click_reduce{nullptr};

private:
    int64_t width_;
    int64_t depth_;
};
TORCH_MODULE(SupportPath);

} // namespace ifse::model
