#pragma once

#include <string>
#include <utility>

#include <torch/torch.h>

namespace ifse::model {

// Frozen residual image backbones. Both variants return two mid-level feature
// maps at stride 8 that the network concatenates and reduces to C channels.
// All convolution weights are registered with requires_grad = false and batch
// norm always runs on its stored statistics.

/// Inference-only batch norm: y = (x - mean) / sqrt(var + eps) * weight + bias.
struct FrozenBatchNormImpl : torch::nn::Module {
    explicit FrozenBatchNormImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

    torch::Tensor weight, bias, running_mean, running_var;
};
TORCH_MODULE(FrozenBatchNorm);

/// torchvision-style bottleneck block (stride on the 3x3 convolution).
struct BottleneckImpl : torch::nn::Module {
    BottleneckImpl(int64_t in_channels, int64_t planes, int64_t stride, int64_t dilation,
                   bool downsample);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
    FrozenBatchNorm bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
    torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(Bottleneck);

struct BasicBlockImpl : torch::nn::Module {
    BasicBlockImpl(int64_t in_channels, int64_t out_channels, int64_t stride, int64_t dilation);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    FrozenBatchNorm bn1{nullptr}, bn2{nullptr};
    torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(BasicBlock);

struct BackboneImpl : torch::nn::Module {
    /// variant: "resnet50" or "tiny".
    explicit BackboneImpl(const std::string& variant);

    /// x: [N,3,H,W] normalized image. Returns the two stride-8 maps.
    std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& x);

    /// Channels of the concatenated mid-level maps.
    int64_t mid_channels() const { return mid_channels_; }

private:
    // Submodule names follow torchvision so exported ImageNet weights load by name.
    bool has_maxpool_ = false;
    torch::nn::Conv2d conv1{nullptr};
    FrozenBatchNorm bn1{nullptr};
    torch::nn::Sequential layer1{nullptr};
    torch::nn::Sequential layer2{nullptr};  // ends at stride 8
    torch::nn::Sequential layer3{nullptr};  // dilated, keeps stride 8
    int64_t mid_channels_ = 0;
};
TORCH_MODULE(Backbone);

/// Per-channel ImageNet normalization of an RGB image in [0, 255].
torch::Tensor normalize_image(const torch::Tensor& rgb_0_255);

} // namespace ifse::model
