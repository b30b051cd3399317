#include "ifse/model/backbone.hpp"

#include "ifse/error.hpp"

namespace ifse::model {

namespace nn = torch::nn;

namespace {

nn::Conv2d frozen_conv(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding,
                       int64_t dilation = 1) {
    nn::Conv2d conv(nn::Conv2dOptions(in, out, kernel)
                        .stride(stride)
                        .padding(padding)
                        .dilation(dilation)
                        .bias(false));
    nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanOut, torch::kReLU);
    conv->weight.set_requires_grad(false);
    return conv;
}

nn::Sequential downsample_branch(int64_t in, int64_t out, int64_t stride) {
    return nn::Sequential(frozen_conv(in, out, 1, stride, 0), FrozenBatchNorm(out));
}

} // namespace

FrozenBatchNormImpl::FrozenBatchNormImpl(int64_t channels) {
    weight = register_buffer("weight", torch::ones({channels}));
    bias = register_buffer("bias", torch::zeros({channels}));
    running_mean = register_buffer("running_mean", torch::zeros({channels}));
    running_var = register_buffer("running_var", torch::ones({channels}));
}

torch::Tensor FrozenBatchNormImpl::forward(const torch::Tensor& x) {
    const auto scale = weight * torch::rsqrt(running_var + 1e-5);
    const auto shift = bias - running_mean * scale;
    return x * scale.view({1, -1, 1, 1}) + shift.view({1, -1, 1, 1});
}

BottleneckImpl::BottleneckImpl(int64_t in_channels, int64_t planes, int64_t stride,
                               int64_t dilation, bool with_downsample) {
    conv1 = register_module("conv1", frozen_conv(in_channels, planes, 1, 1, 0));
    bn1 = register_module("bn1", FrozenBatchNorm(planes));
    conv2 = register_module("conv2", frozen_conv(planes, planes, 3, stride, dilation, dilation));
    bn2 = register_module("bn2", FrozenBatchNorm(planes));
    conv3 = register_module("conv3", frozen_conv(planes, planes * 4, 1, 1, 0));
    bn3 = register_module("bn3", FrozenBatchNorm(planes * 4));
    if (with_downsample) {
        downsample = register_module("downsample", downsample_branch(in_channels, planes * 4, stride));
    }
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
    auto out = torch::relu(bn1->forward(conv1->forward(x)));
    out = torch::relu(bn2->forward(conv2->forward(out)));
    out = bn3->forward(conv3->forward(out));
    const auto identity = downsample ? downsample->forward(x) : x;
    return torch::relu(out + identity);
}

BasicBlockImpl::BasicBlockImpl(int64_t in_channels, int64_t out_channels, int64_t stride,
                               int64_t dilation) {
    conv1 = register_module("conv1", frozen_conv(in_channels, out_channels, 3, stride, dilation, dilation));
    bn1 = register_module("bn1", FrozenBatchNorm(out_channels));
    conv2 = register_module("conv2", frozen_conv(out_channels, out_channels, 3, 1, dilation, dilation));
    bn2 = register_module("bn2", FrozenBatchNorm(out_channels));
    if (stride != 1 || in_channels != out_channels) {
        downsample = register_module("downsample", downsample_branch(in_channels, out_channels, stride));
    }
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x) {
    auto out = torch::relu(bn1->forward(conv1->forward(x)));
    out = bn2->forward(conv2->forward(out));
    const auto identity = downsample ? downsample->forward(x) : x;
    return torch::relu(out + identity);
}

namespace {

// torchvision _make_layer with optional stride-to-dilation replacement.
nn::Sequential resnet_layer(int64_t& in_channels, int64_t planes, int64_t blocks, int64_t stride,
                            bool dilate, int64_t& dilation) {
    const int64_t previous_dilation = dilation;
    if (dilate) {
        dilation *= stride;
        stride = 1;
    }
    nn::Sequential layer;
    const bool needs_downsample = stride != 1 || in_channels != planes * 4;
    layer->push_back(Bottleneck(in_channels, planes, stride, previous_dilation, needs_downsample));
    in_channels = planes * 4;
    for (int64_t i = 1; i < blocks; ++i) {
        layer->push_back(Bottleneck(in_channels, planes, 1, dilation, false));
    }
    return layer;
}

} // namespace

BackboneImpl::BackboneImpl(const std::string& variant) {
    if (variant == "resnet50") {
        has_maxpool_ = true;
        conv1 = register_module("conv1", frozen_conv(3, 64, 7, 2, 3));
        bn1 = register_module("bn1", FrozenBatchNorm(64));
        int64_t in_channels = 64;
        int64_t dilation = 1;
        layer1 = register_module("layer1", resnet_layer(in_channels, 64, 3, 1, false, dilation));
        layer2 = register_module("layer2", resnet_layer(in_channels, 128, 4, 2, false, dilation));
        layer3 = register_module("layer3", resnet_layer(in_channels, 256, 6, 2, true, dilation));
        mid_channels_ = 512 + 1024;
    } else if (variant == "tiny") {
        conv1 = register_module("conv1", frozen_conv(3, 16, 3, 2, 1));
        bn1 = register_module("bn1", FrozenBatchNorm(16));
        layer1 = register_module("layer1", nn::Sequential(BasicBlock(16, 32, 2, 1)));
        layer2 = register_module("layer2", nn::Sequential(BasicBlock(32, 64, 2, 1)));
        layer3 = register_module("layer3", nn::Sequential(BasicBlock(64, 64, 1, 2)));
        mid_channels_ = 64 + 64;
    } else {
        throw InvalidArgument("unknown backbone variant '" + variant + "'");
    }
}

std::pair<torch::Tensor, torch::Tensor> BackboneImpl::forward(const torch::Tensor& x) {
    auto out = torch::relu(bn1->forward(conv1->forward(x)));
    if (has_maxpool_) {
        out = torch::max_pool2d(out, 3, 2, 1);
    }
    out = layer1->forward(out);
    auto mid_a = layer2->forward(out);
    auto mid_b = layer3->forward(mid_a);
    return {mid_a, mid_b};
}

torch::Tensor normalize_image(const torch::Tensor& rgb_0_255) {
    const auto opts = rgb_0_255.options();
    const auto mean = torch::tensor({0.485, 0.456, 0.406}, opts).view({-1, 1, 1}) * 255.0;
    const auto std = torch::tensor({0.229, 0.224, 0.225}, opts).view({-1, 1, 1}) * 255.0;
    return (rgb_0_255 - mean) / std;
}

} // namespace ifse::model
