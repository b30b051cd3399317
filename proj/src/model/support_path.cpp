#include "ifse/model/support_path.hpp"

namespace ifse::model {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

ConvReluImpl::ConvReluImpl(int64_t in, int64_t out, int64_t kernel) {
    conv = register_module("conv", nn::Conv2d(nn::Conv2dOptions(in, out, kernel).padding(kernel / 2)));
}

torch::Tensor ConvReluImpl::forward(const torch::Tensor& x) {
    return torch::relu(conv->forward(x));
}

ConvRelu alpha_block(int64_t in, int64_t out) {
    return ConvRelu(in, out, 3);
}

ConvRelu beta_block(int64_t in, int64_t out) {
    return ConvRelu(in, out, 1);
}

torch::nn::Conv2d head_block(int64_t in) {
    return nn::Conv2d(nn::Conv2dOptions(in, 2, 1));
}

SupportPathImpl::SupportPathImpl(int64_t feature_channels, int64_t width, int64_t depth)
    : width_(width), depth_(depth) {
    encoder = register_module("encoder", nn::ModuleList());
    upconvs = register_module("upconvs", nn::ModuleList());
    decoder = register_module("decoder", nn::ModuleList());

    int64_t in = feature_channels + 3;
    for (int64_t level = 0; level <= depth; ++level) {
        const int64_t out = width << level;
        encoder->push_back(nn::Sequential(alpha_block(in, out), alpha_block(out, out)));
        in = out;
    }
    for (int64_t level = depth; level >= 1; --level) {
        const int64_t ch = width << level;
        upconvs->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(ch, ch / 2, 2).stride(2)));
        decoder->push_back(nn::Sequential(alpha_block(ch, ch / 2), alpha_block(ch / 2, ch / 2)));
    }
    head = register_module("head", head_block(width));
    click_reduce = register_module(
        "click_reduce", nn::Conv2d(nn::Conv2dOptions(bottleneck_channels(), feature_channels, 1)));
}

SupportPathOutput SupportPathImpl::forward(const torch::Tensor& features, const torch::Tensor& aux) {
    auto x = torch::cat({features, aux}, 1);
    std::vector<torch::Tensor> skips;
    for (std::size_t level = 0; level < encoder->size(); ++level) {
        if (level > 0) {
            x = torch::max_pool2d(x, 2, 2);
        }
        x = encoder[level]->as<nn::Sequential>()->forward(x);
        skips.push_back(x);
    }
    const torch::Tensor bottleneck = x;
    for (std::size_t i = 0; i < upconvs->size(); ++i) {
        x = upconvs[i]->as<nn::ConvTranspose2d>()->forward(x);
        const auto& skip = skips[skips.size() - 2 - i];
        if (x.size(2) != skip.size(2) || x.size(3) != skip.size(3)) {
            // Odd feature sizes: pooling floored, so align to the skip connection.
            x = F::interpolate(x, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
        }
        x = decoder[i]->as<nn::Sequential>()->forward(torch::cat({x, skip}, 1));
    }
    return {head->forward(x), bottleneck};
}

torch::Tensor SupportPathImpl::click_vector(const torch::Tensor& bottleneck) {
    return click_reduce->forward(bottleneck).mean({2, 3});
}

} // namespace ifse::model
