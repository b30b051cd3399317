#include "ifse/model/query_path.hpp"

#include "ifse/error.hpp"
#include "ifse/model/support_path.hpp"

namespace ifse::model {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

torch::Tensor resize_to(const torch::Tensor& x, int64_t h, int64_t w) {
    if (x.size(2) == h && x.size(3) == w) return x;
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{h, w})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

torch::Tensor expand_vector(const torch::Tensor& v, int64_t h, int64_t w) {
    return v.unsqueeze(-1).unsqueeze(-1).expand({v.size(0), v.size(1), h, w});
}

nn::Sequential alpha_pair(int64_t c) {
    return nn::Sequential(alpha_block(c, c), alpha_block(c, c));
}

} // namespace

QueryPathImpl::QueryPathImpl(int64_t channels, std::vector<int> scales) : scales_(std::move(scales)) {
    if (scales_.empty()) throw InvalidArgument("query path needs at least one scale");
    init_merge = register_module("init_merge", nn::ModuleList());
    inter_merge = register_module("inter_merge", nn::ModuleList());
    refine = register_module("refine", nn::ModuleList());
    heads = register_module("heads", nn::ModuleList());
    for (std::size_t i = 0; i < scales_.size(); ++i) {
        init_merge->push_back(beta_block(3 * channels + 2, channels));
        if (i > 0) inter_merge->push_back(beta_block(2 * channels, channels));
        refine->push_back(alpha_pair(channels));
        heads->push_back(head_block(channels));
    }
    const auto n = static_cast<int64_t>(scales_.size());
    fuse = register_module("fuse", beta_block(n * channels, channels));
    fuse_refine = register_module("fuse_refine", alpha_pair(channels));
    final_head = register_module("final_head", head_block(channels));
}

QueryPathOutput QueryPathImpl::forward(const torch::Tensor& query, const torch::Tensor& support_vector,
                                       const torch::Tensor& click_vector, const torch::Tensor& attention,
                                       const torch::Tensor& prev_mask) {
    const int64_t channels = query.size(1);
    if (support_vector.size(1) != channels || click_vector.size(1) != channels) {
        throw ShapeMismatch("bundle vectors have " + std::to_string(support_vector.size(1)) + "/" +
                            std::to_string(click_vector.size(1)) + " channels, query feature has " +
                            std::to_string(channels));
    }
    const int64_t h = query.size(2);
    const int64_t w = query.size(3);

    QueryPathOutput out;
    std::vector<torch::Tensor> branch_outputs;
    torch::Tensor previous;
    for (std::size_t i = 0; i < scales_.size(); ++i) {
        const int64_t s = scales_[i];
        auto x = torch::cat({resize_to(query, s, s), expand_vector(support_vector, s, s),
                             expand_vector(click_vector, s, s), resize_to(attention, s, s),
                             resize_to(prev_mask, s, s)},
                            1);
        x = init_merge[i]->as<ConvRelu>()->forward(x);
        if (i > 0) {
            x = inter_merge[i - 1]->as<ConvRelu>()->forward(
                torch::cat({x, resize_to(previous, s, s)}, 1));
        }
        x = x + refine[i]->as<nn::Sequential>()->forward(x);
        out.intermediate.push_back(heads[i]->as<nn::Conv2d>()->forward(x));
        previous = x;
        branch_outputs.push_back(resize_to(x, h, w));
    }
    auto fused = fuse->forward(torch::cat(branch_outputs, 1));
    fused = fused + fuse_refine->forward(fused);
    out.final_logits = final_head->forward(fused);
    return out;
}

} // namespace ifse::model
