#pragma once

#include <vector>

#include <torch/torch.h>

#include "ifse/model/support_path.hpp"

namespace ifse::model {

struct QueryPathOutput {
    torch::Tensor final_logits;               // [N,2,h,w] at feature resolution
    std::vector<torch::Tensor> intermediate;  // one [N,2,s,s] per scale
};

/// Multi-scale enrichment of the query feature. Each scale sees the resized
/// query feature, both support-side vectors expanded to that size, the
/// attention prior and the previous query mask. From the second scale on,
/// the previous scale's output is merged in before the residual alpha pair.
struct QueryPathImpl : torch::nn::Module {
    QueryPathImpl(int64_t channels, std::vector<int> scales);

    /// query: [N,C,h,w]; support_vector, click_vector: [N,C];
    /// attention, prev_mask: [N,1,h,w].
    QueryPathOutput forward(const torch::Tensor& query, const torch::Tensor& support_vector,
                            const torch::Tensor& click_vector, const torch::Tensor& attention,
                            const torch::Tensor& prev_mask);

    const std::vector<int>& scales() const { return scales_; }

    torch::nn::ModuleList init_merge{nullptr};   // beta: 3C+2 -> C
    torch::nn::ModuleList inter_merge{nullptr};  // beta: 2C -> C, scales 1..n-1
    torch::nn::ModuleList refine{nullptr};       // alpha pair, residual
    torch::nn::ModuleList heads{nullptr};
    ConvRelu fuse{nullptr};                     // beta: nC -> C
    torch::nn::Sequential fuse_refine{nullptr};  // alpha pair, residual
    torch::nn::Conv2d final_head{nullptr};

private:
    std::vector<int> scales_;
};
TORCH_MODULE(QueryPath);

} // namespace ifse::model
