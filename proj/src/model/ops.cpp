#include "ifse/model/ops.hpp"

#include <cstring>

#include "ifse/error.hpp"

namespace ifse::model {

namespace F = torch::nn::functional;

namespace {

std::string shape_str(const torch::Tensor& t) {
    std::string s = "[";
    for (int64_t d = 0; d < t.dim(); ++d) {
        if (d) s += ",";
        s += std::to_string(t.size(d));
    }
    return s + "]";
}

void require_binary(const torch::Tensor& m, const char* what) {
    if (!torch::logical_or(m == 0, m == 1).all().item<bool>()) {
        throw InvalidArgument(std::string(what) + " must contain only 0 and 1");
    }
}

} // namespace

torch::Tensor mask_to_tensor(const BinaryMask& mask) {
    auto t = torch::empty({mask.height(), mask.width()}, torch::kUInt8);
    std::memcpy(t.data_ptr<std::uint8_t>(), mask.data(), mask.size());
    return t.to(torch::kFloat32);
}

BinaryMask tensor_to_mask(const torch::Tensor& t) {
    if (t.dim() != 2) throw ShapeMismatch("mask tensor must be 2-D, got " + shape_str(t));
    const auto bytes = (t != 0).to(torch::kUInt8).contiguous();
    std::vector<std::uint8_t> values(bytes.data_ptr<std::uint8_t>(),
                                     bytes.data_ptr<std::uint8_t>() + bytes.numel());
    return BinaryMask(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), std::move(values));
}

torch::Tensor binarize_logits(const torch::Tensor& logits) {
    return logits[1] > logits[0];
}

BinaryMask logits_to_mask(const torch::Tensor& logits) {
    return tensor_to_mask(binarize_logits(logits.detach()));
}

torch::Tensor resize_map(const torch::Tensor& map, int64_t h, int64_t w) {
    if (map.size(0) == h && map.size(1) == w) return map;
    return F::interpolate(map.unsqueeze(0).unsqueeze(0), F::InterpolateFuncOptions()
                                                             .size(std::vector<int64_t>{h, w})
                                                             .mode(torch::kBilinear)
                                                             .align_corners(false)
                                                             .antialias(true))
        .squeeze(0)
        .squeeze(0);
}

torch::Tensor downsample_prediction(const torch::Tensor& fg, int64_t h, int64_t w) {
    const auto frac = torch::adaptive_avg_pool2d(fg.to(torch::kFloat32).unsqueeze(0), {h, w}).squeeze(0);
    return (frac > 0.5).to(torch::kFloat32);
}

torch::Tensor nearest_resize(const torch::Tensor& mask, int64_t h, int64_t w) {
    if (mask.size(0) == h && mask.size(1) == w) return mask;
    return F::interpolate(mask.unsqueeze(0).unsqueeze(0),
                          F::InterpolateFuncOptions().size(std::vector<int64_t>{h, w}).mode(torch::kNearest))
        .squeeze(0)
        .squeeze(0);
}

torch::Tensor compute_support_vector(const torch::Tensor& feat, const torch::Tensor& fg) {
    if (feat.dim() != 3 || fg.dim() != 2 || feat.size(1) != fg.size(0) || feat.size(2) != fg.size(1)) {
        throw ShapeMismatch("support vector: feature " + shape_str(feat) + " vs mask " + shape_str(fg));
    }
    const auto weights = fg.to(feat.dtype());
    const auto count = weights.sum();
    if (count.item<double>() == 0.0) {
        return torch::zeros({feat.size(0)}, feat.options());
    }
    return (feat * weights.unsqueeze(0)).sum({1, 2}) / count;
}

torch::Tensor attention_prior(const torch::Tensor& support_feat, const torch::Tensor& query_feat,
                              const torch::Tensor& support_fg) {
    if (support_feat.dim() != 3 || query_feat.dim() != 3 || support_feat.size(0) != query_feat.size(0)) {
        throw ShapeMismatch("attention: support " + shape_str(support_feat) + " vs query " +
                            shape_str(query_feat));
    }
    if (support_fg.size(0) != support_feat.size(1) || support_fg.size(1) != support_feat.size(2)) {
        throw ShapeMismatch("attention: support mask " + shape_str(support_fg) + " vs feature " +
                            shape_str(support_feat));
    }
    torch::NoGradGuard no_grad;
    const int64_t c = query_feat.size(0);
    const int64_t h = query_feat.size(1);
    const int64_t w = query_feat.size(2);
    auto out = torch::zeros({h, w}, query_feat.options());

    const auto fg_index = support_fg.reshape({-1}).nonzero().squeeze(1);
    if (fg_index.numel() == 0) return out;

    const auto s = support_feat.reshape({c, -1}).index_select(1, fg_index);  // [C,m]
    const auto q = query_feat.reshape({c, -1});                               // [C,hw]
    const auto dots = torch::matmul(q.t(), s);                                // [hw,m]
    const auto norms = torch::outer(q.norm(2, 0), s.norm(2, 0)) + kCosineEps;
    const auto raw = std::get<0>((dots / norms).max(1));

    const auto lo = raw.min();
    const auto range = raw.max() - lo;
    if (range.item<double>() <= kFlatRange) return out;
    return ((raw - lo) / range).reshape({h, w});
}

SupportBundle aggregate_multi_support(const std::vector<SupportBundle>& bundles) {
    if (bundles.empty()) throw InvalidArgument("aggregate_multi_support needs at least one bundle");
    const auto& first = bundles.front();
    for (const auto& b : bundles) {
        if (!b.support_vector.sizes().equals(first.support_vector.sizes()) ||
            !b.click_vector.sizes().equals(first.click_vector.sizes()) ||
            !b.attention_mask.sizes().equals(first.attention_mask.sizes())) {
            throw ShapeMismatch("support bundles differ in shape");
        }
    }
    if (bundles.size() == 1) return first;

    const auto mean_of = [&](auto field) {
        auto acc = (bundles.front().*field).to(torch::kFloat64);
        for (std::size_t i = 1; i < bundles.size(); ++i) {
            acc = acc + (bundles[i].*field).to(torch::kFloat64);
        }
        return (acc / static_cast<double>(bundles.size())).to((first.*field).scalar_type());
    };
    return {mean_of(&SupportBundle::support_vector), mean_of(&SupportBundle::click_vector),
            mean_of(&SupportBundle::attention_mask)};
}

torch::Tensor pixel_bce(const torch::Tensor& logits, const torch::Tensor& target) {
    if (logits.dim() != 3 || logits.size(0) != 2 || target.dim() != 2 ||
        logits.size(1) != target.size(0) || logits.size(2) != target.size(1)) {
        throw ShapeMismatch("loss: logits " + shape_str(logits) + " vs target " + shape_str(target));
    }
    const auto log_p = torch::log_softmax(logits, 0);
    const auto t = target.to(logits.dtype());
    return -(log_p[1] * t + log_p[0] * (1 - t)).mean();
}

torch::Tensor compute_loss(const std::vector<torch::Tensor>& support_logits,
                           const std::vector<torch::Tensor>& s_masks,
                           const std::vector<torch::Tensor>& intermediate_logits,
                           const torch::Tensor& final_logits, const torch::Tensor& q_mask) {
    if (support_logits.empty() || intermediate_logits.empty()) {
        throw InvalidArgument("compute_loss needs at least one support and one intermediate term");
    }
    if (support_logits.size() != s_masks.size()) {
        throw InvalidArgument("compute_loss: support logits and masks differ in count");
    }
    require_binary(q_mask, "query mask");
    auto support_term = torch::zeros({}, final_logits.options());
    for (std::size_t i = 0; i < support_logits.size(); ++i) {
        require_binary(s_masks[i], "support mask");
        support_term = support_term + pixel_bce(support_logits[i], s_masks[i]);
    }
    auto inter_term = torch::zeros({}, final_logits.options());
    for (const auto& logits : intermediate_logits) {
        inter_term = inter_term + pixel_bce(logits, nearest_resize(q_mask, logits.size(1), logits.size(2)));
    }
    return support_term / static_cast<double>(support_logits.size()) +
           inter_term / static_cast<double>(intermediate_logits.size()) + pixel_bce(final_logits, q_mask);
}

} // namespace ifse::model
