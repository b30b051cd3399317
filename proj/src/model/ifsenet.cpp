#include "ifse/model/ifsenet.hpp"

#include <cstring>

#include "ifse/error.hpp"

namespace ifse::model {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

torch::Tensor upsample(const torch::Tensor& logits, int64_t h, int64_t w) {
    return F::interpolate(logits, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{h, w})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
}

void require_map(const torch::Tensor& m, int64_t h, int64_t w, const char* what) {
    if (m.dim() != 2 || m.size(0) != h || m.size(1) != w) {
        throw ShapeMismatch(std::string(what) + " must be " + std::to_string(h) + "x" + std::to_string(w));
    }
}

} // namespace

IfseNetImpl::IfseNetImpl(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    backbone = register_module("backbone", Backbone(config_.backbone));
    reduce = register_module(
        "reduce", nn::Conv2d(nn::Conv2dOptions(backbone->mid_channels(), config_.feature_channels, 1)));
    support = register_module("support",
                              SupportPath(config_.feature_channels, config_.support_width, config_.pooling_depth));
    query = register_module("query", QueryPath(config_.feature_channels, config_.query_scales));
}

FeatureMap IfseNetImpl::extract_features(const torch::Tensor& image) {
    if (image.dim() != 3 || image.size(0) != 3) {
        throw InvalidArgument("image must have 3 channels");
    }
    if (image.size(1) == 0 || image.size(2) == 0) {
        throw InvalidArgument("image has zero area");
    }
    torch::Tensor mid;
    {
        torch::NoGradGuard no_grad;
        auto [a, b] = backbone->forward(normalize_image(image.to(reduce->weight.scalar_type())).unsqueeze(0));
        mid = torch::cat({a, b}, 1);
    }
    return {torch::relu(reduce->forward(mid)).squeeze(0), kFeatureStride};
}

SupportForward IfseNetImpl::support_forward(const FeatureMap& feat, const torch::Tensor& pos_clicks,
                                            const torch::Tensor& neg_clicks, const torch::Tensor& prev_mask) {
    const int64_t H = pos_clicks.size(0);
    const int64_t W = pos_clicks.size(1);
    require_map(neg_clicks, H, W, "negative click mask");
    require_map(prev_mask, H, W, "previous mask");
    const int64_t h = feat.height();
    const int64_t w = feat.width();
    if ((H + feat.stride - 1) / feat.stride != h || (W + feat.stride - 1) / feat.stride != w) {
        throw ShapeMismatch("auxiliary masks " + std::to_string(H) + "x" + std::to_string(W) +
                            " do not match a " + std::to_string(h) + "x" + std::to_string(w) + " feature map");
    }
    const auto aux = torch::stack({resize_map(pos_clicks, h, w), resize_map(neg_clicks, h, w),
                                   resize_map(prev_mask, h, w)})
                         .unsqueeze(0)
                         .to(feat.data.scalar_type());
    auto out = support->forward(feat.data.unsqueeze(0), aux);
    return {upsample(out.logits, H, W).squeeze(0), out.bottleneck.squeeze(0)};
}

torch::Tensor IfseNetImpl::compute_click_vector(const torch::Tensor& bottleneck) {
    return support->click_vector(bottleneck.unsqueeze(0)).squeeze(0);
}

SupportState IfseNetImpl::run_support(const FeatureMap& feat, const SupportInputs& in) {
    auto fw = support_forward(feat, in.pos_clicks, in.neg_clicks, in.prev_mask);
    SupportState st;
    st.feature = feat;
    st.fg = downsample_prediction(binarize_logits(fw.logits.detach()), feat.height(), feat.width());
    st.support_vector = compute_support_vector(feat.data, st.fg);
    st.click_vector = compute_click_vector(fw.bottleneck);
    st.logits = std::move(fw.logits);
    return st;
}

SupportBundle IfseNetImpl::bundle_for_query(const std::vector<SupportState>& supports, const FeatureMap& q) {
    std::vector<SupportBundle> bundles;
    bundles.reserve(supports.size());
    for (const auto& s : supports) {
        bundles.push_back({s.support_vector, s.click_vector,
                           attention_prior(s.feature.data.detach(), q.data.detach(), s.fg)});
    }
    return aggregate_multi_support(bundles);
}

QueryForward IfseNetImpl::query_forward(const FeatureMap& q, const SupportBundle& bundle,
                                        const torch::Tensor& prev_query_mask) {
    const int64_t H = prev_query_mask.size(0);
    const int64_t W = prev_query_mask.size(1);
    const int64_t h = q.height();
    const int64_t w = q.width();
    if (bundle.attention_mask.size(0) != h || bundle.attention_mask.size(1) != w) {
        throw ShapeMismatch("attention mask does not match the query feature map");
    }
    auto out = query->forward(q.data.unsqueeze(0), bundle.support_vector.unsqueeze(0),
                              bundle.click_vector.unsqueeze(0),
                              bundle.attention_mask.unsqueeze(0).unsqueeze(0),
                              resize_map(prev_query_mask, h, w).to(q.data.scalar_type()).unsqueeze(0).unsqueeze(0));
    QueryForward result;
    result.final_logits = upsample(out.final_logits, H, W).squeeze(0);
    for (auto& t : out.intermediate) result.intermediate.push_back(t.squeeze(0));
    return result;
}

std::vector<torch::Tensor> IfseNetImpl::trainable_parameters() {
    std::vector<torch::Tensor> params;
    for (auto& p : parameters()) {
        if (p.requires_grad()) params.push_back(p);
    }
    return params;
}

IfseNet make_network(const ModelConfig& config, std::uint64_t seed) {
    torch::manual_seed(seed);
    IfseNet net(config);
    net->eval();
    return net;
}

torch::Tensor image_to_tensor(const cv::Mat& rgb) {
    if (rgb.type() != CV_8UC3) throw InvalidArgument("image must be 8-bit with 3 channels");
    if (rgb.empty()) throw InvalidArgument("image has zero area");
    const cv::Mat cont = rgb.isContinuous() ? rgb : rgb.clone();
    auto t = torch::empty({cont.rows, cont.cols, 3}, torch::kUInt8);
    std::memcpy(t.data_ptr<std::uint8_t>(), cont.data, cont.total() * 3);
    return t.permute({2, 0, 1}).to(torch::kFloat32).contiguous();
}

} // namespace ifse::model
