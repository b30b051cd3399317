#include "ifse/session.hpp"

#include "ifse/error.hpp"
#include "ifse/model/ifsenet.hpp"

namespace ifse::interactive {

using clicks::Click;
using clicks::Polarity;

NetworkPredictor::NetworkPredictor(std::shared_ptr<model::IfseNet> net) : net_(std::move(net)) {
    if (!net_ || !*net_) throw InvalidArgument("NetworkPredictor needs a network");
}

NetworkPredictor::~NetworkPredictor() = default;

const model::FeatureMap& NetworkPredictor::features(const FramedImage& image) {
    auto it = cache_.find(image.id);
    if (it == cache_.end()) {
        auto feat = std::make_unique<model::FeatureMap>((*net_)->extract_features(model::image_to_tensor(image.padded)));
        it = cache_.emplace(image.id, std::move(feat)).first;
    }
    return *it->second;
}

Prediction NetworkPredictor::predict(const std::vector<SupportInput>& supports,
                                     const std::vector<QueryInput>& queries) {
    if (supports.empty()) throw InvalidArgument("prediction needs at least one support image");
    torch::NoGradGuard no_grad;
    auto& net = *net_;
    Prediction out;
    std::vector<model::SupportState> states;
    for (const auto& s : supports) {
        states.push_back(net->run_support(features(*s.image),
                                          {model::mask_to_tensor(s.clicks->positive),
                                           model::mask_to_tensor(s.clicks->negative), model::mask_to_tensor(*s.prev)}));
        out.support.push_back(model::logits_to_mask(states.back().logits));
    }
    for (const auto& q : queries) {
        const auto& qf = features(*q.image);
        const auto result = net->query_forward(qf, net->bundle_for_query(states, qf), model::mask_to_tensor(*q.prev));
        out.query.push_back(model::logits_to_mask(result.final_logits));
    }
    return out;
}

InteractiveSession::InteractiveSession(std::vector<ImageEntry> images, const std::vector<std::string>& support_ids,
                                       int input_patch, int click_radius)
    : patch_(input_patch), radius_(click_radius) {
    if (support_ids.empty()) throw InvalidArgument("at least one support image is required");
    if (input_patch <= 0) throw InvalidArgument("input_patch must be positive");
    for (auto& img : images) {
        if (img.id.empty()) throw InvalidArgument("image ids must be non-empty");
        if (index_.count(img.id)) throw InvalidArgument("duplicate image id '" + img.id + "'");
        if (img.rgb.empty() || img.rgb.type() != CV_8UC3) {
            throw InvalidArgument("image '" + img.id + "' must be a non-empty 8-bit RGB image");
        }
        if (img.gt && (img.gt->height() != img.rgb.rows || img.gt->width() != img.rgb.cols)) {
            throw ShapeMismatch("ground truth of '" + img.id + "' does not match the image size");
        }
        EntryState e;
        auto padded = data::resize_with_aspect_pad(img.rgb, std::nullopt, patch_);
        e.frame = {img.id, padded.image, padded.info};
        e.clicks = {BinaryMask(patch_, patch_), BinaryMask(patch_, patch_)};
        e.prev = BinaryMask(patch_, patch_);
        e.mask = BinaryMask(img.rgb.rows, img.rgb.cols);
        e.image = std::move(img);
        index_.emplace(e.image.id, entries_.size());
        entries_.push_back(std::move(e));
    }
    for (const auto& id : support_ids) {
        auto it = index_.find(id);
        if (it == index_.end()) throw InvalidArgument("support id '" + id + "' is not among the images");
        if (entries_[it->second].support) throw InvalidArgument("support id '" + id + "' listed twice");
        entries_[it->second].support = true;
    }
}

const EntryState& InteractiveSession::entry(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw NotFound("no image '" + id + "' in this session");
    return entries_[it->second];
}

EntryState& InteractiveSession::mutable_entry(const std::string& id) {
    return const_cast<EntryState&>(entry(id));
}

std::vector<std::string> InteractiveSession::support_ids() const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
        if (e.support) out.push_back(e.image.id);
    return out;
}

std::vector<std::string> InteractiveSession::query_ids() const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
        if (!e.support) out.push_back(e.image.id);
    return out;
}

Click InteractiveSession::add_click(const std::string& id, int row, int col, Polarity polarity) {
    auto& e = mutable_entry(id);
    if (!e.support) throw InvalidArgument("'" + id + "' is a query image; promote it before clicking");
    if (e.frozen) throw Conflict("'" + id + "' no longer accepts clicks");
    if (row < 0 || col < 0 || row >= e.image.rgb.rows || col >= e.image.rgb.cols) {
        throw InvalidArgument("click (" + std::to_string(row) + ", " + std::to_string(col) + ") is outside the " +
                              std::to_string(e.image.rgb.rows) + "x" + std::to_string(e.image.rgb.cols) + " image");
    }
    Click c{row, col, polarity, static_cast<int>(e.history.size())};
    e.history.push_back(c);
    clicks::stamp_click(e.clicks, data::pad_click(c, e.frame.pad), radius_);
    return c;
}

void InteractiveSession::promote(const std::string& id) {
    auto& e = mutable_entry(id);
    if (e.support) throw Conflict("'" + id + "' is already a support image");
    e.support = true;
}

void InteractiveSession::freeze(const std::string& id) {
    auto& e = mutable_entry(id);
    if (!e.support) throw InvalidArgument("only support images can be frozen");
    e.frozen = true;
}

void InteractiveSession::run_forward(Predictor& predictor) {
    std::vector<SupportInput> supports;
    std::vector<QueryInput> queries;
    std::vector<EntryState*> s_entries, q_entries;
    for (auto& e : entries_) {
        if (e.support) {
            supports.push_back({&e.frame, &e.clicks, &e.prev});
            s_entries.push_back(&e);
        } else {
            queries.push_back({&e.frame, &e.prev});
            q_entries.push_back(&e);
        }
    }
    auto pred = predictor.predict(supports, queries);
    if (pred.support.size() != s_entries.size() || pred.query.size() != q_entries.size()) {
        throw ShapeMismatch("predictor returned the wrong number of masks");
    }
    const auto apply = [&](EntryState& e, BinaryMask&& m) {
        if (m.height() != patch_ || m.width() != patch_) throw ShapeMismatch("predicted mask is not in the model frame");
        e.mask = data::unpad_mask(m, e.frame.pad);
        e.prev = std::move(m);
    };
    for (std::size_t i = 0; i < s_entries.size(); ++i) {
        if (!s_entries[i]->frozen) apply(*s_entries[i], std::move(pred.support[i]));
    }
    for (std::size_t i = 0; i < q_entries.size(); ++i) apply(*q_entries[i], std::move(pred.query[i]));
}

} // namespace ifse::interactive
