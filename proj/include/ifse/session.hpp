#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "ifse/clicks.hpp"
#include "ifse/dataset.hpp"
#include "ifse/mask.hpp"

namespace ifse::model {
struct FeatureMap;
class IfseNet;
}

namespace ifse::interactive {

// Click-driven state shared by the evaluator and the annotation service. Each
// image is letterboxed once into the model frame; clicks are kept in source
// coordinates and their disks are stamped in the model frame. Carried masks
// stay in the model frame; reported masks are unpadded to source resolution.

struct ImageEntry {
    std::string id;
    cv::Mat rgb;                   // source resolution, CV_8UC3
    std::optional<BinaryMask> gt;  // source resolution, when known
};

/// An image resized into the model frame.
struct FramedImage {
    std::string id;
    cv::Mat padded;  // target x target RGB
    data::PadInfo pad;
};

struct SupportInput {
    const FramedImage* image;
    const clicks::ClickMasks* clicks;  // model frame
    const BinaryMask* prev;            // model frame
};

struct QueryInput {
    const FramedImage* image;
    const BinaryMask* prev;
};

/// Binarized predictions in the model frame, in input order.
struct Prediction {
    std::vector<BinaryMask> support;
    std::vector<BinaryMask> query;
};

class Predictor {
public:
    virtual ~Predictor() = default;
    virtual Prediction predict(const std::vector<SupportInput>& supports,
                               const std::vector<QueryInput>& queries) = 0;
};

/// Runs the network. Backbone features are cached per image id, so one
/// predictor should serve one session or episode.
class NetworkPredictor final : public Predictor {
public:
    explicit NetworkPredictor(std::shared_ptr<model::IfseNet> net);
    ~NetworkPredictor() override;

    Prediction predict(const std::vector<SupportInput>& supports,
                       const std::vector<QueryInput>& queries) override;

private:
    const model::FeatureMap& features(const FramedImage& image);

    std::shared_ptr<model::IfseNet> net_;
    std::map<std::string, std::unique_ptr<model::FeatureMap>> cache_;
};

struct EntryState {
    ImageEntry image;
    FramedImage frame;
    bool support = false;
    bool frozen = false;                  // support whose mask is held (evaluator convergence)
    std::vector<clicks::Click> history;   // source coordinates
    clicks::ClickMasks clicks;            // model frame
    BinaryMask prev;                      // model frame, carried into the next forward
    BinaryMask mask;                      // source resolution, latest prediction
};

class InteractiveSession {
public:
    /// support_ids must be a non-empty subset of the image ids; ids must be unique.
    InteractiveSession(std::vector<ImageEntry> images, const std::vector<std::string>& support_ids,
                       int input_patch, int click_radius);

    const std::vector<EntryState>& entries() const { return entries_; }
    const EntryState& entry(const std::string& id) const;
    bool has(const std::string& id) const { return index_.count(id) != 0; }
    std::vector<std::string> support_ids() const;
    std::vector<std::string> query_ids() const;

    /// Appends a click (source coordinates) to a support image. The order field
    /// is assigned here. No forward pass is run.
    clicks::Click add_click(const std::string& id, int row, int col, clicks::Polarity polarity);

    /// Moves a query into the support set with an empty click history. Its
    /// carried mask is kept; no forward pass is run.
    void promote(const std::string& id);

    /// Stops clicking on a support image and holds its current mask.
    void freeze(const std::string& id);

    /// One forward over every support and query entry; replaces all masks
    /// except those of frozen supports.
    void run_forward(Predictor& predictor);

    int click_radius() const { return radius_; }
    int input_patch() const { return patch_; }

private:
    EntryState& mutable_entry(const std::string& id);

    int patch_;
    int radius_;
    std::vector<EntryState> entries_;
    std::map<std::string, std::size_t> index_;
};

} // namespace ifse::interactive
