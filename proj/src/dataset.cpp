#include "ifse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <istream>
#include <numbers>
#include <ostream>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

namespace fs = std::filesystem;

namespace ifse::data {

const std::array<std::string_view, kNumClasses>& class_names() {
    static constexpr std::array<std::string_view, kNumClasses> names{
        "aeroplane", "bicycle", "bird",  "boat",        "bottle", "bus",         "car",
        "cat",       "chair",   "cow",   "diningtable", "dog",    "horse",       "motorbike",
        "person",    "pottedplant", "sheep", "sofa",    "train",  "tvmonitor"};
    return names;
}

std::string to_string(Source s) {
    return s == Source::pascal ? "pascal" : "sbd";
}

Source source_from_string(const std::string& s) {
    if (s == "pascal") return Source::pascal;
    if (s == "sbd") return Source::sbd;
    throw InvalidArgument("unknown record source '" + s + "'");
}

FoldSpec fold_split(int fold) {
    if (fold < 0 || fold > 3) {
        throw InvalidArgument("fold must be in 0..3, got " + std::to_string(fold));
    }
    FoldSpec spec;
    spec.fold = fold;
    for (int c = 1; c <= kNumClasses; ++c) {
        if (c > 5 * fold && c <= 5 * fold + 5) {
            spec.val_classes.insert(c);
        } else {
            spec.train_classes.insert(c);
        }
    }
    return spec;
}

void validate_episode(const EpisodeSpec& spec, const std::map<std::string, ImageRecord>& by_id) {
    if (spec.support_ids.empty()) {
        throw InvalidArgument("episode needs at least one support image");
    }
    std::set<std::string> seen;
    auto check = [&](const std::string& id) {
        if (!seen.insert(id).second) {
            throw InvalidArgument("episode lists image '" + id + "' twice");
        }
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw InvalidArgument("episode image '" + id + "' is not in the index");
        }
        if (!it->second.has_class(spec.class_chosen)) {
            throw InvalidArgument("episode image '" + id + "' does not contain class " +
                                  std::to_string(spec.class_chosen));
        }
    };
    for (const auto& id : spec.support_ids) check(id);
    for (const auto& id : spec.query_ids) check(id);
}

namespace {

fs::path first_existing(std::initializer_list<fs::path> candidates) {
    for (const auto& p : candidates) {
        if (fs::is_directory(p)) return p;
    }
    return {};
}

std::vector<std::string> sorted_stems(const fs::path& dir, const std::string& ext) {
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ext) {
            out.push_back(entry.path().stem().string());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

IndexResult build_merged_index(const fs::path& pascal_root, const fs::path& sbd_root) {
    if (!fs::is_directory(pascal_root)) {
        throw NotFound("Pascal root not found: " + pascal_root.string());
    }
    if (!fs::is_directory(sbd_root)) {
        throw NotFound("SBD root not found: " + sbd_root.string());
    }
    const fs::path pascal_masks = pascal_root / "SegmentationClass";
    const fs::path pascal_images = pascal_root / "JPEGImages";
    const fs::path sbd_masks = first_existing({sbd_root / "cls_png", sbd_root / "dataset" / "cls_png"});
    const fs::path sbd_images = first_existing({sbd_root / "img", sbd_root / "dataset" / "img"});
    if (!fs::is_directory(pascal_masks) || !fs::is_directory(pascal_images)) {
        throw NotFound("Pascal root lacks JPEGImages/ or SegmentationClass/: " + pascal_root.string());
    }
    if (sbd_masks.empty() || sbd_images.empty()) {
        throw NotFound("SBD root lacks img/ or cls_png/: " + sbd_root.string());
    }

    std::map<std::string, ImageRecord> merged;
    for (const auto& id : sorted_stems(pascal_masks, ".png")) {
        merged[id] = ImageRecord{id, pascal_images / (id + ".jpg"), pascal_masks / (id + ".png"),
                                 Source::pascal, {}};
    }
    for (const auto& id : sorted_stems(sbd_masks, ".png")) {
        merged[id] = ImageRecord{id, sbd_images / (id + ".jpg"), sbd_masks / (id + ".png"),
                                 Source::sbd, {}};
    }

    IndexResult result;
    for (auto& [id, record] : merged) {
        try {
            const LabelMap labels = read_label_png(record.mask_uri);
            const auto classes = labels.classes_present();
            record.classes_present = {classes.begin(), classes.end()};
        } catch (const IoError&) {
            ++result.skipped;
            continue;
        }
        if (!record.classes_present.empty()) {
            result.records.push_back(std::move(record));
        }
    }
    if (result.skipped > 0) {
        std::cerr << "build_merged_index: skipped " << result.skipped << " unreadable masks\n";
    }
    return result;
}

void write_manifest(std::ostream& out, const std::vector<ImageRecord>& records) {
    for (const auto& r : records) {
        nlohmann::json j{{"id", r.id},
                         {"source", to_string(r.source)},
                         {"image", r.image_uri.string()},
                         {"mask", r.mask_uri.string()},
                         {"classes", std::vector<int>(r.classes_present.begin(),
                                                      r.classes_present.end())}};
        out << j.dump() << '\n';
    }
}

std::vector<ImageRecord> read_manifest(std::istream& in) {
    std::vector<ImageRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ImageRecord r;
            r.id = j.at("id").get<std::string>();
            r.source = source_from_string(j.at("source").get<std::string>());
            r.image_uri = j.at("image").get<std::string>();
            r.mask_uri = j.at("mask").get<std::string>();
            for (int c : j.at("classes").get<std::vector<int>>()) r.classes_present.insert(c);
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw InvalidArgument("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

Sample DiskImageStore::load(const ImageRecord& record) const {
    Sample s{read_rgb(record.image_uri), read_label_png(record.mask_uri)};
    if (s.image.rows != s.labels.height() || s.image.cols != s.labels.width()) {
        throw ShapeMismatch("image and mask sizes differ for record " + record.id);
    }
    return s;
}

void MemoryImageStore::put(const std::string& id, Sample sample) {
    samples_[id] = std::move(sample);
}

Sample MemoryImageStore::load(const ImageRecord& record) const {
    auto it = samples_.find(record.id);
    if (it == samples_.end()) {
        throw NotFound("no in-memory sample for record " + record.id);
    }
    return Sample{it->second.image.clone(), it->second.labels};
}

Dataset::Dataset(std::vector<ImageRecord> records, std::shared_ptr<const ImageStore> store)
    : records_(std::move(records)), store_(std::move(store)) {
    for (const auto& r : records_) {
        if (!by_id_.emplace(r.id, r).second) {
            throw InvalidArgument("duplicate record id " + r.id);
        }
    }
}

const ImageRecord& Dataset::record(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw NotFound("unknown image id " + id);
    return it->second;
}

Dataset Dataset::restricted_to(const std::set<int>& classes) const {
    std::vector<ImageRecord> kept;
    for (const auto& r : records_) {
        if (std::any_of(classes.begin(), classes.end(), [&](int c) { return r.has_class(c); })) {
            kept.push_back(r);
        }
    }
    return Dataset(std::move(kept), store_);
}

std::vector<const ImageRecord*> Dataset::with_class(int class_id) const {
    std::vector<const ImageRecord*> out;
    for (const auto& r : records_) {
        if (r.has_class(class_id)) out.push_back(&r);
    }
    return out;
}

BinaryMask binarize_mask(const ImageRecord& record, const LabelMap& labels, int class_chosen) {
    if (!record.has_class(class_chosen)) {
        throw InvalidArgument("class " + std::to_string(class_chosen) + " absent from record " +
                              record.id);
    }
    BinaryMask mask = labels.binary(class_chosen);
    if (!mask.any()) {
        throw InvalidArgument("class " + std::to_string(class_chosen) + " absent from mask of " +
                              record.id);
    }
    return mask;
}

BinaryMask other_class_mask(const LabelMap& labels, int class_chosen) {
    BinaryMask out(labels.height(), labels.width());
    auto* p = out.data();
    const auto values = labels.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto v = values[i];
        p[i] = (v >= 1 && v <= kNumClasses && v != class_chosen) ? 1 : 0;
    }
    return out;
}

std::vector<const ImageRecord*> sample_support(const std::vector<const ImageRecord*>& candidates,
                                               int class_chosen, int k,
                                               const std::set<std::string>& exclude,
                                               std::mt19937_64& rng) {
    if (k < 1) {
        throw InvalidArgument("support size must be >= 1");
    }
    std::vector<const ImageRecord*> eligible;
    for (const auto* r : candidates) {
        if (r->has_class(class_chosen) && !exclude.contains(r->id)) eligible.push_back(r);
    }
    if (eligible.size() < static_cast<std::size_t>(k)) {
        throw InvalidArgument("only " + std::to_string(eligible.size()) +
                              " eligible support images for class " +
                              std::to_string(class_chosen) + ", need " + std::to_string(k));
    }
    // Partial Fisher-Yates.
    for (int i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i),
                                                        eligible.size() - 1);
        std::swap(eligible[static_cast<std::size_t>(i)], eligible[pick(rng)]);
    }
    eligible.resize(static_cast<std::size_t>(k));
    return eligible;
}

// ---- augmentation -------------------------------------------------------------

cv::Matx23d AugmentDraw::forward_matrix() const {
    // flip -> rotate about the image center -> translate by the crop offset
    const double cx = (source_width - 1) / 2.0;
    const double cy = (source_height - 1) / 2.0;
    const cv::Matx33d flip_m = flip ? cv::Matx33d(-1, 0, source_width - 1, 0, 1, 0, 0, 0, 1)
                                    : cv::Matx33d::eye();
    const double a = angle_deg * std::numbers::pi / 180.0;
    const double ca = std::cos(a);
    const double sa = std::sin(a);
    const cv::Matx33d rot(ca, -sa, cx - ca * cx + sa * cy, sa, ca, cy - sa * cx - ca * cy, 0, 0, 1);
    const cv::Matx33d crop(1, 0, -crop_col, 0, 1, -crop_row, 0, 0, 1);
    const cv::Matx33d m = crop * rot * flip_m;
    return {m(0, 0), m(0, 1), m(0, 2), m(1, 0), m(1, 1), m(1, 2)};
}

cv::Matx23d AugmentDraw::inverse_matrix() const {
    cv::Matx23d inv;
    cv::invertAffineTransform(forward_matrix(), inv);
    return inv;
}

AugmentDraw draw_augment(std::mt19937_64& rng, int height, int width, int patch,
                         const AugmentRanges& ranges) {
    if (height <= 0 || width <= 0 || patch <= 0) {
        throw InvalidArgument("augment needs positive image and patch sizes");
    }
    AugmentDraw d;
    d.source_height = height;
    d.source_width = width;
    d.patch = patch;
    d.flip = std::bernoulli_distribution(ranges.flip_probability)(rng);
    d.angle_deg =
        std::uniform_real_distribution<double>(-ranges.max_rotation_deg, ranges.max_rotation_deg)(rng);
    // Images smaller than the patch are zero-padded at the bottom/right.
    const int span_rows = std::max(height, patch) - patch;
    const int span_cols = std::max(width, patch) - patch;
    d.crop_row = std::uniform_int_distribution<int>(0, span_rows)(rng);
    d.crop_col = std::uniform_int_distribution<int>(0, span_cols)(rng);
    return d;
}

cv::Mat augment_image(const cv::Mat& image, const AugmentDraw& draw) {
    cv::Mat out;
    cv::warpAffine(image, out, cv::Mat(draw.forward_matrix()), cv::Size(draw.patch, draw.patch),
                   cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar::all(0));
    return out;
}

BinaryMask augment_mask(const BinaryMask& mask, const AugmentDraw& draw) {
    if (mask.height() != draw.source_height || mask.width() != draw.source_width) {
        throw ShapeMismatch("augment_mask: mask does not match the draw's source size");
    }
    const auto inv = draw.inverse_matrix();
    BinaryMask out(draw.patch, draw.patch);
    for (int r = 0; r < draw.patch; ++r) {
        for (int c = 0; c < draw.patch; ++c) {
            const double x = inv(0, 0) * c + inv(0, 1) * r + inv(0, 2);
            const double y = inv(1, 0) * c + inv(1, 1) * r + inv(1, 2);
            const int sc = static_cast<int>(std::lround(x));
            const int sr = static_cast<int>(std::lround(y));
            if (mask.in_bounds(sr, sc) && mask(sr, sc)) out.set(r, c, true);
        }
    }
    return out;
}

void restore_mask(const BinaryMask& patch_mask, const AugmentDraw& draw, BinaryMask& stored) {
    if (patch_mask.height() != draw.patch || patch_mask.width() != draw.patch) {
        throw ShapeMismatch("restore_mask: patch mask has the wrong size");
    }
    if (stored.height() != draw.source_height || stored.width() != draw.source_width) {
        throw ShapeMismatch("restore_mask: stored mask does not match the draw's source size");
    }
    const auto fwd = draw.forward_matrix();
    for (int r = 0; r < stored.height(); ++r) {
        for (int c = 0; c < stored.width(); ++c) {
            const double x = fwd(0, 0) * c + fwd(0, 1) * r + fwd(0, 2);
            const double y = fwd(1, 0) * c + fwd(1, 1) * r + fwd(1, 2);
            const int pc = static_cast<int>(std::lround(x));
            const int pr = static_cast<int>(std::lround(y));
            if (patch_mask.in_bounds(pr, pc)) stored.set(r, c, patch_mask(pr, pc));
        }
    }
}

AugmentedPair augment(const cv::Mat& image, const BinaryMask& mask, std::mt19937_64& rng, int patch,
                      const AugmentRanges& ranges) {
    if (image.rows != mask.height() || image.cols != mask.width()) {
        throw ShapeMismatch("augment: image and mask sizes differ");
    }
    AugmentDraw draw = draw_augment(rng, image.rows, image.cols, patch, ranges);
    return {augment_image(image, draw), augment_mask(mask, draw), draw};
}

// ---- evaluation letterboxing ---------------------------------------------------

double PadInfo::scale() const {
    return static_cast<double>(target) / std::max(source_height, source_width);
}

PadInfo make_pad_info(int height, int width, int target) {
    if (height <= 0 || width <= 0 || target <= 0) {
        throw InvalidArgument("resize_with_aspect_pad needs positive sizes");
    }
    PadInfo info{height, width, 0, 0, target};
    const double s = info.scale();
    info.content_height = std::clamp(static_cast<int>(std::lround(height * s)), 1, target);
    info.content_width = std::clamp(static_cast<int>(std::lround(width * s)), 1, target);
    return info;
}

PaddedPair resize_with_aspect_pad(const cv::Mat& image, const std::optional<BinaryMask>& mask,
                                  int target) {
    PaddedPair out;
    out.info = make_pad_info(image.rows, image.cols, target);
    cv::Mat content;
    if (out.info.content_height == image.rows && out.info.content_width == image.cols) {
        content = image;
    } else {
        cv::resize(image, content, cv::Size(out.info.content_width, out.info.content_height), 0, 0,
                   cv::INTER_LINEAR);
    }
    out.image = cv::Mat::zeros(target, target, image.type());
    content.copyTo(out.image(cv::Rect(0, 0, out.info.content_width, out.info.content_height)));
    if (mask) {
        if (mask->height() != image.rows || mask->width() != image.cols) {
            throw ShapeMismatch("resize_with_aspect_pad: mask and image sizes differ");
        }
        out.mask = pad_mask(*mask, out.info);
    }
    return out;
}

namespace {

int nearest_source(int dst, int dst_extent, int src_extent) {
    const double pos = (dst + 0.5) * src_extent / static_cast<double>(dst_extent);
    return std::clamp(static_cast<int>(std::floor(pos)), 0, src_extent - 1);
}

} // namespace

BinaryMask pad_mask(const BinaryMask& mask, const PadInfo& info) {
    if (mask.height() != info.source_height || mask.width() != info.source_width) {
        throw ShapeMismatch("pad_mask: mask does not match the pad geometry");
    }
    BinaryMask out(info.target, info.target);
    for (int r = 0; r < info.content_height; ++r) {
        const int sr = nearest_source(r, info.content_height, info.source_height);
        for (int c = 0; c < info.content_width; ++c) {
            const int sc = nearest_source(c, info.content_width, info.source_width);
            out.set(r, c, mask(sr, sc));
        }
    }
    return out;
}

BinaryMask unpad_mask(const BinaryMask& padded, const PadInfo& info) {
    if (padded.height() != info.target || padded.width() != info.target) {
        throw ShapeMismatch("unpad_mask: mask does not match the padded frame");
    }
    BinaryMask out(info.source_height, info.source_width);
    for (int r = 0; r < info.source_height; ++r) {
        const int pr = nearest_source(r, info.source_height, info.content_height);
        for (int c = 0; c < info.source_width; ++c) {
            const int pc = nearest_source(c, info.source_width, info.content_width);
            out.set(r, c, padded(pr, pc));
        }
    }
    return out;
}

clicks::Click pad_click(const clicks::Click& click, const PadInfo& info) {
    if (click.row < 0 || click.row >= info.source_height || click.col < 0 ||
        click.col >= info.source_width) {
        throw InvalidArgument("click outside the source image");
    }
    clicks::Click out = click;
    out.row = nearest_source(click.row, info.source_height, info.content_height);
    out.col = nearest_source(click.col, info.source_width, info.content_width);
    return out;
}

} // namespace ifse::data
