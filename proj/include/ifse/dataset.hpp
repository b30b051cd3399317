#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

#include "ifse/clicks.hpp"
#include "ifse/mask.hpp"

// Pascal VOC + SBD corpus handling: merged index, Pascal-5^i folds, per-class
// masks, augmentation and evaluation-time letterboxing.
namespace ifse::data {

inline constexpr int kNumClasses = 20;

/// Benchmark class names in canonical alphabetical order; id = index + 1.
const std::array<std::string_view, kNumClasses>& class_names();

enum class Source { pascal, sbd };

std::string to_string(Source s);
Source source_from_string(const std::string& s);

struct ImageRecord {
    std::string id;
    std::filesystem::path image_uri;
    std::filesystem::path mask_uri;
    Source source = Source::pascal;
    std::set<int> classes_present;

    bool has_class(int class_id) const { return classes_present.contains(class_id); }
};

struct FoldSpec {
    int fold = 0;
    std::set<int> val_classes;
    std::set<int> train_classes;
};

/// Validation classes are 5*fold+1 .. 5*fold+5; the other 15 are training classes.
FoldSpec fold_split(int fold);

struct EpisodeSpec {
    int class_chosen = 0;
    std::vector<std::string> support_ids;
    std::vector<std::string> query_ids;
    std::uint64_t seed = 0;
};

/// Throws InvalidArgument unless supports and queries are disjoint, non-empty
/// support, and every listed image contains class_chosen.
void validate_episode(const EpisodeSpec& spec, const std::map<std::string, ImageRecord>& by_id);

struct IndexResult {
    std::vector<ImageRecord> records;
    std::size_t skipped = 0;
};

/// Union of Pascal VOC segmentation images and SBD images; SBD masks win on shared
/// ids. Pascal layout: JPEGImages/<id>.jpg + SegmentationClass/<id>.png. SBD layout
/// (either directly under the root or under dataset/): img/<id>.jpg + cls_png/<id>.png
/// (single-channel label PNGs, see scripts/convert_sbd.py). Records whose masks
/// contain no class are dropped; unreadable masks are skipped and counted.
IndexResult build_merged_index(const std::filesystem::path& pascal_root,
                               const std::filesystem::path& sbd_root);

void write_manifest(std::ostream& out, const std::vector<ImageRecord>& records);
std::vector<ImageRecord> read_manifest(std::istream& in);

/// Decoded sample: RGB 8-bit image plus its semantic label map.
struct Sample {
    cv::Mat image;   // CV_8UC3, RGB
    LabelMap labels;
};

class ImageStore {
public:
    virtual ~ImageStore() = default;
    virtual Sample load(const ImageRecord& record) const = 0;
};

/// Reads image_uri (any OpenCV-decodable format) and mask_uri (8-bit label PNG;
/// palette indices are read as labels).
class DiskImageStore final : public ImageStore {
public:
    Sample load(const ImageRecord& record) const override;
};

/// Keeps decoded samples in memory, keyed by record id.
class MemoryImageStore final : public ImageStore {
public:
    void put(const std::string& id, Sample sample);
    Sample load(const ImageRecord& record) const override;

private:
    std::map<std::string, Sample> samples_;
};

/// An index plus the store that decodes its records.
class Dataset {
public:
    Dataset(std::vector<ImageRecord> records, std::shared_ptr<const ImageStore> store);

    const std::vector<ImageRecord>& records() const { return records_; }
    const ImageRecord& record(const std::string& id) const;
    const std::map<std::string, ImageRecord>& by_id() const { return by_id_; }
    Sample load(const ImageRecord& record) const { return store_->load(record); }
    std::shared_ptr<const ImageStore> store() const { return store_; }

    /// Records containing at least one class of `classes`.
    Dataset restricted_to(const std::set<int>& classes) const;
    std::vector<const ImageRecord*> with_class(int class_id) const;

private:
    std::vector<ImageRecord> records_;
    std::map<std::string, ImageRecord> by_id_;
    std::shared_ptr<const ImageStore> store_;
};

/// 1 where the label equals class_chosen (void counts as background). Throws
/// InvalidArgument when the class is absent from the record or the label map.
BinaryMask binarize_mask(const ImageRecord& record, const LabelMap& labels, int class_chosen);

/// Union of the masks of every labelled class other than class_chosen.
BinaryMask other_class_mask(const LabelMap& labels, int class_chosen);

/// k records containing class_chosen, uniform without replacement, none in `exclude`.
std::vector<const ImageRecord*> sample_support(const std::vector<const ImageRecord*>& candidates,
                                               int class_chosen, int k,
                                               const std::set<std::string>& exclude,
                                               std::mt19937_64& rng);

// ---- augmentation -------------------------------------------------------------

/// One draw of the training-time geometric augmentation: optional horizontal flip,
/// rotation about the image center, then a patch x patch crop of the zero-padded
/// result.
struct AugmentDraw {
    int source_height = 0;
    int source_width = 0;
    int patch = 512;
    bool flip = false;
    double angle_deg = 0.0;
    int crop_row = 0;
    int crop_col = 0;

    /// 2x3 affine map from source (x=col, y=row) to patch coordinates.
    cv::Matx23d forward_matrix() const;
    cv::Matx23d inverse_matrix() const;
};

struct AugmentRanges {
    double max_rotation_deg = 10.0;
    double flip_probability = 0.5;
};

AugmentDraw draw_augment(std::mt19937_64& rng, int height, int width, int patch,
                         const AugmentRanges& ranges = {});

cv::Mat augment_image(const cv::Mat& image, const AugmentDraw& draw);
/// Nearest-neighbour warp; output stays binary.
BinaryMask augment_mask(const BinaryMask& mask, const AugmentDraw& draw);
/// Writes the patch-space mask back into source coordinates; source pixels that
/// fall outside the patch keep their previous value in `stored`.
void restore_mask(const BinaryMask& patch_mask, const AugmentDraw& draw, BinaryMask& stored);

struct AugmentedPair {
    cv::Mat image;
    BinaryMask mask;
    AugmentDraw draw;
};

AugmentedPair augment(const cv::Mat& image, const BinaryMask& mask, std::mt19937_64& rng,
                      int patch = 512, const AugmentRanges& ranges = {});

// ---- evaluation letterboxing ---------------------------------------------------

/// Geometry of a longest-side resize followed by bottom/right zero padding.
struct PadInfo {
    int source_height = 0;
    int source_width = 0;
    int content_height = 0;
    int content_width = 0;
    int target = 0;

    double scale() const;
};

PadInfo make_pad_info(int height, int width, int target);

struct PaddedPair {
    cv::Mat image;                 // target x target
    std::optional<BinaryMask> mask;
    PadInfo info;
};

PaddedPair resize_with_aspect_pad(const cv::Mat& image, const std::optional<BinaryMask>& mask,
                                  int target);
/// Nearest-neighbour resize of a source-resolution mask into the padded frame.
BinaryMask pad_mask(const BinaryMask& mask, const PadInfo& info);
/// Crops the content area of a padded-frame mask and resizes it back to the source.
BinaryMask unpad_mask(const BinaryMask& padded, const PadInfo& info);
/// Maps a source-resolution click into the padded frame.
clicks::Click pad_click(const clicks::Click& click, const PadInfo& info);

// ---- image files ---------------------------------------------------------------

/// Decodes any OpenCV-readable image into an RGB CV_8UC3 matrix.
cv::Mat read_rgb(const std::filesystem::path& path);
cv::Mat decode_rgb(const std::vector<std::uint8_t>& bytes);
/// Lossless PNG bytes of an RGB image.
std::vector<std::uint8_t> encode_rgb_png(const cv::Mat& rgb);

/// Reads an 8-bit label PNG; palette images yield raw palette indices.
LabelMap read_label_png(const std::filesystem::path& path);
LabelMap decode_label_png(const std::vector<std::uint8_t>& bytes);
/// Single-channel 8-bit PNG with 0 for background and 255 for foreground.
std::vector<std::uint8_t> encode_mask_png(const BinaryMask& mask);
/// Any non-zero pixel is foreground.
BinaryMask decode_mask_png(const std::vector<std::uint8_t>& bytes);
void write_label_png(const std::filesystem::path& path, const LabelMap& labels);

} // namespace ifse::data
