#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ifse/mask.hpp"

// Click generation, encoding and replay. Everything here is a pure function of
// its inputs plus an explicitly passed random engine.
namespace ifse::clicks {

enum class Polarity { positive, negative };

std::string to_string(Polarity p);
Polarity polarity_from_string(const std::string& s);

struct Click {
    int row = 0;
    int col = 0;
    Polarity polarity = Polarity::positive;
    int order = 0;

    bool operator==(const Click&) const = default;
};

/// Sampling regions of the training-time click simulator.
enum class Region {
    gt_foreground,
    false_negative,
    gt_background,
    other_class_objects,
    fg_border,
    false_positive,
};

std::string to_string(Region r);

struct RegionWeights {
    struct Positive {
        double gt_foreground = 0.2;
        double false_negative = 0.8;
    } positive;
    struct Negative {
        double gt_background = 0.04;
        double other_class_objects = 0.06;
        double fg_border = 0.1;
        double false_positive = 0.8;
    } negative;

    /// Throws InvalidArgument unless each polarity's weights are >= 0 and sum to 1.
    void validate() const;
};

struct ClickMasks {
    BinaryMask positive;
    BinaryMask negative;
};

struct TrainingClickConfig {
    RegionWeights weights;
    int border_width = 3;
};

/// A sampled training click together with the region it was drawn from.
struct TrainingClick {
    Click click;
    Region region;
};

/// Morphological dilation of the foreground by `width` (square element) minus the foreground.
BinaryMask fg_border(const BinaryMask& gt, int width);

/// Draws one training click. Polarity is a fair coin; the region is picked by the
/// polarity's weights renormalized over non-empty regions; the pixel is uniform in
/// the region. If the drawn polarity has no non-empty region the other polarity is
/// used. Returns nullopt when no region of either polarity has a pixel.
std::optional<TrainingClick> sample_training_click(const BinaryMask& gt, const BinaryMask& pred,
                                                   const BinaryMask& other_class,
                                                   const TrainingClickConfig& config,
                                                   std::mt19937_64& rng, int order = 0);

struct ErrorRegion {
    BinaryMask region;
    int center_row = 0;
    int center_col = 0;
    bool is_false_negative = false;
};

/// Largest 8-connected component of gt XOR pred (ties go to the component whose
/// first pixel comes first in raster order) and the argmax of its Euclidean
/// distance transform. Pixels outside the image count as outside the region.
/// Returns nullopt when gt == pred.
std::optional<ErrorRegion> largest_error_region(const BinaryMask& gt, const BinaryMask& pred);

/// Deterministic validation click at the center of the largest error region.
std::optional<Click> sample_validation_click(const BinaryMask& gt, const BinaryMask& pred,
                                             int order = 0);

/// Union of filled disks (dr^2 + dc^2 <= radius^2) per polarity, clipped to the image.
ClickMasks encode_clicks(const std::vector<Click>& history, int height, int width, int radius);

/// Adds one disk to the matching polarity mask in place.
void stamp_click(ClickMasks& masks, const Click& click, int radius);

/// Exact squared Euclidean distance from each region pixel to the nearest
/// non-region pixel (the frame around the image included); zero outside the region.
std::vector<long long> squared_distance_transform(const BinaryMask& region);

/// Labels of 8-connected components of the set pixels, numbered 1.. in raster
/// order of each component's first pixel; 0 for unset pixels.
std::vector<int> label_components(const BinaryMask& mask, int& component_count);

// Line-delimited click logs: one JSON object per line with row, col, polarity,
// order and an optional image_id.
struct ClickRecord {
    std::string image_id;
    Click click;
};

void write_click_log(std::ostream& out, const std::vector<ClickRecord>& records);
std::vector<ClickRecord> read_click_log(std::istream& in);

} // namespace ifse::clicks
