#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ifse/error.hpp"

namespace ifse {

/// Row-major H x W mask whose cells are 0 or 1.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int height, int width);
    BinaryMask(int height, int width, std::vector<std::uint8_t> values);

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return values_.size(); }
    bool empty_shape() const { return values_.empty(); }

    bool operator()(int row, int col) const {
        return values_[static_cast<std::size_t>(row) * width_ + col] != 0;
    }
    void set(int row, int col, bool on) {
        values_[static_cast<std::size_t>(row) * width_ + col] = on ? 1 : 0;
    }
    bool in_bounds(int row, int col) const {
        return row >= 0 && row < height_ && col >= 0 && col < width_;
    }

    std::span<const std::uint8_t> values() const { return values_; }
    std::uint8_t* data() { return values_.data(); }
    const std::uint8_t* data() const { return values_.data(); }

    std::size_t count() const;
    bool any() const;
    bool same_shape(const BinaryMask& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }

    BinaryMask operator&(const BinaryMask& rhs) const;
    BinaryMask operator|(const BinaryMask& rhs) const;
    BinaryMask operator^(const BinaryMask& rhs) const;
    BinaryMask operator~() const;

    bool operator==(const BinaryMask& rhs) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> values_;
};

/// Throws ShapeMismatch when the two masks differ in shape.
void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* what);

/// Per-pixel semantic labels (0 = background, 1..20 = classes, 255 = void).
class LabelMap {
public:
    static constexpr std::uint8_t kVoid = 255;

    LabelMap() = default;
    LabelMap(int height, int width, std::vector<std::uint8_t> labels);

    int height() const { return height_; }
    int width() const { return width_; }
    std::uint8_t operator()(int row, int col) const {
        return labels_[static_cast<std::size_t>(row) * width_ + col];
    }
    std::span<const std::uint8_t> values() const { return labels_; }

    /// Sorted class ids 1..20 present in the map (void and background excluded).
    std::vector<int> classes_present() const;

    /// 1 where the label equals class_id; void pixels map to 0.
    BinaryMask binary(int class_id) const;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> labels_;
};

/// Bit-packed mask for long-lived storage. Round-trips a BinaryMask exactly.
class PackedMask {
public:
    PackedMask() = default;
    explicit PackedMask(const BinaryMask& mask);

    BinaryMask unpack() const;
    int height() const { return height_; }
    int width() const { return width_; }

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint64_t> words_;
};

} // namespace ifse
