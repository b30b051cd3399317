#include "ifse/mask.hpp"

#include <algorithm>
#include <array>
#include <numeric>

namespace ifse {

BinaryMask::BinaryMask(int height, int width) : height_(height), width_(width) {
    if (height < 0 || width < 0) {
        throw InvalidArgument("mask dimensions must be non-negative");
    }
    values_.assign(static_cast<std::size_t>(height) * width, 0);
}

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint8_t> values)
    : height_(height), width_(width), values_(std::move(values)) {
    if (height < 0 || width < 0 || values_.size() != static_cast<std::size_t>(height) * width) {
        throw ShapeMismatch("mask value count does not match " + std::to_string(height) + "x" +
                            std::to_string(width));
    }
    for (auto& v : values_) {
        if (v > 1) {
            throw InvalidArgument("binary mask values must be 0 or 1");
        }
    }
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), std::uint8_t{1}));
}

bool BinaryMask::any() const {
    return std::any_of(values_.begin(), values_.end(), [](std::uint8_t v) { return v != 0; });
}

namespace {

template <typename Op>
BinaryMask combine(const BinaryMask& a, const BinaryMask& b, Op op) {
    require_same_shape(a, b, "mask combine");
    BinaryMask out(a.height(), a.width());
    const auto* pa = a.data();
    const auto* pb = b.data();
    auto* po = out.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        po[i] = static_cast<std::uint8_t>(op(pa[i], pb[i]));
    }
    return out;
}

} // namespace

BinaryMask BinaryMask::operator&(const BinaryMask& rhs) const {
    return combine(*this, rhs, [](auto x, auto y) { return x & y; });
}
BinaryMask BinaryMask::operator|(const BinaryMask& rhs) const {
    return combine(*this, rhs, [](auto x, auto y) { return x | y; });
}
BinaryMask BinaryMask::operator^(const BinaryMask& rhs) const {
    return combine(*this, rhs, [](auto x, auto y) { return x ^ y; });
}
BinaryMask BinaryMask::operator~() const {
    BinaryMask out(height_, width_);
    for (std::size_t i = 0; i < values_.size(); ++i) {
        out.values_[i] = static_cast<std::uint8_t>(1 - values_[i]);
    }
    return out;
}

void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeMismatch(std::string(what) + ": shape " + std::to_string(a.height()) + "x" +
                            std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                            std::to_string(b.width()));
    }
}

LabelMap::LabelMap(int height, int width, std::vector<std::uint8_t> labels)
    : height_(height), width_(width), labels_(std::move(labels)) {
    if (height < 0 || width < 0 || labels_.size() != static_cast<std::size_t>(height) * width) {
        throw ShapeMismatch("label count does not match dimensions");
    }
}

std::vector<int> LabelMap::classes_present() const {
    std::array<bool, 256> seen{};
    for (auto v : labels_) {
        seen[v] = true;
    }
    std::vector<int> out;
    for (int c = 1; c <= 20; ++c) {
        if (seen[static_cast<std::size_t>(c)]) {
            out.push_back(c);
        }
    }
    return out;
}

BinaryMask LabelMap::binary(int class_id) const {
    BinaryMask out(height_, width_);
    auto* po = out.data();
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        po[i] = labels_[i] == class_id ? 1 : 0;
    }
    return out;
}

PackedMask::PackedMask(const BinaryMask& mask) : height_(mask.height()), width_(mask.width()) {
    words_.assign((mask.size() + 63) / 64, 0);
    const auto* p = mask.data();
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (p[i]) {
            words_[i / 64] |= std::uint64_t{1} << (i % 64);
        }
    }
}

BinaryMask PackedMask::unpack() const {
    BinaryMask out(height_, width_);
    auto* p = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        p[i] = static_cast<std::uint8_t>((words_[i / 64] >> (i % 64)) & 1U);
    }
    return out;
}

} // namespace ifse
