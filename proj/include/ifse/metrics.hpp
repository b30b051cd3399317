#pragma once

#include <span>

#include "ifse/mask.hpp"

namespace ifse::eval {

/// Number of clicks placed on each support image in one episode.
inline constexpr int kClickBudget = 20;

/// |pred & gt| / |pred | gt|; 1 when both are empty.
double iou(const BinaryMask& pred, const BinaryMask& gt);

/// First 1-based click index whose IoU reaches `threshold`, or `cap` if none does.
int noc(std::span<const double> iou_trace, double threshold, int cap = kClickBudget);

} // namespace ifse::eval
