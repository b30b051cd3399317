#include "ifse/metrics.hpp"

#include <algorithm>

namespace ifse::eval {

double iou(const BinaryMask& pred, const BinaryMask& gt) {
    require_same_shape(pred, gt, "iou");
    std::size_t inter = 0;
    std::size_t uni = 0;
    const auto* p = pred.data();
    const auto* g = gt.data();
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += p[i] & g[i];
        uni += p[i] | g[i];
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

int noc(std::span<const double> iou_trace, double threshold, int cap) {
    const auto limit = std::min<std::size_t>(iou_trace.size(), static_cast<std::size_t>(cap));
    for (std::size_t t = 0; t < limit; ++t) {
        if (iou_trace[t] >= threshold) return static_cast<int>(t) + 1;
    }
    return cap;
}

} // namespace ifse::eval
