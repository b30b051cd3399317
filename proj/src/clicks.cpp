#include "ifse/clicks.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include <nlohmann/json.hpp>

namespace ifse::clicks {

std::string to_string(Polarity p) {
    return p == Polarity::positive ? "positive" : "negative";
}

Polarity polarity_from_string(const std::string& s) {
    if (s == "positive" || s == "pos" || s == "+") {
        return Polarity::positive;
    }
    if (s == "negative" || s == "neg" || s == "-") {
        return Polarity::negative;
    }
    throw InvalidArgument("unknown click polarity '" + s + "'");
}

std::string to_string(Region r) {
    switch (r) {
    case Region::gt_foreground: return "gt_foreground";
    case Region::false_negative: return "false_negative";
    case Region::gt_background: return "gt_background";
    case Region::other_class_objects: return "other_class_objects";
    case Region::fg_border: return "fg_border";
    case Region::false_positive: return "false_positive";
    }
    return "unknown";
}

void RegionWeights::validate() const {
    const std::array<double, 2> pos{positive.gt_foreground, positive.false_negative};
    const std::array<double, 4> neg{negative.gt_background, negative.other_class_objects,
                                    negative.fg_border, negative.false_positive};
    auto check = [](auto const& ws, const char* name) {
        double sum = 0.0;
        for (double w : ws) {
            if (!(w >= 0.0)) {
                throw InvalidArgument(std::string(name) + " region weights must be non-negative");
            }
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw InvalidArgument(std::string(name) + " region weights must sum to 1");
        }
    };
    check(pos, "positive");
    check(neg, "negative");
}

BinaryMask fg_border(const BinaryMask& gt, int width) {
    if (width < 1) {
        throw InvalidArgument("border width must be >= 1");
    }
    const int h = gt.height();
    const int w = gt.width();
    // Separable square dilation: rows first, then columns.
    BinaryMask rows(h, w);
    for (int r = 0; r < h; ++r) {
        int last = std::numeric_limits<int>::min() / 2;
        for (int c = 0; c < w; ++c) {
            if (gt(r, c)) last = c;
            if (c - last <= width) rows.set(r, c, true);
        }
        last = std::numeric_limits<int>::max() / 2;
        for (int c = w - 1; c >= 0; --c) {
            if (gt(r, c)) last = c;
            if (last - c <= width) rows.set(r, c, true);
        }
    }
    BinaryMask dilated(h, w);
    for (int c = 0; c < w; ++c) {
        int last = std::numeric_limits<int>::min() / 2;
        for (int r = 0; r < h; ++r) {
            if (rows(r, c)) last = r;
            if (r - last <= width) dilated.set(r, c, true);
        }
        last = std::numeric_limits<int>::max() / 2;
        for (int r = h - 1; r >= 0; --r) {
            if (rows(r, c)) last = r;
            if (last - r <= width) dilated.set(r, c, true);
        }
    }
    return dilated & ~gt;
}

namespace {

struct Candidate {
    Region region;
    double weight;
    BinaryMask mask;
    std::size_t count;
};

Click pick_pixel(const BinaryMask& mask, std::size_t count, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, count - 1);
    std::size_t target = pick(rng);
    const auto* p = mask.data();
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (p[i] && target-- == 0) {
            return Click{static_cast<int>(i / mask.width()), static_cast<int>(i % mask.width()),
                         Polarity::positive, 0};
        }
    }
    throw Error("pick_pixel: region count out of sync");
}

std::vector<Candidate> usable(std::vector<Candidate> all) {
    std::erase_if(all, [](const Candidate& c) { return c.count == 0 || c.weight <= 0.0; });
    return all;
}

} // namespace

std::optional<TrainingClick> sample_training_click(const BinaryMask& gt, const BinaryMask& pred,
                                                   const BinaryMask& other_class,
                                                   const TrainingClickConfig& config,
                                                   std::mt19937_64& rng, int order) {
    require_same_shape(gt, pred, "sample_training_click(gt, pred)");
    require_same_shape(gt, other_class, "sample_training_click(gt, other_class)");
    config.weights.validate();

    const BinaryMask background = ~gt;
    const auto& pw = config.weights.positive;
    const auto& nw = config.weights.negative;

    auto make = [](Region r, double w, BinaryMask m) {
        const auto n = m.count();
        return Candidate{r, w, std::move(m), n};
    };

    auto positives = usable({
        make(Region::gt_foreground, pw.gt_foreground, gt),
        make(Region::false_negative, pw.false_negative, gt & ~pred),
    });
    auto negatives = usable({
        make(Region::gt_background, nw.gt_background, background),
        make(Region::other_class_objects, nw.other_class_objects, other_class & background),
        make(Region::fg_border, nw.fg_border, fg_border(gt, config.border_width)),
        make(Region::false_positive, nw.false_positive, pred & background),
    });

    std::bernoulli_distribution coin(0.5);
    bool positive = coin(rng);
    if (positive && positives.empty()) positive = false;
    if (!positive && negatives.empty()) positive = true;
    const auto& pool = positive ? positives : negatives;
    if (pool.empty()) {
        return std::nullopt;
    }

    std::vector<double> weights;
    weights.reserve(pool.size());
    for (const auto& c : pool) weights.push_back(c.weight);
    std::discrete_distribution<std::size_t> choose(weights.begin(), weights.end());
    const auto& chosen = pool[choose(rng)];

    Click click = pick_pixel(chosen.mask, chosen.count, rng);
    click.polarity = positive ? Polarity::positive : Polarity::negative;
    click.order = order;
    return TrainingClick{click, chosen.region};
}

std::vector<int> label_components(const BinaryMask& mask, int& component_count) {
    const int h = mask.height();
    const int w = mask.width();
    std::vector<int> labels(mask.size(), 0);
    std::vector<int> stack;
    component_count = 0;
    for (int start = 0; start < h * w; ++start) {
        if (!mask.data()[start] || labels[start] != 0) continue;
        const int label = ++component_count;
        labels[start] = label;
        stack.push_back(start);
        while (!stack.empty()) {
            const int idx = stack.back();
            stack.pop_back();
            const int r = idx / w;
            const int c = idx % w;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    const int nr = r + dr;
                    const int nc = c + dc;
                    if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                    const int n = nr * w + nc;
                    if (mask.data()[n] && labels[n] == 0) {
                        labels[n] = label;
                        stack.push_back(n);
                    }
                }
            }
        }
    }
    return labels;
}

namespace {

// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
    const int n = static_cast<int>(f.size());
    std::vector<int> v(n);
    std::vector<double> z(n + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s = 0;
        while (true) {
            const int p = v[k];
            s = ((f[q] + q * static_cast<double>(q)) - (f[p] + p * static_cast<double>(p))) /
                (2.0 * (q - p));
            if (s <= z[k]) {
                --k;
                continue;
            }
            break;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    d.assign(n, 0.0);
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double diff = q - v[k];
        d[q] = diff * diff + f[v[k]];
    }
}

} // namespace

std::vector<long long> squared_distance_transform(const BinaryMask& region) {
    const int h = region.height();
    const int w = region.width();
    const int ph = h + 2;
    const int pw = w + 2;
    constexpr double kInf = 1e20;
    std::vector<double> grid(static_cast<std::size_t>(ph) * pw, 0.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (region(r, c)) grid[static_cast<std::size_t>(r + 1) * pw + c + 1] = kInf;

    std::vector<double> f;
    std::vector<double> d;
    for (int c = 0; c < pw; ++c) {
        f.resize(ph);
        for (int r = 0; r < ph; ++r) f[r] = grid[static_cast<std::size_t>(r) * pw + c];
        edt_1d(f, d);
        for (int r = 0; r < ph; ++r) grid[static_cast<std::size_t>(r) * pw + c] = d[r];
    }
    for (int r = 0; r < ph; ++r) {
        f.assign(grid.begin() + static_cast<std::ptrdiff_t>(r) * pw,
                 grid.begin() + static_cast<std::ptrdiff_t>(r + 1) * pw);
        edt_1d(f, d);
        std::copy(d.begin(), d.end(), grid.begin() + static_cast<std::ptrdiff_t>(r) * pw);
    }

    std::vector<long long> out(region.size(), 0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (region(r, c))
                out[static_cast<std::size_t>(r) * w + c] =
                    std::llround(grid[static_cast<std::size_t>(r + 1) * pw + c + 1]);
    return out;
}

std::optional<ErrorRegion> largest_error_region(const BinaryMask& gt, const BinaryMask& pred) {
    require_same_shape(gt, pred, "largest_error_region");
    const BinaryMask error = gt ^ pred;
    int n = 0;
    const auto labels = label_components(error, n);
    if (n == 0) {
        return std::nullopt;
    }
    std::vector<std::size_t> sizes(static_cast<std::size_t>(n) + 1, 0);
    for (int l : labels) {
        if (l) ++sizes[static_cast<std::size_t>(l)];
    }
    // Labels follow raster order of first pixels, so the first maximum wins ties.
    int best = 1;
    for (int l = 2; l <= n; ++l) {
        if (sizes[static_cast<std::size_t>(l)] > sizes[static_cast<std::size_t>(best)]) best = l;
    }

    ErrorRegion out;
    out.region = BinaryMask(gt.height(), gt.width());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out.region.data()[i] = labels[i] == best ? 1 : 0;
    }
    const auto dist = squared_distance_transform(out.region);
    std::size_t arg = 0;
    long long best_d = -1;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        if (out.region.data()[i] && dist[i] > best_d) {
            best_d = dist[i];
            arg = i;
        }
    }
    out.center_row = static_cast<int>(arg / gt.width());
    out.center_col = static_cast<int>(arg % gt.width());
    out.is_false_negative = gt(out.center_row, out.center_col);
    return out;
}

std::optional<Click> sample_validation_click(const BinaryMask& gt, const BinaryMask& pred,
                                             int order) {
    auto region = largest_error_region(gt, pred);
    if (!region) {
        return std::nullopt;
    }
    return Click{region->center_row, region->center_col,
                 region->is_false_negative ? Polarity::positive : Polarity::negative, order};
}

void stamp_click(ClickMasks& masks, const Click& click, int radius) {
    BinaryMask& target = click.polarity == Polarity::positive ? masks.positive : masks.negative;
    if (!target.in_bounds(click.row, click.col)) {
        throw InvalidArgument("click (" + std::to_string(click.row) + ", " +
                              std::to_string(click.col) + ") outside " +
                              std::to_string(target.height()) + "x" +
                              std::to_string(target.width()) + " image");
    }
    if (radius < 0) {
        throw InvalidArgument("click radius must be >= 0");
    }
    const int r0 = std::max(0, click.row - radius);
    const int r1 = std::min(target.height() - 1, click.row + radius);
    const int c0 = std::max(0, click.col - radius);
    const int c1 = std::min(target.width() - 1, click.col + radius);
    for (int r = r0; r <= r1; ++r) {
        for (int c = c0; c <= c1; ++c) {
            const int dr = r - click.row;
            const int dc = c - click.col;
            if (dr * dr + dc * dc <= radius * radius) target.set(r, c, true);
        }
    }
}

ClickMasks encode_clicks(const std::vector<Click>& history, int height, int width, int radius) {
    ClickMasks masks{BinaryMask(height, width), BinaryMask(height, width)};
    for (const auto& click : history) {
        stamp_click(masks, click, radius);
    }
    return masks;
}

void write_click_log(std::ostream& out, const std::vector<ClickRecord>& records) {
    for (const auto& rec : records) {
        nlohmann::json j{{"row", rec.click.row},
                         {"col", rec.click.col},
                         {"polarity", to_string(rec.click.polarity)},
                         {"order", rec.click.order}};
        if (!rec.image_id.empty()) j["image_id"] = rec.image_id;
        out << j.dump() << '\n';
    }
}

std::vector<ClickRecord> read_click_log(std::istream& in) {
    std::vector<ClickRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ClickRecord rec;
            rec.image_id = j.value("image_id", std::string{});
            rec.click.row = j.at("row").get<int>();
            rec.click.col = j.at("col").get<int>();
            rec.click.polarity = polarity_from_string(j.at("polarity").get<std::string>());
            rec.click.order = j.at("order").get<int>();
            out.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw InvalidArgument("click log line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

} // namespace ifse::clicks
