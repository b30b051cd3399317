#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "ifse/clicks.hpp"
#include "ifse/dataset.hpp"
#include "ifse/metrics.hpp"
#include "ifse/session.hpp"

namespace ifse::eval {

using Trace = std::array<double, kClickBudget>;

struct EpisodeResult {
    data::EpisodeSpec spec;
    std::vector<Trace> support_iou;  // s rows, entry t-1 is the IoU after click t
    std::vector<Trace> query_iou;    // q rows
    std::vector<std::vector<clicks::Click>> click_log;  // per support, source coordinates
    /// Source-resolution masks after each click round, supports then queries
    /// (filled only when requested).
    std::vector<std::vector<BinaryMask>> masks;
};

using PredictorFactory = std::function<std::unique_ptr<interactive::Predictor>()>;

struct EpisodeOptions {
    int input_patch = 512;
    int click_radius = 5;
    bool record_masks = false;
};

/// Blank state, then kClickBudget rounds of: one validation click per support
/// image that has not converged, one forward over all images, IoU of every
/// image at source resolution. A converged support receives no more clicks
/// and its mask (and IoU) is held. Query images never receive clicks.
EpisodeResult run_episode(const data::EpisodeSpec& spec, const data::Dataset& dataset,
                          const PredictorFactory& make_predictor, const EpisodeOptions& options = {});

struct ValidationConfig {
    int shots = 1;
    int queries = 5;
    int episodes_per_class = 100;
    std::uint64_t seed = 0;
    /// Evaluate on the fold's training classes instead of its validation classes.
    bool training_classes = false;
};

/// Support and query records for one episode: uniform without replacement
/// from the records that contain class_chosen. Episodes draw independently.
data::EpisodeSpec draw_episode(const data::Dataset& dataset, int class_chosen, int shots, int queries,
                               std::uint64_t seed);

/// Per-episode seed derived from the run seed, the class and the episode index.
std::uint64_t episode_seed(std::uint64_t seed, int class_chosen, int episode);

struct MetricReport {
    int fold = 0;
    std::vector<int> classes;
    std::map<int, int> episodes_per_class;
    /// Mean over classes of the mean query IoU within the class, per click count.
    Trace class_miou{};
    std::map<int, Trace> per_class_query_miou;
    /// Mean support IoU over every support image of every episode, per click count.
    Trace interactive_miou{};
    double noc85 = 0.0;
    double noc90 = 0.0;
    int episodes = 0;
};

MetricReport aggregate(int fold, const std::vector<int>& classes, const std::vector<EpisodeResult>& results);

nlohmann::json report_json(const MetricReport& report);

struct ValidationRun {
    MetricReport report;
    std::vector<EpisodeResult> episodes;
};

ValidationRun run_validation(const data::Dataset& dataset, const data::FoldSpec& fold,
                             const PredictorFactory& make_predictor, const ValidationConfig& config,
                             const EpisodeOptions& options = {});

/// report.json, curves.csv (t, class mIoU, interactive mIoU, per-class query mIoU)
/// and clicks/episode_NNNNN.jsonl (click-log format, image_id set).
void write_outputs(const ValidationRun& run, const std::filesystem::path& out_dir);

} // namespace ifse::eval
