#include "ifse/evaluator.hpp"

#include <cstdio>
#include <fstream>
#include <random>

#include "ifse/error.hpp"

namespace ifse::eval {

namespace fs = std::filesystem;
using nlohmann::json;

EpisodeResult run_episode(const data::EpisodeSpec& spec, const data::Dataset& dataset,
                          const PredictorFactory& make_predictor, const EpisodeOptions& options) {
    data::validate_episode(spec, dataset.by_id());

    std::vector<interactive::ImageEntry> images;
    for (const auto* ids : {&spec.support_ids, &spec.query_ids}) {
        for (const auto& id : *ids) {
            const auto& rec = dataset.record(id);
            auto sample = dataset.load(rec);
            images.push_back({id, sample.image, data::binarize_mask(rec, sample.labels, spec.class_chosen)});
        }
    }
    interactive::InteractiveSession session(std::move(images), spec.support_ids, options.input_patch,
                                            options.click_radius);
    auto predictor = make_predictor();

    EpisodeResult result;
    result.spec = spec;
    result.support_iou.resize(spec.support_ids.size());
    result.query_iou.resize(spec.query_ids.size());

    for (int t = 0; t < kClickBudget; ++t) {
        for (const auto& id : spec.support_ids) {
            const auto& e = session.entry(id);
            if (e.frozen) continue;
            const auto click = clicks::sample_validation_click(*e.image.gt, e.mask);
            if (!click) {
                session.freeze(id);
                continue;
            }
            session.add_click(id, click->row, click->col, click->polarity);
        }
        session.run_forward(*predictor);

        std::vector<BinaryMask> round_masks;
        for (std::size_t i = 0; i < spec.support_ids.size(); ++i) {
            const auto& e = session.entry(spec.support_ids[i]);
            result.support_iou[i][t] = iou(e.mask, *e.image.gt);
            if (options.record_masks) round_masks.push_back(e.mask);
        }
        for (std::size_t i = 0; i < spec.query_ids.size(); ++i) {
            const auto& e = session.entry(spec.query_ids[i]);
            if (!e.history.empty()) throw std::logic_error("a query image received a click");
            result.query_iou[i][t] = iou(e.mask, *e.image.gt);
            if (options.record_masks) round_masks.push_back(e.mask);
        }
        if (options.record_masks) result.masks.push_back(std::move(round_masks));
    }
    for (const auto& id : spec.support_ids) result.click_log.push_back(session.entry(id).history);
    return result;
}

std::uint64_t episode_seed(std::uint64_t seed, int class_chosen, int episode) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(class_chosen), static_cast<std::uint32_t>(episode)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

data::EpisodeSpec draw_episode(const data::Dataset& dataset, int class_chosen, int shots, int queries,
                               std::uint64_t seed) {
    if (shots < 1 || queries < 0) throw InvalidArgument("episodes need shots >= 1 and queries >= 0");
    std::mt19937_64 rng(seed);
    const auto picked = data::sample_support(dataset.with_class(class_chosen), class_chosen, shots + queries, {}, rng);
    data::EpisodeSpec spec;
    spec.class_chosen = class_chosen;
    spec.seed = seed;
    for (int i = 0; i < shots + queries; ++i) {
        (i < shots ? spec.support_ids : spec.query_ids).push_back(picked[static_cast<std::size_t>(i)]->id);
    }
    data::validate_episode(spec, dataset.by_id());
    return spec;
}

MetricReport aggregate(int fold, const std::vector<int>& classes, const std::vector<EpisodeResult>& results) {
    MetricReport r;
    r.fold = fold;
    r.classes = classes;
    r.episodes = static_cast<int>(results.size());

    std::map<int, Trace> query_sum;
    std::map<int, int> query_count;
    Trace support_sum{};
    int support_count = 0;
    double noc85_sum = 0, noc90_sum = 0;
    for (const auto& ep : results) {
        const int c = ep.spec.class_chosen;
        ++r.episodes_per_class[c];
        for (const auto& trace : ep.query_iou) {
            for (int t = 0; t < kClickBudget; ++t) query_sum[c][t] += trace[t];
            ++query_count[c];
        }
        for (const auto& trace : ep.support_iou) {
            for (int t = 0; t < kClickBudget; ++t) support_sum[t] += trace[t];
            ++support_count;
            noc85_sum += noc(trace, 0.85);
            noc90_sum += noc(trace, 0.90);
        }
    }
    int classes_with_queries = 0;
    for (int c : classes) {
        if (query_count[c] == 0) continue;
        ++classes_with_queries;
        Trace mean{};
        for (int t = 0; t < kClickBudget; ++t) {
            mean[t] = query_sum[c][t] / query_count[c];
            r.class_miou[t] += mean[t];
        }
        r.per_class_query_miou[c] = mean;
    }
    for (int t = 0; t < kClickBudget; ++t) {
        if (classes_with_queries) r.class_miou[t] /= classes_with_queries;
        if (support_count) r.interactive_miou[t] = support_sum[t] / support_count;
    }
    if (support_count) {
        r.noc85 = noc85_sum / support_count;
        r.noc90 = noc90_sum / support_count;
    }
    return r;
}

json report_json(const MetricReport& r) {
    json per_class = json::object();
    for (const auto& [c, trace] : r.per_class_query_miou) {
        per_class[std::to_string(c)] = {{"name", std::string(data::class_names()[static_cast<std::size_t>(c - 1)])},
                                        {"episodes", r.episodes_per_class.count(c) ? r.episodes_per_class.at(c) : 0},
                                        {"query_miou", trace}};
    }
    return {{"fold", r.fold},
            {"classes", r.classes},
            {"episodes", r.episodes},
            {"click_budget", kClickBudget},
            {"class_miou_at_budget", r.class_miou[kClickBudget - 1]},
            {"class_miou", r.class_miou},
            {"interactive_miou", r.interactive_miou},
            {"noc85", r.noc85},
            {"noc90", r.noc90},
            {"per_class", per_class}};
}

ValidationRun run_validation(const data::Dataset& dataset, const data::FoldSpec& fold,
                             const PredictorFactory& make_predictor, const ValidationConfig& config,
                             const EpisodeOptions& options) {
    if (config.episodes_per_class < 1) throw InvalidArgument("episodes_per_class must be >= 1");
    const auto& class_set = config.training_classes ? fold.train_classes : fold.val_classes;
    const std::vector<int> classes(class_set.begin(), class_set.end());
    ValidationRun run;
    for (int c : classes) {
        for (int e = 0; e < config.episodes_per_class; ++e) {
            const auto spec = draw_episode(dataset, c, config.shots, config.queries, episode_seed(config.seed, c, e));
            run.episodes.push_back(run_episode(spec, dataset, make_predictor, options));
        }
    }
    run.report = aggregate(fold.fold, classes, run.episodes);
    return run;
}

void write_outputs(const ValidationRun& run, const fs::path& out_dir) {
    fs::create_directories(out_dir / "clicks");
    {
        std::ofstream out(out_dir / "report.json");
        out << report_json(run.report).dump(2) << "\n";
        if (!out) throw IoError("cannot write " + (out_dir / "report.json").string());
    }
    {
        std::ofstream out(out_dir / "curves.csv");
        out << "clicks,class_miou,interactive_miou";
        for (const auto& [c, _] : run.report.per_class_query_miou) out << ",query_miou_class_" << c;
        out << "\n";
        for (int t = 0; t < kClickBudget; ++t) {
            out << (t + 1) << "," << run.report.class_miou[t] << "," << run.report.interactive_miou[t];
            for (const auto& [c, trace] : run.report.per_class_query_miou) out << "," << trace[t];
            out << "\n";
        }
    }
    for (std::size_t e = 0; e < run.episodes.size(); ++e) {
        const auto& ep = run.episodes[e];
        std::vector<clicks::ClickRecord> records;
        for (std::size_t i = 0; i < ep.click_log.size(); ++i)
            for (const auto& c : ep.click_log[i]) records.push_back({ep.spec.support_ids[i], c});
        char name[64];
        std::snprintf(name, sizeof(name), "episode_%05zu.jsonl", e);
        std::ofstream out(out_dir / "clicks" / name);
        clicks::write_click_log(out, records);
    }
}

} // namespace ifse::eval
