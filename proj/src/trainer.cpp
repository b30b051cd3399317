#include "ifse/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "ifse/error.hpp"
#include "ifse/model/checkpoint.hpp"

namespace ifse::train {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
    if (!(lr > 0)) throw InvalidArgument("lr must be > 0");
    if (batch < 1) throw InvalidArgument("batch must be >= 1");
    if (carry_prob < 0 || carry_prob > 1) throw InvalidArgument("carry_prob must lie in [0, 1]");
    if (k_shots < 1) throw InvalidArgument("k_shots must be >= 1");
    if (clicks.border_width < 1) throw InvalidArgument("border width must be >= 1");
    clicks.weights.validate();
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"epochs", c.epochs},         {"lr", c.lr},
             {"batch", c.batch},           {"momentum", c.momentum},
             {"weight_decay", c.weight_decay}, {"poly_power", c.poly_power},
             {"carry_prob", c.carry_prob}, {"k_shots", c.k_shots},
             {"seed", c.seed},             {"augment", c.augment},
             {"border_width", c.clicks.border_width}};
}

void from_json(const json& j, TrainConfig& c) {
    TrainConfig d;
    c.epochs = j.value("epochs", d.epochs);
    c.lr = j.value("lr", d.lr);
    c.batch = j.value("batch", d.batch);
    c.momentum = j.value("momentum", d.momentum);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.poly_power = j.value("poly_power", d.poly_power);
    c.carry_prob = j.value("carry_prob", d.carry_prob);
    c.k_shots = j.value("k_shots", d.k_shots);
    c.seed = j.value("seed", d.seed);
    c.augment = j.value("augment", d.augment);
    c.clicks.border_width = j.value("border_width", d.clicks.border_width);
}

double poly_lr(long iter, long total_iters, double base, double power) {
    if (total_iters <= 0) throw InvalidArgument("poly_lr needs total_iters > 0");
    if (iter < 0 || iter > total_iters) throw InvalidArgument("poly_lr needs 0 <= iter <= total_iters");
    return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total_iters), power);
}

Trainer::Trainer(model::IfseNet net, data::Dataset dataset, data::FoldSpec fold, TrainConfig config)
    : net_(std::move(net)),
      dataset_(std::move(dataset)),
      train_images_(dataset_.restricted_to(fold.train_classes)),
      fold_(std::move(fold)),
      config_(config),
      rng_(config.seed) {
    config_.validate();
    if (train_images_.records().empty()) throw InvalidArgument("no training images contain a training class");
    optimizer_ = std::make_unique<torch::optim::SGD>(
        net_->trainable_parameters(),
        torch::optim::SGDOptions(config_.lr).momentum(config_.momentum).weight_decay(config_.weight_decay));
}

bool Trainer::flip_carry() {
    return std::bernoulli_distribution(config_.carry_prob)(rng_);
}

long Trainer::iterations_per_epoch() const {
    const auto n = static_cast<long>(train_images_.records().size());
    return (n + config_.batch - 1) / config_.batch;
}

namespace {

BinaryMask stored_or_blank(const PackedMask* m, int h, int w) {
    return m ? m->unpack() : BinaryMask(h, w);
}

struct PatchInputs {
    torch::Tensor image;
    torch::Tensor gt;
    torch::Tensor prev;
    torch::Tensor pos;
    torch::Tensor neg;
};

} // namespace

StepRecord Trainer::sample_step(const data::ImageRecord& query, double grad_scale) {
    const auto& mcfg = net_->config();
    const int patch = mcfg.input_patch;
    const data::AugmentRanges ranges = config_.augment ? data::AugmentRanges{} : data::AugmentRanges{0.0, 0.0};
    StepRecord rec;
    rec.query_id = query.id;

    // Step 2: class_chosen among the query's training classes.
    std::vector<int> candidates;
    for (int c : query.classes_present)
        if (fold_.train_classes.count(c)) candidates.push_back(c);
    if (candidates.empty()) throw InvalidArgument("query '" + query.id + "' has no training class");
    const int cls = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng_)];
    if (fold_.val_classes.count(cls)) {
        throw std::logic_error("validation class " + std::to_string(cls) + " chosen during training");
    }
    rec.class_chosen = cls;

    // Steps 3-4: query mask and carried query prediction.
    const auto q_sample = dataset_.load(query);
    const BinaryMask q_gt = data::binarize_mask(query, q_sample.labels, cls);
    const int qh = q_gt.height(), qw = q_gt.width();
    const StateKey q_key{query.id, cls};
    rec.query_carried = flip_carry();
    {
        auto it = state_.queries.find(q_key);
        rec.query_prev = stored_or_blank(rec.query_carried && it != state_.queries.end() ? &it->second.seg : nullptr,
                                         qh, qw);
    }

    // Steps 5-8: supports, their masks, carried predictions and click masks.
    const auto supports = data::sample_support(dataset_.with_class(cls), cls, config_.k_shots, {query.id}, rng_);
    std::vector<data::Sample> s_samples;
    std::vector<BinaryMask> s_gt;
    std::vector<clicks::ClickMasks> s_clicks;
    for (const auto* s : supports) {
        rec.support_ids.push_back(s->id);
        s_samples.push_back(dataset_.load(*s));
        s_gt.push_back(data::binarize_mask(*s, s_samples.back().labels, cls));
        const int h = s_gt.back().height(), w = s_gt.back().width();
        const bool carried = flip_carry();
        rec.support_carried.push_back(carried);
        auto it = state_.supports.find({s->id, cls});
        const StoredSupport* st = carried && it != state_.supports.end() ? &it->second : nullptr;
        rec.support_prev.push_back(stored_or_blank(st ? &st->seg : nullptr, h, w));
        s_clicks.push_back({stored_or_blank(st ? &st->pos : nullptr, h, w), stored_or_blank(st ? &st->neg : nullptr, h, w)});
    }

    // Step 9a: one new simulated click per support image.
    for (std::size_t i = 0; i < supports.size(); ++i) {
        const auto other = data::other_class_mask(s_samples[i].labels, cls) & ~s_gt[i];
        auto click = clicks::sample_training_click(s_gt[i], rec.support_prev[i], other, config_.clicks, rng_);
        if (click) {
            clicks::stamp_click(s_clicks[i], click->click, mcfg.click_disk_radius);
            rec.new_clicks.push_back(*click);
        }
    }

    // Geometric augmentation; every mask of an image shares its image's draw.
    const auto warp = [&](const cv::Mat& image, const BinaryMask& gt, const BinaryMask& prev,
                          const clicks::ClickMasks* cm, data::AugmentDraw& draw) {
        draw = data::draw_augment(rng_, image.rows, image.cols, patch, ranges);
        PatchInputs p;
        p.image = model::image_to_tensor(data::augment_image(image, draw));
        p.gt = model::mask_to_tensor(data::augment_mask(gt, draw));
        p.prev = model::mask_to_tensor(data::augment_mask(prev, draw));
        if (cm) {
            p.pos = model::mask_to_tensor(data::augment_mask(cm->positive, draw));
            p.neg = model::mask_to_tensor(data::augment_mask(cm->negative, draw));
        }
        return p;
    };
    std::vector<data::AugmentDraw> s_draws(supports.size());
    std::vector<PatchInputs> s_inputs;
    for (std::size_t i = 0; i < supports.size(); ++i) {
        s_inputs.push_back(warp(s_samples[i].image, s_gt[i], rec.support_prev[i], &s_clicks[i], s_draws[i]));
    }
    data::AugmentDraw q_draw;
    const auto q_in = warp(q_sample.image, q_gt, rec.query_prev, nullptr, q_draw);

    // Step 9b: forward, loss, backward. Ground truth enters only the loss.
    std::vector<model::SupportState> states;
    std::vector<torch::Tensor> s_logits, s_targets;
    for (const auto& in : s_inputs) {
        states.push_back(net_->run_support(net_->extract_features(in.image), {in.pos, in.neg, in.prev}));
        s_logits.push_back(states.back().logits);
        s_targets.push_back(in.gt);
    }
    const auto qf = net_->extract_features(q_in.image);
    const auto q_out = net_->query_forward(qf, net_->bundle_for_query(states, qf), q_in.prev);
    const auto loss = model::compute_loss(s_logits, s_targets, q_out.intermediate, q_out.final_logits, q_in.gt);
    (loss * grad_scale).backward();
    rec.loss = loss.item<double>();
    rec.query_logits = q_out.final_logits.detach();

    // Step 10: store fresh predictions and click masks at source resolution.
    {
        BinaryMask q_store = rec.query_prev;
        data::restore_mask(model::logits_to_mask(q_out.final_logits), q_draw, q_store);
        state_.queries[q_key] = {PackedMask(q_store)};
    }
    for (std::size_t i = 0; i < supports.size(); ++i) {
        BinaryMask s_store = rec.support_prev[i];
        data::restore_mask(model::logits_to_mask(s_logits[i]), s_draws[i], s_store);
        state_.supports[{supports[i]->id, cls}] = {PackedMask(s_store), PackedMask(s_clicks[i].positive),
                                                   PackedMask(s_clicks[i].negative)};
    }
    return rec;
}

std::vector<StepRecord> Trainer::batch_step(const std::vector<const data::ImageRecord*>& batch, double lr) {
    if (batch.empty()) throw InvalidArgument("empty batch");
    net_->train();
    optimizer_->zero_grad();
    std::vector<StepRecord> out;
    for (const auto* r : batch) out.push_back(sample_step(*r, 1.0 / static_cast<double>(batch.size())));
    for (auto& group : optimizer_->param_groups()) {
        static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
    }
    optimizer_->step();
    return out;
}

fs::path Trainer::train(const fs::path& out_dir, const std::function<void(const LogEntry&)>& on_step) {
    fs::create_directories(out_dir);
    const auto meta = [&](int epoch) {
        return json{{"epoch", epoch}, {"fold", fold_.fold}, {"train", config_}, {"step", global_step_}};
    };
    char name[32];
    model::save_checkpoint(net_, out_dir / "epoch_000.ckpt", meta(0));

    std::ofstream log(out_dir / "train_log.jsonl", std::ios::app);
    if (!log) throw IoError("cannot write " + (out_dir / "train_log.jsonl").string());
    const long total = static_cast<long>(config_.epochs) * iterations_per_epoch();
    const auto& records = train_images_.records();
    std::vector<std::size_t> order(records.size());

    for (int epoch = 1; epoch <= config_.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng_);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config_.batch)) {
            std::vector<const data::ImageRecord*> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + config_.batch); ++i) {
                batch.push_back(&records[order[i]]);
            }
            const double lr = poly_lr(global_step_, total, config_.lr, config_.poly_power);
            const auto steps = batch_step(batch, lr);
            double loss = 0;
            for (const auto& s : steps) loss += s.loss;
            loss /= static_cast<double>(steps.size());
            const LogEntry entry{global_step_, epoch, loss, lr};
            log << json{{"step", entry.step}, {"epoch", epoch}, {"loss", loss}, {"lr", lr}}.dump() << "\n";
            log.flush();
            if (on_step) on_step(entry);
            ++global_step_;
        }
        std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
        model::save_checkpoint(net_, out_dir / name, meta(epoch));
    }
    const auto final_path = out_dir / "final.ckpt";
    model::save_checkpoint(net_, final_path, meta(config_.epochs));
    return final_path;
}

} // namespace ifse::train
