#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "ifse/clicks.hpp"
#include "ifse/dataset.hpp"
#include "ifse/mask.hpp"
#include "ifse/model/ifsenet.hpp"

namespace ifse::train {

struct TrainConfig {
    int epochs = 100;
    double lr = 0.0025;
    int batch = 4;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double poly_power = 0.9;
    double carry_prob = 0.9;
    int k_shots = 1;
    std::uint64_t seed = 0;
    bool augment = true;
    clicks::TrainingClickConfig clicks{};

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// base * (1 - iter / total_iters)^power.
double poly_lr(long iter, long total_iters, double base, double power);

using StateKey = std::pair<std::string, int>;  // (image id, class id)

struct StoredQuery {
    PackedMask seg;
};

struct StoredSupport {
    PackedMask seg;
    PackedMask pos;
    PackedMask neg;
};

/// Predictions and click masks carried between visits, at source resolution.
/// An absent key means blank.
struct IterationState {
    std::map<StateKey, StoredQuery> queries;
    std::map<StateKey, StoredSupport> supports;
};

/// One sampled query plus its k supports after one training step.
struct StepRecord {
    std::string query_id;
    int class_chosen = 0;
    std::vector<std::string> support_ids;
    bool query_carried = false;
    std::vector<bool> support_carried;
    std::vector<clicks::TrainingClick> new_clicks;  // one per support, when one was possible
    /// Carried masks that entered the forward pass (source resolution, after the coin).
    BinaryMask query_prev;
    std::vector<BinaryMask> support_prev;
    torch::Tensor query_logits;  // detached [2,patch,patch]
    double loss = 0.0;
};

class Trainer {
public:
    /// `dataset` is the full index; query images are restricted to those with at
    /// least one training class of the fold.
    Trainer(model::IfseNet net, data::Dataset dataset, data::FoldSpec fold, TrainConfig config);

    model::IfseNet& net() { return net_; }
    const IterationState& state() const { return state_; }
    IterationState& state() { return state_; }
    const data::Dataset& train_images() const { return train_images_; }
    std::mt19937_64& rng() { return rng_; }

    /// The ten steps for one query image. Runs forward and backward (gradients
    /// scaled by `grad_scale` accumulate) and writes predictions back into the
    /// state. Does not touch the optimizer.
    StepRecord sample_step(const data::ImageRecord& query, double grad_scale = 1.0);

    /// zero_grad, sample_step for each record (loss / batch), SGD update at `lr`.
    std::vector<StepRecord> batch_step(const std::vector<const data::ImageRecord*>& batch, double lr);

    /// The carry/reset coin: true with probability carry_prob. sample_step flips
    /// it once for the query and once per support, in that order.
    bool flip_carry();

    /// Iterations per epoch: ceil(train images / batch).
    long iterations_per_epoch() const;

    struct LogEntry {
        long step;
        int epoch;
        double loss;
        double lr;
    };

    /// Runs config.epochs passes over the training images, writing
    /// epoch_NNN.ckpt after every epoch (epoch_000 is the initialization),
    /// final.ckpt, and train_log.jsonl into out_dir. Returns the final checkpoint path.
    std::filesystem::path train(const std::filesystem::path& out_dir,
                                const std::function<void(const LogEntry&)>& on_step = {});

private:
    model::IfseNet net_;
    data::Dataset dataset_;
    data::Dataset train_images_;
    data::FoldSpec fold_;
    TrainConfig config_;
    IterationState state_;
    std::mt19937_64 rng_;
    std::unique_ptr<torch::optim::SGD> optimizer_;
    long global_step_ = 0;
};

} // namespace ifse::train
