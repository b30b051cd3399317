#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>

#include "ifse/error.hpp"
#include "ifse/model/checkpoint.hpp"
#include "ifse/trainer.hpp"
#include "synthetic.hpp"

using namespace ifse;
using namespace ifse::train;
using ifse::testing::make_corpus;
using ifse::testing::TempDir;

namespace {

// Fold 0 validates on classes 1..5 and trains on 6..20.
const data::FoldSpec kFold = data::fold_split(0);

model::IfseNet tiny_net(std::uint64_t seed = 3, int channels = 16) {
    return model::make_network(model::ModelConfig::tiny(channels, {8, 4}, 64), seed);
}

TrainConfig quick_config(std::uint64_t seed = 11) {
    TrainConfig c;
    c.epochs = 1;
    c.batch = 2;
    c.seed = seed;
    return c;
}

std::uint64_t backbone_hash(model::IfseNet& net) {
    std::uint64_t h = 1469598103934665603ull;
    const auto mix = [&](const torch::Tensor& t) {
        const auto c = t.detach().contiguous().to(torch::kFloat32);
        const auto* p = static_cast<const std::uint8_t*>(c.data_ptr());
        for (std::size_t i = 0; i < static_cast<std::size_t>(c.numel()) * sizeof(float); ++i) {
            h = (h ^ p[i]) * 1099511628211ull;
        }
    };
    for (const auto& p : net->backbone->named_parameters()) mix(p.value());
    for (const auto& b : net->backbone->named_buffers()) mix(b.value());
    return h;
}

std::vector<const data::ImageRecord*> first_records(const data::Dataset& d, std::size_t n) {
    std::vector<const data::ImageRecord*> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(&d.records()[i]);
    return out;
}

} // namespace

TEST_CASE("poly_lr endpoints and midpoint" * doctest::test_suite("regime")) {
    CHECK(poly_lr(0, 1000, 0.0025, 0.9) == 0.0025);
    CHECK(poly_lr(1000, 1000, 0.0025, 0.9) == 0.0);
    CHECK(poly_lr(500, 1000, 1.0, 0.9) == doctest::Approx(std::pow(0.5, 0.9)).epsilon(1e-15));
    double prev = 1.0;
    for (long i = 1; i <= 100; ++i) {
        const double lr = poly_lr(i, 100, 1.0, 0.9);
        CHECK(lr < prev);
        prev = lr;
    }
    CHECK_THROWS_AS(poly_lr(0, 0, 1.0, 0.9), InvalidArgument);
    CHECK_THROWS_AS(poly_lr(101, 100, 1.0, 0.9), InvalidArgument);
    CHECK_THROWS_AS(poly_lr(-1, 100, 1.0, 0.9), InvalidArgument);
}

TEST_CASE("carry coin lands on carry 0.9 and reset 0.1 over 10^4 flips" * doctest::test_suite("regime")) {
    auto corpus = make_corpus(4, {6}, 72, 80, 1);
    Trainer trainer(tiny_net(), corpus.dataset, kFold, quick_config());
    int carried = 0;
    for (int i = 0; i < 10000; ++i) carried += trainer.flip_carry();
    const double carry = carried / 10000.0;
    CHECK(std::abs(carry - 0.9) <= 0.01);
    CHECK(std::abs((1.0 - carry) - 0.1) <= 0.01);
}

TEST_CASE("training state starts blank and is carried between visits") {
    auto corpus = make_corpus(2, {6}, 72, 80, 2);
    const auto& query = corpus.dataset.records()[0];

    SUBCASE("carry_prob 1: the second visit sees the stored prediction and clicks") {
        auto cfg = quick_config();
        cfg.carry_prob = 1.0;
        Trainer trainer(tiny_net(), corpus.dataset, kFold, cfg);
        const auto first = trainer.sample_step(query);
        CHECK(first.class_chosen == 6);
        CHECK(first.query_prev.count() == 0);
        REQUIRE(first.support_prev.size() == 1);
        CHECK(first.support_prev[0].count() == 0);
        CHECK(first.query_carried);

        const StateKey qk{query.id, 6}, sk{first.support_ids[0], 6};
        REQUIRE(trainer.state().queries.count(qk));
        REQUIRE(trainer.state().supports.count(sk));
        const auto stored_query = trainer.state().queries.at(qk).seg.unpack();
        const auto stored_support = trainer.state().supports.at(sk);
        const auto clicks_before = stored_support.pos.unpack().count() + stored_support.neg.unpack().count();
        CHECK(clicks_before > 0);

        const auto second = trainer.sample_step(query);
        CHECK(second.query_prev == stored_query);
        CHECK(second.support_prev[0] == stored_support.seg.unpack());
        const auto& after = trainer.state().supports.at(sk);
        CHECK(after.pos.unpack().count() + after.neg.unpack().count() >= clicks_before);
        CHECK((after.pos.unpack() & stored_support.pos.unpack()) == stored_support.pos.unpack());
    }
    SUBCASE("carry_prob 0: every visit starts blank") {
        auto cfg = quick_config();
        cfg.carry_prob = 0.0;
        Trainer trainer(tiny_net(), corpus.dataset, kFold, cfg);
        trainer.sample_step(query);
        const auto second = trainer.sample_step(query);
        CHECK_FALSE(second.query_carried);
        CHECK(second.query_prev.count() == 0);
        CHECK(second.support_prev[0].count() == 0);
    }
}

TEST_CASE("every training step adds one click per support") {
    auto corpus = make_corpus(6, {6}, 72, 80, 4);
    auto cfg = quick_config();
    cfg.k_shots = 3;
    Trainer trainer(tiny_net(), corpus.dataset, kFold, cfg);
    for (int i = 0; i < 4; ++i) {
        const auto rec = trainer.sample_step(corpus.dataset.records()[static_cast<std::size_t>(i)]);
        CHECK(rec.support_ids.size() == 3);
        CHECK(rec.new_clicks.size() == 3);
        CHECK(std::find(rec.support_ids.begin(), rec.support_ids.end(), rec.query_id) == rec.support_ids.end());
        CHECK(std::isfinite(rec.loss));
    }
}

TEST_CASE("query classes never come from the validation split") {
    // Odd images also contain class 2, a validation class of fold 0.
    auto corpus = make_corpus(8, {6, 7}, 72, 80, 5, 2);
    Trainer trainer(tiny_net(), corpus.dataset, kFold, quick_config());
    for (const auto& r : trainer.train_images().records()) {
        for (int i = 0; i < 3; ++i) CHECK(kFold.train_classes.count(trainer.sample_step(r).class_chosen));
    }
    for (const auto& [key, _] : trainer.state().queries) CHECK_FALSE(kFold.val_classes.count(key.second));

    // Images that only hold validation classes are never queries.
    auto val_only = make_corpus(4, {1, 2}, 72, 80, 6);
    CHECK_THROWS_AS(Trainer(tiny_net(), val_only.dataset, kFold, quick_config()), InvalidArgument);
    auto mixed = make_corpus(4, {6}, 72, 80, 7);
    Trainer t2(tiny_net(), mixed.dataset, kFold, quick_config());
    const auto stray = make_corpus(1, {3}, 72, 80, 8).dataset.records()[0];
    CHECK_THROWS_AS(t2.sample_step(stray), InvalidArgument);
}

TEST_CASE("seeded training steps are reproducible") {
    auto corpus = make_corpus(6, {6, 7}, 72, 80, 9);
    const auto run = [&] {
        Trainer trainer(tiny_net(21), corpus.dataset, kFold, quick_config(77));
        std::vector<double> losses;
        for (int step = 0; step < 5; ++step) {
            const auto records = first_records(trainer.train_images(), 6);
            std::vector<const data::ImageRecord*> batch{records[static_cast<std::size_t>(step)],
                                                        records[static_cast<std::size_t>(step + 1)]};
            for (const auto& r : trainer.batch_step(batch, 0.01)) losses.push_back(r.loss);
        }
        return std::make_pair(losses, model::version_tag(trainer.net()));
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("frozen backbone is untouched by training" * doctest::test_suite("architecture")) {
    auto corpus = make_corpus(6, {6, 7}, 72, 80, 10);
    Trainer trainer(tiny_net(), corpus.dataset, kFold, quick_config());
    const auto before = backbone_hash(trainer.net());
    const auto reduce_before = trainer.net()->reduce->weight.clone();
    const auto records = first_records(trainer.train_images(), 6);
    for (int step = 0; step < 10; ++step) {
        trainer.batch_step({records[static_cast<std::size_t>(step % 6)]}, 0.01);
    }
    CHECK(backbone_hash(trainer.net()) == before);
    for (const auto& p : trainer.net()->backbone->parameters()) CHECK_FALSE(p.requires_grad());
    CHECK_FALSE(torch::equal(trainer.net()->reduce->weight, reduce_before));
}

TEST_CASE("ground truth of the query does not reach the network input") {
    auto corpus = make_corpus(3, {6}, 72, 80, 12);
    // Same records and images; the query's label map gets a different object of the same class.
    auto store = std::make_shared<data::MemoryImageStore>();
    for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
        auto sample = corpus.samples[i];
        if (i == 0) {
            sample.labels = testing::render(72, 80, {{6, {20, 20}, {10, 8}}}, 99).labels;
        }
        store->put(corpus.dataset.records()[i].id, sample);
    }
    data::Dataset altered(corpus.dataset.records(), store);

    Trainer a(tiny_net(), corpus.dataset, kFold, quick_config());
    Trainer b(tiny_net(), altered, kFold, quick_config());
    const auto ra = a.sample_step(corpus.dataset.records()[0]);
    const auto rb = b.sample_step(altered.records()[0]);
    CHECK(ra.support_ids == rb.support_ids);
    CHECK(torch::equal(ra.query_logits, rb.query_logits));
    CHECK(ra.loss != rb.loss);
}

TEST_CASE("train writes checkpoints and a log") {
    auto corpus = make_corpus(5, {6}, 72, 80, 13);
    TempDir dir("train");

    SUBCASE("zero epochs leaves the initial model") {
        auto cfg = quick_config();
        cfg.epochs = 0;
        auto net = tiny_net();
        const auto initial = model::version_tag(net);
        Trainer trainer(net, corpus.dataset, kFold, cfg);
        const auto final_path = trainer.train(dir.path);
        CHECK(model::load_checkpoint(final_path).version == initial);
        CHECK(model::load_checkpoint(dir.path / "epoch_000.ckpt").version == initial);
    }
    SUBCASE("one epoch logs every iteration") {
        auto cfg = quick_config();
        Trainer trainer(tiny_net(), corpus.dataset, kFold, cfg);
        std::vector<Trainer::LogEntry> seen;
        trainer.train(dir.path, [&](const Trainer::LogEntry& e) { seen.push_back(e); });
        CHECK(trainer.iterations_per_epoch() == 3);
        REQUIRE(seen.size() == 3);
        CHECK(seen.front().lr == cfg.lr);
        CHECK(seen.back().lr < cfg.lr);
        CHECK(std::filesystem::exists(dir.path / "epoch_001.ckpt"));
        CHECK(std::filesystem::exists(dir.path / "final.ckpt"));
        std::ifstream log(dir.path / "train_log.jsonl");
        int lines = 0;
        for (std::string line; std::getline(log, line);) {
            const auto j = nlohmann::json::parse(line);
            CHECK(j.contains("loss"));
            ++lines;
        }
        CHECK(lines == 3);
        const auto loaded = model::load_checkpoint(dir.path / "final.ckpt");
        CHECK(loaded.metadata["train"]["batch"] == 2);
    }
}

TEST_CASE("TrainConfig validation and round trip") {
    TrainConfig c;
    c.lr = 0.01;
    c.carry_prob = 0.5;
    c.augment = false;
    const TrainConfig back = nlohmann::json(c).get<TrainConfig>();
    CHECK(back.lr == 0.01);
    CHECK(back.carry_prob == 0.5);
    CHECK_FALSE(back.augment);
    c.carry_prob = 1.5;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = TrainConfig{};
    c.batch = 0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("tiny network overfits ten images of one class" * doctest::test_suite("overfit")) {
    auto corpus = make_corpus(10, {6}, 72, 80, 14);
    TempDir dir("overfit");
    TrainConfig cfg;
    cfg.epochs = 20;  // 10 images, batch 1: 200 steps
    cfg.batch = 1;
    // 0.0025 only gets to about 0.7x the initial loss in 200 single-image steps.
    cfg.lr = 0.01;
    cfg.seed = 5;
    Trainer trainer(model::make_network(model::ModelConfig::tiny(64, {8, 4}, 64), 1), corpus.dataset, kFold, cfg);
    std::vector<double> losses;
    trainer.train(dir.path, [&](const Trainer::LogEntry& e) { losses.push_back(e.loss); });
    REQUIRE(losses.size() == 200);
    const double first = std::accumulate(losses.begin(), losses.begin() + 20, 0.0) / 20;
    const double last = std::accumulate(losses.end() - 20, losses.end(), 0.0) / 20;
    MESSAGE("mean loss first 20 steps " << first << ", last 20 steps " << last);
    CHECK(last <= 0.5 * first);
}
