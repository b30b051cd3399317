// Command-line front end: index, train, evaluate, serve.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "ifse/dataset.hpp"
#include "ifse/error.hpp"
#include "ifse/evaluator.hpp"
#include "ifse/model/checkpoint.hpp"
#include "ifse/model/ifsenet.hpp"
#include "ifse/service.hpp"
#include "ifse/trainer.hpp"

namespace fs = std::filesystem;
using namespace ifse;

namespace {

data::Dataset open_dataset(const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw IoError("cannot read manifest " + manifest.string());
    return data::Dataset(data::read_manifest(in), std::make_shared<data::DiskImageStore>());
}

int run_index(const fs::path& pascal, const fs::path& sbd, const fs::path& out) {
    const auto result = data::build_merged_index(pascal, sbd);
    std::ofstream file(out);
    data::write_manifest(file, result.records);
    if (!file) throw IoError("cannot write " + out.string());
    std::cout << result.records.size() << " records, " << result.skipped << " unreadable masks skipped\n";
    return 0;
}

struct TrainArgs {
    fs::path manifest, out, backbone_weights, init;
    int fold = 0;
    std::uint64_t model_seed = 0;
    model::ModelConfig model;
    train::TrainConfig train;
    bool no_augment = false;
};

int run_train(TrainArgs& a) {
    a.train.augment = !a.no_augment;
    model::IfseNet net{nullptr};
    if (!a.init.empty()) {
        net = model::load_checkpoint(a.init).net;
    } else {
        net = model::make_network(a.model, a.model_seed);
        if (!a.backbone_weights.empty()) {
            std::cout << "loaded " << model::load_backbone_weights(net, a.backbone_weights) << " backbone tensors\n";
        } else if (a.model.backbone == "resnet50") {
            std::cerr << "warning: training without pretrained backbone weights\n";
        }
    }
    train::Trainer trainer(net, open_dataset(a.manifest), data::fold_split(a.fold), a.train);
    std::cout << trainer.train_images().records().size() << " training images, " << trainer.iterations_per_epoch()
              << " iterations per epoch\n";
    const auto final_path = trainer.train(a.out, [](const train::Trainer::LogEntry& e) {
        if (e.step % 50 == 0) std::cout << "epoch " << e.epoch << " step " << e.step << " loss " << e.loss << " lr " << e.lr << "\n";
    });
    std::cout << "wrote " << final_path.string() << "\n";
    return 0;
}

struct EvalArgs {
    fs::path checkpoint, manifest, out;
    int fold = 0;
    eval::ValidationConfig config;
};

int run_evaluate(const EvalArgs& a) {
    auto loaded = model::load_checkpoint(a.checkpoint);
    auto net = std::make_shared<model::IfseNet>(loaded.net);
    const auto dataset = open_dataset(a.manifest);
    eval::EpisodeOptions options;
    options.input_patch = (*net)->config().input_patch;
    options.click_radius = (*net)->config().click_disk_radius;
    const auto run = eval::run_validation(
        dataset, data::fold_split(a.fold),
        [&] { return std::make_unique<interactive::NetworkPredictor>(net); }, a.config, options);
    eval::write_outputs(run, a.out);
    const auto& r = run.report;
    std::cout << "checkpoint " << loaded.version << "\n"
              << "class mIoU @" << eval::kClickBudget << " clicks: " << r.class_miou[eval::kClickBudget - 1] << "\n"
              << "interactive mIoU @" << eval::kClickBudget << " clicks: " << r.interactive_miou[eval::kClickBudget - 1]
              << "\nNoC@85 " << r.noc85 << "  NoC@90 " << r.noc90 << "\n";
    return 0;
}

struct ServeArgs {
    fs::path checkpoint, state, corpus;
    std::string host = "127.0.0.1";
    int port = 8080;
};

int run_serve(const ServeArgs& a) {
    auto loaded = model::load_checkpoint(a.checkpoint);
    service::SessionService svc(std::make_shared<model::IfseNet>(loaded.net), loaded.version, a.state,
                                a.corpus.empty() ? std::nullopt : std::optional<fs::path>(a.corpus));
    if (svc.replay_failures()) std::cerr << svc.replay_failures() << " journaled sessions could not be restored\n";
    service::HttpServer http(svc);
    const int port = http.bind(a.host, a.port);
    std::cout << "serving checkpoint " << loaded.version << " on http://" << a.host << ":" << port << " ("
              << svc.session_ids().size() << " sessions restored)" << std::endl;
    http.serve();
    return 0;
}

void add_model_options(CLI::App& cmd, TrainArgs& a) {
    cmd.add_option("--backbone", a.model.backbone, "resnet50 or tiny")->check(CLI::IsMember({"resnet50", "tiny"}));
    cmd.add_option("--channels", a.model.feature_channels, "Reduced feature width C");
    cmd.add_option("--support-width", a.model.support_width);
    cmd.add_option("--query-scales", a.model.query_scales, "Query-path branch sizes")->delimiter(',');
    cmd.add_option("--patch", a.model.input_patch, "Training patch size");
    cmd.add_option("--click-radius", a.model.click_disk_radius);
    cmd.add_option("--model-seed", a.model_seed, "Initialization seed");
    cmd.add_option("--backbone-weights", a.backbone_weights, "Checkpoint holding backbone.* tensors")
        ->check(CLI::ExistingFile);
    cmd.add_option("--init", a.init, "Start from this checkpoint instead of a fresh network")
        ->check(CLI::ExistingFile);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Interactive few-shot segmentation: training, evaluation and annotation service"};
    app.set_config("--config", "", "TOML or INI file with option values");
    app.require_subcommand(1);

    fs::path pascal, sbd, manifest_out;
    auto* index = app.add_subcommand("index", "Build the merged image manifest");
    index->add_option("--pascal", pascal, "Pascal VOC 2012 root")->required()->check(CLI::ExistingDirectory);
    index->add_option("--sbd", sbd, "SBD root with cls_png/ label PNGs")->required()->check(CLI::ExistingDirectory);
    index->add_option("--out", manifest_out, "Manifest path (JSON lines)")->required();

    TrainArgs ta;
    auto* trn = app.add_subcommand("train", "Train on the training classes of one fold");
    trn->add_option("--manifest", ta.manifest)->required()->check(CLI::ExistingFile);
    trn->add_option("--fold", ta.fold)->required()->check(CLI::Range(0, 3));
    trn->add_option("--out", ta.out, "Checkpoint and log directory")->required();
    trn->add_option("--epochs", ta.train.epochs)->capture_default_str();
    trn->add_option("--lr", ta.train.lr)->capture_default_str();
    trn->add_option("--batch", ta.train.batch)->capture_default_str();
    trn->add_option("--shots", ta.train.k_shots, "Supports per training query")->capture_default_str();
    trn->add_option("--carry-prob", ta.train.carry_prob)->capture_default_str();
    trn->add_option("--seed", ta.train.seed)->capture_default_str();
    trn->add_flag("--no-augment", ta.no_augment, "Random crop only");
    add_model_options(*trn, ta);

    EvalArgs ea;
    auto* evl = app.add_subcommand("evaluate", "Simulated-click validation over episodes");
    evl->add_option("--checkpoint", ea.checkpoint)->required()->check(CLI::ExistingFile);
    evl->add_option("--manifest", ea.manifest)->required()->check(CLI::ExistingFile);
    evl->add_option("--fold", ea.fold)->required()->check(CLI::Range(0, 3));
    evl->add_option("--out", ea.out, "Report directory")->required();
    evl->add_option("--shots", ea.config.shots)->capture_default_str();
    evl->add_option("--queries", ea.config.queries)->capture_default_str();
    evl->add_option("--episodes", ea.config.episodes_per_class, "Episodes per class")->capture_default_str();
    evl->add_option("--seed", ea.config.seed)->capture_default_str();
    evl->add_flag("--training-classes", ea.config.training_classes, "Evaluate the fold's training classes");

    ServeArgs sa;
    auto* srv = app.add_subcommand("serve", "HTTP annotation service");
    srv->add_option("--checkpoint", sa.checkpoint)->required()->check(CLI::ExistingFile);
    srv->add_option("--corpus", sa.corpus, "Directory images may be referenced from")->check(CLI::ExistingDirectory);
    srv->add_option("--port", sa.port, "0 picks a free port")->envname("IFSE_PORT")->capture_default_str();
    srv->add_option("--state", sa.state, "Session journal directory")->envname("IFSE_STATE_DIR")->required();
    srv->add_option("--host", sa.host)->capture_default_str();

    CLI11_PARSE(app, argc, argv);
    torch::set_num_threads(std::max(1u, std::thread::hardware_concurrency()));
    try {
        if (*index) return run_index(pascal, sbd, manifest_out);
        if (*trn) return run_train(ta);
        if (*evl) return run_evaluate(ea);
        if (*srv) return run_serve(sa);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
