#include "experiments.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "config_set.hpp"
#include "ppn/bench.hpp"
#include "ppn/eval.hpp"
#include "ppn/infer.hpp"
#include "ppn/io.hpp"
#include "ppn/net.hpp"
#include "ppn/skysim.hpp"
#include "ppn/train.hpp"

namespace fs = std::filesystem;

namespace ppn::cli {

namespace {

uint64_t mix_seed(uint64_t base, uint64_t index) {
    uint64_t z = base + 0x9e3779b97f4a7c15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

struct LabeledImage {
    Image image;
    Catalog truth;
};

/// Simulated 1024-ish-pixel images with the paper's source-count range.
std::vector<LabeledImage> simulate_images(int count, int size, int lo, int hi, uint64_t seed,
                                          uint64_t stream) {
    std::mt19937_64 master(mix_seed(seed, stream));
    std::vector<LabeledImage> images;
    images.reserve(count);
    for (int i = 0; i < count; ++i) {
        skysim::SimConfig sim;
        sim.image_size = size;
        sim.n_sources = lo + static_cast<int>(master() % static_cast<uint64_t>(hi - lo + 1));
        sim.seed = master();
        auto result = skysim::simulate(sim);
        images.push_back({std::move(result.image), std::move(result.truth)});
    }
    return images;
}

std::vector<train::TrainSample> to_samples(const std::vector<LabeledImage>& images,
                                           const GridSpec& grid, int overlap, double r_near,
                                           double r_far) {
    std::vector<train::TrainSample> samples;
    for (const LabeledImage& item : images) {
        auto batch = train::make_samples(item.image, item.truth, grid, overlap, r_near, r_far);
        for (auto& s : batch) samples.push_back(std::move(s));
    }
    return samples;
}

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;
};

Aggregate aggregate(const std::vector<double>& values) {
    Aggregate a;
    if (values.empty()) return a;
    for (double v : values) a.mean += v;
    a.mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - a.mean) * (v - a.mean);
    a.stddev = values.size() > 1 ? std::sqrt(var / (values.size() - 1.0)) : 0.0;
    return a;
}

struct TestMetrics {
    Aggregate precision, recall, f1;
};

TestMetrics evaluate_detections(const std::vector<Catalog>& detections,
                                const std::vector<LabeledImage>& tests, double r_tp,
                                double spacing) {
    std::vector<double> ps, rs, f1s;
    for (size_t i = 0; i < tests.size(); ++i) {
        const eval::MatchResult m = eval::match(detections[i], tests[i].truth, r_tp, spacing);
        const double p = eval::precision(m);
        const double r = eval::recall(m);
        ps.push_back(p);
        rs.push_back(r);
        f1s.push_back(eval::f1(p, r));
    }
    return {aggregate(ps), aggregate(rs), aggregate(f1s)};
}

struct ExperimentContext {
    const ConfigSet* cfg = nullptr;
    fs::path out_dir;
    std::vector<std::string> artifacts;

    std::ofstream open(const std::string& name) {
        fs::create_directories(out_dir);
        std::ofstream file(out_dir / name);
        if (!file) throw std::runtime_error("cannot open " + (out_dir / name).string());
        artifacts.push_back(name);
        return file;
    }

    void note_artifact(const std::string& name) { artifacts.push_back(name); }

    void write_manifest(const std::string& experiment) {
        nlohmann::json manifest;
        manifest["experiment"] = experiment;
        manifest["config"] = cfg->effective();
        manifest["config_provenance"] = cfg->provenance();
        manifest["artifacts"] = artifacts;
        std::ofstream file(out_dir / "manifest.json");
        if (!file) throw std::runtime_error("cannot open manifest.json");
        file << manifest.dump(2) << "\n";
    }
};

net::Model train_desk_model(const ConfigSet& cfg, double alpha, double gamma,
                            std::vector<train::EpochStats>* history_out) {
    const int size = cfg.get<int>("image-size");
    const uint64_t seed = cfg.get<uint64_t>("seed");

    net::NetConfig nc;
    nc.base_depth = cfg.get<int>("depth");
    nc.seed = seed;
    net::Model model = net::build(nc);

    train::TrainConfig tc;
    tc.alpha = alpha;
    tc.gamma = gamma;
    tc.epochs = cfg.get<int>("epochs");
    tc.batch_size = cfg.get<int>("batch-size");
    tc.micro_batch = cfg.get<int>("micro-batch");
    tc.learning_rate = cfg.get<double>("lr");
    tc.seed = seed;

    const auto train_images =
        simulate_images(cfg.get<int>("train-images"), size, 120, 150, seed, 1);
    const auto val_images = simulate_images(cfg.get<int>("val-images"), size, 120, 150, seed, 2);
    const auto train_set = to_samples(train_images, nc.grid, 4, tc.r_near, tc.r_far);
    const auto val_set = to_samples(val_images, nc.grid, 4, tc.r_near, tc.r_far);
    std::cout << "training (alpha=" << alpha << ", gamma=" << gamma << ") on "
              << train_set.size() << " patches\n";

    const train::TrainResult result = train::train(model, train_set, val_set, tc);
    std::cout << "  best val loss " << result.best_val_loss << " at epoch " << result.best_epoch
              << "\n";
    if (history_out) *history_out = result.history;
    return model;
}

std::vector<LabeledImage> test_images_for(const ConfigSet& cfg) {
    return simulate_images(cfg.get<int>("test-images"), cfg.get<int>("image-size"), 120, 150,
                           cfg.get<uint64_t>("seed"), 3);
}

infer::InferConfig infer_config_for(const ConfigSet& cfg) {
    infer::InferConfig ic;
    ic.r_nms = cfg.get<double>("r-nms");
    ic.c_nms = cfg.get<double>("c-nms");
    return ic;
}

// -- focal-sweep: Table I analogue ------------------------------------------------

int run_focal_sweep(ExperimentContext& ctx) {
    const ConfigSet& cfg = *ctx.cfg;
    const auto tests = test_images_for(cfg);
    const double r_tp = cfg.get<double>("r-tp");
    const infer::InferConfig ic = infer_config_for(cfg);

    std::ofstream table = ctx.open("focal_sweep.csv");
    table << "gamma,alpha,precision,precision_std,recall,recall_std,f1,f1_std\n";
    for (double gamma : {0.0, 1.0, 2.0}) {
        for (double alpha : {0.5, 1.0, 2.0}) {
            net::Model model = train_desk_model(cfg, alpha, gamma, nullptr);
            std::vector<Catalog> detections;
            for (const LabeledImage& item : tests) {
                detections.push_back(infer::detect(model, item.image, ic));
            }
            const TestMetrics m =
                evaluate_detections(detections, tests, r_tp, model.config().grid.spacing());
            char line[256];
            std::snprintf(line, sizeof(line), "%.1f,%.1f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n", gamma,
                          alpha, m.precision.mean, m.precision.stddev, m.recall.mean,
                          m.recall.stddev, m.f1.mean, m.f1.stddev);
            table << line << std::flush;
            std::cout << "gamma " << gamma << " alpha " << alpha << ": precision "
                      << m.precision.mean << " recall " << m.recall.mean << "\n";
        }
    }
    ctx.write_manifest("focal-sweep");
    return 0;
}

// -- rnms-sweep: Fig. 6 analogue ---------------------------------------------------

int run_rnms_sweep(ExperimentContext& ctx) {
    const ConfigSet& cfg = *ctx.cfg;
    const std::string model_path = cfg.get<std::string>("model");
    if (model_path.empty()) {
        throw std::runtime_error(
            "rnms-sweep needs a trained model: pass --model M.ppnmodel (train one with `ppn train` "
            "or `ppn experiment accuracy`)");
    }
    net::Model model = net::load(model_path);
    const auto tests = test_images_for(cfg);
    const double r_tp = cfg.get<double>("r-tp");
    infer::InferConfig ic = infer_config_for(cfg);
    const double spacing = model.config().grid.spacing();

    // One forward pass per image; suppression varies on top of the cached
    // proposals.
    std::vector<infer::ProposalSet> proposals;
    for (const LabeledImage& item : tests) {
        proposals.push_back(infer::propose(model, item.image, ic));
    }

    std::ofstream table = ctx.open("rnms_sweep.csv");
    table << "r_nms,precision,precision_std,recall,recall_std,f1,f1_std\n";
    for (double r : {0.05, 0.1, 0.2, 0.35, 0.5, 0.65, 0.8, 1.0}) {
        std::vector<Catalog> detections;
        for (const auto& raw : proposals) {
            detections.push_back(infer::to_catalog(infer::nms(raw, r, ic.c_nms, spacing)));
        }
        const TestMetrics m = evaluate_detections(detections, tests, r_tp, spacing);
        char line[256];
        std::snprintf(line, sizeof(line), "%.2f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n", r,
                      m.precision.mean, m.precision.stddev, m.recall.mean, m.recall.stddev,
                      m.f1.mean, m.f1.stddev);
        table << line;
    }
    ctx.write_manifest("rnms-sweep");
    return 0;
}

// -- accuracy: Table IV / Fig. 5 analogue ------------------------------------------

int run_accuracy(ExperimentContext& ctx) {
    const ConfigSet& cfg = *ctx.cfg;
    net::Model model = [&] {
        const std::string model_path = cfg.get<std::string>("model");
        if (!model_path.empty()) return net::load(model_path);
        std::vector<train::EpochStats> history;
        net::Model trained = train_desk_model(cfg, cfg.get<double>("alpha"), cfg.get<double>("gamma"),
                                              &history);
        fs::create_directories(ctx.out_dir);
        train::write_history_csv((ctx.out_dir / "history.csv").string(), history);
        ctx.note_artifact("history.csv");
        net::save(trained, (ctx.out_dir / "model.ppnmodel").string());
        ctx.note_artifact("model.ppnmodel");
        return trained;
    }();

    const auto tests = test_images_for(cfg);
    const double spacing = model.config().grid.spacing();
    infer::InferConfig ic = infer_config_for(cfg);
    const double r_nms_star = cfg.get<double>("r-nms-star");

    std::vector<infer::ProposalSet> proposals;
    for (const LabeledImage& item : tests) {
        proposals.push_back(infer::propose(model, item.image, ic));
    }
    auto detections_at = [&](double r_nms) {
        std::vector<Catalog> detections;
        for (const auto& raw : proposals) {
            detections.push_back(infer::to_catalog(infer::nms(raw, r_nms, ic.c_nms, spacing)));
        }
        return detections;
    };
    const std::vector<Catalog> det = detections_at(ic.r_nms);
    const std::vector<Catalog> det_star = detections_at(r_nms_star);

    // Precision against r_tp (both suppression radii).
    std::ofstream prec = ctx.open("precision_vs_rtp.csv");
    prec << "r_tp,precision,precision_std,precision_star,precision_star_std\n";
    for (double r_tp : {0.05, 0.10, 0.15, 0.20, 0.25, 0.40, 0.50, 1.00}) {
        const TestMetrics m = evaluate_detections(det, tests, r_tp, spacing);
        const TestMetrics ms = evaluate_detections(det_star, tests, r_tp, spacing);
        char line[200];
        std::snprintf(line, sizeof(line), "%.2f,%.4f,%.4f,%.4f,%.4f\n", r_tp, m.precision.mean,
                      m.precision.stddev, ms.precision.mean, ms.precision.stddev);
        prec << line;
    }

    // Recall per flux bin, pooled over the test images.
    const double r_tp = cfg.get<double>("r-tp");
    const auto ladder = skysim::flux_bins(30, 1.0);
    const auto edges = eval::edges_for_flux_bins(ladder);
    std::ofstream recall_csv = ctx.open("recall_vs_flux.csv");
    recall_csv << "flux_sigma,n_truth,recall,recall_star\n";
    std::vector<int> n_truth(30, 0), matched(30, 0), matched_star(30, 0);
    for (size_t i = 0; i < tests.size(); ++i) {
        const auto bins = eval::recall_by_flux(det[i], tests[i].truth, r_tp, spacing, edges);
        const auto bins_star = eval::recall_by_flux(det_star[i], tests[i].truth, r_tp, spacing, edges);
        for (size_t k = 0; k < 30; ++k) {
            n_truth[k] += bins[k].n_truth;
            matched[k] += bins[k].n_matched;
            matched_star[k] += bins_star[k].n_matched;
        }
    }
    for (size_t k = 0; k < 30; ++k) {
        char line[160];
        const double denom = std::max(1, n_truth[k]);
        std::snprintf(line, sizeof(line), "%.4f,%d,%.4f,%.4f\n", ladder[k], n_truth[k],
                      matched[k] / denom, matched_star[k] / denom);
        recall_csv << line;
    }

    nlohmann::json report;
    report["config"] = cfg.effective();
    const TestMetrics overall = evaluate_detections(det, tests, r_tp, spacing);
    report["precision"] = overall.precision.mean;
    report["precision_std"] = overall.precision.stddev;
    report["recall"] = overall.recall.mean;
    report["recall_std"] = overall.recall.stddev;
    report["f1"] = overall.f1.mean;
    std::ofstream json_out = ctx.open("report.json");
    json_out << report.dump(2) << "\n";
    std::cout << "accuracy: precision " << overall.precision.mean << " recall "
              << overall.recall.mean << " f1 " << overall.f1.mean << "\n";

    ctx.write_manifest("accuracy");
    return 0;
}

// -- speed: Table V / Fig. 8 analogue ----------------------------------------------

int run_speed(ExperimentContext& ctx) {
    const ConfigSet& cfg = *ctx.cfg;
    net::Model model = [&] {
        const std::string model_path = cfg.get<std::string>("model");
        if (!model_path.empty()) return net::load(model_path);
        net::NetConfig nc;
        nc.base_depth = cfg.get<int>("depth");
        nc.seed = cfg.get<uint64_t>("seed");
        return net::build(nc);
    }();

    std::vector<bench::Detector> detectors;
    detectors.push_back(bench::PpnDetector{&model, infer_config_for(cfg)});
    detectors.push_back(bench::BaselineDetector{cfg.get<double>("tau"), 3});

    bench::ScalingConfig sc;
    for (const std::string& token : {std::string("sizes")}) {
        sc.sizes.clear();
        std::string text = cfg.get<std::string>(token);
        size_t begin = 0;
        while (begin <= text.size()) {
            const size_t comma = text.find(',', begin);
            const std::string item =
                text.substr(begin, comma == std::string::npos ? comma : comma - begin);
            if (!item.empty()) sc.sizes.push_back(std::stoi(item));
            if (comma == std::string::npos) break;
            begin = comma + 1;
        }
    }
    sc.repeats = cfg.get<int>("repeats");
    sc.seed = cfg.get<uint64_t>("seed");

    const auto records = bench::scaling_run(detectors, sc);
    fs::create_directories(ctx.out_dir);
    bench::write_timings_csv((ctx.out_dir / "timings.csv").string(), records);
    ctx.note_artifact("timings.csv");
    bench::write_report((ctx.out_dir / "bench_table.csv").string(),
                        (ctx.out_dir / "bench_curve.csv").string(), records);
    ctx.note_artifact("bench_table.csv");
    ctx.note_artifact("bench_curve.csv");
    for (const auto& s : bench::summarize(records)) {
        if (s.step == "total") {
            std::printf("%-9s %6d  total %.3f +/- %.3f s\n", s.detector.c_str(), s.image_size,
                        s.mean, s.stddev);
        }
    }
    ctx.write_manifest("speed");
    return 0;
}

struct ExperimentBinder {
    CLI::App* sub = nullptr;
    ConfigSet* cfg = nullptr;
    std::vector<std::function<void()>> pulls;
    std::string config_path;
    bool print_config = false;
    template <typename T>
    void add(const std::string& flag, const std::string& key, T def, const std::string& desc) {
        cfg->set_default(key, def);
        auto var = std::make_shared<T>(def);
        CLI::Option* opt = sub->add_option(flag, *var, desc);
        pulls.push_back([this, key, var, opt] {
            if (opt->count() > 0) cfg->set_flag(key, *var);
        });
    }
};

}  // namespace

void register_experiment_command(CLI::App& app, int& exit_code) {
    CLI::App* sub = app.add_subcommand(
        "experiment", "desk-scale reproductions: focal-sweep | rnms-sweep | accuracy | speed");
    auto cfg = std::make_shared<ConfigSet>();
    auto name = std::make_shared<std::string>();
    sub->add_option("name", *name, "experiment name")->required();

    auto binder = std::make_shared<ExperimentBinder>();
    binder->sub = sub;
    binder->cfg = cfg.get();
    sub->add_option("--config", binder->config_path, "JSON config file (flags override it)");
    sub->add_flag("--print-config", binder->print_config, "print merged config and exit");

    binder->add(std::string("--out"), "out", std::string("experiment_out"), "output directory");
    binder->add(std::string("--seed"), "seed", uint64_t{0}, "RNG seed");
    binder->add(std::string("--depth"), "depth", 9, "base depth (desk scale default 9)");
    binder->add(std::string("--train-images"), "train-images", 82,
                "1024-px training images (~25 patches each)");
    binder->add(std::string("--val-images"), "val-images", 11, "validation images");
    binder->add(std::string("--test-images"), "test-images", 10, "held-out test images");
    binder->add(std::string("--image-size"), "image-size", 1024, "simulated image side, pixels");
    binder->add(std::string("--epochs"), "epochs", 15, "training epochs");
    binder->add(std::string("--batch-size"), "batch-size", 128, "samples per optimizer step");
    binder->add(std::string("--micro-batch"), "micro-batch", 32, "samples per forward pass");
    binder->add(std::string("--lr"), "lr", 1e-3, "learning rate");
    binder->add(std::string("--alpha"), "alpha", 0.5, "focal alpha (accuracy experiment)");
    binder->add(std::string("--gamma"), "gamma", 0.0, "focal gamma (accuracy experiment)");
    binder->add(std::string("--r-nms"), "r-nms", 0.35, "suppression radius, grid units");
    binder->add(std::string("--r-nms-star"), "r-nms-star", 0.8, "alternate radius (PPN*)");
    binder->add(std::string("--c-nms"), "c-nms", 0.8, "confidence threshold");
    binder->add(std::string("--r-tp"), "r-tp", 0.4, "matching radius, grid units");
    binder->add(std::string("--model"), "model", std::string(),
                "trained model ('' = train fresh where applicable)");
    binder->add(std::string("--sizes"), "sizes", std::string("1024,2048,3072,4096"),
                "speed experiment image sizes");
    binder->add(std::string("--repeats"), "repeats", 5, "speed experiment repeats");
    binder->add(std::string("--tau"), "tau", 0.5, "baseline threshold");

    sub->callback([binder, cfg, name, &exit_code] {
        if (!binder->config_path.empty()) {
            std::ifstream in(binder->config_path);
            if (!in) throw std::runtime_error("cannot open config file " + binder->config_path);
            nlohmann::json j;
            in >> j;
            cfg->apply_config_file(j);
        }
        for (auto& pull : binder->pulls) pull();
        if (binder->print_config) {
            std::cout << cfg->effective().dump(2) << "\n";
            return;
        }
        ExperimentContext ctx;
        ctx.cfg = cfg.get();
        ctx.out_dir = cfg->get<std::string>("out");
        if (*name == "focal-sweep") {
            exit_code = run_focal_sweep(ctx);
        } else if (*name == "rnms-sweep") {
            exit_code = run_rnms_sweep(ctx);
        } else if (*name == "accuracy") {
            exit_code = run_accuracy(ctx);
        } else if (*name == "speed") {
            exit_code = run_speed(ctx);
        } else {
            throw CLI::ValidationError("experiment",
                                       "unknown experiment '" + *name +
                                           "' (expected focal-sweep, rnms-sweep, accuracy, speed)");
        }
    });
}

}  // namespace ppn::cli
