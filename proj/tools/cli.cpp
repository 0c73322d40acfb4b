#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "config_set.hpp"
#include "experiments.hpp"
#include "ppn/bench.hpp"
#include "ppn/eval.hpp"
#include "ppn/floodfill.hpp"
#include "ppn/infer.hpp"
#include "ppn/io.hpp"
#include "ppn/net.hpp"
#include "ppn/skysim.hpp"
#include "ppn/train.hpp"

namespace fs = std::filesystem;

namespace ppn::cli {

namespace {

uint64_t derive_seed(uint64_t base, uint64_t index) {
    uint64_t z = base + 0x9e3779b97f4a7c15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Binds CLI11 options to ConfigSet keys so flag values win over the config
/// file, which wins over defaults.
struct OptionBinder {
    CLI::App* sub = nullptr;
    ConfigSet* cfg = nullptr;
    std::vector<std::function<void()>> pulls;
    std::string config_path;
    bool print_config = false;

    OptionBinder(CLI::App* s, ConfigSet* c) : sub(s), cfg(c) {
        sub->add_option("--config", config_path, "JSON config file (flags override it)");
        sub->add_flag("--print-config", print_config,
                      "print the merged effective config as JSON and exit");
    }

    template <typename T>
    void add(const std::string& flag, const std::string& key, std::shared_ptr<T> var, T def,
             const std::string& desc) {
        cfg->set_default(key, def);
        *var = def;
        CLI::Option* opt = sub->add_option(flag, *var, desc);
        pulls.push_back([this, key, var, opt] {
            if (opt->count() > 0) cfg->set_flag(key, *var);
        });
    }

    void add_flag(const std::string& flag, const std::string& key, std::shared_ptr<bool> var,
                  const std::string& desc) {
        cfg->set_default(key, false);
        *var = false;
        CLI::Option* opt = sub->add_flag(flag, *var, desc);
        pulls.push_back([this, key, var, opt] {
            if (opt->count() > 0) cfg->set_flag(key, *var);
        });
    }

    /// Merge order: config file first, then flags on top.
    /// Returns false when --print-config consumed the invocation.
    bool finalize() {
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw std::runtime_error("cannot open config file " + config_path);
            nlohmann::json j;
            try {
                in >> j;
            } catch (const nlohmann::json::exception& e) {
                throw std::runtime_error("invalid JSON in " + config_path + ": " + e.what());
            }
            cfg->apply_config_file(j);
        }
        for (auto& pull : pulls) pull();
        if (print_config) {
            std::cout << cfg->effective().dump(2) << "\n";
            return false;
        }
        return true;
    }
};

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> values;
    size_t begin = 0;
    while (begin <= text.size()) {
        const size_t comma = text.find(',', begin);
        const std::string token = text.substr(begin, comma == std::string::npos ? comma : comma - begin);
        if (!token.empty()) values.push_back(std::stoi(token));
        if (comma == std::string::npos) break;
        begin = comma + 1;
    }
    if (values.empty()) throw std::runtime_error("expected a comma-separated list, got '" + text + "'");
    return values;
}

std::pair<int, int> parse_range(const std::string& text) {
    const size_t colon = text.find(':');
    if (colon == std::string::npos) {
        const int v = std::stoi(text);
        return {v, v};
    }
    return {std::stoi(text.substr(0, colon)), std::stoi(text.substr(colon + 1))};
}

// lo:hi:count sweep specification.
std::vector<double> parse_sweep(const std::string& text) {
    const size_t c1 = text.find(':');
    const size_t c2 = text.find(':', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
        throw std::runtime_error("expected lo:hi:count, got '" + text + "'");
    }
    const double lo = std::stod(text.substr(0, c1));
    const double hi = std::stod(text.substr(c1 + 1, c2 - c1 - 1));
    const int count = std::stoi(text.substr(c2 + 1));
    if (count < 1) throw std::runtime_error("sweep count must be >= 1");
    std::vector<double> values(count);
    for (int k = 0; k < count; ++k) {
        values[k] = count == 1 ? lo : lo + (hi - lo) * k / (count - 1.0);
    }
    return values;
}

std::string image_stem(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%05d", index);
    return buf;
}

// -- simulate -------------------------------------------------------------------

int run_simulate(const ConfigSet& cfg) {
    const std::string out_dir = cfg.get<std::string>("out");
    fs::create_directories(out_dir);
    const auto [lo, hi] = parse_range(cfg.get<std::string>("sources"));
    if (lo < 0 || hi < lo) throw std::runtime_error("invalid --sources range");
    const uint64_t seed = cfg.get<uint64_t>("seed");
    const int count = cfg.get<int>("count");

    std::mt19937_64 master(seed);
    for (int i = 0; i < count; ++i) {
        skysim::SimConfig sim;
        sim.image_size = cfg.get<int>("size");
        sim.n_bins = cfg.get<int>("bins");
        sim.sigma = cfg.get<double>("sigma");
        sim.psf_fwhm = cfg.get<double>("fwhm");
        sim.n_sources = lo + static_cast<int>(master() % static_cast<uint64_t>(hi - lo + 1));
        sim.seed = derive_seed(seed, static_cast<uint64_t>(i));
        const skysim::SimResult result = skysim::simulate(sim);

        const std::string stem = (fs::path(out_dir) / image_stem(i)).string();
        io::write_image(stem + ".ppn", result.image);
        io::write_meta(stem + ".ppn", {sim.sigma, sim.seed});
        io::write_catalog(stem + ".truth.csv", result.truth);
    }
    std::cout << "wrote " << count << " images to " << out_dir << "\n";
    return 0;
}

// -- train ------------------------------------------------------------------------

struct DataItem {
    Image image;
    Catalog truth;
};

std::vector<DataItem> load_dataset(const std::string& dir) {
    std::vector<fs::path> files;
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".ppn") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .ppn images found in " + dir);
    std::vector<DataItem> items;
    for (const fs::path& file : files) {
        DataItem item;
        item.image = io::read_image(file.string());
        fs::path truth = file;
        truth.replace_extension();
        truth += ".truth.csv";
        item.truth = io::read_catalog(truth.string(), CatalogKind::truth);
        items.push_back(std::move(item));
    }
    return items;
}

net::NetConfig net_config_from(const ConfigSet& cfg) {
    net::NetConfig config;
    config.base_depth = cfg.get<int>("depth");
    config.seed = cfg.get<uint64_t>("seed");
    config.dropout_rate = cfg.get<double>("dropout");
    return config;
}

int run_train(const ConfigSet& cfg) {
    const std::vector<DataItem> items = load_dataset(cfg.get<std::string>("data"));
    int val_count = cfg.get<int>("val-count");
    if (val_count <= 0) val_count = std::max(1, static_cast<int>(items.size()) / 10);
    if (val_count >= static_cast<int>(items.size())) {
        throw std::runtime_error("--val-count must leave at least one training image");
    }

    train::TrainConfig tc;
    tc.alpha = cfg.get<double>("alpha");
    tc.gamma = cfg.get<double>("gamma");
    tc.epochs = cfg.get<int>("epochs");
    tc.batch_size = cfg.get<int>("batch-size");
    tc.micro_batch = cfg.get<int>("micro-batch");
    tc.learning_rate = cfg.get<double>("lr");
    tc.seed = cfg.get<uint64_t>("seed");
    const double r_far_flag = cfg.get<double>("r-far");
    tc.r_near = cfg.get<double>("r-near");
    tc.r_far = r_far_flag > 0.0 ? r_far_flag : tc.r_near;

    net::NetConfig nc = net_config_from(cfg);
    net::Model model = net::build(nc);

    const int overlap = cfg.get<int>("overlap");
    std::vector<train::TrainSample> train_set, val_set;
    const size_t split = items.size() - static_cast<size_t>(val_count);
    for (size_t i = 0; i < items.size(); ++i) {
        auto samples = train::make_samples(items[i].image, items[i].truth, nc.grid, overlap,
                                           tc.r_near, tc.r_far);
        auto& target = i < split ? train_set : val_set;
        for (auto& sample : samples) target.push_back(std::move(sample));
    }
    std::cout << "training on " << train_set.size() << " patches, validating on "
              << val_set.size() << "\n";

    const train::TrainResult result = train::train(model, train_set, val_set, tc);
    std::cout << "best validation loss " << result.best_val_loss << " at epoch "
              << result.best_epoch << "\n";

    net::save(model, cfg.get<std::string>("out"));
    const std::string history = cfg.get<std::string>("history");
    if (!history.empty()) train::write_history_csv(history, result.history);
    return 0;
}

// -- detect ----------------------------------------------------------------------

int run_detect(const ConfigSet& cfg) {
    net::Model model = net::load(cfg.get<std::string>("model"));
    const Image image = io::read_image(cfg.get<std::string>("image"));
    infer::InferConfig ic;
    ic.r_nms = cfg.get<double>("r-nms");
    ic.c_nms = cfg.get<double>("c-nms");
    ic.overlap = cfg.get<int>("overlap");
    ic.batch_size = cfg.get<int>("batch-size");
    const Catalog detections = infer::detect(model, image, ic);
    io::write_catalog(cfg.get<std::string>("out"), detections);
    std::cout << detections.records.size() << " detections\n";
    return 0;
}

int run_detect_baseline(const ConfigSet& cfg) {
    const Image image = io::read_image(cfg.get<std::string>("image"));
    const int min_area = cfg.get<int>("min-area");
    Catalog detections;
    if (cfg.get<bool>("multi")) {
        detections = floodfill::multi_threshold_detect(image, floodfill::default_threshold_ladder(),
                                                       min_area);
    } else {
        detections = floodfill::threshold_blob_detect(image, cfg.get<double>("tau"), min_area);
    }
    io::write_catalog(cfg.get<std::string>("out"), detections);
    std::cout << detections.records.size() << " detections\n";
    return 0;
}

// -- evaluate --------------------------------------------------------------------

int run_evaluate(const ConfigSet& cfg) {
    const Catalog pred = io::read_catalog(cfg.get<std::string>("pred"), CatalogKind::detection);
    const Catalog truth = io::read_catalog(cfg.get<std::string>("truth"), CatalogKind::truth);
    const double spacing = cfg.get<double>("spacing");
    const double r_tp = cfg.get<double>("r-tp");
    const double sigma = cfg.get<double>("sigma");

    const eval::MatchResult m = eval::match(pred, truth, r_tp, spacing);
    const double p = eval::precision(m);
    const double r = eval::recall(m);

    nlohmann::json report;
    report["config"] = cfg.effective();
    report["tp"] = m.tp;
    report["fp"] = m.fp;
    report["fn"] = m.fn;
    report["precision"] = p;
    report["recall"] = r;
    report["f1"] = eval::f1(p, r);

    const int n_bins = cfg.get<int>("flux-bins");
    if (n_bins > 0) {
        Catalog truth_sigma = truth;  // peak flux in sigma multiples
        for (PointRecord& rec : truth_sigma.records) rec.score /= sigma;
        const auto edges = eval::edges_for_flux_bins(skysim::flux_bins(n_bins, 1.0));
        nlohmann::json bins = nlohmann::json::array();
        for (const auto& bin : eval::recall_by_flux(pred, truth_sigma, r_tp, spacing, edges)) {
            bins.push_back({{"lo", bin.lo},
                            {"hi", bin.hi},
                            {"n_truth", bin.n_truth},
                            {"n_matched", bin.n_matched},
                            {"recall", bin.recall}});
        }
        report["per_bin"] = bins;
    }

    const std::string sweep = cfg.get<std::string>("rtp-sweep");
    if (!sweep.empty()) {
        nlohmann::json curve = nlohmann::json::array();
        for (const auto& pt : eval::precision_vs_rtp(pred, truth, parse_sweep(sweep), spacing)) {
            curve.push_back({{"r_tp", pt.r_tp}, {"precision", pt.precision}});
        }
        report["per_rtp"] = curve;
    }

    const std::string out = cfg.get<std::string>("out");
    std::ofstream file(out);
    if (!file) throw std::runtime_error("cannot open " + out);
    file << report.dump(2) << "\n";
    std::cout << "precision " << p << " recall " << r << " f1 " << eval::f1(p, r) << "\n";
    return 0;
}

// -- bench -----------------------------------------------------------------------

int run_bench(const ConfigSet& cfg) {
    const std::string which = cfg.get<std::string>("detector");
    if (which != "ppn" && which != "baseline" && which != "both") {
        throw std::runtime_error("--detector must be ppn, baseline or both");
    }

    std::optional<net::Model> model;
    if (which != "baseline") {
        const std::string model_path = cfg.get<std::string>("model");
        if (!model_path.empty()) {
            model = net::load(model_path);
        } else {
            net::NetConfig nc;
            nc.base_depth = cfg.get<int>("depth");
            nc.seed = cfg.get<uint64_t>("seed");
            model = net::build(nc);  // timing depends on shape, not weights
        }
    }

    std::vector<bench::Detector> detectors;
    infer::InferConfig ic;
    ic.r_nms = cfg.get<double>("r-nms");
    ic.c_nms = cfg.get<double>("c-nms");
    if (which != "baseline") detectors.push_back(bench::PpnDetector{&*model, ic});
    if (which != "ppn") {
        detectors.push_back(bench::BaselineDetector{cfg.get<double>("tau"), cfg.get<int>("min-area")});
    }

    bench::ScalingConfig sc;
    sc.sizes = parse_int_list(cfg.get<std::string>("sizes"));
    sc.repeats = cfg.get<int>("repeats");
    sc.seed = cfg.get<uint64_t>("seed");
    const auto records = bench::scaling_run(detectors, sc);
    bench::write_timings_csv(cfg.get<std::string>("out"), records);
    std::cout << "wrote " << records.size() << " timing records\n";
    return 0;
}

int run_bench_report(const ConfigSet& cfg) {
    const auto records = bench::read_timings_csv(cfg.get<std::string>("in"));
    bench::write_report(cfg.get<std::string>("table"), cfg.get<std::string>("curve"), records);
    for (const auto& s : bench::summarize(records)) {
        if (s.step == "total") {
            std::printf("%-9s %6d  total %.3f +/- %.3f s\n", s.detector.c_str(), s.image_size,
                        s.mean, s.stddev);
        }
    }
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"ppn: point-source detection toolkit (proposal network, baseline, metrics, benchmark)"};
    app.require_subcommand(1);

    ConfigSet sim_cfg, train_cfg, detect_cfg, baseline_cfg, eval_cfg, bench_cfg, report_cfg;
    int exit_code = 0;

    // simulate
    {
        CLI::App* sub = app.add_subcommand("simulate", "generate labeled synthetic survey images");
        auto binder = std::make_shared<OptionBinder>(sub, &sim_cfg);
        binder->add(std::string("--out"), "out", std::make_shared<std::string>(), std::string("data"),
                    "output directory");
        binder->add(std::string("--count"), "count", std::make_shared<int>(), 10, "number of images");
        binder->add(std::string("--size"), "size", std::make_shared<int>(), 1024, "image side, pixels");
        binder->add(std::string("--sources"), "sources", std::make_shared<std::string>(),
                    std::string("120:150"), "source count or LO:HI range per image");
        binder->add(std::string("--bins"), "bins", std::make_shared<int>(), 30, "flux bins");
        binder->add(std::string("--sigma"), "sigma", std::make_shared<double>(), 1.0, "noise rms");
        binder->add(std::string("--fwhm"), "fwhm", std::make_shared<double>(), 3.0, "PSF FWHM, pixels");
        binder->add(std::string("--seed"), "seed", std::make_shared<uint64_t>(), uint64_t{0}, "RNG seed");
        sub->callback([binder, &sim_cfg, &exit_code] {
            if (binder->finalize()) exit_code = run_simulate(sim_cfg);
        });
    }

    // train
    {
        CLI::App* sub = app.add_subcommand("train", "train the proposal network");
        auto binder = std::make_shared<OptionBinder>(sub, &train_cfg);
        binder->add(std::string("--data"), "data", std::make_shared<std::string>(), std::string("data"),
                    "directory of simulated images (img_*.ppn + truth csv)");
        binder->add(std::string("--val-count"), "val-count", std::make_shared<int>(), 0,
                    "images held out for validation (0 = 10%)");
        binder->add(std::string("--out"), "out", std::make_shared<std::string>(),
                    std::string("model.ppnmodel"), "model output path");
        binder->add(std::string("--history"), "history", std::make_shared<std::string>(),
                    std::string("history.csv"), "per-epoch loss CSV ('' to skip)");
        binder->add(std::string("--depth"), "depth", std::make_shared<int>(), 31,
                    "base depth: 9, 17 or 31");
        binder->add(std::string("--epochs"), "epochs", std::make_shared<int>(), 30, "training epochs");
        binder->add(std::string("--batch-size"), "batch-size", std::make_shared<int>(), 128,
                    "samples per optimizer step");
        binder->add(std::string("--micro-batch"), "micro-batch", std::make_shared<int>(), 32,
                    "samples per forward/backward pass");
        binder->add(std::string("--alpha"), "alpha", std::make_shared<double>(), 0.5,
                    "focal loss positive weight");
        binder->add(std::string("--gamma"), "gamma", std::make_shared<double>(), 0.0,
                    "focal loss exponent");
        binder->add(std::string("--lr"), "lr", std::make_shared<double>(), 1e-3, "learning rate");
        binder->add(std::string("--dropout"), "dropout", std::make_shared<double>(), 0.2,
                    "dropout rate");
        binder->add(std::string("--r-near"), "r-near", std::make_shared<double>(),
                    train::default_r_near(), "positive-origin radius, grid units");
        binder->add(std::string("--r-far"), "r-far", std::make_shared<double>(), -1.0,
                    "ignored-band outer radius (<= 0 means r_near)");
        binder->add(std::string("--overlap"), "overlap", std::make_shared<int>(), 4,
                    "patch overlap, pixels");
        binder->add(std::string("--seed"), "seed", std::make_shared<uint64_t>(), uint64_t{0}, "RNG seed");
        sub->callback([binder, &train_cfg, &exit_code] {
            if (binder->finalize()) exit_code = run_train(train_cfg);
        });
    }

    // detect
    {
        CLI::App* sub = app.add_subcommand("detect", "run the proposal network on an image");
        auto binder = std::make_shared<OptionBinder>(sub, &detect_cfg);
        binder->add(std::string("--model"), "model", std::make_shared<std::string>(),
                    std::string("model.ppnmodel"), "trained model file");
        binder->add(std::string("--image"), "image", std::make_shared<std::string>(), std::string(),
                    "input .ppn image");
        binder->add(std::string("--out"), "out", std::make_shared<std::string>(),
                    std::string("det.csv"), "detection catalog output");
        binder->add(std::string("--r-nms"), "r-nms", std::make_shared<double>(), 0.35,
                    "suppression radius, grid units");
        binder->add(std::string("--c-nms"), "c-nms", std::make_shared<double>(), 0.8,
                    "confidence threshold");
        binder->add(std::string("--overlap"), "overlap", std::make_shared<int>(), 4,
                    "patch overlap, pixels");
        binder->add(std::string("--batch-size"), "batch-size", std::make_shared<int>(), 16,
                    "patches per forward call");
        sub->callback([binder, &detect_cfg, &exit_code] {
            if (binder->finalize()) exit_code = run_detect(detect_cfg);
        });
    }

    // detect-baseline
    {
        CLI::App* sub = app.add_subcommand("detect-baseline", "thresholded blob detection");
        auto binder = std::make_shared<OptionBinder>(sub, &baseline_cfg);
        binder->add(std::string("--image"), "image", std::make_shared<std::string>(), std::string(),
                    "input .ppn image");
        binder->add(std::string("--tau"), "tau", std::make_shared<double>(), 0.5,
                    "normalized threshold");
        binder->add(std::string("--min-area"), "min-area", std::make_shared<int>(), 3,
                    "minimum island area, pixels");
        binder->add(std::string("--out"), "out", std::make_shared<std::string>(),
                    std::string("det.csv"), "detection catalog output");
        auto multi = std::make_shared<bool>();
        binder->add_flag(std::string("--multi"), "multi", multi,
                         "use the 20-threshold log ladder with split-driven refinement");
        sub->callback([binder, &baseline_cfg, &exit_code] {
            if (binder->finalize()) exit_code = run_detect_baseline(baseline_cfg);
        });
    }

    // evaluate
    {
        CLI::App* sub = app.add_subcommand("evaluate", "precision/recall/F1 against a truth catalog");
        auto binder = std::make_shared<OptionBinder>(sub, &eval_cfg);
        binder->add(std::string("--pred"), "pred", std::make_shared<std::string>(),
                    std::string("det.csv"), "detection catalog");
        binder->add(std::string("--truth"), "truth", std::make_shared<std::string>(), std::string(),
                    "truth catalog");
        binder->add(std::string("--r-tp"), "r-tp", std::make_shared<double>(), 0.4,
                    "matching radius, grid units");
        binder->add(std::string("--spacing"), "spacing", std::make_shared<double>(), 32.0,
                    "origin spacing, pixels per grid unit");
        binder->add(std::string("--sigma"), "sigma", std::make_shared<double>(), 1.0,
                    "noise rms for flux binning");
        binder->add(std::string("--flux-bins"), "flux-bins", std::make_shared<int>(), 0,
                    "per-bin recall over this many flux bins (0 = skip)");
        binder->add(std::string("--rtp-sweep"), "rtp-sweep", std::make_shared<std::string>(),
                    std::string(), "precision sweep lo:hi:count ('' = skip)");
        binder->add(std::string("--out"), "out", std::make_shared<std::string>(),
                    std::string("report.json"), "JSON report output");
        sub->callback([binder, &eval_cfg, &exit_code] {
            if (binder->finalize()) exit_code = run_evaluate(eval_cfg);
        });
    }

    // bench
    {
        CLI::App* sub = app.add_subcommand("bench", "per-step timing across an image-size ladder");
        auto binder = std::make_shared<OptionBinder>(sub, &bench_cfg);
        binder->add(std::string("--detector"), "detector", std::make_shared<std::string>(),
                    std::string("both"), "ppn | baseline | both");
        binder->add(std::string("--sizes"), "sizes", std::make_shared<std::string>(),
                    std::string("1024,2048,3072,4096"), "comma-separated image sizes");
        binder->add(std::string("--repeats"), "repeats", std::make_shared<int>(), 5,
                    "timed repeats per size");
        binder->add(std::string("--model"), "model", std::make_shared<std::string>(), std::string(),
                    "model file ('' = freshly built)");
        binder->add(std::string("--depth"), "depth", std::make_shared<int>(), 9,
                    "base depth when building fresh");
        binder->add(std::string("--r-nms"), "r-nms", std::make_shared<double>(), 0.35,
                    "suppression radius, grid units");
        binder->add(std::string("--c-nms"), "c-nms", std::make_shared<double>(), 0.8,
                    "confidence threshold");
        binder->add(std::string("--tau"), "tau", std::make_shared<double>(), 0.5,
                    "baseline threshold");
        binder->add(std::string("--min-area"), "min-area", std::make_shared<int>(), 3,
                    "baseline minimum island area");
        binder->add(std::string("--seed"), "seed", std::make_shared<uint64_t>(), uint64_t{0}, "RNG seed");
        binder->add(std::string("--out"), "out", std::make_shared<std::string>(),
                    std::string("timings.csv"), "timing CSV output");
        sub->callback([binder, &bench_cfg, &exit_code] {
            if (binder->finalize()) exit_code = run_bench(bench_cfg);
        });
    }

    // bench-report
    {
        CLI::App* sub = app.add_subcommand("bench-report", "summarize a timing CSV");
        auto binder = std::make_shared<OptionBinder>(sub, &report_cfg);
        binder->add(std::string("--in"), "in", std::make_shared<std::string>(),
                    std::string("timings.csv"), "timing CSV from bench");
        binder->add(std::string("--table"), "table", std::make_shared<std::string>(),
                    std::string("bench_table.csv"), "mean/std table output");
        binder->add(std::string("--curve"), "curve", std::make_shared<std::string>(),
                    std::string("bench_curve.csv"), "sqrt-scaled curve output");
        sub->callback([binder, &report_cfg, &exit_code] {
            if (binder->finalize()) exit_code = run_bench_report(report_cfg);
        });
    }

    register_experiment_command(app, exit_code);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return exit_code;
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace ppn::cli
