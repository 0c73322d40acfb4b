#include "ppn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <new>
#include <stdexcept>

#include "ppn/floodfill.hpp"
#include "ppn/skysim.hpp"

namespace ppn::bench {

namespace {
double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}
}  // namespace

std::string detector_name(const Detector& detector) {
    return std::holds_alternative<PpnDetector>(detector) ? "ppn" : "baseline";
}

std::vector<TimingRecord> time_detection(const Detector& detector, const Image& image,
                                         int repeat_index) {
    std::vector<TimingRecord> records;
    const std::string name = detector_name(detector);
    if (const auto* ppn = std::get_if<PpnDetector>(&detector)) {
        infer::StepTimes times;
        infer::detect_timed(*ppn->model, image, ppn->config, times);
        records.push_back({name, image.width, "patching", repeat_index, times.patching});
        records.push_back({name, image.width, "cnn", repeat_index, times.cnn});
        records.push_back({name, image.width, "nms", repeat_index, times.nms});
        records.push_back({name, image.width, "total", repeat_index, times.total});
    } else {
        const auto& baseline = std::get<BaselineDetector>(detector);
        const auto t0 = std::chrono::steady_clock::now();
        floodfill::threshold_blob_detect(image, baseline.tau, baseline.min_area);
        const double elapsed = seconds_since(t0);
        records.push_back({name, image.width, "tbd", repeat_index, elapsed});
        records.push_back({name, image.width, "total", repeat_index, elapsed});
    }
    return records;
}

std::vector<TimingRecord> scaling_run(const std::vector<Detector>& detectors,
                                      const ScalingConfig& config) {
    if (config.repeats < 1) throw std::invalid_argument("scaling_run: repeats must be >= 1");
    std::vector<TimingRecord> records;
    for (size_t size_idx = 0; size_idx < config.sizes.size(); ++size_idx) {
        const int size = config.sizes[size_idx];
        if (size <= 0) throw std::invalid_argument("scaling_run: sizes must be positive");
        try {
            skysim::SimConfig sim;
            sim.image_size = size;
            sim.n_sources = static_cast<int>(std::llround(config.density * size * size));
            sim.seed = config.seed + size_idx;
            const skysim::SimResult data = skysim::simulate(sim);
            for (const Detector& detector : detectors) {
                if (config.warmup) {
                    time_detection(detector, data.image, -1);  // discard: first-touch effects
                }
                for (int rep = 0; rep < config.repeats; ++rep) {
                    const auto batch = time_detection(detector, data.image, rep);
                    records.insert(records.end(), batch.begin(), batch.end());
                }
            }
        } catch (const std::bad_alloc&) {
            for (const Detector& detector : detectors) {
                records.push_back({detector_name(detector), size, "skipped", 0, -1.0});
            }
        }
    }
    return records;
}

std::vector<StepSummary> summarize(const std::vector<TimingRecord>& records) {
    std::map<std::tuple<std::string, int, std::string>, std::vector<double>> groups;
    for (const TimingRecord& r : records) {
        if (r.step == "skipped") continue;
        groups[{r.detector, r.image_size, r.step}].push_back(r.seconds);
    }
    std::vector<StepSummary> summaries;
    for (const auto& [key, values] : groups) {
        StepSummary s;
        s.detector = std::get<0>(key);
        s.image_size = std::get<1>(key);
        s.step = std::get<2>(key);
        s.count = static_cast<int>(values.size());
        double sum = 0.0;
        for (double v : values) sum += v;
        s.mean = sum / s.count;
        double var = 0.0;
        for (double v : values) var += (v - s.mean) * (v - s.mean);
        s.stddev = s.count > 1 ? std::sqrt(var / (s.count - 1)) : 0.0;
        summaries.push_back(std::move(s));
    }
    return summaries;
}

void write_timings_csv(const std::string& path, const std::vector<TimingRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_timings_csv: cannot open " + path);
    out << "detector,size,step,repeat,seconds\n";
    char line[160];
    for (const TimingRecord& r : records) {
        std::snprintf(line, sizeof(line), "%s,%d,%s,%d,%.9f\n", r.detector.c_str(), r.image_size,
                      r.step.c_str(), r.repeat_index, r.seconds);
        out << line;
    }
}

std::vector<TimingRecord> read_timings_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_timings_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("detector,size,step,repeat,seconds", 0) != 0) {
        throw std::runtime_error("read_timings_csv: bad header in " + path);
    }
    std::vector<TimingRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        char detector[32], step[32];
        TimingRecord r;
        if (std::sscanf(line.c_str(), "%31[^,],%d,%31[^,],%d,%lf", detector, &r.image_size, step,
                        &r.repeat_index, &r.seconds) != 5) {
            throw std::runtime_error("read_timings_csv: malformed line in " + path);
        }
        r.detector = detector;
        r.step = step;
        records.push_back(std::move(r));
    }
    return records;
}

void write_report(const std::string& table_path, const std::string& curve_path,
                  const std::vector<TimingRecord>& records) {
    const std::vector<StepSummary> summaries = summarize(records);

    std::ofstream table(table_path);
    if (!table) throw std::runtime_error("write_report: cannot open " + table_path);
    table << "detector,size,step,count,mean_seconds,std_seconds\n";
    char line[200];
    for (const StepSummary& s : summaries) {
        std::snprintf(line, sizeof(line), "%s,%d,%s,%d,%.9f,%.9f\n", s.detector.c_str(),
                      s.image_size, s.step.c_str(), s.count, s.mean, s.stddev);
        table << line;
    }

    std::ofstream curve(curve_path);
    if (!curve) throw std::runtime_error("write_report: cannot open " + curve_path);
    curve << "detector,size,mean_total_seconds,sqrt_mean_total\n";
    for (const StepSummary& s : summaries) {
        if (s.step != "total") continue;
        std::snprintf(line, sizeof(line), "%s,%d,%.9f,%.9f\n", s.detector.c_str(), s.image_size,
                      s.mean, std::sqrt(s.mean));
        curve << line;
    }
}

}  // namespace ppn::bench
