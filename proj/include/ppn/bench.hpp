#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "ppn/core.hpp"
#include "ppn/infer.hpp"
#include "ppn/net.hpp"

// Wall-clock timing of both detectors across a ladder of image sizes,
// reproducing the per-step compute-time breakdown. Timing uses the monotonic
// clock, starts after the model is built and the image resides in memory,
// and excludes file I/O. All work is synchronous on the CPU, so each step's
// cost is charged where it is incurred.

namespace ppn::bench {

struct TimingRecord {
    std::string detector;  // "ppn" or "baseline"
    int image_size = 0;
    std::string step;      // patching | cnn | nms | tbd | total | skipped
    int repeat_index = 0;
    double seconds = 0.0;
};

struct PpnDetector {
    const net::Model* model = nullptr;
    infer::InferConfig config;
};

struct BaselineDetector {
    double tau = 0.5;
    int min_area = 3;
};

using Detector = std::variant<PpnDetector, BaselineDetector>;

std::string detector_name(const Detector& detector);

/// Times one detection, returning one record per pipeline step plus "total".
std::vector<TimingRecord> time_detection(const Detector& detector, const Image& image,
                                         int repeat_index = 0);

struct ScalingConfig {
    std::vector<int> sizes = {1024, 2048, 3072, 4096};
    int repeats = 5;
    uint64_t seed = 0;
    double density = 135.0 / (1024.0 * 1024.0);  // sources per pixel
    bool warmup = true;                          // one untimed detection per size
};

/// Simulates one image per size (source count scaled with pixel area), runs
/// `repeats` timed detections per detector and size, and returns all
/// records. Runs are strictly sequential. An out-of-memory size yields a
/// "skipped" diagnostic record and the run continues.
std::vector<TimingRecord> scaling_run(const std::vector<Detector>& detectors,
                                      const ScalingConfig& config);

struct StepSummary {
    std::string detector;
    int image_size = 0;
    std::string step;
    int count = 0;
    double mean = 0.0;
    double stddev = 0.0;
};

std::vector<StepSummary> summarize(const std::vector<TimingRecord>& records);

/// CSV with header "detector,size,step,repeat,seconds".
void write_timings_csv(const std::string& path, const std::vector<TimingRecord>& records);
std::vector<TimingRecord> read_timings_csv(const std::string& path);

/// Per-size mean +/- std table plus a square-root-scaled total-time curve,
/// ready for plotting.
void write_report(const std::string& table_path, const std::string& curve_path,
                  const std::vector<TimingRecord>& records);

}  // namespace ppn::bench
