#pragma once

#include <vector>

#include "ppn/core.hpp"
#include "ppn/net.hpp"

// Full-image detection: patch the image, run batched forward passes, decode
// proposals into image coordinates, and remove duplicates with a single
// global non-maximum suppression pass over the combined proposals.
//
// Unit convention (the most consequential one in this project): r_nms, like
// r_near and r_tp, is measured in grid units, i.e. multiples of the origin
// spacing (32 px for the default 224-px patch with a 7x7 grid). Pixel radii
// are obtained by multiplying with GridSpec::spacing().

namespace ppn::infer {

struct InferConfig {
    int overlap = 4;          // pixels between neighbouring patches
    double r_nms = 0.35;      // suppression radius, grid units
    double c_nms = 0.8;       // confidence threshold
    int batch_size = 16;      // patches per forward call
};

struct Proposal {
    double x = 0.0;
    double y = 0.0;
    double confidence = 0.0;
};

using ProposalSet = std::vector<Proposal>;

/// One proposal per origin: patch_origin + origin center + offset * spacing.
ProposalSet decode(const net::NetOutput& output, const GridSpec& grid, Point2 patch_origin);

/// The suppression procedure: drop proposals below c_nms, then repeatedly
/// take the most confident remaining point, keep it, and delete every point
/// strictly within pixel radius r_nms * spacing of it. Confidence ties break
/// toward earlier insertion order.
ProposalSet nms(const ProposalSet& points, double r_nms, double c_nms, double spacing);

/// Patch + forward + decode, concatenated over all patches in a stable
/// order. No suppression; detect() = nms(propose()).
ProposalSet propose(const net::Model& model, const Image& image, const InferConfig& config);

/// Full detection pipeline; deterministic for a fixed model and image.
Catalog detect(const net::Model& model, const Image& image, const InferConfig& config);

/// Wall-clock seconds per pipeline step, for the benchmark harness.
struct StepTimes {
    double patching = 0.0;
    double cnn = 0.0;   // forward passes + decoding
    double nms = 0.0;
    double total = 0.0;
};

Catalog detect_timed(const net::Model& model, const Image& image, const InferConfig& config,
                     StepTimes& times);

Catalog to_catalog(const ProposalSet& points);

}  // namespace ppn::infer
