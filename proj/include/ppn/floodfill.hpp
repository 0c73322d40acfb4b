#pragma once

#include <cstdint>
#include <vector>

#include "ppn/core.hpp"

// The classical baseline: binarize at a threshold, extract connected islands
// with an iterative flood fill, drop islands below a minimum pixel area, and
// report each surviving island's unweighted centroid with its peak value as
// the score.

namespace ppn::floodfill {

struct PixelCoord {
    int row = 0;
    int col = 0;
};

struct Island {
    std::vector<PixelCoord> pixels;  // one 4- (or 8-) connected component
    Point2 centroid;                 // unweighted mean of pixel coordinates
    float peak = 0.0f;               // maximum pixel value in the island

    size_t area() const { return pixels.size(); }
};

enum class Connectivity { four, eight };

/// All connected components of {pixels >= tau} with area >= min_area.
/// The fill is iterative (explicit stack), so images where every pixel is
/// above threshold complete without deep recursion.
std::vector<Island> find_islands(const Image& image, double tau, int min_area,
                                 Connectivity connectivity = Connectivity::four);

/// Single-threshold detection: one PointRecord per surviving island, at its
/// centroid, score = island peak.
Catalog threshold_blob_detect(const Image& image, double tau, int min_area,
                              Connectivity connectivity = Connectivity::four);

/// Multi-threshold refinement, `thresholds` sorted descending. An island
/// found at a lower threshold is kept only when it contains no detection
/// from a higher threshold; islands that merely grow or merge previously
/// detected ones are discarded. This reproduces split-driven de-blending
/// only and is an approximation of the full multi-threshold procedure.
Catalog multi_threshold_detect(const Image& image, const std::vector<double>& thresholds,
                               int min_area, Connectivity connectivity = Connectivity::four);

/// 20 log-spaced thresholds from 0.1 to 1.0 inclusive, descending.
std::vector<double> default_threshold_ladder();

}  // namespace ppn::floodfill
