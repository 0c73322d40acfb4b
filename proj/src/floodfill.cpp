#include "ppn/floodfill.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ppn::floodfill {

std::vector<Island> find_islands(const Image& image, double tau, int min_area,
                                 Connectivity connectivity) {
    if (!(tau > 0.0 && tau < 1.0)) {
        throw std::invalid_argument("find_islands: tau must lie in (0, 1)");
    }
    if (min_area < 1) throw std::invalid_argument("find_islands: min_area must be >= 1");

    const int w = image.width, h = image.height;
    const float threshold = static_cast<float>(tau);
    std::vector<char> visited(image.pixel_count(), 0);
    std::vector<uint32_t> stack;
    std::vector<Island> islands;

    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            const uint32_t seed = static_cast<uint32_t>(row) * w + col;
            if (visited[seed] || image.values[seed] < threshold) continue;

            Island island;
            double sum_row = 0.0, sum_col = 0.0;
            visited[seed] = 1;
            stack.clear();
            stack.push_back(seed);
            while (!stack.empty()) {
                const uint32_t idx = stack.back();
                stack.pop_back();
                const int r = static_cast<int>(idx) / w;
                const int c = static_cast<int>(idx) % w;
                island.pixels.push_back({r, c});
                island.peak = std::max(island.peak, image.values[idx]);
                sum_row += r;
                sum_col += c;

                auto visit = [&](int nr, int nc) {
                    if (nr < 0 || nr >= h || nc < 0 || nc >= w) return;
                    const uint32_t nidx = static_cast<uint32_t>(nr) * w + nc;
                    if (visited[nidx] || image.values[nidx] < threshold) return;
                    visited[nidx] = 1;
                    stack.push_back(nidx);
                };
                visit(r - 1, c);
                visit(r + 1, c);
                visit(r, c - 1);
                visit(r, c + 1);
                if (connectivity == Connectivity::eight) {
                    visit(r - 1, c - 1);
                    visit(r - 1, c + 1);
                    visit(r + 1, c - 1);
                    visit(r + 1, c + 1);
                }
            }
            if (static_cast<int>(island.pixels.size()) < min_area) continue;
            const double n = static_cast<double>(island.pixels.size());
            island.centroid = {sum_col / n, sum_row / n};
            islands.push_back(std::move(island));
        }
    }
    return islands;
}

Catalog threshold_blob_detect(const Image& image, double tau, int min_area,
                              Connectivity connectivity) {
    Catalog catalog;
    catalog.kind = CatalogKind::detection;
    for (const Island& island : find_islands(image, tau, min_area, connectivity)) {
        catalog.records.push_back({island.centroid.x, island.centroid.y,
                                   static_cast<double>(island.peak)});
    }
    return catalog;
}

std::vector<double> default_threshold_ladder() {
    std::vector<double> taus(20);
    const double lo = std::log(0.1), hi = std::log(1.0);
    for (int k = 0; k < 20; ++k) {
        taus[k] = std::exp(lo + (hi - lo) * k / 19.0);
    }
    std::reverse(taus.begin(), taus.end());  // descending
    return taus;
}

Catalog multi_threshold_detect(const Image& image, const std::vector<double>& thresholds,
                               int min_area, Connectivity connectivity) {
    if (thresholds.empty()) {
        throw std::invalid_argument("multi_threshold_detect: threshold list is empty");
    }
    if (!std::is_sorted(thresholds.rbegin(), thresholds.rend())) {
        throw std::invalid_argument("multi_threshold_detect: thresholds must be descending");
    }

    // Peak pixel of every kept detection; an island at a lower threshold is
    // a parent of a kept detection exactly when it contains that pixel
    // (lower-threshold islands are supersets of higher-threshold ones).
    Catalog result;
    result.kind = CatalogKind::detection;
    std::vector<char> claimed(image.pixel_count(), 0);
    std::vector<Island> kept_islands;
    for (double tau : thresholds) {
        const double clamped = std::min(tau, 1.0 - 1e-9);
        for (Island& island : find_islands(image, clamped, min_area, connectivity)) {
            bool has_parent = false;
            for (const PixelCoord& p : island.pixels) {
                if (claimed[static_cast<size_t>(p.row) * image.width + p.col]) {
                    has_parent = true;
                    break;
                }
            }
            if (has_parent) continue;
            result.records.push_back({island.centroid.x, island.centroid.y,
                                      static_cast<double>(island.peak)});
            // Claim the island's peak pixel so larger islands at lower
            // thresholds recognise it as already detected.
            PixelCoord peak_pixel = island.pixels.front();
            float best = -1.0f;
            for (const PixelCoord& p : island.pixels) {
                const float v = image.at(p.col, p.row);
                if (v > best) {
                    best = v;
                    peak_pixel = p;
                }
            }
            claimed[static_cast<size_t>(peak_pixel.row) * image.width + peak_pixel.col] = 1;
        }
    }
    return result;
}

}  // namespace ppn::floodfill
