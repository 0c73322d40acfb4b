#include "ppn/core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ppn {

void validate_grid(const GridSpec& grid) {
    if (grid.patch_size <= 0 || grid.grid_m <= 0 || grid.grid_n <= 0) {
        throw std::invalid_argument("GridSpec: patch_size, grid_m and grid_n must be positive");
    }
    if (grid.patch_size % grid.grid_m != 0 || grid.patch_size % grid.grid_n != 0) {
        throw std::invalid_argument("GridSpec: patch_size must be divisible by grid_m and grid_n");
    }
}

Point2 origin_position(const GridSpec& grid, int i, int j) {
    if (i < 0 || i >= grid.grid_m || j < 0 || j >= grid.grid_n) {
        throw std::out_of_range("origin_position: origin index (" + std::to_string(i) + ", " +
                                std::to_string(j) + ") outside " + std::to_string(grid.grid_m) +
                                "x" + std::to_string(grid.grid_n) + " grid");
    }
    const double s = grid.spacing();
    return {(j + 0.5) * s, (i + 0.5) * s};
}

Point2 grid_to_pixel(const GridSpec& grid, int i, int j, double dx, double dy) {
    if (!std::isfinite(dx) || !std::isfinite(dy)) {
        throw std::invalid_argument("grid_to_pixel: offset components must be finite");
    }
    const Point2 origin = origin_position(grid, i, j);
    const double s = grid.spacing();
    return {origin.x + dx * s, origin.y + dy * s};
}

std::pair<float, float> normalize_image(Image& image) {
    if (image.values.empty()) return {0.0f, 0.0f};
    const auto [lo_it, hi_it] = std::minmax_element(image.values.begin(), image.values.end());
    const float lo = *lo_it, hi = *hi_it;
    if (hi > lo) {
        const float inv = 1.0f / (hi - lo);
        for (float& v : image.values) v = (v - lo) * inv;
    } else {
        std::fill(image.values.begin(), image.values.end(), 0.0f);
    }
    return {lo, hi};
}

bool is_normalized(const Image& image, float tol) {
    for (const float v : image.values) {
        if (v < -tol || v > 1.0f + tol) return false;
    }
    return true;
}

double mad_rms(const Image& image) {
    if (image.values.empty()) return 0.0;
    std::vector<float> work(image.values);
    const size_t mid = work.size() / 2;
    std::nth_element(work.begin(), work.begin() + mid, work.end());
    const float median = work[mid];
    for (float& v : work) v = std::fabs(v - median);
    std::nth_element(work.begin(), work.begin() + mid, work.end());
    return 1.4826 * work[mid];
}

void validate_image(const Image& image) {
    if (image.width <= 0 || image.height <= 0) {
        throw std::invalid_argument("Image: width and height must be positive");
    }
    if (image.values.size() != image.pixel_count()) {
        throw std::invalid_argument("Image: values.size() != width * height");
    }
    for (const float v : image.values) {
        if (!std::isfinite(v)) throw std::invalid_argument("Image: non-finite pixel value");
    }
}

}  // namespace ppn
