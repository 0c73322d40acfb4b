#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

// Shared domain types and origin-grid geometry.
//
// Coordinate convention used everywhere in this project: x is the column
// direction, y the row direction, origin at the top-left pixel. Pixel values
// are point samples taken at integer coordinates, so sub-pixel positions are
// plain real numbers in the same frame.

namespace ppn {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

/// A 2-D grid of flux values plus pixel geometry metadata.
/// `values` is row-major, top row first; `values.size() == width * height`.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> values;
    /// Background rms in flux units, when known (e.g. by construction).
    std::optional<double> rms_sigma;

    float at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
    float& at(int x, int y) { return values[static_cast<size_t>(y) * width + x]; }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

/// One point record: a truth source (score = peak flux J) or a detection
/// (score = confidence in (0,1)).
struct PointRecord {
    double x = 0.0;
    double y = 0.0;
    double score = 0.0;
};

enum class CatalogKind { truth, detection };

struct Catalog {
    CatalogKind kind = CatalogKind::truth;
    std::vector<PointRecord> records;

    size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
};

/// Origin-lattice geometry linking patch pixels to the m x n origin grid.
///
/// Origins sit at cell centers: origin (i, j) is at pixel
/// ((j + 0.5) * spacing, (i + 0.5) * spacing) within the patch. Offsets and
/// radii are expressed in grid units: an offset of magnitude 1 equals exactly
/// one origin spacing, so offset 1 from an origin lands on its neighbour.
struct GridSpec {
    int patch_size = 224;
    int grid_m = 7;
    int grid_n = 7;

    double spacing() const { return static_cast<double>(patch_size) / grid_m; }
};

/// Throws std::invalid_argument when the grid violates its invariants
/// (non-positive sizes or patch_size not divisible by grid_m/grid_n).
void validate_grid(const GridSpec& grid);

/// Pixel-frame center of origin (i, j). i is the row index, j the column.
/// Throws std::out_of_range for indices outside the grid.
Point2 origin_position(const GridSpec& grid, int i, int j);

/// Denormalizes a grid-unit offset from origin (i, j) back to pixel
/// coordinates: origin_position + offset * spacing.
Point2 grid_to_pixel(const GridSpec& grid, int i, int j, double dx, double dy);

/// Linearly rescales values so min -> 0 and max -> 1. A constant image maps
/// to all zeros. Returns the (min, max) range that was removed.
std::pair<float, float> normalize_image(Image& image);

/// True when every value already lies in [0, 1] (within `tol`).
bool is_normalized(const Image& image, float tol = 1e-4f);

/// Robust background rms estimate for externally supplied images:
/// 1.4826 * median(|v - median(v)|).
double mad_rms(const Image& image);

/// Throws std::invalid_argument when an image violates its invariants
/// (size mismatch or non-finite values).
void validate_image(const Image& image);

}  // namespace ppn
