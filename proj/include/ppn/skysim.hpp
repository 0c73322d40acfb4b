#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "ppn/core.hpp"

// Synthetic labeled survey images: Gaussian background noise plus circular
// Gaussian point sources with peak fluxes drawn from a fixed ladder of
// sigma multiples. This is the desk-scale stand-in for an interferometric
// simulation; the flux-bin scheme, source density and per-image [0,1]
// normalization are preserved.

namespace ppn::skysim {

struct SimConfig {
    int image_size = 1024;   // pixels per side
    int n_sources = 135;
    int n_bins = 30;
    double sigma = 1.0;      // background rms, flux units
    double psf_fwhm = 3.0;   // point-spread FWHM, pixels
    uint64_t seed = 0;
    bool allow_overlap = true;
};

struct SimResult {
    Image image;     // normalized to [0, 1]
    Catalog truth;   // pre-normalization peak fluxes, exact injected positions
};

/// Peak-flux ladder J_k = (1/3 + k/3) * sigma for k in [0, n_bins).
/// With 30 bins and sigma 1 this spans 1/3 to 10 in steps of 1/3.
std::vector<double> flux_bins(int n_bins, double sigma);

/// Adds a circular Gaussian profile with the given peak at a sub-pixel
/// position. The profile is truncated at 5 standard deviations, keeping the
/// integrated flux within 0.01% of peak * 2*pi*(fwhm/2.3548)^2.
void render_source(Image& image, double x, double y, double peak, double fwhm);

/// Generates noise + sources per the config, normalizes the image to [0, 1]
/// and returns the truth catalog. Pure function of the config: identical
/// configs (including seed) give bit-identical results.
SimResult simulate(const SimConfig& config);

struct Patch {
    Image image;
    int x0 = 0;  // pixel position of the patch's top-left corner
    int y0 = 0;
};

/// Tiles the image with stride = patch_size - overlap. The final patch in
/// each dimension is clamped so its far edge meets the image edge; patches
/// are never padded. Every pixel is covered by at least one patch.
std::vector<Patch> patchify(const Image& image, int patch_size, int overlap);

/// Truth records whose positions fall inside the patch, translated into the
/// patch frame.
Catalog crop_to_patch(const Catalog& truth, int x0, int y0, int patch_size);

/// Deterministic N(0,1) sampler backed by mt19937_64 (Box-Muller, cached
/// second deviate). Used instead of std::normal_distribution so the draw
/// sequence is pinned by this code rather than the standard library build.
class GaussianSampler {
public:
    explicit GaussianSampler(uint64_t seed) : rng_(seed) {}
    double uniform01();  // in [0, 1)
    double gaussian();

private:
    std::mt19937_64 rng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ppn::skysim
