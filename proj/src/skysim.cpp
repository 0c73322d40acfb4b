#include "ppn/skysim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ppn::skysim {

namespace {
constexpr double kFwhmToSigma = 2.0 * 1.1774100225154747;  // 2*sqrt(2*ln 2) = 2.3548...
constexpr double kRenderRadiusSigmas = 5.0;
}  // namespace

double GaussianSampler::uniform01() {
    return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
}

double GaussianSampler::gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller on (0,1] x [0,1) uniforms.
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

std::vector<double> flux_bins(int n_bins, double sigma) {
    if (n_bins < 1) throw std::invalid_argument("flux_bins: n_bins must be >= 1");
    if (!(sigma > 0.0)) throw std::invalid_argument("flux_bins: sigma must be positive");
    std::vector<double> bins(n_bins);
    for (int k = 0; k < n_bins; ++k) {
        bins[k] = (1.0 / 3.0 + k / 3.0) * sigma;
    }
    return bins;
}

void render_source(Image& image, double x, double y, double peak, double fwhm) {
    const double sigma = fwhm / kFwhmToSigma;
    const double radius = kRenderRadiusSigmas * sigma;
    const int x_lo = std::max(0, static_cast<int>(std::ceil(x - radius)));
    const int x_hi = std::min(image.width - 1, static_cast<int>(std::floor(x + radius)));
    const int y_lo = std::max(0, static_cast<int>(std::ceil(y - radius)));
    const int y_hi = std::min(image.height - 1, static_cast<int>(std::floor(y + radius)));
    const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    for (int iy = y_lo; iy <= y_hi; ++iy) {
        const double dy = iy - y;
        for (int ix = x_lo; ix <= x_hi; ++ix) {
            const double dx = ix - x;
            const double r_sq = dx * dx + dy * dy;
            if (r_sq > radius * radius) continue;
            image.at(ix, iy) += static_cast<float>(peak * std::exp(-r_sq * inv_two_sigma_sq));
        }
    }
}

SimResult simulate(const SimConfig& config) {
    if (config.image_size <= 0) throw std::invalid_argument("simulate: image_size must be positive");
    if (config.n_sources < 0) throw std::invalid_argument("simulate: n_sources must be >= 0");
    if (!(config.sigma > 0.0)) throw std::invalid_argument("simulate: sigma must be positive");
    if (!(config.psf_fwhm > 0.0)) throw std::invalid_argument("simulate: psf_fwhm must be positive");
    const double stamp = 2.0 * kRenderRadiusSigmas * config.psf_fwhm / kFwhmToSigma;
    if (config.n_sources > 0 && config.image_size < stamp) {
        throw std::invalid_argument("simulate: image too small to hold the point-spread profile");
    }

    Image image;
    image.width = config.image_size;
    image.height = config.image_size;
    image.values.resize(image.pixel_count());
    image.rms_sigma = config.sigma;

    GaussianSampler rng(config.seed);
    for (float& v : image.values) {
        v = static_cast<float>(config.sigma * rng.gaussian());
    }

    const std::vector<double> bins = flux_bins(config.n_bins, config.sigma);
    Catalog truth;
    truth.kind = CatalogKind::truth;
    truth.records.reserve(config.n_sources);
    const double min_sep_sq = config.psf_fwhm * config.psf_fwhm;
    for (int s = 0; s < config.n_sources; ++s) {
        double x = 0.0, y = 0.0;
        for (int attempt = 0;; ++attempt) {
            x = rng.uniform01() * config.image_size;
            y = rng.uniform01() * config.image_size;
            if (config.allow_overlap) break;
            bool clear = true;
            for (const PointRecord& r : truth.records) {
                const double dx = r.x - x, dy = r.y - y;
                if (dx * dx + dy * dy < min_sep_sq) {
                    clear = false;
                    break;
                }
            }
            if (clear) break;
            if (attempt >= 10000) {
                throw std::runtime_error("simulate: cannot place non-overlapping sources at this density");
            }
        }
        const double peak = bins[s % config.n_bins];  // round-robin flux assignment
        render_source(image, x, y, peak, config.psf_fwhm);
        truth.records.push_back({x, y, peak});
    }

    normalize_image(image);
    return {std::move(image), std::move(truth)};
}

std::vector<Patch> patchify(const Image& image, int patch_size, int overlap) {
    if (patch_size <= 0 || patch_size > std::min(image.width, image.height)) {
        throw std::invalid_argument("patchify: patch_size must be positive and fit in the image");
    }
    if (overlap < 0 || overlap >= patch_size) {
        throw std::invalid_argument("patchify: overlap must satisfy 0 <= overlap < patch_size");
    }
    const int stride = patch_size - overlap;
    auto starts = [&](int extent) {
        std::vector<int> s;
        const int last = extent - patch_size;
        for (int pos = 0;; pos += stride) {
            s.push_back(std::min(pos, last));
            if (pos >= last) break;
        }
        return s;
    };
    const std::vector<int> xs = starts(image.width);
    const std::vector<int> ys = starts(image.height);

    std::vector<Patch> patches;
    patches.reserve(xs.size() * ys.size());
    for (const int y0 : ys) {
        for (const int x0 : xs) {
            Patch patch;
            patch.x0 = x0;
            patch.y0 = y0;
            patch.image.width = patch_size;
            patch.image.height = patch_size;
            patch.image.rms_sigma = image.rms_sigma;
            patch.image.values.resize(static_cast<size_t>(patch_size) * patch_size);
            for (int row = 0; row < patch_size; ++row) {
                const float* src = image.values.data() + static_cast<size_t>(y0 + row) * image.width + x0;
                std::copy(src, src + patch_size,
                          patch.image.values.data() + static_cast<size_t>(row) * patch_size);
            }
            patches.push_back(std::move(patch));
        }
    }
    return patches;
}

Catalog crop_to_patch(const Catalog& truth, int x0, int y0, int patch_size) {
    Catalog cropped;
    cropped.kind = truth.kind;
    for (const PointRecord& r : truth.records) {
        const double px = r.x - x0;
        const double py = r.y - y0;
        if (px >= 0.0 && px < patch_size && py >= 0.0 && py < patch_size) {
            cropped.records.push_back({px, py, r.score});
        }
    }
    return cropped;
}

}  // namespace ppn::skysim
