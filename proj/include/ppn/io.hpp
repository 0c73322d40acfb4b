#pragma once

#include <optional>
#include <string>

#include "ppn/core.hpp"

// File formats:
//  - Image (.ppn): magic "PPNIMG1\0", little-endian u32 width, u32 height,
//    then width*height little-endian 32-bit floats, row-major, top row first.
//  - Catalog (.csv): header "x,y,score", one record per line, positions with
//    6 decimal digits.
//  - Sidecar (<image>.meta.json): optional JSON with keys "rms_sigma"
//    (number) and "seed" (integer).

namespace ppn::io {

struct ImageMeta {
    std::optional<double> rms_sigma;
    std::optional<uint64_t> seed;
};

void write_image(const std::string& path, const Image& image);

/// Reads a .ppn image; when a sidecar exists its rms_sigma is attached.
/// Throws std::runtime_error naming the path on missing/corrupt files.
Image read_image(const std::string& path);

void write_meta(const std::string& image_path, const ImageMeta& meta);
std::optional<ImageMeta> read_meta(const std::string& image_path);

void write_catalog(const std::string& path, const Catalog& catalog);
Catalog read_catalog(const std::string& path, CatalogKind kind);

/// Sidecar path for an image file: "<name>.meta.json" next to "<name>.ppn".
std::string meta_path_for(const std::string& image_path);

}  // namespace ppn::io
