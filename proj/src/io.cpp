#include "ppn/io.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ppn::io {

namespace {

constexpr std::array<char, 8> kImageMagic = {'P', 'P', 'N', 'I', 'M', 'G', '1', '\0'};

// The on-disk format is little-endian; all supported targets are too, so
// plain byte copies of u32/f32 are exact.
static_assert(sizeof(float) == 4);

void put_u32(std::ostream& out, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error("read_image: truncated header in " + path);
    }
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_image(const std::string& path, const Image& image) {
    validate_image(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_image: cannot open " + path);
    out.write(kImageMagic.data(), kImageMagic.size());
    put_u32(out, static_cast<uint32_t>(image.width));
    put_u32(out, static_cast<uint32_t>(image.height));
    out.write(reinterpret_cast<const char*>(image.values.data()),
              static_cast<std::streamsize>(image.values.size() * sizeof(float)));
    if (!out) throw std::runtime_error("write_image: write failed for " + path);
}

Image read_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_image: cannot open " + path);
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kImageMagic) {
        throw std::runtime_error("read_image: bad magic in " + path);
    }
    Image image;
    image.width = static_cast<int>(get_u32(in, path));
    image.height = static_cast<int>(get_u32(in, path));
    if (image.width <= 0 || image.height <= 0 || image.pixel_count() > (1ull << 33)) {
        throw std::runtime_error("read_image: implausible dimensions in " + path);
    }
    image.values.resize(image.pixel_count());
    if (!in.read(reinterpret_cast<char*>(image.values.data()),
                 static_cast<std::streamsize>(image.values.size() * sizeof(float)))) {
        throw std::runtime_error("read_image: truncated pixel data in " + path);
    }
    if (auto meta = read_meta(path)) {
        image.rms_sigma = meta->rms_sigma;
    }
    return image;
}

std::string meta_path_for(const std::string& image_path) {
    std::filesystem::path p(image_path);
    p.replace_extension();
    return p.string() + ".meta.json";
}

void write_meta(const std::string& image_path, const ImageMeta& meta) {
    nlohmann::json j;
    if (meta.rms_sigma) j["rms_sigma"] = *meta.rms_sigma;
    if (meta.seed) j["seed"] = *meta.seed;
    const std::string path = meta_path_for(image_path);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_meta: cannot open " + path);
    out << j.dump(2) << "\n";
}

std::optional<ImageMeta> read_meta(const std::string& image_path) {
    const std::string path = meta_path_for(image_path);
    std::ifstream in(path);
    if (!in) return std::nullopt;
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("read_meta: invalid JSON in " + path + ": " + e.what());
    }
    ImageMeta meta;
    if (j.contains("rms_sigma")) meta.rms_sigma = j["rms_sigma"].get<double>();
    if (j.contains("seed")) meta.seed = j["seed"].get<uint64_t>();
    return meta;
}

void write_catalog(const std::string& path, const Catalog& catalog) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_catalog: cannot open " + path);
    out << "x,y,score\n";
    char line[128];
    for (const PointRecord& r : catalog.records) {
        std::snprintf(line, sizeof(line), "%.6f,%.6f,%.9g\n", r.x, r.y, r.score);
        out << line;
    }
    if (!out) throw std::runtime_error("write_catalog: write failed for " + path);
}

Catalog read_catalog(const std::string& path, CatalogKind kind) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_catalog: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("x,y,score", 0) != 0) {
        throw std::runtime_error("read_catalog: missing 'x,y,score' header in " + path);
    }
    Catalog catalog;
    catalog.kind = kind;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        PointRecord r;
        char trailing = 0;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf%c", &r.x, &r.y, &r.score, &trailing) < 3) {
            throw std::runtime_error("read_catalog: malformed line " + std::to_string(line_no) +
                                     " in " + path);
        }
        catalog.records.push_back(r);
    }
    return catalog;
}

}  // namespace ppn::io
