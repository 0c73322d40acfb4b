#include "ppn/net.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace ppn::net {

double confidence_bias_init(double pi) {
    return -std::log((1.0 - pi) / pi);
}

Model build(const NetConfig& config) {
    return Model(config);
}

NetOutput forward(const Model& model, const Image& patch) {
    std::vector<const Image*> one{&patch};
    return forward_batch(model, one).front();
}

std::vector<NetOutput> split_batch_output(const BatchOutput<float>& out) {
    const size_t plane = static_cast<size_t>(out.m) * out.n;
    std::vector<NetOutput> results(out.batch);
    for (int s = 0; s < out.batch; ++s) {
        NetOutput& r = results[s];
        r.m = out.m;
        r.n = out.n;
        r.confidence.assign(out.conf.begin() + s * plane, out.conf.begin() + (s + 1) * plane);
        r.regression.resize(plane * 2);
        const float* dx = out.reg.data() + s * plane * 2;           // channel 0
        const float* dy = out.reg.data() + s * plane * 2 + plane;   // channel 1
        for (size_t i = 0; i < plane; ++i) {
            r.regression[i * 2 + 0] = dx[i];
            r.regression[i * 2 + 1] = dy[i];
        }
    }
    return results;
}

std::vector<NetOutput> forward_batch(const Model& model, const std::vector<const Image*>& patches) {
    if (patches.empty()) return {};
    const int size = model.config().input_size;
    std::vector<float> input;
    input.reserve(patches.size() * static_cast<size_t>(size) * size);
    for (const Image* patch : patches) {
        if (patch->width != size || patch->height != size) {
            throw std::invalid_argument("forward: patch dimensions do not match the model input size");
        }
        if (!is_normalized(*patch)) {
            throw std::invalid_argument("forward: patch values must lie in [0, 1]");
        }
        input.insert(input.end(), patch->values.begin(), patch->values.end());
    }
    Workspace<float> ws;
    const BatchOutput<float> out =
        model.forward(input.data(), static_cast<int>(patches.size()), Mode::eval, ws);
    return split_batch_output(out);
}

// -- config JSON ---------------------------------------------------------------

namespace {

nlohmann::json config_to_json(const NetConfig& c) {
    return {
        {"base_depth", c.base_depth},
        {"input_size", c.input_size},
        {"grid", {{"patch_size", c.grid.patch_size}, {"grid_m", c.grid.grid_m}, {"grid_n", c.grid.grid_n}}},
        {"channels", c.channels},
        {"blocks", c.blocks},
        {"head_channels", c.head_channels},
        {"pi", c.pi},
        {"dropout_rate", c.dropout_rate},
        {"seed", c.seed},
    };
}

NetConfig config_from_json(const nlohmann::json& j) {
    NetConfig c;
    c.base_depth = j.at("base_depth").get<int>();
    c.input_size = j.at("input_size").get<int>();
    const auto& g = j.at("grid");
    c.grid.patch_size = g.at("patch_size").get<int>();
    c.grid.grid_m = g.at("grid_m").get<int>();
    c.grid.grid_n = g.at("grid_n").get<int>();
    c.channels = j.value("channels", std::vector<int>{});
    c.blocks = j.value("blocks", std::vector<int>{});
    c.head_channels = j.value("head_channels", 128);
    c.pi = j.value("pi", 0.01);
    c.dropout_rate = j.value("dropout_rate", 0.2);
    c.seed = j.value("seed", uint64_t{0});
    return c;
}

constexpr std::array<char, 8> kModelMagic = {'P', 'P', 'N', 'M', 'D', 'L', '1', '\0'};

void put_u32(std::ostream& out, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

uint32_t get_u32(std::istream& in, const std::string& context) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error("load: truncated model file while reading " + context);
    }
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_entry(std::ostream& out, const std::string& name, const std::vector<float>& data) {
    const uint16_t name_len = static_cast<uint16_t>(name.size());
    char hdr[2] = {static_cast<char>(name_len & 0xff), static_cast<char>(name_len >> 8)};
    out.write(hdr, 2);
    out.write(name.data(), name_len);
    out.put(1);  // ndim: arrays are stored flat
    put_u32(out, static_cast<uint32_t>(data.size()));
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
}

}  // namespace

std::string net_config_to_json_string(const NetConfig& config) {
    return config_to_json(config).dump();
}

NetConfig net_config_from_json_string(const std::string& text) {
    return config_from_json(nlohmann::json::parse(text));
}

void save(Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save: cannot open " + path);
    out.write(kModelMagic.data(), kModelMagic.size());
    const std::string cfg = config_to_json(model.config()).dump();
    put_u32(out, static_cast<uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    uint32_t count = 0;
    model.for_each_param([&](const std::string&, std::vector<float>&, std::vector<float>&) { ++count; });
    model.for_each_buffer([&](const std::string&, std::vector<float>&) { ++count; });
    put_u32(out, count);
    model.for_each_param([&](const std::string& name, std::vector<float>& d, std::vector<float>&) {
        write_entry(out, name, d);
    });
    model.for_each_buffer([&](const std::string& name, std::vector<float>& d) {
        write_entry(out, name, d);
    });
    if (!out) throw std::runtime_error("save: write failed for " + path);
}

Model load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load: cannot open " + path);
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kModelMagic) {
        throw std::runtime_error("load: " + path + " is not a model file (bad magic)");
    }
    const uint32_t cfg_len = get_u32(in, "config length");
    std::string cfg_text(cfg_len, '\0');
    if (!in.read(cfg_text.data(), cfg_len)) {
        throw std::runtime_error("load: truncated model file while reading config");
    }
    NetConfig config;
    try {
        config = config_from_json(nlohmann::json::parse(cfg_text));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("load: invalid config JSON: ") + e.what());
    }
    Model model(config);

    const uint32_t count = get_u32(in, "entry count");
    std::map<std::string, std::vector<float>> entries;
    for (uint32_t i = 0; i < count; ++i) {
        unsigned char len_bytes[2];
        if (!in.read(reinterpret_cast<char*>(len_bytes), 2)) {
            throw std::runtime_error("load: truncated model file at entry " + std::to_string(i));
        }
        const uint16_t name_len = static_cast<uint16_t>(len_bytes[0] | (len_bytes[1] << 8));
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) {
            throw std::runtime_error("load: truncated model file at entry " + std::to_string(i));
        }
        const int ndim = in.get();
        if (ndim != 1) {
            throw std::runtime_error("load: unsupported shape rank for entry '" + name + "'");
        }
        const uint32_t size = get_u32(in, "shape of '" + name + "'");
        std::vector<float> data(size);
        if (!in.read(reinterpret_cast<char*>(data.data()),
                     static_cast<std::streamsize>(size * sizeof(float)))) {
            throw std::runtime_error("load: truncated data for entry '" + name + "'");
        }
        if (!entries.emplace(name, std::move(data)).second) {
            throw std::runtime_error("load: duplicate entry '" + name + "'");
        }
    }

    auto fill = [&](const std::string& name, std::vector<float>& dst) {
        auto it = entries.find(name);
        if (it == entries.end()) {
            throw std::runtime_error("load: model file is missing entry '" + name + "'");
        }
        if (it->second.size() != dst.size()) {
            throw std::runtime_error("load: entry '" + name + "' has " +
                                     std::to_string(it->second.size()) + " values, expected " +
                                     std::to_string(dst.size()) +
                                     " (config/grid mismatch with the stored parameters)");
        }
        dst = std::move(it->second);
        entries.erase(it);
    };
    model.for_each_param([&](const std::string& name, std::vector<float>& d, std::vector<float>&) {
        fill(name, d);
    });
    model.for_each_buffer([&](const std::string& name, std::vector<float>& d) { fill(name, d); });
    if (!entries.empty()) {
        throw std::runtime_error("load: unexpected entry '" + entries.begin()->first + "'");
    }
    return model;
}

}  // namespace ppn::net
