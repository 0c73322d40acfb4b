#include "ppn/infer.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <stdexcept>

#include "ppn/skysim.hpp"

namespace ppn::infer {

namespace {
double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}
}  // namespace

ProposalSet decode(const net::NetOutput& output, const GridSpec& grid, Point2 patch_origin) {
    validate_grid(grid);
    if (output.m != grid.grid_m || output.n != grid.grid_n) {
        throw std::invalid_argument("decode: output shape does not match the grid");
    }
    const double spacing = grid.spacing();
    ProposalSet points;
    points.reserve(static_cast<size_t>(output.m) * output.n);
    for (int i = 0; i < output.m; ++i) {
        for (int j = 0; j < output.n; ++j) {
            const Point2 origin = origin_position(grid, i, j);
            points.push_back({patch_origin.x + origin.x + output.dx(i, j) * spacing,
                              patch_origin.y + origin.y + output.dy(i, j) * spacing,
                              static_cast<double>(output.conf(i, j))});
        }
    }
    return points;
}

ProposalSet nms(const ProposalSet& points, double r_nms, double c_nms, double spacing) {
    std::vector<int> order;
    order.reserve(points.size());
    for (int i = 0; i < static_cast<int>(points.size()); ++i) {
        if (points[i].confidence >= c_nms) order.push_back(i);
    }
    // Descending confidence; stable so equal confidences keep insertion
    // order. Walking this order and skipping suppressed entries is exactly
    // the repeated-argmax loop.
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return points[a].confidence > points[b].confidence;
    });

    const double radius_sq = (r_nms * spacing) * (r_nms * spacing);
    std::vector<char> alive(points.size(), 1);
    ProposalSet kept;
    for (const int i : order) {
        if (!alive[i]) continue;
        kept.push_back(points[i]);
        for (const int j : order) {
            if (!alive[j]) continue;
            const double dx = points[j].x - points[i].x;
            const double dy = points[j].y - points[i].y;
            if (dx * dx + dy * dy < radius_sq) alive[j] = 0;
        }
        alive[i] = 0;  // removal radius includes the selected point itself
    }
    return kept;
}

ProposalSet propose(const net::Model& model, const Image& image, const InferConfig& config) {
    const GridSpec& grid = model.config().grid;
    if (!is_normalized(image)) {
        throw std::invalid_argument("propose: image must be normalized to [0, 1]");
    }
    const std::vector<skysim::Patch> patches = skysim::patchify(image, grid.patch_size, config.overlap);

    ProposalSet all;
    all.reserve(patches.size() * static_cast<size_t>(grid.grid_m) * grid.grid_n);
    const int batch = std::max(1, config.batch_size);
    for (size_t begin = 0; begin < patches.size(); begin += batch) {
        const size_t end = std::min(patches.size(), begin + batch);
        std::vector<const Image*> views;
        views.reserve(end - begin);
        for (size_t k = begin; k < end; ++k) views.push_back(&patches[k].image);
        const std::vector<net::NetOutput> outputs = net::forward_batch(model, views);
        for (size_t k = begin; k < end; ++k) {
            const skysim::Patch& patch = patches[k];
            ProposalSet decoded = decode(outputs[k - begin], grid,
                                         {static_cast<double>(patch.x0), static_cast<double>(patch.y0)});
            all.insert(all.end(), decoded.begin(), decoded.end());
        }
    }
    return all;
}

Catalog to_catalog(const ProposalSet& points) {
    Catalog catalog;
    catalog.kind = CatalogKind::detection;
    catalog.records.reserve(points.size());
    for (const Proposal& p : points) {
        catalog.records.push_back({p.x, p.y, p.confidence});
    }
    return catalog;
}

Catalog detect(const net::Model& model, const Image& image, const InferConfig& config) {
    const ProposalSet raw = propose(model, image, config);
    return to_catalog(nms(raw, config.r_nms, config.c_nms, model.config().grid.spacing()));
}

Catalog detect_timed(const net::Model& model, const Image& image, const InferConfig& config,
                     StepTimes& times) {
    const GridSpec& grid = model.config().grid;
    const auto t_total = std::chrono::steady_clock::now();

    auto t0 = std::chrono::steady_clock::now();
    const std::vector<skysim::Patch> patches = skysim::patchify(image, grid.patch_size, config.overlap);
    times.patching = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    ProposalSet all;
    all.reserve(patches.size() * static_cast<size_t>(grid.grid_m) * grid.grid_n);
    const int batch = std::max(1, config.batch_size);
    for (size_t begin = 0; begin < patches.size(); begin += batch) {
        const size_t end = std::min(patches.size(), begin + batch);
        std::vector<const Image*> views;
        for (size_t k = begin; k < end; ++k) views.push_back(&patches[k].image);
        const std::vector<net::NetOutput> outputs = net::forward_batch(model, views);
        for (size_t k = begin; k < end; ++k) {
            ProposalSet decoded = decode(outputs[k - begin], grid,
                                         {static_cast<double>(patches[k].x0),
                                          static_cast<double>(patches[k].y0)});
            all.insert(all.end(), decoded.begin(), decoded.end());
        }
    }
    times.cnn = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    Catalog result = to_catalog(nms(all, config.r_nms, config.c_nms, grid.spacing()));
    times.nms = seconds_since(t0);
    times.total = seconds_since(t_total);
    return result;
}

}  // namespace ppn::infer
