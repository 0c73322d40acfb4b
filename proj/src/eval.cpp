#include "ppn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ppn::eval {

MatchResult match(const Catalog& predictions, const Catalog& truths, double r_tp, double spacing) {
    if (r_tp < 0.0 || spacing <= 0.0) {
        throw std::invalid_argument("match: r_tp must be >= 0 and spacing positive");
    }
    const double radius = r_tp * spacing;
    const double radius_sq = radius * radius;

    std::vector<MatchPair> candidates;
    for (int p = 0; p < static_cast<int>(predictions.records.size()); ++p) {
        const PointRecord& pr = predictions.records[p];
        for (int t = 0; t < static_cast<int>(truths.records.size()); ++t) {
            const PointRecord& tr = truths.records[t];
            const double dx = pr.x - tr.x, dy = pr.y - tr.y;
            const double d_sq = dx * dx + dy * dy;
            if (d_sq <= radius_sq) {
                candidates.push_back({p, t, std::sqrt(d_sq)});
            }
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const MatchPair& a, const MatchPair& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        if (a.prediction != b.prediction) return a.prediction < b.prediction;
        return a.truth < b.truth;
    });

    MatchResult result;
    std::vector<char> pred_used(predictions.records.size(), 0);
    result.truth_matched.assign(truths.records.size(), 0);
    for (const MatchPair& cand : candidates) {
        if (pred_used[cand.prediction] || result.truth_matched[cand.truth]) continue;
        pred_used[cand.prediction] = 1;
        result.truth_matched[cand.truth] = 1;
        result.pairs.push_back(cand);
    }
    result.tp = static_cast<int>(result.pairs.size());
    result.fp = static_cast<int>(predictions.records.size()) - result.tp;
    result.fn = static_cast<int>(truths.records.size()) - result.tp;
    return result;
}

double precision(const MatchResult& m) {
    const int denom = m.tp + m.fp;
    if (denom == 0) return 1.0;  // no detections made, none of them wrong
    return static_cast<double>(m.tp) / denom;
}

double recall(const MatchResult& m) {
    const int denom = m.tp + m.fn;
    if (denom == 0) return 1.0;  // nothing to find
    return static_cast<double>(m.tp) / denom;
}

double f1(double p, double r) {
    const double sum = p + r;
    if (sum <= 0.0) return 0.0;
    return 2.0 * p * r / sum;
}

std::vector<double> edges_for_flux_bins(const std::vector<double>& bin_fluxes) {
    std::vector<double> edges;
    if (bin_fluxes.empty()) return edges;
    edges.reserve(bin_fluxes.size() + 1);
    const double first_step = bin_fluxes.size() > 1 ? bin_fluxes[1] - bin_fluxes[0] : bin_fluxes[0];
    edges.push_back(bin_fluxes.front() - 0.5 * first_step);
    for (size_t k = 0; k + 1 < bin_fluxes.size(); ++k) {
        edges.push_back(0.5 * (bin_fluxes[k] + bin_fluxes[k + 1]));
    }
    const double last_step =
        bin_fluxes.size() > 1 ? bin_fluxes.back() - bin_fluxes[bin_fluxes.size() - 2] : bin_fluxes[0];
    edges.push_back(bin_fluxes.back() + 0.5 * last_step);
    return edges;
}

std::vector<FluxBinRecall> recall_by_flux(const Catalog& predictions, const Catalog& truths,
                                          double r_tp, double spacing,
                                          const std::vector<double>& edges) {
    if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end())) {
        throw std::invalid_argument("recall_by_flux: edges must be ascending with >= 2 entries");
    }
    const MatchResult m = match(predictions, truths, r_tp, spacing);

    std::vector<FluxBinRecall> bins(edges.size() - 1);
    for (size_t k = 0; k < bins.size(); ++k) {
        bins[k].lo = edges[k];
        bins[k].hi = edges[k + 1];
    }
    for (int t = 0; t < static_cast<int>(truths.records.size()); ++t) {
        const double flux = truths.records[t].score;
        const auto it = std::upper_bound(edges.begin(), edges.end(), flux);
        if (it == edges.begin() || it == edges.end()) continue;  // outside the histogram
        FluxBinRecall& bin = bins[static_cast<size_t>(it - edges.begin()) - 1];
        ++bin.n_truth;
        if (m.truth_matched[t]) ++bin.n_matched;
    }
    for (FluxBinRecall& bin : bins) {
        bin.recall = bin.n_truth == 0 ? 1.0 : static_cast<double>(bin.n_matched) / bin.n_truth;
    }
    return bins;
}

std::vector<PrecisionAtRtp> precision_vs_rtp(const Catalog& predictions, const Catalog& truths,
                                             const std::vector<double>& r_tps, double spacing) {
    std::vector<PrecisionAtRtp> curve;
    curve.reserve(r_tps.size());
    for (const double r : r_tps) {
        curve.push_back({r, precision(match(predictions, truths, r, spacing))});
    }
    return curve;
}

}  // namespace ppn::eval
