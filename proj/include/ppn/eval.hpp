#pragma once

#include <vector>

#include "ppn/core.hpp"

// Detection quality metrics. A prediction counts as a true positive when it
// lies within r_tp (grid units) of a truth source; matched items are
// excluded from further checks, so each prediction and each truth appears in
// at most one pair. The matching radius is inclusive (<=), complementing the
// strict (<) radius in NMS.

namespace ppn::eval {

struct MatchPair {
    int prediction = 0;
    int truth = 0;
    double distance = 0.0;  // pixels
};

struct MatchResult {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    std::vector<MatchPair> pairs;
    std::vector<char> truth_matched;  // per truth index, for per-bin recall
};

/// Greedy exclusive matching: all (prediction, truth) pairs within
/// r_tp * spacing are sorted by ascending distance (ties by prediction then
/// truth index) and accepted when both endpoints are still unmatched.
MatchResult match(const Catalog& predictions, const Catalog& truths, double r_tp, double spacing);

/// tp / (tp + fp). With no predictions the precision is vacuously 1.
double precision(const MatchResult& m);
/// tp / (tp + fn). With no truths the recall is vacuously 1.
double recall(const MatchResult& m);
/// 2pr / (p + r); 0 when p + r == 0.
double f1(double precision, double recall);

struct FluxBinRecall {
    double lo = 0.0;     // bin edges, sigma multiples
    double hi = 0.0;
    int n_truth = 0;
    int n_matched = 0;
    double recall = 0.0;  // vacuously 1 for an empty bin
};

/// Matching is performed once globally; recall is then read off per truth
/// flux bin. `edges` must be ascending; truths outside [edges.front(),
/// edges.back()) are ignored. Truth scores are peak fluxes in sigma multiples.
std::vector<FluxBinRecall> recall_by_flux(const Catalog& predictions, const Catalog& truths,
                                          double r_tp, double spacing,
                                          const std::vector<double>& edges);

/// Histogram edges that place each discrete flux ladder value in its own bin.
std::vector<double> edges_for_flux_bins(const std::vector<double>& bin_fluxes);

struct PrecisionAtRtp {
    double r_tp = 0.0;
    double precision = 0.0;
};

/// Precision evaluated independently at each r_tp; non-decreasing in r_tp.
std::vector<PrecisionAtRtp> precision_vs_rtp(const Catalog& predictions, const Catalog& truths,
                                             const std::vector<double>& r_tps, double spacing);

}  // namespace ppn::eval
