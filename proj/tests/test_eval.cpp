#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ppn/eval.hpp"
#include "ppn/skysim.hpp"

using namespace ppn;
using namespace ppn::eval;

namespace {

Catalog points(CatalogKind kind, std::initializer_list<PointRecord> records) {
    Catalog c;
    c.kind = kind;
    c.records = records;
    return c;
}

/// Independent greedy reference: same contract, written directly against the
/// definition (enumerate, sort by distance with index tie-breaks, accept
/// pairs with free endpoints).
MatchResult match_reference(const Catalog& preds, const Catalog& truths, double r_tp,
                            double spacing) {
    struct Cand {
        double d;
        int p, t;
    };
    std::vector<Cand> cands;
    for (int p = 0; p < static_cast<int>(preds.records.size()); ++p) {
        for (int t = 0; t < static_cast<int>(truths.records.size()); ++t) {
            const double d = std::hypot(preds.records[p].x - truths.records[t].x,
                                        preds.records[p].y - truths.records[t].y);
            if (d <= r_tp * spacing) cands.push_back({d, p, t});
        }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        return std::tie(a.d, a.p, a.t) < std::tie(b.d, b.p, b.t);
    });
    MatchResult result;
    std::vector<char> pu(preds.records.size(), 0);
    result.truth_matched.assign(truths.records.size(), 0);
    for (const Cand& c : cands) {
        if (pu[c.p] || result.truth_matched[c.t]) continue;
        pu[c.p] = 1;
        result.truth_matched[c.t] = 1;
        result.pairs.push_back({c.p, c.t, c.d});
    }
    result.tp = static_cast<int>(result.pairs.size());
    result.fp = static_cast<int>(preds.records.size()) - result.tp;
    result.fn = static_cast<int>(truths.records.size()) - result.tp;
    return result;
}

}  // namespace

TEST_CASE("perfect detections match one-to-one") {
    const Catalog truths = points(CatalogKind::truth, {{10, 10, 5}, {50, 80, 3}, {200, 3, 1}});
    Catalog preds = truths;
    preds.kind = CatalogKind::detection;
    const MatchResult m = match(preds, truths, 0.4, 32.0);
    CHECK(m.tp == 3);
    CHECK(m.fp == 0);
    CHECK(m.fn == 0);
    for (const MatchPair& pair : m.pairs) CHECK(pair.distance == 0.0);
}

TEST_CASE("exclusive matching: extra predictions near one truth") {
    const Catalog truths = points(CatalogKind::truth, {{0, 0, 1}});
    const Catalog preds = points(CatalogKind::detection, {{0.1, 0, 0.9}, {0.2, 0, 0.9}});
    const MatchResult m = match(preds, truths, 10.0, 32.0);
    CHECK(m.tp == 1);
    CHECK(m.fp == 1);
    CHECK(m.fn == 0);
    REQUIRE(m.pairs.size() == 1);
    CHECK(m.pairs[0].prediction == 0);  // the closer one
}

TEST_CASE("exclusive matching: one prediction between two truths") {
    const Catalog truths = points(CatalogKind::truth, {{0, 0, 1}, {0.2, 0, 1}});
    const Catalog preds = points(CatalogKind::detection, {{0.1, 0, 0.9}});
    const MatchResult m = match(preds, truths, 10.0, 32.0);
    CHECK(m.tp == 1);
    CHECK(m.fp == 0);
    CHECK(m.fn == 1);
}

TEST_CASE("greedy matcher equals the reference on random instances") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> pos(0.0, 64.0);
    for (int trial = 0; trial < 1000; ++trial) {
        Catalog preds, truths;
        preds.kind = CatalogKind::detection;
        const size_t np = rng() % 9, nt = rng() % 9;
        for (size_t i = 0; i < np; ++i) preds.records.push_back({pos(rng), pos(rng), 0.9});
        for (size_t i = 0; i < nt; ++i) truths.records.push_back({pos(rng), pos(rng), 1.0});
        const double r_tp = 0.05 + (rng() % 100) / 100.0;

        const MatchResult ours = match(preds, truths, r_tp, 32.0);
        const MatchResult ref = match_reference(preds, truths, r_tp, 32.0);
        CHECK(ours.tp == ref.tp);
        CHECK(ours.fp == ref.fp);
        CHECK(ours.fn == ref.fn);
        REQUIRE(ours.pairs.size() == ref.pairs.size());
        for (size_t i = 0; i < ours.pairs.size(); ++i) {
            CHECK(ours.pairs[i].prediction == ref.pairs[i].prediction);
            CHECK(ours.pairs[i].truth == ref.pairs[i].truth);
        }

        // Exclusivity + radius invariants.
        std::vector<int> pred_seen(np, 0), truth_seen(nt, 0);
        for (const MatchPair& pair : ours.pairs) {
            CHECK(++pred_seen[pair.prediction] == 1);
            CHECK(++truth_seen[pair.truth] == 1);
            CHECK(pair.distance <= r_tp * 32.0);
        }
        CHECK(ours.tp + ours.fp == static_cast<int>(np));
        CHECK(ours.tp + ours.fn == static_cast<int>(nt));

        // Role swap: tp symmetric, fp/fn exchange.
        Catalog swapped_preds = truths, swapped_truths = preds;
        const MatchResult swapped = match(swapped_preds, swapped_truths, r_tp, 32.0);
        CHECK(swapped.tp == ours.tp);
        CHECK(swapped.fp == ours.fn);
        CHECK(swapped.fn == ours.fp);
    }
}

TEST_CASE("precision and recall with degenerate denominators") {
    MatchResult m;
    m.tp = 9;
    m.fp = 1;
    m.fn = 3;
    CHECK(precision(m) == doctest::Approx(0.9));
    CHECK(recall(m) == doctest::Approx(0.75));

    MatchResult none;  // no predictions, some truths
    none.tp = 0;
    none.fp = 0;
    none.fn = 4;
    CHECK(precision(none) == 1.0);  // vacuous: no detections, none wrong
    CHECK(recall(none) == 0.0);

    MatchResult empty;  // nothing at all
    CHECK(precision(empty) == 1.0);
    CHECK(recall(empty) == 1.0);
}

TEST_CASE("f1 combination") {
    CHECK(f1(1.0, 1.0) == doctest::Approx(1.0));
    CHECK(f1(0.947, 0.733) == doctest::Approx(0.8264).epsilon(1e-3));
    CHECK(f1(0.5, 0.0) == 0.0);
    CHECK(f1(0.0, 0.0) == 0.0);

    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int i = 0; i < 100; ++i) {
        const double p = u(rng), r = u(rng);
        const double h = f1(p, r);
        CHECK(h >= std::min(p, r) - 1e-12);
        CHECK(h <= std::max(p, r) + 1e-12);
    }
}

TEST_CASE("recall by flux bins") {
    const auto ladder = skysim::flux_bins(30, 1.0);
    const auto edges = edges_for_flux_bins(ladder);
    REQUIRE(edges.size() == 31);

    Catalog truths;
    truths.kind = CatalogKind::truth;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> pos(0.0, 512.0);
    for (int k = 0; k < 30; ++k) {
        for (int c = 0; c < 3; ++c) truths.records.push_back({pos(rng), pos(rng), ladder[k]});
    }

    SUBCASE("perfect detector: recall 1 in every bin") {
        Catalog preds = truths;
        preds.kind = CatalogKind::detection;
        for (const FluxBinRecall& bin : recall_by_flux(preds, truths, 0.4, 32.0, edges)) {
            CHECK(bin.recall == 1.0);
            CHECK(bin.n_truth == 3);
        }
    }

    SUBCASE("detector finding only J >= 5 sigma splits the bins") {
        Catalog preds;
        preds.kind = CatalogKind::detection;
        for (const PointRecord& t : truths.records) {
            if (t.score >= 5.0) preds.records.push_back({t.x, t.y, 0.95});
        }
        for (const FluxBinRecall& bin : recall_by_flux(preds, truths, 0.4, 32.0, edges)) {
            if (bin.hi <= 5.0) {
                CHECK(bin.recall == 0.0);
            } else if (bin.lo >= 5.0 - 1e-9) {
                CHECK(bin.recall == 1.0);
            }
        }
    }
}

TEST_CASE("precision vs r_tp curves") {
    SUBCASE("zero-distance detections are perfect at every radius") {
        Catalog truths = points(CatalogKind::truth, {{10, 10, 1}, {90, 40, 1}});
        Catalog preds = truths;
        preds.kind = CatalogKind::detection;
        for (const auto& pt : precision_vs_rtp(preds, truths, {0.05, 0.1, 0.4, 1.0}, 32.0)) {
            CHECK(pt.precision == 1.0);
        }
    }

    SUBCASE("uniform 0.3 grid-unit offsets form a step function") {
        // Sources on a sparse lattice (64 px apart) so a prediction can only
        // ever match its own source.
        Catalog truths, preds;
        preds.kind = CatalogKind::detection;
        for (int i = 0; i < 20; ++i) {
            const double x = 50.0 + 64.0 * (i % 5), y = 50.0 + 64.0 * (i / 5);
            truths.records.push_back({x, y, 1.0});
            preds.records.push_back({x + 0.2999 * 32.0, y, 0.9});
        }
        const auto curve = precision_vs_rtp(preds, truths, {0.1, 0.2, 0.29, 0.3, 0.5, 1.0}, 32.0);
        CHECK(curve[0].precision == 0.0);
        CHECK(curve[2].precision == 0.0);
        CHECK(curve[3].precision == 1.0);
        CHECK(curve[5].precision == 1.0);
    }

    SUBCASE("matching radius is inclusive at an exactly representable boundary") {
        // Integer coordinates, offset 8 px, r_tp * spacing = 0.25 * 32 = 8.
        Catalog truths, preds;
        preds.kind = CatalogKind::detection;
        truths.records = {{100.0, 200.0, 1.0}};
        preds.records = {{108.0, 200.0, 0.9}};
        CHECK(precision_vs_rtp(preds, truths, {0.25}, 32.0)[0].precision == 1.0);
        CHECK(precision_vs_rtp(preds, truths, {0.2499}, 32.0)[0].precision == 0.0);
    }

    SUBCASE("monotone non-decreasing in r_tp on random instances") {
        std::mt19937_64 rng(15);
        std::uniform_real_distribution<double> pos(0.0, 300.0);
        for (int trial = 0; trial < 50; ++trial) {
            Catalog truths, preds;
            preds.kind = CatalogKind::detection;
            for (int i = 0; i < 25; ++i) truths.records.push_back({pos(rng), pos(rng), 1.0});
            for (int i = 0; i < 20; ++i) preds.records.push_back({pos(rng), pos(rng), 0.9});
            std::vector<double> rtps;
            for (int k = 1; k <= 20; ++k) rtps.push_back(0.05 * k);
            double prev = -1.0;
            for (const auto& pt : precision_vs_rtp(preds, truths, rtps, 32.0)) {
                CHECK(pt.precision >= prev);
                prev = pt.precision;
            }
        }
    }
}
