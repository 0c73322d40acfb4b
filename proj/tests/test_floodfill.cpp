#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ppn/floodfill.hpp"
#include "ppn/skysim.hpp"

using namespace ppn;
using namespace ppn::floodfill;

namespace {

Image blank(int w, int h, float fill = 0.0f) {
    Image image;
    image.width = w;
    image.height = h;
    image.values.assign(image.pixel_count(), fill);
    return image;
}

}  // namespace

TEST_CASE("all-zero image yields nothing") {
    CHECK(threshold_blob_detect(blank(32, 32), 0.5, 3).records.empty());
}

TEST_CASE("single gaussian source: one island, centroid near the center") {
    Image image = blank(64, 64);
    skysim::render_source(image, 30.6, 33.2, 1.0, 3.0);
    const Catalog detections = threshold_blob_detect(image, 0.5, 3);
    REQUIRE(detections.records.size() == 1);
    CHECK(std::fabs(detections.records[0].x - 30.6) < 0.5);
    CHECK(std::fabs(detections.records[0].y - 33.2) < 0.5);
    CHECK(detections.records[0].score > 0.9);
}

TEST_CASE("centroid accuracy over random sub-pixel placements") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> pos(20.0, 44.0);
    for (int trial = 0; trial < 100; ++trial) {
        Image image = blank(64, 64);
        const double cx = pos(rng), cy = pos(rng);
        skysim::render_source(image, cx, cy, 1.0, 3.0);
        const Catalog detections = threshold_blob_detect(image, 0.5, 3);
        REQUIRE(detections.records.size() == 1);
        CHECK(std::fabs(detections.records[0].x - cx) < 0.5);
        CHECK(std::fabs(detections.records[0].y - cy) < 0.5);
    }
}

TEST_CASE("blending failure mode: two close sources merge into one island") {
    Image image = blank(64, 64);
    skysim::render_source(image, 30.0, 30.0, 1.0, 3.0);
    skysim::render_source(image, 32.0, 30.0, 0.9, 3.0);  // separation < FWHM
    const Catalog detections = threshold_blob_detect(image, 0.5, 3);
    CHECK(detections.records.size() == 1);
}

TEST_CASE("minimum island area filters single-pixel spikes") {
    Image image = blank(32, 32);
    for (int y = 1; y < 31; y += 2) {
        for (int x = 1; x < 31; x += 2) {
            image.at(x, y) = 0.9f;  // isolated pixels in a checkerboard
        }
    }
    CHECK(threshold_blob_detect(image, 0.5, 3).records.empty());
    CHECK_FALSE(threshold_blob_detect(image, 0.5, 1).records.empty());
}

TEST_CASE("binarization boundary is inclusive") {
    Image image = blank(8, 8);
    image.at(3, 3) = 0.5f;
    image.at(3, 4) = 0.5f;
    image.at(4, 3) = 0.5f;
    const Catalog detections = threshold_blob_detect(image, 0.5, 3);
    CHECK(detections.records.size() == 1);
}

TEST_CASE("connectivity choice changes diagonal linking") {
    Image image = blank(8, 8);
    image.at(2, 2) = image.at(3, 3) = image.at(4, 4) = 0.9f;
    CHECK(find_islands(image, 0.5, 1, Connectivity::four).size() == 3);
    CHECK(find_islands(image, 0.5, 1, Connectivity::eight).size() == 1);
}

TEST_CASE("component extraction is independent of scan order") {
    std::mt19937_64 rng(9);
    Image image = blank(48, 48);
    for (float& v : image.values) v = (rng() % 100) / 100.0f;

    const auto islands = find_islands(image, 0.5, 1);

    // Oracle: same extraction on the transposed image; components must map
    // one-to-one under (row, col) swap.
    Image transposed = blank(48, 48);
    for (int y = 0; y < 48; ++y) {
        for (int x = 0; x < 48; ++x) transposed.at(y, x) = image.at(x, y);
    }
    const auto islands_t = find_islands(transposed, 0.5, 1);
    REQUIRE(islands.size() == islands_t.size());

    auto canon = [](const Island& island, bool swap) {
        std::vector<std::pair<int, int>> pixels;
        for (const PixelCoord& p : island.pixels) {
            pixels.emplace_back(swap ? p.col : p.row, swap ? p.row : p.col);
        }
        std::sort(pixels.begin(), pixels.end());
        return pixels;
    };
    std::vector<std::vector<std::pair<int, int>>> a, b;
    for (const Island& island : islands) a.push_back(canon(island, false));
    for (const Island& island : islands_t) b.push_back(canon(island, true));
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
}

TEST_CASE("rotating the image rotates the centroids") {
    Image image = blank(64, 64);
    skysim::render_source(image, 20.3, 40.8, 1.0, 3.0);
    skysim::render_source(image, 50.1, 10.2, 0.8, 3.0);

    Image rotated = blank(64, 64);  // 90 degrees counter-clockwise: (x,y) -> (y, W-1-x)
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) rotated.at(y, 63 - x) = image.at(x, y);
    }
    auto original = threshold_blob_detect(image, 0.5, 3);
    auto turned = threshold_blob_detect(rotated, 0.5, 3);
    REQUIRE(original.records.size() == turned.records.size());
    auto by_x = [](const PointRecord& a, const PointRecord& b) { return a.x < b.x; };
    std::sort(original.records.begin(), original.records.end(), by_x);
    // Invert (x, y) -> (y, 63 - x): original position is (63 - ry, rx).
    std::vector<PointRecord> mapped;
    for (const PointRecord& r : turned.records) mapped.push_back({63.0 - r.y, r.x, r.score});
    std::sort(mapped.begin(), mapped.end(), by_x);
    for (size_t i = 0; i < mapped.size(); ++i) {
        CHECK(mapped[i].x == doctest::Approx(original.records[i].x).epsilon(1e-9));
        CHECK(mapped[i].y == doctest::Approx(original.records[i].y).epsilon(1e-9));
    }
}

TEST_CASE("raising tau never increases thresholded area") {
    std::mt19937_64 rng(31);
    Image image = blank(64, 64);
    for (float& v : image.values) v = (rng() % 1000) / 1000.0f;
    size_t previous = image.pixel_count();
    for (double tau : {0.2, 0.4, 0.6, 0.8}) {
        size_t area = 0;
        for (const Island& island : find_islands(image, tau, 1)) area += island.area();
        CHECK(area <= previous);
        previous = area;
    }
}

TEST_CASE("worst case: a fully above-threshold 4096 square image completes") {
    Image image = blank(4096, 4096, 1.0f);
    const auto islands = find_islands(image, 0.5, 3);
    REQUIRE(islands.size() == 1);
    CHECK(islands[0].area() == image.pixel_count());
    CHECK(islands[0].centroid.x == doctest::Approx((4096.0 - 1.0) / 2.0));
}

TEST_CASE("multi-threshold de-blending splits saddle-joined pairs") {
    // Two peaks (1.0 and 0.9) separated by 8.7 px at FWHM 6 put the
    // connecting saddle near 0.44: a single low threshold merges them, the
    // higher threshold separates them.
    Image image = blank(96, 96);
    skysim::render_source(image, 43.7, 48.0, 1.0, 6.0);
    skysim::render_source(image, 52.4, 48.0, 0.9, 6.0);

    const Catalog single = threshold_blob_detect(image, 0.3, 3);
    CHECK(single.records.size() == 1);

    const Catalog multi = multi_threshold_detect(image, {0.5, 0.3}, 3);
    CHECK(multi.records.size() == 2);

    SUBCASE("a single-entry threshold list reduces to the plain detector") {
        const Catalog plain = threshold_blob_detect(image, 0.5, 3);
        const Catalog one = multi_threshold_detect(image, {0.5}, 3);
        REQUIRE(plain.records.size() == one.records.size());
        for (size_t i = 0; i < plain.records.size(); ++i) {
            CHECK(plain.records[i].x == one.records[i].x);
            CHECK(plain.records[i].y == one.records[i].y);
        }
    }

    SUBCASE("well-separated sources are found regardless of the ladder") {
        Image separated = blank(128, 128);
        skysim::render_source(separated, 30.0, 30.0, 1.0, 3.0);
        skysim::render_source(separated, 100.0, 90.0, 0.95, 3.0);
        const Catalog detections =
            multi_threshold_detect(separated, default_threshold_ladder(), 3);
        CHECK(detections.records.size() == 2);
    }
}

TEST_CASE("default threshold ladder spans 0.1 to 1.0 descending") {
    const auto taus = default_threshold_ladder();
    REQUIRE(taus.size() == 20);
    CHECK(taus.front() == doctest::Approx(1.0));
    CHECK(taus.back() == doctest::Approx(0.1));
    CHECK(std::is_sorted(taus.rbegin(), taus.rend()));
}
