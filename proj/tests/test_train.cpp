#include <doctest.h>

#include <cmath>
#include <random>

#include "ppn/net.hpp"
#include "ppn/skysim.hpp"
#include "ppn/train.hpp"

using namespace ppn;
using namespace ppn::train;

namespace {

TargetMaps single_origin_targets(bool positive, bool contributing) {
    TargetMaps t;
    t.m = t.n = 1;
    t.c_hat = {static_cast<uint8_t>(positive)};
    t.b = {static_cast<uint8_t>(contributing)};
    t.b_star = {static_cast<uint8_t>(positive)};
    t.r_hat = {0.0, 0.0};
    return t;
}

net::NetConfig toy_config() {
    net::NetConfig config;
    config.base_depth = 9;
    config.input_size = 8;
    config.grid = {8, 2, 2};
    config.channels = {4, 8};
    config.blocks = {1, 1};
    config.head_channels = 8;
    config.dropout_rate = 0.0;
    config.seed = 77;
    return config;
}

}  // namespace

TEST_CASE("encode_targets geometry") {
    GridSpec grid;  // 224 px, 7x7, spacing 32
    const double r_near = default_r_near();

    SUBCASE("source exactly at an origin center") {
        Catalog truth;
        truth.records = {{origin_position(grid, 2, 3).x, origin_position(grid, 2, 3).y, 5.0}};
        const TargetMaps t = encode_targets(truth, grid, r_near, r_near);
        const size_t idx = 2 * 7 + 3;
        CHECK(t.c_hat[idx] == 1);
        CHECK(t.r_hat[idx * 2 + 0] == doctest::Approx(0.0));
        CHECK(t.r_hat[idx * 2 + 1] == doctest::Approx(0.0));
    }

    SUBCASE("empty patch: all negative, everything contributes to confidence") {
        const TargetMaps t = encode_targets(Catalog{}, grid, r_near, r_near);
        for (size_t i = 0; i < t.plane(); ++i) {
            CHECK(t.c_hat[i] == 0);
            CHECK(t.b[i] == 1);
            CHECK(t.b_star[i] == 0);
        }
    }

    SUBCASE("source at the center of four origins hits all four at the boundary") {
        // (96, 96) is the center of origins (2,2),(2,3),(3,2),(3,3): distance
        // sqrt(0.5) to each, exactly r_near; the inclusive radius must make
        // all four positive.
        Catalog truth;
        truth.records = {{96.0, 96.0, 5.0}};
        const TargetMaps t = encode_targets(truth, grid, r_near, r_near);
        int positives = 0;
        for (size_t i = 0; i < t.plane(); ++i) positives += t.c_hat[i];
        CHECK(positives == 4);
        for (int i : {2, 3}) {
            for (int j : {2, 3}) {
                const size_t idx = static_cast<size_t>(i) * 7 + j;
                CHECK(t.c_hat[idx] == 1);
                CHECK(std::fabs(t.r_hat[idx * 2 + 0]) == doctest::Approx(0.5));
                CHECK(std::fabs(t.r_hat[idx * 2 + 1]) == doctest::Approx(0.5));
            }
        }
    }

    SUBCASE("r_far == r_near leaves no ignored origins") {
        Catalog truth;
        truth.records = {{100.0, 120.0, 2.0}, {30.0, 40.0, 1.0}};
        const TargetMaps t = encode_targets(truth, grid, r_near, r_near);
        for (size_t i = 0; i < t.plane(); ++i) {
            CHECK((t.b[i] == 1 || t.c_hat[i] == 1));
            CHECK(t.b[i] == 1);  // either positive or farther than r_far
        }
    }

    SUBCASE("widening r_far never increases contributing origins") {
        std::mt19937_64 rng(99);
        std::uniform_real_distribution<double> pos(0.0, 224.0);
        for (int trial = 0; trial < 50; ++trial) {
            Catalog truth;
            const int n = static_cast<int>(rng() % 8);
            for (int s = 0; s < n; ++s) truth.records.push_back({pos(rng), pos(rng), 1.0});
            const TargetMaps tight = encode_targets(truth, grid, r_near, r_near);
            const TargetMaps wide = encode_targets(truth, grid, r_near, 2.0 * r_near);
            int tight_b = 0, wide_b = 0;
            for (size_t i = 0; i < tight.plane(); ++i) {
                tight_b += tight.b[i];
                wide_b += wide.b[i];
            }
            CHECK(wide_b <= tight_b);
        }
    }

    SUBCASE("ties break toward the lowest catalog index") {
        Catalog truth;  // both sources 0.25 grid units from origin (0,0), opposite sides
        const Point2 o = origin_position(grid, 0, 0);
        truth.records = {{o.x + 8.0, o.y, 1.0}, {o.x - 8.0, o.y, 2.0}};
        const TargetMaps t = encode_targets(truth, grid, r_near, r_near);
        CHECK(t.c_hat[0] == 1);
        CHECK(t.r_hat[0] == doctest::Approx(0.25));  // toward the first record
    }

    CHECK_THROWS_AS(encode_targets(Catalog{}, grid, r_near, 0.5 * r_near), std::invalid_argument);
}

TEST_CASE("encode_targets invariants over randomized catalogs") {
    GridSpec grid;
    const double r_near = default_r_near();
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> pos(-10.0, 234.0);
    std::uniform_real_distribution<double> far_scale(1.0, 3.0);

    for (int trial = 0; trial < 500; ++trial) {
        Catalog truth;
        const int n = static_cast<int>(rng() % 12);
        for (int s = 0; s < n; ++s) {
            truth.records.push_back({pos(rng), pos(rng), 1.0});
        }
        const double r_far = r_near * far_scale(rng);
        const TargetMaps t = encode_targets(truth, grid, r_near, r_far);
        for (int i = 0; i < t.m; ++i) {
            for (int j = 0; j < t.n; ++j) {
                const size_t idx = static_cast<size_t>(i) * t.n + j;
                // Oracle distance in grid units.
                const Point2 origin = origin_position(grid, i, j);
                double nearest = std::numeric_limits<double>::infinity();
                for (const PointRecord& src : truth.records) {
                    nearest = std::min(nearest, std::hypot((src.x - origin.x) / grid.spacing(),
                                                           (src.y - origin.y) / grid.spacing()));
                }
                CHECK(t.c_hat[idx] == (nearest <= r_near ? 1 : 0));
                CHECK(t.b_star[idx] == t.c_hat[idx]);
                CHECK(t.b[idx] == ((t.c_hat[idx] == 1 || nearest > r_far) ? 1 : 0));
                if (t.c_hat[idx]) {
                    CHECK(t.b[idx] == 1);
                    const double norm = std::hypot(t.r_hat[idx * 2], t.r_hat[idx * 2 + 1]);
                    CHECK(norm <= r_near + 1e-12);
                    CHECK(norm == doctest::Approx(nearest).epsilon(1e-9));
                }
            }
        }
    }
}

TEST_CASE("confidence loss frozen examples") {
    SUBCASE("positive origin, c = 0.5, alpha 0.5, gamma 0") {
        const double c[] = {0.5};
        const double loss = confidence_loss(c, single_origin_targets(true, true), 0.5, 0.0);
        CHECK(loss == doctest::Approx(0.346574).epsilon(1e-6));
        CHECK(loss == doctest::Approx(-0.5 * std::log(0.5)).epsilon(1e-12));
    }
    SUBCASE("positive origin, c = 0.9, alpha 1, gamma 2") {
        const double c[] = {0.9};
        const double loss = confidence_loss(c, single_origin_targets(true, true), 1.0, 2.0);
        CHECK(loss == doctest::Approx(0.00105361).epsilon(1e-4));
        CHECK(loss == doctest::Approx(-0.01 * std::log(0.9)).epsilon(1e-12));
    }
    SUBCASE("gated origins contribute nothing") {
        const double c[] = {0.123};
        CHECK(confidence_loss(c, single_origin_targets(true, false), 0.5, 2.0) == 0.0);
        CHECK(confidence_loss(c, single_origin_targets(false, false), 0.5, 2.0) == 0.0);
    }
    SUBCASE("out-of-domain confidence raises") {
        const double c[] = {1.0};
        CHECK_THROWS_AS((void)confidence_loss(c, single_origin_targets(true, true), 1.0, 0.0),
                        std::domain_error);
        const double c0[] = {0.0};
        CHECK_THROWS_AS((void)confidence_loss(c0, single_origin_targets(true, true), 1.0, 0.0),
                        std::domain_error);
    }
}

TEST_CASE("focal loss with alpha=1, gamma=0 equals binary cross-entropy") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> prob(0.01, 0.99);
    for (int trial = 0; trial < 100; ++trial) {
        TargetMaps t;
        t.m = 4;
        t.n = 4;
        t.c_hat.resize(16);
        t.b.resize(16);
        t.b_star.resize(16);
        t.r_hat.assign(32, 0.0);
        std::vector<double> c(16);
        for (size_t i = 0; i < 16; ++i) {
            t.c_hat[i] = rng() % 2;
            t.b[i] = rng() % 2;
            t.b_star[i] = t.c_hat[i];
            c[i] = prob(rng);
        }
        const double focal = confidence_loss(c, t, 1.0, 0.0);
        double bce = 0.0;
        for (size_t i = 0; i < 16; ++i) {
            if (!t.b[i]) continue;
            bce -= t.c_hat[i] ? std::log(c[i]) : std::log(1.0 - c[i]);
        }
        CHECK(focal == doctest::Approx(bce).epsilon(1e-6));
        CHECK(focal >= 0.0);
    }
}

TEST_CASE("regression loss frozen examples") {
    SUBCASE("matching regression gives zero") {
        TargetMaps t = single_origin_targets(true, true);
        t.r_hat = {0.3, -0.2};
        const double r[] = {0.3, -0.2};
        CHECK(regression_loss(r, t) == 0.0);
    }
    SUBCASE("1x1 grid example: 0.13") {
        TargetMaps t = single_origin_targets(true, true);
        t.r_hat = {0.3, -0.2};
        const double r[] = {0.0, 0.0};
        CHECK(regression_loss(r, t) == doctest::Approx(0.13).epsilon(1e-6));
    }
    SUBCASE("all b_star zero ignores the prediction") {
        TargetMaps t = single_origin_targets(false, true);
        const double r[] = {123.0, -55.0};
        CHECK(regression_loss(r, t) == 0.0);
    }
    SUBCASE("nonnegative on random instances") {
        std::mt19937_64 rng(8);
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        for (int trial = 0; trial < 50; ++trial) {
            TargetMaps t;
            t.m = 3;
            t.n = 3;
            t.c_hat.resize(9);
            t.b.resize(9, 1);
            t.b_star.resize(9);
            t.r_hat.resize(18);
            std::vector<double> r(18);
            for (size_t i = 0; i < 9; ++i) {
                t.c_hat[i] = rng() % 2;
                t.b_star[i] = t.c_hat[i];
                t.r_hat[2 * i] = u(rng);
                t.r_hat[2 * i + 1] = u(rng);
                r[2 * i] = u(rng);
                r[2 * i + 1] = u(rng);
            }
            CHECK(regression_loss(r, t) >= 0.0);
        }
    }
}

TEST_CASE("total loss combination") {
    CHECK(total_loss(1.0, 1.0, 1.0 / 128, 1.0 / 128) == doctest::Approx(0.015625).epsilon(1e-12));
    CHECK(total_loss(0.0, 0.0, 3.0, 9.0) == 0.0);
    CHECK(total_loss(2.0, 0.5, 1.0, 2.0) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central finite differences on the toy model") {
    net::NetConfig config = toy_config();
    net::Network<double> model(config);

    // Two fixed patches with a source each, targets from the encoder.
    const int size = config.input_size;
    std::vector<double> input(2 * size * size);
    skysim::GaussianSampler noise(4);
    for (double& v : input) v = 0.2 + 0.1 * noise.uniform01();
    auto add_blob = [&](int sample, double cx, double cy) {
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                input[sample * size * size + y * size + x] += 0.6 * std::exp(-d2 / 2.0);
            }
        }
    };
    add_blob(0, 2.5, 5.0);
    add_blob(1, 5.5, 2.0);

    std::vector<TargetMaps> targets;
    {
        Catalog truth0, truth1;
        truth0.records = {{2.5, 5.0, 1.0}};
        truth1.records = {{5.5, 2.0, 1.0}};
        targets.push_back(encode_targets(truth0, config.grid, default_r_near(), default_r_near()));
        targets.push_back(encode_targets(truth1, config.grid, default_r_near(), default_r_near()));
    }

    const double alpha = 0.5, gamma = 2.0;  // exercise the full focal path
    const double n_c = 0.5, n_r = 0.5;
    const size_t plane = 4;

    auto compute_loss = [&](net::Network<double>& m) {
        net::Workspace<double> ws;
        const auto out = m.forward(input.data(), 2, net::Mode::train, ws);
        double loss = 0.0;
        for (int s = 0; s < 2; ++s) {
            std::vector<double> c(out.conf.begin() + s * plane, out.conf.begin() + (s + 1) * plane);
            std::vector<double> r(plane * 2);
            for (size_t i = 0; i < plane; ++i) {
                r[i * 2] = out.reg[s * plane * 2 + i];
                r[i * 2 + 1] = out.reg[s * plane * 2 + plane + i];
            }
            loss += n_c * confidence_loss(c, targets[s], alpha, gamma);
            loss += n_r * regression_loss(r, targets[s]);
        }
        return loss;
    };

    // Analytic gradients.
    model.zero_grads();
    {
        net::Workspace<double> ws;
        const auto out = model.forward(input.data(), 2, net::Mode::train, ws);
        std::vector<double> dconf(out.conf.size()), dreg(out.reg.size());
        for (int s = 0; s < 2; ++s) {
            std::vector<double> c(out.conf.begin() + s * plane, out.conf.begin() + (s + 1) * plane);
            std::vector<double> r(plane * 2), gc(plane), gr(plane * 2);
            for (size_t i = 0; i < plane; ++i) {
                r[i * 2] = out.reg[s * plane * 2 + i];
                r[i * 2 + 1] = out.reg[s * plane * 2 + plane + i];
            }
            confidence_loss_grad(c, targets[s], alpha, gamma, gc);
            regression_loss_grad(r, targets[s], gr);
            for (size_t i = 0; i < plane; ++i) {
                dconf[s * plane + i] = n_c * gc[i];
                dreg[s * plane * 2 + i] = n_r * gr[i * 2];
                dreg[s * plane * 2 + plane + i] = n_r * gr[i * 2 + 1];
            }
        }
        model.backward(dconf, dreg, ws);
    }

    // Head parameters at the contract step 1e-3 (the head is free of
    // activations, so central differences are clean there); every other
    // parameter at step 1e-5, below which relu kink crossings amplified by
    // batch norm would contaminate the difference quotient.
    int checked = 0;
    model.for_each_param([&](const std::string& name, std::vector<double>& p,
                             std::vector<double>& g) {
        const bool head_param = name.rfind("head.", 0) == 0;
        const double step = head_param ? 1e-3 : 1e-5;
        for (size_t i = 0; i < p.size(); ++i) {
            const double saved = p[i];
            p[i] = saved + step;
            const double up = compute_loss(model);
            p[i] = saved - step;
            const double down = compute_loss(model);
            p[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double analytic = g[i];
            const double tol = std::max(1e-2 * std::max(std::fabs(numeric), std::fabs(analytic)), 1e-7);
            if (std::fabs(numeric - analytic) > tol) {
                CAPTURE(name);
                CAPTURE(i);
                CAPTURE(numeric);
                CAPTURE(analytic);
                CHECK(std::fabs(numeric - analytic) <= tol);
            }
            ++checked;
        }
    });
    CHECK(checked > 1000);
}

TEST_CASE("training bookkeeping and overfit") {
    net::NetConfig config = toy_config();
    net::Model model = net::build(config);

    // Eight tiny patches, each with one bright synthetic blob.
    std::vector<TrainSample> samples;
    skysim::GaussianSampler rng(13);
    for (int k = 0; k < 8; ++k) {
        Image patch;
        patch.width = patch.height = 8;
        patch.values.assign(64, 0.0f);
        for (float& v : patch.values) v = static_cast<float>(0.05 * rng.uniform01());
        const double cx = 1.5 + 5.0 * rng.uniform01();
        const double cy = 1.5 + 5.0 * rng.uniform01();
        skysim::render_source(patch, cx, cy, 0.9, 2.5);
        normalize_image(patch);
        Catalog truth;
        truth.records = {{cx, cy, 5.0}};
        TrainSample sample;
        sample.patch = std::move(patch);
        sample.targets = encode_targets(truth, config.grid, default_r_near(), default_r_near());
        samples.push_back(std::move(sample));
    }

    SUBCASE("one epoch, one batch: history has exactly one entry") {
        TrainConfig tc;
        tc.epochs = 1;
        tc.batch_size = 8;
        tc.seed = 5;
        const TrainResult result = ppn::train::train(model, samples, samples, tc);
        REQUIRE(result.history.size() == 1);
        CHECK(result.history[0].epoch == 1);
        CHECK(result.best_epoch == 1);
    }

    SUBCASE("empty dataset is rejected") {
        TrainConfig tc;
        CHECK_THROWS_AS((void)ppn::train::train(model, {}, samples, tc), std::invalid_argument);
    }

    SUBCASE("overfitting eight patches collapses the training loss") {
        TrainConfig tc;
        tc.epochs = 200;
        tc.batch_size = 8;
        tc.learning_rate = 3e-3;
        tc.seed = 5;
        const TrainResult result = ppn::train::train(model, samples, samples, tc);
        REQUIRE(result.history.size() == 200);
        const double first = result.history.front().train_loss;
        const double last = result.history.back().train_loss;
        CHECK(last < 0.1 * first);

        // The returned model is the best-validation snapshot.
        double min_val = std::numeric_limits<double>::infinity();
        for (const EpochStats& e : result.history) min_val = std::min(min_val, e.val_loss);
        CHECK(result.best_val_loss == doctest::Approx(min_val));

        // Re-evaluating the returned snapshot reproduces the recorded best.
        net::Workspace<float> ws;
        std::vector<float> input;
        for (const auto& s : samples) {
            input.insert(input.end(), s.patch.values.begin(), s.patch.values.end());
        }
        const auto out = model.forward(input.data(), 8, net::Mode::eval, ws);
        double val = 0.0;
        const size_t plane = 4;
        for (int s = 0; s < 8; ++s) {
            std::vector<double> c(out.conf.begin() + s * plane, out.conf.begin() + (s + 1) * plane);
            std::vector<double> r(plane * 2);
            for (size_t i = 0; i < plane; ++i) {
                r[i * 2] = out.reg[s * plane * 2 + i];
                r[i * 2 + 1] = out.reg[s * plane * 2 + plane + i];
            }
            val += tc.effective_n_c() * confidence_loss(c, samples[s].targets, tc.alpha, tc.gamma);
            val += tc.effective_n_r() * regression_loss(r, samples[s].targets);
        }
        val *= static_cast<double>(tc.batch_size) / 8.0;
        CHECK(val == doctest::Approx(result.best_val_loss).epsilon(1e-9));
    }
}
