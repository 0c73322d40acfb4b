#include "ppn/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "ppn/skysim.hpp"

namespace ppn::train {

TargetMaps encode_targets(const Catalog& truth, const GridSpec& grid, double r_near, double r_far) {
    validate_grid(grid);
    if (!(r_near > 0.0)) throw std::invalid_argument("encode_targets: r_near must be positive");
    if (r_far < r_near) throw std::invalid_argument("encode_targets: r_far must be >= r_near");

    TargetMaps t;
    t.m = grid.grid_m;
    t.n = grid.grid_n;
    t.c_hat.assign(t.plane(), 0);
    t.b.assign(t.plane(), 0);
    t.b_star.assign(t.plane(), 0);
    t.r_hat.assign(t.plane() * 2, 0.0);

    const double spacing = grid.spacing();
    for (int i = 0; i < t.m; ++i) {
        for (int j = 0; j < t.n; ++j) {
            const Point2 origin = origin_position(grid, i, j);
            double best_d = std::numeric_limits<double>::infinity();
            double best_dx = 0.0, best_dy = 0.0;
            for (const PointRecord& src : truth.records) {
                const double dx = (src.x - origin.x) / spacing;
                const double dy = (src.y - origin.y) / spacing;
                const double d = std::hypot(dx, dy);
                if (d < best_d) {  // strict: equidistant sources keep the earlier record
                    best_d = d;
                    best_dx = dx;
                    best_dy = dy;
                }
            }
            const size_t idx = static_cast<size_t>(i) * t.n + j;
            if (best_d <= r_near) {
                t.c_hat[idx] = 1;
                t.b[idx] = 1;
                t.b_star[idx] = 1;
                t.r_hat[idx * 2 + 0] = best_dx;
                t.r_hat[idx * 2 + 1] = best_dy;
            } else if (best_d > r_far) {
                t.b[idx] = 1;  // clear negative; the (r_near, r_far] band stays ignored
            }
        }
    }
    return t;
}

double confidence_loss(std::span<const double> c, const TargetMaps& targets, double alpha,
                       double gamma) {
    if (c.size() != targets.plane()) {
        throw std::invalid_argument("confidence_loss: shape mismatch");
    }
    double loss = 0.0;
    for (size_t i = 0; i < c.size(); ++i) {
        if (!(c[i] > 0.0 && c[i] < 1.0)) {
            throw std::domain_error("confidence_loss: confidence outside (0, 1)");
        }
        if (!targets.b[i]) continue;
        if (targets.c_hat[i]) {
            const double w = gamma == 0.0 ? alpha : alpha * std::pow(1.0 - c[i], gamma);
            loss -= w * std::log(c[i]);
        } else {
            const double w = gamma == 0.0 ? 1.0 : std::pow(c[i], gamma);
            loss -= w * std::log(1.0 - c[i]);
        }
    }
    return loss;
}

void confidence_loss_grad(std::span<const double> c, const TargetMaps& targets, double alpha,
                          double gamma, std::span<double> grad) {
    for (size_t i = 0; i < c.size(); ++i) {
        if (!targets.b[i]) {
            grad[i] = 0.0;
            continue;
        }
        const double ci = c[i];
        if (targets.c_hat[i]) {
            if (gamma == 0.0) {
                grad[i] = -alpha / ci;
            } else {
                grad[i] = alpha * (gamma * std::pow(1.0 - ci, gamma - 1.0) * std::log(ci) -
                                   std::pow(1.0 - ci, gamma) / ci);
            }
        } else {
            if (gamma == 0.0) {
                grad[i] = 1.0 / (1.0 - ci);
            } else {
                grad[i] = -gamma * std::pow(ci, gamma - 1.0) * std::log(1.0 - ci) +
                          std::pow(ci, gamma) / (1.0 - ci);
            }
        }
    }
}

double regression_loss(std::span<const double> r, const TargetMaps& targets) {
    if (r.size() != targets.plane() * 2) {
        throw std::invalid_argument("regression_loss: shape mismatch");
    }
    double sum = 0.0;
    for (size_t i = 0; i < targets.plane(); ++i) {
        if (!targets.b_star[i]) continue;
        const double ex = targets.r_hat[i * 2 + 0] - r[i * 2 + 0];
        const double ey = targets.r_hat[i * 2 + 1] - r[i * 2 + 1];
        sum += ex * ex + ey * ey;
    }
    return sum / static_cast<double>(targets.plane());
}

void regression_loss_grad(std::span<const double> r, const TargetMaps& targets,
                          std::span<double> grad) {
    const double scale = 2.0 / static_cast<double>(targets.plane());
    for (size_t i = 0; i < targets.plane(); ++i) {
        if (!targets.b_star[i]) {
            grad[i * 2 + 0] = 0.0;
            grad[i * 2 + 1] = 0.0;
            continue;
        }
        grad[i * 2 + 0] = scale * (r[i * 2 + 0] - targets.r_hat[i * 2 + 0]);
        grad[i * 2 + 1] = scale * (r[i * 2 + 1] - targets.r_hat[i * 2 + 1]);
    }
}

double total_loss(double e_c, double e_r, double n_c, double n_r) {
    return n_c * e_c + n_r * e_r;
}

// -- optimizer -----------------------------------------------------------------

namespace {

struct AdamState {
    std::vector<std::vector<float>> m, v;
    int64_t t = 0;
};

void adam_step(net::Model& model, AdamState& state, const TrainConfig& cfg) {
    ++state.t;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    size_t block = 0;
    model.for_each_param([&](const std::string&, std::vector<float>& p, std::vector<float>& g) {
        if (block >= state.m.size()) {
            state.m.emplace_back(p.size(), 0.0f);
            state.v.emplace_back(p.size(), 0.0f);
        }
        std::vector<float>& m = state.m[block];
        std::vector<float>& v = state.v[block];
        for (size_t i = 0; i < p.size(); ++i) {
            m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g[i]);
            v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * static_cast<double>(g[i]) * g[i]);
            const double m_hat = m[i] / corr1;
            const double v_hat = v[i] / corr2;
            p[i] -= static_cast<float>(cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps));
        }
        ++block;
    });
}

struct LossBuffers {
    std::vector<double> c, gc, r, gr;
};

/// Computes per-sample losses and fills the (already scaled) gradient buffers
/// for one forward pass. Returns n_c * sum(E_c) + n_r * sum(E_r).
double batch_loss_and_grads(const net::BatchOutput<float>& out,
                            const std::vector<const TargetMaps*>& targets, const TrainConfig& cfg,
                            LossBuffers& buf, std::vector<float>* dconf,
                            std::vector<float>* dreg) {
    const size_t plane = static_cast<size_t>(out.m) * out.n;
    const double n_c = cfg.effective_n_c();
    const double n_r = cfg.effective_n_r();
    buf.c.resize(plane);
    buf.gc.resize(plane);
    buf.r.resize(plane * 2);
    buf.gr.resize(plane * 2);
    if (dconf) dconf->assign(out.conf.size(), 0.0f);
    if (dreg) dreg->assign(out.reg.size(), 0.0f);

    double loss = 0.0;
    for (int s = 0; s < out.batch; ++s) {
        const TargetMaps& t = *targets[s];
        const float* conf = out.conf.data() + s * plane;
        const float* reg = out.reg.data() + s * plane * 2;  // planar: dx plane then dy plane
        for (size_t i = 0; i < plane; ++i) {
            buf.c[i] = conf[i];
            buf.r[i * 2 + 0] = reg[i];
            buf.r[i * 2 + 1] = reg[plane + i];
        }
        loss += n_c * confidence_loss(buf.c, t, cfg.alpha, cfg.gamma);
        loss += n_r * regression_loss(buf.r, t);
        if (dconf) {
            confidence_loss_grad(buf.c, t, cfg.alpha, cfg.gamma, buf.gc);
            regression_loss_grad(buf.r, t, buf.gr);
            float* dc = dconf->data() + s * plane;
            float* dr = dreg->data() + s * plane * 2;
            for (size_t i = 0; i < plane; ++i) {
                dc[i] = static_cast<float>(n_c * buf.gc[i]);
                dr[i] = static_cast<float>(n_r * buf.gr[i * 2 + 0]);
                dr[plane + i] = static_cast<float>(n_r * buf.gr[i * 2 + 1]);
            }
        }
    }
    return loss;
}

std::vector<float> pack_input(const std::vector<TrainSample>& set, const std::vector<int>& indices,
                              size_t begin, size_t end) {
    const size_t px = set[indices[begin]].patch.pixel_count();
    std::vector<float> input;
    input.reserve((end - begin) * px);
    for (size_t k = begin; k < end; ++k) {
        const Image& patch = set[indices[k]].patch;
        input.insert(input.end(), patch.values.begin(), patch.values.end());
    }
    return input;
}

double validation_loss(net::Model& model, const std::vector<TrainSample>& val_set,
                       const TrainConfig& cfg, net::Workspace<float>& ws, LossBuffers& buf) {
    std::vector<int> order(val_set.size());
    std::iota(order.begin(), order.end(), 0);
    double total = 0.0;
    const size_t mb = std::max(1, cfg.micro_batch);
    for (size_t begin = 0; begin < val_set.size(); begin += mb) {
        const size_t end = std::min(val_set.size(), begin + mb);
        std::vector<float> input = pack_input(val_set, order, begin, end);
        const auto out = model.forward(input.data(), static_cast<int>(end - begin),
                                       net::Mode::eval, ws);
        std::vector<const TargetMaps*> targets;
        for (size_t k = begin; k < end; ++k) targets.push_back(&val_set[order[k]].targets);
        total += batch_loss_and_grads(out, targets, cfg, buf, nullptr, nullptr);
    }
    // Scaled to the expected per-batch loss so it is comparable with the
    // training curve; with the default 1/batch_size coefficients this is the
    // mean per-sample loss.
    return total * static_cast<double>(cfg.batch_size) / static_cast<double>(val_set.size());
}

}  // namespace

TrainResult train(net::Model& model, const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& val_set, const TrainConfig& config) {
    if (train_set.empty() || val_set.empty()) {
        throw std::invalid_argument("train: training and validation sets must be non-empty");
    }
    if (config.batch_size < 1 || config.epochs < 1) {
        throw std::invalid_argument("train: batch_size and epochs must be >= 1");
    }
    if (!(config.alpha > 0.0) || config.gamma < 0.0) {
        throw std::invalid_argument("train: alpha must be > 0 and gamma >= 0");
    }

    AdamState adam;
    net::Workspace<float> ws;
    LossBuffers buf;
    std::vector<float> dconf, dreg;
    std::mt19937_64 shuffle_rng(config.seed);
    std::vector<int> indices(train_set.size());
    std::iota(indices.begin(), indices.end(), 0);

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<float>> best_state = model.snapshot_state();

    const size_t mb = static_cast<size_t>(std::max(1, std::min(config.micro_batch, config.batch_size)));
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(indices.begin(), indices.end(), shuffle_rng);
        double epoch_loss = 0.0;
        int n_batches = 0;
        for (size_t batch_begin = 0; batch_begin < indices.size();
             batch_begin += static_cast<size_t>(config.batch_size)) {
            const size_t batch_end =
                std::min(indices.size(), batch_begin + static_cast<size_t>(config.batch_size));
            model.zero_grads();
            double batch_loss = 0.0;
            int micro_index = 0;
            for (size_t begin = batch_begin; begin < batch_end; begin += mb, ++micro_index) {
                const size_t end = std::min(batch_end, begin + mb);
                std::vector<float> input = pack_input(train_set, indices, begin, end);
                const uint64_t stream = net::detail::hash_mix(
                    net::detail::hash_mix(config.seed, static_cast<uint64_t>(epoch)),
                    (static_cast<uint64_t>(n_batches) << 16) | static_cast<uint64_t>(micro_index));
                const auto out = model.forward(input.data(), static_cast<int>(end - begin),
                                               net::Mode::train, ws, stream);
                std::vector<const TargetMaps*> targets;
                for (size_t k = begin; k < end; ++k) targets.push_back(&train_set[indices[k]].targets);
                batch_loss += batch_loss_and_grads(out, targets, config, buf, &dconf, &dreg);
                model.backward(dconf, dreg, ws);
            }
            if (!std::isfinite(batch_loss)) {
                throw std::runtime_error("train: non-finite loss in epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(n_batches));
            }
            adam_step(model, adam, config);
            epoch_loss += batch_loss;
            ++n_batches;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_loss / std::max(1, n_batches);
        stats.val_loss = validation_loss(model, val_set, config, ws, buf);
        if (!std::isfinite(stats.val_loss)) {
            throw std::runtime_error("train: non-finite validation loss in epoch " +
                                     std::to_string(epoch));
        }
        result.history.push_back(stats);
        if (stats.val_loss < best_val) {
            best_val = stats.val_loss;
            best_state = model.snapshot_state();
            result.best_epoch = epoch;
        }
    }

    model.restore_state(best_state);
    result.best_val_loss = best_val;
    return result;
}

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_history_csv: cannot open " + path);
    out << "epoch,train_loss,val_loss\n";
    for (const EpochStats& e : history) {
        out << e.epoch << "," << e.train_loss << "," << e.val_loss << "\n";
    }
}

std::vector<TrainSample> make_samples(const Image& image, const Catalog& truth,
                                      const GridSpec& grid, int overlap, double r_near,
                                      double r_far) {
    std::vector<TrainSample> samples;
    for (skysim::Patch& patch : skysim::patchify(image, grid.patch_size, overlap)) {
        TrainSample sample;
        sample.targets = encode_targets(skysim::crop_to_patch(truth, patch.x0, patch.y0, grid.patch_size),
                                        grid, r_near, r_far);
        sample.patch = std::move(patch.image);
        samples.push_back(std::move(sample));
    }
    return samples;
}

}  // namespace ppn::train
