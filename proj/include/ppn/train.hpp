#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ppn/core.hpp"
#include "ppn/net.hpp"

// Ground-truth encoding, the focal + regression loss pair, and the
// supervised training loop with best-validation checkpointing.

namespace ppn::train {

/// Default r_near: the distance from an origin to the center of a group of
/// four origins, in grid units. This is the minimal radius that leaves no
/// point in the patch unreachable.
inline double default_r_near() { return std::sqrt(2.0 * 0.5 * 0.5); }

/// Per-patch training targets.
///  - c_hat[i,j] = 1 iff the nearest source is within r_near (inclusive).
///  - r_hat is the grid-unit offset to that source, defined only where
///    c_hat = 1 (zero elsewhere).
///  - b gates the confidence loss: 1 where c_hat = 1 or the nearest source is
///    farther than r_far; origins in the (r_near, r_far] band are ignored.
///  - b_star gates the regression loss: identical to c_hat.
struct TargetMaps {
    int m = 0;
    int n = 0;
    std::vector<uint8_t> c_hat;
    std::vector<uint8_t> b;
    std::vector<uint8_t> b_star;
    std::vector<double> r_hat;  // (m, n, 2) interleaved (dx, dy)

    size_t plane() const { return static_cast<size_t>(m) * n; }
};

struct TrainConfig {
    double alpha = 0.5;
    double gamma = 0.0;
    double r_near = default_r_near();
    double r_far = default_r_near();
    int batch_size = 128;
    // Loss balancing coefficients; <= 0 means "use 1 / batch_size".
    double n_c = -1.0;
    double n_r = -1.0;
    int epochs = 30;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    // Samples per forward/backward pass; gradients accumulate across
    // micro-batches so the optimizer still steps once per `batch_size`
    // samples. Batch-norm statistics are per micro-batch.
    int micro_batch = 32;

    double effective_n_c() const { return n_c > 0.0 ? n_c : 1.0 / batch_size; }
    double effective_n_r() const { return n_r > 0.0 ? n_r : 1.0 / batch_size; }
};

/// Builds TargetMaps for a patch whose truth catalog is already in patch
/// pixel coordinates. Distances are measured in grid units; ties between
/// equidistant sources break toward the lowest catalog index. An empty
/// catalog yields all-zero c_hat with b = 1 everywhere.
TargetMaps encode_targets(const Catalog& truth, const GridSpec& grid, double r_near, double r_far);

/// Focal confidence loss (sum over origins, gated by b):
///   -sum b * [ alpha*(1-c)^gamma*log(c)  if c_hat=1
///              c^gamma*log(1-c)          otherwise ]
/// Throws std::domain_error if any c is outside (0, 1); training clamps
/// network outputs to [1e-7, 1 - 1e-7] before calling.
double confidence_loss(std::span<const double> c, const TargetMaps& targets, double alpha,
                       double gamma);

/// d(confidence_loss)/dc, same gating. Zero where b = 0.
void confidence_loss_grad(std::span<const double> c, const TargetMaps& targets, double alpha,
                          double gamma, std::span<double> grad);

/// Mean-squared regression loss over the grid, gated by b_star:
///   (1 / (m*n)) * sum b_star * ||r_hat - r||^2
/// `r` is (m, n, 2) interleaved.
double regression_loss(std::span<const double> r, const TargetMaps& targets);
void regression_loss_grad(std::span<const double> r, const TargetMaps& targets,
                          std::span<double> grad);

/// E = n_c * E_c + n_r * E_r.
double total_loss(double e_c, double e_r, double n_c, double n_r);

struct TrainSample {
    Image patch;         // normalized, input_size x input_size
    TargetMaps targets;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = 0;
    double best_val_loss = 0.0;
};

/// Minimizes the combined loss with Adam. Shuffles per epoch with a seeded
/// RNG, evaluates the validation loss each epoch (eval mode), and leaves the
/// model at the parameter snapshot with the lowest validation loss.
/// Throws std::invalid_argument on an empty dataset and std::runtime_error
/// (naming epoch and batch) if the loss turns non-finite.
TrainResult train(net::Model& model, const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& val_set, const TrainConfig& config);

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history);

/// Builds (patch, targets) samples from full images: patchify, crop each
/// truth catalog to the patch frame, encode.
std::vector<TrainSample> make_samples(const Image& image, const Catalog& truth,
                                      const GridSpec& grid, int overlap, double r_near,
                                      double r_far);

}  // namespace ppn::train
