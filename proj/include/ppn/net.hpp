#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ppn/core.hpp"

// The point-proposal model: a residual convolutional base that downsamples
// the input patch to the origin grid, plus a three-layer convolutional head
// producing a confidence matrix and a per-origin offset regression matrix.
//
// Everything here is implemented directly (no ML framework): convolutions
// via im2col + GEMM, batch normalization, dropout, and full backward passes.
// The scalar type is a template parameter; production code uses float,
// the finite-difference gradient tests instantiate double.

namespace ppn::net {

struct NetConfig {
    int base_depth = 31;          // nominal depth preset: one of {9, 17, 31}
    int input_size = 224;
    GridSpec grid;
    std::vector<int> channels;    // per-stage widths; empty -> {16,32,64,128,256}
    std::vector<int> blocks;      // per-stage residual block counts; empty -> preset for base_depth
    int head_channels = 128;
    double pi = 0.01;             // prior used for the confidence bias init
    double dropout_rate = 0.2;
    uint64_t seed = 0;            // weight-init seed
};

/// Per-patch network output. `confidence` is row-major (m, n) with values in
/// the open interval (0, 1); `regression` is (m, n, 2) with interleaved
/// (dx, dy) grid-unit offsets.
struct NetOutput {
    int m = 0;
    int n = 0;
    std::vector<float> confidence;
    std::vector<float> regression;

    float conf(int i, int j) const { return confidence[static_cast<size_t>(i) * n + j]; }
    float dx(int i, int j) const { return regression[(static_cast<size_t>(i) * n + j) * 2 + 0]; }
    float dy(int i, int j) const { return regression[(static_cast<size_t>(i) * n + j) * 2 + 1]; }
};

enum class Mode { train, eval };

/// Confidence values are kept inside [kProbEps, 1 - kProbEps] so the open
/// interval invariant survives float rounding; the loss uses the same guard.
inline constexpr double kProbEps = 1e-7;

/// Bias that makes a fresh model emit confidence ~= pi everywhere.
double confidence_bias_init(double pi);

namespace detail {

// -- deterministic RNG helpers ------------------------------------------------

struct SplitMix64 {
    uint64_t state;
    explicit SplitMix64(uint64_t seed) : state(seed) {}
    uint64_t next() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double gaussian();  // Box-Muller, no caching
};

uint64_t hash_mix(uint64_t a, uint64_t b);

// -- layer parameter holders --------------------------------------------------

template <typename S>
struct Conv {
    int in_c = 0, out_c = 0, ksize = 3, stride = 1, pad = 1;
    std::vector<S> w, b;    // w is (out_c, in_c * k * k) row-major
    std::vector<S> gw, gb;  // gradient accumulators

    int out_extent(int in_extent) const { return (in_extent + 2 * pad - ksize) / stride + 1; }
    size_t weight_count() const { return static_cast<size_t>(out_c) * in_c * ksize * ksize; }
};

template <typename S>
struct BatchNorm {
    int channels = 0;
    std::vector<S> gamma, beta, ggamma, gbeta;
    // Running statistics advance during train-mode forward passes, which are
    // exclusive per the concurrency contract; eval-mode forwards only read.
    mutable std::vector<S> run_mean, run_var;
    double eps = 1e-5;
    double momentum = 0.1;
};

// -- activation caches (per forward pass) -------------------------------------

template <typename S>
struct UnitCache {                    // conv -> bn -> relu
    std::vector<S> pre_bn;            // conv output
    std::vector<S> out;               // after bn + relu
    std::vector<S> bn_mean, bn_inv;   // statistics used by this pass
    int h = 0, w = 0;
};

template <typename S>
struct BlockCache {
    UnitCache<S> u1, u2;
    std::vector<S> out;               // u2.out + block input, after dropout
    std::vector<S> drop_mask;         // scaled keep mask; empty in eval mode
};

template <typename S>
struct StageCache {
    UnitCache<S> down;
    std::vector<BlockCache<S>> blocks;
};

template <typename S>
struct HeadCache {
    std::vector<S> h1_out, h1_mask;   // post-dropout shared conv outputs
    std::vector<S> h2_out, h2_mask;
    std::vector<S> conf_z, conf;      // logits and squashed confidences (B, m*n)
    std::vector<S> reg;               // planar (B, 2, m, n)
};

}  // namespace detail

/// Activation storage for one forward/backward pass. Owned by the caller so
/// a model in eval mode can serve concurrent forward calls.
template <typename S>
struct Workspace {
    int batch = 0;
    std::vector<S> input;  // (B, 1, H, W)
    std::vector<detail::StageCache<S>> stages;
    detail::HeadCache<S> head;
    std::vector<S> scratch;  // transient per-layer buffers
};

/// Batched output in planar layout: conf (B, m*n), reg (B, 2, m, n).
template <typename S>
struct BatchOutput {
    int batch = 0, m = 0, n = 0;
    std::vector<S> conf;
    std::vector<S> reg;
};

template <typename S>
class Network {
public:
    explicit Network(NetConfig config);

    const NetConfig& config() const { return config_; }
    int n_stages() const { return static_cast<int>(stages_.size()); }
    int conv_layer_count() const;

    /// Runs the batch through base and head. `input` is (batch, 1, input_size,
    /// input_size) row-major with values in [0, 1]. In train mode batch-norm
    /// uses batch statistics and dropout is active; `dropout_stream` selects
    /// the deterministic mask sequence for this call.
    BatchOutput<S> forward(const S* input, int batch, Mode mode, Workspace<S>& ws,
                           uint64_t dropout_stream = 0) const;

    /// Accumulates parameter gradients for the pass recorded in `ws`.
    /// `dconf` is dLoss/d(confidence) (through the squashing, handled here);
    /// `dreg` is dLoss/d(regression), both in the BatchOutput layout.
    void backward(const std::vector<S>& dconf, const std::vector<S>& dreg, Workspace<S>& ws);

    void zero_grads();

    /// Enumerates parameter blocks in a fixed order (weights, biases, bn
    /// affine). Used by the optimizer, checkpointing and the save format.
    void for_each_param(const std::function<void(const std::string&, std::vector<S>&, std::vector<S>&)>& fn);
    /// Non-trainable state (batch-norm running statistics).
    void for_each_buffer(const std::function<void(const std::string&, std::vector<S>&)>& fn);

    std::vector<std::vector<S>> snapshot_state();           // params + buffers
    void restore_state(const std::vector<std::vector<S>>& state);

private:
    struct ResBlock {
        detail::Conv<S> conv1, conv2;
        detail::BatchNorm<S> bn1, bn2;
    };
    struct Stage {
        detail::Conv<S> down;       // stride-2, also widens the channel count
        detail::BatchNorm<S> down_bn;
        std::vector<ResBlock> blocks;
    };

    NetConfig config_;
    std::vector<Stage> stages_;
    detail::Conv<S> head1_, head2_, conf_conv_, reg_conv_;
    int grid_m_ = 0, grid_n_ = 0;

    void init_params();
    friend struct NetworkTestAccess;
};

using Model = Network<float>;

/// Validates the config and constructs a freshly initialized model.
/// Throws std::invalid_argument on inconsistent input_size/grid settings.
Model build(const NetConfig& config);

/// Single-patch convenience wrapper (eval mode).
NetOutput forward(const Model& model, const Image& patch);

/// Batched eval-mode forward over equally sized patches.
std::vector<NetOutput> forward_batch(const Model& model, const std::vector<const Image*>& patches);

/// Splits a BatchOutput into per-patch NetOutputs (regression re-interleaved).
std::vector<NetOutput> split_batch_output(const BatchOutput<float>& out);

/// Model container I/O: JSON-encoded config followed by named parameter
/// arrays (name, shape, little-endian f32). Round-trips bit-exactly.
void save(Model& model, const std::string& path);
Model load(const std::string& path);

NetConfig net_config_from_json_string(const std::string& text);
std::string net_config_to_json_string(const NetConfig& config);

}  // namespace ppn::net

#include "ppn/net_impl.hpp"
