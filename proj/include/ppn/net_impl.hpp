#pragma once

// Template implementation of ppn::net::Network. Included by net.hpp; not a
// public header.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ppn::net {

namespace detail {

inline double SplitMix64::gaussian() {
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline uint64_t hash_mix(uint64_t a, uint64_t b) {
    SplitMix64 h(a ^ (b * 0x9e3779b97f4a7c15ull));
    return h.next();
}

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using ColMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
std::vector<S>& thread_scratch(int which) {
    static thread_local std::vector<S> bufs[2];
    return bufs[which];
}

/// Unpacks x (c_in, h, w) into col (c_in*k*k, ho*wo) column-major, zero
/// padding out-of-range taps.
template <typename S>
void im2col(const S* x, int c_in, int h, int w, int k, int stride, int pad, int ho, int wo,
            S* col) {
    const int K = c_in * k * k;
    for (int oy = 0; oy < ho; ++oy) {
        const int iy0 = oy * stride - pad;
        for (int ox = 0; ox < wo; ++ox) {
            const int ix0 = ox * stride - pad;
            S* dst = col + static_cast<size_t>(oy * wo + ox) * K;
            for (int c = 0; c < c_in; ++c) {
                const S* xc = x + static_cast<size_t>(c) * h * w;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = iy0 + ky;
                    S* d = dst + (c * k + ky) * k;
                    if (iy < 0 || iy >= h) {
                        for (int kx = 0; kx < k; ++kx) d[kx] = S(0);
                        continue;
                    }
                    const S* row = xc + static_cast<size_t>(iy) * w;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ix0 + kx;
                        d[kx] = (ix >= 0 && ix < w) ? row[ix] : S(0);
                    }
                }
            }
        }
    }
}

/// Scatter-add inverse of im2col: accumulates col back into dx (zeroed by the
/// caller).
template <typename S>
void col2im(const S* col, int c_in, int h, int w, int k, int stride, int pad, int ho, int wo,
            S* dx) {
    const int K = c_in * k * k;
    for (int oy = 0; oy < ho; ++oy) {
        const int iy0 = oy * stride - pad;
        for (int ox = 0; ox < wo; ++ox) {
            const int ix0 = ox * stride - pad;
            const S* src = col + static_cast<size_t>(oy * wo + ox) * K;
            for (int c = 0; c < c_in; ++c) {
                S* xc = dx + static_cast<size_t>(c) * h * w;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = iy0 + ky;
                    if (iy < 0 || iy >= h) continue;
                    const S* s = src + (c * k + ky) * k;
                    S* row = xc + static_cast<size_t>(iy) * w;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ix0 + kx;
                        if (ix >= 0 && ix < w) row[ix] += s[kx];
                    }
                }
            }
        }
    }
}

template <typename S>
bool is_pointwise(const Conv<S>& p) {
    return p.ksize == 1 && p.stride == 1 && p.pad == 0;
}

/// y_s = W * col(x_s) + b for one sample.
template <typename S>
void conv_forward_sample(const Conv<S>& p, const S* x, int h, int w, S* y) {
    const int ho = p.out_extent(h), wo = p.out_extent(w);
    const int K = p.in_c * p.ksize * p.ksize;
    const int N = ho * wo;
    Eigen::Map<const RowMat<S>> W(p.w.data(), p.out_c, K);
    Eigen::Map<const VecX<S>> bias(p.b.data(), p.out_c);
    Eigen::Map<RowMat<S>> Y(y, p.out_c, N);
    if (is_pointwise(p)) {
        Eigen::Map<const RowMat<S>> X(x, K, N);
        Y.noalias() = W * X;
    } else {
        std::vector<S>& col = thread_scratch<S>(0);
        col.resize(static_cast<size_t>(K) * N);
        im2col(x, p.in_c, h, w, p.ksize, p.stride, p.pad, ho, wo, col.data());
        Eigen::Map<const ColMat<S>> C(col.data(), K, N);
        Y.noalias() = W * C;
    }
    Y.colwise() += bias;
}

/// Per-sample backward: writes this sample's dW/db into the given slots and
/// the data gradient into dx (overwritten). Parameter partials are reduced
/// across samples by the caller in index order so results do not depend on
/// the thread count.
template <typename S>
void conv_backward_sample(const Conv<S>& p, const S* x, int h, int w, const S* dy, S* dx,
                          S* dw_slot, S* db_slot) {
    const int ho = p.out_extent(h), wo = p.out_extent(w);
    const int K = p.in_c * p.ksize * p.ksize;
    const int N = ho * wo;
    Eigen::Map<const RowMat<S>> W(p.w.data(), p.out_c, K);
    Eigen::Map<const RowMat<S>> DY(dy, p.out_c, N);
    Eigen::Map<RowMat<S>> DW(dw_slot, p.out_c, K);
    Eigen::Map<VecX<S>> DB(db_slot, p.out_c);
    DB.noalias() = DY.rowwise().sum();
    if (is_pointwise(p)) {
        Eigen::Map<const RowMat<S>> X(x, K, N);
        DW.noalias() = DY * X.transpose();
        Eigen::Map<RowMat<S>> DX(dx, K, N);
        DX.noalias() = W.transpose() * DY;
    } else {
        std::vector<S>& col = thread_scratch<S>(0);
        col.resize(static_cast<size_t>(K) * N);
        im2col(x, p.in_c, h, w, p.ksize, p.stride, p.pad, ho, wo, col.data());
        Eigen::Map<const ColMat<S>> C(col.data(), K, N);
        DW.noalias() = DY * C.transpose();

        std::vector<S>& dcol = thread_scratch<S>(1);
        dcol.resize(static_cast<size_t>(K) * N);
        Eigen::Map<ColMat<S>> DC(dcol.data(), K, N);
        DC.noalias() = W.transpose() * DY;
        std::fill(dx, dx + static_cast<size_t>(p.in_c) * h * w, S(0));
        col2im(dcol.data(), p.in_c, h, w, p.ksize, p.stride, p.pad, ho, wo, dx);
    }
}

template <typename S>
void init_conv(Conv<S>& p, int in_c, int out_c, int ksize, int stride, int pad) {
    p.in_c = in_c;
    p.out_c = out_c;
    p.ksize = ksize;
    p.stride = stride;
    p.pad = pad;
    p.w.assign(p.weight_count(), S(0));
    p.b.assign(out_c, S(0));
    p.gw.assign(p.w.size(), S(0));
    p.gb.assign(p.b.size(), S(0));
}

template <typename S>
void fill_gaussian(std::vector<S>& v, double stddev, uint64_t seed) {
    SplitMix64 rng(seed);
    for (S& x : v) x = static_cast<S>(stddev * rng.gaussian());
}

template <typename S>
void init_bn(BatchNorm<S>& bn, int channels) {
    bn.channels = channels;
    bn.gamma.assign(channels, S(1));
    bn.beta.assign(channels, S(0));
    bn.ggamma.assign(channels, S(0));
    bn.gbeta.assign(channels, S(0));
    bn.run_mean.assign(channels, S(0));
    bn.run_var.assign(channels, S(1));
}

}  // namespace detail

// ---------------------------------------------------------------------------

template <typename S>
Network<S>::Network(NetConfig config) : config_(std::move(config)) {
    validate_grid(config_.grid);
    if (config_.input_size != config_.grid.patch_size) {
        throw std::invalid_argument("NetConfig: input_size must equal grid.patch_size");
    }
    if (config_.grid.grid_m != config_.grid.grid_n) {
        throw std::invalid_argument("NetConfig: the convolutional base needs a square origin grid");
    }
    if (!(config_.pi > 0.0 && config_.pi < 1.0)) {
        throw std::invalid_argument("NetConfig: pi must lie in (0, 1)");
    }
    if (config_.dropout_rate < 0.0 || config_.dropout_rate >= 1.0) {
        throw std::invalid_argument("NetConfig: dropout_rate must lie in [0, 1)");
    }
    grid_m_ = config_.grid.grid_m;
    grid_n_ = config_.grid.grid_n;

    // The stage count follows from how often the input must be halved to
    // reach the origin grid (five times for the reference 224 -> 7 mapping).
    if (config_.input_size % grid_m_ != 0) {
        throw std::invalid_argument("NetConfig: input_size must be a multiple of grid_m");
    }
    int ratio = config_.input_size / grid_m_;
    int n_stages = 0;
    while (ratio > 1 && ratio % 2 == 0) {
        ratio /= 2;
        ++n_stages;
    }
    if (ratio != 1 || n_stages == 0) {
        throw std::invalid_argument(
            "NetConfig: input_size / grid_m must be a power of two >= 2 so stride-2 stages can "
            "reach the origin grid");
    }

    std::vector<int> channels = config_.channels;
    if (channels.empty()) channels = {16, 32, 64, 128, 256};
    std::vector<int> blocks = config_.blocks;
    if (blocks.empty()) {
        // Presets hit the nominal conv-layer count exactly: every stage
        // contributes one downsampling conv, every block two more. Earlier
        // stages get more blocks to limit information loss before
        // downsampling.
        switch (config_.base_depth) {
            case 9: blocks = {1, 1, 0, 0, 0}; break;
            case 17: blocks = {2, 2, 1, 1, 0}; break;
            case 31: blocks = {4, 3, 3, 2, 1}; break;
            default:
                throw std::invalid_argument("NetConfig: base_depth must be one of {9, 17, 31} "
                                            "unless per-stage blocks are given");
        }
    }
    if (static_cast<int>(channels.size()) < n_stages || static_cast<int>(blocks.size()) < n_stages) {
        throw std::invalid_argument("NetConfig: channels/blocks lists shorter than the stage count");
    }
    channels.resize(n_stages);
    blocks.resize(n_stages);

    stages_.resize(n_stages);
    int in_c = 1;
    for (int s = 0; s < n_stages; ++s) {
        Stage& stage = stages_[s];
        detail::init_conv(stage.down, in_c, channels[s], 3, 2, 1);
        detail::init_bn(stage.down_bn, channels[s]);
        stage.blocks.resize(blocks[s]);
        for (ResBlock& block : stage.blocks) {
            detail::init_conv(block.conv1, channels[s], channels[s], 3, 1, 1);
            detail::init_bn(block.bn1, channels[s]);
            detail::init_conv(block.conv2, channels[s], channels[s], 3, 1, 1);
            detail::init_bn(block.bn2, channels[s]);
        }
        in_c = channels[s];
    }
    detail::init_conv(head1_, in_c, config_.head_channels, 3, 1, 1);
    detail::init_conv(head2_, config_.head_channels, config_.head_channels, 3, 1, 1);
    detail::init_conv(conf_conv_, config_.head_channels, 1, 1, 1, 0);
    detail::init_conv(reg_conv_, config_.head_channels, 2, 1, 1, 0);
    init_params();
}

template <typename S>
int Network<S>::conv_layer_count() const {
    int n = 0;
    for (const Stage& s : stages_) n += 1 + 2 * static_cast<int>(s.blocks.size());
    return n;
}

template <typename S>
void Network<S>::init_params() {
    uint64_t ordinal = 0;
    auto seed_for = [&]() { return detail::hash_mix(config_.seed, ++ordinal); };
    auto he_init = [&](detail::Conv<S>& c) {
        const double fan_in = static_cast<double>(c.in_c) * c.ksize * c.ksize;
        detail::fill_gaussian(c.w, std::sqrt(2.0 / fan_in), seed_for());
    };
    for (Stage& stage : stages_) {
        he_init(stage.down);
        for (ResBlock& block : stage.blocks) {
            he_init(block.conv1);
            he_init(block.conv2);
        }
    }
    // The head convs carry no activation, so plain fan-in scaling.
    const double h1_fan = static_cast<double>(head1_.in_c) * 9;
    detail::fill_gaussian(head1_.w, std::sqrt(1.0 / h1_fan), seed_for());
    const double h2_fan = static_cast<double>(head2_.in_c) * 9;
    detail::fill_gaussian(head2_.w, std::sqrt(1.0 / h2_fan), seed_for());
    // Branch convs start near zero so the confidence bias dominates and a
    // fresh model answers ~pi everywhere (the focal-loss init scheme).
    detail::fill_gaussian(conf_conv_.w, 0.01, seed_for());
    detail::fill_gaussian(reg_conv_.w, 0.01, seed_for());
    conf_conv_.b[0] = static_cast<S>(confidence_bias_init(config_.pi));
}

// -- forward ------------------------------------------------------------------

namespace detail {

/// conv -> batchnorm -> relu over the whole batch. In train mode the batch
/// statistics are accumulated from per-sample partial sums combined in sample
/// order, so results are independent of the OpenMP schedule.
template <typename S>
void unit_forward(const Conv<S>& conv, const BatchNorm<S>& bn, const S* x, int B, int h, int w,
                  UnitCache<S>& cache, Mode mode) {
    const int ho = conv.out_extent(h), wo = conv.out_extent(w);
    const int C = conv.out_c;
    const size_t in_stride = static_cast<size_t>(conv.in_c) * h * w;
    const size_t out_stride = static_cast<size_t>(C) * ho * wo;
    cache.h = ho;
    cache.w = wo;
    cache.pre_bn.resize(out_stride * B);
    cache.out.resize(out_stride * B);
    cache.bn_mean.resize(C);
    cache.bn_inv.resize(C);

#pragma omp parallel for schedule(static)
    for (int s = 0; s < B; ++s) {
        conv_forward_sample(conv, x + s * in_stride, h, w, cache.pre_bn.data() + s * out_stride);
    }

    const size_t plane = static_cast<size_t>(ho) * wo;
    const double n_stat = static_cast<double>(B) * plane;
    if (mode == Mode::train) {
        std::vector<double> sums(static_cast<size_t>(B) * C), sq(static_cast<size_t>(B) * C);
#pragma omp parallel for schedule(static)
        for (int s = 0; s < B; ++s) {
            for (int c = 0; c < C; ++c) {
                const S* p = cache.pre_bn.data() + s * out_stride + c * plane;
                double acc = 0.0, acc2 = 0.0;
                for (size_t i = 0; i < plane; ++i) {
                    const double v = static_cast<double>(p[i]);
                    acc += v;
                    acc2 += v * v;
                }
                sums[static_cast<size_t>(s) * C + c] = acc;
                sq[static_cast<size_t>(s) * C + c] = acc2;
            }
        }
        for (int c = 0; c < C; ++c) {
            double total = 0.0, total2 = 0.0;
            for (int s = 0; s < B; ++s) {
                total += sums[static_cast<size_t>(s) * C + c];
                total2 += sq[static_cast<size_t>(s) * C + c];
            }
            const double mean = total / n_stat;
            const double var = std::max(0.0, total2 / n_stat - mean * mean);
            cache.bn_mean[c] = static_cast<S>(mean);
            cache.bn_inv[c] = static_cast<S>(1.0 / std::sqrt(var + bn.eps));
            bn.run_mean[c] = static_cast<S>((1.0 - bn.momentum) * bn.run_mean[c] + bn.momentum * mean);
            bn.run_var[c] = static_cast<S>((1.0 - bn.momentum) * bn.run_var[c] + bn.momentum * var);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            cache.bn_mean[c] = bn.run_mean[c];
            cache.bn_inv[c] = static_cast<S>(1.0 / std::sqrt(static_cast<double>(bn.run_var[c]) + bn.eps));
        }
    }

#pragma omp parallel for schedule(static)
    for (int s = 0; s < B; ++s) {
        for (int c = 0; c < C; ++c) {
            const S mean = cache.bn_mean[c];
            const S inv = cache.bn_inv[c];
            const S g = bn.gamma[c], b = bn.beta[c];
            const S* in = cache.pre_bn.data() + s * out_stride + c * plane;
            S* out = cache.out.data() + s * out_stride + c * plane;
            for (size_t i = 0; i < plane; ++i) {
                const S y = g * ((in[i] - mean) * inv) + b;
                out[i] = y > S(0) ? y : S(0);
            }
        }
    }
}

template <typename S>
void apply_dropout(std::vector<S>& data, std::vector<S>& mask, double rate, uint64_t stream,
                   uint64_t site, int B) {
    mask.resize(data.size());
    const size_t per_sample = data.size() / B;
    const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
#pragma omp parallel for schedule(static)
    for (int s = 0; s < B; ++s) {
        SplitMix64 rng(hash_mix(hash_mix(stream, site), static_cast<uint64_t>(s)));
        S* d = data.data() + s * per_sample;
        S* m = mask.data() + s * per_sample;
        for (size_t i = 0; i < per_sample; ++i) {
            const S v = rng.uniform01() >= rate ? keep_scale : S(0);
            m[i] = v;
            d[i] *= v;
        }
    }
}

}  // namespace detail

template <typename S>
BatchOutput<S> Network<S>::forward(const S* input, int batch, Mode mode, Workspace<S>& ws,
                                   uint64_t dropout_stream) const {
    using namespace detail;
    if (batch <= 0) throw std::invalid_argument("forward: batch must be positive");
    const int H = config_.input_size;
    ws.batch = batch;
    ws.input.assign(input, input + static_cast<size_t>(batch) * H * H);
    ws.stages.resize(stages_.size());
    const bool drop = mode == Mode::train && config_.dropout_rate > 0.0;

    const S* cur = ws.input.data();
    int cur_h = H, cur_w = H;
    for (size_t s = 0; s < stages_.size(); ++s) {
        const Stage& stage = stages_[s];
        StageCache<S>& sc = ws.stages[s];
        unit_forward(stage.down, stage.down_bn, cur, batch, cur_h, cur_w, sc.down, mode);
        cur = sc.down.out.data();
        cur_h = sc.down.h;
        cur_w = sc.down.w;
        sc.blocks.resize(stage.blocks.size());
        for (size_t b = 0; b < stage.blocks.size(); ++b) {
            const ResBlock& block = stage.blocks[b];
            BlockCache<S>& bc = sc.blocks[b];
            unit_forward(block.conv1, block.bn1, cur, batch, cur_h, cur_w, bc.u1, mode);
            unit_forward(block.conv2, block.bn2, bc.u1.out.data(), batch, cur_h, cur_w, bc.u2, mode);
            bc.out.resize(bc.u2.out.size());
            const size_t total = bc.out.size();
            const S* skip = cur;
            const S* main = bc.u2.out.data();
            S* out = bc.out.data();
#pragma omp parallel for schedule(static)
            for (long long i = 0; i < static_cast<long long>(total); ++i) {
                out[i] = main[i] + skip[i];
            }
            if (drop) {
                apply_dropout(bc.out, bc.drop_mask, config_.dropout_rate, dropout_stream,
                              s * 100 + b + 1, batch);
            } else {
                bc.drop_mask.clear();
            }
            cur = bc.out.data();
        }
    }

    // Proposal head: three zero-padded convolution layers with no activation;
    // only the confidence output is squashed.
    HeadCache<S>& hc = ws.head;
    const int m = grid_m_, n = grid_n_;
    const size_t plane = static_cast<size_t>(m) * n;
    const size_t base_stride = static_cast<size_t>(stages_.back().down.out_c) * plane;
    const size_t head_stride = static_cast<size_t>(config_.head_channels) * plane;
    hc.h1_out.resize(head_stride * batch);
    hc.h2_out.resize(head_stride * batch);
    hc.conf_z.resize(plane * batch);
    hc.conf.resize(plane * batch);
    hc.reg.resize(plane * 2 * batch);

#pragma omp parallel for schedule(static)
    for (int s = 0; s < batch; ++s) {
        conv_forward_sample(head1_, cur + s * base_stride, m, n, hc.h1_out.data() + s * head_stride);
    }
    if (drop) {
        apply_dropout(hc.h1_out, hc.h1_mask, config_.dropout_rate, dropout_stream, 10001, batch);
    } else {
        hc.h1_mask.clear();
    }
#pragma omp parallel for schedule(static)
    for (int s = 0; s < batch; ++s) {
        conv_forward_sample(head2_, hc.h1_out.data() + s * head_stride, m, n,
                            hc.h2_out.data() + s * head_stride);
    }
    if (drop) {
        apply_dropout(hc.h2_out, hc.h2_mask, config_.dropout_rate, dropout_stream, 10002, batch);
    } else {
        hc.h2_mask.clear();
    }
#pragma omp parallel for schedule(static)
    for (int s = 0; s < batch; ++s) {
        conv_forward_sample(conf_conv_, hc.h2_out.data() + s * head_stride, m, n,
                            hc.conf_z.data() + s * plane);
        conv_forward_sample(reg_conv_, hc.h2_out.data() + s * head_stride, m, n,
                            hc.reg.data() + s * plane * 2);
        const S* z = hc.conf_z.data() + s * plane;
        S* c = hc.conf.data() + s * plane;
        for (size_t i = 0; i < plane; ++i) {
            const S v = S(1) / (S(1) + std::exp(-z[i]));
            c[i] = std::clamp(v, static_cast<S>(kProbEps), static_cast<S>(1.0 - kProbEps));
        }
    }

    BatchOutput<S> out;
    out.batch = batch;
    out.m = m;
    out.n = n;
    out.conf = hc.conf;
    out.reg = hc.reg;
    return out;
}

// -- backward -----------------------------------------------------------------

namespace detail {

/// relu' and batch-norm backward applied to dy in place, then the conv
/// backward. Parameter gradients are accumulated deterministically.
template <typename S>
void unit_backward(Conv<S>& conv, BatchNorm<S>& bn, const UnitCache<S>& cache, const S* x, int B,
                   int h_in, int w_in, std::vector<S>& dy, std::vector<S>& dx,
                   std::vector<S>& slot_scratch) {
    const int C = conv.out_c;
    const int ho = cache.h, wo = cache.w;
    const size_t plane = static_cast<size_t>(ho) * wo;
    const size_t out_stride = static_cast<size_t>(C) * plane;
    const size_t in_stride = static_cast<size_t>(conv.in_c) * h_in * w_in;
    const double n_stat = static_cast<double>(B) * plane;

    // relu mask from the stored post-activation output.
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(dy.size()); ++i) {
        if (cache.out[i] <= S(0)) dy[i] = S(0);
    }

    // batch-norm backward (batch statistics): per-sample partial sums first.
    std::vector<double> s1(static_cast<size_t>(B) * C), s2(static_cast<size_t>(B) * C);
#pragma omp parallel for schedule(static)
    for (int s = 0; s < B; ++s) {
        for (int c = 0; c < C; ++c) {
            const S* dyp = dy.data() + s * out_stride + c * plane;
            const S* xp = cache.pre_bn.data() + s * out_stride + c * plane;
            const double mean = cache.bn_mean[c], inv = cache.bn_inv[c];
            double a = 0.0, b = 0.0;
            for (size_t i = 0; i < plane; ++i) {
                const double g = dyp[i];
                a += g;
                b += g * ((xp[i] - mean) * inv);
            }
            s1[static_cast<size_t>(s) * C + c] = a;
            s2[static_cast<size_t>(s) * C + c] = b;
        }
    }
    std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
    for (int c = 0; c < C; ++c) {
        for (int s = 0; s < B; ++s) {
            sum_dy[c] += s1[static_cast<size_t>(s) * C + c];
            sum_dy_xhat[c] += s2[static_cast<size_t>(s) * C + c];
        }
        bn.gbeta[c] += static_cast<S>(sum_dy[c]);
        bn.ggamma[c] += static_cast<S>(sum_dy_xhat[c]);
    }
#pragma omp parallel for schedule(static)
    for (int s = 0; s < B; ++s) {
        for (int c = 0; c < C; ++c) {
            const S mean = cache.bn_mean[c], inv = cache.bn_inv[c];
            const S g_inv = bn.gamma[c] * inv;
            const S mean_dy = static_cast<S>(sum_dy[c] / n_stat);
            const S mean_dy_xhat = static_cast<S>(sum_dy_xhat[c] / n_stat);
            S* dyp = dy.data() + s * out_stride + c * plane;
            const S* xp = cache.pre_bn.data() + s * out_stride + c * plane;
            for (size_t i = 0; i < plane; ++i) {
                const S xhat = (xp[i] - mean) * inv;
                dyp[i] = g_inv * (dyp[i] - mean_dy - xhat * mean_dy_xhat);
            }
        }
    }

    // conv backward: per-sample parameter partials, reduced in sample order.
    const size_t wcount = conv.w.size();
    slot_scratch.resize(static_cast<size_t>(B) * (wcount + conv.out_c));
    dx.resize(static_cast<size_t>(B) * in_stride);
#pragma omp parallel for schedule(static)
    for (int s = 0; s < B; ++s) {
        conv_backward_sample(conv, x + s * in_stride, h_in, w_in, dy.data() + s * out_stride,
                             dx.data() + s * in_stride,
                             slot_scratch.data() + s * (wcount + conv.out_c),
                             slot_scratch.data() + s * (wcount + conv.out_c) + wcount);
    }
    for (int s = 0; s < B; ++s) {
        const S* dw = slot_scratch.data() + s * (wcount + conv.out_c);
        for (size_t i = 0; i < wcount; ++i) conv.gw[i] += dw[i];
        const S* db = dw + wcount;
        for (int c = 0; c < conv.out_c; ++c) conv.gb[c] += db[c];
    }
}

/// Plain conv backward without bn/relu (head layers).
template <typename S>
void plain_conv_backward(Conv<S>& conv, const S* x, int B, int h, int w, const std::vector<S>& dy,
                         std::vector<S>& dx, std::vector<S>& slot_scratch, bool accumulate_dx) {
    const int ho = conv.out_extent(h), wo = conv.out_extent(w);
    const size_t out_stride = static_cast<size_t>(conv.out_c) * ho * wo;
    const size_t in_stride = static_cast<size_t>(conv.in_c) * h * w;
    const size_t wcount = conv.w.size();
    slot_scratch.resize(static_cast<size_t>(B) * (wcount + conv.out_c));
    std::vector<S>* target = &dx;
    std::vector<S> local;
    if (accumulate_dx) {
        local.resize(static_cast<size_t>(B) * in_stride);
        target = &local;
    } else {
        dx.resize(static_cast<size_t>(B) * in_stride);
    }
#pragma omp parallel for schedule(static)
    for (int s = 0; s < B; ++s) {
        conv_backward_sample(conv, x + s * in_stride, h, w, dy.data() + s * out_stride,
                             target->data() + s * in_stride,
                             slot_scratch.data() + s * (wcount + conv.out_c),
                             slot_scratch.data() + s * (wcount + conv.out_c) + wcount);
    }
    for (int s = 0; s < B; ++s) {
        const S* dw = slot_scratch.data() + s * (wcount + conv.out_c);
        for (size_t i = 0; i < wcount; ++i) conv.gw[i] += dw[i];
        const S* db = dw + wcount;
        for (int c = 0; c < conv.out_c; ++c) conv.gb[c] += db[c];
    }
    if (accumulate_dx) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(dx.size()); ++i) dx[i] += local[i];
    }
}

template <typename S>
void mask_multiply(std::vector<S>& dy, const std::vector<S>& mask) {
    if (mask.empty()) return;
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(dy.size()); ++i) dy[i] *= mask[i];
}

}  // namespace detail

template <typename S>
void Network<S>::backward(const std::vector<S>& dconf, const std::vector<S>& dreg,
                          Workspace<S>& ws) {
    using namespace detail;
    const int B = ws.batch;
    const int m = grid_m_, n = grid_n_;
    const size_t plane = static_cast<size_t>(m) * n;
    HeadCache<S>& hc = ws.head;

    // Chain dLoss/d(confidence) through the logistic squashing.
    std::vector<S> dz(dconf.size());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(dz.size()); ++i) {
        const S c = hc.conf[i];
        dz[i] = dconf[i] * c * (S(1) - c);
    }

    std::vector<S> scratch_slots;
    std::vector<S> d_h2;
    plain_conv_backward(conf_conv_, hc.h2_out.data(), B, m, n, dz, d_h2, scratch_slots, false);
    plain_conv_backward(reg_conv_, hc.h2_out.data(), B, m, n, dreg, d_h2, scratch_slots, true);
    mask_multiply(d_h2, hc.h2_mask);

    std::vector<S> d_h1;
    plain_conv_backward(head2_, hc.h1_out.data(), B, m, n, d_h2, d_h1, scratch_slots, false);
    mask_multiply(d_h1, hc.h1_mask);

    // Input to head1 is the final stage output.
    StageCache<S>& last_sc = ws.stages.back();
    const std::vector<S>& base_out =
        last_sc.blocks.empty() ? last_sc.down.out : last_sc.blocks.back().out;
    std::vector<S> dcur;
    plain_conv_backward(head1_, base_out.data(), B, m, n, d_h1, dcur, scratch_slots, false);

    std::vector<S> dskip, dtmp;
    for (int s = static_cast<int>(stages_.size()) - 1; s >= 0; --s) {
        Stage& stage = stages_[s];
        StageCache<S>& sc = ws.stages[s];
        const int h = sc.down.h, w = sc.down.w;
        for (int b = static_cast<int>(stage.blocks.size()) - 1; b >= 0; --b) {
            ResBlock& block = stage.blocks[b];
            BlockCache<S>& bc = sc.blocks[b];
            mask_multiply(dcur, bc.drop_mask);
            dskip = dcur;
            const S* block_in = (b == 0) ? sc.down.out.data() : sc.blocks[b - 1].out.data();
            unit_backward(block.conv2, block.bn2, bc.u2, bc.u1.out.data(), B, h, w, dcur, dtmp,
                          scratch_slots);
            std::swap(dcur, dtmp);
            unit_backward(block.conv1, block.bn1, bc.u1, block_in, B, h, w, dcur, dtmp,
                          scratch_slots);
            std::swap(dcur, dtmp);
#pragma omp parallel for schedule(static)
            for (long long i = 0; i < static_cast<long long>(dcur.size()); ++i) {
                dcur[i] += dskip[i];
            }
        }
        const S* stage_in;
        int in_h, in_w;
        if (s == 0) {
            stage_in = ws.input.data();
            in_h = config_.input_size;
            in_w = config_.input_size;
        } else {
            StageCache<S>& prev = ws.stages[s - 1];
            const std::vector<S>& prev_out =
                prev.blocks.empty() ? prev.down.out : prev.blocks.back().out;
            stage_in = prev_out.data();
            in_h = prev.down.h;
            in_w = prev.down.w;
        }
        unit_backward(stage.down, stage.down_bn, sc.down, stage_in, B, in_h, in_w, dcur, dtmp,
                      scratch_slots);
        std::swap(dcur, dtmp);
    }
}

// -- parameter plumbing ---------------------------------------------------------

template <typename S>
void Network<S>::zero_grads() {
    for_each_param([](const std::string&, std::vector<S>&, std::vector<S>& g) {
        std::fill(g.begin(), g.end(), S(0));
    });
}

template <typename S>
void Network<S>::for_each_param(
    const std::function<void(const std::string&, std::vector<S>&, std::vector<S>&)>& fn) {
    auto conv = [&](const std::string& prefix, detail::Conv<S>& c) {
        fn(prefix + ".w", c.w, c.gw);
        fn(prefix + ".b", c.b, c.gb);
    };
    auto bn = [&](const std::string& prefix, detail::BatchNorm<S>& b) {
        fn(prefix + ".gamma", b.gamma, b.ggamma);
        fn(prefix + ".beta", b.beta, b.gbeta);
    };
    for (size_t s = 0; s < stages_.size(); ++s) {
        const std::string sp = "base.s" + std::to_string(s);
        conv(sp + ".down.conv", stages_[s].down);
        bn(sp + ".down.bn", stages_[s].down_bn);
        for (size_t b = 0; b < stages_[s].blocks.size(); ++b) {
            const std::string bp = sp + ".b" + std::to_string(b);
            conv(bp + ".conv1", stages_[s].blocks[b].conv1);
            bn(bp + ".bn1", stages_[s].blocks[b].bn1);
            conv(bp + ".conv2", stages_[s].blocks[b].conv2);
            bn(bp + ".bn2", stages_[s].blocks[b].bn2);
        }
    }
    conv("head.conv1", head1_);
    conv("head.conv2", head2_);
    conv("head.conf", conf_conv_);
    conv("head.reg", reg_conv_);
}

template <typename S>
void Network<S>::for_each_buffer(const std::function<void(const std::string&, std::vector<S>&)>& fn) {
    auto bn = [&](const std::string& prefix, detail::BatchNorm<S>& b) {
        fn(prefix + ".run_mean", b.run_mean);
        fn(prefix + ".run_var", b.run_var);
    };
    for (size_t s = 0; s < stages_.size(); ++s) {
        const std::string sp = "base.s" + std::to_string(s);
        bn(sp + ".down.bn", stages_[s].down_bn);
        for (size_t b = 0; b < stages_[s].blocks.size(); ++b) {
            const std::string bp = sp + ".b" + std::to_string(b);
            bn(bp + ".bn1", stages_[s].blocks[b].bn1);
            bn(bp + ".bn2", stages_[s].blocks[b].bn2);
        }
    }
}

template <typename S>
std::vector<std::vector<S>> Network<S>::snapshot_state() {
    std::vector<std::vector<S>> state;
    for_each_param([&](const std::string&, std::vector<S>& d, std::vector<S>&) { state.push_back(d); });
    for_each_buffer([&](const std::string&, std::vector<S>& d) { state.push_back(d); });
    return state;
}

template <typename S>
void Network<S>::restore_state(const std::vector<std::vector<S>>& state) {
    size_t idx = 0;
    auto take = [&](std::vector<S>& d) {
        if (idx >= state.size() || state[idx].size() != d.size()) {
            throw std::invalid_argument("restore_state: snapshot does not match this network");
        }
        d = state[idx++];
    };
    for_each_param([&](const std::string&, std::vector<S>& d, std::vector<S>&) { take(d); });
    for_each_buffer([&](const std::string&, std::vector<S>& d) { take(d); });
}

}  // namespace ppn::net
