#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "atcn/common.hpp"
#include "atcn/rng.hpp"
#include "atcn/tensor.hpp"

namespace atcn {

enum class Mode { train, eval };
enum class Padding { valid, same, causal };
enum class Axis { channels, frames };

struct Conv1dSpec {
    int64_t dilation = 1;
    int64_t groups = 1;
    Padding padding = Padding::valid;
};

// Perspective intrinsics needed by the reprojection loss; full camera
// geometry lives in dataio.
struct Intrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
};

namespace detail {

enum class OpKind {
    input,
    param_leaf,
    conv1d,
    linear,
    relu,
    sigmoid,
    softmax,
    gap,
    batch_norm,
    dropout,
    add,
    weighted_sum,
    scale_frames,
    scale_channels,
    slice_frames,
    concat_frames,
    reshape,
    pose_loss,
    reproj_loss,
};

struct Node {
    OpKind kind{};
    std::vector<int> in;   // input node ids
    std::vector<int> pids; // parameter ids, op-specific order
    FrameTensor value;

    // op payloads (only the relevant ones are used per kind)
    Conv1dSpec conv;
    bool transpose_w = false;
    Axis axis = Axis::frames;
    double p = 0.0;            // dropout rate
    double wa = 1.0, wb = 1.0; // weighted_sum coefficients
    int64_t from = 0, len = 0; // slice_frames
    std::vector<uint8_t> mask; // dropout keep-mask
    std::vector<double> saved_mean, saved_var; // batch_norm per-channel stats
    FrameTensor target;        // pose_loss target, reproj 2-D observations
    FrameTensor aux;           // reproj absolute gt roots [B,3,1]
    Intrinsics intr;
    int64_t excluded = 0;      // reproj joints behind the camera
};

inline void pad_extents(const Conv1dSpec& s, int64_t k, int64_t f_in, int64_t& pad_left,
                        int64_t& f_out) {
    const int64_t span = s.dilation * (k - 1);
    switch (s.padding) {
        case Padding::valid:
            pad_left = 0;
            f_out = f_in - span;
            break;
        case Padding::same:
            require(k % 2 == 1, "same padding requires odd kernel size");
            pad_left = span / 2;
            f_out = f_in;
            break;
        case Padding::causal:
            pad_left = span;
            f_out = f_in;
            break;
    }
}

} // namespace detail

// Reverse-mode tape over FrameTensor ops. Building is eager: every op
// computes its value immediately, so the tape always holds a completed
// forward pass in topological order. backward() walks it in reverse.
// recompute() replays the tape with saved dropout masks and without touching
// batch-norm running statistics, which makes finite differencing exact.
class Graph {
public:
    Graph(ParamStore& params, Mode mode, RngStream* rng = nullptr)
        : params_(params), mode_(mode), rng_(rng) {}

    Mode mode() const { return mode_; }
    ParamStore& params() { return params_; }

    const FrameTensor& value(int id) const { return node(id).value; }
    const std::vector<double>& grad(int id) {
        node(id).value.ensure_grad();
        return node(id).value.grad;
    }
    size_t node_count() const { return nodes_.size(); }
    int64_t reproj_excluded(int id) const { return node(id).excluded; }

    int input(FrameTensor t) {
        detail::Node n;
        n.kind = detail::OpKind::input;
        n.value = std::move(t);
        return push(std::move(n));
    }

    // Parameter exposed as a [1, size, 1] tensor node.
    int param_leaf(int pid) {
        detail::Node n;
        n.kind = detail::OpKind::param_leaf;
        n.pids = {pid};
        return push_compute(std::move(n));
    }

    int conv1d(int x, int w_pid, int b_pid, const Conv1dSpec& spec) {
        const FrameTensor& xin = node(x).value;
        const ParamArray& w = params_[w_pid];
        require_shape(w.shape.size() == 3, "conv1d weight must be C_out x C_in/G x k");
        require(spec.dilation >= 1, "conv1d dilation must be >= 1");
        require(spec.groups >= 1, "conv1d groups must be >= 1");
        const int64_t c_out = w.dim(0), c_in_g = w.dim(1), k = w.dim(2);
        require(xin.channels % spec.groups == 0, "conv1d: C_in not divisible by groups");
        require(c_out % spec.groups == 0, "conv1d: C_out not divisible by groups");
        require_shape(xin.channels / spec.groups == c_in_g,
                      "conv1d: weight input channels disagree with tensor");
        if (b_pid >= 0) {
            require_shape(params_[b_pid].size() == c_out, "conv1d: bias length mismatch");
        }
        int64_t pad_left = 0, f_out = 0;
        detail::pad_extents(spec, k, xin.frames, pad_left, f_out);
        if (f_out <= 0) {
            throw WindowTooShortError("conv1d: window too short, valid output would be " +
                                      std::to_string(f_out) + " frames");
        }
        detail::Node n;
        n.kind = detail::OpKind::conv1d;
        n.in = {x};
        n.pids = {w_pid, b_pid};
        n.conv = spec;
        return push_compute(std::move(n));
    }

    // Frame-wise affine map: y[b,:,f] = W x[b,:,f] + bias. With
    // transpose_weight the stored matrix is applied transposed, which lets the
    // temporal-attention matrices keep their natural (rows = previous layer)
    // shape.
    int linear(int x, int w_pid, int b_pid, bool transpose_weight = false) {
        const FrameTensor& xin = node(x).value;
        const ParamArray& w = params_[w_pid];
        require_shape(w.shape.size() == 2, "linear weight must be a matrix");
        const int64_t in_dim = transpose_weight ? w.dim(0) : w.dim(1);
        const int64_t out_dim = transpose_weight ? w.dim(1) : w.dim(0);
        require_shape(xin.channels == in_dim, "linear: input length mismatch");
        if (b_pid >= 0) {
            require_shape(params_[b_pid].size() == out_dim, "linear: bias length mismatch");
        }
        detail::Node n;
        n.kind = detail::OpKind::linear;
        n.in = {x};
        n.pids = {w_pid, b_pid};
        n.transpose_w = transpose_weight;
        return push_compute(std::move(n));
    }

    int relu(int x) { return unary(detail::OpKind::relu, x); }
    int sigmoid(int x) { return unary(detail::OpKind::sigmoid, x); }

    int softmax(int x, Axis axis) {
        detail::Node n;
        n.kind = detail::OpKind::softmax;
        n.in = {x};
        n.axis = axis;
        return push_compute(std::move(n));
    }

    int global_average_pool(int x) {
        require_shape(node(x).value.frames >= 1, "global_average_pool: empty input");
        return unary(detail::OpKind::gap, x);
    }

    int batch_norm(int x, int gamma_pid, int beta_pid, int rmean_pid, int rvar_pid) {
        const FrameTensor& xin = node(x).value;
        const int64_t c = xin.channels;
        require_shape(params_[gamma_pid].size() == c && params_[beta_pid].size() == c &&
                          params_[rmean_pid].size() == c && params_[rvar_pid].size() == c,
                      "batch_norm: per-channel array length mismatch");
        if (mode_ == Mode::train) {
            require(xin.batch * xin.frames >= 2, "batch_norm: train mode needs batch*frames >= 2");
        }
        detail::Node n;
        n.kind = detail::OpKind::batch_norm;
        n.in = {x};
        n.pids = {gamma_pid, beta_pid, rmean_pid, rvar_pid};
        return push_compute(std::move(n));
    }

    int dropout(int x, double p) {
        require(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1)");
        detail::Node n;
        n.kind = detail::OpKind::dropout;
        n.in = {x};
        n.p = p;
        if (mode_ == Mode::train && p > 0.0) {
            require(rng_ != nullptr, "dropout: train mode needs an rng");
            const FrameTensor& xin = node(x).value;
            n.mask.resize(static_cast<size_t>(xin.size()));
            for (auto& m : n.mask) m = rng_->bernoulli(p) ? 0 : 1;
        }
        return push_compute(std::move(n));
    }

    int add(int a, int b) {
        require_shape(node(a).value.same_shape(node(b).value), "add: shape mismatch");
        detail::Node n;
        n.kind = detail::OpKind::add;
        n.in = {a, b};
        return push_compute(std::move(n));
    }

    int weighted_sum(int a, int b, double wa, double wb) {
        require_shape(node(a).value.same_shape(node(b).value), "weighted_sum: shape mismatch");
        detail::Node n;
        n.kind = detail::OpKind::weighted_sum;
        n.in = {a, b};
        n.wa = wa;
        n.wb = wb;
        return push_compute(std::move(n));
    }

    // Per-frame scaling: w has shape [B, 1, F].
    int scale_frames(int x, int w) {
        const FrameTensor& xin = node(x).value;
        const FrameTensor& win = node(w).value;
        require_shape(win.batch == xin.batch && win.channels == 1 && win.frames == xin.frames,
                      "scale_frames: weights must be [B,1,F]");
        detail::Node n;
        n.kind = detail::OpKind::scale_frames;
        n.in = {x, w};
        return push_compute(std::move(n));
    }

    // Per-channel scaling: s has shape [B, C, 1].
    int scale_channels(int x, int s) {
        const FrameTensor& xin = node(x).value;
        const FrameTensor& sin = node(s).value;
        require_shape(sin.batch == xin.batch && sin.channels == xin.channels && sin.frames == 1,
                      "scale_channels: scales must be [B,C,1]");
        detail::Node n;
        n.kind = detail::OpKind::scale_channels;
        n.in = {x, s};
        return push_compute(std::move(n));
    }

    int slice_frames(int x, int64_t from, int64_t len) {
        const FrameTensor& xin = node(x).value;
        require_shape(from >= 0 && len >= 1 && from + len <= xin.frames,
                      "slice_frames: range out of bounds");
        detail::Node n;
        n.kind = detail::OpKind::slice_frames;
        n.in = {x};
        n.from = from;
        n.len = len;
        return push_compute(std::move(n));
    }

    int concat_frames(std::span<const int> xs) {
        require_shape(!xs.empty(), "concat_frames: no inputs");
        for (int id : xs) {
            require_shape(node(id).value.batch == node(xs[0]).value.batch &&
                              node(id).value.channels == node(xs[0]).value.channels,
                          "concat_frames: batch/channel mismatch");
        }
        detail::Node n;
        n.kind = detail::OpKind::concat_frames;
        n.in.assign(xs.begin(), xs.end());
        return push_compute(std::move(n));
    }

    int reshape(int x, int64_t channels, int64_t frames) {
        const FrameTensor& xin = node(x).value;
        require_shape(channels * frames == xin.channels * xin.frames,
                      "reshape: element count must be preserved");
        detail::Node n;
        n.kind = detail::OpKind::reshape;
        n.in = {x};
        n.from = channels;
        n.len = frames;
        return push_compute(std::move(n));
    }

    // Mean over batch and joints of per-joint Euclidean distance, both poses
    // root-centered (root = joint 0). pred and target are [B, 3J, 1].
    int pose_loss(int pred, FrameTensor target) {
        const FrameTensor& pin = node(pred).value;
        require_shape(pin.frames == 1 && pin.channels % 3 == 0,
                      "pose_loss: prediction must be [B, 3J, 1]");
        require_shape(pin.same_shape(target), "pose_loss: target shape mismatch");
        detail::Node n;
        n.kind = detail::OpKind::pose_loss;
        n.in = {pred};
        n.target = std::move(target);
        return push_compute(std::move(n));
    }

    // Mean squared 2-D distance (normalized image units) between the
    // perspective projection of the prediction, translated to the gt root,
    // and the observed 2-D joints. Joints that land behind the camera are
    // excluded and counted on the node.
    int reprojection_loss(int pred, FrameTensor observed2d, FrameTensor gt_root,
                          const Intrinsics& intr) {
        const FrameTensor& pin = node(pred).value;
        require_shape(pin.frames == 1 && pin.channels % 3 == 0,
                      "reprojection_loss: prediction must be [B, 3J, 1]");
        const int64_t j = pin.channels / 3;
        require_shape(observed2d.batch == pin.batch && observed2d.channels == 2 * j &&
                          observed2d.frames == 1,
                      "reprojection_loss: observations must be [B, 2J, 1]");
        require_shape(gt_root.batch == pin.batch && gt_root.channels == 3 && gt_root.frames == 1,
                      "reprojection_loss: roots must be [B, 3, 1]");
        require(intr.cx > 0 && intr.cy > 0, "reprojection_loss: invalid intrinsics");
        detail::Node n;
        n.kind = detail::OpKind::reproj_loss;
        n.in = {pred};
        n.target = std::move(observed2d);
        n.aux = std::move(gt_root);
        n.intr = intr;
        return push_compute(std::move(n));
    }

    // Reverse sweep from a scalar loss node. Gradients accumulate into the
    // parameter store; call params().zero_grads() between backward passes.
    void backward(int loss) {
        if (nodes_.empty()) throw StateError("backward: no forward pass recorded");
        require_shape(loss >= 0 && loss < static_cast<int>(nodes_.size()), "backward: bad node id");
        detail::Node& ln = node(loss);
        require_shape(ln.value.size() == 1, "backward: loss must be a scalar");
        ln.value.ensure_grad();
        ln.value.grad[0] = 1.0;
        for (int id = loss; id >= 0; --id) {
            detail::Node& n = node(id);
            if (n.value.grad.empty()) continue; // not on any path to the loss
            backward_op(n);
        }
    }

    // Replays the tape (saved dropout masks, no running-stat updates) and
    // returns the value of `out`. Used by the finite-difference oracle.
    double recompute(int out) {
        for (auto& n : nodes_) compute(n, /*initial=*/false);
        const FrameTensor& v = node(out).value;
        require_shape(v.size() == 1, "recompute: expected a scalar node");
        return v.values[0];
    }

private:
    int unary(detail::OpKind kind, int x) {
        detail::Node n;
        n.kind = kind;
        n.in = {x};
        return push_compute(std::move(n));
    }

    detail::Node& node(int id) { return nodes_.at(static_cast<size_t>(id)); }
    const detail::Node& node(int id) const { return nodes_.at(static_cast<size_t>(id)); }

    int push(detail::Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int push_compute(detail::Node n) {
        compute(n, /*initial=*/true);
        return push(std::move(n));
    }

    void compute(detail::Node& n, bool initial);
    void backward_op(detail::Node& n);

    ParamStore& params_;
    Mode mode_;
    RngStream* rng_;
    std::vector<detail::Node> nodes_;

    static constexpr double kBnEps = 1e-5;
    static constexpr double kBnMomentum = 0.1;
    static constexpr double kMinDepthMm = 1.0;
};

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

inline void Graph::compute(detail::Node& n, bool initial) {
    using detail::OpKind;
    switch (n.kind) {
        case OpKind::input:
            break;
        case OpKind::param_leaf: {
            const ParamArray& p = params_[n.pids[0]];
            if (initial) n.value = FrameTensor(1, p.size(), 1);
            std::copy(p.values.begin(), p.values.end(), n.value.values.begin());
            break;
        }
        case OpKind::conv1d: {
            const FrameTensor& x = node(n.in[0]).value;
            const ParamArray& w = params_[n.pids[0]];
            const int64_t c_out = w.dim(0), c_in_g = w.dim(1), k = w.dim(2);
            const int64_t groups = n.conv.groups, d = n.conv.dilation;
            const int64_t co_g = c_out / groups;
            int64_t pad_left = 0, f_out = 0;
            detail::pad_extents(n.conv, k, x.frames, pad_left, f_out);
            if (initial) n.value = FrameTensor(x.batch, c_out, f_out);
            FrameTensor& y = n.value;
            const double* bias = n.pids[1] >= 0 ? params_[n.pids[1]].values.data() : nullptr;
            for (int64_t b = 0; b < x.batch; ++b) {
                for (int64_t co = 0; co < c_out; ++co) {
                    double* yr = y.row(b, co);
                    const double b0 = bias ? bias[co] : 0.0;
                    std::fill(yr, yr + f_out, b0);
                    const int64_t g = co / co_g;
                    for (int64_t cg = 0; cg < c_in_g; ++cg) {
                        const double* xr = x.row(b, g * c_in_g + cg);
                        const double* wr = &w.values[static_cast<size_t>((co * c_in_g + cg) * k)];
                        for (int64_t j = 0; j < k; ++j) {
                            const double wj = wr[j];
                            if (wj == 0.0) continue;
                            const int64_t off = j * d - pad_left;
                            const int64_t f_lo = std::max<int64_t>(0, -off);
                            const int64_t f_hi = std::min(f_out, x.frames - off);
                            for (int64_t f = f_lo; f < f_hi; ++f) yr[f] += wj * xr[f + off];
                        }
                    }
                }
            }
            break;
        }
        case OpKind::linear: {
            const FrameTensor& x = node(n.in[0]).value;
            const ParamArray& w = params_[n.pids[0]];
            const int64_t in_dim = n.transpose_w ? w.dim(0) : w.dim(1);
            const int64_t out_dim = n.transpose_w ? w.dim(1) : w.dim(0);
            if (initial) n.value = FrameTensor(x.batch, out_dim, x.frames);
            FrameTensor& y = n.value;
            const double* bias = n.pids[1] >= 0 ? params_[n.pids[1]].values.data() : nullptr;
            for (int64_t b = 0; b < x.batch; ++b) {
                for (int64_t p = 0; p < out_dim; ++p) {
                    double* yr = y.row(b, p);
                    std::fill(yr, yr + x.frames, bias ? bias[p] : 0.0);
                    for (int64_t a = 0; a < in_dim; ++a) {
                        const double wv =
                            n.transpose_w ? w.values[a * out_dim + p] : w.values[p * in_dim + a];
                        if (wv == 0.0) continue;
                        const double* xr = x.row(b, a);
                        for (int64_t f = 0; f < x.frames; ++f) yr[f] += wv * xr[f];
                    }
                }
            }
            break;
        }
        case OpKind::relu: {
            const FrameTensor& x = node(n.in[0]).value;
            if (initial) n.value = FrameTensor(x.batch, x.channels, x.frames);
            for (size_t i = 0; i < x.values.size(); ++i)
                n.value.values[i] = x.values[i] > 0.0 ? x.values[i] : 0.0;
            break;
        }
        case OpKind::sigmoid: {
            const FrameTensor& x = node(n.in[0]).value;
            if (initial) n.value = FrameTensor(x.batch, x.channels, x.frames);
            for (size_t i = 0; i < x.values.size(); ++i)
                n.value.values[i] = 1.0 / (1.0 + std::exp(-x.values[i]));
            break;
        }
        case OpKind::softmax: {
            const FrameTensor& x = node(n.in[0]).value;
            if (initial) n.value = FrameTensor(x.batch, x.channels, x.frames);
            FrameTensor& y = n.value;
            // max-subtraction before exponentiation keeps the sum exact
            if (n.axis == Axis::frames) {
                for (int64_t b = 0; b < x.batch; ++b) {
                    for (int64_t c = 0; c < x.channels; ++c) {
                        const double* xr = x.row(b, c);
                        double* yr = y.row(b, c);
                        double m = -std::numeric_limits<double>::infinity();
                        for (int64_t f = 0; f < x.frames; ++f) m = std::max(m, xr[f]);
                        double s = 0.0;
                        for (int64_t f = 0; f < x.frames; ++f) s += yr[f] = std::exp(xr[f] - m);
                        for (int64_t f = 0; f < x.frames; ++f) yr[f] /= s;
                    }
                }
            } else {
                for (int64_t b = 0; b < x.batch; ++b) {
                    for (int64_t f = 0; f < x.frames; ++f) {
                        double m = -std::numeric_limits<double>::infinity();
                        for (int64_t c = 0; c < x.channels; ++c) m = std::max(m, x.at(b, c, f));
                        double s = 0.0;
                        for (int64_t c = 0; c < x.channels; ++c)
                            s += y.at(b, c, f) = std::exp(x.at(b, c, f) - m);
                        for (int64_t c = 0; c < x.channels; ++c) y.at(b, c, f) /= s;
                    }
                }
            }
            break;
        }
        case OpKind::gap: {
            const FrameTensor& x = node(n.in[0]).value;
            if (initial) n.value = FrameTensor(x.batch, x.channels, 1);
            for (int64_t b = 0; b < x.batch; ++b) {
                for (int64_t c = 0; c < x.channels; ++c) {
                    const double* xr = x.row(b, c);
                    double s = 0.0;
                    for (int64_t f = 0; f < x.frames; ++f) s += xr[f];
                    n.value.at(b, c, 0) = s / static_cast<double>(x.frames);
                }
            }
            break;
        }
        case OpKind::batch_norm: {
            const FrameTensor& x = node(n.in[0]).value;
            if (initial) n.value = FrameTensor(x.batch, x.channels, x.frames);
            const ParamArray& gamma = params_[n.pids[0]];
            const ParamArray& beta = params_[n.pids[1]];
            ParamArray& rmean = params_[n.pids[2]];
            ParamArray& rvar = params_[n.pids[3]];
            const int64_t cnt = x.batch * x.frames;
            n.saved_mean.assign(static_cast<size_t>(x.channels), 0.0);
            n.saved_var.assign(static_cast<size_t>(x.channels), 0.0);
            for (int64_t c = 0; c < x.channels; ++c) {
                double mean, var;
                if (mode_ == Mode::train) {
                    double s = 0.0;
                    for (int64_t b = 0; b < x.batch; ++b) {
                        const double* xr = x.row(b, c);
                        for (int64_t f = 0; f < x.frames; ++f) s += xr[f];
                    }
                    mean = s / static_cast<double>(cnt);
                    double sq = 0.0;
                    for (int64_t b = 0; b < x.batch; ++b) {
                        const double* xr = x.row(b, c);
                        for (int64_t f = 0; f < x.frames; ++f) {
                            const double d = xr[f] - mean;
                            sq += d * d;
                        }
                    }
                    var = sq / static_cast<double>(cnt);
                    if (initial) {
                        // running stats keep the biased estimator so eval
                        // reproduces a converged train-mode mapping exactly
                        rmean.values[c] = (1.0 - kBnMomentum) * rmean.values[c] + kBnMomentum * mean;
                        rvar.values[c] = (1.0 - kBnMomentum) * rvar.values[c] + kBnMomentum * var;
                    }
                } else {
                    mean = rmean.values[c];
                    var = rvar.values[c];
                }
                n.saved_mean[c] = mean;
                n.saved_var[c] = var;
                // epsilon only guards (near-)zero variance; unit variance
                // passes through exactly
                const double invstd = 1.0 / std::sqrt(std::max(var, kBnEps));
                const double g = gamma.values[c], bta = beta.values[c];
                for (int64_t b = 0; b < x.batch; ++b) {
                    const double* xr = x.row(b, c);
                    double* yr = n.value.row(b, c);
                    for (int64_t f = 0; f < x.frames; ++f) yr[f] = g * (xr[f] - mean) * invstd + bta;
                }
            }
            break;
        }
        case OpKind::dropout: {
            const FrameTensor& x = node(n.in[0]).value;
            if (initial) n.value = FrameTensor(x.batch, x.channels, x.frames);
            if (n.mask.empty()) {
                std::copy(x.values.begin(), x.values.end(), n.value.values.begin());
            } else {
                const double scale = 1.0 / (1.0 - n.p);
                for (size_t i = 0; i < x.values.size(); ++i)
                    n.value.values[i] = n.mask[i] ? x.values[i] * scale : 0.0;
            }
            break;
        }
        case OpKind::add: {
            const FrameTensor& a = node(n.in[0]).value;
            const FrameTensor& b = node(n.in[1]).value;
            if (initial) n.value = FrameTensor(a.batch, a.channels, a.frames);
            for (size_t i = 0; i < a.values.size(); ++i)
                n.value.values[i] = a.values[i] + b.values[i];
            break;
        }
        case OpKind::weighted_sum: {
            const FrameTensor& a = node(n.in[0]).value;
            const FrameTensor& b = node(n.in[1]).value;
            if (initial) n.value = FrameTensor(a.batch, a.channels, a.frames);
            for (size_t i = 0; i < a.values.size(); ++i)
                n.value.values[i] = n.wa * a.values[i] + n.wb * b.values[i];
            break;
        }
        case OpKind::scale_frames: {
            const FrameTensor& x = node(n.in[0]).value;
            const FrameTensor& w = node(n.in[1]).value;
            if (initial) n.value = FrameTensor(x.batch, x.channels, x.frames);
            for (int64_t b = 0; b < x.batch; ++b) {
                const double* wr = w.row(b, 0);
                for (int64_t c = 0; c < x.channels; ++c) {
                    const double* xr = x.row(b, c);
                    double* yr = n.value.row(b, c);
                    for (int64_t f = 0; f < x.frames; ++f) yr[f] = xr[f] * wr[f];
                }
            }
            break;
        }
        case OpKind::scale_channels: {
            const FrameTensor& x = node(n.in[0]).value;
            const FrameTensor& s = node(n.in[1]).value;
            if (initial) n.value = FrameTensor(x.batch, x.channels, x.frames);
            for (int64_t b = 0; b < x.batch; ++b) {
                for (int64_t c = 0; c < x.channels; ++c) {
                    const double sv = s.at(b, c, 0);
                    const double* xr = x.row(b, c);
                    double* yr = n.value.row(b, c);
                    for (int64_t f = 0; f < x.frames; ++f) yr[f] = xr[f] * sv;
                }
            }
            break;
        }
        case OpKind::slice_frames: {
            const FrameTensor& x = node(n.in[0]).value;
            if (initial) n.value = FrameTensor(x.batch, x.channels, n.len);
            for (int64_t b = 0; b < x.batch; ++b) {
                for (int64_t c = 0; c < x.channels; ++c) {
                    const double* xr = x.row(b, c) + n.from;
                    std::copy(xr, xr + n.len, n.value.row(b, c));
                }
            }
            break;
        }
        case OpKind::concat_frames: {
            const FrameTensor& x0 = node(n.in[0]).value;
            int64_t total = 0;
            for (int id : n.in) total += node(id).value.frames;
            if (initial) n.value = FrameTensor(x0.batch, x0.channels, total);
            for (int64_t b = 0; b < x0.batch; ++b) {
                for (int64_t c = 0; c < x0.channels; ++c) {
                    double* yr = n.value.row(b, c);
                    for (int id : n.in) {
                        const FrameTensor& x = node(id).value;
                        std::copy(x.row(b, c), x.row(b, c) + x.frames, yr);
                        yr += x.frames;
                    }
                }
            }
            break;
        }
        case OpKind::reshape: {
            const FrameTensor& x = node(n.in[0]).value;
            if (initial) n.value = FrameTensor(x.batch, n.from, n.len);
            std::copy(x.values.begin(), x.values.end(), n.value.values.begin());
            break;
        }
        case OpKind::pose_loss: {
            const FrameTensor& pred = node(n.in[0]).value;
            if (initial) n.value = FrameTensor(1, 1, 1);
            const int64_t j = pred.channels / 3;
            double total = 0.0;
            for (int64_t b = 0; b < pred.batch; ++b) {
                const double* p = pred.row(b, 0);
                const double* g = n.target.row(b, 0);
                for (int64_t q = 0; q < j; ++q) {
                    double d2 = 0.0;
                    for (int64_t k = 0; k < 3; ++k) {
                        const double dv = (p[3 * q + k] - p[k]) - (g[3 * q + k] - g[k]);
                        d2 += dv * dv;
                    }
                    total += std::sqrt(d2);
                }
            }
            n.value.values[0] = total / static_cast<double>(pred.batch * j);
            break;
        }
        case OpKind::reproj_loss: {
            const FrameTensor& pred = node(n.in[0]).value;
            if (initial) n.value = FrameTensor(1, 1, 1);
            const int64_t j = pred.channels / 3;
            double total = 0.0;
            int64_t included = 0;
            n.excluded = 0;
            for (int64_t b = 0; b < pred.batch; ++b) {
                const double* p = pred.row(b, 0);
                const double* obs = n.target.row(b, 0);
                const double* root = n.aux.row(b, 0);
                for (int64_t q = 0; q < j; ++q) {
                    const double px = p[3 * q] + root[0];
                    const double py = p[3 * q + 1] + root[1];
                    const double pz = p[3 * q + 2] + root[2];
                    if (pz < kMinDepthMm) {
                        ++n.excluded;
                        continue;
                    }
                    const double u = (n.intr.fx * px / pz + n.intr.cx) / n.intr.cx - 1.0;
                    const double v = (n.intr.fy * py / pz + n.intr.cy) / n.intr.cy - 1.0;
                    const double du = u - obs[2 * q];
                    const double dv = v - obs[2 * q + 1];
                    total += du * du + dv * dv;
                    ++included;
                }
            }
            n.value.values[0] = included > 0 ? total / static_cast<double>(included) : 0.0;
            n.from = included; // reused as the backward normalizer
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

inline void Graph::backward_op(detail::Node& n) {
    using detail::OpKind;
    const std::vector<double>& dy = n.value.grad;
    auto in_grad = [&](int slot) -> std::vector<double>& {
        detail::Node& m = node(n.in[slot]);
        m.value.ensure_grad();
        return m.value.grad;
    };
    switch (n.kind) {
        case OpKind::input:
            break;
        case OpKind::param_leaf: {
            ParamArray& p = params_[n.pids[0]];
            for (size_t i = 0; i < dy.size(); ++i) p.grad[i] += dy[i];
            break;
        }
        case OpKind::conv1d: {
            const FrameTensor& x = node(n.in[0]).value;
            std::vector<double>& dx = in_grad(0);
            ParamArray& w = params_[n.pids[0]];
            const int64_t c_out = w.dim(0), c_in_g = w.dim(1), k = w.dim(2);
            const int64_t groups = n.conv.groups, d = n.conv.dilation;
            const int64_t co_g = c_out / groups;
            const int64_t f_out = n.value.frames;
            int64_t pad_left = 0, tmp = 0;
            detail::pad_extents(n.conv, k, x.frames, pad_left, tmp);
            ParamArray* bias = n.pids[1] >= 0 ? &params_[n.pids[1]] : nullptr;
            for (int64_t b = 0; b < x.batch; ++b) {
                for (int64_t co = 0; co < c_out; ++co) {
                    const double* dyr = n.value.grad.data() + (b * c_out + co) * f_out;
                    if (bias) {
                        double s = 0.0;
                        for (int64_t f = 0; f < f_out; ++f) s += dyr[f];
                        bias->grad[co] += s;
                    }
                    const int64_t g = co / co_g;
                    for (int64_t cg = 0; cg < c_in_g; ++cg) {
                        const int64_t ci = g * c_in_g + cg;
                        const double* xr = x.row(b, ci);
                        double* dxr = dx.data() + (b * x.channels + ci) * x.frames;
                        const size_t wbase = static_cast<size_t>((co * c_in_g + cg) * k);
                        for (int64_t j = 0; j < k; ++j) {
                            const int64_t off = j * d - pad_left;
                            const int64_t f_lo = std::max<int64_t>(0, -off);
                            const int64_t f_hi = std::min(f_out, x.frames - off);
                            double dw = 0.0;
                            const double wj = w.values[wbase + j];
                            for (int64_t f = f_lo; f < f_hi; ++f) {
                                dw += dyr[f] * xr[f + off];
                                dxr[f + off] += wj * dyr[f];
                            }
                            w.grad[wbase + j] += dw;
                        }
                    }
                }
            }
            break;
        }
        case OpKind::linear: {
            const FrameTensor& x = node(n.in[0]).value;
            std::vector<double>& dx = in_grad(0);
            ParamArray& w = params_[n.pids[0]];
            const int64_t in_dim = n.transpose_w ? w.dim(0) : w.dim(1);
            const int64_t out_dim = n.transpose_w ? w.dim(1) : w.dim(0);
            ParamArray* bias = n.pids[1] >= 0 ? &params_[n.pids[1]] : nullptr;
            for (int64_t b = 0; b < x.batch; ++b) {
                for (int64_t p = 0; p < out_dim; ++p) {
                    const double* dyr = dy.data() + (b * out_dim + p) * x.frames;
                    if (bias) {
                        double s = 0.0;
                        for (int64_t f = 0; f < x.frames; ++f) s += dyr[f];
                        bias->grad[p] += s;
                    }
                    for (int64_t a = 0; a < in_dim; ++a) {
                        const size_t wi = n.transpose_w ? static_cast<size_t>(a * out_dim + p)
                                                        : static_cast<size_t>(p * in_dim + a);
                        const double wv = w.values[wi];
                        const double* xr = x.row(b, a);
                        double* dxr = dx.data() + (b * in_dim + a) * x.frames;
                        double dw = 0.0;
                        for (int64_t f = 0; f < x.frames; ++f) {
                            dw += dyr[f] * xr[f];
                            dxr[f] += wv * dyr[f];
                        }
                        w.grad[wi] += dw;
                    }
                }
            }
            break;
        }
        case OpKind::relu: {
            const FrameTensor& x = node(n.in[0]).value;
            std::vector<double>& dx = in_grad(0);
            for (size_t i = 0; i < dy.size(); ++i)
                if (x.values[i] > 0.0) dx[i] += dy[i];
            break;
        }
        case OpKind::sigmoid: {
            std::vector<double>& dx = in_grad(0);
            for (size_t i = 0; i < dy.size(); ++i) {
                const double s = n.value.values[i];
                dx[i] += dy[i] * s * (1.0 - s);
            }
            break;
        }
        case OpKind::softmax: {
            const FrameTensor& y = n.value;
            std::vector<double>& dx = in_grad(0);
            if (n.axis == Axis::frames) {
                for (int64_t b = 0; b < y.batch; ++b) {
                    for (int64_t c = 0; c < y.channels; ++c) {
                        const double* yr = y.row(b, c);
                        const double* dyr = dy.data() + (b * y.channels + c) * y.frames;
                        double dot = 0.0;
                        for (int64_t f = 0; f < y.frames; ++f) dot += dyr[f] * yr[f];
                        double* dxr = dx.data() + (b * y.channels + c) * y.frames;
                        for (int64_t f = 0; f < y.frames; ++f) dxr[f] += yr[f] * (dyr[f] - dot);
                    }
                }
            } else {
                for (int64_t b = 0; b < y.batch; ++b) {
                    for (int64_t f = 0; f < y.frames; ++f) {
                        double dot = 0.0;
                        for (int64_t c = 0; c < y.channels; ++c)
                            dot += dy[(b * y.channels + c) * y.frames + f] * y.at(b, c, f);
                        for (int64_t c = 0; c < y.channels; ++c) {
                            const size_t i = (b * y.channels + c) * y.frames + f;
                            dx[i] += y.values[i] * (dy[i] - dot);
                        }
                    }
                }
            }
            break;
        }
        case OpKind::gap: {
            const FrameTensor& x = node(n.in[0]).value;
            std::vector<double>& dx = in_grad(0);
            const double inv = 1.0 / static_cast<double>(x.frames);
            for (int64_t b = 0; b < x.batch; ++b) {
                for (int64_t c = 0; c < x.channels; ++c) {
                    const double g = dy[(b * x.channels + c)] * inv;
                    double* dxr = dx.data() + (b * x.channels + c) * x.frames;
                    for (int64_t f = 0; f < x.frames; ++f) dxr[f] += g;
                }
            }
            break;
        }
        case OpKind::batch_norm: {
            const FrameTensor& x = node(n.in[0]).value;
            std::vector<double>& dx = in_grad(0);
            ParamArray& gamma = params_[n.pids[0]];
            ParamArray& beta = params_[n.pids[1]];
            const int64_t cnt = x.batch * x.frames;
            for (int64_t c = 0; c < x.channels; ++c) {
                const double mean = n.saved_mean[c];
                const bool clamped = n.saved_var[c] <= kBnEps;
                const double invstd = 1.0 / std::sqrt(std::max(n.saved_var[c], kBnEps));
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int64_t b = 0; b < x.batch; ++b) {
                    const double* xr = x.row(b, c);
                    const double* dyr = dy.data() + (b * x.channels + c) * x.frames;
                    for (int64_t f = 0; f < x.frames; ++f) {
                        sum_dy += dyr[f];
                        sum_dy_xhat += dyr[f] * (xr[f] - mean) * invstd;
                    }
                }
                gamma.grad[c] += sum_dy_xhat;
                beta.grad[c] += sum_dy;
                const double g = gamma.values[c];
                if (mode_ == Mode::train) {
                    // when the variance guard clamps, invstd no longer depends
                    // on the inputs and the xhat correction term vanishes
                    const double inv_cnt = 1.0 / static_cast<double>(cnt);
                    const double var_term = clamped ? 0.0 : 1.0;
                    for (int64_t b = 0; b < x.batch; ++b) {
                        const double* xr = x.row(b, c);
                        const double* dyr = dy.data() + (b * x.channels + c) * x.frames;
                        double* dxr = dx.data() + (b * x.channels + c) * x.frames;
                        for (int64_t f = 0; f < x.frames; ++f) {
                            const double xhat = (xr[f] - mean) * invstd;
                            dxr[f] += g * invstd *
                                      (dyr[f] - sum_dy * inv_cnt -
                                       var_term * xhat * sum_dy_xhat * inv_cnt);
                        }
                    }
                } else {
                    for (int64_t b = 0; b < x.batch; ++b) {
                        const double* dyr = dy.data() + (b * x.channels + c) * x.frames;
                        double* dxr = dx.data() + (b * x.channels + c) * x.frames;
                        for (int64_t f = 0; f < x.frames; ++f) dxr[f] += g * invstd * dyr[f];
                    }
                }
            }
            break;
        }
        case OpKind::dropout: {
            std::vector<double>& dx = in_grad(0);
            if (n.mask.empty()) {
                for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
            } else {
                const double scale = 1.0 / (1.0 - n.p);
                for (size_t i = 0; i < dy.size(); ++i)
                    if (n.mask[i]) dx[i] += dy[i] * scale;
            }
            break;
        }
        case OpKind::add: {
            std::vector<double>& da = in_grad(0);
            std::vector<double>& db = in_grad(1);
            for (size_t i = 0; i < dy.size(); ++i) {
                da[i] += dy[i];
                db[i] += dy[i];
            }
            break;
        }
        case OpKind::weighted_sum: {
            std::vector<double>& da = in_grad(0);
            std::vector<double>& db = in_grad(1);
            for (size_t i = 0; i < dy.size(); ++i) {
                da[i] += n.wa * dy[i];
                db[i] += n.wb * dy[i];
            }
            break;
        }
        case OpKind::scale_frames: {
            const FrameTensor& x = node(n.in[0]).value;
            const FrameTensor& w = node(n.in[1]).value;
            std::vector<double>& dx = in_grad(0);
            std::vector<double>& dw = in_grad(1);
            for (int64_t b = 0; b < x.batch; ++b) {
                const double* wr = w.row(b, 0);
                double* dwr = dw.data() + b * x.frames;
                for (int64_t c = 0; c < x.channels; ++c) {
                    const double* xr = x.row(b, c);
                    const double* dyr = dy.data() + (b * x.channels + c) * x.frames;
                    double* dxr = dx.data() + (b * x.channels + c) * x.frames;
                    for (int64_t f = 0; f < x.frames; ++f) {
                        dxr[f] += dyr[f] * wr[f];
                        dwr[f] += dyr[f] * xr[f];
                    }
                }
            }
            break;
        }
        case OpKind::scale_channels: {
            const FrameTensor& x = node(n.in[0]).value;
            const FrameTensor& s = node(n.in[1]).value;
            std::vector<double>& dx = in_grad(0);
            std::vector<double>& ds = in_grad(1);
            for (int64_t b = 0; b < x.batch; ++b) {
                for (int64_t c = 0; c < x.channels; ++c) {
                    const double sv = s.at(b, c, 0);
                    const double* xr = x.row(b, c);
                    const double* dyr = dy.data() + (b * x.channels + c) * x.frames;
                    double* dxr = dx.data() + (b * x.channels + c) * x.frames;
                    double acc = 0.0;
                    for (int64_t f = 0; f < x.frames; ++f) {
                        dxr[f] += dyr[f] * sv;
                        acc += dyr[f] * xr[f];
                    }
                    ds[b * x.channels + c] += acc;
                }
            }
            break;
        }
        case OpKind::slice_frames: {
            const FrameTensor& x = node(n.in[0]).value;
            std::vector<double>& dx = in_grad(0);
            for (int64_t b = 0; b < x.batch; ++b) {
                for (int64_t c = 0; c < x.channels; ++c) {
                    const double* dyr = dy.data() + (b * x.channels + c) * n.len;
                    double* dxr = dx.data() + (b * x.channels + c) * x.frames + n.from;
                    for (int64_t f = 0; f < n.len; ++f) dxr[f] += dyr[f];
                }
            }
            break;
        }
        case OpKind::concat_frames: {
            const int64_t batch = n.value.batch, channels = n.value.channels;
            int64_t off = 0;
            for (int id : n.in) {
                detail::Node& m = node(id);
                m.value.ensure_grad();
                const int64_t fm = m.value.frames;
                for (int64_t b = 0; b < batch; ++b) {
                    for (int64_t c = 0; c < channels; ++c) {
                        const double* dyr = dy.data() + (b * channels + c) * n.value.frames + off;
                        double* dxr = m.value.grad.data() + (b * channels + c) * fm;
                        for (int64_t f = 0; f < fm; ++f) dxr[f] += dyr[f];
                    }
                }
                off += fm;
            }
            break;
        }
        case OpKind::reshape: {
            std::vector<double>& dx = in_grad(0);
            for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
            break;
        }
        case OpKind::pose_loss: {
            const FrameTensor& pred = node(n.in[0]).value;
            std::vector<double>& dx = in_grad(0);
            const int64_t j = pred.channels / 3;
            const double scale = dy[0] / static_cast<double>(pred.batch * j);
            for (int64_t b = 0; b < pred.batch; ++b) {
                const double* p = pred.row(b, 0);
                const double* g = n.target.row(b, 0);
                double* dp = dx.data() + b * pred.channels;
                for (int64_t q = 1; q < j; ++q) {
                    double diff[3];
                    double d2 = 0.0;
                    for (int64_t k = 0; k < 3; ++k) {
                        diff[k] = (p[3 * q + k] - p[k]) - (g[3 * q + k] - g[k]);
                        d2 += diff[k] * diff[k];
                    }
                    const double dist = std::sqrt(d2);
                    if (dist < 1e-12) continue; // subgradient 0 at the singularity
                    for (int64_t k = 0; k < 3; ++k) {
                        const double u = scale * diff[k] / dist;
                        dp[3 * q + k] += u;
                        dp[k] -= u;
                    }
                }
            }
            break;
        }
        case OpKind::reproj_loss: {
            const FrameTensor& pred = node(n.in[0]).value;
            std::vector<double>& dx = in_grad(0);
            const int64_t j = pred.channels / 3;
            if (n.from == 0) break;
            const double scale = dy[0] * 2.0 / static_cast<double>(n.from);
            for (int64_t b = 0; b < pred.batch; ++b) {
                const double* p = pred.row(b, 0);
                const double* obs = n.target.row(b, 0);
                const double* root = n.aux.row(b, 0);
                double* dp = dx.data() + b * pred.channels;
                for (int64_t q = 0; q < j; ++q) {
                    const double px = p[3 * q] + root[0];
                    const double py = p[3 * q + 1] + root[1];
                    const double pz = p[3 * q + 2] + root[2];
                    if (pz < kMinDepthMm) continue;
                    const double u = (n.intr.fx * px / pz + n.intr.cx) / n.intr.cx - 1.0;
                    const double v = (n.intr.fy * py / pz + n.intr.cy) / n.intr.cy - 1.0;
                    const double du = u - obs[2 * q];
                    const double dv = v - obs[2 * q + 1];
                    const double ax = n.intr.fx / n.intr.cx;
                    const double ay = n.intr.fy / n.intr.cy;
                    dp[3 * q] += scale * du * ax / pz;
                    dp[3 * q + 1] += scale * dv * ay / pz;
                    dp[3 * q + 2] += scale * (-du * ax * px - dv * ay * py) / (pz * pz);
                }
            }
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// finite-difference oracle
// ---------------------------------------------------------------------------

struct FdReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t entries_checked = 0;
};

// Central-difference check of d(loss)/d(param) for a parameter subset.
// Requires a deterministic tape (eval-mode dropout, or masks already frozen).
// Relative error: |analytic - numeric| / max(1, |analytic|).
inline FdReport finite_diff_check(Graph& g, int loss, const std::vector<int>& param_ids,
                                  double eps, int max_entries_per_param, RngStream& rng) {
    g.params().zero_grads();
    g.backward(loss);
    FdReport report;
    for (int pid : param_ids) {
        ParamArray& p = g.params()[pid];
        if (!p.trainable) continue;
        std::vector<int64_t> entries;
        if (p.size() <= max_entries_per_param) {
            entries.resize(static_cast<size_t>(p.size()));
            for (int64_t i = 0; i < p.size(); ++i) entries[static_cast<size_t>(i)] = i;
        } else {
            for (int i = 0; i < max_entries_per_param; ++i)
                entries.push_back(static_cast<int64_t>(rng.index(static_cast<uint64_t>(p.size()))));
        }
        for (int64_t i : entries) {
            const double saved = p.values[static_cast<size_t>(i)];
            p.values[static_cast<size_t>(i)] = saved + eps;
            const double up = g.recompute(loss);
            p.values[static_cast<size_t>(i)] = saved - eps;
            const double dn = g.recompute(loss);
            p.values[static_cast<size_t>(i)] = saved;
            const double numeric = (up - dn) / (2.0 * eps);
            const double analytic = p.grad[static_cast<size_t>(i)];
            const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
            ++report.entries_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = p.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    g.recompute(loss); // restore unperturbed values on the tape
    return report;
}

} // namespace atcn
