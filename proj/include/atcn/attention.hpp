#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "atcn/common.hpp"
#include "atcn/graph.hpp"
#include "atcn/pose.hpp"

namespace atcn {

// Normalized cross-correlation between two 2-D poses: centroid-center each
// pose, flatten to a 2J-vector and take the cosine, clamped to [0,1].
// Centering per coordinate makes the score translation-invariant; clamping
// keeps only "positive" similarity.
inline double ncc(const Pose2D& a, const Pose2D& b) {
    require_shape(a.joints == b.joints, "ncc: joint count mismatch");
    const int64_t j = a.joints;
    require_shape(j >= 1, "ncc: empty pose");
    double max = 0, may = 0, mbx = 0, mby = 0;
    for (int64_t q = 0; q < j; ++q) {
        max += a.x(q);
        may += a.y(q);
        mbx += b.x(q);
        mby += b.y(q);
    }
    max /= static_cast<double>(j);
    may /= static_cast<double>(j);
    mbx /= static_cast<double>(j);
    mby /= static_cast<double>(j);
    double dot = 0, na = 0, nb = 0;
    for (int64_t q = 0; q < j; ++q) {
        const double ax = a.x(q) - max, ay = a.y(q) - may;
        const double bx = b.x(q) - mbx, by = b.y(q) - mby;
        dot += ax * bx + ay * by;
        na += ax * ax + ay * ay;
        nb += bx * bx + by * by;
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    const double c = dot / (std::sqrt(na) * std::sqrt(nb));
    return c < 0.0 ? 0.0 : (c > 1.0 ? 1.0 : c);
}

// Per-layer temporal weight vector. Layer 0 holds ncc scores in [0,1];
// deeper layers hold sigmoid outputs in (0,1).
struct TemporalWeights {
    int64_t layer = 0;
    std::vector<double> weights;
};

// W^(0): per-frame ncc against the target frame.
inline TemporalWeights temporal_attention_init(std::span<const Pose2D> window, int64_t target) {
    require_shape(!window.empty(), "temporal_attention_init: empty window");
    require_shape(target >= 0 && target < static_cast<int64_t>(window.size()),
                  "temporal_attention_init: target out of range");
    TemporalWeights w;
    w.layer = 0;
    w.weights.reserve(window.size());
    for (const Pose2D& p : window) w.weights.push_back(ncc(p, window[static_cast<size_t>(target)]));
    return w;
}

// W^(l) = sigmoid(theta^T W^(l-1)). w_prev is a [B, lambda_prev, 1] node,
// theta a [lambda_prev, lambda_l] parameter; result is [B, lambda_l, 1].
inline int temporal_attention_propagate(Graph& g, int w_prev, int theta_pid) {
    return g.sigmoid(g.linear(w_prev, theta_pid, -1, /*transpose_weight=*/true));
}

// Multiplies temporal slice u of a [B, C, lambda] tensor by weight u.
// w is a [B, lambda, 1] node.
inline int apply_temporal_weights(Graph& g, int tensor, int w) {
    const int64_t lambda = g.value(w).channels;
    require_shape(g.value(tensor).frames == lambda,
                  "apply_temporal_weights: weight count must equal frame count");
    return g.scale_frames(tensor, g.reshape(w, 1, lambda));
}

// One dilated-convolution block: conv -> batch_norm -> relu -> dropout.
struct TcnUnitParams {
    int w = -1, b = -1;
    int bn_gamma = -1, bn_beta = -1, bn_rmean = -1, bn_rvar = -1;
};

inline int tcn_unit(Graph& g, int x, const TcnUnitParams& p, const Conv1dSpec& spec,
                    double dropout_p) {
    int h = g.conv1d(x, p.w, p.b, spec);
    h = g.batch_norm(h, p.bn_gamma, p.bn_beta, p.bn_rmean, p.bn_rvar);
    h = g.relu(h);
    return g.dropout(h, dropout_p);
}

// Kernel attention over M dilated branches: branch outputs are fused by
// summation, squeezed through GAP and theta_r, re-expanded per branch by
// theta_m, and softmax-normalized across branches per channel. The result is
// the gate-weighted sum of the branch outputs.
struct KernelAttentionParams {
    std::vector<TcnUnitParams> branch_units;
    std::vector<Conv1dSpec> branch_specs;
    int theta_r = -1;
    std::vector<int> theta_m;
    double dropout_p = 0.0;
};

struct KernelAttentionResult {
    int output = -1;
    int gates = -1; // [B, C, M], rows sum to 1
};

inline KernelAttentionResult kernel_attention(Graph& g, int x, const KernelAttentionParams& p) {
    const size_t m = p.branch_units.size();
    require(m >= 1 && p.branch_specs.size() == m && p.theta_m.size() == m,
            "kernel_attention: branch parameter lists disagree");
    std::vector<int> branch_out;
    branch_out.reserve(m);
    for (size_t i = 0; i < m; ++i) {
        require(p.branch_specs[i].padding != Padding::valid,
                "kernel_attention: branches need shape-preserving padding");
        branch_out.push_back(tcn_unit(g, x, p.branch_units[i], p.branch_specs[i], p.dropout_p));
        require(g.value(branch_out[i]).same_shape(g.value(branch_out[0])),
                "kernel_attention: branch output shape mismatch");
    }
    int fused = branch_out[0];
    for (size_t i = 1; i < m; ++i) fused = g.add(fused, branch_out[i]);
    const int cstats = g.global_average_pool(fused);          // [B, C, 1]
    const int squeezed = g.linear(cstats, p.theta_r, -1);     // [B, r, 1]
    std::vector<int> logits;
    logits.reserve(m);
    for (size_t i = 0; i < m; ++i) logits.push_back(g.linear(squeezed, p.theta_m[i], -1));
    const int gates = g.softmax(g.concat_frames(logits), Axis::frames); // [B, C, M]
    int out = -1;
    for (size_t i = 0; i < m; ++i) {
        const int gi = g.slice_frames(gates, static_cast<int64_t>(i), 1);
        const int scaled = g.scale_channels(branch_out[i], gi);
        out = (out < 0) ? scaled : g.add(out, scaled);
    }
    return {out, gates};
}

} // namespace atcn
