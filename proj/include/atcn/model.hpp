#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "atcn/attention.hpp"
#include "atcn/common.hpp"
#include "atcn/dataio.hpp"
#include "atcn/graph.hpp"
#include "atcn/pose.hpp"
#include "atcn/rng.hpp"
#include "atcn/tensor.hpp"

namespace atcn {

// Full architecture recipe. Defaults follow the published L4xV2 prototype
// knobs except for layer/level counts, which the caller picks.
struct ModelConfig {
    int64_t layers = 4;   // L: top + middle + bottom
    int64_t levels = 2;   // V: dilation levels (level 0 + V-1 skip units)
    int64_t joints = 17;  // J
    int64_t channels = 1024;
    int64_t branches = 3; // M kernel-attention branches
    int64_t groups = 8;   // G for every grouped convolution
    int64_t reduction = 128;
    double dropout = 0.2;
    bool causal = false;
    std::vector<int64_t> kernels;   // per reducing stage; default all 3
    std::vector<int64_t> dilations; // per reducing stage; default cumulative kernel product

    int64_t stages() const { return layers - 1; } // reducing convolutions

    std::vector<int64_t> resolved_kernels() const {
        if (!kernels.empty()) return kernels;
        return std::vector<int64_t>(static_cast<size_t>(stages()), 3);
    }

    std::vector<int64_t> resolved_dilations() const {
        if (!dilations.empty()) return dilations;
        const auto ks = resolved_kernels();
        std::vector<int64_t> ds(ks.size());
        int64_t d = 1;
        for (size_t i = 0; i < ks.size(); ++i) {
            ds[i] = d;
            d *= ks[i];
        }
        return ds;
    }

    void validate() const {
        require(layers >= 3, "model config: layers must be >= 3");
        require(levels >= 1 && levels <= layers - 2, "model config: need 1 <= levels <= layers-2");
        require(joints >= 2, "model config: joints must be >= 2");
        require(channels >= 1 && groups >= 1 && channels % groups == 0,
                "model config: channels must be divisible by groups");
        require(branches >= 1, "model config: branches must be >= 1");
        require(reduction >= 1, "model config: reduction must be >= 1");
        require(dropout >= 0.0 && dropout < 1.0, "model config: dropout must be in [0,1)");
        const auto ks = resolved_kernels();
        require(static_cast<int64_t>(ks.size()) == stages(),
                "model config: kernels must list one size per reducing stage");
        for (int64_t k : ks) require(k >= 1 && k % 2 == 1, "model config: kernel sizes must be odd");
        const auto ds = resolved_dilations();
        require(ds.size() == ks.size(), "model config: dilations must match kernels");
        for (int64_t d : ds) require(d >= 1, "model config: dilations must be >= 1");
    }
};

// Receptive field: product of the reducing stages' kernel sizes.
inline int64_t receptive_field(const ModelConfig& cfg) {
    int64_t n = 1;
    for (int64_t k : cfg.resolved_kernels()) n *= k;
    return n;
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"layers", c.layers},       {"levels", c.levels},
            {"joints", c.joints},       {"channels", c.channels},
            {"branches", c.branches},   {"groups", c.groups},
            {"reduction", c.reduction}, {"dropout", c.dropout},
            {"causal", c.causal},       {"kernels", c.resolved_kernels()},
            {"dilations", c.resolved_dilations()}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    require(j.is_object(), "model config: expected a JSON object");
    static const char* known[] = {"layers",    "levels",  "joints",  "channels",
                                  "branches",  "groups",  "reduction", "dropout",
                                  "causal",    "kernels", "dilations"};
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || item.key() == k;
        require(ok, "model config: unknown key '" + item.key() + "'");
    }
    ModelConfig c;
    if (j.contains("layers")) c.layers = j.at("layers").get<int64_t>();
    if (j.contains("levels")) c.levels = j.at("levels").get<int64_t>();
    if (j.contains("joints")) c.joints = j.at("joints").get<int64_t>();
    if (j.contains("channels")) c.channels = j.at("channels").get<int64_t>();
    if (j.contains("branches")) c.branches = j.at("branches").get<int64_t>();
    if (j.contains("groups")) c.groups = j.at("groups").get<int64_t>();
    if (j.contains("reduction")) c.reduction = j.at("reduction").get<int64_t>();
    if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
    if (j.contains("causal")) c.causal = j.at("causal").get<bool>();
    if (j.contains("kernels")) c.kernels = j.at("kernels").get<std::vector<int64_t>>();
    if (j.contains("dilations")) c.dilations = j.at("dilations").get<std::vector<int64_t>>();
    c.validate();
    return c;
}

// ATCN + MDC network. Layer stack at level 0: frame-wise input projection,
// then L-1 reducing stages (valid dilated conv; stages 2..L-1 add kernel
// attention and a cropped identity skip), then global pooling into a 3J
// linear head. Temporal attention weights the input of every reducing stage.
// Levels 1..V-1 are dilated skip units reading the stage-1 representation and
// summing into deeper stage outputs.
class Model {
public:
    static Model build(const ModelConfig& cfg, uint64_t init_seed = 1) {
        cfg.validate();
        Model m;
        m.cfg_ = cfg;
        m.kernels_ = cfg.resolved_kernels();
        m.dilations_ = cfg.resolved_dilations();
        const int64_t n = receptive_field(cfg);
        m.lambda_.push_back(n);
        for (int64_t s = 1; s <= cfg.stages(); ++s) {
            const int64_t prev = m.lambda_.back();
            const int64_t next = prev - m.dilations_[static_cast<size_t>(s - 1)] *
                                            (m.kernels_[static_cast<size_t>(s - 1)] - 1);
            require(next >= 1, "model config: stage " + std::to_string(s) +
                                   " reduces the window below one frame");
            m.lambda_.push_back(next);
        }
        for (int64_t v = 1; v < cfg.levels; ++v) {
            int64_t span = 2; // kernel 3
            for (int64_t i = 0; i < v; ++i) span *= 3;
            const int64_t out_frames = m.lambda_[1] - span;
            require(out_frames >= m.lambda_[static_cast<size_t>(v + 1)],
                    "model config: level " + std::to_string(v) +
                        " skip unit output is shorter than its target stage");
        }

        RngStream rng = RngStream::derive(init_seed, 0x1417);
        const int64_t c = cfg.channels, g = cfg.groups, j2 = 2 * cfg.joints;

        m.embed_w_ = m.add_matrix(rng, "embed.w", c, j2);
        m.embed_b_ = m.params_.add("embed.b", {c});
        for (int64_t s = 1; s <= cfg.stages(); ++s) {
            const std::string base = "stage" + std::to_string(s);
            const int64_t k = m.kernels_[static_cast<size_t>(s - 1)];
            StageParams sp;
            sp.base = m.add_tcn_unit(rng, base, c, c / g, k);
            if (s >= 2) {
                sp.has_attention = true;
                for (int64_t b = 0; b < cfg.branches; ++b) {
                    sp.ka.branch_units.push_back(m.add_tcn_unit(
                        rng, base + ".branch" + std::to_string(b), c, c / g, k));
                    Conv1dSpec spec;
                    spec.dilation = (b + 1) * m.dilations_[static_cast<size_t>(s - 1)];
                    spec.groups = g;
                    spec.padding = cfg.causal ? Padding::causal : Padding::same;
                    sp.ka.branch_specs.push_back(spec);
                }
                sp.ka.theta_r = m.add_matrix(rng, base + ".attn.theta_r", cfg.reduction, c);
                for (int64_t b = 0; b < cfg.branches; ++b) {
                    sp.ka.theta_m.push_back(
                        m.add_matrix(rng, base + ".attn.theta_m" + std::to_string(b), c,
                                     cfg.reduction));
                }
                sp.ka.dropout_p = cfg.dropout;
            }
            m.stages_.push_back(std::move(sp));
        }
        for (int64_t l = 1; l <= cfg.layers - 2; ++l) {
            m.theta_t_.push_back(m.add_matrix(rng, "temporal.theta_t" + std::to_string(l),
                                              m.lambda_[static_cast<size_t>(l - 1)],
                                              m.lambda_[static_cast<size_t>(l)]));
        }
        for (int64_t v = 1; v < cfg.levels; ++v) {
            m.mdc_.push_back(m.add_tcn_unit(rng, "mdc" + std::to_string(v), c, c / g, 3));
        }
        m.head_w_ = m.add_matrix(rng, "head.w", 3 * cfg.joints, c);
        m.head_b_ = m.params_.add("head.b", {3 * cfg.joints});
        return m;
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    int64_t window_length() const { return lambda_[0]; }
    int64_t target_index() const { return cfg_.causal ? lambda_[0] - 1 : (lambda_[0] - 1) / 2; }

    int64_t param_count() const { return params_.trainable_size(); }

    // Assembles the forward graph. input is [B, 2J, n]; w0 the per-sample
    // layer-0 temporal weights [B, n, 1]. Returns the [B, 3J, 1] output node
    // in millimeters (not yet root-centered).
    int build_forward(Graph& g, int input, int w0) const {
        require_shape(g.value(input).channels == 2 * cfg_.joints &&
                          g.value(input).frames == lambda_[0],
                      "forward: input must be [B, 2J, n]");
        require_shape(g.value(w0).channels == lambda_[0] && g.value(w0).frames == 1,
                      "forward: w0 must be [B, n, 1]");
        int x = g.linear(input, embed_w_, embed_b_); // [B, C, n]
        int w = w0;
        int stage1_out = -1;
        for (int64_t s = 1; s <= cfg_.stages(); ++s) {
            const StageParams& sp = stages_[static_cast<size_t>(s - 1)];
            const int64_t lam_in = lambda_[static_cast<size_t>(s - 1)];
            const int64_t lam_out = lambda_[static_cast<size_t>(s)];
            Conv1dSpec spec;
            spec.dilation = dilations_[static_cast<size_t>(s - 1)];
            spec.groups = cfg_.groups;
            spec.padding = Padding::valid;
            const int weighted = apply_temporal_weights(g, x, w);
            int y = tcn_unit(g, weighted, sp.base, spec, cfg_.dropout);
            if (sp.has_attention) {
                y = kernel_attention(g, y, sp.ka).output;
                y = g.add(y, crop(g, x, lam_out)); // identity skip
            }
            if (s == 1) stage1_out = y;
            const int64_t v = s - 1; // level-v unit feeds stage s = v+1
            if (v >= 1 && v < cfg_.levels) {
                Conv1dSpec mspec;
                mspec.dilation = 1;
                for (int64_t i = 0; i < v; ++i) mspec.dilation *= 3;
                mspec.groups = cfg_.groups;
                mspec.padding = Padding::valid;
                const int skip = tcn_unit(g, stage1_out, mdc_[static_cast<size_t>(v - 1)], mspec,
                                          cfg_.dropout);
                y = g.add(y, crop(g, skip, lam_out));
            }
            x = y;
            if (s <= cfg_.layers - 2) {
                w = temporal_attention_propagate(g, w, theta_t_[static_cast<size_t>(s - 1)]);
            }
            (void)lam_in;
        }
        const int pooled = g.global_average_pool(x);
        const int head = g.linear(pooled, head_w_, head_b_);
        // the head learns meter-scale values; outputs are millimeters
        return g.weighted_sum(head, head, kOutputScaleMm, 0.0);
    }

    // Single-window forward. Output is root-relative (joint 0 at the origin).
    Pose3D forward(std::span<const Pose2D> window, Mode mode = Mode::eval,
                   RngStream* rng = nullptr) {
        require_shape(static_cast<int64_t>(window.size()) == lambda_[0],
                      "forward: window length must equal the receptive field (" +
                          std::to_string(lambda_[0]) + ")");
        Graph g(params_, mode, rng);
        const int in = g.input(pack_windows(window));
        const int w0 = g.input(pack_w0(window, target_index()));
        const int out = build_forward(g, in, w0);
        return unpack_pose(g.value(out), 0);
    }

    // Causal entry point; streaming callers feed [t-n+1, t] windows.
    Pose3D causal_forward(std::span<const Pose2D> window, Mode mode = Mode::eval,
                          RngStream* rng = nullptr) {
        require(cfg_.causal, "causal_forward: model was not built with causal=true");
        return forward(window, mode, rng);
    }

    // --- batching helpers -------------------------------------------------

    FrameTensor pack_windows(std::span<const Pose2D> window) const {
        std::vector<std::span<const Pose2D>> one{window};
        return pack_window_batch(one);
    }

    FrameTensor pack_window_batch(std::span<const std::span<const Pose2D>> windows) const {
        const int64_t n = lambda_[0], j2 = 2 * cfg_.joints;
        FrameTensor t(static_cast<int64_t>(windows.size()), j2, n);
        for (int64_t b = 0; b < t.batch; ++b) {
            const auto& win = windows[static_cast<size_t>(b)];
            require_shape(static_cast<int64_t>(win.size()) == n, "pack: bad window length");
            for (int64_t f = 0; f < n; ++f) {
                const Pose2D& p = win[static_cast<size_t>(f)];
                require_shape(p.joints == cfg_.joints, "pack: joint count mismatch");
                for (int64_t q = 0; q < cfg_.joints; ++q) {
                    t.at(b, 2 * q, f) = p.x(q);
                    t.at(b, 2 * q + 1, f) = p.y(q);
                }
            }
        }
        return t;
    }

    static FrameTensor pack_w0(std::span<const Pose2D> window, int64_t target) {
        const TemporalWeights w = temporal_attention_init(window, target);
        FrameTensor t(1, static_cast<int64_t>(w.weights.size()), 1);
        std::copy(w.weights.begin(), w.weights.end(), t.values.begin());
        return t;
    }

    static FrameTensor pack_w0_batch(std::span<const std::span<const Pose2D>> windows,
                                     int64_t target) {
        require_shape(!windows.empty(), "pack_w0_batch: empty batch");
        const int64_t n = static_cast<int64_t>(windows[0].size());
        FrameTensor t(static_cast<int64_t>(windows.size()), n, 1);
        for (int64_t b = 0; b < t.batch; ++b) {
            const TemporalWeights w = temporal_attention_init(windows[static_cast<size_t>(b)], target);
            std::copy(w.weights.begin(), w.weights.end(),
                      t.values.begin() + b * n);
        }
        return t;
    }

    static Pose3D unpack_pose(const FrameTensor& out, int64_t b) {
        const int64_t j = out.channels / 3;
        Pose3D p(j);
        std::copy(out.values.begin() + b * out.channels,
                  out.values.begin() + (b + 1) * out.channels, p.xyz.begin());
        return p.root_centered();
    }

private:
    struct StageParams {
        TcnUnitParams base;
        bool has_attention = false;
        KernelAttentionParams ka;
    };

    static constexpr double kOutputScaleMm = 100.0;

    int crop(Graph& g, int x, int64_t len) const {
        const int64_t have = g.value(x).frames;
        if (have == len) return x;
        const int64_t from = cfg_.causal ? have - len : (have - len) / 2;
        return g.slice_frames(x, from, len);
    }

    int add_matrix(RngStream& rng, const std::string& name, int64_t rows, int64_t cols) {
        const int id = params_.add(name, {rows, cols});
        const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
        for (auto& v : params_[id].values) v = rng.uniform(-bound, bound);
        return id;
    }

    TcnUnitParams add_tcn_unit(RngStream& rng, const std::string& base, int64_t c_out,
                               int64_t c_in_g, int64_t k) {
        TcnUnitParams u;
        u.w = params_.add(base + ".conv.w", {c_out, c_in_g, k});
        const double bound = 1.0 / std::sqrt(static_cast<double>(c_in_g * k));
        for (auto& v : params_[u.w].values) v = rng.uniform(-bound, bound);
        u.b = params_.add(base + ".conv.b", {c_out});
        for (auto& v : params_[u.b].values) v = rng.uniform(-bound, bound);
        u.bn_gamma = params_.add(base + ".bn.gamma", {c_out});
        std::fill(params_[u.bn_gamma].values.begin(), params_[u.bn_gamma].values.end(), 1.0);
        u.bn_beta = params_.add(base + ".bn.beta", {c_out});
        u.bn_rmean = params_.add(base + ".bn.run_mean", {c_out}, /*trainable=*/false);
        u.bn_rvar = params_.add(base + ".bn.run_var", {c_out}, /*trainable=*/false);
        std::fill(params_[u.bn_rvar].values.begin(), params_[u.bn_rvar].values.end(), 1.0);
        return u;
    }

    ModelConfig cfg_;
    ParamStore params_;
    std::vector<int64_t> kernels_, dilations_, lambda_;
    std::vector<StageParams> stages_;
    std::vector<int> theta_t_;
    std::vector<TcnUnitParams> mdc_;
    int embed_w_ = -1, embed_b_ = -1, head_w_ = -1, head_b_ = -1;
};

// Eval-mode predictions for every frame of a 2-D sequence, processed in
// batches. Outputs are root-relative poses, one per input frame.
inline std::vector<Pose3D> predict_sequence(Model& model, const JointSequence& seq2d,
                                            int64_t batch = 64) {
    const auto windows = make_windows(seq2d, model.window_length(), model.config().causal);
    std::vector<Pose3D> out;
    out.reserve(windows.size());
    for (size_t start = 0; start < windows.size(); start += static_cast<size_t>(batch)) {
        const size_t stop = std::min(windows.size(), start + static_cast<size_t>(batch));
        std::vector<std::span<const Pose2D>> views;
        views.reserve(stop - start);
        for (size_t i = start; i < stop; ++i)
            views.emplace_back(windows[i].frames.data(), windows[i].frames.size());
        Graph g(model.params(), Mode::eval);
        const int in = g.input(model.pack_window_batch(views));
        const int w0 = g.input(Model::pack_w0_batch(views, model.target_index()));
        const int node = model.build_forward(g, in, w0);
        for (size_t i = start; i < stop; ++i)
            out.push_back(Model::unpack_pose(g.value(node), static_cast<int64_t>(i - start)));
    }
    return out;
}

} // namespace atcn
