#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "atcn/checkpoint.hpp"
#include "atcn/common.hpp"
#include "atcn/dataio.hpp"
#include "atcn/metrics.hpp"
#include "atcn/model.hpp"

namespace atcn {

struct TrainConfig {
    double lr = 1e-3;
    double decay = 0.05; // multiplicative per-epoch learning-rate decay
    int64_t epochs = 80;
    int64_t batch = 1024;
    int64_t lookahead_k = 5;
    double lookahead_alpha = 0.5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lambda_proj = 0.0; // weight of the 2-D reprojection auxiliary
    double weight_decay = 0.0;
    double val_fraction = 0.1; // temporal tail held out for the curve
    uint64_t seed = 1;

    void validate() const {
        require(lr > 0, "train config: lr must be > 0");
        require(decay >= 0 && decay < 1, "train config: decay must be in [0,1)");
        require(epochs >= 1, "train config: epochs must be >= 1");
        require(batch >= 2, "train config: batch must be >= 2");
        require(lookahead_k >= 1, "train config: lookahead_k must be >= 1");
        require(lookahead_alpha > 0 && lookahead_alpha <= 1,
                "train config: lookahead_alpha must be in (0,1]");
        require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
                "train config: betas must be in [0,1)");
        require(eps > 0, "train config: eps must be > 0");
        require(lambda_proj >= 0, "train config: lambda_proj must be >= 0");
        require(weight_decay >= 0, "train config: weight_decay must be >= 0");
        require(val_fraction >= 0 && val_fraction < 1,
                "train config: val_fraction must be in [0,1)");
    }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"decay", c.decay},
            {"epochs", c.epochs},
            {"batch", c.batch},
            {"lookahead_k", c.lookahead_k},
            {"lookahead_alpha", c.lookahead_alpha},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"eps", c.eps},
            {"lambda_proj", c.lambda_proj},
            {"weight_decay", c.weight_decay},
            {"val_fraction", c.val_fraction},
            {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    require(j.is_object(), "train config: expected a JSON object");
    static const char* known[] = {"lr",    "decay",           "epochs",     "batch",
                                  "lookahead_k", "lookahead_alpha", "beta1",      "beta2",
                                  "eps",   "lambda_proj",     "weight_decay", "val_fraction",
                                  "seed"};
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || item.key() == k;
        require(ok, "train config: unknown key '" + item.key() + "'");
    }
    TrainConfig c;
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("decay")) c.decay = j.at("decay").get<double>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int64_t>();
    if (j.contains("batch")) c.batch = j.at("batch").get<int64_t>();
    if (j.contains("lookahead_k")) c.lookahead_k = j.at("lookahead_k").get<int64_t>();
    if (j.contains("lookahead_alpha")) c.lookahead_alpha = j.at("lookahead_alpha").get<double>();
    if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
    if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
    if (j.contains("eps")) c.eps = j.at("eps").get<double>();
    if (j.contains("lambda_proj")) c.lambda_proj = j.at("lambda_proj").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("val_fraction")) c.val_fraction = j.at("val_fraction").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
    c.validate();
    return c;
}

// lr(e) = lr0 * (1 - decay)^e
inline double lr_schedule(int64_t epoch, const TrainConfig& cfg) {
    require(epoch >= 0, "lr_schedule: epoch must be >= 0");
    return cfg.lr * std::pow(1.0 - cfg.decay, static_cast<double>(epoch));
}

// Lookahead wrapped around a bias-corrected adaptive-moment inner step.
// Every k inner steps the slow weights move toward the fast weights by alpha
// and the fast weights snap back onto them.
class RangerOptimizer {
public:
    RangerOptimizer(ParamStore& params, const TrainConfig& cfg) : params_(params), cfg_(cfg) {
        for (const ParamArray& p : params_.all()) {
            Slot s;
            if (p.trainable) {
                s.m.assign(p.values.size(), 0.0);
                s.v.assign(p.values.size(), 0.0);
                s.slow = p.values;
            }
            slots_.push_back(std::move(s));
        }
    }

    int64_t steps() const { return step_; }

    void step(double lr) {
        // reject the whole step before touching any state
        for (const ParamArray& p : params_.all()) {
            if (!p.trainable) continue;
            for (double g : p.grad) {
                if (!std::isfinite(g))
                    throw DivergenceError("non-finite gradient in parameter '" + p.name + "'");
            }
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (size_t i = 0; i < slots_.size(); ++i) {
            ParamArray& p = params_.all()[i];
            if (!p.trainable) continue;
            Slot& s = slots_[i];
            for (size_t k = 0; k < p.values.size(); ++k) {
                const double g = p.grad[k];
                s.m[k] = cfg_.beta1 * s.m[k] + (1.0 - cfg_.beta1) * g;
                s.v[k] = cfg_.beta2 * s.v[k] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = s.m[k] / bc1;
                const double vhat = s.v[k] / bc2;
                if (cfg_.weight_decay > 0.0) p.values[k] -= lr * cfg_.weight_decay * p.values[k];
                p.values[k] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
        if (step_ % cfg_.lookahead_k == 0) {
            for (size_t i = 0; i < slots_.size(); ++i) {
                ParamArray& p = params_.all()[i];
                if (!p.trainable) continue;
                Slot& s = slots_[i];
                for (size_t k = 0; k < p.values.size(); ++k) {
                    s.slow[k] += cfg_.lookahead_alpha * (p.values[k] - s.slow[k]);
                    p.values[k] = s.slow[k];
                }
            }
        }
    }

    std::vector<ParamArray> export_state() const {
        std::vector<ParamArray> out;
        for (size_t i = 0; i < slots_.size(); ++i) {
            const ParamArray& p = params_.all()[i];
            if (!p.trainable) continue;
            const Slot& s = slots_[i];
            for (const auto& [tag, values] :
                 {std::pair{"opt.m:", &s.m}, {"opt.v:", &s.v}, {"opt.slow:", &s.slow}}) {
                ParamArray a;
                a.name = tag + p.name;
                a.shape = p.shape;
                a.values = *values;
                a.grad.assign(a.values.size(), 0.0);
                out.push_back(std::move(a));
            }
        }
        return out;
    }

    void import_state(std::span<const ParamArray> arrays, int64_t step_count) {
        step_ = step_count;
        for (const ParamArray& a : arrays) {
            const auto colon = a.name.find(':');
            require(a.name.rfind("opt.", 0) == 0 && colon != std::string::npos,
                    "optimizer state: unexpected array '" + a.name + "'");
            const std::string kind = a.name.substr(0, colon);
            const int pid = params_.find(a.name.substr(colon + 1));
            require(pid >= 0, "optimizer state: unknown parameter in '" + a.name + "'");
            Slot& s = slots_[static_cast<size_t>(pid)];
            std::vector<double>* dst = kind == "opt.m"      ? &s.m
                                       : kind == "opt.v"    ? &s.v
                                       : kind == "opt.slow" ? &s.slow
                                                            : nullptr;
            require(dst != nullptr, "optimizer state: unexpected kind '" + kind + "'");
            require(dst->size() == a.values.size(), "optimizer state: size mismatch in '" + a.name + "'");
            *dst = a.values;
        }
    }

private:
    struct Slot {
        std::vector<double> m, v, slow;
    };

    ParamStore& params_;
    TrainConfig cfg_;
    std::vector<Slot> slots_;
    int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// dataset and epoch loop
// ---------------------------------------------------------------------------

struct Dataset {
    std::vector<Window> windows;
    std::vector<Pose3D> targets; // per window, absolute or root-relative mm
    std::optional<Camera> camera; // required for the reprojection auxiliary
};

inline Dataset make_dataset(const JointSequence& seq2d, const JointSequence& seq3d, int64_t n,
                            bool causal, std::optional<Camera> camera = std::nullopt) {
    require_shape(seq2d.dims == 2 && seq3d.dims == 3, "make_dataset: need a 2-D and a 3-D sequence");
    require_shape(seq2d.frames == seq3d.frames && seq2d.joints == seq3d.joints,
                  "make_dataset: 2-D and 3-D sequences disagree");
    Dataset d;
    d.windows = make_windows(seq2d, n, causal);
    d.targets.reserve(d.windows.size());
    for (const Window& w : d.windows) d.targets.push_back(seq3d.pose3d(w.source_frame));
    d.camera = camera;
    return d;
}

struct EpochStats {
    int64_t epoch = 0;
    double train_loss_mm = 0.0;
    double val_mpjpe_mm = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> curve;
    std::string checkpoint_path;
    std::string curve_path;
};

namespace detail {

inline void write_curve(const std::string& path, std::span<const EpochStats> rows) {
    std::ofstream fs(path + ".tmp", std::ios::binary);
    if (!fs) throw IoError("cannot write " + path);
    fs << "epoch,train_loss_mm,val_mpjpe_mm,lr\n";
    char buf[128];
    for (const EpochStats& r : rows) {
        std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g\n",
                      static_cast<long long>(r.epoch), r.train_loss_mm, r.val_mpjpe_mm, r.lr);
        fs << buf;
    }
    fs.close();
    std::filesystem::rename(path + ".tmp", path);
}

inline std::vector<EpochStats> read_curve(const std::string& path) {
    std::vector<EpochStats> rows;
    std::ifstream fs(path);
    if (!fs) return rows;
    std::string line;
    std::getline(fs, line); // header
    while (std::getline(fs, line)) {
        EpochStats r;
        long long e;
        if (std::sscanf(line.c_str(), "%lld,%lg,%lg,%lg", &e, &r.train_loss_mm, &r.val_mpjpe_mm,
                        &r.lr) == 4) {
            r.epoch = e;
            rows.push_back(r);
        }
    }
    return rows;
}

// Eval-mode MPJPE of the model against per-window targets.
inline double eval_mpjpe(Model& model, const Dataset& data, std::span<const size_t> idx,
                         int64_t batch) {
    std::vector<Pose3D> pred, gt;
    pred.reserve(idx.size());
    gt.reserve(idx.size());
    for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(batch)) {
        const size_t stop = std::min(idx.size(), start + static_cast<size_t>(batch));
        std::vector<std::span<const Pose2D>> views;
        for (size_t i = start; i < stop; ++i) {
            const Window& w = data.windows[idx[i]];
            views.emplace_back(w.frames.data(), w.frames.size());
        }
        Graph g(model.params(), Mode::eval);
        const int in = g.input(model.pack_window_batch(views));
        const int w0 = g.input(Model::pack_w0_batch(views, model.target_index()));
        const int node = model.build_forward(g, in, w0);
        for (size_t i = start; i < stop; ++i) {
            pred.push_back(Model::unpack_pose(g.value(node), static_cast<int64_t>(i - start)));
            gt.push_back(data.targets[idx[i]]);
        }
    }
    return mpjpe(pred, gt);
}

} // namespace detail

// Seeded, resumable epoch loop: shuffled mini-batches, train-mode forward,
// backward, Ranger step, per-epoch curve row and atomic checkpoint. RNG
// substreams derive from (seed, epoch, step), so a resumed run replays the
// exact trajectory of an uninterrupted one. Throws DivergenceError on a
// non-finite loss or gradient; the previous epoch's checkpoint stays on disk.
inline TrainResult train_loop(Model& model, const Dataset& data, const TrainConfig& cfg,
                              const std::string& out_dir, int64_t start_epoch = 0,
                              RangerOptimizer* resume_opt = nullptr) {
    cfg.validate();
    require(!data.windows.empty() && data.windows.size() == data.targets.size(),
            "train_loop: empty or inconsistent dataset");
    require(cfg.lambda_proj == 0.0 || data.camera.has_value(),
            "train_loop: reprojection loss needs a camera");
    std::filesystem::create_directories(out_dir);

    const int64_t joints = model.config().joints;
    const size_t total = data.windows.size();
    const size_t val_count = static_cast<size_t>(std::floor(static_cast<double>(total) * cfg.val_fraction));
    const size_t train_count = total - val_count;
    require(train_count >= 2, "train_loop: too few training windows");

    std::vector<size_t> train_idx(train_count), val_idx(val_count);
    for (size_t i = 0; i < train_count; ++i) train_idx[i] = i;
    for (size_t i = 0; i < val_count; ++i) val_idx[i] = train_count + i;
    // with no held-out tail the curve's validation column reports train-set eval
    std::span<const size_t> val_view = val_count ? std::span<const size_t>(val_idx)
                                                 : std::span<const size_t>(train_idx);

    RangerOptimizer local_opt(model.params(), cfg);
    RangerOptimizer& opt = resume_opt ? *resume_opt : local_opt;

    TrainResult result;
    result.checkpoint_path = out_dir + "/checkpoint.atcn";
    result.curve_path = out_dir + "/curve.csv";
    if (start_epoch > 0) {
        for (const EpochStats& r : detail::read_curve(result.curve_path)) {
            if (r.epoch < start_epoch) result.curve.push_back(r);
        }
    }

    Intrinsics intr;
    if (data.camera) intr = {data.camera->fx, data.camera->fy, data.camera->cx, data.camera->cy};

    for (int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, cfg);
        RngStream shuffle_rng = RngStream::derive(cfg.seed, static_cast<uint64_t>(epoch) + 1, 0, 1);
        std::vector<size_t> order = train_idx;
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        int64_t batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch));
            if (stop - start < 2) continue; // train-mode batch norm needs company
            const int64_t bsz = static_cast<int64_t>(stop - start);

            std::vector<std::span<const Pose2D>> views;
            FrameTensor target(bsz, 3 * joints, 1);
            FrameTensor obs2d(bsz, 2 * joints, 1);
            FrameTensor roots(bsz, 3, 1);
            views.reserve(static_cast<size_t>(bsz));
            for (size_t i = start; i < stop; ++i) {
                const Window& w = data.windows[order[i]];
                const Pose3D& t3 = data.targets[order[i]];
                const int64_t b = static_cast<int64_t>(i - start);
                views.emplace_back(w.frames.data(), w.frames.size());
                std::copy(t3.xyz.begin(), t3.xyz.end(), target.values.begin() + b * 3 * joints);
                const Pose2D& tgt2d = w.frames[static_cast<size_t>(w.target)];
                std::copy(tgt2d.xy.begin(), tgt2d.xy.end(), obs2d.values.begin() + b * 2 * joints);
                for (int64_t k = 0; k < 3; ++k) roots.at(b, k, 0) = t3.coord(0, k);
            }

            RngStream drop_rng = RngStream::derive(cfg.seed, static_cast<uint64_t>(epoch) + 1,
                                                   static_cast<uint64_t>(batches) + 1, 2);
            Graph g(model.params(), Mode::train, &drop_rng);
            const int in = g.input(model.pack_window_batch(views));
            const int w0 = g.input(Model::pack_w0_batch(views, model.target_index()));
            const int out = model.build_forward(g, in, w0);
            const int pose = g.pose_loss(out, std::move(target));
            int loss = pose;
            if (cfg.lambda_proj > 0.0) {
                const int reproj = g.reprojection_loss(out, std::move(obs2d), std::move(roots), intr);
                loss = g.weighted_sum(pose, reproj, 1.0, cfg.lambda_proj);
            }
            const double pose_mm = g.value(pose).values[0];
            if (!std::isfinite(g.value(loss).values[0])) {
                throw DivergenceError("loss diverged at epoch " + std::to_string(epoch));
            }
            model.params().zero_grads();
            g.backward(loss);
            try {
                opt.step(lr);
            } catch (const DivergenceError& e) {
                throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch));
            }
            loss_sum += pose_mm;
            ++batches;
        }
        require(batches > 0, "train_loop: batch size leaves no usable batches");

        EpochStats row;
        row.epoch = epoch;
        row.train_loss_mm = loss_sum / static_cast<double>(batches);
        row.val_mpjpe_mm = detail::eval_mpjpe(model, data, val_view, cfg.batch);
        row.lr = lr;
        result.curve.push_back(row);
        detail::write_curve(result.curve_path, result.curve);

        CheckpointExtras extras;
        extras.epoch = epoch + 1;
        extras.opt_step = opt.steps();
        extras.seed = cfg.seed;
        extras.arrays = opt.export_state();
        save_checkpoint(model, result.checkpoint_path, &extras);
    }
    return result;
}

} // namespace atcn
