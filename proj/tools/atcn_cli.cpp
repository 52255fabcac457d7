// Command-line front end: synthetic data generation, training, the three
// evaluation protocols, inference (batch or causal streaming) and self-checks.
// Exit codes: 0 success, 2 configuration/usage error, 3 runtime failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "atcn/attention.hpp"
#include "atcn/checkpoint.hpp"
#include "atcn/dataio.hpp"
#include "atcn/metrics.hpp"
#include "atcn/model.hpp"
#include "atcn/train.hpp"
#include "atcn/version.hpp"

namespace {

using nlohmann::json;

json load_json_file(const std::string& path) {
    std::ifstream fs(path);
    if (!fs) throw atcn::IoError("cannot open " + path);
    try {
        return json::parse(fs);
    } catch (const json::exception& e) {
        throw atcn::ParseError(path + ": " + e.what());
    }
}

void write_text_atomic(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream fs(tmp, std::ios::binary);
        if (!fs) throw atcn::IoError("cannot write " + tmp);
        fs << text;
        if (!fs) throw atcn::IoError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

// --- synth ------------------------------------------------------------------

struct SynthArgs {
    uint64_t seed = 1;
    int64_t frames = 0;
    int64_t joints = 17;
    std::string out_prefix;
};

int run_synth(const SynthArgs& a) {
    const atcn::SynthResult res = atcn::synth_generate(a.seed, a.frames, a.joints);
    atcn::save_sequence(res.seq3d, a.out_prefix + ".3d.jpseq");
    atcn::save_sequence(res.seq2d, a.out_prefix + ".2d.jpseq");
    write_text_atomic(a.out_prefix + ".camera.json", atcn::camera_to_json(res.camera).dump(2) + "\n");
    std::cout << "wrote " << a.out_prefix << ".{3d.jpseq,2d.jpseq,camera.json} ("
              << res.seq3d.frames << " frames, " << res.seq3d.joints << " joints)\n";
    return 0;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
    std::string model_config, train_config, data2d, data3d, out_dir, camera;
    bool resume = false;
};

int run_train(const TrainArgs& a) {
    const atcn::TrainConfig tc = atcn::train_config_from_json(load_json_file(a.train_config));
    std::optional<atcn::Camera> cam;
    if (!a.camera.empty()) cam = atcn::camera_from_json(load_json_file(a.camera));

    const atcn::JointSequence seq2d = atcn::load_sequence(a.data2d);
    const atcn::JointSequence seq3d = atcn::load_sequence(a.data3d);

    atcn::Model model = [&] {
        if (a.resume) {
            return atcn::load_checkpoint(a.out_dir + "/checkpoint.atcn");
        }
        const atcn::ModelConfig mc = atcn::model_config_from_json(load_json_file(a.model_config));
        return atcn::Model::build(mc, tc.seed);
    }();

    int64_t start_epoch = 0;
    atcn::RangerOptimizer opt(model.params(), tc);
    if (a.resume) {
        atcn::CheckpointExtras extras;
        atcn::load_checkpoint(a.out_dir + "/checkpoint.atcn", &extras);
        opt.import_state(extras.arrays, extras.opt_step);
        start_epoch = extras.epoch;
        std::cout << "resuming from epoch " << start_epoch << "\n";
    }

    const atcn::Dataset data = atcn::make_dataset(seq2d, seq3d, model.window_length(),
                                                  model.config().causal, cam);
    try {
        const atcn::TrainResult res = atcn::train_loop(model, data, tc, a.out_dir, start_epoch, &opt);
        if (!res.curve.empty()) {
            const atcn::EpochStats& last = res.curve.back();
            std::cout << "done: epoch " << last.epoch << " train " << last.train_loss_mm
                      << " mm, val " << last.val_mpjpe_mm << " mm\n";
        }
        std::cout << "checkpoint: " << res.checkpoint_path << "\ncurve: " << res.curve_path << "\n";
    } catch (const atcn::DivergenceError& e) {
        std::cerr << "training diverged: " << e.what() << " (last good checkpoint retained)\n";
        return 3;
    }
    return 0;
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint, data2d, data3d, protocol = "all", report, trace;
    int64_t batch = 64;
};

int run_eval(const EvalArgs& a) {
    atcn::Model model = atcn::load_checkpoint(a.checkpoint);
    const atcn::JointSequence seq2d = atcn::load_sequence(a.data2d);
    const atcn::JointSequence seq3d = atcn::load_sequence(a.data3d);
    atcn::require(seq2d.frames == seq3d.frames, "eval: 2-D and 3-D frame counts disagree");
    const std::vector<atcn::Pose3D> pred = atcn::predict_sequence(model, seq2d, a.batch);
    std::vector<atcn::Pose3D> gt;
    gt.reserve(static_cast<size_t>(seq3d.frames));
    for (int64_t f = 0; f < seq3d.frames; ++f) gt.push_back(seq3d.pose3d(f));

    const atcn::MetricsReport rep = atcn::trace_errors(pred, gt);
    if (a.protocol == "1" || a.protocol == "all")
        std::printf("protocol 1 (MPJPE):   %.6f mm\n", rep.mpjpe_mm);
    if (a.protocol == "2" || a.protocol == "all")
        std::printf("protocol 2 (P-MPJPE): %.6f mm\n", rep.p_mpjpe_mm);
    if (a.protocol == "n" || a.protocol == "all")
        std::printf("N-MPJPE:              %.6f mm\n", rep.n_mpjpe_mm);
    if (!a.report.empty()) write_text_atomic(a.report, atcn::report_to_json(rep).dump(2) + "\n");
    if (!a.trace.empty()) atcn::write_trace_csv(pred, gt, a.trace);
    return 0;
}

// --- infer ------------------------------------------------------------------

struct InferArgs {
    std::string checkpoint, data2d, out;
    bool causal_stream = false;
    int64_t batch = 64;
};

int run_infer(const InferArgs& a) {
    atcn::Model model = atcn::load_checkpoint(a.checkpoint);
    const atcn::JointSequence seq2d = atcn::load_sequence(a.data2d);
    std::vector<atcn::Pose3D> pred;
    if (a.causal_stream) {
        atcn::require(model.config().causal,
                      "infer: --causal-stream needs a checkpoint built with causal=true");
        // incremental emission: each output depends only on frames <= its own
        const int64_t n = model.window_length();
        std::vector<atcn::Pose2D> history;
        for (int64_t f = 0; f < seq2d.frames; ++f) {
            history.push_back(seq2d.pose2d(f));
            std::vector<atcn::Pose2D> window;
            for (int64_t i = f - n + 1; i <= f; ++i)
                window.push_back(history[static_cast<size_t>(std::max<int64_t>(0, i))]);
            pred.push_back(model.causal_forward(window));
        }
    } else {
        pred = atcn::predict_sequence(model, seq2d, a.batch);
    }
    atcn::JointSequence out(seq2d.joints, 3, static_cast<int64_t>(pred.size()));
    for (size_t f = 0; f < pred.size(); ++f) out.set_pose3d(static_cast<int64_t>(f), pred[f]);
    atcn::save_sequence(out, a.out);
    std::cout << "wrote " << a.out << " (" << out.frames << " frames)\n";
    return 0;
}

// --- selfcheck -------------------------------------------------------------

struct CheckContext {
    int failures = 0;

    void check(const std::string& name, bool ok, const std::string& detail = "") {
        std::cout << (ok ? "[ ok ] " : "[FAIL] ") << name;
        if (!ok && !detail.empty()) std::cout << " — " << detail;
        std::cout << "\n";
        if (!ok) ++failures;
    }
};

void selfcheck_fast(CheckContext& ctx) {
    using namespace atcn;
    // gradient fidelity through a shrunken full model, eval and train mode
    for (Mode mode : {Mode::eval, Mode::train}) {
        ModelConfig mc;
        mc.channels = 8;
        mc.groups = 2;
        mc.reduction = 4;
        mc.dropout = 0.0;
        Model m = Model::build(mc, 3);
        RngStream rng(11);
        std::vector<std::vector<Pose2D>> wins(2, std::vector<Pose2D>(27, Pose2D(17)));
        for (auto& w : wins)
            for (auto& p : w)
                for (auto& v : p.xy) v = rng.uniform(-1, 1);
        std::vector<std::span<const Pose2D>> views;
        for (auto& w : wins) views.emplace_back(w.data(), w.size());
        FrameTensor target(2, 51, 1);
        for (auto& v : target.values) v = rng.uniform(-300, 300);
        Graph g(m.params(), mode, &rng);
        const int out = m.build_forward(g, g.input(m.pack_window_batch(views)),
                                        g.input(Model::pack_w0_batch(views, m.target_index())));
        const int loss = g.pose_loss(out, std::move(target));
        std::vector<int> pids;
        for (size_t i = 0; i < m.params().count(); ++i) pids.push_back(static_cast<int>(i));
        RngStream fdrng(5);
        const FdReport rep = finite_diff_check(g, loss, pids, 1e-5, 3, fdrng);
        ctx.check(std::string("gradient fidelity (") + (mode == Mode::eval ? "eval" : "train") +
                      " mode) < 1e-4",
                  rep.max_rel_err < 1e-4,
                  "max " + std::to_string(rep.max_rel_err) + " at " + rep.worst_param);
    }
    // kernel-attention gate normalization
    {
        RngStream rng(21);
        bool ok = true;
        double worst = 0.0;
        for (int trial = 0; trial < 50 && ok; ++trial) {
            ParamStore local;
            const int w = local.add("w", {4, 2, 3});
            const int b = local.add("b", {4});
            const int gm = local.add("gamma", {4});
            const int bt = local.add("beta", {4});
            const int rm = local.add("rmean", {4}, false);
            const int rv = local.add("rvar", {4}, false);
            std::fill(local[gm].values.begin(), local[gm].values.end(), 1.0);
            std::fill(local[rv].values.begin(), local[rv].values.end(), 1.0);
            for (auto& v : local[w].values) v = rng.uniform(-1, 1);
            const int tr = local.add("theta_r", {3, 4});
            for (auto& v : local[tr].values) v = rng.uniform(-1, 1);
            KernelAttentionParams kap;
            for (int mi = 0; mi < 3; ++mi) {
                kap.branch_units.push_back({w, b, gm, bt, rm, rv});
                Conv1dSpec spec;
                spec.dilation = mi + 1;
                spec.groups = 2;
                spec.padding = Padding::same;
                kap.branch_specs.push_back(spec);
                const int tm = local.add("theta_m" + std::to_string(mi), {4, 3});
                for (auto& v : local[tm].values) v = rng.uniform(-1, 1);
                kap.theta_m.push_back(tm);
            }
            kap.theta_r = tr;
            Graph lg(local, Mode::eval);
            FrameTensor x(1, 4, 9);
            for (auto& v : x.values) v = rng.uniform(-2, 2);
            const KernelAttentionResult res = kernel_attention(lg, lg.input(std::move(x)), kap);
            const FrameTensor& gates = lg.value(res.gates);
            for (int64_t c = 0; c < gates.channels; ++c) {
                double s = 0.0;
                for (int64_t f = 0; f < gates.frames; ++f) s += gates.at(0, c, f);
                worst = std::max(worst, std::abs(s - 1.0));
            }
            ok = worst < 1e-9;
        }
        ctx.check("kernel-attention branch weights sum to 1 within 1e-9", ok,
                  "worst deviation " + std::to_string(worst));
    }
    // temporal attention layer 0 equals the ncc oracle
    {
        RngStream rng(31);
        bool ok = true;
        for (int trial = 0; trial < 20 && ok; ++trial) {
            std::vector<Pose2D> win(9, Pose2D(17));
            for (auto& p : win)
                for (auto& v : p.xy) v = rng.uniform(-1, 1);
            const TemporalWeights w = temporal_attention_init(win, 4);
            for (size_t i = 0; i < win.size(); ++i) {
                if (std::abs(w.weights[i] - ncc(win[i], win[4])) > 1e-15) ok = false;
            }
        }
        ctx.check("temporal weights at layer 0 match the ncc oracle", ok);
    }
    // Procrustes invariances
    {
        RngStream rng(41);
        bool ok = true;
        std::string why;
        for (int trial = 0; trial < 25 && ok; ++trial) {
            Pose3D gt(17);
            for (auto& v : gt.xyz) v = rng.uniform(-400, 400);
            SimilarityTransform t;
            t.scale = rng.uniform(0.5, 2.0);
            const double ang = rng.uniform(0, 2 * M_PI);
            t.rotation = {std::cos(ang), -std::sin(ang), 0, std::sin(ang), std::cos(ang),
                          0,             0,              0, 1};
            t.translation = {rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-100, 100)};
            const ProcrustesResult res = procrustes_align(t.apply(gt), gt);
            for (int64_t q = 0; q < 17 && ok; ++q) {
                for (int64_t k = 0; k < 3; ++k) {
                    if (std::abs(res.aligned.coord(q, k) - gt.coord(q, k)) > 1e-9) {
                        ok = false;
                        why = "similarity transform not recovered";
                    }
                }
            }
            double det = 0.0;
            const auto& r = res.transform.rotation;
            det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
                  r[2] * (r[3] * r[7] - r[4] * r[6]);
            if (std::abs(det - 1.0) > 1e-9) {
                ok = false;
                why = "det(R) != +1";
            }
        }
        ctx.check("Procrustes recovers similarity transforms (1e-9)", ok, why);
    }
    // sequence format round-trip
    {
        RngStream rng(51);
        JointSequence seq(17, 2, 3);
        for (auto& v : seq.data) v = rng.gauss(0, 1);
        const std::string path = std::filesystem::temp_directory_path() / "atcn_selfcheck.jpseq";
        save_sequence(seq, path);
        const JointSequence back = load_sequence(path);
        ctx.check("jpseq round-trip is lossless", back.data == seq.data);
        std::filesystem::remove(path);
    }
}

void selfcheck_full(CheckContext& ctx) {
    using namespace atcn;
    // micro overfit oracle
    {
        SynthResult synth = synth_generate(17, 16);
        ModelConfig mc;
        mc.layers = 3;
        mc.levels = 1;
        mc.channels = 32;
        mc.groups = 4;
        mc.reduction = 8;
        mc.dropout = 0.0;
        Model m = Model::build(mc, 5);
        Dataset d = make_dataset(synth.seq2d, synth.seq3d, receptive_field(mc), false);
        TrainConfig tc;
        tc.epochs = 300;
        tc.batch = 16;
        tc.val_fraction = 0.0;
        tc.lr = 4e-3;
        tc.decay = 0.0;
        tc.seed = 3;
        const std::string dir = std::filesystem::temp_directory_path() / "atcn_selfcheck_overfit";
        const TrainResult res = train_loop(m, d, tc, dir);
        const double final_mpjpe = res.curve.back().val_mpjpe_mm;
        ctx.check("micro overfit reaches < 5 mm", final_mpjpe < 5.0,
                  "reached " + std::to_string(final_mpjpe) + " mm");
        std::filesystem::remove_all(dir);
    }
    // parameter audits
    {
        ModelConfig l6;
        l6.layers = 6;
        l6.levels = 4;
        const double c6 = static_cast<double>(Model::build(l6).param_count());
        ModelConfig l4;
        l4.layers = 4;
        l4.levels = 2;
        const double c4 = static_cast<double>(Model::build(l4).param_count());
        ModelConfig g1 = l6;
        g1.groups = 1;
        const double cg1 = static_cast<double>(Model::build(g1).param_count());
        ctx.check("L6xV4 parameter count within 15% of 11.25M",
                  std::abs(c6 / 11.25e6 - 1.0) <= 0.15, std::to_string(c6));
        ctx.check("L4xV2 parameter count within 15% of 5.69M",
                  std::abs(c4 / 5.69e6 - 1.0) <= 0.15, std::to_string(c4));
        ctx.check("G=1 count exceeds 3x the G=8 count", cg1 > 3.0 * c6);
    }
}

int run_selfcheck(const std::string& level) {
    CheckContext ctx;
    selfcheck_fast(ctx);
    if (level == "full") selfcheck_full(ctx);
    if (ctx.failures) {
        std::cout << ctx.failures << " check(s) failed\n";
        return 3;
    }
    std::cout << "all checks passed\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention-based temporal convolutional network for 2D-to-3D pose lifting"};
    app.set_version_flag("--version", std::string("atcn ") + atcn::kVersion + " (formats: " +
                                          atcn::kSequenceFormat + ", checkpoint " +
                                          atcn::kCheckpointFormat + ")");
    app.require_subcommand(1);

    SynthArgs synth;
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate synthetic motion data");
    synth_cmd->add_option("--seed", synth.seed, "rng seed")->default_val(1);
    synth_cmd->add_option("--frames", synth.frames, "frame count")->required();
    synth_cmd->add_option("--joints", synth.joints, "joint count")->default_val(17);
    synth_cmd->add_option("--out-prefix", synth.out_prefix, "output path prefix")->required();

    TrainArgs train;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--model-config", train.model_config, "model config JSON");
    train_cmd->add_option("--train-config", train.train_config, "train config JSON")->required();
    train_cmd->add_option("--data2d", train.data2d, "2-D input sequence (.jpseq)")->required();
    train_cmd->add_option("--data3d", train.data3d, "3-D target sequence (.jpseq)")->required();
    train_cmd->add_option("--out-dir", train.out_dir, "output directory")->required();
    train_cmd->add_option("--camera", train.camera, "camera JSON (enables reprojection loss)");
    train_cmd->add_flag("--resume", train.resume, "continue from out-dir/checkpoint.atcn");

    EvalArgs eval;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--data2d", eval.data2d, "2-D input sequence")->required();
    eval_cmd->add_option("--data3d", eval.data3d, "3-D ground truth sequence")->required();
    eval_cmd->add_option("--protocol", eval.protocol, "1, 2, n or all")
        ->check(CLI::IsMember({"1", "2", "n", "all"}))
        ->default_val("all");
    eval_cmd->add_option("--report", eval.report, "aggregate JSON output path");
    eval_cmd->add_option("--trace", eval.trace, "per-frame/per-joint CSV output path");
    eval_cmd->add_option("--batch", eval.batch, "evaluation batch size")->default_val(64);

    InferArgs infer;
    CLI::App* infer_cmd = app.add_subcommand("infer", "lift a 2-D sequence to 3-D");
    infer_cmd->add_option("--checkpoint", infer.checkpoint, "checkpoint file")->required();
    infer_cmd->add_option("--data2d", infer.data2d, "2-D input sequence")->required();
    infer_cmd->add_option("--out", infer.out, "3-D output sequence path")->required();
    infer_cmd->add_flag("--causal-stream", infer.causal_stream,
                        "emit frame by frame (causal checkpoints only)");
    infer_cmd->add_option("--batch", infer.batch, "batch size")->default_val(64);

    std::string level = "fast";
    CLI::App* check_cmd = app.add_subcommand("selfcheck", "run built-in verification");
    check_cmd->add_option("--level", level, "fast or full")
        ->check(CLI::IsMember({"fast", "full"}))
        ->default_val("fast");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*synth_cmd) return run_synth(synth);
        if (*train_cmd) {
            if (!train.resume && train.model_config.empty()) {
                std::cerr << "train: --model-config is required unless --resume is given\n";
                return 2;
            }
            return run_train(train);
        }
        if (*eval_cmd) return run_eval(eval);
        if (*infer_cmd) return run_infer(infer);
        if (*check_cmd) return run_selfcheck(level);
    } catch (const atcn::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const atcn::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
