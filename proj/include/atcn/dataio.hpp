#pragma once

#include <array>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "atcn/common.hpp"
#include "atcn/pose.hpp"
#include "atcn/rng.hpp"

namespace atcn {

// Kinematic tree plus left/right mirror pairs. parents[0] == -1 (root).
struct Skeleton {
    std::vector<int> parents;
    std::vector<std::pair<int, int>> mirror_pairs; // (left, right)

    int64_t joints() const { return static_cast<int64_t>(parents.size()); }

    void validate() const {
        require(!parents.empty() && parents[0] == -1, "skeleton: joint 0 must be the root");
        for (size_t j = 1; j < parents.size(); ++j) {
            require(parents[j] >= 0 && parents[j] < static_cast<int>(j),
                    "skeleton: parents must form a tree rooted at joint 0");
        }
        for (auto [l, r] : mirror_pairs) {
            require(l >= 0 && r >= 0 && l < static_cast<int>(parents.size()) &&
                        r < static_cast<int>(parents.size()) && l != r,
                    "skeleton: bad mirror pair");
        }
    }
};

// 17-joint Human3.6M-style topology:
// 0 pelvis, 1-3 right leg, 4-6 left leg, 7 spine, 8 thorax, 9 neck, 10 head,
// 11-13 left arm, 14-16 right arm.
inline Skeleton default_skeleton() {
    Skeleton s;
    s.parents = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};
    s.mirror_pairs = {{4, 1}, {5, 2}, {6, 3}, {11, 14}, {12, 15}, {13, 16}};
    return s;
}

inline Skeleton skeleton_from_json(const nlohmann::json& j) {
    Skeleton s;
    require(j.is_object() && j.contains("parents") && j.contains("mirror_pairs"),
            "skeleton json: needs 'parents' and 'mirror_pairs'");
    for (const auto& k : j.items()) {
        require(k.key() == "parents" || k.key() == "mirror_pairs",
                "skeleton json: unknown key '" + k.key() + "'");
    }
    s.parents = j.at("parents").get<std::vector<int>>();
    for (const auto& p : j.at("mirror_pairs")) {
        require(p.is_array() && p.size() == 2, "skeleton json: mirror pair must be [left,right]");
        s.mirror_pairs.emplace_back(p[0].get<int>(), p[1].get<int>());
    }
    s.validate();
    return s;
}

// A fixed-rate joint trajectory: F frames of J joints in D dims.
// D=2 stores normalized image coordinates, D=3 millimeters.
struct JointSequence {
    int64_t joints = 0;
    int64_t dims = 0;
    int64_t frames = 0;
    std::vector<double> data; // frame-major, joint-major, coordinate-major

    JointSequence() = default;
    JointSequence(int64_t j, int64_t d, int64_t f)
        : joints(j), dims(d), frames(f), data(static_cast<size_t>(j * d * f), 0.0) {}

    double& at(int64_t f, int64_t j, int64_t k) {
        return data[static_cast<size_t>((f * joints + j) * dims + k)];
    }
    double at(int64_t f, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((f * joints + j) * dims + k)];
    }

    Pose2D pose2d(int64_t f) const {
        require_shape(dims == 2, "pose2d: sequence is not 2-D");
        Pose2D p(joints);
        std::copy(data.begin() + f * joints * 2, data.begin() + (f + 1) * joints * 2,
                  p.xy.begin());
        return p;
    }

    Pose3D pose3d(int64_t f) const {
        require_shape(dims == 3, "pose3d: sequence is not 3-D");
        Pose3D p(joints);
        std::copy(data.begin() + f * joints * 3, data.begin() + (f + 1) * joints * 3,
                  p.xyz.begin());
        return p;
    }

    void set_pose2d(int64_t f, const Pose2D& p) {
        std::copy(p.xy.begin(), p.xy.end(), data.begin() + f * joints * 2);
    }
    void set_pose3d(int64_t f, const Pose3D& p) {
        std::copy(p.xyz.begin(), p.xyz.end(), data.begin() + f * joints * 3);
    }
};

// ---------------------------------------------------------------------------
// jpseq text format
// ---------------------------------------------------------------------------
// Line 1: `jpseq v1 J=<int> D=<int> F=<int>`, then F lines of J*D
// space-separated decimals. %.17g printing makes the round trip lossless.

inline void save_sequence(const JointSequence& seq, const std::string& path) {
    std::ostringstream out;
    out << "jpseq v1 J=" << seq.joints << " D=" << seq.dims << " F=" << seq.frames << "\n";
    char buf[40];
    for (int64_t f = 0; f < seq.frames; ++f) {
        for (int64_t i = 0; i < seq.joints * seq.dims; ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", seq.data[f * seq.joints * seq.dims + i]);
            if (i) out << ' ';
            out << buf;
        }
        out << "\n";
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream fs(tmp, std::ios::binary);
        if (!fs) throw IoError("cannot write " + tmp);
        fs << out.str();
        if (!fs) throw IoError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline JointSequence load_sequence(const std::string& path) {
    std::ifstream fs(path, std::ios::binary);
    if (!fs) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(fs, line)) throw ParseError(path + ":1: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    int64_t j = 0, d = 0, f = 0;
    if (std::sscanf(line.c_str(), "jpseq v1 J=%" SCNd64 " D=%" SCNd64 " F=%" SCNd64, &j, &d,
                    &f) != 3) {
        throw ParseError(path + ":1: bad header, expected 'jpseq v1 J=<int> D=<int> F=<int>'");
    }
    if (j < 1 || (d != 2 && d != 3) || f < 0)
        throw ParseError(path + ":1: invalid header values");
    JointSequence seq(j, d, f);
    const int64_t per_line = j * d;
    for (int64_t fr = 0; fr < f; ++fr) {
        if (!std::getline(fs, line))
            throw ParseError(path + ":" + std::to_string(fr + 2) + ": missing data line");
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const char* p = line.c_str();
        char* end = nullptr;
        for (int64_t i = 0; i < per_line; ++i) {
            const double v = std::strtod(p, &end);
            if (end == p) {
                throw ParseError(path + ":" + std::to_string(fr + 2) + ": expected " +
                                 std::to_string(per_line) + " values, found " + std::to_string(i));
            }
            if (!std::isfinite(v)) {
                throw ParseError(path + ":" + std::to_string(fr + 2) + ": non-finite value at field " +
                                 std::to_string(i + 1));
            }
            seq.data[fr * per_line + i] = v;
            p = end;
        }
        while (*p == ' ' || *p == '\t') ++p;
        if (*p != '\0') {
            throw ParseError(path + ":" + std::to_string(fr + 2) + ": expected " +
                             std::to_string(per_line) + " values, line has extra fields");
        }
    }
    return seq;
}

// ---------------------------------------------------------------------------
// camera
// ---------------------------------------------------------------------------

// Pinhole camera. Extrinsics map world to camera space: Xc = R*Xw + t (mm).
// The principal point doubles as the image half-extent for the pixel <->
// normalized conversion (x_norm = u/cx - 1).
struct Camera {
    double fx = 1150, fy = 1150, cx = 500, cy = 500;
    std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
    std::array<double, 3> translation{0, 0, 0};

    std::array<double, 3> to_camera(const std::array<double, 3>& w) const {
        std::array<double, 3> c{};
        for (int i = 0; i < 3; ++i) {
            c[i] = translation[i];
            for (int k = 0; k < 3; ++k) c[i] += rotation[i * 3 + k] * w[k];
        }
        return c;
    }

    // Camera-space mm -> normalized image coordinates.
    std::array<double, 2> project(double x, double y, double z) const {
        require(z > 0, "camera: point behind camera");
        return {(fx * x / z + cx) / cx - 1.0, (fy * y / z + cy) / cy - 1.0};
    }
};

inline nlohmann::json camera_to_json(const Camera& c) {
    return {{"fx", c.fx},
            {"fy", c.fy},
            {"cx", c.cx},
            {"cy", c.cy},
            {"rotation", c.rotation},
            {"translation", c.translation}};
}

inline Camera camera_from_json(const nlohmann::json& j) {
    Camera c;
    require(j.is_object(), "camera json: expected an object");
    for (const auto& k : j.items()) {
        const std::string& key = k.key();
        require(key == "fx" || key == "fy" || key == "cx" || key == "cy" || key == "rotation" ||
                    key == "translation",
                "camera json: unknown key '" + key + "'");
    }
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    auto rot = j.at("rotation").get<std::vector<double>>();
    auto tr = j.at("translation").get<std::vector<double>>();
    require(rot.size() == 9 && tr.size() == 3, "camera json: rotation must be 9 values, translation 3");
    std::copy(rot.begin(), rot.end(), c.rotation.begin());
    std::copy(tr.begin(), tr.end(), c.translation.begin());
    require(c.fx > 0 && c.fy > 0 && c.cx > 0 && c.cy > 0, "camera json: intrinsics must be positive");
    return c;
}

// ---------------------------------------------------------------------------
// window extraction
// ---------------------------------------------------------------------------

// n consecutive 2-D poses feeding one prediction. Non-causal windows center
// the target, causal windows end on it.
struct Window {
    std::vector<Pose2D> frames;
    int64_t target = 0;       // index within the window
    int64_t source_frame = 0; // frame the prediction is for
};

// One window per frame; out-of-range indices replicate the sequence edges.
inline std::vector<Window> make_windows(const JointSequence& seq, int64_t n, bool causal) {
    require(n >= 1, "make_windows: n must be >= 1");
    require_shape(seq.dims == 2, "make_windows: need a 2-D sequence");
    require(causal || n % 2 == 1, "make_windows: non-causal windows need odd n");
    std::vector<Window> out;
    out.reserve(static_cast<size_t>(seq.frames));
    const int64_t before = causal ? n - 1 : (n - 1) / 2;
    for (int64_t f = 0; f < seq.frames; ++f) {
        Window w;
        w.frames.reserve(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            int64_t src = f - before + i;
            src = std::max<int64_t>(0, std::min(seq.frames - 1, src));
            w.frames.push_back(seq.pose2d(src));
        }
        w.target = causal ? n - 1 : (n - 1) / 2;
        w.source_frame = f;
        out.push_back(std::move(w));
    }
    return out;
}

// ---------------------------------------------------------------------------
// synthetic motion
// ---------------------------------------------------------------------------

struct SynthResult {
    JointSequence seq3d; // camera-space absolute millimeters
    JointSequence seq2d; // normalized image coordinates
    Camera camera;
    Skeleton skeleton;
};

namespace detail {

inline std::array<double, 9> axis_angle(const std::array<double, 3>& axis, double angle) {
    const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    const double x = axis[0], y = axis[1], z = axis[2];
    return {t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
            t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
            t * x * z - s * y, t * y * z + s * x, t * z * z + c};
}

inline std::array<double, 9> mat_mul(const std::array<double, 9>& a,
                                     const std::array<double, 9>& b) {
    std::array<double, 9> r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) r[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
    return r;
}

inline std::array<double, 3> mat_vec(const std::array<double, 9>& m,
                                     const std::array<double, 3>& v) {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

inline std::array<double, 3> normalized(std::array<double, 3> v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return {v[0] / n, v[1] / n, v[2] / n};
}

// Sum of low-frequency sinusoids; smooth by construction. Harmonic
// amplitudes are normalized so the track stays within +-max_amp for any seed.
struct AngleTrack {
    double amp[3], freq[3], phase[3];

    static AngleTrack random(RngStream& rng, double max_amp) {
        AngleTrack t{};
        double total = 0.0;
        for (int h = 0; h < 3; ++h) {
            t.amp[h] = rng.uniform(0.15, 1.0) / (h + 1.0);
            total += t.amp[h];
            t.freq[h] = rng.uniform(0.2, 1.2) * (h + 1.0);
            t.phase[h] = rng.uniform(0.0, 2.0 * M_PI);
        }
        for (double& a : t.amp) a *= max_amp / total;
        return t;
    }

    double eval(double tsec) const {
        double a = 0.0;
        for (int h = 0; h < 3; ++h) a += amp[h] * std::sin(2.0 * M_PI * freq[h] * tsec + phase[h]);
        return a;
    }
};

} // namespace detail

// Kinematic-tree sinusoidal motion in front of a fixed camera. Bone lengths
// are constant by construction (rotations preserve them); the 2-D track is
// the exact perspective projection of the 3-D track.
inline SynthResult synth_generate(uint64_t seed, int64_t frames, int64_t joints = 17) {
    require(frames >= 1, "synth_generate: frames must be >= 1");
    require(joints == 17, "synth_generate: only the 17-joint default skeleton is supported");
    SynthResult out;
    out.skeleton = default_skeleton();
    const Skeleton& sk = out.skeleton;
    const int64_t j = sk.joints();

    // rest directions (unit) and bone lengths (mm), world frame: x right,
    // y forward (depth seen from the camera), z up
    static const std::array<std::array<double, 3>, 17> rest_dir = {{
        {0, 0, 0},        // 0 pelvis
        {1, 0, 0},        // 1 r-hip
        {0, 0, -1},       // 2 r-knee
        {0, 0, -1},       // 3 r-ankle
        {-1, 0, 0},       // 4 l-hip
        {0, 0, -1},       // 5 l-knee
        {0, 0, -1},       // 6 l-ankle
        {0, 0, 1},        // 7 spine
        {0, 0, 1},        // 8 thorax
        {0, 0, 1},        // 9 neck
        {0, 0, 1},        // 10 head
        {-1, 0, 0},       // 11 l-shoulder
        {-0.2, 0, -1},    // 12 l-elbow
        {-0.2, 0, -1},    // 13 l-wrist
        {1, 0, 0},        // 14 r-shoulder
        {0.2, 0, -1},     // 15 r-elbow
        {0.2, 0, -1},     // 16 r-wrist
    }};
    static const std::array<double, 17> bone_mm = {0,   130, 450, 440, 130, 450, 440, 230, 250,
                                                   110, 120, 150, 280, 250, 150, 280, 250};

    RngStream rng = RngStream::derive(seed, 0x5e9, 0);
    std::vector<detail::AngleTrack> tracks;
    std::vector<std::array<double, 3>> axes;
    tracks.reserve(static_cast<size_t>(j));
    axes.reserve(static_cast<size_t>(j));
    for (int64_t q = 0; q < j; ++q) {
        // legs and arms swing more than the torso
        const bool limb = (q >= 1 && q <= 6) || (q >= 11 && q <= 16);
        tracks.push_back(detail::AngleTrack::random(rng, limb ? 0.55 : 0.18));
        axes.push_back(detail::normalized(
            {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)}));
    }
    // root wanders inside a 2x2 m area (|x|, |y| < 950 mm by amplitude bound)
    const detail::AngleTrack root_x = detail::AngleTrack::random(rng, 950.0);
    const detail::AngleTrack root_y = detail::AngleTrack::random(rng, 950.0);
    const detail::AngleTrack root_z = detail::AngleTrack::random(rng, 40.0);
    const detail::AngleTrack root_turn = detail::AngleTrack::random(rng, 0.9);

    // camera looking at the motion volume from 4.5 m away, slightly above
    Camera cam;
    {
        const std::array<double, 3> eye = {0.0, -4500.0, 1500.0};
        const std::array<double, 3> at = {0.0, 0.0, 900.0};
        const std::array<double, 3> up = {0.0, 0.0, 1.0};
        const std::array<double, 3> fwd = detail::normalized(
            {at[0] - eye[0], at[1] - eye[1], at[2] - eye[2]});
        std::array<double, 3> right = detail::normalized({fwd[1] * up[2] - fwd[2] * up[1],
                                                          fwd[2] * up[0] - fwd[0] * up[2],
                                                          fwd[0] * up[1] - fwd[1] * up[0]});
        const std::array<double, 3> down = {fwd[1] * right[2] - fwd[2] * right[1],
                                            fwd[2] * right[0] - fwd[0] * right[2],
                                            fwd[0] * right[1] - fwd[1] * right[0]};
        cam.rotation = {right[0], right[1], right[2], down[0], down[1],
                        down[2],  fwd[0],   fwd[1],   fwd[2]};
        cam.translation = {-(cam.rotation[0] * eye[0] + cam.rotation[1] * eye[1] +
                             cam.rotation[2] * eye[2]),
                           -(cam.rotation[3] * eye[0] + cam.rotation[4] * eye[1] +
                             cam.rotation[5] * eye[2]),
                           -(cam.rotation[6] * eye[0] + cam.rotation[7] * eye[1] +
                             cam.rotation[8] * eye[2])};
    }
    out.camera = cam;

    out.seq3d = JointSequence(j, 3, frames);
    out.seq2d = JointSequence(j, 2, frames);
    const double fps = 50.0;
    std::vector<std::array<double, 3>> pos(static_cast<size_t>(j));
    std::vector<std::array<double, 9>> rot(static_cast<size_t>(j));
    for (int64_t f = 0; f < frames; ++f) {
        const double t = static_cast<double>(f) / fps;
        pos[0] = {root_x.eval(t), root_y.eval(t), 900.0 + root_z.eval(t)};
        rot[0] = detail::axis_angle({0, 0, 1}, root_turn.eval(t));
        for (int64_t q = 1; q < j; ++q) {
            const int parent = sk.parents[static_cast<size_t>(q)];
            const auto local = detail::axis_angle(axes[static_cast<size_t>(q)],
                                                  tracks[static_cast<size_t>(q)].eval(t));
            rot[static_cast<size_t>(q)] = detail::mat_mul(rot[static_cast<size_t>(parent)], local);
            const auto offset = detail::mat_vec(
                rot[static_cast<size_t>(q)],
                {rest_dir[static_cast<size_t>(q)][0] * bone_mm[static_cast<size_t>(q)],
                 rest_dir[static_cast<size_t>(q)][1] * bone_mm[static_cast<size_t>(q)],
                 rest_dir[static_cast<size_t>(q)][2] * bone_mm[static_cast<size_t>(q)]});
            pos[static_cast<size_t>(q)] = {pos[static_cast<size_t>(parent)][0] + offset[0],
                                           pos[static_cast<size_t>(parent)][1] + offset[1],
                                           pos[static_cast<size_t>(parent)][2] + offset[2]};
        }
        for (int64_t q = 0; q < j; ++q) {
            const auto c = cam.to_camera(pos[static_cast<size_t>(q)]);
            require(c[2] > 0, "synth_generate: joint fell behind the camera");
            out.seq3d.at(f, q, 0) = c[0];
            out.seq3d.at(f, q, 1) = c[1];
            out.seq3d.at(f, q, 2) = c[2];
            const auto uv = cam.project(c[0], c[1], c[2]);
            out.seq2d.at(f, q, 0) = uv[0];
            out.seq2d.at(f, q, 1) = uv[1];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// noise harness and flip augmentation
// ---------------------------------------------------------------------------

// Adds i.i.d. pixel-space Gaussian noise to a normalized 2-D sequence. The
// principal point supplies the pixel -> normalized scale (u/cx - 1 mapping),
// so sigma is expressed in pixels as reported in detector benchmarks.
inline JointSequence add_noise(const JointSequence& seq, double sigma_px, uint64_t seed,
                               double cx = 500.0, double cy = 500.0) {
    require(sigma_px >= 0.0, "add_noise: sigma must be >= 0");
    require_shape(seq.dims == 2, "add_noise: need a 2-D sequence");
    JointSequence out = seq;
    if (sigma_px == 0.0) return out;
    RngStream rng = RngStream::derive(seed, 0xa015e);
    for (int64_t f = 0; f < seq.frames; ++f) {
        for (int64_t q = 0; q < seq.joints; ++q) {
            out.at(f, q, 0) += rng.gauss(0.0, sigma_px) / cx;
            out.at(f, q, 1) += rng.gauss(0.0, sigma_px) / cy;
        }
    }
    return out;
}

// Mirror a pose: negate x, swap left/right joints.
inline Pose2D flip_horizontal(const Pose2D& p, const std::vector<std::pair<int, int>>& pairs) {
    require(!pairs.empty(), "flip_horizontal: mirror-pair table missing");
    Pose2D out = p;
    for (int64_t q = 0; q < p.joints; ++q) out.x(q) = -p.x(q);
    for (auto [l, r] : pairs) {
        std::swap(out.x(l), out.x(r));
        std::swap(out.y(l), out.y(r));
    }
    return out;
}

inline Pose3D flip_horizontal(const Pose3D& p, const std::vector<std::pair<int, int>>& pairs) {
    require(!pairs.empty(), "flip_horizontal: mirror-pair table missing");
    Pose3D out = p;
    for (int64_t q = 0; q < p.joints; ++q) out.coord(q, 0) = -p.coord(q, 0);
    for (auto [l, r] : pairs) {
        for (int64_t k = 0; k < 3; ++k) std::swap(out.coord(l, k), out.coord(r, k));
    }
    return out;
}

inline Window flip_horizontal(const Window& w, const std::vector<std::pair<int, int>>& pairs) {
    Window out = w;
    for (auto& f : out.frames) f = flip_horizontal(f, pairs);
    return out;
}

} // namespace atcn
