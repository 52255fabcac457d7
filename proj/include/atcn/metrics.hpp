#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <json.hpp>

#include "atcn/common.hpp"
#include "atcn/pose.hpp"

namespace atcn {

// Protocol 1. Both sequences are root-centered per frame (root = joint 0),
// then the per-joint Euclidean distances are averaged over frames and joints.
inline double mpjpe(std::span<const Pose3D> pred, std::span<const Pose3D> gt) {
    require_shape(pred.size() == gt.size() && !pred.empty(), "mpjpe: sequence length mismatch");
    double total = 0.0;
    int64_t joints = 0;
    for (size_t f = 0; f < pred.size(); ++f) {
        const Pose3D& p = pred[f];
        const Pose3D& g = gt[f];
        require_shape(p.joints == g.joints, "mpjpe: joint count mismatch");
        joints = p.joints;
        for (int64_t q = 0; q < p.joints; ++q) {
            double d2 = 0.0;
            for (int64_t k = 0; k < 3; ++k) {
                const double d = (p.coord(q, k) - p.coord(0, k)) - (g.coord(q, k) - g.coord(0, k));
                d2 += d * d;
            }
            total += std::sqrt(d2);
        }
    }
    return total / static_cast<double>(pred.size() * static_cast<size_t>(joints));
}

struct SimilarityTransform {
    double scale = 1.0;
    std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
    std::array<double, 3> translation{0, 0, 0};

    Pose3D apply(const Pose3D& p) const {
        Pose3D out(p.joints);
        for (int64_t q = 0; q < p.joints; ++q) {
            for (int64_t i = 0; i < 3; ++i) {
                double v = translation[static_cast<size_t>(i)];
                for (int64_t k = 0; k < 3; ++k)
                    v += scale * rotation[static_cast<size_t>(i * 3 + k)] * p.coord(q, k);
                out.coord(q, i) = v;
            }
        }
        return out;
    }
};

struct ProcrustesResult {
    Pose3D aligned;
    SimilarityTransform transform;
};

// Umeyama similarity alignment: the s*R*pred + t minimizing the summed
// squared joint distance to gt, with the reflection excluded by flipping the
// smallest singular direction when det(U)det(V) < 0.
inline ProcrustesResult procrustes_align(const Pose3D& pred, const Pose3D& gt) {
    require_shape(pred.joints == gt.joints, "procrustes_align: joint count mismatch");
    const int64_t j = pred.joints;
    require_shape(j >= 3, "procrustes_align: need at least 3 joints");

    Eigen::Matrix3Xd p(3, j), g(3, j);
    for (int64_t q = 0; q < j; ++q) {
        for (int64_t k = 0; k < 3; ++k) {
            p(k, q) = pred.coord(q, k);
            g(k, q) = gt.coord(q, k);
        }
    }
    const Eigen::Vector3d mp = p.rowwise().mean();
    const Eigen::Vector3d mg = g.rowwise().mean();
    p.colwise() -= mp;
    g.colwise() -= mg;
    const double var_p = p.squaredNorm() / static_cast<double>(j);
    if (var_p < 1e-12) throw AlignmentError("procrustes_align: degenerate prediction (all joints coincide)");

    const Eigen::Matrix3d cov = g * p.transpose() / static_cast<double>(j);
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d d = Eigen::Vector3d::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) d(2) = -1.0;
    const Eigen::Matrix3d rot = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
    const double scale = svd.singularValues().dot(d) / var_p;
    const Eigen::Vector3d trans = mg - scale * rot * mp;

    ProcrustesResult res;
    res.transform.scale = scale;
    for (int64_t i = 0; i < 3; ++i) {
        res.transform.translation[static_cast<size_t>(i)] = trans(i);
        for (int64_t k = 0; k < 3; ++k)
            res.transform.rotation[static_cast<size_t>(i * 3 + k)] = rot(i, k);
    }
    res.aligned = res.transform.apply(pred);
    return res;
}

// Protocol 2: per-frame similarity alignment, then the mean joint distance.
inline double p_mpjpe(std::span<const Pose3D> pred, std::span<const Pose3D> gt) {
    require_shape(pred.size() == gt.size() && !pred.empty(), "p_mpjpe: sequence length mismatch");
    double total = 0.0;
    int64_t joints = 0;
    for (size_t f = 0; f < pred.size(); ++f) {
        const Pose3D aligned = procrustes_align(pred[f], gt[f]).aligned;
        const Pose3D& g = gt[f];
        joints = g.joints;
        for (int64_t q = 0; q < g.joints; ++q) {
            double d2 = 0.0;
            for (int64_t k = 0; k < 3; ++k) {
                const double d = aligned.coord(q, k) - g.coord(q, k);
                d2 += d * d;
            }
            total += std::sqrt(d2);
        }
    }
    return total / static_cast<double>(pred.size() * static_cast<size_t>(joints));
}

// Scale-only alignment: per frame, the optimal scalar <p,g>/<p,p> on
// root-centered poses (0 when the prediction has no extent).
inline double n_mpjpe(std::span<const Pose3D> pred, std::span<const Pose3D> gt) {
    require_shape(pred.size() == gt.size() && !pred.empty(), "n_mpjpe: sequence length mismatch");
    double total = 0.0;
    int64_t joints = 0;
    for (size_t f = 0; f < pred.size(); ++f) {
        const Pose3D p = pred[f].root_centered();
        const Pose3D g = gt[f].root_centered();
        require_shape(p.joints == g.joints, "n_mpjpe: joint count mismatch");
        joints = p.joints;
        double dot = 0.0, pp = 0.0;
        for (size_t i = 0; i < p.xyz.size(); ++i) {
            dot += p.xyz[i] * g.xyz[i];
            pp += p.xyz[i] * p.xyz[i];
        }
        const double s = pp > 1e-12 ? dot / pp : 0.0;
        for (int64_t q = 0; q < p.joints; ++q) {
            double d2 = 0.0;
            for (int64_t k = 0; k < 3; ++k) {
                const double d = s * p.coord(q, k) - g.coord(q, k);
                d2 += d * d;
            }
            total += std::sqrt(d2);
        }
    }
    return total / static_cast<double>(pred.size() * static_cast<size_t>(joints));
}

struct MetricsReport {
    std::vector<double> per_frame_mpjpe;  // mm, protocol 1 per frame
    std::vector<double> per_joint_mpjpe;  // mm, protocol-1 mean per joint
    double mpjpe_mm = 0.0;
    double p_mpjpe_mm = 0.0;
    double n_mpjpe_mm = 0.0;
    int64_t frames = 0;
    int64_t joints = 0;
};

// Per-frame / per-joint protocol-1 breakdown plus the three aggregates.
inline MetricsReport trace_errors(std::span<const Pose3D> pred, std::span<const Pose3D> gt) {
    require_shape(pred.size() == gt.size() && !pred.empty(), "trace_errors: sequence length mismatch");
    MetricsReport rep;
    rep.frames = static_cast<int64_t>(pred.size());
    rep.joints = pred[0].joints;
    rep.per_frame_mpjpe.assign(pred.size(), 0.0);
    rep.per_joint_mpjpe.assign(static_cast<size_t>(rep.joints), 0.0);
    for (size_t f = 0; f < pred.size(); ++f) {
        const Pose3D p = pred[f].root_centered();
        const Pose3D g = gt[f].root_centered();
        require_shape(p.joints == rep.joints, "trace_errors: joint count mismatch");
        double frame_total = 0.0;
        for (int64_t q = 0; q < rep.joints; ++q) {
            double d2 = 0.0;
            for (int64_t k = 0; k < 3; ++k) {
                const double d = p.coord(q, k) - g.coord(q, k);
                d2 += d * d;
            }
            const double dist = std::sqrt(d2);
            frame_total += dist;
            rep.per_joint_mpjpe[static_cast<size_t>(q)] += dist;
        }
        rep.per_frame_mpjpe[f] = frame_total / static_cast<double>(rep.joints);
    }
    for (double& v : rep.per_joint_mpjpe) v /= static_cast<double>(rep.frames);
    double sum = 0.0;
    for (double v : rep.per_frame_mpjpe) sum += v;
    rep.mpjpe_mm = sum / static_cast<double>(rep.frames);
    rep.p_mpjpe_mm = p_mpjpe(pred, gt);
    rep.n_mpjpe_mm = n_mpjpe(pred, gt);
    return rep;
}

// CSV trace: one row per (frame, joint) protocol-1 distance.
inline void write_trace_csv(std::span<const Pose3D> pred, std::span<const Pose3D> gt,
                            const std::string& path) {
    require_shape(pred.size() == gt.size() && !pred.empty(), "trace csv: sequence length mismatch");
    std::ofstream fs(path + ".tmp", std::ios::binary);
    if (!fs) throw IoError("cannot write " + path);
    fs << "frame,joint,err_mm\n";
    char buf[40];
    for (size_t f = 0; f < pred.size(); ++f) {
        const Pose3D p = pred[f].root_centered();
        const Pose3D g = gt[f].root_centered();
        for (int64_t q = 0; q < p.joints; ++q) {
            double d2 = 0.0;
            for (int64_t k = 0; k < 3; ++k) {
                const double d = p.coord(q, k) - g.coord(q, k);
                d2 += d * d;
            }
            std::snprintf(buf, sizeof buf, "%.17g", std::sqrt(d2));
            fs << f << ',' << q << ',' << buf << '\n';
        }
    }
    if (!fs) throw IoError("write failed: " + path);
    fs.close();
    std::filesystem::rename(path + ".tmp", path);
}

inline nlohmann::json report_to_json(const MetricsReport& rep) {
    return {{"mpjpe_mm", rep.mpjpe_mm},
            {"p_mpjpe_mm", rep.p_mpjpe_mm},
            {"n_mpjpe_mm", rep.n_mpjpe_mm},
            {"frames", rep.frames},
            {"joints", rep.joints}};
}

} // namespace atcn
