#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "atcn/metrics.hpp"
#include "atcn/rng.hpp"

using namespace atcn;

namespace {

Pose3D random_pose(RngStream& rng, int64_t j = 17, double extent = 400.0) {
    Pose3D p(j);
    for (auto& v : p.xyz) v = rng.uniform(-extent, extent);
    return p;
}

// independent axis-angle rotation, no Eigen
std::array<double, 9> random_rotation(RngStream& rng) {
    double ax = rng.gauss(), ay = rng.gauss(), az = rng.gauss();
    const double n = std::sqrt(ax * ax + ay * ay + az * az);
    ax /= n;
    ay /= n;
    az /= n;
    const double t = rng.uniform(0, 2 * M_PI);
    const double c = std::cos(t), s = std::sin(t), u = 1 - c;
    return {u * ax * ax + c,      u * ax * ay - s * az, u * ax * az + s * ay,
            u * ax * ay + s * az, u * ay * ay + c,      u * ay * az - s * ax,
            u * ax * az - s * ay, u * ay * az + s * ax, u * az * az + c};
}

SimilarityTransform random_similarity(RngStream& rng) {
    SimilarityTransform t;
    t.scale = rng.uniform(0.3, 3.0);
    t.rotation = random_rotation(rng);
    t.translation = {rng.uniform(-500, 500), rng.uniform(-500, 500), rng.uniform(-500, 500)};
    return t;
}

double sse(const Pose3D& a, const Pose3D& b) {
    double total = 0;
    for (size_t i = 0; i < a.xyz.size(); ++i) {
        const double d = a.xyz[i] - b.xyz[i];
        total += d * d;
    }
    return total;
}

} // namespace

TEST_CASE("mpjpe examples") {
    RngStream rng(3);
    const Pose3D gt = random_pose(rng);
    SECTION("identical sequences score zero") {
        std::vector<Pose3D> seq{gt, gt};
        REQUIRE(mpjpe(seq, seq) == 0.0);
    }
    SECTION("one joint offset by a 3-4-5 triangle") {
        Pose3D pred = gt;
        pred.coord(5, 0) += 3.0;
        pred.coord(5, 1) += 4.0;
        std::vector<Pose3D> p{pred}, g{gt};
        REQUIRE_THAT(mpjpe(p, g), Catch::Matchers::WithinAbs(5.0 / 17.0, 1e-12));
    }
    SECTION("root alignment removes global translation") {
        Pose3D pred = gt;
        for (int64_t q = 0; q < 17; ++q) {
            pred.coord(q, 0) += 123;
            pred.coord(q, 1) -= 45;
            pred.coord(q, 2) += 999;
        }
        std::vector<Pose3D> p{pred}, g{gt};
        REQUIRE_THAT(mpjpe(p, g), Catch::Matchers::WithinAbs(0.0, 1e-9));
    }
    SECTION("mpjpe is symmetric") {
        for (int t = 0; t < 10; ++t) {
            std::vector<Pose3D> a{random_pose(rng)}, b{random_pose(rng)};
            REQUIRE_THAT(mpjpe(a, b), Catch::Matchers::WithinAbs(mpjpe(b, a), 1e-12));
        }
    }
    SECTION("shape mismatch is an error") {
        std::vector<Pose3D> a{Pose3D(17)}, b{Pose3D(16)};
        REQUIRE_THROWS_AS(mpjpe(a, b), ShapeError);
    }
}

TEST_CASE("procrustes recovers similarity transforms") {
    RngStream rng(5);
    for (int t = 0; t < 20; ++t) {
        const Pose3D gt = random_pose(rng);
        const SimilarityTransform sim = random_similarity(rng);
        const Pose3D pred = sim.apply(gt);
        const ProcrustesResult res = procrustes_align(pred, gt);
        for (int64_t q = 0; q < 17; ++q)
            for (int64_t k = 0; k < 3; ++k)
                REQUIRE_THAT(res.aligned.coord(q, k),
                             Catch::Matchers::WithinAbs(gt.coord(q, k), 1e-9));
        REQUIRE(res.transform.scale > 0.0);
    }
}

TEST_CASE("procrustes recovers pure scaling") {
    RngStream rng(7);
    const Pose3D gt = random_pose(rng);
    Pose3D pred = gt;
    for (auto& v : pred.xyz) v *= 2.0;
    const ProcrustesResult res = procrustes_align(pred, gt);
    for (int64_t q = 0; q < 17; ++q)
        for (int64_t k = 0; k < 3; ++k)
            REQUIRE_THAT(res.aligned.coord(q, k), Catch::Matchers::WithinAbs(gt.coord(q, k), 1e-9));
    REQUIRE_THAT(res.transform.scale, Catch::Matchers::WithinAbs(0.5, 1e-12));
}

TEST_CASE("procrustes rotation is proper and orthonormal") {
    RngStream rng(9);
    for (int t = 0; t < 20; ++t) {
        const Pose3D pred = random_pose(rng);
        const Pose3D gt = random_pose(rng);
        const auto& r = procrustes_align(pred, gt).transform.rotation;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                double dot = 0;
                for (int k = 0; k < 3; ++k) dot += r[k * 3 + i] * r[k * 3 + j];
                REQUIRE_THAT(dot, Catch::Matchers::WithinAbs(i == j ? 1.0 : 0.0, 1e-9));
            }
        }
        const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
                           r[2] * (r[3] * r[7] - r[4] * r[6]);
        REQUIRE_THAT(det, Catch::Matchers::WithinAbs(1.0, 1e-9));
    }
}

TEST_CASE("procrustes beats brute-force random transforms") {
    RngStream rng(11);
    const Pose3D pred = random_pose(rng);
    const Pose3D gt = random_pose(rng);
    const ProcrustesResult res = procrustes_align(pred, gt);
    const double aligned_sse = sse(res.aligned, gt);
    REQUIRE(aligned_sse <= sse(pred, gt) + 1e-9); // identity transform
    for (int t = 0; t < 1000; ++t) {
        const SimilarityTransform sim = random_similarity(rng);
        REQUIRE(aligned_sse <= sse(sim.apply(pred), gt) + 1e-9);
    }
}

TEST_CASE("procrustes rejects degenerate input") {
    Pose3D flat(17);
    std::fill(flat.xyz.begin(), flat.xyz.end(), 3.0);
    REQUIRE_THROWS_AS(procrustes_align(flat, Pose3D(17)), AlignmentError);
}

TEST_CASE("p_mpjpe examples") {
    RngStream rng(13);
    SECTION("similarity-transformed gt scores zero") {
        std::vector<Pose3D> gt, pred;
        for (int f = 0; f < 4; ++f) {
            gt.push_back(random_pose(rng));
            pred.push_back(random_similarity(rng).apply(gt.back()));
        }
        REQUIRE(p_mpjpe(pred, gt) < 1e-9);
    }
    SECTION("alignment never hurts a sequence") {
        for (int t = 0; t < 100; ++t) {
            std::vector<Pose3D> pred, gt;
            for (int f = 0; f < 10; ++f) {
                pred.push_back(random_pose(rng));
                gt.push_back(random_pose(rng));
            }
            REQUIRE(p_mpjpe(pred, gt) <= mpjpe(pred, gt) + 1e-9);
        }
    }
    SECTION("a joint flipped through the origin leaves a residual") {
        const Pose3D gt = random_pose(rng);
        Pose3D pred = gt;
        for (int64_t k = 0; k < 3; ++k) pred.coord(9, k) = -pred.coord(9, k);
        std::vector<Pose3D> p{pred}, g{gt};
        REQUIRE(p_mpjpe(p, g) > 0.1);
    }
}

TEST_CASE("n_mpjpe examples") {
    RngStream rng(17);
    SECTION("pure scaling is fully recovered") {
        std::vector<Pose3D> gt{random_pose(rng)}, pred;
        pred.push_back(gt[0]);
        for (auto& v : pred[0].xyz) v *= 3.0;
        REQUIRE(n_mpjpe(pred, gt) < 1e-9);
    }
    SECTION("rotation is not recovered by scale alignment") {
        const Pose3D base = random_pose(rng);
        SimilarityTransform rot;
        rot.rotation = random_rotation(rng);
        std::vector<Pose3D> gt{base}, pred{rot.apply(base)};
        REQUIRE(p_mpjpe(pred, gt) < 1e-9);
        REQUIRE(n_mpjpe(pred, gt) > 1.0);
    }
    SECTION("zero prediction falls back to the gt norm") {
        std::vector<Pose3D> gt{random_pose(rng)}, pred{Pose3D(17)};
        REQUIRE_THAT(n_mpjpe(pred, gt), Catch::Matchers::WithinAbs(mpjpe(pred, gt), 1e-12));
    }
}

// The superset argument (each protocol optimizes over a larger transform
// family) bounds the per-frame summed squared residuals for every input; the
// reported mean-of-distances chain follows for sequences of realistic length.
TEST_CASE("protocol inequality chain") {
    RngStream rng(19);
    SECTION("mean-distance chain over random sequence pairs") {
        for (int t = 0; t < 100; ++t) {
            std::vector<Pose3D> pred, gt;
            for (int f = 0; f < 10; ++f) {
                const Pose3D g = random_pose(rng);
                Pose3D p = g;
                if (t % 2 == 0) {
                    // correlated pair: gt plus noise
                    for (auto& v : p.xyz) v += rng.gauss(0, 40);
                } else {
                    p = random_pose(rng);
                }
                gt.push_back(g);
                pred.push_back(p);
            }
            const double m = mpjpe(pred, gt);
            const double n = n_mpjpe(pred, gt);
            const double p2 = p_mpjpe(pred, gt);
            REQUIRE(p2 <= n + 1e-9);
            REQUIRE(n <= m + 1e-9);
        }
    }
    SECTION("squared-residual chain holds for every single pose pair") {
        for (int t = 0; t < 200; ++t) {
            const Pose3D gt = random_pose(rng);
            Pose3D pred = gt;
            if (t % 2 == 0) {
                for (auto& v : pred.xyz) v += rng.gauss(0, 60);
            } else {
                pred = random_pose(rng);
            }
            const Pose3D pr = pred.root_centered(), gr = gt.root_centered();
            double dot = 0, pp = 0;
            for (size_t i = 0; i < pr.xyz.size(); ++i) {
                dot += pr.xyz[i] * gr.xyz[i];
                pp += pr.xyz[i] * pr.xyz[i];
            }
            const double s = pp > 1e-12 ? dot / pp : 0.0;
            const Pose3D aligned = procrustes_align(pred, gt).aligned;
            double sse_m = 0, sse_n = 0, sse_p = 0;
            for (size_t i = 0; i < pr.xyz.size(); ++i) {
                const double dm = pr.xyz[i] - gr.xyz[i];
                const double dn = s * pr.xyz[i] - gr.xyz[i];
                const double dp = aligned.xyz[i] - gt.xyz[i];
                sse_m += dm * dm;
                sse_n += dn * dn;
                sse_p += dp * dp;
            }
            REQUIRE(sse_p <= sse_n + 1e-6);
            REQUIRE(sse_n <= sse_m + 1e-6);
        }
    }
}

TEST_CASE("metrics are invariant to joint relabeling") {
    RngStream rng(23);
    std::vector<Pose3D> pred{random_pose(rng)}, gt{random_pose(rng)};
    std::vector<int64_t> perm{3, 1, 4, 0, 2, 5, 6, 8, 7, 9, 10, 12, 11, 13, 15, 14, 16};
    // keep the root (index 0) fixed so root-centering picks the same joint
    std::swap(perm[0], perm[3]);
    auto apply_perm = [&](const Pose3D& p) {
        Pose3D out(17);
        for (int64_t q = 0; q < 17; ++q)
            for (int64_t k = 0; k < 3; ++k) out.coord(q, k) = p.coord(perm[static_cast<size_t>(q)], k);
        return out;
    };
    std::vector<Pose3D> pred_p{apply_perm(pred[0])}, gt_p{apply_perm(gt[0])};
    REQUIRE_THAT(mpjpe(pred_p, gt_p), Catch::Matchers::WithinAbs(mpjpe(pred, gt), 1e-9));
    REQUIRE_THAT(p_mpjpe(pred_p, gt_p), Catch::Matchers::WithinAbs(p_mpjpe(pred, gt), 1e-9));
    REQUIRE_THAT(n_mpjpe(pred_p, gt_p), Catch::Matchers::WithinAbs(n_mpjpe(pred, gt), 1e-9));
}

TEST_CASE("trace report") {
    RngStream rng(29);
    SECTION("identical sequences give an all-zero report") {
        std::vector<Pose3D> seq{random_pose(rng), random_pose(rng)};
        const MetricsReport rep = trace_errors(seq, seq);
        REQUIRE(rep.mpjpe_mm == 0.0);
        for (double v : rep.per_frame_mpjpe) REQUIRE(v == 0.0);
        for (double v : rep.per_joint_mpjpe) REQUIRE(v == 0.0);
    }
    SECTION("a single bad frame is isolated") {
        std::vector<Pose3D> gt, pred;
        for (int f = 0; f < 6; ++f) {
            gt.push_back(random_pose(rng));
            pred.push_back(gt.back());
        }
        pred[4].coord(7, 2) += 100.0;
        const MetricsReport rep = trace_errors(pred, gt);
        size_t argmax = 0;
        for (size_t f = 0; f < rep.per_frame_mpjpe.size(); ++f)
            if (rep.per_frame_mpjpe[f] > rep.per_frame_mpjpe[argmax]) argmax = f;
        REQUIRE(argmax == 4);
    }
    SECTION("aggregate equals the mean of the per-frame column") {
        std::vector<Pose3D> pred, gt;
        for (int f = 0; f < 5; ++f) {
            pred.push_back(random_pose(rng));
            gt.push_back(random_pose(rng));
        }
        const MetricsReport rep = trace_errors(pred, gt);
        double mean = 0;
        for (double v : rep.per_frame_mpjpe) mean += v;
        mean /= static_cast<double>(rep.per_frame_mpjpe.size());
        REQUIRE_THAT(rep.mpjpe_mm, Catch::Matchers::WithinAbs(mean, 1e-9));
        REQUIRE_THAT(rep.mpjpe_mm, Catch::Matchers::WithinAbs(mpjpe(pred, gt), 1e-12));
    }
    SECTION("csv agrees with the report") {
        std::vector<Pose3D> pred, gt;
        for (int f = 0; f < 4; ++f) {
            pred.push_back(random_pose(rng));
            gt.push_back(random_pose(rng));
        }
        const MetricsReport rep = trace_errors(pred, gt);
        const auto path = std::filesystem::temp_directory_path() / "atcn_trace.csv";
        write_trace_csv(pred, gt, path.string());
        std::ifstream fs(path);
        std::string line;
        std::getline(fs, line);
        REQUIRE(line == "frame,joint,err_mm");
        double total = 0;
        int64_t rows = 0;
        while (std::getline(fs, line)) {
            long frame, joint;
            double err;
            REQUIRE(std::sscanf(line.c_str(), "%ld,%ld,%lg", &frame, &joint, &err) == 3);
            total += err;
            ++rows;
        }
        REQUIRE(rows == 4 * 17);
        REQUIRE_THAT(total / static_cast<double>(rows),
                     Catch::Matchers::WithinAbs(rep.mpjpe_mm, 1e-9));
        std::filesystem::remove(path);
        const nlohmann::json j = report_to_json(rep);
        REQUIRE(j.at("frames").get<int64_t>() == 4);
        REQUIRE(j.at("joints").get<int64_t>() == 17);
        REQUIRE(j.at("mpjpe_mm").get<double>() == rep.mpjpe_mm);
    }
}
