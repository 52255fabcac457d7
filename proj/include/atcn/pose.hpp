#pragma once

#include <cstdint>
#include <vector>

#include "atcn/common.hpp"

namespace atcn {

// 2-D joint positions in normalized image units, joint-major [x0,y0,x1,y1,...].
struct Pose2D {
    int64_t joints = 0;
    std::vector<double> xy;

    Pose2D() = default;
    explicit Pose2D(int64_t j) : joints(j), xy(static_cast<size_t>(2 * j), 0.0) {}

    double x(int64_t j) const { return xy[static_cast<size_t>(2 * j)]; }
    double y(int64_t j) const { return xy[static_cast<size_t>(2 * j + 1)]; }
    double& x(int64_t j) { return xy[static_cast<size_t>(2 * j)]; }
    double& y(int64_t j) { return xy[static_cast<size_t>(2 * j + 1)]; }
};

// 3-D joint positions in millimeters, joint-major [x0,y0,z0,x1,...]. Root
// joint is index 0 by convention.
struct Pose3D {
    int64_t joints = 0;
    std::vector<double> xyz;

    Pose3D() = default;
    explicit Pose3D(int64_t j) : joints(j), xyz(static_cast<size_t>(3 * j), 0.0) {}

    double coord(int64_t j, int64_t k) const { return xyz[static_cast<size_t>(3 * j + k)]; }
    double& coord(int64_t j, int64_t k) { return xyz[static_cast<size_t>(3 * j + k)]; }

    Pose3D root_centered() const {
        Pose3D out(joints);
        for (int64_t j = 0; j < joints; ++j) {
            for (int64_t k = 0; k < 3; ++k) out.coord(j, k) = coord(j, k) - coord(0, k);
        }
        return out;
    }
};

} // namespace atcn
