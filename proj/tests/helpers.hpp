#pragma once

// Shared fixtures for the meshreg test suites.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "meshreg/mesh.hpp"

namespace testutil {

/// 53-bit uniform doubles in [0,1) from a fixed-seed engine.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int uniform_int(int lo, int hi) { // inclusive
        return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1));
    }
    double normal() {
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 1e-300);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * uniform());
    }
    Eigen::MatrixXd cloud(int n, double scale = 1.0) {
        Eigen::MatrixXd out(n, 3);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < 3; ++j) out(i, j) = scale * (uniform() - 0.5) * 2.0;
        return out;
    }
    Eigen::MatrixXd gaussian_cloud(int n, double scale = 1.0) {
        Eigen::MatrixXd out(n, 3);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < 3; ++j) out(i, j) = scale * normal();
        return out;
    }
    Eigen::Matrix3d rotation() {
        // random proper rotation via normalized quaternion
        Eigen::Vector4d q;
        for (int i = 0; i < 4; ++i) q(i) = normal();
        q.normalize();
        return Eigen::Quaterniond(q(0), q(1), q(2), q(3)).toRotationMatrix();
    }

private:
    std::mt19937_64 engine_;
};

/// Planar grid in the z=0 plane, nx*ny vertices, right-angled triangles.
inline meshreg::TriMesh make_grid(int nx, int ny, double spacing = 1.0) {
    meshreg::TriMesh mesh;
    mesh.vertices.resize(nx * ny, 3);
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x)
            mesh.vertices.row(y * nx + x) = Eigen::RowVector3d(x * spacing, y * spacing, 0.0);
    std::vector<Eigen::RowVector3i> faces;
    for (int y = 0; y + 1 < ny; ++y) {
        for (int x = 0; x + 1 < nx; ++x) {
            const int a = y * nx + x, b = y * nx + x + 1;
            const int c = (y + 1) * nx + x, d = (y + 1) * nx + x + 1;
            faces.emplace_back(a, b, c);
            faces.emplace_back(b, d, c);
        }
    }
    mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
    for (std::size_t i = 0; i < faces.size(); ++i) mesh.faces.row(static_cast<Eigen::Index>(i)) = faces[i];
    return mesh;
}

/// Open tube along +y: `rings` cross-sections of `segments` points each.
/// The test stand-in for a deformable bar.
inline meshreg::TriMesh make_tube(int rings, int segments, double radius = 0.5,
                                  double length = 4.0) {
    meshreg::TriMesh mesh;
    mesh.vertices.resize(rings * segments, 3);
    for (int r = 0; r < rings; ++r) {
        const double y = length * static_cast<double>(r) / (rings - 1);
        for (int s = 0; s < segments; ++s) {
            const double a = 2.0 * 3.14159265358979323846 * s / segments;
            mesh.vertices.row(r * segments + s) =
                Eigen::RowVector3d(radius * std::cos(a), y, radius * std::sin(a));
        }
    }
    std::vector<Eigen::RowVector3i> faces;
    for (int r = 0; r + 1 < rings; ++r) {
        for (int s = 0; s < segments; ++s) {
            const int s1 = (s + 1) % segments;
            const int a = r * segments + s, b = r * segments + s1;
            const int c = (r + 1) * segments + s, d = (r + 1) * segments + s1;
            faces.emplace_back(a, b, c);
            faces.emplace_back(b, d, c);
        }
    }
    mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
    for (std::size_t i = 0; i < faces.size(); ++i) mesh.faces.row(static_cast<Eigen::Index>(i)) = faces[i];
    return mesh;
}

} // namespace testutil
