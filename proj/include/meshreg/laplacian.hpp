#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "meshreg/errors.hpp"
#include "meshreg/mesh.hpp"

namespace meshreg {

/// Minimum magnitude kept for an accumulated cotangent edge weight. Near-zero
/// weights (obtuse cancellation, flat hypotenuses) are raised to this value so
/// the Laplacian stays factorizable.
inline constexpr double kCotWeightFloor = 1e-10;

/// Cotangent-weighted Laplace-Beltrami discretization (p x p, symmetric).
///
/// Off-diagonal L_ij = -1/2 (cot a_ij + cot b_ij) over the one or two
/// triangles sharing edge (i,j); diagonal L_ii makes every row sum to zero.
/// Boundary edges contribute their single cotangent. Throws DataError naming
/// the face when a triangle has (numerically) zero area.
inline Eigen::SparseMatrix<double> cotangent_laplacian(const TriMesh& mesh) {
    const int p = mesh.vertex_count();
    std::map<std::pair<int, int>, double> edge_weight; // key i<j, value sum of 1/2 cot

    for (int f = 0; f < mesh.faces.rows(); ++f) {
        const Eigen::RowVector3d v0 = mesh.vertices.row(mesh.faces(f, 0));
        const Eigen::RowVector3d v1 = mesh.vertices.row(mesh.faces(f, 1));
        const Eigen::RowVector3d v2 = mesh.vertices.row(mesh.faces(f, 2));
        const double double_area = (v1 - v0).cross(v2 - v0).norm();
        const double max_edge2 = std::max({(v1 - v0).squaredNorm(),
                                           (v2 - v1).squaredNorm(),
                                           (v0 - v2).squaredNorm()});
        if (!(double_area > 1e-12 * max_edge2))
            throw DataError("degenerate geometry: face " + std::to_string(f) +
                            " has zero area");
        // cot of the angle at vertex k, opposite edge (k+1, k+2)
        for (int k = 0; k < 3; ++k) {
            const int ia = mesh.faces(f, (k + 1) % 3);
            const int ib = mesh.faces(f, (k + 2) % 3);
            const Eigen::RowVector3d pk = mesh.vertices.row(mesh.faces(f, k));
            const Eigen::RowVector3d ea = mesh.vertices.row(ia) - pk;
            const Eigen::RowVector3d eb = mesh.vertices.row(ib) - pk;
            const double cot = ea.dot(eb) / ea.cross(eb).norm();
            auto key = ia < ib ? std::make_pair(ia, ib) : std::make_pair(ib, ia);
            edge_weight[key] += 0.5 * cot;
        }
    }

    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(edge_weight.size() * 4);
    std::vector<double> diag(static_cast<std::size_t>(p), 0.0);
    for (auto& [edge, w_raw] : edge_weight) {
        double w = w_raw;
        if (std::abs(w) < kCotWeightFloor) w = kCotWeightFloor;
        triplets.emplace_back(edge.first, edge.second, -w);
        triplets.emplace_back(edge.second, edge.first, -w);
        diag[static_cast<std::size_t>(edge.first)] += w;
        diag[static_cast<std::size_t>(edge.second)] += w;
    }
    for (int i = 0; i < p; ++i) triplets.emplace_back(i, i, diag[static_cast<std::size_t>(i)]);

    Eigen::SparseMatrix<double> L(p, p);
    L.setFromTriplets(triplets.begin(), triplets.end());
    L.makeCompressed();
    return L;
}

/// One-ring neighbours with their (clamped) cotangent edge weights, extracted
/// from an assembled Laplacian. Entry order is ascending neighbour index.
inline std::vector<std::vector<std::pair<int, double>>>
one_ring_weights(const Eigen::SparseMatrix<double>& laplacian) {
    std::vector<std::vector<std::pair<int, double>>> ring(
        static_cast<std::size_t>(laplacian.rows()));
    for (int col = 0; col < laplacian.outerSize(); ++col) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(laplacian, col); it; ++it) {
            if (it.row() == it.col()) continue;
            ring[static_cast<std::size_t>(it.row())].emplace_back(static_cast<int>(it.col()),
                                                                  -it.value());
        }
    }
    return ring;
}

} // namespace meshreg
