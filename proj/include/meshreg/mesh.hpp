#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "meshreg/errors.hpp"

namespace meshreg {

/// Triangle mesh: vertex positions (p x 3) and 0-based face indices (m x 3).
/// The template, the scan, and every deformed shape in the pipeline are
/// instances of this type. Values are immutable by convention once built;
/// operations return new meshes.
struct TriMesh {
    Eigen::MatrixXd vertices; // p x 3
    Eigen::MatrixXi faces;    // m x 3, indices into vertices

    int vertex_count() const { return static_cast<int>(vertices.rows()); }
    int face_count() const { return static_cast<int>(faces.rows()); }

    /// Diagonal length of the axis-aligned bounding box. Zero for empty meshes.
    double bbox_diagonal() const {
        if (vertices.rows() == 0) return 0.0;
        Eigen::RowVector3d lo = vertices.colwise().minCoeff();
        Eigen::RowVector3d hi = vertices.colwise().maxCoeff();
        return (hi - lo).norm();
    }

    /// Checks structural invariants: faces in range, three distinct indices
    /// per face, finite vertex coordinates. Throws DataError on violation.
    void validate() const {
        const int p = vertex_count();
        if (vertices.cols() != 3)
            throw DataError("mesh vertices must have 3 columns");
        if (faces.rows() > 0 && faces.cols() != 3)
            throw DataError("mesh faces must have 3 columns");
        if (!vertices.allFinite())
            throw DataError("mesh has non-finite vertex coordinates");
        for (int f = 0; f < faces.rows(); ++f) {
            const int a = faces(f, 0), b = faces(f, 1), c = faces(f, 2);
            if (a < 0 || a >= p || b < 0 || b >= p || c < 0 || c >= p)
                throw DataError("face " + std::to_string(f) +
                                " references vertex out of range");
            if (a == b || b == c || a == c)
                throw DataError("face " + std::to_string(f) +
                                " is degenerate (repeated vertex index)");
        }
    }
};

/// One correspondence pair: src vertex index, dst vertex index, weight in [0,1].
struct CorrPair {
    int src = 0;
    int dst = 0;
    double weight = 1.0;
};

/// Ordered list of (src, dst, weight) correspondences. src indices are unique
/// within one set; ordering is ascending in src for determinism.
struct Correspondences {
    std::vector<CorrPair> pairs;

    std::size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }
};

/// Undirected edge list of a triangle mesh, each edge once with i < j,
/// sorted lexicographically.
inline std::vector<std::pair<int, int>> mesh_edges(const TriMesh& mesh) {
    std::vector<std::pair<int, int>> edges;
    edges.reserve(static_cast<std::size_t>(mesh.faces.rows()) * 3);
    for (int f = 0; f < mesh.faces.rows(); ++f) {
        for (int k = 0; k < 3; ++k) {
            int i = mesh.faces(f, k);
            int j = mesh.faces(f, (k + 1) % 3);
            if (i > j) std::swap(i, j);
            edges.emplace_back(i, j);
        }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

/// Connected-component label per vertex (labels are 0..n_components-1 in
/// order of first appearance). Isolated vertices get their own component.
inline std::vector<int> vertex_components(const TriMesh& mesh) {
    const int p = mesh.vertex_count();
    std::vector<int> parent(p);
    for (int i = 0; i < p; ++i) parent[i] = i;
    auto find = [&](int x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (int f = 0; f < mesh.faces.rows(); ++f) {
        int a = find(mesh.faces(f, 0));
        int b = find(mesh.faces(f, 1));
        int c = find(mesh.faces(f, 2));
        if (b != a) parent[b] = a;
        if (c != find(a)) parent[find(c)] = find(a);
    }
    std::vector<int> label(p, -1);
    int next = 0;
    for (int i = 0; i < p; ++i) {
        int r = find(i);
        if (label[r] < 0) label[r] = next++;
        label[i] = label[r];
    }
    return label;
}

} // namespace meshreg
