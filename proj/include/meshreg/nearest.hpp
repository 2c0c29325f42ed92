#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "meshreg/errors.hpp"
#include "meshreg/mesh.hpp"

namespace meshreg {

/// Exact 3D kd-tree over a fixed point set. Queries return the true Euclidean
/// nearest neighbour; distance ties break to the lowest point index.
class KdTree3 {
public:
    explicit KdTree3(const Eigen::MatrixXd& points) : pts_(points) {
        if (pts_.rows() == 0) throw ArgumentError("kd-tree reference set is empty");
        if (!pts_.allFinite()) throw ArgumentError("kd-tree reference set has non-finite points");
        order_.resize(static_cast<std::size_t>(pts_.rows()));
        std::iota(order_.begin(), order_.end(), 0);
        nodes_.reserve(order_.size() / kLeafSize * 2 + 2);
        root_ = build(0, static_cast<int>(order_.size()));
    }

    /// Nearest reference index and squared distance for one query point.
    std::pair<int, double> nearest(const Eigen::RowVector3d& q) const {
        int best_idx = -1;
        double best_d2 = std::numeric_limits<double>::infinity();
        search(root_, q, best_idx, best_d2);
        return {best_idx, best_d2};
    }

private:
    static constexpr int kLeafSize = 8;

    struct Node {
        int axis = -1;      // -1 marks a leaf
        double split = 0.0; // splitting coordinate
        int left = -1, right = -1;
        int begin = 0, end = 0; // leaf range into order_
    };

    int build(int begin, int end) {
        Node node;
        if (end - begin <= kLeafSize) {
            node.begin = begin;
            node.end = end;
            // ascending index inside leaves keeps the tie rule cheap
            std::sort(order_.begin() + begin, order_.begin() + end);
            nodes_.push_back(node);
            return static_cast<int>(nodes_.size()) - 1;
        }
        Eigen::RowVector3d lo = pts_.row(order_[static_cast<std::size_t>(begin)]);
        Eigen::RowVector3d hi = lo;
        for (int k = begin + 1; k < end; ++k) {
            lo = lo.cwiseMin(pts_.row(order_[static_cast<std::size_t>(k)]));
            hi = hi.cwiseMax(pts_.row(order_[static_cast<std::size_t>(k)]));
        }
        int axis = 0;
        (hi - lo).maxCoeff(&axis);
        const int mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](int a, int b) {
                             const double ca = pts_(a, axis), cb = pts_(b, axis);
                             return ca < cb || (ca == cb && a < b);
                         });
        node.axis = axis;
        node.split = pts_(order_[static_cast<std::size_t>(mid)], axis);
        const int self = static_cast<int>(nodes_.size());
        nodes_.push_back(node);
        const int left = build(begin, mid);
        const int right = build(mid, end);
        nodes_[static_cast<std::size_t>(self)].left = left;
        nodes_[static_cast<std::size_t>(self)].right = right;
        return self;
    }

    void scan_leaf(const Node& node, const Eigen::RowVector3d& q, int& best_idx,
                   double& best_d2) const {
        for (int k = node.begin; k < node.end; ++k) {
            const int idx = order_[static_cast<std::size_t>(k)];
            const double d2 = (pts_.row(idx) - q).squaredNorm();
            if (d2 < best_d2 || (d2 == best_d2 && idx < best_idx)) {
                best_d2 = d2;
                best_idx = idx;
            }
        }
    }

    void search(int node_id, const Eigen::RowVector3d& q, int& best_idx, double& best_d2) const {
        const Node& node = nodes_[static_cast<std::size_t>(node_id)];
        if (node.axis < 0) {
            scan_leaf(node, q, best_idx, best_d2);
            return;
        }
        const double delta = q(node.axis) - node.split;
        const int near = delta < 0.0 ? node.left : node.right;
        const int far = delta < 0.0 ? node.right : node.left;
        search(near, q, best_idx, best_d2);
        // an equal plane distance can still hide an equal-distance lower index
        if (delta * delta <= best_d2) search(far, q, best_idx, best_d2);
    }

    const Eigen::MatrixXd pts_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

struct NearestResult {
    Eigen::VectorXi indices;   // per query: nearest reference index
    Eigen::VectorXd distances; // per query: Euclidean distance
};

/// Exact nearest neighbour in `reference` for every row of `query`.
/// Ties break to the lowest reference index.
inline NearestResult nearest_neighbors(const Eigen::MatrixXd& query,
                                       const Eigen::MatrixXd& reference) {
    if (query.rows() == 0) throw ArgumentError("nearest_neighbors: empty query set");
    if (reference.rows() == 0) throw ArgumentError("nearest_neighbors: empty reference set");
    if (!query.allFinite()) throw ArgumentError("nearest_neighbors: non-finite query point");

    KdTree3 tree(reference);
    NearestResult out;
    out.indices.resize(query.rows());
    out.distances.resize(query.rows());
    for (Eigen::Index i = 0; i < query.rows(); ++i) {
        auto [idx, d2] = tree.nearest(query.row(i));
        out.indices(i) = idx;
        out.distances(i) = std::sqrt(d2);
    }
    return out;
}

/// Pairs (i, j) where b_j is the nearest neighbour of a_i and, mutually, a_i
/// is the nearest neighbour of b_j. Weight 1.0. Output ascending in src index.
inline Correspondences mutual_nearest_neighbors(const Eigen::MatrixXd& a,
                                                const Eigen::MatrixXd& b) {
    const NearestResult a_to_b = nearest_neighbors(a, b);
    const NearestResult b_to_a = nearest_neighbors(b, a);
    Correspondences corr;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const int j = a_to_b.indices(i);
        if (b_to_a.indices(j) == static_cast<int>(i))
            corr.pairs.push_back({static_cast<int>(i), j, 1.0});
    }
    return corr;
}

struct VertexDistanceResult {
    Eigen::VectorXd distances; // per morphed vertex: distance to nearest scan vertex
    double mean = 0.0;
};

/// Per-vertex nearest point distance from `morphed` to `scan`, plus the mean.
inline VertexDistanceResult per_vertex_nearest_distance(const TriMesh& morphed,
                                                        const TriMesh& scan) {
    VertexDistanceResult out;
    out.distances = nearest_neighbors(morphed.vertices, scan.vertices).distances;
    out.mean = out.distances.size() > 0 ? out.distances.mean() : 0.0;
    return out;
}

/// Deterministic farthest-point sampling: starts at index 0, greedily adds the
/// point with maximal distance to the selected set (ties to lowest index).
/// Returns all indices in original order when count >= point count.
inline std::vector<int> farthest_point_sampling(const Eigen::MatrixXd& points, int count) {
    const int n = static_cast<int>(points.rows());
    if (n == 0) throw ArgumentError("farthest_point_sampling: empty point set");
    if (count <= 0) throw ArgumentError("farthest_point_sampling: non-positive sample count");
    std::vector<int> picked;
    if (count >= n) {
        picked.resize(static_cast<std::size_t>(n));
        std::iota(picked.begin(), picked.end(), 0);
        return picked;
    }
    picked.reserve(static_cast<std::size_t>(count));
    picked.push_back(0);
    Eigen::VectorXd d2 = (points.rowwise() - points.row(0)).rowwise().squaredNorm();
    for (int s = 1; s < count; ++s) {
        int best = 0;
        double best_d2 = -1.0;
        for (int i = 0; i < n; ++i) {
            if (d2(i) > best_d2) {
                best_d2 = d2(i);
                best = i;
            }
        }
        picked.push_back(best);
        d2 = d2.cwiseMin((points.rowwise() - points.row(best)).rowwise().squaredNorm());
    }
    return picked;
}

} // namespace meshreg
