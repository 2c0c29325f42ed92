#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <map>
#include <string>
#include <vector>

#include "meshreg/errors.hpp"
#include "meshreg/laplacian.hpp"
#include "meshreg/mesh.hpp"
#include "meshreg/nearest.hpp"
#include "meshreg/rigid.hpp"

namespace meshreg {

/// Soft-constraint mesh-editing system
///   minimize ||lambda L (X - X_ref)||^2 + ||S X - targets||^2
/// where S selects `constrained_indices` rows of X.
struct SoftConstraintSystem {
    Eigen::SparseMatrix<double> laplacian; // p x p
    std::vector<int> constrained_indices;  // l distinct vertex indices
    Eigen::MatrixXd targets;               // l x 3
    double lambda = 0.1;

    void validate(int vertex_count) const {
        if (laplacian.rows() != vertex_count || laplacian.cols() != vertex_count)
            throw ArgumentError("soft constraint system: Laplacian size mismatch");
        if (constrained_indices.empty())
            throw ArgumentError("soft constraint system: needs at least one constraint");
        if (targets.rows() != static_cast<Eigen::Index>(constrained_indices.size()))
            throw ArgumentError("soft constraint system: target count mismatch");
        if (!(lambda > 0.0)) throw ArgumentError("soft constraint system: lambda must be > 0");
        if (!targets.allFinite())
            throw ArgumentError("soft constraint system: non-finite target");
        std::vector<bool> seen(static_cast<std::size_t>(vertex_count), false);
        for (int idx : constrained_indices) {
            if (idx < 0 || idx >= vertex_count)
                throw ArgumentError("soft constraint system: index out of range");
            if (seen[static_cast<std::size_t>(idx)])
                throw ArgumentError("soft constraint system: duplicate constrained index");
            seen[static_cast<std::size_t>(idx)] = true;
        }
    }
};

namespace detail {

// Every mesh component must carry at least one constraint, otherwise the
// normal matrix is singular in that component's translation mode.
inline void check_components_constrained(const TriMesh& mesh, const std::vector<int>& constrained,
                                         const char* solver_name) {
    const std::vector<int> comp = vertex_components(mesh);
    int n_comp = 0;
    for (int c : comp) n_comp = std::max(n_comp, c + 1);
    std::vector<char> has(static_cast<std::size_t>(n_comp), 0);
    for (int idx : constrained) has[static_cast<std::size_t>(comp[static_cast<std::size_t>(idx)])] = 1;
    for (int c = 0; c < n_comp; ++c) {
        if (!has[static_cast<std::size_t>(c)]) {
            int size = 0;
            for (int v : comp) size += (v == c);
            throw SolverError(std::string(solver_name) + ": mesh component " + std::to_string(c) +
                              " (" + std::to_string(size) + " vertices) has no constraint");
        }
    }
}

} // namespace detail

/// Solves the stacked system [lambda L; S] X = [lambda L X_ref; targets] in
/// the least-squares sense via the SPD normal equations.
///
/// Internally substitutes X = X_ref + D and solves for the displacement D,
/// which keeps the right-hand side small at extreme lambda; this is the same
/// minimizer. Relative residual of the normal equations is checked to 1e-8.
inline TriMesh lb_soft_solve(const TriMesh& mesh, const SoftConstraintSystem& sys) {
    const int p = mesh.vertex_count();
    sys.validate(p);
    detail::check_components_constrained(mesh, sys.constrained_indices, "lb_soft_solve");

    const Eigen::Index l = static_cast<Eigen::Index>(sys.constrained_indices.size());
    Eigen::SparseMatrix<double> S(l, p);
    {
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<std::size_t>(l));
        for (Eigen::Index r = 0; r < l; ++r)
            trip.emplace_back(static_cast<int>(r), sys.constrained_indices[static_cast<std::size_t>(r)], 1.0);
        S.setFromTriplets(trip.begin(), trip.end());
    }

    const double lam2 = sys.lambda * sys.lambda;
    Eigen::SparseMatrix<double> A =
        lam2 * (Eigen::SparseMatrix<double>(sys.laplacian.transpose()) * sys.laplacian);
    A += Eigen::SparseMatrix<double>(S.transpose() * S);
    A.makeCompressed();

    // residual of S X_ref against the targets drives the displacement
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(p, 3);
    for (Eigen::Index r = 0; r < l; ++r) {
        const int idx = sys.constrained_indices[static_cast<std::size_t>(r)];
        rhs.row(idx) += sys.targets.row(r) - mesh.vertices.row(idx);
    }

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
    if (solver.info() != Eigen::Success)
        throw SolverError("lb_soft_solve: factorization of the normal matrix failed");
    const Eigen::MatrixXd D = solver.solve(rhs);
    if (solver.info() != Eigen::Success)
        throw SolverError("lb_soft_solve: normal equation solve failed");

    const double rhs_norm = rhs.norm();
    if (rhs_norm > 0.0) {
        const double rel = (A * D - rhs).norm() / rhs_norm;
        if (!(rel < 1e-8))
            throw SolverError("lb_soft_solve: normal equation residual " + std::to_string(rel) +
                              " exceeds tolerance");
    }

    TriMesh out;
    out.vertices = mesh.vertices + D;
    out.faces = mesh.faces;
    return out;
}

/// Deformed mesh plus the as-rigid-as-possible energy after each iteration.
struct ArapResult {
    TriMesh mesh;
    std::vector<double> energy_history; // one value per local/global iteration
};

namespace detail {

inline double arap_energy(const Eigen::MatrixXd& ref, const Eigen::MatrixXd& cur,
                          const std::vector<std::vector<std::pair<int, double>>>& ring,
                          const std::vector<Eigen::Matrix3d>& rotations) {
    double energy = 0.0;
    for (std::size_t i = 0; i < ring.size(); ++i) {
        for (const auto& [j, w] : ring[i]) {
            const Eigen::Vector3d e_ref =
                (ref.row(static_cast<Eigen::Index>(i)) - ref.row(j)).transpose();
            const Eigen::Vector3d e_cur =
                (cur.row(static_cast<Eigen::Index>(i)) - cur.row(j)).transpose();
            energy += w * (e_cur - rotations[i] * e_ref).squaredNorm();
        }
    }
    return energy;
}

inline Eigen::Matrix3d fit_rotation(const Eigen::Matrix3d& cross_cov) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross_cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d flip = Eigen::Vector3d::Ones();
    if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) flip(2) = -1.0;
    return svd.matrixV() * flip.asDiagonal() * svd.matrixU().transpose();
}

} // namespace detail

/// As-rigid-as-possible deformation with hard position constraints.
///
/// Local/global alternation: per-vertex rotations from one-ring cross
/// covariances (det corrected to +1), then the cotangent-weighted Laplacian
/// system with constrained rows substituted. Edge weights are cotangent,
/// cell weights 1. Energy is non-increasing across iterations.
inline ArapResult arap_deform_detailed(const TriMesh& mesh,
                                       const std::vector<int>& constrained_indices,
                                       const Eigen::MatrixXd& targets, int iterations = 10) {
    const int p = mesh.vertex_count();
    if (constrained_indices.size() < 3)
        throw ArgumentError("arap_deform: need at least 3 constrained vertices");
    if (targets.rows() != static_cast<Eigen::Index>(constrained_indices.size()))
        throw ArgumentError("arap_deform: target count mismatch");
    if (iterations < 1) throw ArgumentError("arap_deform: iterations must be >= 1");

    std::vector<char> is_constrained(static_cast<std::size_t>(p), 0);
    for (int idx : constrained_indices) {
        if (idx < 0 || idx >= p) throw ArgumentError("arap_deform: constrained index out of range");
        if (is_constrained[static_cast<std::size_t>(idx)])
            throw ArgumentError("arap_deform: duplicate constrained index");
        is_constrained[static_cast<std::size_t>(idx)] = 1;
    }
    detail::check_components_constrained(mesh, constrained_indices, "arap_deform");

    const Eigen::SparseMatrix<double> L = cotangent_laplacian(mesh);
    const auto ring = one_ring_weights(L);

    // free-vertex numbering for the reduced system
    std::vector<int> free_id(static_cast<std::size_t>(p), -1);
    int n_free = 0;
    for (int i = 0; i < p; ++i)
        if (!is_constrained[static_cast<std::size_t>(i)]) free_id[static_cast<std::size_t>(i)] = n_free++;

    Eigen::MatrixXd cur = mesh.vertices;
    for (std::size_t r = 0; r < constrained_indices.size(); ++r)
        cur.row(constrained_indices[r]) = targets.row(static_cast<Eigen::Index>(r));

    ArapResult result;
    result.mesh.faces = mesh.faces;
    if (n_free == 0) { // fully constrained: nothing to solve
        result.mesh.vertices = cur;
        std::vector<Eigen::Matrix3d> rot(static_cast<std::size_t>(p), Eigen::Matrix3d::Identity());
        result.energy_history.assign(1, detail::arap_energy(mesh.vertices, cur, ring, rot));
        return result;
    }

    Eigen::SparseMatrix<double> Lff(n_free, n_free);
    {
        std::vector<Eigen::Triplet<double>> trip;
        for (int col = 0; col < L.outerSize(); ++col) {
            for (Eigen::SparseMatrix<double>::InnerIterator it(L, col); it; ++it) {
                const int fi = free_id[static_cast<std::size_t>(it.row())];
                const int fj = free_id[static_cast<std::size_t>(it.col())];
                if (fi >= 0 && fj >= 0) trip.emplace_back(fi, fj, it.value());
            }
        }
        Lff.setFromTriplets(trip.begin(), trip.end());
        Lff.makeCompressed();
    }
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(Lff);
    if (solver.info() != Eigen::Success)
        throw SolverError("arap_deform: factorization of the reduced Laplacian failed");

    std::vector<Eigen::Matrix3d> rotations(static_cast<std::size_t>(p),
                                           Eigen::Matrix3d::Identity());
    for (int it = 0; it < iterations; ++it) {
        // local step: best-fit rotation per one-ring
        for (int i = 0; i < p; ++i) {
            Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
            for (const auto& [j, w] : ring[static_cast<std::size_t>(i)]) {
                const Eigen::Vector3d e_ref = (mesh.vertices.row(i) - mesh.vertices.row(j)).transpose();
                const Eigen::Vector3d e_cur = (cur.row(i) - cur.row(j)).transpose();
                cov += w * e_ref * e_cur.transpose();
            }
            rotations[static_cast<std::size_t>(i)] = detail::fit_rotation(cov);
        }

        // global step: solve the reduced Laplacian system
        Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n_free, 3);
        for (int i = 0; i < p; ++i) {
            const int fi = free_id[static_cast<std::size_t>(i)];
            if (fi < 0) continue;
            Eigen::RowVector3d bi = Eigen::RowVector3d::Zero();
            for (const auto& [j, w] : ring[static_cast<std::size_t>(i)]) {
                const Eigen::Vector3d e_ref = (mesh.vertices.row(i) - mesh.vertices.row(j)).transpose();
                bi += (0.5 * w * ((rotations[static_cast<std::size_t>(i)] +
                                   rotations[static_cast<std::size_t>(j)]) *
                                  e_ref))
                          .transpose();
                if (free_id[static_cast<std::size_t>(j)] < 0) bi += w * cur.row(j);
            }
            b.row(fi) = bi;
        }
        const Eigen::MatrixXd sol = solver.solve(b);
        if (solver.info() != Eigen::Success) throw SolverError("arap_deform: global step solve failed");
        for (int i = 0; i < p; ++i)
            if (free_id[static_cast<std::size_t>(i)] >= 0) cur.row(i) = sol.row(free_id[static_cast<std::size_t>(i)]);

        result.energy_history.push_back(detail::arap_energy(mesh.vertices, cur, ring, rotations));
    }

    result.mesh.vertices = cur;
    return result;
}

inline TriMesh arap_deform(const TriMesh& mesh, const std::vector<int>& constrained_indices,
                           const Eigen::MatrixXd& targets, int iterations = 10) {
    return arap_deform_detailed(mesh, constrained_indices, targets, iterations).mesh;
}

/// Landmark-driven template adaptation via Laplace-Beltrami mesh editing.
///
/// Landmarks are grouped by part label; each part's template landmarks are
/// rigidly (no scale) aligned onto the matching scan landmarks, and the
/// transformed positions become soft constraints for lb_soft_solve.
/// Unlabelled landmarks form the "other" part. Every part needs >= 3
/// landmarks.
inline TriMesh adapt_template_lb(const TriMesh& tmpl, const LandmarkSpec& lm,
                                 double lambda = 0.1) {
    lm.validate(tmpl.vertex_count());
    if (lm.count() < 3) throw ArgumentError("adapt_template_lb: need at least 3 landmarks");
    if (!(lambda > 0.0)) throw ArgumentError("adapt_template_lb: lambda must be > 0");

    std::vector<std::string> labels = lm.part_labels;
    if (labels.empty()) labels.assign(static_cast<std::size_t>(lm.count()), "other");

    std::map<std::string, std::vector<int>> groups; // label -> landmark ordinals
    for (int i = 0; i < lm.count(); ++i) groups[labels[static_cast<std::size_t>(i)]].push_back(i);

    const Eigen::MatrixXd tmpl_pts = lm.template_points(tmpl);
    Eigen::MatrixXd targets(lm.count(), 3);
    for (const auto& [label, ordinals] : groups) {
        if (ordinals.size() < 3)
            throw ArgumentError("adapt_template_lb: part '" + label + "' has " +
                                std::to_string(ordinals.size()) + " landmarks, need >= 3");
        Eigen::MatrixXd src(static_cast<Eigen::Index>(ordinals.size()), 3);
        Eigen::MatrixXd dst(static_cast<Eigen::Index>(ordinals.size()), 3);
        for (std::size_t r = 0; r < ordinals.size(); ++r) {
            src.row(static_cast<Eigen::Index>(r)) = tmpl_pts.row(ordinals[r]);
            dst.row(static_cast<Eigen::Index>(r)) = lm.scan_points.row(ordinals[r]);
        }
        const SimilarityTransform T = procrustes(src, dst, /*with_scale=*/false);
        for (std::size_t r = 0; r < ordinals.size(); ++r)
            targets.row(ordinals[r]) = T.apply(Eigen::RowVector3d(src.row(static_cast<Eigen::Index>(r))));
    }

    SoftConstraintSystem sys;
    sys.laplacian = cotangent_laplacian(tmpl);
    sys.constrained_indices = lm.template_indices;
    sys.targets = targets;
    sys.lambda = lambda;
    return lb_soft_solve(tmpl, sys);
}

/// Laplace-Beltrami regularised projection: snaps an already-close deformed
/// template onto the scan. Constraints are the mutual nearest neighbour
/// pairs; targets are the matched scan vertices.
inline TriMesh lbrp_project(const TriMesh& deformed, const TriMesh& scan, double lambda = 0.1) {
    if (!(lambda > 0.0)) throw ArgumentError("lbrp_project: lambda must be > 0");
    const Correspondences mutual =
        mutual_nearest_neighbors(deformed.vertices, scan.vertices);
    if (mutual.empty())
        throw SolverError("lbrp_project: no mutual nearest neighbours (meshes too far apart)");

    SoftConstraintSystem sys;
    sys.laplacian = cotangent_laplacian(deformed);
    sys.lambda = lambda;
    sys.constrained_indices.reserve(mutual.size());
    sys.targets.resize(static_cast<Eigen::Index>(mutual.size()), 3);
    for (std::size_t r = 0; r < mutual.pairs.size(); ++r) {
        sys.constrained_indices.push_back(mutual.pairs[r].src);
        sys.targets.row(static_cast<Eigen::Index>(r)) = scan.vertices.row(mutual.pairs[r].dst);
    }
    return lb_soft_solve(deformed, sys);
}

} // namespace meshreg
