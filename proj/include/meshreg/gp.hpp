#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "meshreg/errors.hpp"
#include "meshreg/mesh.hpp"
#include "meshreg/rigid.hpp"

namespace meshreg {

/// Sum-of-Gaussians kernel k(x,x') = sum_j a_j exp(-|x-x'|^2 / l_j^2), acting
/// identically on each coordinate, plus observation noise variance.
struct GpKernelConfig {
    struct Scale {
        double amplitude = 1.0;
        double length_scale = 1.0;
    };
    std::vector<Scale> scales;
    double noise_variance = 0.0;

    void validate() const {
        if (scales.empty()) throw ArgumentError("gp kernel: needs at least one scale");
        for (const auto& s : scales)
            if (!(s.amplitude > 0.0) || !(s.length_scale > 0.0))
                throw ArgumentError("gp kernel: amplitudes and length scales must be > 0");
        if (noise_variance < 0.0) throw ArgumentError("gp kernel: noise variance must be >= 0");
    }

    double total_amplitude() const {
        double a = 0.0;
        for (const auto& s : scales) a += s.amplitude;
        return a;
    }
};

/// Default kernel: a broad and a narrow Gaussian tied to the mesh size
/// (length scales 0.25 and 0.05 of the bounding-box diagonal), noise
/// 1e-4 of the total amplitude.
inline GpKernelConfig default_gp_config(double bbox_diagonal) {
    if (!(bbox_diagonal > 0.0)) throw ArgumentError("default_gp_config: bbox diagonal must be > 0");
    GpKernelConfig cfg;
    cfg.scales.push_back({1.0, 0.25 * bbox_diagonal});
    cfg.scales.push_back({0.25, 0.05 * bbox_diagonal});
    cfg.noise_variance = 1e-4 * cfg.total_amplitude();
    return cfg;
}

/// Per-vertex displacement field over a reference mesh.
struct DeformationField {
    Eigen::MatrixXd displacements; // p x 3
};

/// Kernel Gram block: K[i][j] = sum_s a_s exp(-|a_i - b_j|^2 / l_s^2).
inline Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& points_a,
                                     const Eigen::MatrixXd& points_b,
                                     const GpKernelConfig& cfg) {
    cfg.validate();
    if (!points_a.allFinite() || !points_b.allFinite())
        throw ArgumentError("kernel_matrix: non-finite input points");
    Eigen::MatrixXd d2 = (-2.0 * points_a * points_b.transpose());
    d2.colwise() += points_a.rowwise().squaredNorm();
    d2.rowwise() += points_b.rowwise().squaredNorm().transpose();
    d2 = d2.cwiseMax(0.0); // guard rounding on coincident points
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(points_a.rows(), points_b.rows());
    for (const auto& s : cfg.scales)
        K += s.amplitude * (-d2 / (s.length_scale * s.length_scale)).array().exp().matrix();
    return K;
}

/// GP posterior-mean deformation field from landmark displacements.
///
/// Observations are d = scan landmark points - template landmark positions;
/// the field at every vertex is u = K_pk (K_kk + noise I)^-1 d, one
/// coordinate at a time (zero-mean prior).
inline DeformationField gp_posterior_mean(const TriMesh& tmpl, const LandmarkSpec& lm,
                                          const GpKernelConfig& cfg) {
    cfg.validate();
    lm.validate(tmpl.vertex_count());
    if (lm.count() < 1) throw ArgumentError("gp_posterior_mean: need at least one landmark");

    const Eigen::MatrixXd lm_pts = lm.template_points(tmpl);
    const Eigen::MatrixXd d = lm.scan_points - lm_pts;

    Eigen::MatrixXd Kkk = kernel_matrix(lm_pts, lm_pts, cfg);
    Kkk.diagonal().array() += cfg.noise_variance;

    const Eigen::LDLT<Eigen::MatrixXd> ldlt(Kkk);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw SolverError("gp_posterior_mean: landmark kernel matrix is not positive definite; "
                          "increase noise_variance");
    Eigen::MatrixXd alpha = ldlt.solve(d);
    alpha += ldlt.solve(d - Kkk * alpha); // one refinement pass
    const double rel = (Kkk * alpha - d).norm() / std::max(d.norm(), 1e-300);
    if (d.norm() > 0.0 && !(rel < 1e-6))
        throw SolverError("gp_posterior_mean: kernel system ill-conditioned (residual " +
                          std::to_string(rel) + "); increase noise_variance");

    DeformationField field;
    field.displacements = kernel_matrix(tmpl.vertices, lm_pts, cfg) * alpha;
    return field;
}

/// Adaptive template via the GP posterior mean: template + field.
inline TriMesh adapt_template_gp(const TriMesh& tmpl, const LandmarkSpec& lm,
                                 const GpKernelConfig& cfg) {
    const DeformationField field = gp_posterior_mean(tmpl, lm, cfg);
    TriMesh out;
    out.vertices = tmpl.vertices + field.displacements;
    out.faces = tmpl.faces;
    return out;
}

} // namespace meshreg
