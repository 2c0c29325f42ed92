#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "meshreg/errors.hpp"
#include "meshreg/mesh.hpp"

namespace meshreg {

inline constexpr double kPi = 3.14159265358979323846;

/// Tuning knobs for coherent point drift registration.
struct CpdConfig {
    double outlier_weight = 0.1; // w in [0,1)
    double beta = 2.0;           // Gaussian motion-kernel width (non-rigid)
    double lambda = 3.0;         // motion regularisation weight (non-rigid)
    int max_iter = 200;          // 200 affine / 300 non-rigid defaults
    double tol = 1e-8;           // relative objective-change stop threshold
    double prior_strength = 10.0; // gamma >= 1, applied when priors are given

    void validate() const {
        if (outlier_weight < 0.0 || outlier_weight >= 1.0)
            throw ArgumentError("cpd: outlier_weight must be in [0,1)");
        if (!(beta > 0.0)) throw ArgumentError("cpd: beta must be > 0");
        if (!(lambda > 0.0)) throw ArgumentError("cpd: lambda must be > 0");
        if (max_iter < 1) throw ArgumentError("cpd: max_iter must be >= 1");
        if (!(tol >= 0.0)) throw ArgumentError("cpd: tol must be >= 0");
        if (prior_strength < 1.0) throw ArgumentError("cpd: prior_strength must be >= 1");
    }

    static CpdConfig affine_defaults() { return CpdConfig{}; }
    static CpdConfig nonrigid_defaults() {
        CpdConfig cfg;
        cfg.max_iter = 300;
        return cfg;
    }
};

/// One EM iteration record. `objective` is the negative log-likelihood plus,
/// for the non-rigid variant, the motion regularisation penalty.
struct CpdIterationRecord {
    int iter = 0;
    double sigma2 = 0.0;
    double objective = 0.0;
    int corr_changed = 0;
};

/// E-step output: responsibilities and their moments. `P` has one column per
/// target point; column sums plus outlier mass equal one.
struct CpdEStep {
    Eigen::MatrixXd P;         // M x N responsibilities (filled when requested)
    Eigen::MatrixXd PX;        // M x 3, P * X
    Eigen::VectorXd P1;        // M, row sums of P
    Eigen::VectorXd Pt1;       // N, column sums of P
    Eigen::VectorXd outlier;   // N, outlier mass per target point
    std::vector<int> hard_match; // N, argmax_m responsibility (ties: lowest m)
    double Np = 0.0;           // total responsibility mass
    double nll = 0.0;          // negative log-likelihood of the mixture
    bool degenerate = false;   // sigma2 below the resolvable floor
};

namespace detail {

// squared-distance matrix D(m,n) = |t_m - x_n|^2, clamped at zero
inline Eigen::MatrixXd pairwise_sq_dist(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd d2 = -2.0 * a * b.transpose();
    d2.colwise() += a.rowwise().squaredNorm();
    d2.rowwise() += b.rowwise().squaredNorm().transpose();
    return d2.cwiseMax(0.0);
}

inline double union_bbox_diag2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::RowVector3d lo = a.colwise().minCoeff().cwiseMin(b.colwise().minCoeff());
    Eigen::RowVector3d hi = a.colwise().maxCoeff().cwiseMax(b.colwise().maxCoeff());
    return (hi - lo).squaredNorm();
}

// per-column prior factors: pi_mn = 1 + weight * (gamma - 1), renormalized so
// each column sums to M
struct PriorTable {
    std::vector<std::vector<std::pair<int, double>>> by_column; // n -> (m, pi raw)
    bool active = false;
};

inline PriorTable build_prior_table(const std::optional<Correspondences>& priors, double gamma,
                                    Eigen::Index m_count, Eigen::Index n_count) {
    PriorTable table;
    table.by_column.resize(static_cast<std::size_t>(n_count));
    if (!priors || priors->empty() || gamma == 1.0) return table;
    for (const CorrPair& pair : priors->pairs) {
        if (pair.src < 0 || pair.src >= m_count || pair.dst < 0 || pair.dst >= n_count)
            throw ArgumentError("cpd: prior correspondence index out of range");
        if (pair.weight < 0.0 || !std::isfinite(pair.weight))
            throw ArgumentError("cpd: prior correspondence weight must be finite and >= 0");
        const double pi = 1.0 + pair.weight * (gamma - 1.0);
        if (pi != 1.0) {
            table.by_column[static_cast<std::size_t>(pair.dst)].emplace_back(pair.src, pi);
            table.active = true;
        }
    }
    return table;
}

} // namespace detail

/// CPD E-step: posterior responsibilities of template (GMM centroid) points
/// for every target point, with the uniform-outlier component.
///
/// p_mn is proportional to pi_mn exp(-|x_n - t_m|^2 / (2 sigma2)), normalized
/// per target point n against the outlier term (2 pi sigma2)^{3/2} w/(1-w) M/N.
/// Membership priors pi_mn equal prior_strength for prior pairs and 1
/// elsewhere, renormalized per column to sum M.
///
/// `fill_P` skips materializing the dense M x N matrix when false (the
/// moments are always computed). Sets `degenerate` instead of throwing when
/// sigma2 is below 1e-12 of the squared union bounding-box diagonal.
inline CpdEStep cpd_estep(const Eigen::MatrixXd& template_pts, const Eigen::MatrixXd& target_pts,
                          double sigma2, double outlier_weight,
                          const std::optional<Correspondences>& priors = std::nullopt,
                          double prior_strength = 10.0, bool fill_P = true) {
    const Eigen::Index M = template_pts.rows();
    const Eigen::Index N = target_pts.rows();
    if (M == 0 || N == 0) throw ArgumentError("cpd_estep: empty point set");
    if (outlier_weight < 0.0 || outlier_weight >= 1.0)
        throw ArgumentError("cpd_estep: outlier_weight must be in [0,1)");
    if (!(sigma2 > 0.0)) throw ArgumentError("cpd_estep: sigma2 must be > 0");

    CpdEStep out;
    out.degenerate = sigma2 < 1e-12 * detail::union_bbox_diag2(template_pts, target_pts);

    const detail::PriorTable prior_table =
        detail::build_prior_table(priors, prior_strength, M, N);

    const double inv2s = 1.0 / (2.0 * sigma2);
    // log of the uniform-outlier constant c = (2 pi sigma2)^{3/2} w/(1-w) M/N
    const bool has_outlier = outlier_weight > 0.0;
    const double log_c = has_outlier
                             ? 1.5 * std::log(2.0 * kPi * sigma2) +
                                   std::log(outlier_weight / (1.0 - outlier_weight)) +
                                   std::log(static_cast<double>(M) / static_cast<double>(N))
                             : -std::numeric_limits<double>::infinity();

    Eigen::MatrixXd D = detail::pairwise_sq_dist(template_pts, target_pts);
    if (fill_P) out.P.resize(M, N);
    out.PX = Eigen::MatrixXd::Zero(M, 3);
    out.P1 = Eigen::VectorXd::Zero(M);
    out.Pt1.resize(N);
    out.outlier.resize(N);
    out.hard_match.assign(static_cast<std::size_t>(N), 0);
    out.Np = 0.0;
    out.nll = 0.0;

    Eigen::VectorXd pi = Eigen::VectorXd::Ones(M);
    Eigen::VectorXd col(M);
    for (Eigen::Index n = 0; n < N; ++n) {
        const auto& col_priors = prior_table.by_column[static_cast<std::size_t>(n)];
        double pi_sum = static_cast<double>(M);
        for (const auto& [m, p] : col_priors) {
            pi_sum += p - pi(m);
            pi(m) = p;
        }
        const double pi_scale = static_cast<double>(M) / pi_sum;

        const double dmin = D.col(n).minCoeff();
        col = (((dmin - D.col(n).array()) * inv2s).exp() * pi.array() * pi_scale).matrix();
        const double s = col.sum();

        // outlier constant shifted by the same exp(dmin / 2 sigma2) factor
        double c_shift = 0.0;
        if (has_outlier) {
            const double log_shift = log_c + dmin * inv2s;
            c_shift = log_shift > 700.0 ? std::numeric_limits<double>::infinity()
                                        : std::exp(log_shift);
        }

        double denom = s + c_shift;
        if (std::isinf(c_shift) || denom <= 0.0) {
            col.setZero();
            out.outlier(n) = 1.0;
            out.Pt1(n) = 0.0;
        } else {
            col /= denom;
            out.outlier(n) = c_shift / denom;
            out.Pt1(n) = col.sum();
        }

        // mixture log-density at x_n (shared dmin shift removed)
        const double log_mix =
            std::log((1.0 - outlier_weight) / static_cast<double>(M)) -
            1.5 * std::log(2.0 * kPi * sigma2) - dmin * inv2s + std::log(std::max(s, 1e-300));
        if (has_outlier) {
            const double log_out = std::log(outlier_weight / static_cast<double>(N));
            const double hi = std::max(log_mix, log_out);
            out.nll -= hi + std::log(std::exp(log_mix - hi) + std::exp(log_out - hi));
        } else {
            out.nll -= log_mix;
        }

        int best = 0;
        col.maxCoeff(&best);
        out.hard_match[static_cast<std::size_t>(n)] = best;

        out.P1 += col;
        out.PX += col * target_pts.row(n);
        if (fill_P) out.P.col(n) = col;

        for (const auto& [m, p] : col_priors) pi(m) = 1.0; // restore
    }
    out.Np = out.P1.sum();
    return out;
}

/// Closed-form CPD affine M-step. Returns the affine map (B, t), the updated
/// sigma2, and the transformed template.
struct CpdAffineMStep {
    Eigen::Matrix3d B = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
    double sigma2 = 0.0;
    Eigen::MatrixXd transformed; // M x 3
};

inline CpdAffineMStep cpd_mstep_affine(const Eigen::MatrixXd& template_pts,
                                       const Eigen::MatrixXd& target_pts, const CpdEStep& estep) {
    if (!(estep.Np > 0.0)) throw SolverError("cpd_mstep_affine: zero responsibility mass");
    const Eigen::Vector3d mu_x = target_pts.transpose() * estep.Pt1 / estep.Np;
    const Eigen::Vector3d mu_y = template_pts.transpose() * estep.P1 / estep.Np;

    // A1 = Xhat' P' Yhat, A2 = Yhat' d(P1) Yhat
    const Eigen::Matrix3d A1 =
        estep.PX.transpose() * template_pts - estep.Np * mu_x * mu_y.transpose();
    const Eigen::Matrix3d A2 =
        template_pts.transpose() * estep.P1.asDiagonal() * template_pts -
        estep.Np * mu_y * mu_y.transpose();

    Eigen::FullPivLU<Eigen::Matrix3d> lu(A2);
    lu.setThreshold(1e-12);
    if (!lu.isInvertible())
        throw SolverError("cpd_mstep_affine: degenerate geometry (weighted template covariance "
                          "is rank-deficient)");

    CpdAffineMStep out;
    out.B = lu.solve(A1.transpose()).transpose(); // B = A1 A2^{-1}, A2 symmetric
    out.t = mu_x - out.B * mu_y;

    const double x_term = (target_pts.array().square().matrix().transpose() * estep.Pt1).sum() -
                          estep.Np * mu_x.squaredNorm();
    out.sigma2 = (x_term - (A1 * out.B.transpose()).trace()) / (3.0 * estep.Np);
    out.sigma2 = std::max(out.sigma2, std::numeric_limits<double>::min());

    out.transformed = template_pts * out.B.transpose();
    out.transformed.rowwise() += out.t.transpose();
    return out;
}

/// CPD non-rigid M-step: solves (G + lambda sigma2 d(P1)^{-1}) W =
/// d(P1)^{-1} P X - Y for the motion coefficients, then updates sigma2 from
/// the new residuals.
struct CpdNonrigidMStep {
    Eigen::MatrixXd W; // M x 3
    double sigma2 = 0.0;
    Eigen::MatrixXd transformed; // Y + G W
    bool ridge_applied = false;
};

inline CpdNonrigidMStep cpd_mstep_nonrigid(const Eigen::MatrixXd& template_pts,
                                           const Eigen::MatrixXd& target_pts,
                                           const CpdEStep& estep, const Eigen::MatrixXd& G,
                                           double lambda, double sigma2) {
    const Eigen::Index M = template_pts.rows();
    if (G.rows() != M || G.cols() != M) throw ArgumentError("cpd_mstep_nonrigid: G size mismatch");
    if (!(estep.Np > 0.0)) throw SolverError("cpd_mstep_nonrigid: zero responsibility mass");

    // masses are floored so starved template points get a huge (finite)
    // diagonal and hence ~zero motion
    const double mass_floor = 1e-15 * estep.Np;
    Eigen::VectorXd inv_mass(M);
    for (Eigen::Index m = 0; m < M; ++m) inv_mass(m) = 1.0 / std::max(estep.P1(m), mass_floor);

    Eigen::MatrixXd A = G;
    A.diagonal() += lambda * sigma2 * inv_mass;
    Eigen::MatrixXd rhs = inv_mass.asDiagonal() * estep.PX - template_pts;

    CpdNonrigidMStep out;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    bool ok = ldlt.info() == Eigen::Success;
    if (ok) {
        out.W = ldlt.solve(rhs);
        const double scale = std::max(rhs.norm(), 1e-300);
        ok = (A * out.W - rhs).norm() / scale < 1e-6;
    }
    if (!ok) {
        out.ridge_applied = true;
        A.diagonal().array() += 1e-9 * (A.trace() / static_cast<double>(M));
        Eigen::LDLT<Eigen::MatrixXd> ridged(A);
        if (ridged.info() != Eigen::Success)
            throw SolverError("cpd_mstep_nonrigid: motion system factorization failed");
        out.W = ridged.solve(rhs);
    }

    out.transformed = template_pts + G * out.W;
    const double x_term =
        (target_pts.array().square().matrix().transpose() * estep.Pt1).sum();
    const double cross = (estep.PX.array() * out.transformed.array()).sum();
    const double t_term =
        (out.transformed.array().square().matrix().transpose() * estep.P1).sum();
    out.sigma2 = (x_term - 2.0 * cross + t_term) / (3.0 * estep.Np);
    out.sigma2 = std::max(out.sigma2, std::numeric_limits<double>::min());
    return out;
}

/// Gaussian motion kernel G_ij = exp(-|y_i - y_j|^2 / (2 beta^2)).
inline Eigen::MatrixXd cpd_motion_kernel(const Eigen::MatrixXd& points, double beta) {
    Eigen::MatrixXd G = detail::pairwise_sq_dist(points, points);
    G = (-G / (2.0 * beta * beta)).array().exp().matrix();
    return G;
}

namespace detail {

struct Normalization {
    Eigen::RowVector3d mean = Eigen::RowVector3d::Zero();
    double scale = 1.0;
};

inline Normalization normalize_cloud(Eigen::MatrixXd& pts) {
    Normalization n;
    n.mean = pts.colwise().mean();
    pts.rowwise() -= n.mean;
    n.scale = std::sqrt(pts.array().square().sum() / static_cast<double>(pts.rows()));
    if (!(n.scale > 0.0)) n.scale = 1.0;
    pts /= n.scale;
    return n;
}

inline double initial_sigma2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    // (1 / 3MN) sum_mn |a_m - b_n|^2 via first and second moments
    const double m = static_cast<double>(a.rows());
    const double n = static_cast<double>(b.rows());
    const double sum = n * a.array().square().sum() + m * b.array().square().sum() -
                       2.0 * (a.colwise().sum() * b.colwise().sum().transpose()).value();
    return std::max(sum / (3.0 * m * n), std::numeric_limits<double>::min());
}

inline int count_changed(const std::vector<int>& now, const std::vector<int>& before) {
    if (before.empty()) return static_cast<int>(now.size());
    int changed = 0;
    for (std::size_t i = 0; i < now.size(); ++i) changed += (now[i] != before[i]);
    return changed;
}

} // namespace detail

/// Result of a full CPD registration run.
struct CpdAffineResult {
    Eigen::Matrix3d B = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
    double sigma2 = 0.0; // in the normalized solver frame
    Eigen::MatrixXd deformed; // M x 3, original frame
    std::vector<CpdIterationRecord> iterations;
    bool degenerate = false;
};

struct CpdNonrigidResult {
    Eigen::MatrixXd W; // M x 3, normalized solver frame
    double sigma2 = 0.0; // in the normalized solver frame
    Eigen::MatrixXd deformed; // M x 3, original frame
    std::vector<CpdIterationRecord> iterations;
    bool degenerate = false;
    bool ridge_applied = false;
};

/// Affine CPD: EM alternation of cpd_estep and the affine M-step, run in a
/// normalized frame (each cloud to zero mean, unit RMS scale) and mapped back.
inline CpdAffineResult cpd_affine(const Eigen::MatrixXd& template_pts,
                                  const Eigen::MatrixXd& target_pts,
                                  const CpdConfig& cfg = CpdConfig::affine_defaults()) {
    cfg.validate();
    if (template_pts.rows() < 4 || target_pts.rows() < 4)
        throw ArgumentError("cpd_affine: need at least 4 points per side");
    if (!template_pts.allFinite() || !target_pts.allFinite())
        throw ArgumentError("cpd_affine: non-finite input");

    Eigen::MatrixXd Y = template_pts;
    Eigen::MatrixXd X = target_pts;
    const detail::Normalization ny = detail::normalize_cloud(Y);
    const detail::Normalization nx = detail::normalize_cloud(X);

    CpdAffineResult result;
    Eigen::MatrixXd T = Y;
    Eigen::Matrix3d B = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
    double sigma2 = detail::initial_sigma2(Y, X);
    double prev_obj = std::numeric_limits<double>::infinity();
    std::vector<int> prev_match;

    for (int iter = 1; iter <= cfg.max_iter; ++iter) {
        const CpdEStep estep = cpd_estep(T, X, sigma2, cfg.outlier_weight, std::nullopt, 1.0,
                                         /*fill_P=*/false);
        if (estep.degenerate) {
            result.degenerate = true;
            break;
        }
        const double obj = estep.nll;
        CpdIterationRecord rec;
        rec.iter = iter;
        rec.objective = obj;
        rec.corr_changed = detail::count_changed(estep.hard_match, prev_match);
        prev_match = estep.hard_match;

        const CpdAffineMStep mstep = cpd_mstep_affine(Y, X, estep);
        B = mstep.B;
        t = mstep.t;
        sigma2 = mstep.sigma2;
        T = mstep.transformed;
        rec.sigma2 = sigma2;
        result.iterations.push_back(rec);

        const double denom = std::max({std::abs(prev_obj), std::abs(obj), 1e-12});
        if (iter > 1 && std::abs(prev_obj - obj) / denom < cfg.tol) break;
        prev_obj = obj;
    }

    // map the affine back to the original frames:
    // x = sx * (B yn + t) + mx with yn = (y - my) / sy
    result.B = (nx.scale / ny.scale) * B;
    result.t = nx.scale * t + nx.mean.transpose() - result.B * ny.mean.transpose();
    result.sigma2 = sigma2;
    result.deformed = template_pts * result.B.transpose();
    result.deformed.rowwise() += result.t.transpose();
    return result;
}

/// Non-rigid CPD with optional correspondence priors biasing the E-step.
inline CpdNonrigidResult cpd_nonrigid(const Eigen::MatrixXd& template_pts,
                                      const Eigen::MatrixXd& target_pts,
                                      const CpdConfig& cfg = CpdConfig::nonrigid_defaults(),
                                      const std::optional<Correspondences>& priors = std::nullopt) {
    cfg.validate();
    if (template_pts.rows() < 4 || target_pts.rows() < 4)
        throw ArgumentError("cpd_nonrigid: need at least 4 points per side");
    if (!template_pts.allFinite() || !target_pts.allFinite())
        throw ArgumentError("cpd_nonrigid: non-finite input");

    Eigen::MatrixXd Y = template_pts;
    Eigen::MatrixXd X = target_pts;
    const detail::Normalization ny = detail::normalize_cloud(Y);
    const detail::Normalization nx = detail::normalize_cloud(X);

    const Eigen::MatrixXd G = cpd_motion_kernel(Y, cfg.beta);
    const double gamma = priors ? cfg.prior_strength : 1.0;

    CpdNonrigidResult result;
    result.W = Eigen::MatrixXd::Zero(Y.rows(), 3);
    Eigen::MatrixXd T = Y;
    double sigma2 = detail::initial_sigma2(Y, X);
    double prev_obj = std::numeric_limits<double>::infinity();
    std::vector<int> prev_match;

    for (int iter = 1; iter <= cfg.max_iter; ++iter) {
        const CpdEStep estep =
            cpd_estep(T, X, sigma2, cfg.outlier_weight, priors, gamma, /*fill_P=*/false);
        if (estep.degenerate) {
            result.degenerate = true;
            break;
        }
        const double penalty =
            0.5 * cfg.lambda * (result.W.transpose() * G * result.W).trace();
        const double obj = estep.nll + penalty;
        CpdIterationRecord rec;
        rec.iter = iter;
        rec.objective = obj;
        rec.corr_changed = detail::count_changed(estep.hard_match, prev_match);
        prev_match = estep.hard_match;

        const CpdNonrigidMStep mstep = cpd_mstep_nonrigid(Y, X, estep, G, cfg.lambda, sigma2);
        result.W = mstep.W;
        result.ridge_applied = result.ridge_applied || mstep.ridge_applied;
        sigma2 = mstep.sigma2;
        T = mstep.transformed;
        rec.sigma2 = sigma2;
        result.iterations.push_back(rec);

        const double denom = std::max({std::abs(prev_obj), std::abs(obj), 1e-12});
        if (iter > 1 && std::abs(prev_obj - obj) / denom < cfg.tol) break;
        prev_obj = obj;
    }

    result.sigma2 = sigma2;
    result.deformed = (T * nx.scale).rowwise() + nx.mean;
    return result;
}

} // namespace meshreg
