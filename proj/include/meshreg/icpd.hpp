#pragma once

#include <Eigen/Core>
#include <chrono>
#include <optional>
#include <vector>

#include "meshreg/cpd.hpp"
#include "meshreg/errors.hpp"
#include "meshreg/mesh.hpp"
#include "meshreg/nearest.hpp"

namespace meshreg {

/// Outer-loop configuration for iterative coherent point drift.
struct IcpdConfig {
    int outer_max_iter = 10;
    double corr_stable_fraction = 0.005; // stop when fewer correspondences change
    std::optional<int> subsample_target; // scan point budget; template count by default
    bool affine_every_iteration = true;  // false: affine adjustment only in iteration 1
    CpdConfig affine = CpdConfig::affine_defaults();
    CpdConfig nonrigid = CpdConfig::nonrigid_defaults();

    void validate() const {
        if (outer_max_iter < 1) throw ArgumentError("icpd: outer_max_iter must be >= 1");
        if (!(corr_stable_fraction > 0.0) || !(corr_stable_fraction < 1.0))
            throw ArgumentError("icpd: corr_stable_fraction must be in (0,1)");
        if (subsample_target && *subsample_target < 4)
            throw ArgumentError("icpd: subsample_target must be >= 4");
        affine.validate();
        nonrigid.validate();
    }
};

/// One outer-iteration record.
struct IcpdOuterRecord {
    int outer_iter = 0;
    int corr_changed = 0;
    double mean_nn_dist = 0.0;
    int inner_affine_iters = 0;
    int inner_nonrigid_iters = 0;
    double seconds = 0.0;
};

struct IcpdResult {
    TriMesh deformed_template;             // template connectivity, morphed vertices
    Correspondences final_correspondences; // template index -> original scan index
    std::vector<IcpdOuterRecord> outer_log;
    bool degenerate = false; // any inner CPD hit the sigma2 floor

    int total_inner_iterations() const {
        int n = 0;
        for (const auto& rec : outer_log) n += rec.inner_affine_iters + rec.inner_nonrigid_iters;
        return n;
    }
};

/// Iterative coherent point drift: alternate closest-point correspondence
/// estimation with prior-biased CPD until the mutual correspondences
/// stabilize.
///
/// Per outer iteration: (1) deterministic farthest-point subsample of the
/// scan, (2) closest-point pairs, (3) affine CPD on those pairs applied to the
/// template as a small adjustment, (4) mutual nearest neighbours as priors,
/// (5) non-rigid CPD, (6) stop when the fraction of changed mutual pairs
/// drops below corr_stable_fraction. Inputs are expected pre-aligned.
inline IcpdResult icpd_register(const TriMesh& tmpl, const TriMesh& scan,
                                const IcpdConfig& cfg = IcpdConfig()) {
    cfg.validate();
    tmpl.validate();
    if (scan.vertex_count() < 4) throw ArgumentError("icpd_register: scan needs >= 4 points");
    if (tmpl.vertex_count() < 4) throw ArgumentError("icpd_register: template needs >= 4 points");

    const int budget = cfg.subsample_target ? *cfg.subsample_target : tmpl.vertex_count();
    const std::vector<int> sample_idx = farthest_point_sampling(scan.vertices, budget);
    Eigen::MatrixXd sample(static_cast<Eigen::Index>(sample_idx.size()), 3);
    for (std::size_t i = 0; i < sample_idx.size(); ++i)
        sample.row(static_cast<Eigen::Index>(i)) = scan.vertices.row(sample_idx[i]);

    IcpdResult result;
    Eigen::MatrixXd current = tmpl.vertices;
    Correspondences prev_pairs; // end-of-iteration mutual pairs of the previous round

    auto count_pair_changes = [](const Correspondences& now, const Correspondences& before) {
        // a template vertex counts as changed if its match appeared,
        // disappeared, or moved
        std::vector<int> before_match; // src -> dst, -1 when absent
        int max_src = -1;
        for (const auto& pr : now.pairs) max_src = std::max(max_src, pr.src);
        for (const auto& pr : before.pairs) max_src = std::max(max_src, pr.src);
        before_match.assign(static_cast<std::size_t>(max_src + 1), -1);
        for (const auto& pr : before.pairs) before_match[static_cast<std::size_t>(pr.src)] = pr.dst;
        int changed = 0;
        std::vector<char> seen(static_cast<std::size_t>(max_src + 1), 0);
        for (const auto& pr : now.pairs) {
            seen[static_cast<std::size_t>(pr.src)] = 1;
            changed += (before_match[static_cast<std::size_t>(pr.src)] != pr.dst);
        }
        for (const auto& pr : before.pairs)
            if (!seen[static_cast<std::size_t>(pr.src)]) ++changed; // disappeared
        return changed;
    };

    Correspondences idx2_end;
    for (int outer = 1; outer <= cfg.outer_max_iter; ++outer) {
        const auto tick = std::chrono::steady_clock::now();
        IcpdOuterRecord rec;
        rec.outer_iter = outer;

        // coarse closest-point correspondences drive a global affine adjustment
        if (cfg.affine_every_iteration || outer == 1) {
            const NearestResult idx1 = nearest_neighbors(current, sample);
            Eigen::MatrixXd matched(current.rows(), 3);
            for (Eigen::Index i = 0; i < current.rows(); ++i)
                matched.row(i) = sample.row(idx1.indices(i));
            const CpdAffineResult affine = cpd_affine(current, matched, cfg.affine);
            result.degenerate = result.degenerate || affine.degenerate;
            rec.inner_affine_iters = static_cast<int>(affine.iterations.size());
            current = affine.deformed;
        }

        // refined mutual correspondences become non-rigid priors
        const Correspondences idx2 = mutual_nearest_neighbors(current, sample);
        if (idx2.empty())
            throw SolverError("icpd_register: no mutual correspondences; check rigid alignment");

        const CpdNonrigidResult nonrigid = cpd_nonrigid(current, sample, cfg.nonrigid, idx2);
        result.degenerate = result.degenerate || nonrigid.degenerate;
        rec.inner_nonrigid_iters = static_cast<int>(nonrigid.iterations.size());
        current = nonrigid.deformed;

        idx2_end = mutual_nearest_neighbors(current, sample);
        const Correspondences& reference = outer == 1 ? idx2 : prev_pairs;
        rec.corr_changed = count_pair_changes(idx2_end, reference);
        prev_pairs = idx2_end;

        Eigen::VectorXd nn_d = nearest_neighbors(current, sample).distances;
        rec.mean_nn_dist = nn_d.mean();
        rec.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - tick).count();
        result.outer_log.push_back(rec);

        const double fraction = static_cast<double>(rec.corr_changed) /
                                static_cast<double>(std::max<std::size_t>(idx2_end.size(), 1));
        if (fraction < cfg.corr_stable_fraction) break;
    }

    result.deformed_template.vertices = current;
    result.deformed_template.faces = tmpl.faces;
    result.final_correspondences = idx2_end;
    for (auto& pr : result.final_correspondences.pairs) pr.dst = sample_idx[static_cast<std::size_t>(pr.dst)];
    return result;
}

} // namespace meshreg
