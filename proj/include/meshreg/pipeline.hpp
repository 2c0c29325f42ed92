#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "meshreg/config.hpp"
#include "meshreg/deform.hpp"
#include "meshreg/errors.hpp"
#include "meshreg/gp.hpp"
#include "meshreg/icpd.hpp"
#include "meshreg/mesh.hpp"
#include "meshreg/nearest.hpp"
#include "meshreg/obj_io.hpp"
#include "meshreg/rigid.hpp"

namespace meshreg {

/// Thresholds of the cumulative error curve, in model units (millimetres on
/// head-scale data).
inline const std::vector<double>& error_curve_thresholds() {
    static const std::vector<double> t = {0.5, 1.0, 2.0, 3.0, 5.0};
    return t;
}

struct GroundTruthEval {
    Eigen::VectorXd errors; // per-vertex Euclidean error
    double mean = 0.0;
    std::vector<std::pair<double, double>> curve; // (threshold, fraction below)
};

/// Per-vertex errors against exact target positions, with the cumulative
/// fraction-below-threshold curve.
inline GroundTruthEval evaluate_against_ground_truth(const TriMesh& registered,
                                                     const Eigen::MatrixXd& truth_positions) {
    if (registered.vertices.rows() != truth_positions.rows())
        throw ArgumentError("evaluate_against_ground_truth: row count mismatch");
    GroundTruthEval out;
    out.errors = (registered.vertices - truth_positions).rowwise().norm();
    out.mean = out.errors.size() > 0 ? out.errors.mean() : 0.0;
    for (double t : error_curve_thresholds()) {
        const double frac =
            out.errors.size() > 0
                ? static_cast<double>((out.errors.array() <= t).count()) /
                      static_cast<double>(out.errors.size())
                : 1.0;
        out.curve.emplace_back(t, frac);
    }
    return out;
}

/// Registration quality summary: nearest-point distances, landmark errors,
/// cumulative curves, and per-stage timings.
struct EvaluationReport {
    Eigen::VectorXd nn_distances;
    double mean_nn_distance = 0.0;
    Eigen::VectorXd landmark_errors;
    double mean_landmark_error = 0.0;
    std::vector<std::pair<double, double>> curve; // thresholds in model units
    std::vector<std::pair<double, double>> curve_pct_bbox; // thresholds as % of bbox diagonal
    double bbox_diagonal = 0.0;
    std::vector<std::pair<std::string, double>> stage_seconds;

    bool has_ground_truth = false;
    Eigen::VectorXd gt_errors;
    double mean_gt_error = 0.0;
};

struct RegistrationInputs {
    TriMesh tmpl;
    TriMesh scan;
    LandmarkSpec landmarks;               // scan_points in original scan coordinates
    std::optional<Eigen::MatrixXd> truth; // optional exact targets, scan coordinates
};

struct RegistrationResult {
    TriMesh registered;                // original scan frame
    TriMesh registered_template_frame; // solver frame (template coordinates)
    TriMesh adapted_template;
    SimilarityTransform scan_to_template;
    IcpdResult icpd;
    EvaluationReport report;
};

/// Called after each completed stage so file-based runs can persist partial
/// results.
struct StageObserver {
    virtual ~StageObserver() = default;
    virtual void on_stage(const std::string& /*stage*/) {}
};

namespace detail {

template <typename Fn>
auto run_stage(const char* name, Fn&& fn,
               std::vector<std::pair<std::string, double>>& timings) {
    const auto tick = std::chrono::steady_clock::now();
    try {
        auto result = fn();
        timings.emplace_back(
            name, std::chrono::duration<double>(std::chrono::steady_clock::now() - tick).count());
        return result;
    } catch (const ArgumentError& e) {
        throw ArgumentError(std::string("stage ") + name + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(std::string("stage ") + name + ": " + e.what());
    } catch (const SolverError& e) {
        throw SolverError(std::string("stage ") + name + ": " + e.what());
    }
}

} // namespace detail

/// Full registration: rigid landmark alignment, optional template adaptation,
/// ICPD morphing, LB-regularised projection, metrics. The returned mesh is in
/// the original scan coordinates (the inverse of the alignment transform is
/// applied on the way out).
inline RegistrationResult run_registration(const RegistrationInputs& inputs,
                                           const PipelineConfig& cfg,
                                           StageObserver* observer = nullptr) {
    cfg.validate();
    inputs.tmpl.validate();
    inputs.scan.validate();
    inputs.landmarks.validate(inputs.tmpl.vertex_count());
    if (inputs.truth && inputs.truth->rows() != inputs.tmpl.vertices.rows())
        throw ArgumentError("run_registration: ground truth row count mismatch");

    RegistrationResult res;
    auto& timings = res.report.stage_seconds;
    const auto notify = [&](const char* stage) {
        if (observer) observer->on_stage(stage);
    };

    // 1. rigid alignment of the scan into the template frame
    AlignedScan aligned = detail::run_stage(
        "align", [&] { return align_scan_to_template(inputs.scan, inputs.landmarks, inputs.tmpl); },
        timings);
    res.scan_to_template = aligned.transform;
    notify("align");

    // 2. template adaptation from the sparse landmarks
    res.adapted_template = detail::run_stage(
        "adapt",
        [&]() -> TriMesh {
            switch (cfg.adaptation) {
                case PipelineConfig::Adaptation::Lb:
                    return adapt_template_lb(inputs.tmpl, aligned.landmarks, cfg.lambda);
                case PipelineConfig::Adaptation::Gp:
                    return adapt_template_gp(
                        inputs.tmpl, aligned.landmarks,
                        cfg.gp.resolve(inputs.tmpl.bbox_diagonal()));
                case PipelineConfig::Adaptation::None: break;
            }
            return inputs.tmpl;
        },
        timings);
    notify("adapt");

    // 3. dense morphing
    res.icpd = detail::run_stage(
        "icpd", [&] { return icpd_register(res.adapted_template, aligned.scan, cfg.icpd); },
        timings);
    notify("icpd");

    // 4. projection onto the scan
    res.registered_template_frame = detail::run_stage(
        "lbrp",
        [&] { return lbrp_project(res.icpd.deformed_template, aligned.scan, cfg.lambda); },
        timings);
    notify("lbrp");

    // 5. metrics (template frame distances equal scan frame distances: the
    // alignment is rigid)
    detail::run_stage(
        "metrics",
        [&] {
            EvaluationReport& rep = res.report;
            const VertexDistanceResult nn =
                per_vertex_nearest_distance(res.registered_template_frame, aligned.scan);
            rep.nn_distances = nn.distances;
            rep.mean_nn_distance = nn.mean;
            rep.bbox_diagonal = aligned.scan.bbox_diagonal();

            rep.landmark_errors.resize(aligned.landmarks.count());
            for (int i = 0; i < aligned.landmarks.count(); ++i) {
                const int v = aligned.landmarks.template_indices[static_cast<std::size_t>(i)];
                rep.landmark_errors(i) =
                    (res.registered_template_frame.vertices.row(v) -
                     aligned.landmarks.scan_points.row(i))
                        .norm();
            }
            rep.mean_landmark_error =
                rep.landmark_errors.size() > 0 ? rep.landmark_errors.mean() : 0.0;

            const SimilarityTransform back = res.scan_to_template.inverse();
            res.registered = apply_transform(res.registered_template_frame, back);

            const Eigen::VectorXd* curve_src = &rep.nn_distances;
            if (inputs.truth) {
                const GroundTruthEval gt =
                    evaluate_against_ground_truth(res.registered, *inputs.truth);
                rep.has_ground_truth = true;
                rep.gt_errors = gt.errors;
                rep.mean_gt_error = gt.mean;
                curve_src = &rep.gt_errors;
            }
            for (double t : error_curve_thresholds()) {
                const double frac = static_cast<double>((curve_src->array() <= t).count()) /
                                    static_cast<double>(curve_src->size());
                rep.curve.emplace_back(t, frac);
            }
            for (double pct : {0.5, 1.0, 2.0, 3.0, 5.0}) {
                const double t = pct / 100.0 * rep.bbox_diagonal;
                const double frac = static_cast<double>((curve_src->array() <= t).count()) /
                                    static_cast<double>(curve_src->size());
                rep.curve_pct_bbox.emplace_back(pct, frac);
            }
            return 0;
        },
        timings);
    notify("metrics");
    return res;
}

// ---------------------------------------------------------------------------
// file-level helpers

inline TriMesh load_mesh_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open mesh file '" + path + "'");
    TriMesh mesh = parse_obj(in);
    mesh.validate();
    return mesh;
}

inline void save_mesh_file(const std::string& path, const TriMesh& mesh,
                           const std::optional<Eigen::VectorXd>& vertex_scalars = std::nullopt) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write mesh file '" + path + "'");
    write_obj(out, mesh, vertex_scalars);
}

inline LandmarkSpec load_landmark_files(const std::string& template_path,
                                        const std::string& scan_path,
                                        const std::string& parts_path = "") {
    std::ifstream tf(template_path);
    if (!tf) throw DataError("cannot open template landmark file '" + template_path + "'");
    std::ifstream sf(scan_path);
    if (!sf) throw DataError("cannot open scan landmark file '" + scan_path + "'");
    if (parts_path.empty()) return load_landmarks(tf, sf);
    std::ifstream pf(parts_path);
    if (!pf) throw DataError("cannot open parts file '" + parts_path + "'");
    return load_landmarks(tf, sf, &pf);
}

/// Truth positions CSV: header "x,y,z", one row per template vertex.
inline void save_truth_csv(const std::string& path, const Eigen::MatrixXd& truth) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write truth file '" + path + "'");
    out << "x,y,z\n";
    for (Eigen::Index i = 0; i < truth.rows(); ++i)
        out << detail::fmt_g9(truth(i, 0)) << ',' << detail::fmt_g9(truth(i, 1)) << ','
            << detail::fmt_g9(truth(i, 2)) << '\n';
}

inline Eigen::MatrixXd load_truth_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open truth file '" + path + "'");
    std::string line;
    std::vector<Eigen::RowVector3d> rows;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.rfind("x,", 0) == 0) continue; // header
        if (detail::trim(line).empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        Eigen::RowVector3d row;
        for (int c = 0; c < 3; ++c) {
            if (!std::getline(ss, cell, ','))
                throw DataError("truth file '" + path + "': bad row at line " +
                                std::to_string(line_no));
            row(c) = detail::parse_double(detail::trim(cell), "truth");
        }
        rows.push_back(row);
    }
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), 3);
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows[i];
    return out;
}

inline void write_report_csv(std::ostream& out, const EvaluationReport& rep) {
    out << "metric,value\n";
    out << "mean_nearest_point_distance," << detail::fmt_g9(rep.mean_nn_distance) << "\n";
    out << "mean_nearest_point_distance_pct_bbox,"
        << detail::fmt_g9(rep.bbox_diagonal > 0.0
                              ? 100.0 * rep.mean_nn_distance / rep.bbox_diagonal
                              : 0.0)
        << "\n";
    out << "bbox_diagonal," << detail::fmt_g9(rep.bbox_diagonal) << "\n";
    out << "mean_landmark_error," << detail::fmt_g9(rep.mean_landmark_error) << "\n";
    for (Eigen::Index i = 0; i < rep.landmark_errors.size(); ++i)
        out << "landmark_error_" << i << ',' << detail::fmt_g9(rep.landmark_errors(i)) << "\n";
    if (rep.has_ground_truth)
        out << "mean_ground_truth_error," << detail::fmt_g9(rep.mean_gt_error) << "\n";
    for (const auto& [t, frac] : rep.curve)
        out << "fraction_below_" << detail::fmt_g9(t) << ',' << detail::fmt_g9(frac) << "\n";
    for (const auto& [pct, frac] : rep.curve_pct_bbox)
        out << "fraction_below_pct_bbox_" << detail::fmt_g9(pct) << ',' << detail::fmt_g9(frac)
        << "\n";
}

inline void write_per_vertex_csv(std::ostream& out, const EvaluationReport& rep) {
    out << (rep.has_ground_truth ? "nn_distance,gt_error\n" : "nn_distance\n");
    for (Eigen::Index i = 0; i < rep.nn_distances.size(); ++i) {
        out << detail::fmt_g9(rep.nn_distances(i));
        if (rep.has_ground_truth) out << ',' << detail::fmt_g9(rep.gt_errors(i));
        out << "\n";
    }
}

inline void write_icpd_outer_csv(std::ostream& out, const IcpdResult& icpd) {
    out << "outer_iter,corr_changed,mean_nn_dist,inner_affine_iters,inner_nonrigid_iters,seconds\n";
    for (const auto& r : icpd.outer_log)
        out << r.outer_iter << ',' << r.corr_changed << ',' << detail::fmt_g9(r.mean_nn_dist)
            << ',' << r.inner_affine_iters << ',' << r.inner_nonrigid_iters << ','
            << detail::fmt_g9(r.seconds) << "\n";
}

inline void write_cpd_iteration_csv(std::ostream& out,
                                    const std::vector<CpdIterationRecord>& records) {
    out << "iter,sigma2,objective,corr_changed\n";
    for (const auto& r : records)
        out << r.iter << ',' << detail::fmt_g9(r.sigma2) << ',' << detail::fmt_g9(r.objective)
            << ',' << r.corr_changed << "\n";
}

/// Runs the registration described by `cfg`'s paths and writes all artifacts
/// into cfg.out_dir: registered OBJ (scan frame), error-colored OBJ, report
/// CSV, per-vertex CSV, ICPD outer log, and a manifest that reproduces the
/// run. On failure a FAILED marker naming the stage is left in out_dir and the
/// error is rethrown.
inline RegistrationResult run_registration_files(const PipelineConfig& cfg,
                                                 const std::string& version = "0.1.0") {
    namespace fs = std::filesystem;
    if (cfg.out_dir.empty()) throw ArgumentError("register: output directory not set");
    if (cfg.template_path.empty() || cfg.scan_path.empty())
        throw ArgumentError("register: template and scan paths are required");
    if (cfg.template_landmarks_path.empty() || cfg.scan_landmarks_path.empty())
        throw ArgumentError("register: landmark file paths are required");
    fs::create_directories(cfg.out_dir);

    RegistrationInputs inputs;
    inputs.tmpl = load_mesh_file(cfg.template_path);
    inputs.scan = load_mesh_file(cfg.scan_path);
    inputs.landmarks = load_landmark_files(cfg.template_landmarks_path,
                                           cfg.scan_landmarks_path, cfg.parts_path);
    const std::string truth_path =
        (fs::path(cfg.scan_path).parent_path() / "truth.csv").string();
    if (fs::exists(truth_path)) inputs.truth = load_truth_csv(truth_path);

    const auto out_path = [&](const char* name) {
        return (fs::path(cfg.out_dir) / name).string();
    };

    struct FileObserver : StageObserver {
        std::string last_stage;
        void on_stage(const std::string& stage) override { last_stage = stage; }
    } observer;

    try {
        RegistrationResult res = run_registration(inputs, cfg, &observer);

        save_mesh_file(out_path("registered.obj"), res.registered);
        save_mesh_file(out_path("registered_error_colored.obj"), res.registered,
                       res.report.nn_distances);
        save_mesh_file(out_path("adapted_template.obj"), res.adapted_template);
        {
            std::ofstream rep(out_path("report.csv"));
            write_report_csv(rep, res.report);
            std::ofstream pv(out_path("per_vertex.csv"));
            write_per_vertex_csv(pv, res.report);
            std::ofstream icpd_log(out_path("icpd_outer_log.csv"));
            write_icpd_outer_csv(icpd_log, res.icpd);
        }
        {
            std::ofstream manifest(out_path("manifest.txt"));
            std::map<std::string, std::string> run_info = {{"version", version},
                                                           {"command", "register"}};
            std::vector<std::string> comments;
            const GpKernelConfig gp_used = cfg.gp.resolve(inputs.tmpl.bbox_diagonal());
            std::string scales = "gp kernel resolved:";
            for (const auto& s : gp_used.scales)
                scales += " (a=" + detail::format_double(s.amplitude) +
                          ", l=" + detail::format_double(s.length_scale) + ")";
            scales += " noise_variance=" + detail::format_double(gp_used.noise_variance);
            comments.push_back(scales);
            for (const auto& [stage, secs] : res.report.stage_seconds)
                comments.push_back("timing " + stage + " = " + detail::format_double(secs) + " s");
            write_config(manifest, cfg, run_info, comments);
        }
        return res;
    } catch (const Error& e) {
        std::ofstream marker(out_path("FAILED"));
        marker << "failed after stage '" << observer.last_stage << "'\n" << e.what() << "\n";
        throw;
    }
}

/// One aggregate row per registered scan.
struct BatchCaseResult {
    std::string name;
    bool ok = false;
    std::string error;
    double mean_nn_distance = 0.0;
    double mean_landmark_error = 0.0;
    double mean_gt_error = 0.0;
    bool has_ground_truth = false;
    double fraction_within_2pct_bbox = 0.0;
    int total_inner_iterations = 0;
};

/// Registers every case directory under `in_dir` (template.obj, scan.obj,
/// template_landmarks.txt, scan_landmarks.txt, optional parts.txt and
/// truth.csv), in parallel workers, writing per-case outputs and an
/// aggregate CSV under `out_dir`.
inline std::vector<BatchCaseResult> run_batch(const std::string& in_dir,
                                              const std::string& out_dir, PipelineConfig cfg,
                                              int workers = 0) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(in_dir)) throw DataError("batch: '" + in_dir + "' is not a directory");
    fs::create_directories(out_dir);

    std::vector<std::string> cases;
    for (const auto& entry : fs::directory_iterator(in_dir))
        if (entry.is_directory() && fs::exists(entry.path() / "scan.obj"))
            cases.push_back(entry.path().filename().string());
    std::sort(cases.begin(), cases.end());
    if (cases.empty()) throw DataError("batch: no case directories with scan.obj under '" + in_dir + "'");

    std::vector<BatchCaseResult> results(cases.size());
    std::atomic<std::size_t> next{0};
    if (workers <= 0)
        workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cases.size()) return;
            const fs::path case_dir = fs::path(in_dir) / cases[i];
            PipelineConfig local = cfg;
            local.template_path = (case_dir / "template.obj").string();
            local.scan_path = (case_dir / "scan.obj").string();
            local.template_landmarks_path = (case_dir / "template_landmarks.txt").string();
            local.scan_landmarks_path = (case_dir / "scan_landmarks.txt").string();
            if (fs::exists(case_dir / "parts.txt"))
                local.parts_path = (case_dir / "parts.txt").string();
            local.out_dir = (fs::path(out_dir) / cases[i]).string();

            BatchCaseResult& row = results[i];
            row.name = cases[i];
            try {
                const RegistrationResult res = run_registration_files(local);
                row.ok = true;
                row.mean_nn_distance = res.report.mean_nn_distance;
                row.mean_landmark_error = res.report.mean_landmark_error;
                row.has_ground_truth = res.report.has_ground_truth;
                row.mean_gt_error = res.report.mean_gt_error;
                for (const auto& [pct, frac] : res.report.curve_pct_bbox)
                    if (pct == 2.0) row.fraction_within_2pct_bbox = frac;
                row.total_inner_iterations = res.icpd.total_inner_iterations();
            } catch (const Error& e) {
                row.ok = false;
                row.error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    std::ofstream agg(fs::path(out_dir) / "aggregate.csv");
    agg << "case,status,mean_nn_distance,mean_landmark_error,mean_ground_truth_error,"
           "fraction_within_2pct_bbox,total_inner_cpd_iterations\n";
    for (const auto& row : results) {
        agg << row.name << ',' << (row.ok ? "ok" : "failed") << ','
            << detail::fmt_g9(row.mean_nn_distance) << ','
            << detail::fmt_g9(row.mean_landmark_error) << ','
            << (row.has_ground_truth ? detail::fmt_g9(row.mean_gt_error) : "")
            << ',' << detail::fmt_g9(row.fraction_within_2pct_bbox) << ','
            << row.total_inner_iterations << "\n";
    }
    return results;
}

} // namespace meshreg
