// meshreg command-line front end: register / adapt / project / synth /
// evaluate / batch. Exit codes: 0 success, 2 argument error, 3 data error,
// 4 solver error.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "meshreg/meshreg.hpp"

namespace fs = std::filesystem;
using namespace meshreg;

namespace {

struct RegisterFlags {
    std::string template_path, scan_path, template_landmarks, scan_landmarks, parts;
    std::string adaptation, out_dir, config_path;
    double lambda = 0.1;
};

void add_config_flag(CLI::App* cmd, std::string& config_path) {
    cmd->add_option("--config", config_path, "config file (key = value with [sections])");
}

PipelineConfig build_config(const CLI::App* cmd, const RegisterFlags& flags) {
    PipelineConfig cfg;
    if (!flags.config_path.empty()) {
        std::ifstream in(flags.config_path);
        if (!in) throw DataError("cannot open config file '" + flags.config_path + "'");
        parse_config(in, cfg);
    }
    // explicit flags override the config file
    if (cmd->count("--template")) cfg.template_path = flags.template_path;
    if (cmd->count("--scan")) cfg.scan_path = flags.scan_path;
    if (cmd->count("--template-landmarks")) cfg.template_landmarks_path = flags.template_landmarks;
    if (cmd->count("--scan-landmarks")) cfg.scan_landmarks_path = flags.scan_landmarks;
    if (cmd->count("--parts")) cfg.parts_path = flags.parts;
    if (cmd->count("--adaptation")) cfg.adaptation = parse_adaptation(flags.adaptation);
    if (cmd->count("--lambda")) cfg.lambda = flags.lambda;
    if (cmd->count("--out")) cfg.out_dir = flags.out_dir;
    return cfg;
}

void write_small_manifest(const std::string& out_dir, const std::string& command,
                          const std::map<std::string, std::string>& params) {
    std::ofstream out(fs::path(out_dir) / "manifest.txt");
    out << "[run]\n";
    out << "version = " << kVersion << "\n";
    out << "command = " << command << "\n";
    for (const auto& [k, v] : params) out << "# " << k << " = " << v << "\n";
}

int run_register(const CLI::App* cmd, const RegisterFlags& flags) {
    const PipelineConfig cfg = build_config(cmd, flags);
    const RegistrationResult res = run_registration_files(cfg, kVersion);
    std::cout << "registered: mean nearest-point distance " << res.report.mean_nn_distance
              << " (" << 100.0 * res.report.mean_nn_distance /
                             std::max(res.report.bbox_diagonal, 1e-300)
              << "% of bbox diagonal), mean landmark error " << res.report.mean_landmark_error
              << "\n";
    std::cout << "outputs in " << cfg.out_dir << "\n";
    return 0;
}

int run_adapt(const CLI::App* cmd, const RegisterFlags& flags, const std::string& method) {
    PipelineConfig cfg = build_config(cmd, flags);
    if (cmd->count("--method")) cfg.adaptation = parse_adaptation(method);
    if (cfg.out_dir.empty()) throw ArgumentError("adapt: --out is required");
    fs::create_directories(cfg.out_dir);

    const TriMesh tmpl = load_mesh_file(cfg.template_path);
    LandmarkSpec lm = load_landmark_files(cfg.template_landmarks_path, cfg.scan_landmarks_path,
                                          cfg.parts_path);
    lm.validate(tmpl.vertex_count());
    // bring the scan-space landmark points into the template frame first
    const SimilarityTransform T =
        procrustes(lm.scan_points, lm.template_points(tmpl), /*with_scale=*/false);
    lm.scan_points = T.apply(lm.scan_points);

    TriMesh adapted;
    switch (cfg.adaptation) {
        case PipelineConfig::Adaptation::Lb:
            adapted = adapt_template_lb(tmpl, lm, cfg.lambda);
            break;
        case PipelineConfig::Adaptation::Gp:
            adapted = adapt_template_gp(tmpl, lm, cfg.gp.resolve(tmpl.bbox_diagonal()));
            break;
        case PipelineConfig::Adaptation::None:
            adapted = tmpl;
            break;
    }
    save_mesh_file((fs::path(cfg.out_dir) / "adapted_template.obj").string(), adapted);
    {
        std::ofstream manifest(fs::path(cfg.out_dir) / "manifest.txt");
        write_config(manifest, cfg, {{"version", kVersion}, {"command", "adapt"}});
    }
    std::cout << "adapted template written to " << cfg.out_dir << "\n";
    return 0;
}

int run_project(const std::string& deformed_path, const std::string& scan_path, double lambda,
                const std::string& out_dir) {
    const TriMesh deformed = load_mesh_file(deformed_path);
    const TriMesh scan = load_mesh_file(scan_path);
    const TriMesh projected = lbrp_project(deformed, scan, lambda);
    fs::create_directories(out_dir);
    save_mesh_file((fs::path(out_dir) / "projected.obj").string(), projected);
    write_small_manifest(out_dir, "project",
                         {{"deformed", deformed_path},
                          {"scan", scan_path},
                          {"lambda", std::to_string(lambda)}});
    std::cout << "projected mesh written to " << out_dir << "\n";
    return 0;
}

int run_synth(std::uint64_t seed, const SyntheticSpec& spec, const std::string& out_dir) {
    const SyntheticCase c = make_synthetic_case(seed, spec);
    fs::create_directories(out_dir);
    save_mesh_file((fs::path(out_dir) / "template.obj").string(), c.tmpl);
    save_mesh_file((fs::path(out_dir) / "scan.obj").string(), c.scan);
    save_truth_csv((fs::path(out_dir) / "truth.csv").string(), c.truth);
    {
        std::ofstream tl(fs::path(out_dir) / "template_landmarks.txt");
        tl << "# template vertex index per landmark\n";
        for (int idx : c.landmarks.template_indices) tl << idx << "\n";
        std::ofstream sl(fs::path(out_dir) / "scan_landmarks.txt");
        sl << "# x y z [part]\n";
        for (int i = 0; i < c.landmarks.count(); ++i) {
            sl << detail::fmt_g9(c.landmarks.scan_points(i, 0)) << ' '
               << detail::fmt_g9(c.landmarks.scan_points(i, 1)) << ' '
               << detail::fmt_g9(c.landmarks.scan_points(i, 2));
            if (!c.landmarks.part_labels.empty())
                sl << ' ' << c.landmarks.part_labels[static_cast<std::size_t>(i)];
            sl << "\n";
        }
        std::ofstream pf(fs::path(out_dir) / "parts.txt");
        pf << "# part label, landmark ordinal\n";
        for (int i = 0; i < c.landmarks.count(); ++i)
            pf << c.landmarks.part_labels[static_cast<std::size_t>(i)] << ' ' << i << "\n";
    }
    write_small_manifest(out_dir, "synth",
                         {{"seed", std::to_string(seed)},
                          {"warp_magnitude", std::to_string(spec.warp_magnitude)},
                          {"warp_smoothness", std::to_string(spec.warp_smoothness)},
                          {"part_shift", std::to_string(spec.part_shift)},
                          {"noise_sigma", std::to_string(spec.noise_sigma)},
                          {"occlusion_fraction", std::to_string(spec.occlusion_fraction)},
                          {"mesh_level", std::to_string(spec.mesh_level)}});
    std::cout << "synthetic case (" << c.tmpl.vertex_count() << " template vertices, "
              << c.scan.vertex_count() << " scan vertices) written to " << out_dir << "\n";
    return 0;
}

int run_evaluate(const std::string& mesh_path, const std::string& truth_path,
                 const std::string& scan_path, const std::string& out_path) {
    if (truth_path.empty() && scan_path.empty())
        throw ArgumentError("evaluate: supply --truth and/or --scan");
    const TriMesh mesh = load_mesh_file(mesh_path);

    EvaluationReport rep;
    rep.bbox_diagonal = mesh.bbox_diagonal();
    if (!scan_path.empty()) {
        const TriMesh scan = load_mesh_file(scan_path);
        const VertexDistanceResult nn = per_vertex_nearest_distance(mesh, scan);
        rep.nn_distances = nn.distances;
        rep.mean_nn_distance = nn.mean;
        rep.bbox_diagonal = scan.bbox_diagonal();
    }
    if (!truth_path.empty()) {
        const GroundTruthEval gt = evaluate_against_ground_truth(mesh, load_truth_csv(truth_path));
        rep.has_ground_truth = true;
        rep.gt_errors = gt.errors;
        rep.mean_gt_error = gt.mean;
        rep.curve = gt.curve;
        for (double pct : {0.5, 1.0, 2.0, 3.0, 5.0}) {
            const double t = pct / 100.0 * rep.bbox_diagonal;
            const double frac = static_cast<double>((gt.errors.array() <= t).count()) /
                                static_cast<double>(gt.errors.size());
            rep.curve_pct_bbox.emplace_back(pct, frac);
        }
        if (rep.nn_distances.size() == 0) {
            rep.nn_distances = gt.errors; // report shape hygiene
            rep.nn_distances.setZero();
        }
    }
    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write report '" + out_path + "'");
    write_report_csv(out, rep);
    std::cout << "report written to " << out_path << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"meshreg: non-rigid 3D shape registration with adaptive templates"};
    app.require_subcommand(1);

    // --- register
    RegisterFlags reg;
    CLI::App* c_register = app.add_subcommand("register", "register a template onto a scan");
    c_register->add_option("--template", reg.template_path, "template OBJ");
    c_register->add_option("--scan", reg.scan_path, "scan OBJ");
    c_register->add_option("--template-landmarks", reg.template_landmarks,
                           "template landmark index file");
    c_register->add_option("--scan-landmarks", reg.scan_landmarks, "scan landmark xyz file");
    c_register->add_option("--parts", reg.parts, "part definition file");
    c_register->add_option("--adaptation", reg.adaptation, "template adaptation: none|lb|gp");
    c_register->add_option("--lambda", reg.lambda, "LB stiffness weight");
    c_register->add_option("--out", reg.out_dir, "output directory");
    add_config_flag(c_register, reg.config_path);

    // --- adapt
    RegisterFlags ad;
    std::string adapt_method;
    CLI::App* c_adapt = app.add_subcommand("adapt", "adapt the template to scan landmarks");
    c_adapt->add_option("--template", ad.template_path, "template OBJ");
    c_adapt->add_option("--template-landmarks", ad.template_landmarks,
                        "template landmark index file");
    c_adapt->add_option("--scan-landmarks", ad.scan_landmarks, "scan landmark xyz file");
    c_adapt->add_option("--parts", ad.parts, "part definition file");
    c_adapt->add_option("--method", adapt_method, "adaptation back-end: none|lb|gp");
    c_adapt->add_option("--lambda", ad.lambda, "LB stiffness weight");
    c_adapt->add_option("--out", ad.out_dir, "output directory");
    add_config_flag(c_adapt, ad.config_path);

    // --- project
    std::string proj_deformed, proj_scan, proj_out;
    double proj_lambda = 0.1;
    CLI::App* c_project = app.add_subcommand("project", "LB-regularised projection onto a scan");
    c_project->add_option("--deformed", proj_deformed, "deformed template OBJ")->required();
    c_project->add_option("--scan", proj_scan, "scan OBJ")->required();
    c_project->add_option("--lambda", proj_lambda, "LB stiffness weight");
    c_project->add_option("--out", proj_out, "output directory")->required();

    // --- synth
    std::uint64_t synth_seed = 0;
    SyntheticSpec synth_spec;
    std::string synth_out;
    CLI::App* c_synth = app.add_subcommand("synth", "generate a synthetic registration case");
    c_synth->add_option("--seed", synth_seed, "random seed")->required();
    c_synth->add_option("--warp", synth_spec.warp_magnitude, "smooth warp, fraction of bbox");
    c_synth->add_option("--smoothness", synth_spec.warp_smoothness,
                        "warp length scale, fraction of bbox");
    c_synth->add_option("--part-shift", synth_spec.part_shift,
                        "nose/ear shift, fraction of bbox");
    c_synth->add_option("--noise", synth_spec.noise_sigma, "vertex noise, fraction of bbox");
    c_synth->add_option("--occlusion", synth_spec.occlusion_fraction,
                        "fraction of scan vertices cropped");
    c_synth->add_option("--level", synth_spec.mesh_level, "head mesh subdivision level");
    c_synth->add_option("--out", synth_out, "output directory")->required();

    // --- evaluate
    std::string eval_mesh, eval_truth, eval_scan, eval_out;
    CLI::App* c_eval = app.add_subcommand("evaluate", "evaluate a registered mesh");
    c_eval->add_option("--mesh", eval_mesh, "registered OBJ")->required();
    c_eval->add_option("--truth", eval_truth, "ground-truth positions CSV");
    c_eval->add_option("--scan", eval_scan, "scan OBJ for nearest-point distances");
    c_eval->add_option("--out", eval_out, "report CSV path")->required();

    // --- batch
    RegisterFlags bat;
    std::string batch_in;
    int batch_workers = 0;
    CLI::App* c_batch = app.add_subcommand("batch", "register every case under a directory");
    c_batch->add_option("--in", batch_in, "input directory of case subdirectories")->required();
    c_batch->add_option("--out", bat.out_dir, "output directory")->required();
    c_batch->add_option("--adaptation", bat.adaptation, "template adaptation: none|lb|gp");
    c_batch->add_option("--lambda", bat.lambda, "LB stiffness weight");
    c_batch->add_option("--workers", batch_workers, "parallel workers (default: hardware)");
    add_config_flag(c_batch, bat.config_path);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (c_register->parsed()) return run_register(c_register, reg);
        if (c_adapt->parsed()) return run_adapt(c_adapt, ad, adapt_method);
        if (c_project->parsed()) return run_project(proj_deformed, proj_scan, proj_lambda, proj_out);
        if (c_synth->parsed()) return run_synth(synth_seed, synth_spec, synth_out);
        if (c_eval->parsed()) return run_evaluate(eval_mesh, eval_truth, eval_scan, eval_out);
        if (c_batch->parsed()) {
            const PipelineConfig cfg = build_config(c_batch, bat);
            const auto rows = run_batch(batch_in, bat.out_dir, cfg, batch_workers);
            int failed = 0;
            for (const auto& row : rows) failed += !row.ok;
            std::cout << rows.size() - static_cast<std::size_t>(failed) << "/" << rows.size()
                      << " cases registered; aggregate.csv written to " << bat.out_dir << "\n";
            if (failed) return 4;
            return 0;
        }
    } catch (const ArgumentError& e) {
        std::cerr << "argument error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const SolverError& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
