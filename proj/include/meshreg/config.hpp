#pragma once

#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "meshreg/errors.hpp"
#include "meshreg/gp.hpp"
#include "meshreg/icpd.hpp"

namespace meshreg {

/// GP kernel settings as written in config files: length scales as fractions
/// of the template bounding-box diagonal, or absolute overrides.
struct GpConfigSpec {
    std::vector<double> amplitudes = {1.0, 0.25};
    std::vector<double> length_scale_fractions = {0.25, 0.05};
    std::vector<double> length_scales; // absolute; overrides fractions when set
    double noise_ratio = 1e-4;         // noise_variance = ratio * total amplitude

    GpKernelConfig resolve(double bbox_diagonal) const {
        GpKernelConfig cfg;
        const std::vector<double>& lengths =
            length_scales.empty() ? length_scale_fractions : length_scales;
        if (amplitudes.size() != lengths.size())
            throw ArgumentError("gp config: amplitude and length-scale counts differ");
        for (std::size_t i = 0; i < amplitudes.size(); ++i) {
            const double l = length_scales.empty() ? lengths[i] * bbox_diagonal : lengths[i];
            cfg.scales.push_back({amplitudes[i], l});
        }
        cfg.noise_variance = noise_ratio * cfg.total_amplitude();
        cfg.validate();
        return cfg;
    }
};

/// Full pipeline configuration: adaptation mode, solver settings, and the
/// input/output paths of one registration run.
struct PipelineConfig {
    enum class Adaptation { None, Lb, Gp };

    Adaptation adaptation = Adaptation::Lb;
    double lambda = 0.1; // LB editing and LBRP stiffness
    IcpdConfig icpd;
    GpConfigSpec gp;

    std::string template_path;
    std::string scan_path;
    std::string template_landmarks_path;
    std::string scan_landmarks_path;
    std::string parts_path; // optional
    std::string out_dir;

    void validate() const {
        if (!(lambda > 0.0)) throw ArgumentError("pipeline: lambda must be > 0");
        icpd.validate();
    }
};

inline std::string adaptation_name(PipelineConfig::Adaptation mode) {
    switch (mode) {
        case PipelineConfig::Adaptation::None: return "none";
        case PipelineConfig::Adaptation::Lb: return "lb";
        case PipelineConfig::Adaptation::Gp: return "gp";
    }
    return "none";
}

inline PipelineConfig::Adaptation parse_adaptation(const std::string& name) {
    if (name == "none") return PipelineConfig::Adaptation::None;
    if (name == "lb") return PipelineConfig::Adaptation::Lb;
    if (name == "gp") return PipelineConfig::Adaptation::Gp;
    throw ArgumentError("unknown adaptation mode '" + name + "' (expected none|lb|gp)");
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

inline double parse_double(const std::string& value, const std::string& key) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != value.size()) throw ArgumentError("config: bad numeric value for '" + key + "'");
    return v;
}

inline int parse_int(const std::string& value, const std::string& key) {
    std::size_t pos = 0;
    long v = 0;
    try {
        v = std::stol(value, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != value.size()) throw ArgumentError("config: bad integer value for '" + key + "'");
    return static_cast<int>(v);
}

inline bool parse_bool(const std::string& value, const std::string& key) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ArgumentError("config: bad boolean value for '" + key + "'");
}

inline std::vector<double> parse_double_list(const std::string& value, const std::string& key) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_double(item, key));
    }
    return out;
}

inline std::string format_double_list(const std::vector<double>& values) {
    std::ostringstream out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out << ',';
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.9g", values[i]);
        out << buf;
    }
    return out.str();
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace detail

/// Applies one "section.key = value" setting to the config. Unknown keys are
/// rejected so manifests and config files stay in sync with the code.
inline void apply_config_value(PipelineConfig& cfg, const std::string& section,
                               const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_double_list;
    using detail::parse_int;
    const std::string full = section.empty() ? key : section + "." + key;

    if (section == "pipeline") {
        if (key == "adaptation") { cfg.adaptation = parse_adaptation(value); return; }
        if (key == "lambda") { cfg.lambda = parse_double(value, full); return; }
    } else if (section == "icpd") {
        if (key == "outer_max_iter") { cfg.icpd.outer_max_iter = parse_int(value, full); return; }
        if (key == "corr_stable_fraction") { cfg.icpd.corr_stable_fraction = parse_double(value, full); return; }
        if (key == "subsample_target") {
            if (value == "auto") cfg.icpd.subsample_target.reset();
            else cfg.icpd.subsample_target = parse_int(value, full);
            return;
        }
        if (key == "affine_every_iteration") { cfg.icpd.affine_every_iteration = parse_bool(value, full); return; }
    } else if (section == "cpd_affine" || section == "cpd_nonrigid") {
        CpdConfig& c = section == "cpd_affine" ? cfg.icpd.affine : cfg.icpd.nonrigid;
        if (key == "outlier_weight") { c.outlier_weight = parse_double(value, full); return; }
        if (key == "beta") { c.beta = parse_double(value, full); return; }
        if (key == "lambda") { c.lambda = parse_double(value, full); return; }
        if (key == "max_iter") { c.max_iter = parse_int(value, full); return; }
        if (key == "tol") { c.tol = parse_double(value, full); return; }
        if (key == "prior_strength") { c.prior_strength = parse_double(value, full); return; }
    } else if (section == "gp") {
        if (key == "amplitudes") { cfg.gp.amplitudes = parse_double_list(value, full); return; }
        if (key == "length_scale_fractions") { cfg.gp.length_scale_fractions = parse_double_list(value, full); return; }
        if (key == "length_scales") { cfg.gp.length_scales = parse_double_list(value, full); return; }
        if (key == "noise_ratio") { cfg.gp.noise_ratio = parse_double(value, full); return; }
    } else if (section == "paths") {
        if (key == "template") { cfg.template_path = value; return; }
        if (key == "scan") { cfg.scan_path = value; return; }
        if (key == "template_landmarks") { cfg.template_landmarks_path = value; return; }
        if (key == "scan_landmarks") { cfg.scan_landmarks_path = value; return; }
        if (key == "parts") { cfg.parts_path = value; return; }
        if (key == "out") { cfg.out_dir = value; return; }
    } else if (section == "run") {
        return; // informational manifest section (version, command line)
    }
    throw ArgumentError("config: unknown key '" + full + "'");
}

/// Parses the flat "key = value" config format with [section] headers and
/// '#' comments, applying values over the current contents of `cfg`.
inline void parse_config(std::istream& in, PipelineConfig& cfg) {
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ArgumentError("config: malformed section header at line " +
                                    std::to_string(line_no));
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ArgumentError("config: expected 'key = value' at line " +
                                std::to_string(line_no));
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ArgumentError("config: empty key at line " + std::to_string(line_no));
        apply_config_value(cfg, section, key, value);
    }
}

/// Serializes every effective setting in config-file format. The output reads
/// back into an identical configuration; extra entries describe the run.
inline void write_config(std::ostream& out, const PipelineConfig& cfg,
                         const std::map<std::string, std::string>& run_info = {},
                         const std::vector<std::string>& trailing_comments = {}) {
    using detail::format_double;
    using detail::format_double_list;
    out << "[pipeline]\n";
    out << "adaptation = " << adaptation_name(cfg.adaptation) << "\n";
    out << "lambda = " << format_double(cfg.lambda) << "\n";
    out << "\n[icpd]\n";
    out << "outer_max_iter = " << cfg.icpd.outer_max_iter << "\n";
    out << "corr_stable_fraction = " << format_double(cfg.icpd.corr_stable_fraction) << "\n";
    out << "subsample_target = "
        << (cfg.icpd.subsample_target ? std::to_string(*cfg.icpd.subsample_target)
                                      : std::string("auto"))
        << "\n";
    out << "affine_every_iteration = " << (cfg.icpd.affine_every_iteration ? "true" : "false")
        << "\n";
    const auto write_cpd = [&](const char* name, const CpdConfig& c, bool nonrigid) {
        out << "\n[" << name << "]\n";
        out << "outlier_weight = " << format_double(c.outlier_weight) << "\n";
        if (nonrigid) {
            out << "beta = " << format_double(c.beta) << "\n";
            out << "lambda = " << format_double(c.lambda) << "\n";
        }
        out << "max_iter = " << c.max_iter << "\n";
        out << "tol = " << format_double(c.tol) << "\n";
        if (nonrigid) out << "prior_strength = " << format_double(c.prior_strength) << "\n";
    };
    write_cpd("cpd_affine", cfg.icpd.affine, false);
    write_cpd("cpd_nonrigid", cfg.icpd.nonrigid, true);
    out << "\n[gp]\n";
    out << "amplitudes = " << format_double_list(cfg.gp.amplitudes) << "\n";
    out << "length_scale_fractions = " << format_double_list(cfg.gp.length_scale_fractions)
        << "\n";
    if (!cfg.gp.length_scales.empty())
        out << "length_scales = " << format_double_list(cfg.gp.length_scales) << "\n";
    out << "noise_ratio = " << format_double(cfg.gp.noise_ratio) << "\n";
    out << "\n[paths]\n";
    if (!cfg.template_path.empty()) out << "template = " << cfg.template_path << "\n";
    if (!cfg.scan_path.empty()) out << "scan = " << cfg.scan_path << "\n";
    if (!cfg.template_landmarks_path.empty())
        out << "template_landmarks = " << cfg.template_landmarks_path << "\n";
    if (!cfg.scan_landmarks_path.empty())
        out << "scan_landmarks = " << cfg.scan_landmarks_path << "\n";
    if (!cfg.parts_path.empty()) out << "parts = " << cfg.parts_path << "\n";
    if (!cfg.out_dir.empty()) out << "out = " << cfg.out_dir << "\n";
    if (!run_info.empty()) {
        out << "\n[run]\n";
        for (const auto& [k, v] : run_info) out << k << " = " << v << "\n";
    }
    for (const auto& comment : trailing_comments) out << "# " << comment << "\n";
}

} // namespace meshreg
