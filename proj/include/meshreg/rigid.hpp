#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>
#include <array>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "meshreg/errors.hpp"
#include "meshreg/mesh.hpp"

namespace meshreg {

/// x -> scale * rotation * x + translation. Rotation is proper (det +1);
/// scale is 1.0 for rigid transforms.
struct SimilarityTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    double scale = 1.0;

    Eigen::RowVector3d apply(const Eigen::RowVector3d& x) const {
        return (scale * (rotation * x.transpose()) + translation).transpose();
    }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& points) const {
        Eigen::MatrixXd out = scale * (points * rotation.transpose());
        out.rowwise() += translation.transpose();
        return out;
    }

    SimilarityTransform inverse() const {
        SimilarityTransform inv;
        inv.rotation = rotation.transpose();
        inv.scale = 1.0 / scale;
        inv.translation = -inv.scale * (inv.rotation * translation);
        return inv;
    }
};

/// Sparse landmark pairing: template vertex indices against scan-space 3D
/// points, in matching order, with optional per-landmark part labels.
struct LandmarkSpec {
    std::vector<int> template_indices;
    Eigen::MatrixXd scan_points;          // k x 3
    std::vector<std::string> part_labels; // empty, or one label per landmark

    int count() const { return static_cast<int>(template_indices.size()); }

    void validate(int template_vertex_count) const {
        if (scan_points.rows() != static_cast<Eigen::Index>(template_indices.size()))
            throw ArgumentError("landmark spec: index/point count mismatch");
        if (!part_labels.empty() && part_labels.size() != template_indices.size())
            throw ArgumentError("landmark spec: part label count mismatch");
        for (int idx : template_indices)
            if (idx < 0 || idx >= template_vertex_count)
                throw ArgumentError("landmark spec: template index " + std::to_string(idx) +
                                    " out of range");
        if (!scan_points.allFinite())
            throw ArgumentError("landmark spec: non-finite scan point");
    }

    /// Template-side landmark positions gathered from a template mesh.
    Eigen::MatrixXd template_points(const TriMesh& tmpl) const {
        Eigen::MatrixXd out(count(), 3);
        for (int i = 0; i < count(); ++i) out.row(i) = tmpl.vertices.row(template_indices[static_cast<std::size_t>(i)]);
        return out;
    }
};

inline const std::array<std::string, 6>& known_part_labels() {
    static const std::array<std::string, 6> labels = {"eyes",     "nose",      "mouth",
                                                      "left_ear", "right_ear", "other"};
    return labels;
}

inline bool is_known_part_label(const std::string& label) {
    for (const auto& l : known_part_labels())
        if (l == label) return true;
    return false;
}

/// Closed-form least-squares fit of dst ~ s R src + t over paired points.
///
/// Cross-covariance SVD with reflection correction (det forced to +1).
/// Optional per-pair weights (uniform when empty). Throws DataError when the
/// points are coincident or collinear (rotation not determined).
inline SimilarityTransform procrustes(const Eigen::MatrixXd& src, const Eigen::MatrixXd& dst,
                                      bool with_scale = false,
                                      const Eigen::VectorXd& weights = Eigen::VectorXd()) {
    if (src.rows() != dst.rows()) throw ArgumentError("procrustes: point count mismatch");
    if (src.rows() < 3) throw ArgumentError("procrustes: need at least 3 point pairs");

    Eigen::VectorXd w = weights;
    if (w.size() == 0) w = Eigen::VectorXd::Ones(src.rows());
    if (w.size() != src.rows()) throw ArgumentError("procrustes: weight count mismatch");
    const double wsum = w.sum();
    if (!(wsum > 0.0)) throw ArgumentError("procrustes: weights must have positive sum");

    const Eigen::RowVector3d src_mean = (w.transpose() * src) / wsum;
    const Eigen::RowVector3d dst_mean = (w.transpose() * dst) / wsum;
    const Eigen::MatrixXd src_c = src.rowwise() - src_mean;
    const Eigen::MatrixXd dst_c = dst.rowwise() - dst_mean;

    const Eigen::Matrix3d cov =
        (src_c.array().colwise() * w.array()).matrix().transpose() * dst_c / wsum;

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d sv = svd.singularValues();
    const double src_var = (src_c.array().square().colwise() * w.array()).sum() / wsum;
    // rank < 2 means coincident or collinear input: rotation is ambiguous
    if (!(sv(1) > 1e-12 * std::max(sv(0), src_var)))
        throw DataError("procrustes: rank-deficient input (coincident or collinear points)");

    Eigen::Vector3d flip = Eigen::Vector3d::Ones();
    if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) flip(2) = -1.0;

    SimilarityTransform T;
    T.rotation = svd.matrixV() * flip.asDiagonal() * svd.matrixU().transpose();
    if (with_scale) {
        if (!(src_var > 0.0)) throw DataError("procrustes: coincident source points");
        T.scale = (sv.array() * flip.array()).sum() / src_var;
        if (!(T.scale > 0.0)) throw DataError("procrustes: non-positive scale estimate");
    }
    T.translation = dst_mean.transpose() - T.scale * (T.rotation * src_mean.transpose());
    return T;
}

/// Applies a similarity transform to every vertex; connectivity is unchanged.
inline TriMesh apply_transform(const TriMesh& mesh, const SimilarityTransform& T) {
    TriMesh out;
    out.vertices = T.apply(mesh.vertices);
    out.faces = mesh.faces;
    return out;
}

struct AlignedScan {
    TriMesh scan;                  // scan moved into the template frame
    SimilarityTransform transform; // the transform that was applied
    LandmarkSpec landmarks;        // scan_points updated by the same transform
};

/// Rigidly (no scale) aligns the scan's landmark points onto the template's
/// landmark vertex positions and applies that transform to the whole scan.
inline AlignedScan align_scan_to_template(const TriMesh& scan, const LandmarkSpec& lm,
                                          const TriMesh& tmpl) {
    lm.validate(tmpl.vertex_count());
    if (lm.count() < 3) throw ArgumentError("alignment needs at least 3 landmarks");

    AlignedScan out;
    out.transform = procrustes(lm.scan_points, lm.template_points(tmpl), /*with_scale=*/false);
    out.scan = apply_transform(scan, out.transform);
    out.landmarks = lm;
    out.landmarks.scan_points = out.transform.apply(lm.scan_points);
    return out;
}

/// Template landmark file: one 0-based vertex index per line, '#' comments.
inline std::vector<int> parse_template_landmarks(std::istream& in) {
    std::vector<int> indices;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ls(line);
        long idx;
        if (!(ls >> idx)) {
            std::string rest;
            if (ls.clear(), ls >> rest)
                throw DataError("template landmark file: bad record at line " +
                                std::to_string(line_no));
            continue; // blank or comment-only line
        }
        std::string extra;
        if (ls >> extra)
            throw DataError("template landmark file: trailing tokens at line " +
                            std::to_string(line_no));
        if (idx < 0)
            throw DataError("template landmark file: negative index at line " +
                            std::to_string(line_no));
        indices.push_back(static_cast<int>(idx));
    }
    return indices;
}

/// Scan landmark file: one "x y z" triple per line, optional fourth token is
/// a part label. Order and count must match the template landmark file.
inline void parse_scan_landmarks(std::istream& in, Eigen::MatrixXd& points,
                                 std::vector<std::string>& labels) {
    std::vector<Eigen::RowVector3d> rows;
    std::vector<std::string> row_labels;
    bool any_label = false;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ls(line);
        double x, y, z;
        if (!(ls >> x)) continue; // blank line
        if (!(ls >> y >> z))
            throw DataError("scan landmark file: bad record at line " + std::to_string(line_no));
        std::string label;
        if (ls >> label) {
            if (!is_known_part_label(label))
                throw DataError("scan landmark file: unknown part label '" + label +
                                "' at line " + std::to_string(line_no));
            any_label = true;
        }
        rows.emplace_back(x, y, z);
        row_labels.push_back(label);
    }
    points.resize(static_cast<Eigen::Index>(rows.size()), 3);
    for (std::size_t i = 0; i < rows.size(); ++i) points.row(static_cast<Eigen::Index>(i)) = rows[i];
    labels = any_label ? row_labels : std::vector<std::string>();
}

/// Part definition file: "label index" per line, assigning landmark ordinals
/// (0-based positions in the landmark list) to parts.
inline std::vector<std::string> parse_parts_file(std::istream& in, int landmark_count) {
    std::vector<std::string> labels(static_cast<std::size_t>(landmark_count));
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ls(line);
        std::string label;
        long ordinal;
        if (!(ls >> label)) continue;
        if (!(ls >> ordinal))
            throw DataError("parts file: bad record at line " + std::to_string(line_no));
        if (!is_known_part_label(label))
            throw DataError("parts file: unknown part label '" + label + "' at line " +
                            std::to_string(line_no));
        if (ordinal < 0 || ordinal >= landmark_count)
            throw DataError("parts file: landmark ordinal " + std::to_string(ordinal) +
                            " out of range at line " + std::to_string(line_no));
        labels[static_cast<std::size_t>(ordinal)] = label;
    }
    for (auto& l : labels)
        if (l.empty()) l = "other";
    return labels;
}

/// Loads a complete LandmarkSpec from the two landmark files (and an optional
/// parts file, which overrides labels carried in the scan landmark file).
inline LandmarkSpec load_landmarks(std::istream& template_file, std::istream& scan_file,
                                   std::istream* parts_file = nullptr) {
    LandmarkSpec lm;
    lm.template_indices = parse_template_landmarks(template_file);
    parse_scan_landmarks(scan_file, lm.scan_points, lm.part_labels);
    if (lm.scan_points.rows() != static_cast<Eigen::Index>(lm.template_indices.size()))
        throw DataError("landmark files disagree on landmark count (" +
                        std::to_string(lm.template_indices.size()) + " indices vs " +
                        std::to_string(lm.scan_points.rows()) + " points)");
    if (parts_file)
        lm.part_labels = parse_parts_file(*parts_file, static_cast<int>(lm.template_indices.size()));
    return lm;
}

} // namespace meshreg
