#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "meshreg/errors.hpp"
#include "meshreg/gp.hpp"
#include "meshreg/mesh.hpp"
#include "meshreg/nearest.hpp"
#include "meshreg/rigid.hpp"

namespace meshreg {

namespace detail {

/// Deterministic standard-normal stream (Box-Muller over mt19937_64).
class NormalSampler {
public:
    explicit NormalSampler(std::uint64_t seed) : rng_(seed) {}

    double operator()() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 1e-300);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * kNormPi * u2);
        have_spare_ = true;
        return r * std::cos(2.0 * kNormPi * u2);
    }

    Eigen::MatrixXd matrix(Eigen::Index rows, Eigen::Index cols) {
        Eigen::MatrixXd out(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = (*this)();
        return out;
    }

    Eigen::RowVector3d unit_direction() {
        Eigen::RowVector3d v;
        do {
            v = Eigen::RowVector3d((*this)(), (*this)(), (*this)());
        } while (v.norm() < 1e-8);
        return v / v.norm();
    }

private:
    static constexpr double kNormPi = 3.14159265358979323846;
    double uniform() {
        // 53-bit uniform in [0,1)
        return static_cast<double>(rng_() >> 11) * (1.0 / 9007199254740992.0);
    }
    std::mt19937_64 rng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace detail

/// Keeps the flagged vertices and every face whose corners all survive.
/// Returns the submesh and the old->new vertex index map (-1 for dropped).
inline std::pair<TriMesh, std::vector<int>> submesh(const TriMesh& mesh,
                                                    const std::vector<bool>& keep) {
    if (keep.size() != static_cast<std::size_t>(mesh.vertex_count()))
        throw ArgumentError("submesh: keep flag count mismatch");
    std::vector<int> remap(keep.size(), -1);
    int next = 0;
    for (std::size_t i = 0; i < keep.size(); ++i)
        if (keep[i]) remap[i] = next++;

    TriMesh out;
    out.vertices.resize(next, 3);
    for (std::size_t i = 0; i < keep.size(); ++i)
        if (remap[i] >= 0) out.vertices.row(remap[i]) = mesh.vertices.row(static_cast<Eigen::Index>(i));

    std::vector<Eigen::RowVector3i> faces;
    for (int f = 0; f < mesh.face_count(); ++f) {
        const int a = remap[static_cast<std::size_t>(mesh.faces(f, 0))];
        const int b = remap[static_cast<std::size_t>(mesh.faces(f, 1))];
        const int c = remap[static_cast<std::size_t>(mesh.faces(f, 2))];
        if (a >= 0 && b >= 0 && c >= 0) faces.emplace_back(a, b, c);
    }
    out.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
    for (std::size_t f = 0; f < faces.size(); ++f) out.faces.row(static_cast<Eigen::Index>(f)) = faces[f];
    return {out, remap};
}

/// Subdivided icosahedron on the unit sphere. Vertex count is 10 * 4^level + 2.
inline TriMesh make_icosphere(int level = 3, double radius = 1.0) {
    if (level < 0 || level > 7) throw ArgumentError("make_icosphere: level must be in [0,7]");
    if (!(radius > 0.0)) throw ArgumentError("make_icosphere: radius must be > 0");

    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Eigen::RowVector3d> verts = {
        {-1, phi, 0}, {1, phi, 0},   {-1, -phi, 0}, {1, -phi, 0},
        {0, -1, phi}, {0, 1, phi},   {0, -1, -phi}, {0, 1, -phi},
        {phi, 0, -1}, {phi, 0, 1},   {-phi, 0, -1}, {-phi, 0, 1}};
    std::vector<Eigen::RowVector3i> faces = {
        {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
        {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
        {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (auto& v : verts) v.normalize();

    for (int step = 0; step < level; ++step) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = a < b ? std::make_pair(a, b) : std::make_pair(b, a);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            Eigen::RowVector3d m = (verts[static_cast<std::size_t>(a)] +
                                    verts[static_cast<std::size_t>(b)]).normalized();
            verts.push_back(m);
            const int idx = static_cast<int>(verts.size()) - 1;
            midpoint.emplace(key, idx);
            return idx;
        };
        std::vector<Eigen::RowVector3i> next;
        next.reserve(faces.size() * 4);
        for (const auto& f : faces) {
            const int ab = mid(f(0), f(1));
            const int bc = mid(f(1), f(2));
            const int ca = mid(f(2), f(0));
            next.emplace_back(f(0), ab, ca);
            next.emplace_back(f(1), bc, ab);
            next.emplace_back(f(2), ca, bc);
            next.emplace_back(ab, bc, ca);
        }
        faces = std::move(next);
    }

    TriMesh mesh;
    mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
    for (std::size_t i = 0; i < verts.size(); ++i)
        mesh.vertices.row(static_cast<Eigen::Index>(i)) = radius * verts[i];
    mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
    for (std::size_t i = 0; i < faces.size(); ++i) mesh.faces.row(static_cast<Eigen::Index>(i)) = faces[i];
    return mesh;
}

namespace detail {

// feature directions of the procedural head (unit vectors, pre-shaping):
// +z is the face, +y up, +x the anatomical left (viewer's right)
inline Eigen::RowVector3d head_nose_dir() { return Eigen::RowVector3d(0.0, -0.12, 1.0).normalized(); }
inline Eigen::RowVector3d head_left_ear_dir() { return Eigen::RowVector3d(1.0, 0.05, -0.08).normalized(); }
inline Eigen::RowVector3d head_right_ear_dir() { return Eigen::RowVector3d(-1.0, 0.05, -0.08).normalized(); }
inline Eigen::RowVector3d head_left_eye_dir() { return Eigen::RowVector3d(0.32, 0.28, 1.0).normalized(); }
inline Eigen::RowVector3d head_right_eye_dir() { return Eigen::RowVector3d(-0.32, 0.28, 1.0).normalized(); }

inline double angle_between(const Eigen::RowVector3d& a, const Eigen::RowVector3d& b) {
    const double c = std::clamp(a.dot(b), -1.0, 1.0);
    return std::acos(c);
}

} // namespace detail

/// Small neutral-head mesh: a subdivided icosphere shaped into an ellipsoid
/// with a nose, two ears, and shallow eye sockets. Default level 4 gives 2562
/// vertices; level 5 gives 10242.
inline TriMesh make_head_mesh(int level = 4) {
    TriMesh mesh = make_icosphere(level, 1.0);
    const Eigen::RowVector3d nose = detail::head_nose_dir();
    const Eigen::RowVector3d lear = detail::head_left_ear_dir();
    const Eigen::RowVector3d rear = detail::head_right_ear_dir();
    const Eigen::RowVector3d leye = detail::head_left_eye_dir();
    const Eigen::RowVector3d reye = detail::head_right_eye_dir();

    for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
        const Eigen::RowVector3d dir = mesh.vertices.row(i).normalized();
        double r = 1.0;
        auto bump = [&](const Eigen::RowVector3d& center, double height, double width) {
            const double theta = detail::angle_between(dir, center);
            r += height * std::exp(-(theta * theta) / (width * width));
        };
        bump(nose, 0.28, 0.22);  // nose
        bump(lear, 0.18, 0.20);  // ears
        bump(rear, 0.18, 0.20);
        bump(leye, -0.06, 0.18); // eye sockets
        bump(reye, -0.06, 0.18);
        Eigen::RowVector3d v = dir * r;
        v(0) *= 0.78; // skull proportions
        v(1) *= 1.02;
        v(2) *= 0.88;
        mesh.vertices.row(i) = v;
    }
    return mesh;
}

/// The 12 canonical landmarks of the procedural head: three per part for
/// nose, left_ear, right_ear, and eyes, as nearest-vertex picks around each
/// feature.
inline LandmarkSpec head_landmarks(const TriMesh& head) {
    struct Probe {
        Eigen::RowVector3d dir;
        const char* label;
    };
    const Eigen::RowVector3d nose = detail::head_nose_dir();
    const Eigen::RowVector3d lear = detail::head_left_ear_dir();
    const Eigen::RowVector3d rear = detail::head_right_ear_dir();
    const Eigen::RowVector3d leye = detail::head_left_eye_dir();
    const Eigen::RowVector3d reye = detail::head_right_eye_dir();
    const Eigen::RowVector3d up(0.0, 1.0, 0.0);
    const Eigen::RowVector3d right(1.0, 0.0, 0.0);

    auto offset = [](const Eigen::RowVector3d& base, const Eigen::RowVector3d& toward,
                     double amount) { return (base + amount * toward).normalized(); };

    std::vector<Probe> probes = {
        {nose, "nose"},
        {offset(nose, up, 0.18), "nose"},
        {offset(nose, right, 0.16), "nose"},
        {lear, "left_ear"},
        {offset(lear, up, 0.2), "left_ear"},
        {offset(lear, Eigen::RowVector3d(0, 0, 1), 0.2), "left_ear"},
        {rear, "right_ear"},
        {offset(rear, up, 0.2), "right_ear"},
        {offset(rear, Eigen::RowVector3d(0, 0, 1), 0.2), "right_ear"},
        {leye, "eyes"},
        {reye, "eyes"},
        {offset((leye + reye).normalized(), up, 0.25), "eyes"},
    };

    LandmarkSpec lm;
    std::vector<bool> taken(static_cast<std::size_t>(head.vertex_count()), false);
    for (const auto& probe : probes) {
        // pick on the shaped surface: scale the unit probe to head radius
        int best = -1;
        double best_d = 0.0;
        for (Eigen::Index i = 0; i < head.vertices.rows(); ++i) {
            if (taken[static_cast<std::size_t>(i)]) continue;
            const double d =
                detail::angle_between(head.vertices.row(i).normalized(), probe.dir);
            if (best < 0 || d < best_d) {
                best = static_cast<int>(i);
                best_d = d;
            }
        }
        taken[static_cast<std::size_t>(best)] = true;
        lm.template_indices.push_back(best);
        lm.part_labels.emplace_back(probe.label);
    }
    lm.scan_points.resize(static_cast<Eigen::Index>(lm.template_indices.size()), 3);
    for (std::size_t i = 0; i < lm.template_indices.size(); ++i)
        lm.scan_points.row(static_cast<Eigen::Index>(i)) = head.vertices.row(lm.template_indices[i]);
    return lm;
}

/// Control parameters for one synthetic registration case. Magnitudes are
/// fractions of the template bounding-box diagonal.
struct SyntheticSpec {
    double warp_magnitude = 0.05;   // mean smooth-warp displacement
    double warp_smoothness = 0.35;  // kernel length scale
    double part_shift = 0.03;       // rigid shift of nose and ears
    double noise_sigma = 0.002;     // per-vertex Gaussian noise on the scan
    double occlusion_fraction = 0.0; // fraction of scan vertices cropped away
    int mesh_level = 3;             // icosphere subdivision of the head

    void validate() const {
        if (warp_magnitude < 0.0 || warp_magnitude > 0.5)
            throw ArgumentError("synthetic spec: warp_magnitude must be in [0, 0.5]");
        if (!(warp_smoothness > 0.0) || warp_smoothness > 2.0)
            throw ArgumentError("synthetic spec: warp_smoothness must be in (0, 2]");
        if (part_shift < 0.0 || part_shift > 0.5)
            throw ArgumentError("synthetic spec: part_shift must be in [0, 0.5]");
        if (noise_sigma < 0.0 || noise_sigma > 0.1)
            throw ArgumentError("synthetic spec: noise_sigma must be in [0, 0.1]");
        if (occlusion_fraction < 0.0 || occlusion_fraction > 0.5)
            throw ArgumentError("synthetic spec: occlusion_fraction must be in [0, 0.5]");
        if (mesh_level < 1 || mesh_level > 6)
            throw ArgumentError("synthetic spec: mesh_level must be in [1, 6]");
    }
};

struct SyntheticCase {
    TriMesh tmpl;
    TriMesh scan;
    Eigen::MatrixXd truth; // p x 3 ground-truth target position per template vertex
    LandmarkSpec landmarks; // template indices + warped scan-space positions
};

/// Builds a deterministic synthetic registration case: the head template
/// warped by a smooth random field plus local rigid part shifts, with
/// optional vertex noise and directional crop occlusion on the scan.
/// The smooth field is rescaled so its mean displacement equals
/// warp_magnitude * bbox diagonal exactly.
inline SyntheticCase make_synthetic_case(std::uint64_t seed, const SyntheticSpec& spec = {}) {
    spec.validate();

    SyntheticCase out;
    out.tmpl = make_head_mesh(spec.mesh_level);
    out.landmarks = head_landmarks(out.tmpl);
    const double diag = out.tmpl.bbox_diagonal();
    const Eigen::Index p = out.tmpl.vertices.rows();

    detail::NormalSampler rng(seed * 0x9E3779B97F4A7C15ULL + 1ULL);

    // smooth field: kernel-smoothed random coefficients on control points
    Eigen::MatrixXd warp = Eigen::MatrixXd::Zero(p, 3);
    if (spec.warp_magnitude > 0.0) {
        const int n_controls = 32;
        const std::vector<int> ctrl_idx = farthest_point_sampling(out.tmpl.vertices, n_controls);
        Eigen::MatrixXd ctrl(static_cast<Eigen::Index>(ctrl_idx.size()), 3);
        for (std::size_t i = 0; i < ctrl_idx.size(); ++i)
            ctrl.row(static_cast<Eigen::Index>(i)) = out.tmpl.vertices.row(ctrl_idx[i]);
        GpKernelConfig kernel;
        kernel.scales.push_back({1.0, spec.warp_smoothness * diag});
        const Eigen::MatrixXd K = kernel_matrix(out.tmpl.vertices, ctrl, kernel);
        warp = K * rng.matrix(static_cast<Eigen::Index>(ctrl_idx.size()), 3);
        const double mean_norm = warp.rowwise().norm().mean();
        if (mean_norm > 0.0) warp *= spec.warp_magnitude * diag / mean_norm;
    }

    // local rigid shifts of nose and ears, Gaussian falloff around the part
    if (spec.part_shift > 0.0) {
        const double radius = 0.14 * diag;
        for (const char* part : {"nose", "left_ear", "right_ear"}) {
            Eigen::RowVector3d center = Eigen::RowVector3d::Zero();
            int count = 0;
            for (int i = 0; i < out.landmarks.count(); ++i) {
                if (out.landmarks.part_labels[static_cast<std::size_t>(i)] == part) {
                    center += out.tmpl.vertices.row(out.landmarks.template_indices[static_cast<std::size_t>(i)]);
                    ++count;
                }
            }
            center /= static_cast<double>(count);
            const Eigen::RowVector3d shift = rng.unit_direction() * spec.part_shift * diag;
            for (Eigen::Index i = 0; i < p; ++i) {
                const double d2 = (out.tmpl.vertices.row(i) - center).squaredNorm();
                warp.row(i) += shift * std::exp(-d2 / (2.0 * radius * radius));
            }
        }
    }

    out.truth = out.tmpl.vertices + warp;

    Eigen::MatrixXd scan_verts = out.truth;
    if (spec.noise_sigma > 0.0)
        scan_verts += spec.noise_sigma * diag * rng.matrix(p, 3);

    out.scan.vertices = scan_verts;
    out.scan.faces = out.tmpl.faces;
    if (spec.occlusion_fraction > 0.0) {
        const Eigen::RowVector3d dir = rng.unit_direction();
        Eigen::VectorXd score = scan_verts * dir.transpose();
        std::vector<int> order(static_cast<std::size_t>(p));
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return score(a) > score(b) || (score(a) == score(b) && a < b);
        });
        const int n_drop = static_cast<int>(std::ceil(spec.occlusion_fraction * static_cast<double>(p)));
        std::vector<bool> keep(static_cast<std::size_t>(p), true);
        for (int k = 0; k < n_drop; ++k) keep[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = false;
        out.scan = submesh(out.scan, keep).first;
    }

    // landmark positions follow the noiseless warp
    for (int i = 0; i < out.landmarks.count(); ++i)
        out.landmarks.scan_points.row(i) = out.truth.row(out.landmarks.template_indices[static_cast<std::size_t>(i)]);
    return out;
}

} // namespace meshreg
