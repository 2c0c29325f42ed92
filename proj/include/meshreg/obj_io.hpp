#pragma once

#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "meshreg/errors.hpp"
#include "meshreg/mesh.hpp"

namespace meshreg {

namespace detail {

// "%#.9g": 9 significant digits, trailing zeros kept. Deterministic output.
inline std::string fmt_g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%#.9g", v);
    return buf;
}

// First slash-separated field of an OBJ face vertex spec ("v", "v/vt",
// "v/vt/vn", "v//vn").
inline long obj_vertex_index(const std::string& token, int line_no) {
    const std::size_t slash = token.find('/');
    const std::string head = slash == std::string::npos ? token : token.substr(0, slash);
    if (head.empty())
        throw DataError("OBJ parse error at line " + std::to_string(line_no) +
                        ": empty vertex index in face record");
    std::size_t pos = 0;
    long idx = 0;
    try {
        idx = std::stol(head, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != head.size())
        throw DataError("OBJ parse error at line " + std::to_string(line_no) +
                        ": bad vertex index '" + head + "'");
    return idx;
}

} // namespace detail

/// Parses an ASCII Wavefront OBJ stream into a TriMesh.
///
/// `v` records may carry optional r g b vertex colors (parsed and discarded),
/// `f` records may carry v/vt/vn slashes; polygons are fan-triangulated.
/// Texture coordinates and normals are discarded. 1-based indices become
/// 0-based; malformed records raise DataError with the line number.
inline TriMesh parse_obj(std::istream& in) {
    std::vector<Eigen::RowVector3d> verts;
    std::vector<Eigen::RowVector3i> faces;
    std::vector<int> face_lines; // for index-range reporting

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') continue;

        if (tag == "v") {
            double x, y, z;
            if (!(ls >> x >> y >> z))
                throw DataError("OBJ parse error at line " + std::to_string(line_no) +
                                ": vertex record needs 3 coordinates");
            // optional vertex colors are ignored
            verts.emplace_back(x, y, z);
        } else if (tag == "f") {
            std::vector<long> idx;
            std::string token;
            while (ls >> token) idx.push_back(detail::obj_vertex_index(token, line_no));
            if (idx.size() < 3)
                throw DataError("OBJ parse error at line " + std::to_string(line_no) +
                                ": face record needs at least 3 vertices");
            for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
                faces.emplace_back(static_cast<int>(idx[0] - 1),
                                   static_cast<int>(idx[k] - 1),
                                   static_cast<int>(idx[k + 1] - 1));
                face_lines.push_back(line_no);
            }
        }
        // vt, vn, o, g, s, usemtl, mtllib ... skipped
    }

    TriMesh mesh;
    mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
    for (std::size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = verts[i];
    mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
    for (std::size_t i = 0; i < faces.size(); ++i) mesh.faces.row(static_cast<Eigen::Index>(i)) = faces[i];

    const int p = mesh.vertex_count();
    for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f) {
        for (int k = 0; k < 3; ++k) {
            const int v = mesh.faces(f, k);
            if (v < 0 || v >= p)
                throw DataError("OBJ structural error at line " +
                                std::to_string(face_lines[static_cast<std::size_t>(f)]) +
                                ": face index " + std::to_string(v + 1) +
                                " out of range (mesh has " + std::to_string(p) + " vertices)");
        }
        if (mesh.faces(f, 0) == mesh.faces(f, 1) || mesh.faces(f, 1) == mesh.faces(f, 2) ||
            mesh.faces(f, 0) == mesh.faces(f, 2))
            throw DataError("OBJ structural error at line " +
                            std::to_string(face_lines[static_cast<std::size_t>(f)]) +
                            ": degenerate face (repeated vertex index)");
    }
    if (!mesh.vertices.allFinite())
        throw DataError("OBJ structural error: non-finite vertex coordinate");
    return mesh;
}

inline TriMesh parse_obj(const std::string& text) {
    std::istringstream in(text);
    return parse_obj(in);
}

/// Writes a TriMesh as ASCII OBJ, deterministically: 9 significant digits,
/// vertices then faces. If `vertex_scalars` are given, each `v` line carries
/// r g b from a blue->red linear map normalized by the scalar maximum
/// (all-zero scalars map to the blue end).
inline void write_obj(std::ostream& out, const TriMesh& mesh,
                      const std::optional<Eigen::VectorXd>& vertex_scalars = std::nullopt) {
    if (vertex_scalars && vertex_scalars->size() != mesh.vertices.rows())
        throw ArgumentError("vertex_scalars length does not match vertex count");
    double smax = 0.0;
    if (vertex_scalars && vertex_scalars->size() > 0) smax = vertex_scalars->maxCoeff();

    for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
        out << "v " << detail::fmt_g9(mesh.vertices(i, 0)) << ' '
            << detail::fmt_g9(mesh.vertices(i, 1)) << ' '
            << detail::fmt_g9(mesh.vertices(i, 2));
        if (vertex_scalars) {
            const double t = smax > 0.0 ? (*vertex_scalars)(i) / smax : 0.0;
            out << ' ' << detail::fmt_g9(t) << ' ' << detail::fmt_g9(0.0) << ' '
                << detail::fmt_g9(1.0 - t);
        }
        out << '\n';
    }
    for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f)
        out << "f " << mesh.faces(f, 0) + 1 << ' ' << mesh.faces(f, 1) + 1 << ' '
            << mesh.faces(f, 2) + 1 << '\n';
}

inline std::string write_obj_string(const TriMesh& mesh,
                                    const std::optional<Eigen::VectorXd>& vertex_scalars = std::nullopt) {
    std::ostringstream out;
    write_obj(out, mesh, vertex_scalars);
    return out.str();
}

} // namespace meshreg
