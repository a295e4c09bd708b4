#ifndef SPECTREE_MESH_HPP
#define SPECTREE_MESH_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"

namespace spectree {

using Face = std::array<std::uint32_t, 3>;

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  Vec3 extent() const { return max - min; }
  double diagonal() const { return extent().norm(); }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

inline Aabb bounding_box(const std::vector<Vec3>& points) {
  if (points.empty()) fail_data("bounding box of an empty point set");
  Aabb box{points.front(), points.front()};
  for (const auto& p : points) {
    box.min = box.min.cwiseMin(p);
    box.max = box.max.cwiseMax(p);
  }
  return box;
}

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

constexpr double kMinFaceArea = 1e-12;

/// Static triangle mesh. Positions are held as doubles; files store floats.
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;

  std::size_t vertex_count() const { return vertices.size(); }
  std::size_t face_count() const { return faces.size(); }
  Aabb bounds() const { return bounding_box(vertices); }

  const Vec3& corner(std::size_t face, int which) const { return vertices[faces[face][which]]; }
  double face_area(std::size_t face) const { return triangle_area(corner(face, 0), corner(face, 1), corner(face, 2)); }
  Vec3 face_normal(std::size_t face) const {
    return (corner(face, 1) - corner(face, 0)).cross(corner(face, 2) - corner(face, 0)).normalized();
  }

  /// Throws if any index is out of range or the mesh is empty.
  void validate() const {
    if (vertices.empty()) fail_data("mesh has no vertices");
    if (faces.empty()) fail_data("mesh has no faces");
    for (const auto& f : faces)
      for (auto idx : f)
        if (idx >= vertices.size()) fail_data("face index " + std::to_string(idx) + " out of range");
  }
};

/// Per-vertex displacement relative to the rest mesh over `frames` frames.
/// Layout: values[(t * vertices + i) * 3 + axis].
struct MotionSequence {
  std::size_t frames = 0;
  std::size_t vertices = 0;
  double fps = 24.0;
  std::vector<double> values;

  MotionSequence() = default;
  MotionSequence(std::size_t frame_count, std::size_t vertex_count, double rate)
      : frames(frame_count), vertices(vertex_count), fps(rate), values(frame_count * vertex_count * 3, 0.0) {}

  double& at(std::size_t t, std::size_t i, int axis) { return values[(t * vertices + i) * 3 + axis]; }
  double at(std::size_t t, std::size_t i, int axis) const { return values[(t * vertices + i) * 3 + axis]; }
  Vec3 displacement(std::size_t t, std::size_t i) const {
    const double* p = &values[(t * vertices + i) * 3];
    return {p[0], p[1], p[2]};
  }
  void set(std::size_t t, std::size_t i, const Vec3& d) {
    double* p = &values[(t * vertices + i) * 3];
    p[0] = d.x();
    p[1] = d.y();
    p[2] = d.z();
  }
  const double* frame(std::size_t t) const { return values.data() + t * vertices * 3; }
  double* frame(std::size_t t) { return values.data() + t * vertices * 3; }

  void validate() const {
    if (frames < 2) fail_data("motion needs at least 2 frames");
    if (values.size() != frames * vertices * 3) fail_data("motion payload size mismatch");
    for (double v : values)
      if (!std::isfinite(v)) fail_data("motion contains a non-finite displacement");
    for (std::size_t i = 0; i < vertices * 3; ++i)
      if (values[i] != 0.0) fail_data("motion frame 0 is not the rest frame");
  }
};

struct LoadedMesh {
  TriMesh mesh;
  std::size_t dropped_faces = 0;
};

namespace detail {

inline std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

// Appends a polygon as a triangle fan, dropping degenerate triangles.
inline void add_polygon(TriMesh& mesh, const std::vector<std::int64_t>& poly, std::size_t& dropped) {
  if (poly.size() < 3) fail_data("face with fewer than 3 vertices");
  for (auto idx : poly)
    if (idx < 0 || static_cast<std::size_t>(idx) >= mesh.vertices.size())
      fail_data("face index " + std::to_string(idx) + " out of range");
  for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
    Face f{static_cast<std::uint32_t>(poly[0]), static_cast<std::uint32_t>(poly[k]),
           static_cast<std::uint32_t>(poly[k + 1])};
    if (triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]) > kMinFaceArea)
      mesh.faces.push_back(f);
    else
      ++dropped;
  }
}

inline LoadedMesh load_obj(std::istream& in) {
  LoadedMesh out;
  std::vector<std::vector<std::int64_t>> polys;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) fail_data("malformed OBJ vertex: " + line);
      out.mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<std::int64_t> poly;
      std::string tok;
      while (ls >> tok) {
        auto slash = tok.find('/');
        std::int64_t idx = std::stoll(tok.substr(0, slash));
        // OBJ indices are 1-based; negative ones count back from the current end.
        poly.push_back(idx < 0 ? static_cast<std::int64_t>(out.mesh.vertices.size()) + idx : idx - 1);
      }
      polys.push_back(std::move(poly));
    }
  }
  for (const auto& p : polys) add_polygon(out.mesh, p, out.dropped_faces);
  return out;
}

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

inline PlyType ply_type(const std::string& name) {
  if (name == "char" || name == "int8") return PlyType::i8;
  if (name == "uchar" || name == "uint8") return PlyType::u8;
  if (name == "short" || name == "int16") return PlyType::i16;
  if (name == "ushort" || name == "uint16") return PlyType::u16;
  if (name == "int" || name == "int32") return PlyType::i32;
  if (name == "uint" || name == "uint32") return PlyType::u32;
  if (name == "float" || name == "float32") return PlyType::f32;
  if (name == "double" || name == "float64") return PlyType::f64;
  fail_data("unsupported PLY property type '" + name + "'");
}

inline double ply_read_binary(std::istream& in, PlyType t) {
  switch (t) {
    case PlyType::i8: return le::get<std::int8_t>(in);
    case PlyType::u8: return le::get<std::uint8_t>(in);
    case PlyType::i16: return le::get<std::int16_t>(in);
    case PlyType::u16: return le::get<std::uint16_t>(in);
    case PlyType::i32: return le::get<std::int32_t>(in);
    case PlyType::u32: return le::get<std::uint32_t>(in);
    case PlyType::f32: return le::get<float>(in);
    case PlyType::f64: return le::get<double>(in);
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::f32;
  bool is_list = false;
  PlyType count_type = PlyType::u8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

struct PlyHeader {
  bool binary = false;
  std::vector<PlyElement> elements;
};

inline PlyHeader read_ply_header(std::istream& in) {
  PlyHeader h;
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) fail_data("not a PLY file");
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") h.binary = false;
      else if (fmt == "binary_little_endian") h.binary = true;
      else fail_data("unsupported PLY format '" + fmt + "'");
    } else if (tag == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      h.elements.push_back(e);
    } else if (tag == "property") {
      if (h.elements.empty()) fail_data("PLY property before element");
      PlyProperty p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ls >> count_type >> item_type >> p.name;
        p.is_list = true;
        p.count_type = ply_type(count_type);
        p.type = ply_type(item_type);
      } else {
        p.type = ply_type(type);
        ls >> p.name;
      }
      h.elements.back().props.push_back(p);
    } else if (tag == "end_header") {
      return h;
    }
  }
  fail_data("PLY header missing end_header");
}

inline LoadedMesh load_ply(std::istream& in) {
  PlyHeader h = read_ply_header(in);
  LoadedMesh out;
  std::vector<std::vector<std::int64_t>> polys;
  for (const auto& e : h.elements) {
    for (std::size_t row = 0; row < e.count; ++row) {
      Vec3 pos = Vec3::Zero();
      std::vector<std::int64_t> poly;
      std::istringstream ascii_line;
      if (!h.binary) {
        std::string line;
        if (!std::getline(in, line)) fail_data("PLY body truncated");
        ascii_line.str(line);
      }
      auto scalar = [&](PlyType t) {
        if (h.binary) return ply_read_binary(in, t);
        double v;
        if (!(ascii_line >> v)) fail_data("PLY ascii row truncated");
        return v;
      };
      for (const auto& p : e.props) {
        if (p.is_list) {
          auto n = static_cast<std::size_t>(scalar(p.count_type));
          std::vector<std::int64_t> items(n);
          for (auto& item : items) item = static_cast<std::int64_t>(scalar(p.type));
          if (e.name == "face" && (p.name == "vertex_indices" || p.name == "vertex_index")) poly = std::move(items);
        } else {
          double v = scalar(p.type);
          if (e.name == "vertex") {
            if (p.name == "x") pos.x() = v;
            else if (p.name == "y") pos.y() = v;
            else if (p.name == "z") pos.z() = v;
          }
        }
      }
      if (e.name == "vertex") out.mesh.vertices.push_back(pos);
      else if (e.name == "face") polys.push_back(std::move(poly));
    }
  }
  for (const auto& p : polys) add_polygon(out.mesh, p, out.dropped_faces);
  return out;
}

}  // namespace detail

/// Loads an OBJ or PLY mesh, dropping faces with area at or below kMinFaceArea.
inline LoadedMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open mesh file " + path.string());
  const std::string ext = detail::lower_extension(path);
  LoadedMesh out;
  if (ext == ".obj") out = detail::load_obj(in);
  else if (ext == ".ply") out = detail::load_ply(in);
  else fail_data("unsupported mesh format '" + ext + "'");
  if (out.mesh.vertices.empty()) fail_data("mesh " + path.string() + " has no vertices");
  if (out.mesh.faces.empty()) fail_data("mesh " + path.string() + " has no valid faces");
  return out;
}

/// Writes OBJ (ascii) or binary little-endian PLY, chosen by extension.
inline void save_mesh(const TriMesh& mesh, const std::filesystem::path& path) {
  const std::string ext = detail::lower_extension(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot write mesh file " + path.string());
  if (ext == ".obj") {
    out.precision(9);
    for (const auto& v : mesh.vertices)
      out << "v " << static_cast<float>(v.x()) << ' ' << static_cast<float>(v.y()) << ' '
          << static_cast<float>(v.z()) << '\n';
    for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  } else if (ext == ".ply") {
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << mesh.vertices.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "element face " << mesh.faces.size() << "\n"
        << "property list uchar uint vertex_indices\nend_header\n";
    for (const auto& v : mesh.vertices) {
      le::put(out, static_cast<float>(v.x()));
      le::put(out, static_cast<float>(v.y()));
      le::put(out, static_cast<float>(v.z()));
    }
    for (const auto& f : mesh.faces) {
      le::put<std::uint8_t>(out, 3);
      for (auto idx : f) le::put<std::uint32_t>(out, idx);
    }
  } else {
    fail_usage("unsupported mesh format '" + ext + "'");
  }
  if (!out) fail_runtime("failed writing " + path.string());
}

}  // namespace spectree

#endif  // SPECTREE_MESH_HPP
