#ifndef SPECTREE_SPLAT_HPP
#define SPECTREE_SPLAT_HPP

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <vector>

#include <Eigen/Geometry>

#include "common.hpp"
#include "mesh.hpp"

namespace spectree {

inline constexpr double kSh0 = 0.28209479177387814;
inline constexpr double kTangentFactor = 0.3;
inline constexpr double kNormalThickness = 1e-4;  // fraction of the rest AABB diagonal
inline constexpr double kMaxOpacity = 0.9999;

/// Barycentric sites for `count` primitives on one face. Up to five come from
/// a fixed stratified table; larger counts use centroids of a uniform
/// L x L subdivision of the face.
inline std::vector<Vec3> barycentric_sites(std::uint32_t count) {
  static const Vec3 table[5] = {Vec3(1.0 / 3, 1.0 / 3, 1.0 / 3), Vec3(0.6, 0.2, 0.2), Vec3(0.2, 0.6, 0.2),
                                Vec3(0.2, 0.2, 0.6), Vec3(0.4, 0.4, 0.2)};
  std::vector<Vec3> out;
  if (count <= 5) {
    out.assign(table, table + count);
    return out;
  }
  const auto level = static_cast<std::uint32_t>(std::ceil(std::sqrt(static_cast<double>(count))));
  const double inv = 1.0 / level;
  for (std::uint32_t i = 0; i < level && out.size() < count; ++i)
    for (std::uint32_t j = 0; i + j < level && out.size() < count; ++j) {
      // Upward sub-triangle, then the downward one sharing its hypotenuse.
      double b = (i + 1.0 / 3) * inv, c = (j + 1.0 / 3) * inv;
      out.emplace_back(1.0 - b - c, b, c);
      if (i + j + 1 < level && out.size() < count) {
        b = (i + 2.0 / 3) * inv;
        c = (j + 2.0 / 3) * inv;
        out.emplace_back(1.0 - b - c, b, c);
      }
    }
  return out;
}

/// Per-primitive derived attributes. rotation columns are (normal, in-plane
/// toward V1, their cross product).
struct SplatPose {
  std::vector<Vec3> mean;
  std::vector<Mat3> rotation;
  std::vector<Vec3> scale;
  std::vector<std::uint8_t> frozen;

  std::size_t size() const { return mean.size(); }
  void resize(std::size_t n) {
    mean.resize(n);
    rotation.resize(n);
    scale.resize(n);
    frozen.assign(n, 0);
  }
};

/// Gaussian primitives bound to mesh faces, grouped by face:
/// primitives of face f are [face_offset[f], face_offset[f + 1]).
struct GaussianCloud {
  std::vector<std::uint32_t> face;
  std::vector<Vec3> alpha;
  std::vector<Vec3> scale_coeff;  // (eps_n, beta2, beta3)
  std::vector<double> opacity;
  std::vector<Vec3> color;
  std::vector<std::uint32_t> face_offset;
  std::vector<Face> faces;
  std::size_t vertex_count = 0;
  SplatPose rest;

  std::size_t size() const { return face.size(); }
};

namespace detail {

// Poses every primitive of one face. Returns false for a degenerate face,
// leaving the previous pose untouched.
inline bool pose_face(const GaussianCloud& cloud, std::span<const Vec3> v, std::size_t f, SplatPose& out) {
  const Face& tri = cloud.faces[f];
  const Vec3& a = v[tri[0]];
  const Vec3& b = v[tri[1]];
  const Vec3& c = v[tri[2]];
  const Vec3 cross = (b - a).cross(c - a);
  const double twice_area = cross.norm();
  if (!(0.5 * twice_area >= kMinFaceArea)) return false;
  const Vec3 n = cross / twice_area;
  // a - mu = w1 (a - b) + w2 (a - c), already in the face plane up to roundoff.
  const Vec3 ab = a - b, ac = a - c;
  for (std::uint32_t p = cloud.face_offset[f]; p < cloud.face_offset[f + 1]; ++p) {
    const Vec3& w = cloud.alpha[p];
    const Vec3 d = w[1] * ab + w[2] * ac;
    const Vec3 in_plane = d - d.dot(n) * n;
    const double len = in_plane.norm();
    if (!(len > 0.0)) return false;
    const Vec3 r2 = in_plane * (1.0 / len);
    const Vec3 r3 = n.cross(r2);
    const Vec3& k = cloud.scale_coeff[p];
    out.mean[p] = a - d;
    Mat3& r = out.rotation[p];
    r.col(0) = n;
    r.col(1) = r2;
    r.col(2) = r3;
    out.scale[p] = Vec3(k[0], k[1] * len, k[2] * std::abs((d - ab).dot(r3)));
    out.frozen[p] = 0;
  }
  return true;
}

}  // namespace detail

/// Updates `out` in place for deformed vertex positions. Primitives on faces
/// that collapsed keep their previous pose and are flagged frozen.
inline void pose(const GaussianCloud& cloud, std::span<const Vec3> vertices, SplatPose& out) {
  if (vertices.size() != cloud.vertex_count)
    fail_usage("pose expects " + std::to_string(cloud.vertex_count) + " vertices, got " +
               std::to_string(vertices.size()));
  if (out.size() != cloud.size()) fail_usage("pose buffer does not match the cloud");
  parallel_for(0, cloud.faces.size(), [&](std::size_t f) {
    if (!detail::pose_face(cloud, vertices, f, out))
      for (std::uint32_t p = cloud.face_offset[f]; p < cloud.face_offset[f + 1]; ++p) out.frozen[p] = 1;
  }, 4096);
}

/// Binds per_face primitives to every face (per-face overrides optional) and
/// records their rest-mesh pose.
inline GaussianCloud bind_splats(const TriMesh& mesh, std::uint32_t per_face = 5,
                          std::span<const std::uint32_t> overrides = {}) {
  if (mesh.vertices.empty() || mesh.faces.empty()) fail_data("cannot bind splats to an empty mesh");
  if (per_face < 1) fail_usage("per-face primitive count must be >= 1");
  if (!overrides.empty() && overrides.size() != mesh.faces.size())
    fail_usage("per-face override list must have one entry per face");
  mesh.validate();
  const double eps = kNormalThickness * bounding_box(mesh.vertices).diagonal();
  GaussianCloud cloud;
  cloud.faces = mesh.faces;
  cloud.vertex_count = mesh.vertices.size();
  cloud.face_offset.reserve(mesh.faces.size() + 1);
  cloud.face_offset.push_back(0);
  std::map<std::uint32_t, std::vector<Vec3>> site_cache;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const std::uint32_t count = overrides.empty() ? per_face : overrides[f];
    if (count < 1) fail_usage("per-face primitive count must be >= 1");
    auto it = site_cache.find(count);
    if (it == site_cache.end()) it = site_cache.emplace(count, barycentric_sites(count)).first;
    for (const auto& w : it->second) {
      cloud.face.push_back(static_cast<std::uint32_t>(f));
      cloud.alpha.push_back(w);
      cloud.scale_coeff.emplace_back(eps, kTangentFactor, kTangentFactor);
      cloud.opacity.push_back(1.0);
      cloud.color.push_back(Vec3::Constant(0.5));
    }
    cloud.face_offset.push_back(static_cast<std::uint32_t>(cloud.face.size()));
  }
  SplatPose& r = cloud.rest;
  r.resize(cloud.size());
  // Rest faces that are already degenerate get an identity frame until a
  // valid deformed pose arrives.
  for (std::size_t p = 0; p < cloud.size(); ++p) {
    const Face& tri = cloud.faces[cloud.face[p]];
    const Vec3& w = cloud.alpha[p];
    r.mean[p] = w[0] * mesh.vertices[tri[0]] + w[1] * mesh.vertices[tri[1]] + w[2] * mesh.vertices[tri[2]];
    r.rotation[p] = Mat3::Identity();
    r.scale[p] = Vec3::Constant(eps);
  }
  pose(cloud, mesh.vertices, r);
  return cloud;
}

inline SplatPose pose(const GaussianCloud& cloud, std::span<const Vec3> vertices) {
  SplatPose out = cloud.rest;
  pose(cloud, vertices, out);
  return out;
}

/// Unit quaternion (w, x, y, z) with w >= 0.
inline Eigen::Vector4d rotation_quaternion(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  Eigen::Vector4d out(q.w(), q.x(), q.y(), q.z());
  if (out[0] < 0.0) out = -out;
  return out;
}

struct SplatDeltas {
  std::vector<Vec3> dx;
  std::vector<Eigen::Vector4d> dr;
  std::vector<Vec3> ds;
};

inline SplatDeltas deform_deltas(const SplatPose& rest, const SplatPose& deformed) {
  if (rest.size() != deformed.size()) fail_usage("poses come from different clouds");
  SplatDeltas d;
  d.dx.resize(rest.size());
  d.dr.resize(rest.size());
  d.ds.resize(rest.size());
  for (std::size_t p = 0; p < rest.size(); ++p) {
    d.dx[p] = deformed.mean[p] - rest.mean[p];
    d.dr[p] = rotation_quaternion(deformed.rotation[p] * rest.rotation[p].transpose());
    d.ds[p] = deformed.scale[p] - rest.scale[p];
  }
  return d;
}

/// Splat attributes as stored in a splat PLY, decoded back to linear values.
struct SplatRecord {
  std::vector<Vec3> mean;
  std::vector<Vec3> scale;
  std::vector<Eigen::Vector4d> rotation;  // wxyz
  std::vector<double> opacity;
  std::vector<Vec3> color;

  std::size_t size() const { return mean.size(); }
};

inline const char* const kSplatFields[] = {"x",       "y",       "z",       "scale_0", "scale_1", "scale_2",
                                           "rot_0",   "rot_1",   "rot_2",   "rot_3",   "opacity", "f_dc_0",
                                           "f_dc_1",  "f_dc_2"};

inline void export_splats(const GaussianCloud& cloud, const SplatPose& pose, const std::filesystem::path& path) {
  if (pose.size() != cloud.size()) fail_usage("pose does not match the cloud");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot write splat file " + path.string());
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << "\n";
  for (const char* name : kSplatFields) out << "property float " << name << "\n";
  out << "end_header\n";
  std::vector<float> row(std::size(kSplatFields));
  for (std::size_t p = 0; p < cloud.size(); ++p) {
    const auto q = rotation_quaternion(pose.rotation[p]);
    const double o = std::min(cloud.opacity[p], kMaxOpacity);
    const double values[] = {pose.mean[p].x(),
                             pose.mean[p].y(),
                             pose.mean[p].z(),
                             std::log(pose.scale[p].x()),
                             std::log(pose.scale[p].y()),
                             std::log(pose.scale[p].z()),
                             q[0],
                             q[1],
                             q[2],
                             q[3],
                             std::log(o / (1.0 - o)),
                             (cloud.color[p].x() - 0.5) / kSh0,
                             (cloud.color[p].y() - 0.5) / kSh0,
                             (cloud.color[p].z() - 0.5) / kSh0};
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = static_cast<float>(values[i]);
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) fail_runtime("failed writing splat file " + path.string());
}

inline SplatRecord import_splats(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open splat file " + path.string());
  const auto header = detail::read_ply_header(in);
  SplatRecord rec;
  for (const auto& e : header.elements) {
    std::map<std::string, double> row;
    for (std::size_t r = 0; r < e.count; ++r) {
      std::istringstream ascii;
      if (!header.binary) {
        std::string line;
        if (!std::getline(in, line)) fail_data("splat PLY body truncated");
        ascii.str(line);
      }
      auto scalar = [&](detail::PlyType t) {
        if (header.binary) return detail::ply_read_binary(in, t);
        double v;
        if (!(ascii >> v)) fail_data("splat PLY row truncated");
        return v;
      };
      for (const auto& p : e.props) {
        if (p.is_list) {
          const auto n = static_cast<std::size_t>(scalar(p.count_type));
          for (std::size_t i = 0; i < n; ++i) scalar(p.type);
        } else {
          row[p.name] = scalar(p.type);
        }
      }
      if (e.name != "vertex") continue;
      for (const char* name : kSplatFields)
        if (!row.count(name)) fail_data(std::string("splat PLY lacks field ") + name);
      auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
      rec.mean.emplace_back(row["x"], row["y"], row["z"]);
      rec.scale.emplace_back(std::exp(row["scale_0"]), std::exp(row["scale_1"]), std::exp(row["scale_2"]));
      rec.rotation.emplace_back(row["rot_0"], row["rot_1"], row["rot_2"], row["rot_3"]);
      rec.opacity.push_back(sigmoid(row["opacity"]));
      rec.color.emplace_back(row["f_dc_0"] * kSh0 + 0.5, row["f_dc_1"] * kSh0 + 0.5, row["f_dc_2"] * kSh0 + 0.5);
    }
  }
  return rec;
}

}  // namespace spectree

#endif  // SPECTREE_SPLAT_HPP
