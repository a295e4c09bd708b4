#ifndef SPECTREE_PROTOCOL_HPP
#define SPECTREE_PROTOCOL_HPP

#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "engine.hpp"
#include "pick.hpp"

namespace spectree {

inline constexpr char kFrameMagic[4] = {'S', 'P', 'T', 'F'};
inline constexpr std::size_t kFrameHeaderBytes = 16;
inline constexpr std::size_t kFrameTimingBytes = 12;
inline constexpr int kProtocolVersion = 1;

/// Decoded binary frame.
struct WireFrame {
  PayloadKind kind = PayloadKind::vertices;
  std::uint32_t frame = 0;
  float time = 0.0f;
  float timings[3] = {0, 0, 0};  // modal, devoxelize, pose (ms)
  std::vector<float> payload;
};

/// Header {magic, kind u8, 3 pad, frame u32, time f32}, timings 3 x f32, then
/// the f32 payload. Everything little-endian.
inline std::vector<std::uint8_t> encode_frame(const Frame& f, PayloadKind kind) {
  const auto& payload = kind == PayloadKind::splats ? f.splats : f.vertices;
  std::vector<std::uint8_t> out;
  out.reserve(kFrameHeaderBytes + kFrameTimingBytes + payload.size() * 4);
  out.insert(out.end(), kFrameMagic, kFrameMagic + 4);
  out.push_back(static_cast<std::uint8_t>(kind));
  out.insert(out.end(), 3, 0);
  le::append(out, f.index);
  le::append(out, static_cast<float>(f.time));
  le::append(out, static_cast<float>(f.timings.modal_ms));
  le::append(out, static_cast<float>(f.timings.devoxelize_ms));
  le::append(out, static_cast<float>(f.timings.pose_ms));
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(payload.data());
  out.insert(out.end(), bytes, bytes + payload.size() * sizeof(float));
  return out;
}

inline WireFrame decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFrameHeaderBytes + kFrameTimingBytes) fail_data("wire frame shorter than its header");
  if (std::memcmp(bytes.data(), kFrameMagic, 4) != 0) fail_data("wire frame has bad magic");
  WireFrame w;
  const auto kind = bytes[4];
  if (kind > 1) fail_data("wire frame has unknown payload kind");
  w.kind = static_cast<PayloadKind>(kind);
  w.frame = le::read_at<std::uint32_t>(bytes.data(), 8);
  w.time = le::read_at<float>(bytes.data(), 12);
  for (int i = 0; i < 3; ++i) w.timings[i] = le::read_at<float>(bytes.data(), 16 + 4 * i);
  const std::size_t body = bytes.size() - kFrameHeaderBytes - kFrameTimingBytes;
  const std::size_t stride = w.kind == PayloadKind::splats ? kSplatFloats * 4 : 12;
  if (body % stride != 0) fail_data("wire frame payload is not a whole number of records");
  w.payload.resize(body / 4);
  std::memcpy(w.payload.data(), bytes.data() + kFrameHeaderBytes + kFrameTimingBytes, body);
  return w;
}

/// Force request from a viewer: either a voxel or a ray to pick with.
struct WireForce {
  std::variant<std::uint32_t, Ray> pick;
  Vec3 force = Vec3::Zero();
  double duration = 0.0;
};

namespace detail {

inline Vec3 json_vec3(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) fail_data(std::string(what) + " must be an array of 3 numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) fail_data(std::string(what) + " must be an array of 3 numbers");
    v[i] = j[i].get<double>();
  }
  if (!v.allFinite()) fail_data(std::string(what) + " must be finite");
  return v;
}

}  // namespace detail

inline WireForce parse_force(const nlohmann::json& j) {
  if (!j.is_object()) fail_data("force message must be an object");
  WireForce w;
  if (j.contains("voxel")) {
    if (!j["voxel"].is_number_unsigned()) fail_data("voxel must be a non-negative integer");
    w.pick = j["voxel"].get<std::uint32_t>();
  } else if (j.contains("ray")) {
    const auto& r = j["ray"];
    if (!r.is_object()) fail_data("ray must be an object");
    Ray ray{detail::json_vec3(r.value("origin", nlohmann::json()), "ray.origin"),
            detail::json_vec3(r.value("direction", nlohmann::json()), "ray.direction")};
    if (!(ray.direction.norm() > 0.0)) fail_data("ray.direction must be non-zero");
    w.pick = ray;
  } else {
    fail_data("force message needs 'voxel' or 'ray'");
  }
  w.force = detail::json_vec3(j.value("force", nlohmann::json()), "force");
  if (!j.contains("duration") || !j["duration"].is_number()) fail_data("force message needs a numeric 'duration'");
  w.duration = j["duration"].get<double>();
  if (!(w.duration > 0.0) || !std::isfinite(w.duration)) fail_data("duration must be positive");
  return w;
}

inline nlohmann::json force_message(const WireForce& w) {
  nlohmann::json j{{"type", "force"}, {"force", {w.force.x(), w.force.y(), w.force.z()}}, {"duration", w.duration}};
  if (const auto* v = std::get_if<std::uint32_t>(&w.pick)) {
    j["voxel"] = *v;
  } else {
    const auto& r = std::get<Ray>(w.pick);
    j["ray"] = {{"origin", {r.origin.x(), r.origin.y(), r.origin.z()}},
                {"direction", {r.direction.x(), r.direction.y(), r.direction.z()}}};
  }
  return j;
}

inline nlohmann::json error_message(const std::string& text) { return {{"type", "error"}, {"message", text}}; }

inline const char* payload_name(PayloadKind k) { return k == PayloadKind::splats ? "splats" : "vertices"; }

/// Static scene description: everything a viewer needs before streaming.
inline nlohmann::json snapshot_json(const InteractiveSession& s) {
  const auto& mesh = s.mesh();
  const auto& grid = s.grid();
  const auto& cfg = s.config();
  std::vector<float> vertices;
  vertices.reserve(mesh.vertex_count() * 3);
  for (const auto& v : mesh.vertices)
    for (int a = 0; a < 3; ++a) vertices.push_back(static_cast<float>(v[a]));
  std::vector<std::uint32_t> faces;
  faces.reserve(mesh.face_count() * 3);
  for (const auto& f : mesh.faces) faces.insert(faces.end(), f.begin(), f.end());
  return {
      {"type", "snapshot"},
      {"protocol", kProtocolVersion},
      {"mesh", {{"vertex_count", mesh.vertex_count()}, {"face_count", mesh.face_count()},
                {"vertices", vertices}, {"faces", faces}}},
      {"grid", {{"resolution", grid.resolution},
                {"origin", {grid.origin.x(), grid.origin.y(), grid.origin.z()}},
                {"voxel_size", grid.voxel_size},
                {"voxel_count", grid.voxel_count()},
                {"vertex_to_voxel", grid.vertex_to_voxel}}},
      {"splats", {{"count", s.cloud().size()}, {"per_face", cfg.per_face}, {"floats_per_splat", kSplatFloats}}},
      {"config", {{"dt", cfg.dt},
                  {"xi", cfg.damping_ratio},
                  {"force_scale", cfg.force_scale},
                  {"integrator", cfg.integrator == Integrator::semi_implicit ? "semi_implicit" : "explicit"},
                  {"bins", s.bank().bins},
                  {"fps", s.bank().fps},
                  {"modes", s.bank().modes()},
                  {"payload", payload_name(cfg.payload)}}},
  };
}

}  // namespace spectree

#endif  // SPECTREE_PROTOCOL_HPP
