#ifndef SPECTREE_ENGINE_HPP
#define SPECTREE_ENGINE_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <thread>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "lss.hpp"
#include "modal.hpp"
#include "splat.hpp"
#include "spectrum.hpp"
#include "voxel.hpp"

namespace spectree {

using Clock = std::chrono::steady_clock;

inline double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

struct FrameTimings {
  double modal_ms = 0.0;  // step + superpose
  double devoxelize_ms = 0.0;
  double pose_ms = 0.0;
  double total_ms = 0.0;
};

enum class PayloadKind : std::uint8_t { vertices = 0, splats = 1 };

struct SessionConfig {
  double dt = 1.0 / 60.0;
  double damping_ratio = 0.05;
  double force_scale = 1.0;
  Integrator integrator = Integrator::semi_implicit;
  std::uint32_t resolution = 128;
  std::size_t bins = kDefaultBins;
  double fps = kDefaultFps;
  std::uint32_t per_face = 5;
  PayloadKind payload = PayloadKind::vertices;

  void validate() const {
    if (!(dt > 0.0)) fail_usage("dt must be positive");
    if (!(damping_ratio > 0.0 && damping_ratio < 1.0)) fail_usage("xi must lie in (0, 1)");
    if (!std::isfinite(force_scale)) fail_usage("force scale must be finite");
    if (!is_supported_resolution(resolution)) fail_usage("unsupported grid resolution");
    if (bins < 1) fail_usage("K must be at least 1");
    if (!(fps > 0.0)) fail_usage("fps must be positive");
    if (per_face < 1) fail_usage("per-face count must be >= 1");
  }
};

/// Immutable output of one simulation step. Vertex positions always; splat
/// records (mean, quaternion wxyz, scale) only for splat payloads.
struct Frame {
  std::uint32_t index = 0;
  double time = 0.0;
  FrameTimings timings;
  std::vector<float> vertices;
  std::vector<float> splats;
};

inline constexpr std::size_t kSplatFloats = 10;

/// Latest-wins frame slot: writers replace, readers take a shared snapshot.
class FrameCell {
public:
  void publish(std::shared_ptr<const Frame> frame) {
    {
      std::lock_guard lock(mutex_);
      frame_ = std::move(frame);
    }
    changed_.notify_all();
  }
  std::shared_ptr<const Frame> latest() const {
    std::lock_guard lock(mutex_);
    return frame_;
  }
  /// Blocks until a frame newer than `after` appears or the timeout passes.
  std::shared_ptr<const Frame> wait_newer(std::int64_t after, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    changed_.wait_for(lock, timeout, [&] { return frame_ && static_cast<std::int64_t>(frame_->index) > after; });
    return frame_;
  }

private:
  mutable std::mutex mutex_;
  mutable std::condition_variable changed_;
  std::shared_ptr<const Frame> frame_;
};

/// A force waiting to be applied. time < 0 means "at the next step".
struct PendingForce {
  std::uint32_t voxel = 0;
  Vec3 force = Vec3::Zero();
  double duration = 0.0;
  double time = -1.0;
};

/// Force as applied by the session, in event-log form.
struct AppliedForce {
  double time = 0.0;
  std::uint32_t voxel = 0;
  Vec3 force = Vec3::Zero();
  double duration = 0.0;
};

inline nlohmann::json to_json(const AppliedForce& f) {
  return {{"t", f.time}, {"type", "force"}, {"voxel", f.voxel},
          {"force", {f.force.x(), f.force.y(), f.force.z()}}, {"duration", f.duration}};
}

inline void write_event_log(const std::vector<AppliedForce>& events, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail_runtime("cannot write event log " + path.string());
  for (const auto& e : events) out << to_json(e).dump() << '\n';
}

inline std::vector<AppliedForce> read_event_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail_data("cannot open event log " + path.string());
  std::vector<AppliedForce> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("type") != "force") fail_data("unknown event type");
      AppliedForce f;
      f.time = j.at("t").get<double>();
      f.voxel = j.at("voxel").get<std::uint32_t>();
      const auto& v = j.at("force");
      if (!v.is_array() || v.size() != 3) fail_data("force must have 3 components");
      f.force = Vec3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
      f.duration = j.at("duration").get<double>();
      out.push_back(f);
    } catch (const nlohmann::json::exception& e) {
      fail_data("event log line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      fail_data("event log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

struct StageStats {
  double median = 0.0;
  double p95 = 0.0;
};

inline StageStats stage_stats(std::vector<double> v) {
  if (v.empty()) return {};
  std::sort(v.begin(), v.end());
  auto at = [&](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {at(0.5), at(0.95)};
}

inline nlohmann::json timing_report(const std::vector<FrameTimings>& frames) {
  std::vector<double> modal, devox, pose_t, total, mesh_motion;
  for (const auto& t : frames) {
    modal.push_back(t.modal_ms);
    devox.push_back(t.devoxelize_ms);
    pose_t.push_back(t.pose_ms);
    total.push_back(t.total_ms);
    mesh_motion.push_back(t.modal_ms + t.devoxelize_ms);
  }
  auto entry = [](const std::vector<double>& v) {
    const auto s = stage_stats(v);
    return nlohmann::json{{"median_ms", s.median}, {"p95_ms", s.p95}};
  };
  return {{"frames", frames.size()},
          {"modal", entry(modal)},
          {"devoxelize", entry(devox)},
          {"mesh_motion", entry(mesh_motion)},
          {"pose", entry(pose_t)},
          {"total", entry(total)}};
}

/// Interactive modal simulation over one mesh. One thread steps; any number
/// of threads may submit forces or read frames.
class InteractiveSession {
public:
  InteractiveSession(TriMesh mesh, const SparseVoxelSpectrum& spectrum, SessionConfig config)
      : config_(config), mesh_(std::move(mesh)) {
    config_.validate();
    if (!spectrum.grid) fail_data("spectrum has no grid");
    grid_ = spectrum.grid;
    if (grid_->vertex_to_voxel.size() != mesh_.vertex_count())
      fail_data("spectrum grid covers " + std::to_string(grid_->vertex_to_voxel.size()) + " vertices, mesh has " +
                std::to_string(mesh_.vertex_count()));
    bank_ = build_bank(spectrum, config_.damping_ratio);
    check_step(bank_, config_.dt);
    state_ = ModalState(bank_.modes());
    cloud_ = bind_splats(mesh_, config_.per_face);
    pose_ = cloud_.rest;
    voxel_disp_.assign(bank_.voxels * 3, 0.0);
    vertex_disp_.assign(mesh_.vertex_count() * 3, 0.0);
    positions_ = mesh_.vertices;
    publish(FrameTimings{});
  }

  const SessionConfig& config() const { return config_; }
  const TriMesh& mesh() const { return mesh_; }
  const SparseVoxelGrid& grid() const { return *grid_; }
  const ModalBank& bank() const { return bank_; }
  const GaussianCloud& cloud() const { return cloud_; }
  const FrameCell& frames() const { return cell_; }
  double time() const { return time_.load(); }

  /// Thread-safe; forces keep their submission order.
  void submit(const PendingForce& f) {
    if (f.voxel >= bank_.voxels) fail_usage("force target voxel " + std::to_string(f.voxel) + " out of range");
    if (!(f.duration > 0.0)) fail_usage("force duration must be positive");
    if (!f.force.allFinite()) fail_usage("force must be finite");
    std::lock_guard lock(queue_mutex_);
    queue_.push_back(f);
  }

  void submit_log(const std::vector<AppliedForce>& events) {
    for (const auto& e : events) submit({e.voxel, e.force, e.duration, e.time});
  }

  /// Called with every frame in order (lossless), from the stepping thread.
  void set_recorder(std::function<void(const Frame&)> sink) { recorder_ = std::move(sink); }
  const std::vector<AppliedForce>& applied() const { return applied_; }
  std::vector<FrameTimings> timings() const {
    std::lock_guard lock(stats_mutex_);
    return timings_;
  }
  std::uint64_t late_steps() const { return late_.load(); }

  /// Advances one dt and publishes the resulting frame.
  std::shared_ptr<const Frame> step() {
    const auto start = Clock::now();
    drain();
    const double now = state_.time;
    std::erase_if(active_, [&](const ForceEvent& e) { return now >= e.start + e.duration; });
    const auto forces = project_force(bank_, active_, now);
    spectree::step(bank_, state_, forces, config_.dt, config_.integrator);
    superpose(bank_, state_, voxel_disp_);
    FrameTimings t;
    t.modal_ms = elapsed_ms(start);

    auto mark = Clock::now();
    devoxelize_xyz(voxel_disp_, vertex_disp_, *grid_);
    for (std::size_t i = 0; i < positions_.size(); ++i)
      positions_[i] = mesh_.vertices[i] + Vec3(vertex_disp_[i * 3], vertex_disp_[i * 3 + 1], vertex_disp_[i * 3 + 2]);
    t.devoxelize_ms = elapsed_ms(mark);

    mark = Clock::now();
    pose(cloud_, positions_, pose_);
    t.pose_ms = elapsed_ms(mark);
    t.total_ms = elapsed_ms(start);
    time_.store(state_.time);
    return publish(t);
  }

  /// Steps in real time until stopped. Never varies dt; steps that finish
  /// past their deadline are counted as late.
  void run(std::stop_token stop) {
    const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(config_.dt));
    auto deadline = Clock::now() + period;
    while (!stop.stop_requested()) {
      step();
      const auto done = Clock::now();
      if (done > deadline) late_.fetch_add(1);
      else std::this_thread::sleep_until(deadline);
      deadline += period;
      if (done > deadline + 10 * period) deadline = done + period;  // do not try to catch up a long stall
    }
  }

  nlohmann::json metrics() const {
    auto report = timing_report(timings());
    report["late_steps"] = late_steps();
    report["time"] = time();
    return report;
  }

private:
  // Moves queued forces whose time has come into the active set.
  void drain() {
    std::vector<PendingForce> ready;
    {
      std::lock_guard lock(queue_mutex_);
      const double now = state_.time;
      const double tol = 0.5 * config_.dt;
      while (!queue_.empty() && (queue_.front().time < 0.0 || queue_.front().time <= now + tol)) {
        ready.push_back(queue_.front());
        queue_.pop_front();
      }
    }
    for (const auto& f : ready) {
      const double at = f.time < 0.0 ? state_.time : f.time;
      applied_.push_back({at, f.voxel, f.force, f.duration});
      active_.push_back({f.voxel, config_.force_scale * f.force, at, f.duration});
    }
  }

  std::shared_ptr<const Frame> publish(const FrameTimings& t) {
    auto frame = std::make_shared<Frame>();
    frame->index = frame_index_++;
    frame->time = state_.time;
    frame->timings = t;
    frame->vertices.resize(positions_.size() * 3);
    for (std::size_t i = 0; i < positions_.size(); ++i)
      for (int a = 0; a < 3; ++a) frame->vertices[i * 3 + a] = static_cast<float>(positions_[i][a]);
    if (config_.payload == PayloadKind::splats) {
      frame->splats.resize(pose_.size() * kSplatFloats);
      for (std::size_t p = 0; p < pose_.size(); ++p) {
        float* out = &frame->splats[p * kSplatFloats];
        const auto q = rotation_quaternion(pose_.rotation[p]);
        for (int a = 0; a < 3; ++a) out[a] = static_cast<float>(pose_.mean[p][a]);
        for (int a = 0; a < 4; ++a) out[3 + a] = static_cast<float>(q[a]);
        for (int a = 0; a < 3; ++a) out[7 + a] = static_cast<float>(pose_.scale[p][a]);
      }
    }
    if (frame->index > 0) {
      std::lock_guard lock(stats_mutex_);
      timings_.push_back(t);
      if (timings_.size() > 4096) timings_.erase(timings_.begin(), timings_.begin() + 2048);
    }
    if (recorder_) recorder_(*frame);
    std::shared_ptr<const Frame> out = std::move(frame);
    cell_.publish(out);
    return out;
  }

  SessionConfig config_;
  TriMesh mesh_;
  std::shared_ptr<const SparseVoxelGrid> grid_;
  ModalBank bank_;
  ModalState state_;
  GaussianCloud cloud_;
  SplatPose pose_;
  std::vector<double> voxel_disp_, vertex_disp_;
  std::vector<Vec3> positions_;
  std::vector<ForceEvent> active_;
  std::vector<AppliedForce> applied_;
  std::uint32_t frame_index_ = 0;
  std::atomic<double> time_{0.0};
  std::atomic<std::uint64_t> late_{0};

  std::mutex queue_mutex_;
  std::deque<PendingForce> queue_;
  mutable std::mutex stats_mutex_;
  std::vector<FrameTimings> timings_;
  std::function<void(const Frame&)> recorder_;
  FrameCell cell_;
};

// Offline pipeline.

struct AnimationReport {
  double relative_error = 0.0;
  double hf_ratio = 0.0;
  double lss = 0.0;
  double voxelize_ms = 0.0;
  double compress_ms = 0.0;
  double reconstruct_ms = 0.0;
  double bind_ms = 0.0;
  double pose_ms = 0.0;

  nlohmann::json to_json() const {
    return {{"relative_error", relative_error}, {"hf_ratio", hf_ratio},         {"lss", lss},
            {"voxelize_ms", voxelize_ms},       {"compress_ms", compress_ms},   {"reconstruct_ms", reconstruct_ms},
            {"bind_ms", bind_ms},               {"pose_ms", pose_ms}};
  }
};

struct AnimationResult {
  SparseVoxelSpectrum spectrum;
  MotionSequence reconstructed;
  GaussianCloud cloud;
  std::vector<SplatPose> poses;
  AnimationReport report;
};

/// Reconstructs per-vertex motion from a spectrum and poses bound splats on
/// every frame.
inline void animate_spectrum(const TriMesh& mesh, AnimationResult& out, std::uint32_t per_face) {
  auto mark = Clock::now();
  out.reconstructed = reconstruct_motion(out.spectrum);
  out.report.reconstruct_ms = elapsed_ms(mark);
  mark = Clock::now();
  out.cloud = bind_splats(mesh, per_face);
  out.report.bind_ms = elapsed_ms(mark);
  mark = Clock::now();
  out.poses.assign(out.reconstructed.frames, out.cloud.rest);
  std::vector<Vec3> positions(mesh.vertex_count());
  for (std::size_t t = 0; t < out.reconstructed.frames; ++t) {
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = mesh.vertices[i] + out.reconstructed.displacement(t, i);
    if (t > 0) out.poses[t] = out.poses[t - 1];
    pose(out.cloud, positions, out.poses[t]);
  }
  out.report.pose_ms = elapsed_ms(mark);
}

inline AnimationResult run_animation(const TriMesh& mesh, const MotionSequence& motion, const SessionConfig& config,
                                     const LssConfig& lss_config = {}) {
  config.validate();
  motion.validate();
  if (motion.vertices != mesh.vertex_count()) fail_data("motion does not match the mesh");
  AnimationResult out;
  auto mark = Clock::now();
  auto grid = std::make_shared<const SparseVoxelGrid>(build_grid(mesh, config.resolution));
  const auto voxel = voxelize_motion(motion, *grid);
  out.report.voxelize_ms = elapsed_ms(mark);
  mark = Clock::now();
  out.spectrum = fft_compress(voxel, grid, config.bins, motion.fps);
  out.report.compress_ms = elapsed_ms(mark);
  out.report.hf_ratio = hf_energy_ratio(voxel, config.bins);
  if (grid->voxel_count() > lss_config.neighbors) {
    out.report.lss = lss_metric(out.spectrum, grid->voxel_centers(), lss_config);
  }
  animate_spectrum(mesh, out, config.per_face);
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < motion.values.size(); ++i) {
    err += std::pow(out.reconstructed.values[i] - motion.values[i], 2);
    ref += motion.values[i] * motion.values[i];
  }
  out.report.relative_error = ref > 0.0 ? std::sqrt(err / ref) : std::sqrt(err);
  return out;
}

}  // namespace spectree

#endif  // SPECTREE_ENGINE_HPP
