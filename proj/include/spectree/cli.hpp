#ifndef SPECTREE_CLI_HPP
#define SPECTREE_CLI_HPP

#include <atomic>
#include <csignal>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bench.hpp"
#include "engine.hpp"
#include "gateway.hpp"
#include "lss.hpp"
#include "synth.hpp"

namespace spectree::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::runtime: return 4;
  }
  return 4;
}

// ---------------------------------------------------------------------------
// synth

/// Everything a synth params file can hold.
struct SynthJob {
  SynthParams tree;
  WindField wind;
  LeafFlutter flutter;
  std::size_t frames = 100;
  double fps = kDefaultFps;
  double motion_noise = 0.0;  // std-dev of injected per-frame vertex jitter
};

namespace detail {

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail_data("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail_data(path.string() + ": " + e.what());
  }
}

template <typename T>
T field(const json& j, const char* name, const char* where) {
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    fail_data(std::string(where) + ": field '" + name + "' is missing or has the wrong type");
  }
}

template <typename T>
void optional_field(const json& j, const char* name, const char* where, T& out) {
  if (j.contains(name)) out = field<T>(j, name, where);
}

inline void reject_unknown(const json& j, const std::set<std::string>& known, const char* where) {
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) fail_data(std::string(where) + ": unknown field '" + key + "'");
}

// Box-Muller on the portable uniform stream.
inline double gaussian(spectree::detail::SeededRandom& rng) {
  const double u1 = 1.0 - rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail_runtime("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline void log(const std::string& msg) { std::cerr << "spectree: " << msg << '\n'; }

}  // namespace detail

inline SynthJob parse_synth_job(const json& j) {
  if (!j.is_object()) fail_data("params: expected a JSON object");
  constexpr const char* where = "params";
  detail::reject_unknown(j,
                         {"depth", "min_branches", "max_branches", "min_angle_deg", "max_angle_deg", "length_ratio",
                          "radius_ratio", "leaves_per_terminal", "seed", "trunk_length", "trunk_radius", "ring_sides",
                          "wind", "flutter", "frames", "fps", "motion_noise"},
                         where);
  SynthJob job;
  auto& p = job.tree;
  p.depth = detail::field<int>(j, "depth", where);
  p.min_branches = detail::field<int>(j, "min_branches", where);
  p.max_branches = detail::field<int>(j, "max_branches", where);
  p.min_angle_deg = detail::field<double>(j, "min_angle_deg", where);
  p.max_angle_deg = detail::field<double>(j, "max_angle_deg", where);
  p.length_ratio = detail::field<double>(j, "length_ratio", where);
  p.radius_ratio = detail::field<double>(j, "radius_ratio", where);
  p.leaves_per_terminal = detail::field<int>(j, "leaves_per_terminal", where);
  detail::optional_field(j, "seed", where, p.seed);
  detail::optional_field(j, "trunk_length", where, p.trunk_length);
  detail::optional_field(j, "trunk_radius", where, p.trunk_radius);
  detail::optional_field(j, "ring_sides", where, p.ring_sides);
  detail::optional_field(j, "frames", where, job.frames);
  detail::optional_field(j, "fps", where, job.fps);
  detail::optional_field(j, "motion_noise", where, job.motion_noise);
  if (j.contains("wind")) {
    const auto& w = j["wind"];
    constexpr const char* ww = "params.wind";
    if (!w.is_object()) fail_data("params.wind: expected an object");
    detail::reject_unknown(w, {"direction", "speed", "gusts", "turbulence", "cutoff_time"}, ww);
    if (w.contains("direction")) {
      const auto d = detail::field<std::vector<double>>(w, "direction", ww);
      if (d.size() != 3) fail_data("params.wind: field 'direction' needs 3 numbers");
      job.wind.direction = Vec3(d[0], d[1], d[2]);
    }
    detail::optional_field(w, "speed", ww, job.wind.speed);
    detail::optional_field(w, "turbulence", ww, job.wind.turbulence);
    detail::optional_field(w, "cutoff_time", ww, job.wind.cutoff_time);
    if (w.contains("gusts")) {
      if (!w["gusts"].is_array()) fail_data("params.wind: field 'gusts' must be an array");
      for (const auto& g : w["gusts"]) {
        constexpr const char* gw = "params.wind.gusts[]";
        detail::reject_unknown(g, {"amplitude", "frequency", "phase"}, gw);
        Gust gust;
        gust.amplitude = detail::field<double>(g, "amplitude", gw);
        gust.frequency = detail::field<double>(g, "frequency", gw);
        detail::optional_field(g, "phase", gw, gust.phase);
        job.wind.gusts.push_back(gust);
      }
    }
  }
  if (j.contains("flutter")) {
    constexpr const char* fw = "params.flutter";
    detail::reject_unknown(j["flutter"], {"amplitude", "frequency"}, fw);
    detail::optional_field(j["flutter"], "amplitude", fw, job.flutter.amplitude);
    detail::optional_field(j["flutter"], "frequency", fw, job.flutter.frequency);
  }
  p.validate();
  job.wind.validate();
  if (job.frames < 4) fail_usage("params: frames must be >= 4");
  if (!(job.fps > 0)) fail_usage("params: fps must be positive");
  if (!(job.motion_noise >= 0)) fail_usage("params: motion_noise must be >= 0");
  return job;
}

struct SynthSample {
  TreeModel tree;
  MotionSequence motion;
  CurationResult curation;
};

/// One deterministic sample: grow, blow, skin, optionally add noise, curate.
inline SynthSample synthesize(SynthJob job, std::uint64_t seed, std::uint32_t resolution, std::size_t cut,
                              double threshold) {
  job.tree.seed = seed;
  job.wind.turbulence_seed = seed;
  SynthSample s;
  s.tree = grow_tree(job.tree);
  const auto traj = simulate_wind(s.tree.skeleton, job.wind, job.frames, job.fps);
  s.motion = skin_motion(s.tree.skeleton, traj, s.tree.mesh, s.tree.skin, s.tree.leaf_of_vertex, job.flutter);
  if (job.motion_noise > 0.0) {
    spectree::detail::SeededRandom rng(seed ^ 0x9e3779b97f4a7c15ull);
    for (std::size_t i = s.motion.vertices * 3; i < s.motion.values.size(); ++i)
      s.motion.values[i] += job.motion_noise * detail::gaussian(rng);
  }
  const auto grid = build_grid(s.tree.mesh, resolution);
  s.curation = curate(s.motion, grid, cut, threshold);
  return s;
}

// ---------------------------------------------------------------------------
// serve

namespace detail {
inline std::atomic<bool> g_interrupted{false};
extern "C" inline void on_signal(int) { g_interrupted.store(true); }
}  // namespace detail

// ---------------------------------------------------------------------------
// Entry point

/// Parses and runs one invocation. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout) {
  CLI::App app{"Sparse voxel spectrum animation and interactive modal simulation"};
  app.name("spectree");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML/INI file with flag values; flags given on the command line win");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate procedural trees with wind motion and curate them");
  fs::path synth_params, synth_out;
  std::size_t synth_count = 1;
  std::optional<std::uint64_t> synth_seed;
  std::uint32_t synth_r = 128;
  std::size_t synth_cut = kDefaultCurationCut;
  double synth_tau = kDefaultCurationThreshold;
  std::string synth_format = "ply";
  synth->add_option("params", synth_params, "JSON parameter file")->required()->check(CLI::ExistingFile);
  synth->add_option("out_dir", synth_out, "Output directory")->required();
  synth->add_option("--count", synth_count, "Number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "Base seed; sample i uses seed + i (default: params seed)");
  synth->add_option("-R,--resolution", synth_r, "Grid resolution used for curation");
  synth->add_option("--cut", synth_cut, "First rejected frequency bin");
  synth->add_option("--tau", synth_tau, "High-frequency energy threshold");
  synth->add_option("--format", synth_format, "Mesh format")->check(CLI::IsMember({"ply", "obj"}));

  // compress
  auto* compress = app.add_subcommand("compress", "Compress a motion into a sparse voxel spectrum");
  fs::path comp_motion, comp_mesh, comp_out;
  std::uint32_t comp_r = 128;
  std::size_t comp_k = kDefaultBins;
  std::optional<double> comp_fps;
  bool comp_report = false;
  compress->add_option("motion", comp_motion, "MOTN motion file")->required()->check(CLI::ExistingFile);
  compress->add_option("mesh", comp_mesh, "Rest mesh (PLY/OBJ)")->required()->check(CLI::ExistingFile);
  compress->add_option("out", comp_out, "Output spectrum (.svsp)")->required();
  compress->add_option("-R,--resolution", comp_r, "Grid resolution");
  compress->add_option("-K,--bins", comp_k, "Retained frequency bins");
  compress->add_option("--fps", comp_fps, "Frame rate (default: from the motion file)");
  compress->add_flag("--report", comp_report, "Print a JSON report (hf ratio, LSS) to stdout");

  // animate
  auto* animate = app.add_subcommand("animate", "Reconstruct motion and pose bound Gaussian splats");
  fs::path anim_mesh, anim_spec, anim_out;
  std::uint32_t anim_per_face = 5;
  std::size_t anim_every = 1;
  animate->add_option("mesh", anim_mesh, "Rest mesh (PLY/OBJ)")->required()->check(CLI::ExistingFile);
  animate->add_option("spectrum", anim_spec, "Spectrum (.svsp)")->required()->check(CLI::ExistingFile);
  animate->add_option("out_dir", anim_out, "Output directory")->required();
  animate->add_option("--per-face", anim_per_face, "Gaussians per face")->check(CLI::PositiveNumber);
  animate->add_option("--every", anim_every, "Write every n-th frame")->check(CLI::PositiveNumber);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the interactive simulation behind HTTP/WebSocket");
  fs::path serve_mesh, serve_spec;
  std::optional<fs::path> serve_replay, serve_record;
  GatewayOptions gw;
  SessionConfig sc;
  std::string serve_integrator = "semi_implicit", serve_payload = "vertices";
  double serve_duration = 0.0;
  serve->add_option("mesh", serve_mesh, "Rest mesh (PLY/OBJ)")->required()->check(CLI::ExistingFile);
  serve->add_option("spectrum", serve_spec, "Spectrum (.svsp)")->required()->check(CLI::ExistingFile);
  serve->add_option("--host", gw.host, "Bind address");
  serve->add_option("--port", gw.port, "Port (0 picks a free one)");
  serve->add_option("--dt", sc.dt, "Simulation time step (s)");
  serve->add_option("--xi", sc.damping_ratio, "Modal damping ratio");
  serve->add_option("--force-scale", sc.force_scale, "Multiplier on user forces");
  serve->add_option("--integrator", serve_integrator, "Modal integrator")
      ->check(CLI::IsMember({"semi_implicit", "explicit"}));
  serve->add_option("--payload", serve_payload, "Streamed frame payload")->check(CLI::IsMember({"vertices", "splats"}));
  serve->add_option("--per-face", sc.per_face, "Gaussians per face")->check(CLI::PositiveNumber);
  serve->add_option("--replay", serve_replay, "Event log to replay")->check(CLI::ExistingFile);
  serve->add_option("--record", serve_record, "Write the applied event log here on exit");
  serve->add_option("--duration", serve_duration, "Stop after this many seconds (0 runs until interrupted)");

  // bench
  auto* bench = app.add_subcommand("bench", "Time the interactive pipeline on the pinned instance");
  BenchSpec bs;
  bool bench_json = false;
  std::optional<fs::path> bench_out;
  bench->add_option("--voxels", bs.voxels, "Occupied voxels");
  bench->add_option("--vertices-per-voxel", bs.vertices_per_voxel, "Vertices per voxel");
  bench->add_option("--faces-per-voxel", bs.faces_per_voxel, "Faces per voxel");
  bench->add_option("--per-face", bs.per_face, "Gaussians per face")->check(CLI::PositiveNumber);
  bench->add_option("-K,--bins", bs.bins, "Modes");
  bench->add_option("--frames", bs.steps, "Measured frames");
  bench->add_option("--seed", bs.seed, "Instance seed");
  bench->add_flag("--json", bench_json, "Print the JSON report to stdout");
  bench->add_option("--out", bench_out, "Also write the JSON report to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, std::cerr);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, std::cerr);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return 2;
  }

  try {
    if (*synth) {
      const auto job = parse_synth_job(detail::read_json_file(synth_params));
      const std::uint64_t base = synth_seed.value_or(job.tree.seed);
      fs::create_directories(synth_out);
      std::vector<json> rows(synth_count);
      std::vector<std::exception_ptr> errors(synth_count);
      parallel_for(0, synth_count, [&](std::size_t i) {
        try {
          const std::uint64_t seed = base + i;
          const auto s = synthesize(job, seed, synth_r, synth_cut, synth_tau);
          json row{{"seed", seed}, {"hf_ratio", s.curation.hf_ratio}, {"accepted", s.curation.accepted}};
          if (s.curation.accepted) {
            std::ostringstream name;
            name << "sample_" << std::setw(4) << std::setfill('0') << i;
            const fs::path dir = synth_out / name.str();
            fs::create_directories(dir);
            save_mesh(s.tree.mesh, dir / ("mesh." + synth_format));
            write_motion(s.motion, dir / "motion.motn");
            detail::write_json(row, dir / "report.json");
            row["dir"] = name.str();
          }
          rows[i] = row;
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }, 1);
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
      std::size_t accepted = 0;
      for (const auto& r : rows) accepted += r["accepted"].get<bool>();
      detail::write_json({{"threshold", synth_tau}, {"cut", synth_cut}, {"samples", rows}}, synth_out / "report.json");
      detail::log("synth: " + std::to_string(accepted) + " of " + std::to_string(synth_count) + " samples accepted");
      return 0;
    }

    if (*compress) {
      auto motion = read_motion(comp_motion);
      const auto mesh = load_mesh(comp_mesh).mesh;
      if (motion.vertices != mesh.vertex_count())
        fail_data("motion has " + std::to_string(motion.vertices) + " vertices, mesh has " +
                  std::to_string(mesh.vertex_count()));
      if (!is_supported_resolution(comp_r)) fail_usage("unsupported grid resolution " + std::to_string(comp_r));
      const double fps = comp_fps.value_or(motion.fps);
      auto grid = std::make_shared<const SparseVoxelGrid>(build_grid(mesh, comp_r));
      const auto voxel = voxelize_motion(motion, *grid);
      const auto spectrum = fft_compress(voxel, grid, comp_k, fps);
      write_spectrum(spectrum, comp_out);
      detail::log("compress: " + std::to_string(grid->voxel_count()) + " voxels, K=" + std::to_string(comp_k) +
                  " -> " + comp_out.string());
      if (comp_report) {
        json r{{"voxels", grid->voxel_count()},
               {"bins", comp_k},
               {"frames", motion.frames},
               {"fps", fps},
               {"hf_ratio", hf_energy_ratio(voxel, comp_k)}};
        const LssConfig lss;
        r["lss"] = grid->voxel_count() > lss.neighbors ? json(lss_metric(spectrum, grid->voxel_centers(), lss)) : json();
        out << r.dump(2) << '\n';
      }
      return 0;
    }

    if (*animate) {
      const auto mesh = load_mesh(anim_mesh).mesh;
      AnimationResult result;
      result.spectrum = read_spectrum(anim_spec);
      attach_mesh(result.spectrum, mesh);
      animate_spectrum(mesh, result, anim_per_face);
      fs::create_directories(anim_out);
      write_motion(result.reconstructed, anim_out / "motion.motn");
      std::size_t written = 0;
      for (std::size_t t = 0; t < result.poses.size(); t += anim_every) {
        std::ostringstream name;
        name << "splats_" << std::setw(4) << std::setfill('0') << t << ".ply";
        export_splats(result.cloud, result.poses[t], anim_out / name.str());
        ++written;
      }
      json report{{"reconstruct_ms", result.report.reconstruct_ms},
                  {"bind_ms", result.report.bind_ms},
                  {"pose_ms", result.report.pose_ms}};
      report["frames"] = result.poses.size();
      report["written"] = written;
      report["splats"] = result.cloud.size();
      report["per_face"] = anim_per_face;
      detail::write_json(report, anim_out / "report.json");
      detail::log("animate: " + std::to_string(written) + " splat frames of " + std::to_string(result.cloud.size()) +
                  " Gaussians -> " + anim_out.string());
      return 0;
    }

    if (*serve) {
      sc.integrator = serve_integrator == "explicit" ? Integrator::explicit_euler : Integrator::semi_implicit;
      sc.payload = serve_payload == "splats" ? PayloadKind::splats : PayloadKind::vertices;
      if (!(serve_duration >= 0.0)) fail_usage("duration must be >= 0");
      auto mesh = load_mesh(serve_mesh).mesh;
      auto spectrum = read_spectrum(serve_spec);
      attach_mesh(spectrum, mesh);
      sc.resolution = spectrum.grid->resolution;
      sc.bins = spectrum.bins;
      sc.fps = spectrum.fps;
      InteractiveSession session(std::move(mesh), spectrum, sc);
      if (serve_replay) session.submit_log(read_event_log(*serve_replay));
      Gateway gateway(session, gw);
      gateway.start();
      detail::log("serve: listening on http://" + gw.host + ":" + std::to_string(gateway.port()) +
                  " (ws on the same port)");
      detail::g_interrupted.store(false);
      std::signal(SIGINT, detail::on_signal);
      std::signal(SIGTERM, detail::on_signal);
      const auto start = Clock::now();
      while (!detail::g_interrupted.load() && (serve_duration == 0.0 || elapsed_ms(start) < serve_duration * 1e3))
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      gateway.stop();
      std::signal(SIGINT, SIG_DFL);
      std::signal(SIGTERM, SIG_DFL);
      if (serve_record) write_event_log(session.applied(), *serve_record);
      detail::log("serve: stopped at t=" + std::to_string(session.time()) + " s, " +
                  std::to_string(session.late_steps()) + " late steps");
      return 0;
    }

    if (*bench) {
      const auto inst = make_bench_instance(bs);
      auto result = run_bench(inst, bs);
      auto& r = result.report;
      const double motion_ms = r["mesh_motion"]["median_ms"], pose_ms = r["pose"]["median_ms"];
      r["budget"] = {{"mesh_motion_ms", 13.0},
                     {"pose_ms", 2.57},
                     {"tolerance", 2.0},
                     {"mesh_motion_ok", motion_ms <= 26.0},
                     {"pose_ok", pose_ms <= 5.14}};
      if (bench_out) detail::write_json(r, *bench_out);
      if (bench_json) {
        out << r.dump(2) << '\n';
      } else {
        std::ostringstream s;
        s << std::fixed << std::setprecision(3);
        for (const char* stage : {"modal", "devoxelize", "mesh_motion", "pose", "total"})
          s << std::setw(12) << stage << "  median " << r[stage]["median_ms"].get<double>() << " ms  p95 "
            << r[stage]["p95_ms"].get<double>() << " ms\n";
        std::cerr << s.str();
      }
      return 0;
    }
  } catch (const Error& e) {
    detail::log("error: " + std::string(e.what()));
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    detail::log("error: " + std::string(e.what()));
    return 4;
  } catch (const std::exception& e) {
    detail::log("error: " + std::string(e.what()));
    return 4;
  }
  return 2;
}

}  // namespace spectree::cli

#endif  // SPECTREE_CLI_HPP
