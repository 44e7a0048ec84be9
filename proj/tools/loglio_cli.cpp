// Command-line front end: sim, normals, odom, eval, bench.

#include "loglio/config.hpp"
#include "loglio/evaluation.hpp"
#include "loglio/io.hpp"
#include "loglio/pca_normals.hpp"
#include "loglio/pipeline.hpp"
#include "loglio/ring_fals.hpp"
#include "loglio/simulator.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace loglio;
using nlohmann::json;

namespace {

constexpr const char* kUsage =
    "usage: loglio <command> [options]\n"
    "\n"
    "commands:\n"
    "  sim      --fixture <name> --out <dir> [--seed N]\n"
    "  normals  --scans <dir> --config <file> --out <dir> [--oracle] [--ppm]\n"
    "  odom     --scans <dir> --imu <file> --config <file> --out <dir> [--map]\n"
    "  eval     --est <tum> --gt <tum>\n"
    "  bench    --scans <dir> --config <file> [--oracle] [--repeat N]\n"
    "  config   print every configuration key with its default\n";

std::vector<fs::path> scan_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".rscn") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .rscn files in " + dir.string());
  return files;
}

std::vector<RingScan> load_scans(const fs::path& dir) {
  std::vector<RingScan> scans;
  for (const fs::path& p : scan_files(dir)) {
    try {
      scans.push_back(io::read_scan_file(p));
    } catch (const io::FormatError& e) {
      throw std::runtime_error(p.filename().string() + ": " + e.what());
    }
  }
  return scans;
}

StructureTable table_for(const std::vector<RingScan>& scans, const RunConfig& cfg) {
  const auto n = std::min<std::size_t>(scans.size(), static_cast<std::size_t>(cfg.table_scans));
  return build_structure_table(std::span<const RingScan>(scans.data(), n), cfg.ringfals.estimation.window,
                               cfg.ringfals.estimation.condition_cap);
}

std::string scan_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

int cmd_sim(const std::string& fixture, const fs::path& out, std::uint64_t seed) {
  const sim::Fixture f = sim::make_fixture(fixture, seed);
  const sim::Sequence seq = sim::generate(f);
  fs::create_directories(out / "scans");
  for (std::size_t i = 0; i < seq.scans.size(); ++i)
    io::write_scan_file(out / "scans" / (scan_name(i) + ".rscn"), seq.scans[i].scan);
  io::write_imu_csv(out / "imu.csv", seq.imu);
  io::write_trajectory_tum(out / "groundtruth.tum", seq.ground_truth);
  RunConfig cfg;
  cfg.map_resolution = f.map_resolution;
  cfg.downsample_resolution = f.map_resolution;
  cfg.imu_T_lidar = f.imu_T_lidar;
  cfg.imu_noise = f.imu.noise;
  io::write_file(out / "config.txt", format_config(cfg));
  std::cout << "wrote " << seq.scans.size() << " scans, " << seq.imu.size() << " IMU samples to " << out.string()
            << "\n";
  return 0;
}

int cmd_normals(const fs::path& scans_dir, const fs::path& config, const fs::path& out, bool oracle, bool ppm) {
  const RunConfig cfg = read_config(config);
  const std::vector<RingScan> scans = load_scans(scans_dir);
  const StructureTable table = table_for(scans, cfg);
  fs::create_directories(out);
  std::string csv = "scan,points,valid,median_error_deg\n";
  std::vector<double> all_err;
  std::size_t total_points = 0, total_valid = 0;
  for (std::size_t i = 0; i < scans.size(); ++i) {
    const ScanNormals sn = estimate_scan_normals(scans[i], table, cfg.ringfals);
    total_points += scans[i].points.size();
    total_valid += sn.valid_count();
    double med = -1.0;
    if (oracle) {
      const PcaNormals ref = pca_normals(scans[i]);
      std::vector<double> err;
      for (std::size_t k = 0; k < sn.valid.size(); ++k)
        if (sn.valid[k] && ref.valid[k]) err.push_back(rad2deg(unsigned_angle_between(sn.normal[k], ref.normal[k])));
      med = median(err);
      all_err.insert(all_err.end(), err.begin(), err.end());
    }
    csv += std::to_string(i) + "," + std::to_string(scans[i].points.size()) + "," +
           std::to_string(sn.valid_count()) + "," + (oracle ? io::detail::fmt(med) : std::string("")) + "\n";
    if (ppm) io::write_file(out / ("normals_" + scan_name(i) + ".ppm"), io::encode_normal_ppm(sn.image));
  }
  io::write_file(out / "normals.csv", csv);
  json summary = {{"scans", scans.size()},
                  {"points", total_points},
                  {"valid", total_valid},
                  {"valid_fraction", total_points ? double(total_valid) / double(total_points) : 0.0}};
  if (oracle) {
    std::vector<double> sorted = all_err;
    std::sort(sorted.begin(), sorted.end());
    auto pct = [&](double q) {
      return sorted.empty() ? 0.0 : sorted[static_cast<std::size_t>(q * static_cast<double>(sorted.size() - 1))];
    };
    double mean = 0.0;
    for (double e : sorted) mean += e;
    if (!sorted.empty()) mean /= static_cast<double>(sorted.size());
    summary["oracle"] = {{"compared", sorted.size()},
                         {"median_deg", pct(0.5)},
                         {"mean_deg", mean},
                         {"p90_deg", pct(0.9)}};
    std::printf("compared %zu normals: median %.3f deg, mean %.3f deg, p90 %.3f deg\n", sorted.size(), pct(0.5),
                mean, pct(0.9));
  }
  io::write_file(out / "summary.json", summary.dump(2) + "\n");
  std::printf("valid normals: %zu of %zu points\n", total_valid, total_points);
  return 0;
}

json diagnostics_json(const ScanDiagnostics& d) {
  const Quat q = d.pose.rotation.quaternion();
  const AssociationHistogram& h = d.histogram;
  const StageTimings& t = d.timings;
  return {{"timestamp", d.timestamp},
          {"position", {d.pose.translation.x(), d.pose.translation.y(), d.pose.translation.z()}},
          {"quaternion", {q.x(), q.y(), q.z(), q.w()}},
          {"iterations", d.iterations},
          {"converged", d.converged},
          {"rejected", d.rejected},
          {"update_skipped", d.update_skipped},
          {"correspondences",
           {{"large_surfel", h.count(CorrespondenceKind::large_surfel)},
            {"small_surfel", h.count(CorrespondenceKind::small_surfel)},
            {"plane", h.count(CorrespondenceKind::plane)},
            {"none", h.none}}},
          {"points", {{"input", d.points_in}, {"valid_normals", d.normals_valid},
                      {"downsampled", d.points_downsampled}, {"deskew_dropped", d.deskew_dropped}}},
          {"timings_ms",
           {{"projection", t.projection_ms},
            {"box_filtering", t.box_filter_ms},
            {"smoothing", t.smoothing_ms},
            {"downsample", t.downsample_ms},
            {"propagate", t.propagate_ms},
            {"deskew", t.deskew_ms},
            {"update", t.update_ms},
            {"map", t.map_ms},
            {"total", t.total_ms()}}},
          {"warnings", d.warnings}};
}

int cmd_odom(const fs::path& scans_dir, const fs::path& imu_path, const fs::path& config, const fs::path& out,
             bool dump_map) {
  const RunConfig cfg = read_config(config);
  const std::vector<RingScan> scans = load_scans(scans_dir);
  const std::vector<ImuSample> imu = io::read_imu_csv(imu_path);
  Odometry odo(cfg, table_for(scans, cfg));
  odo.initialize(imu, scans.front().scan_start);
  fs::create_directories(out);
  Trajectory traj;
  std::string jsonl;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < scans.size(); ++i) {
    try {
      const ScanDiagnostics d = odo.process_scan(scans[i], imu);
      traj.push_back({d.timestamp, d.pose});
      json j = diagnostics_json(d);
      j["scan"] = i;
      jsonl += j.dump() + "\n";
      for (const std::string& w : d.warnings) std::cerr << "warning: scan " << i << ": " << w << "\n";
    } catch (const ScanError& e) {
      ++failures;
      jsonl += json{{"scan", i}, {"timestamp", scans[i].scan_end}, {"error", to_string(e.kind())},
                    {"message", e.what()}}.dump() + "\n";
      std::cerr << "warning: scan " << i << " skipped: " << e.what() << "\n";
    }
  }
  io::write_trajectory_tum(out / "trajectory.tum", traj);
  io::write_file(out / "diagnostics.jsonl", jsonl);
  if (dump_map) {
    std::string m;
    for (const MapPoint& p : odo.map().points()) {
      const Vec3 n = p.normal.value_or(Vec3::Zero());
      for (double v : {p.position.x(), p.position.y(), p.position.z(), n.x(), n.y(), n.z()})
        (m += io::detail::fmt(v)) += ' ';
      m.back() = '\n';
    }
    io::write_file(out / "map.txt", m);
  }
  std::cout << "processed " << scans.size() - failures << " of " << scans.size() << " scans\n";
  return traj.empty() ? 1 : 0;
}

int cmd_eval(const fs::path& est, const fs::path& gt) {
  const double ate = ate_rmse(io::read_trajectory_tum(est), io::read_trajectory_tum(gt));
  std::printf("%.3f\n", ate);
  return 0;
}

int cmd_bench(const fs::path& scans_dir, const fs::path& config, bool oracle, int repeat) {
  const RunConfig cfg = read_config(config);
  const std::vector<RingScan> scans = load_scans(scans_dir);
  const StructureTable table = table_for(scans, cfg);
  double proj = 0.0, box = 0.0, smooth = 0.0, pca = 0.0;
  std::size_t runs = 0, points = 0;
  for (int r = 0; r < repeat; ++r) {
    for (const RingScan& s : scans) {
      const ScanNormals sn = estimate_scan_normals(s, table, cfg.ringfals);
      proj += sn.projection_ms;
      box += sn.box_filter_ms;
      smooth += sn.smoothing_ms;
      if (oracle) pca += pca_normals(s).elapsed_ms;
      points += s.points.size();
      ++runs;
    }
  }
  const double n = static_cast<double>(runs);
  std::printf("scans: %zu  mean points per scan: %.0f\n", runs, static_cast<double>(points) / n);
  std::printf("%-14s %10s\n", "stage", "mean_ms");
  std::printf("%-14s %10.3f\n", "projection", proj / n);
  std::printf("%-14s %10.3f\n", "box-filtering", box / n);
  std::printf("%-14s %10.3f\n", "smoothing", smooth / n);
  std::printf("%-14s %10.3f\n", "total", (proj + box + smooth) / n);
  if (oracle) {
    std::printf("%-14s %10.3f\n", "knn-pca", pca / n);
    std::printf("speedup: %.2fx\n", pca / (proj + box + smooth));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> commands = {"sim", "normals", "odom", "eval", "bench", "config"};
  if (argc < 2 || std::find(commands.begin(), commands.end(), argv[1]) == commands.end()) {
    const bool help = argc >= 2 && (std::string(argv[1]) == "--help" || std::string(argv[1]) == "-h");
    (help ? std::cout : std::cerr) << kUsage;
    return help ? 0 : 2;
  }

  CLI::App app{"LiDAR-inertial odometry with ring-based normals"};
  app.require_subcommand(1);

  std::string fixture, out, scans, cfg, imu, est, gt;
  std::uint64_t seed = 1;
  bool oracle = false, ppm = false, dump_map = false;
  int repeat = 1;

  auto* sim = app.add_subcommand("sim", "render a simulated sequence");
  sim->add_option("--fixture", fixture, "fixture name")->required()->check(CLI::IsMember(sim::fixture_names()));
  sim->add_option("--out", out, "output directory")->required();
  sim->add_option("--seed", seed, "random seed");

  auto* normals = app.add_subcommand("normals", "estimate per-point normals");
  normals->add_option("--scans", scans)->required();
  normals->add_option("--config", cfg)->required();
  normals->add_option("--out", out)->required();
  normals->add_flag("--oracle", oracle, "compare against kNN-PCA normals");
  normals->add_flag("--ppm", ppm, "write normal images");

  auto* odom = app.add_subcommand("odom", "run the odometry pipeline");
  odom->add_option("--scans", scans)->required();
  odom->add_option("--imu", imu)->required();
  odom->add_option("--config", cfg)->required();
  odom->add_option("--out", out)->required();
  odom->add_flag("--map", dump_map, "write the final map as 'x y z nx ny nz'");

  auto* eval = app.add_subcommand("eval", "ATE RMSE of an estimate against ground truth");
  eval->add_option("--est", est)->required();
  eval->add_option("--gt", gt)->required();

  auto* bench = app.add_subcommand("bench", "per-stage normal estimation timing");
  bench->add_option("--scans", scans)->required();
  bench->add_option("--config", cfg)->required();
  bench->add_flag("--oracle", oracle, "also time kNN-PCA normals");
  bench->add_option("--repeat", repeat, "passes over the scans")->check(CLI::PositiveNumber);

  app.add_subcommand("config", "print the default configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*sim) return cmd_sim(fixture, out, seed);
    if (*normals) return cmd_normals(scans, cfg, out, oracle, ppm);
    if (*odom) return cmd_odom(scans, imu, cfg, out, dump_map);
    if (*eval) return cmd_eval(est, gt);
    if (*bench) return cmd_bench(scans, cfg, oracle, repeat);
    std::cout << format_config(RunConfig{});
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
