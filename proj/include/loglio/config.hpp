#pragma once

// Flat "key = value" run configuration with validation.

#include "loglio/association.hpp"
#include "loglio/core.hpp"
#include "loglio/estimator.hpp"
#include "loglio/io.hpp"
#include "loglio/map_index.hpp"
#include "loglio/ring_fals.hpp"
#include "loglio/voxel_stats.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace loglio {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Every tunable of the pipeline. Defaults are the reference constants.
struct RunConfig {
  double map_resolution = 0.4;
  std::size_t retained_cap = 5;
  double downsample_resolution = 0.4;

  FixPolicy fix;
  SurfelThresholds surfel;

  std::size_t assoc_k = 5;
  std::optional<double> assoc_max_radius;      // default 5 x map resolution
  std::optional<double> merge_plane_distance;  // default map resolution / 4
  double alpha_deg = 60.0;
  double plane_fit_tolerance = 0.1;
  KindNoise noise;
  AssociationMode mode = AssociationMode::hierarchical;

  IekfConfig iekf;
  std::size_t min_correspondences = 10;
  /// Re-run association at every iterate instead of once at the prediction.
  bool reassociate = false;

  RingFalsOptions ringfals;
  int table_scans = 10;

  ImuNoise imu_noise;
  double imu_max_gap = 0.1;
  double init_duration = 0.5;

  Pose imu_T_lidar;

  MapOptions map_options() const {
    MapOptions m;
    m.resolution = map_resolution;
    m.retained_cap = retained_cap;
    m.fix = fix;
    return m;
  }

  AssocConfig assoc_config() const {
    AssocConfig c = AssocConfig::for_resolution(map_resolution);
    c.k = assoc_k;
    if (assoc_max_radius) c.max_radius = *assoc_max_radius;
    if (merge_plane_distance) c.merge_plane_distance = *merge_plane_distance;
    c.alpha_deg = alpha_deg;
    c.plane_fit_tolerance = plane_fit_tolerance;
    c.surfel = surfel;
    c.noise = noise;
    c.mode = mode;
    return c;
  }
};

namespace detail {

struct ConfigKey {
  std::string help;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline double parse_num(std::string_view v) {
  double d;
  if (!io::detail::parse_double(v, d)) throw ConfigError("expected a number, got '" + std::string(v) + "'");
  return d;
}

inline double positive(std::string_view v) {
  const double d = parse_num(v);
  if (!(d > 0.0)) throw ConfigError("value must be positive");
  return d;
}

inline double non_negative(std::string_view v) {
  const double d = parse_num(v);
  if (d < 0.0) throw ConfigError("value must be non-negative");
  return d;
}

inline std::size_t count(std::string_view v, std::size_t lo) {
  const double d = parse_num(v);
  if (d != std::floor(d) || d < static_cast<double>(lo) || d > 1e9)
    throw ConfigError("expected an integer >= " + std::to_string(lo));
  return static_cast<std::size_t>(d);
}

inline int odd_window(std::string_view v) {
  const std::size_t w = count(v, 1);
  if (w % 2 == 0) throw ConfigError("window must be odd");
  return static_cast<int>(w);
}

inline bool boolean(std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false");
}

inline std::string num(double v) { return io::detail::fmt(v); }

inline const std::map<std::string, ConfigKey, std::less<>>& config_keys() {
  using C = RunConfig;
  using SV = std::string_view;
  static const std::map<std::string, ConfigKey, std::less<>> keys = [] {
    std::map<std::string, ConfigKey, std::less<>> k;
    auto dbl = [&](const char* name, const char* help, double C::*field, double (*parse)(SV)) {
      k[name] = {help, [=](C& c, SV v) { c.*field = parse(v); }, [=](const C& c) { return num(c.*field); }};
    };
    auto cnt = [&](const char* name, const char* help, std::size_t C::*field, std::size_t lo) {
      k[name] = {help, [=](C& c, SV v) { c.*field = count(v, lo); },
                 [=](const C& c) { return std::to_string(c.*field); }};
    };
    dbl("map.resolution", "voxel edge length of the map (m)", &C::map_resolution, positive);
    cnt("map.retained_cap", "points retained per voxel", &C::retained_cap, 1);
    dbl("downsample.resolution", "per-scan downsampling voxel (m)", &C::downsample_resolution, positive);
    k["fix.eta"] = {"points before a voxel may be fixed", [](C& c, SV v) { c.fix.eta = count(v, 3); },
                    [](const C& c) { return std::to_string(c.fix.eta); }};
    k["fix.angle_deg"] = {"max angle between measured and distribution normal (deg)",
                          [](C& c, SV v) {
                            c.fix.angle_threshold_deg = positive(v);
                            if (c.fix.angle_threshold_deg > 90.0) throw ConfigError("angle must be <= 90");
                          },
                          [](const C& c) { return num(c.fix.angle_threshold_deg); }};
    k["surfel.rho_min"] = {"minimum planarity",
                           [](C& c, SV v) {
                             c.surfel.rho_min = non_negative(v);
                             if (c.surfel.rho_min > 1.0) throw ConfigError("planarity is at most 1");
                           },
                           [](const C& c) { return num(c.surfel.rho_min); }};
    k["surfel.gamma_min"] = {"minimum l2/l1 ratio", [](C& c, SV v) { c.surfel.gamma_min = positive(v); },
                             [](const C& c) { return num(c.surfel.gamma_min); }};
    k["surfel.min_points"] = {"minimum points of a surfel",
                              [](C& c, SV v) { c.surfel.min_points = count(v, 3); },
                              [](const C& c) { return std::to_string(c.surfel.min_points); }};
    cnt("assoc.k", "nearest neighbors per query", &C::assoc_k, 3);
    k["assoc.max_radius"] = {"neighbor search radius (m), default 5 x map.resolution",
                             [](C& c, SV v) { c.assoc_max_radius = positive(v); },
                             [](const C& c) { return num(c.assoc_config().max_radius); }};
    k["assoc.merge_plane_distance"] = {"max voxel-mean offset from a merged surfel (m), default map.resolution / 4",
                                       [](C& c, SV v) { c.merge_plane_distance = positive(v); },
                                       [](const C& c) { return num(c.assoc_config().merge_plane_distance); }};
    k["assoc.alpha_deg"] = {"normal consistency threshold (deg)",
                            [](C& c, SV v) {
                              c.alpha_deg = positive(v);
                              if (c.alpha_deg > 90.0) throw ConfigError("angle must be <= 90");
                            },
                            [](const C& c) { return num(c.alpha_deg); }};
    dbl("assoc.plane_fit_tolerance", "max neighbor distance from a fitted plane (m)", &C::plane_fit_tolerance,
        positive);
    k["assoc.noise_large"] = {"variance of large-surfel residuals (m^2)",
                              [](C& c, SV v) { c.noise.large_surfel = positive(v); },
                              [](const C& c) { return num(c.noise.large_surfel); }};
    k["assoc.noise_small"] = {"variance of small-surfel residuals (m^2)",
                              [](C& c, SV v) { c.noise.small_surfel = positive(v); },
                              [](const C& c) { return num(c.noise.small_surfel); }};
    k["assoc.noise_plane"] = {"variance of plane residuals (m^2)", [](C& c, SV v) { c.noise.plane = positive(v); },
                              [](const C& c) { return num(c.noise.plane); }};
    k["assoc.mode"] = {"hierarchical or plane_only",
                       [](C& c, SV v) {
                         if (v == "hierarchical") c.mode = AssociationMode::hierarchical;
                         else if (v == "plane_only") c.mode = AssociationMode::plane_only;
                         else throw ConfigError("expected hierarchical or plane_only");
                       },
                       [](const C& c) {
                         return std::string(c.mode == AssociationMode::hierarchical ? "hierarchical" : "plane_only");
                       }};
    k["iekf.max_iters"] = {"maximum iterations per update",
                           [](C& c, SV v) { c.iekf.max_iters = static_cast<int>(count(v, 1)); },
                           [](const C& c) { return std::to_string(c.iekf.max_iters); }};
    k["iekf.convergence_tol"] = {"step norm that ends the iteration",
                                 [](C& c, SV v) { c.iekf.convergence_tol = positive(v); },
                                 [](const C& c) { return num(c.iekf.convergence_tol); }};
    k["iekf.condition_cap"] = {"normal-matrix condition number above which the update is rejected",
                               [](C& c, SV v) { c.iekf.condition_cap = positive(v); },
                               [](const C& c) { return num(c.iekf.condition_cap); }};
    k["iekf.update_gravity"] = {"estimate gravity in the update", [](C& c, SV v) { c.iekf.update_gravity = boolean(v); },
                                [](const C& c) { return std::string(c.iekf.update_gravity ? "true" : "false"); }};
    k["iekf.reassociate"] = {"associate again at every iterate", [](C& c, SV v) { c.reassociate = boolean(v); },
                             [](const C& c) { return std::string(c.reassociate ? "true" : "false"); }};
    cnt("iekf.min_correspondences", "fewer correspondences skip the update", &C::min_correspondences, 1);
    k["ringfals.window"] = {"box filter window (odd)", [](C& c, SV v) { c.ringfals.estimation.window = odd_window(v); },
                            [](const C& c) { return std::to_string(c.ringfals.estimation.window); }};
    k["ringfals.smooth_window"] = {"median smoothing window (odd)",
                                   [](C& c, SV v) { c.ringfals.smooth_window = odd_window(v); },
                                   [](const C& c) { return std::to_string(c.ringfals.smooth_window); }};
    k["ringfals.min_occupancy"] = {"minimum occupied fraction of a window",
                                   [](C& c, SV v) {
                                     c.ringfals.estimation.min_occupancy = positive(v);
                                     if (c.ringfals.estimation.min_occupancy > 1.0) throw ConfigError("at most 1");
                                   },
                                   [](const C& c) { return num(c.ringfals.estimation.min_occupancy); }};
    k["ringfals.condition_cap"] = {"moment-matrix condition number cap",
                                   [](C& c, SV v) { c.ringfals.estimation.condition_cap = positive(v); },
                                   [](const C& c) { return num(c.ringfals.estimation.condition_cap); }};
    k["ringfals.table_scans"] = {"scans used to build the structure table",
                                 [](C& c, SV v) { c.table_scans = static_cast<int>(count(v, 1)); },
                                 [](const C& c) { return std::to_string(c.table_scans); }};
    k["imu.gyro_noise"] = {"gyro noise density", [](C& c, SV v) { c.imu_noise.gyro_noise = non_negative(v); },
                           [](const C& c) { return num(c.imu_noise.gyro_noise); }};
    k["imu.accel_noise"] = {"accelerometer noise density", [](C& c, SV v) { c.imu_noise.accel_noise = non_negative(v); },
                            [](const C& c) { return num(c.imu_noise.accel_noise); }};
    k["imu.gyro_bias_rw"] = {"gyro bias random walk", [](C& c, SV v) { c.imu_noise.gyro_bias_rw = non_negative(v); },
                             [](const C& c) { return num(c.imu_noise.gyro_bias_rw); }};
    k["imu.accel_bias_rw"] = {"accelerometer bias random walk",
                              [](C& c, SV v) { c.imu_noise.accel_bias_rw = non_negative(v); },
                              [](const C& c) { return num(c.imu_noise.accel_bias_rw); }};
    dbl("imu.max_gap", "largest tolerated IMU gap (s)", &C::imu_max_gap, positive);
    dbl("init.duration", "standstill window for gravity initialization (s)", &C::init_duration, positive);
    const char* axes[] = {"x", "y", "z"};
    for (int i = 0; i < 3; ++i) {
      k[std::string("extrinsic.t") + axes[i]] = {
          "LiDAR position in the IMU frame (m)",
          [i](C& c, SV v) { c.imu_T_lidar.translation[i] = parse_num(v); },
          [i](const C& c) { return num(c.imu_T_lidar.translation[i]); }};
    }
    // Quaternion components are set raw and normalized once the file is read.
    const char* qaxes[] = {"qx", "qy", "qz", "qw"};
    for (int i = 0; i < 4; ++i) {
      k[std::string("extrinsic.") + qaxes[i]] = {
          "LiDAR orientation in the IMU frame (quaternion)",
          [i](C& c, SV v) {
            Quat q = c.imu_T_lidar.rotation.quaternion();
            q.coeffs()[i] = parse_num(v);
            c.imu_T_lidar.rotation = Rotation(q);
          },
          [i](const C& c) { return num(c.imu_T_lidar.rotation.quaternion().coeffs()[i]); }};
    }
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Applies one key; unknown keys and invalid values raise ConfigError.
inline void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  const auto& keys = detail::config_keys();
  const auto it = keys.find(key);
  if (it == keys.end()) throw ConfigError("unknown key '" + std::string(key) + "'");
  try {
    it->second.set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

inline std::vector<std::string> config_key_names() {
  std::vector<std::string> out;
  for (const auto& [k, v] : detail::config_keys()) out.push_back(k);
  return out;
}

/// Parses "key = value" lines; '#' starts a comment. Quaternion parts may be
/// given in any order since they are only checked at the end.
inline RunConfig parse_config(std::string_view text, RunConfig cfg = {}) {
  const auto lines = io::detail::lines(text);
  Quat q_raw = cfg.imu_T_lidar.rotation.quaternion();
  bool q_given = false;
  std::map<std::string, std::size_t, std::less<>> seen;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line = i + 1;
    std::string_view s = lines[i];
    if (const auto hash = s.find('#'); hash != s.npos) s = s.substr(0, hash);
    s = io::detail::trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == s.npos) throw ConfigError("expected 'key = value'", line);
    const std::string_view key = io::detail::trim(s.substr(0, eq));
    const std::string_view value = io::detail::trim(s.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError("expected 'key = value'", line);
    if (!seen.emplace(std::string(key), line).second) throw ConfigError("duplicate key '" + std::string(key) + "'", line);
    if (key.starts_with("extrinsic.q")) {
      const int idx = key == "extrinsic.qx" ? 0 : key == "extrinsic.qy" ? 1 : key == "extrinsic.qz" ? 2
                      : key == "extrinsic.qw"                          ? 3 : -1;
      if (idx < 0) throw ConfigError("unknown key '" + std::string(key) + "'", line);
      try {
        q_raw.coeffs()[idx] = detail::parse_num(value);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string(key) + ": " + e.what(), line);
      }
      q_given = true;
      continue;
    }
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), line);
    }
  }
  if (q_given) {
    if (!(q_raw.norm() > 1e-9)) throw ConfigError("extrinsic quaternion must be nonzero");
    cfg.imu_T_lidar.rotation = Rotation(q_raw);
  }
  return cfg;
}

inline RunConfig read_config(const std::filesystem::path& path) {
  return parse_config(io::read_file(path));
}

/// Renders every key with its current value, one per line, with a comment.
inline std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : detail::config_keys()) out += "# " + v.help + "\n" + k + " = " + v.get(cfg) + "\n";
  return out;
}

}  // namespace loglio
