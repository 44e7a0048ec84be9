#pragma once

// Runs the odometry pipeline over a simulated sequence, as the CLI does.

#include "loglio/config.hpp"
#include "loglio/pipeline.hpp"
#include "loglio/simulator.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace loglio::test_support {

inline RunConfig config_for(const sim::Fixture& f) {
  RunConfig cfg;
  cfg.map_resolution = f.map_resolution;
  cfg.downsample_resolution = f.map_resolution;
  cfg.imu_T_lidar = f.imu_T_lidar;
  cfg.imu_noise = f.imu.noise;
  return cfg;
}

inline StructureTable table_for(const std::vector<sim::SimulatedScan>& scans, const RunConfig& cfg) {
  std::vector<RingScan> first;
  for (std::size_t i = 0; i < scans.size() && i < static_cast<std::size_t>(cfg.table_scans); ++i)
    first.push_back(scans[i].scan);
  return build_structure_table(first, cfg.ringfals.estimation.window, cfg.ringfals.estimation.condition_cap);
}

struct RunOutput {
  Trajectory estimate;
  std::vector<ScanDiagnostics> diagnostics;
  std::size_t failures = 0;
};

inline RunOutput run_sequence(const sim::Sequence& seq, const RunConfig& cfg,
                              std::size_t max_scans = std::numeric_limits<std::size_t>::max()) {
  RunOutput out;
  Odometry odo(cfg, table_for(seq.scans, cfg));
  odo.initialize(seq.imu, seq.scans.front().scan.scan_start);
  const std::size_t n = std::min(max_scans, seq.scans.size());
  for (std::size_t i = 0; i < n; ++i) {
    try {
      ScanDiagnostics d = odo.process_scan(seq.scans[i].scan, seq.imu);
      out.estimate.push_back({d.timestamp, d.pose});
      out.diagnostics.push_back(std::move(d));
    } catch (const ScanError&) {
      ++out.failures;
    }
  }
  return out;
}

inline Trajectory truth_prefix(const sim::Sequence& seq, std::size_t n) {
  return Trajectory(seq.ground_truth.begin(),
                    seq.ground_truth.begin() + static_cast<std::ptrdiff_t>(std::min(n, seq.ground_truth.size())));
}

}  // namespace loglio::test_support
