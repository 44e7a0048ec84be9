#pragma once

// File formats: RSCN binary scans, IMU CSV, TUM trajectories, map and normal-image dumps.

#include "loglio/core.hpp"
#include "loglio/ring_fals.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace loglio::io {

enum class FormatErrorKind {
  io,
  bad_magic,
  bad_version,
  truncated,
  trailing_data,
  invalid_field,
  bad_header,
  malformed_row,
  non_increasing_time,
};

inline std::string_view to_string(FormatErrorKind k) {
  switch (k) {
    case FormatErrorKind::io: return "io";
    case FormatErrorKind::bad_magic: return "bad_magic";
    case FormatErrorKind::bad_version: return "bad_version";
    case FormatErrorKind::truncated: return "truncated";
    case FormatErrorKind::trailing_data: return "trailing_data";
    case FormatErrorKind::invalid_field: return "invalid_field";
    case FormatErrorKind::bad_header: return "bad_header";
    case FormatErrorKind::malformed_row: return "malformed_row";
    case FormatErrorKind::non_increasing_time: return "non_increasing_time";
  }
  return "unknown";
}

/// Parse or IO failure. `line` is 1-based for text formats and 0 otherwise.
class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what),
        kind_(kind),
        line_(line) {}

  FormatErrorKind kind() const { return kind_; }
  std::size_t line() const { return line_; }

 private:
  FormatErrorKind kind_;
  std::size_t line_;
};

// ---------------------------------------------------------------- files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::io, "cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw FormatError(FormatErrorKind::io, "write failed: " + path.string());
}

// ---------------------------------------------------------------- RSCN

constexpr std::size_t kScanHeaderSize = 32;
constexpr std::size_t kScanRecordSize = 20;
constexpr std::uint16_t kScanVersion = 1;

namespace detail {

template <class T>
void put(std::string& out, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T get(std::string_view data, std::size_t offset) {
  T v;
  std::memcpy(&v, data.data() + offset, sizeof(T));
  return v;
}

}  // namespace detail

/// Serializes a scan; positions and time offsets are stored as f32.
inline std::string encode_scan(const RingScan& scan) {
  if (scan.ring_count < 0 || scan.ring_count > 0xFFFF || scan.points_per_ring < 0)
    throw FormatError(FormatErrorKind::invalid_field, "scan dimensions out of range");
  std::string out;
  out.reserve(kScanHeaderSize + kScanRecordSize * scan.points.size());
  out.append("RSCN", 4);
  detail::put<std::uint16_t>(out, kScanVersion);
  detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(scan.ring_count));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(scan.points_per_ring));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(scan.points.size()));
  detail::put<double>(out, scan.scan_start);
  detail::put<double>(out, scan.scan_end);
  for (const RingPoint& p : scan.points) {
    if (p.ring < 0 || p.ring > 0xFFFF) throw FormatError(FormatErrorKind::invalid_field, "ring out of range");
    detail::put<float>(out, static_cast<float>(p.position.x()));
    detail::put<float>(out, static_cast<float>(p.position.y()));
    detail::put<float>(out, static_cast<float>(p.position.z()));
    detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(p.ring));
    detail::put<std::uint16_t>(out, 0);
    detail::put<float>(out, static_cast<float>(p.time_offset));
  }
  return out;
}

/// Parses and validates an RSCN buffer. Range and azimuth are recomputed from positions.
inline RingScan decode_scan(std::string_view data) {
  if (data.size() < 4) throw FormatError(FormatErrorKind::truncated, "scan header truncated");
  if (data.substr(0, 4) != "RSCN") throw FormatError(FormatErrorKind::bad_magic, "not an RSCN scan");
  if (data.size() < kScanHeaderSize) throw FormatError(FormatErrorKind::truncated, "scan header truncated");
  const auto version = detail::get<std::uint16_t>(data, 4);
  if (version != kScanVersion)
    throw FormatError(FormatErrorKind::bad_version, "unsupported scan version " + std::to_string(version));
  RingScan scan;
  scan.ring_count = detail::get<std::uint16_t>(data, 6);
  const auto ppr = detail::get<std::uint32_t>(data, 8);
  const auto count = detail::get<std::uint32_t>(data, 12);
  scan.scan_start = detail::get<double>(data, 16);
  scan.scan_end = detail::get<double>(data, 24);

  const std::size_t body = data.size() - kScanHeaderSize;
  const std::size_t expected = static_cast<std::size_t>(count) * kScanRecordSize;
  if (body < expected) throw FormatError(FormatErrorKind::truncated, "scan body truncated");
  if (body > expected) throw FormatError(FormatErrorKind::trailing_data, "bytes after last scan record");
  if (scan.ring_count < 1) throw FormatError(FormatErrorKind::invalid_field, "ring_count must be positive");
  if (ppr < 1 || ppr > (1u << 24)) throw FormatError(FormatErrorKind::invalid_field, "points_per_ring out of range");
  scan.points_per_ring = static_cast<int>(ppr);
  if (!std::isfinite(scan.scan_start) || !std::isfinite(scan.scan_end) || !(scan.scan_end > scan.scan_start))
    throw FormatError(FormatErrorKind::invalid_field, "scan_end must follow scan_start");
  const double duration = scan.duration();

  scan.points.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t o = kScanHeaderSize + i * kScanRecordSize;
    const Point3 p(detail::get<float>(data, o), detail::get<float>(data, o + 4), detail::get<float>(data, o + 8));
    const auto ring = detail::get<std::uint16_t>(data, o + 12);
    const auto pad = detail::get<std::uint16_t>(data, o + 14);
    const double t = detail::get<float>(data, o + 16);
    auto fail = [i](const char* what) {
      return FormatError(FormatErrorKind::invalid_field, std::string(what) + " in record " + std::to_string(i));
    };
    if (!p.allFinite() || p.squaredNorm() == 0.0) throw fail("invalid position");
    if (ring >= scan.ring_count) throw fail("ring out of range");
    if (pad != 0) throw fail("nonzero padding");
    if (!std::isfinite(t) || t < 0.0 || t > duration * (1.0 + 1e-6)) throw fail("time_offset outside the sweep");
    scan.points.push_back(RingPoint::from_position(p, ring, t));
  }
  return scan;
}

inline void write_scan_file(const std::filesystem::path& path, const RingScan& scan) {
  write_file(path, encode_scan(scan));
}

inline RingScan read_scan_file(const std::filesystem::path& path) { return decode_scan(read_file(path)); }

// ---------------------------------------------------------------- text helpers

namespace detail {

/// Shortest representation that parses back to the same double; -0 prints as 0.
inline std::string fmt(double v) {
  if (v == 0.0) v = 0.0;
  std::array<char, 32> buf{};
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), r.ptr);
}

inline std::string fmt_fixed(double v, int decimals) {
  if (v == 0.0) v = 0.0;
  std::array<char, 64> buf{};
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed, decimals);
  if (r.ec != std::errc()) throw FormatError(FormatErrorKind::invalid_field, "value not printable");
  return std::string(buf.data(), r.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size() && std::isfinite(out);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    const std::size_t j = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
    if (i > j) out.push_back(s.substr(j, i - j));
  }
  return out;
}

inline std::vector<std::string_view> lines(std::string_view text) {
  std::vector<std::string_view> out = split(text, '\n');
  if (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------- IMU CSV

inline constexpr std::string_view kImuHeader = "t,wx,wy,wz,ax,ay,az";

inline std::string encode_imu_csv(const std::vector<ImuSample>& samples) {
  std::string out(kImuHeader);
  out += '\n';
  for (const ImuSample& s : samples) {
    out += detail::fmt(s.timestamp);
    for (int i = 0; i < 3; ++i) (out += ',') += detail::fmt(s.angular_velocity[i]);
    for (int i = 0; i < 3; ++i) (out += ',') += detail::fmt(s.linear_acceleration[i]);
    out += '\n';
  }
  return out;
}

inline std::vector<ImuSample> decode_imu_csv(std::string_view text) {
  const auto ls = detail::lines(text);
  if (ls.empty() || ls.front() != kImuHeader)
    throw FormatError(FormatErrorKind::bad_header, "expected header '" + std::string(kImuHeader) + "'", 1);
  std::vector<ImuSample> out;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    const std::size_t line = i + 1;
    if (ls[i].empty()) continue;
    const auto f = detail::split(ls[i], ',');
    if (f.size() != 7) throw FormatError(FormatErrorKind::malformed_row, "expected 7 fields", line);
    double v[7];
    for (int k = 0; k < 7; ++k)
      if (!detail::parse_double(f[static_cast<std::size_t>(k)], v[k]))
        throw FormatError(FormatErrorKind::malformed_row, "non-numeric field " + std::to_string(k + 1), line);
    if (!out.empty() && !(v[0] > out.back().timestamp))
      throw FormatError(FormatErrorKind::non_increasing_time, "timestamps must increase", line);
    out.push_back({v[0], Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])});
  }
  return out;
}

inline void write_imu_csv(const std::filesystem::path& path, const std::vector<ImuSample>& s) {
  write_file(path, encode_imu_csv(s));
}
inline std::vector<ImuSample> read_imu_csv(const std::filesystem::path& path) {
  return decode_imu_csv(read_file(path));
}

// ---------------------------------------------------------------- TUM

inline std::string tum_line(const StampedPose& sp) {
  Quat q = sp.pose.rotation.quaternion().normalized();
  const Vec3& t = sp.pose.translation;
  std::string s = detail::fmt_fixed(sp.time, 9);
  for (double v : {t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()}) (s += ' ') += detail::fmt(v);
  return s;
}

inline std::string encode_tum(const Trajectory& traj) {
  std::string out;
  for (const StampedPose& sp : traj) (out += tum_line(sp)) += '\n';
  return out;
}

/// Blank lines and '#' comments are skipped.
inline Trajectory decode_tum(std::string_view text) {
  Trajectory out;
  const auto ls = detail::lines(text);
  for (std::size_t i = 0; i < ls.size(); ++i) {
    const std::size_t line = i + 1;
    if (ls[i].empty() || ls[i].front() == '#') continue;
    const auto f = detail::split_ws(ls[i]);
    if (f.size() != 8)
      throw FormatError(FormatErrorKind::malformed_row, "expected 8 fields, got " + std::to_string(f.size()), line);
    double v[8];
    for (int k = 0; k < 8; ++k)
      if (!detail::parse_double(f[static_cast<std::size_t>(k)], v[k]))
        throw FormatError(FormatErrorKind::malformed_row, "non-numeric field " + std::to_string(k + 1), line);
    const Quat q(v[7], v[4], v[5], v[6]);
    if (!(q.norm() > 1e-9)) throw FormatError(FormatErrorKind::invalid_field, "zero quaternion", line);
    if (!out.empty() && !(v[0] > out.back().time))
      throw FormatError(FormatErrorKind::non_increasing_time, "timestamps must increase", line);
    out.push_back({v[0], Pose{Rotation(q), Vec3(v[1], v[2], v[3])}});
  }
  return out;
}

inline void write_trajectory_tum(const std::filesystem::path& path, const Trajectory& traj) {
  write_file(path, encode_tum(traj));
}
inline Trajectory read_trajectory_tum(const std::filesystem::path& path) { return decode_tum(read_file(path)); }

// ---------------------------------------------------------------- dumps

/// Binary PPM of a normal image, RGB = (n + 1) / 2, invalid cells black.
inline std::string encode_normal_ppm(const NormalImage& img) {
  std::string out = "P6\n" + std::to_string(img.cols) + " " + std::to_string(img.rows) + "\n255\n";
  for (int r = img.rows - 1; r >= 0; --r) {
    for (int c = 0; c < img.cols; ++c) {
      const std::size_t k = img.index(r, c);
      for (int i = 0; i < 3; ++i) {
        const double v = img.valid[k] ? 0.5 * (img.normal[k][i] + 1.0) : 0.0;
        out += static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
      }
    }
  }
  return out;
}

}  // namespace loglio::io
