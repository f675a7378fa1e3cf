#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace uniforce {

/// Cartesian triple. Units are contextual: m, m/s, m/s^2 or N.
using Vec3 = Eigen::Vector3d;

inline constexpr double kGravity = 9.81;

/// Planar base twist (vx, vy in m/s, wz in rad/s).
struct BaseVelocity {
  double vx = 0.0;
  double vy = 0.0;
  double wz = 0.0;

  bool operator==(const BaseVelocity&) const = default;
};

inline double planar_speed(const BaseVelocity& v) { return std::hypot(v.vx, v.vy); }

enum class ErrorCode {
  NonFiniteState,
  UnstableGains,
  ActionOutOfRange,
  NonContiguous,
  InsufficientHistory,
  Divergence,
  ModeCommandMismatch,
  RecordingAlreadyActive,
  RecordingNotActive,
  StorageFull,
  SchemaMismatch,
  EmptyDataset,
  InvalidArgument,
  ConfigError,
  MalformedMessage,
  LeaseHeld,
  NotLeaseHolder,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::UnstableGains: return "UnstableGains";
    case ErrorCode::ActionOutOfRange: return "ActionOutOfRange";
    case ErrorCode::NonContiguous: return "NonContiguous";
    case ErrorCode::InsufficientHistory: return "InsufficientHistory";
    case ErrorCode::Divergence: return "Divergence";
    case ErrorCode::ModeCommandMismatch: return "ModeCommandMismatch";
    case ErrorCode::RecordingAlreadyActive: return "RecordingAlreadyActive";
    case ErrorCode::RecordingNotActive: return "RecordingNotActive";
    case ErrorCode::StorageFull: return "StorageFull";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::MalformedMessage: return "MalformedMessage";
    case ErrorCode::LeaseHeld: return "LeaseHeld";
    case ErrorCode::NotLeaseHolder: return "NotLeaseHolder";
  }
  return "Unknown";
}

/// Every library failure is reported as an Error carrying a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline bool all_finite(const Vec3& v) { return v.allFinite(); }

/// Deterministic generator. splitmix64 seeding + xoshiro256**; the uniform
/// mapping is spelled out here so that streams do not depend on the standard
/// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) {
      x += 0x9E3779B97F4A7C15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
      s = z ^ (z >> 31);
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  /// Standard normal via Box-Muller (one value per call, the pair partner is discarded).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4]{};
};

/// Derive an independent stream seed from a base seed and a salt.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  Rng r(base ^ (salt * 0xD1B54A32D192ED03ULL));
  return r.next_u64();
}

inline constexpr double kFeetClockHz = 2.0;

/// Trot clock: diagonal pairs half a period apart.
inline std::array<double, 4> feet_clock(double t) {
  const double base = t * kFeetClockHz;
  std::array<double, 4> out{};
  const std::array<double, 4> offsets{0.0, 0.5, 0.5, 0.0};
  for (std::size_t i = 0; i < 4; ++i) {
    const double phase = base + offsets[i];
    out[i] = phase - std::floor(phase);
  }
  return out;
}

}  // namespace uniforce
