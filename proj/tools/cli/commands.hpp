#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dgcn/config.hpp"

namespace dgcn::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2 };

struct GradcheckGroup {
  std::string name;
  std::size_t size = 0;
  double worst_rel_error = 0;
  double grad_norm = 0;  // max |analytic gradient|
};

struct GradcheckReport {
  std::vector<GradcheckGroup> groups;
  double worst = 0;
  double seconds = 0;
  bool passed(double tolerance) const { return worst < tolerance; }
};

/// Finite-difference check of every trainable head tensor against backprop, in f64.
/// The loss is cross-entropy of the head output on seeded random features and labels.
/// Per tensor: ||g - g_fd||_inf / max(||g||_inf, ||g_fd||_inf, floor). The floor keeps
/// biases that feed a batch norm (true gradient exactly zero) from dividing round-off by round-off.
inline constexpr double kGradcheckFloor = 1e-3;
GradcheckReport run_gradcheck(const RunConfig& cfg, double eps, std::uint64_t seed);

struct EquivReport {
  std::size_t trials = 0;
  std::size_t nodes = 0;
  double worst_rel_error = 0;
  std::size_t failures = 0;
};

/// Paired adjacency-first / factor-first coordinate messages on seeded random node features.
/// n = (height/downsample)(width/downsample), D = channels.
EquivReport run_equiv(const RunConfig& cfg, std::size_t trials, double tolerance, std::uint64_t seed);

/// Equivalence defaults: f64, n = 64 nodes (64x64, d = 8), D = 32.
RunConfig default_equiv_config();

/// Thread cap from DGCN_THREADS (default 1). Throws ConfigError on a malformed value.
std::size_t thread_cap();

/// Binary 8-bit PGM (P5).
void write_pgm(const std::string& path, std::size_t height, std::size_t width, const std::vector<std::uint8_t>& pixels);

/// Keeps freed activation buffers in the heap instead of returning them to the OS after
/// every step (glibc only; a no-op elsewhere). Training is several times slower without it.
void configure_allocator();

/// Full command-line entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dgcn::cli
