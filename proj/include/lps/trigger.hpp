#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lps/common.hpp"

namespace lps {

/// Planar image layout of a feature vector: index = c*H*W + r*W + col.
/// Non-image data is treated as a single-channel 1 x d strip.
struct ImageShape {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 1;

  std::size_t size() const noexcept { return height * width * channels; }
  bool operator==(const ImageShape&) const = default;

  /// Square single-channel shape when d is a perfect square, otherwise 1 x d.
  static ImageShape infer(std::size_t dim) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(dim))));
    if (side * side == dim) return {side, side, 1};
    if (dim % 3 == 0) {
      const auto s3 = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(dim / 3))));
      if (s3 * s3 * 3 == dim) return {s3, s3, 3};
    }
    return {1, dim, 1};
  }
};

enum class TriggerKind { patch, blend, signal };

inline std::string_view to_string(TriggerKind k) {
  switch (k) {
    case TriggerKind::patch: return "patch";
    case TriggerKind::blend: return "blend";
    case TriggerKind::signal: return "signal";
  }
  return "?";
}

inline TriggerKind parse_trigger_kind(std::string_view s) {
  if (s == "patch") return TriggerKind::patch;
  if (s == "blend") return TriggerKind::blend;
  if (s == "signal") return TriggerKind::signal;
  throw PreconditionError("unknown trigger kind '" + std::string(s) + "'");
}

/// Trigger pattern and the parameters of its fusion rule.
///
/// patch:  `pattern` is a patch_height x patch_width block (one plane, applied
///         to every channel, or `channels` planes) written at
///         (patch_row, patch_col).
/// blend:  `pattern` is a full feature vector mixed in with weight blend_alpha.
/// signal: a horizontal sinusoid of signal_frequency periods across the
///         image width, scaled by signal_amplitude, added to every row.
struct TriggerSpec {
  TriggerKind kind = TriggerKind::blend;
  ImageShape shape;
  std::vector<double> pattern;
  double blend_alpha = 0.1;
  std::size_t patch_row = 0;
  std::size_t patch_col = 0;
  std::size_t patch_height = 0;
  std::size_t patch_width = 0;
  double signal_amplitude = 0.0;
  int signal_frequency = 1;

  bool operator==(const TriggerSpec&) const = default;

  /// Throws PreconditionError/DimensionMismatch if the trigger cannot be
  /// applied to vectors of length `dim`.
  void validate(std::size_t dim) const {
    if (shape.size() != dim)
      throw DimensionMismatch("trigger shape " + std::to_string(shape.size()) +
                              " does not match feature dimension " + std::to_string(dim));
    for (double v : pattern) require(v >= 0.0 && v <= 1.0, "trigger pattern value outside [0,1]");
    switch (kind) {
      case TriggerKind::blend:
        require(blend_alpha >= 0.0 && blend_alpha <= 1.0, "blend_alpha outside [0,1]");
        if (pattern.size() != dim)
          throw DimensionMismatch("blend pattern length " + std::to_string(pattern.size()) +
                                  " != feature dimension " + std::to_string(dim));
        break;
      case TriggerKind::patch: {
        require(patch_height >= 1 && patch_width >= 1, "patch must be at least 1x1");
        require(patch_row + patch_height <= shape.height && patch_col + patch_width <= shape.width,
                "patch does not fit inside the image");
        const std::size_t plane = patch_height * patch_width;
        if (pattern.size() != plane && pattern.size() != plane * shape.channels)
          throw DimensionMismatch("patch pattern has " + std::to_string(pattern.size()) +
                                  " values, expected " + std::to_string(plane) + " or " +
                                  std::to_string(plane * shape.channels));
        break;
      }
      case TriggerKind::signal:
        require(signal_amplitude >= 0.0, "signal_amplitude must be >= 0");
        require(signal_frequency >= 1, "signal_frequency must be positive");
        break;
    }
  }
};

/// 3x3 all-ones patch in the bottom-right corner (BadNets convention).
inline TriggerSpec make_patch_trigger(ImageShape shape, std::size_t size = 3, double value = 1.0) {
  require(size <= shape.height && size <= shape.width, "patch larger than image");
  TriggerSpec t;
  t.kind = TriggerKind::patch;
  t.shape = shape;
  t.patch_height = t.patch_width = size;
  t.patch_row = shape.height - size;
  t.patch_col = shape.width - size;
  t.pattern.assign(size * size, value);
  return t;
}

inline TriggerSpec make_blend_trigger(ImageShape shape, std::vector<double> pattern, double alpha = 0.1) {
  TriggerSpec t;
  t.kind = TriggerKind::blend;
  t.shape = shape;
  t.pattern = std::move(pattern);
  t.blend_alpha = alpha;
  return t;
}

/// Uniform noise pattern, a common Blended-style trigger image.
inline std::vector<double> make_noise_pattern(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> p(dim);
  for (double& v : p) v = rng.uniform();
  return p;
}

inline TriggerSpec make_signal_trigger(ImageShape shape, double amplitude, int frequency) {
  TriggerSpec t;
  t.kind = TriggerKind::signal;
  t.shape = shape;
  t.signal_amplitude = amplitude;
  t.signal_frequency = frequency;
  return t;
}

/// Fusion g(x, eps) into `out`. out may alias x.
inline void fuse_into(std::span<const double> x, const TriggerSpec& spec, std::span<double> out) {
  const std::size_t d = x.size();
  if (spec.shape.size() != d || out.size() != d)
    throw DimensionMismatch("fuse: input of length " + std::to_string(d) +
                            " does not match trigger shape " + std::to_string(spec.shape.size()));
  if (out.data() != x.data()) std::copy(x.begin(), x.end(), out.begin());
  const std::size_t H = spec.shape.height, W = spec.shape.width, C = spec.shape.channels;
  switch (spec.kind) {
    case TriggerKind::blend: {
      if (spec.pattern.size() != d) throw DimensionMismatch("fuse: blend pattern length mismatch");
      const double a = spec.blend_alpha;
      for (std::size_t j = 0; j < d; ++j) out[j] = (1.0 - a) * out[j] + a * spec.pattern[j];
      break;
    }
    case TriggerKind::patch: {
      const std::size_t plane = spec.patch_height * spec.patch_width;
      const bool per_channel = spec.pattern.size() == plane * C;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t r = 0; r < spec.patch_height; ++r)
          for (std::size_t q = 0; q < spec.patch_width; ++q) {
            const std::size_t src = (per_channel ? c * plane : 0) + r * spec.patch_width + q;
            out[c * H * W + (spec.patch_row + r) * W + spec.patch_col + q] = spec.pattern[src];
          }
      break;
    }
    case TriggerKind::signal: {
      constexpr double two_pi = 6.283185307179586476925;
      for (std::size_t q = 0; q < W; ++q) {
        const double s = spec.signal_amplitude *
                         std::sin(two_pi * spec.signal_frequency * static_cast<double>(q) /
                                  static_cast<double>(W));
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t r = 0; r < H; ++r) out[c * H * W + r * W + q] += s;
      }
      break;
    }
  }
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
}

inline std::vector<double> fuse(std::span<const double> x, const TriggerSpec& spec) {
  std::vector<double> out(x.size());
  fuse_into(x, spec, out);
  return out;
}

/// Loads a patch pattern from a CSV grid: one image row per line.
inline std::vector<double> load_patch_csv(const std::filesystem::path& path, std::size_t& height,
                                          std::size_t& width) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<double> values;
  std::string line;
  height = 0;
  width = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t cols = 0;
    while (std::getline(ss, cell, ',')) {
      values.push_back(std::stod(cell));
      ++cols;
    }
    if (height == 0) width = cols;
    if (cols != width) throw Error(path.string() + ": ragged patch grid");
    ++height;
  }
  if (values.empty()) throw Error(path.string() + ": empty patch grid");
  for (double v : values) require(v >= 0.0 && v <= 1.0, "patch value outside [0,1]");
  return values;
}

// ---------------------------------------------------------------------------

enum class LabelModeKind { all_to_one, all_to_all, clean_label };

inline std::string_view to_string(LabelModeKind m) {
  switch (m) {
    case LabelModeKind::all_to_one: return "all_to_one";
    case LabelModeKind::all_to_all: return "all_to_all";
    case LabelModeKind::clean_label: return "clean_label";
  }
  return "?";
}

inline LabelModeKind parse_label_mode(std::string_view s) {
  if (s == "all_to_one") return LabelModeKind::all_to_one;
  if (s == "all_to_all") return LabelModeKind::all_to_all;
  if (s == "clean_label") return LabelModeKind::clean_label;
  throw PreconditionError("unknown label mode '" + std::string(s) + "'");
}

/// Poisoned-label regime. `target` is y_t; all_to_all ignores it.
struct LabelMode {
  LabelModeKind kind = LabelModeKind::all_to_one;
  int target = 0;

  bool operator==(const LabelMode&) const = default;

  void validate(std::size_t num_classes) const {
    require(target >= 0 && static_cast<std::size_t>(target) < num_classes,
            "label mode target " + std::to_string(target) + " outside [0, " +
                std::to_string(num_classes) + ")");
  }
};

/// Label carried by a poisoned copy of a sample with label y.
constexpr int map_label(int y, std::size_t num_classes, LabelMode mode) {
  switch (mode.kind) {
    case LabelModeKind::all_to_one: return mode.target;
    case LabelModeKind::all_to_all: return static_cast<int>((static_cast<std::size_t>(y) + 1) % num_classes);
    case LabelModeKind::clean_label: return y;
  }
  return y;
}

}  // namespace lps
