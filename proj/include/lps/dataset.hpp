#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lps/common.hpp"

namespace lps {

// ---------------------------------------------------------------------------
// Loader errors. Each malformed-input condition has its own type so callers
// and tests can tell them apart.

class DatasetError : public Error {
 public:
  using Error::Error;
};
class BadMagicNumber : public DatasetError {
 public:
  using DatasetError::DatasetError;
};
class TruncatedPayload : public DatasetError {
 public:
  using DatasetError::DatasetError;
};
class CountMismatch : public DatasetError {
 public:
  using DatasetError::DatasetError;
};
class EmptyInput : public DatasetError {
 public:
  using DatasetError::DatasetError;
};
class BadRecordLength : public DatasetError {
 public:
  using DatasetError::DatasetError;
};
class LabelOutOfRange : public DatasetError {
 public:
  using DatasetError::DatasetError;
};
class StratificationError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

/// Flat feature matrix plus labels, in no particular order. This is what
/// models train and evaluate on; poisoned datasets are expressed in it
/// because relabelling breaks the class ordering.
struct Samples {
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  std::vector<double> features;  // row-major, size() * dim
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * dim, dim};
  }
  std::span<double> row(std::size_t i) { return {features.data() + i * dim, dim}; }

  bool operator==(const Samples&) const = default;
};

/// Class-sorted labelled dataset.
///
/// Samples are stored in blocks by ascending class index; within a block the
/// original order is kept (stable sort), so position i has a well defined
/// meaning for per-class selection. `original_index(i)` maps a sorted
/// position back to where the sample sat in the source.
class LabeledDataset {
 public:
  LabeledDataset() = default;

  /// Validates and class-sorts `raw`. Labels must lie in [0, raw.num_classes).
  static LabeledDataset from_samples(Samples raw) {
    require(raw.features.size() == raw.labels.size() * raw.dim,
            "LabeledDataset: feature buffer does not match labels * dim");
    for (int y : raw.labels)
      if (y < 0 || static_cast<std::size_t>(y) >= raw.num_classes)
        throw LabelOutOfRange("LabeledDataset: label " + std::to_string(y) +
                              " outside [0, " + std::to_string(raw.num_classes) + ")");
    for (double v : raw.features)
      require(v >= 0.0 && v <= 1.0, "LabeledDataset: feature outside [0,1]");

    const std::size_t n = raw.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return raw.labels[a] < raw.labels[b]; });

    LabeledDataset ds;
    ds.data_.dim = raw.dim;
    ds.data_.num_classes = raw.num_classes;
    ds.data_.features.resize(raw.features.size());
    ds.data_.labels.resize(n);
    ds.original_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t src = order[i];
      ds.data_.labels[i] = raw.labels[src];
      std::copy_n(raw.features.begin() + static_cast<std::ptrdiff_t>(src * raw.dim), raw.dim,
                  ds.data_.features.begin() + static_cast<std::ptrdiff_t>(i * raw.dim));
      ds.original_[i] = src;
    }
    ds.counts_.assign(raw.num_classes, 0);
    for (int y : ds.data_.labels) ++ds.counts_[static_cast<std::size_t>(y)];
    ds.offsets_.assign(raw.num_classes, 0);
    for (std::size_t k = 1; k < raw.num_classes; ++k)
      ds.offsets_[k] = ds.offsets_[k - 1] + ds.counts_[k - 1];
    return ds;
  }

  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim() const noexcept { return data_.dim; }
  std::size_t num_classes() const noexcept { return data_.num_classes; }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> features(std::size_t i) const { return data_.row(i); }
  int label(std::size_t i) const { return data_.labels[i]; }

  const std::vector<std::size_t>& class_counts() const noexcept { return counts_; }
  const std::vector<std::size_t>& class_offsets() const noexcept { return offsets_; }
  std::size_t class_count(std::size_t k) const { return counts_.at(k); }
  std::size_t class_begin(std::size_t k) const { return offsets_.at(k); }
  std::size_t class_end(std::size_t k) const { return offsets_.at(k) + counts_.at(k); }

  const Samples& samples() const noexcept { return data_; }

  /// Source position of the sample at sorted position i.
  std::size_t original_index(std::size_t i) const { return original_.at(i); }
  const std::vector<std::size_t>& original_order() const noexcept { return original_; }

  /// Re-expresses a sorted-order mask in source order.
  template <typename T>
  std::vector<T> to_original_order(std::span<const T> sorted) const {
    require(sorted.size() == size(), "to_original_order: length mismatch");
    std::vector<T> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[original_[i]] = sorted[i];
    return out;
  }

  template <typename T>
  std::vector<T> to_sorted_order(std::span<const T> original) const {
    require(original.size() == size(), "to_sorted_order: length mismatch");
    std::vector<T> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = original[original_[i]];
    return out;
  }

  /// Samples back in their source order.
  Samples in_original_order() const {
    Samples out;
    out.dim = dim();
    out.num_classes = num_classes();
    out.features.resize(data_.features.size());
    out.labels.resize(size());
    for (std::size_t i = 0; i < size(); ++i) {
      out.labels[original_[i]] = data_.labels[i];
      std::copy_n(data_.row(i).begin(), dim(), out.row(original_[i]).begin());
    }
    return out;
  }

  bool operator==(const LabeledDataset&) const = default;

 private:
  Samples data_;
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> original_;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t at) {
  return (std::uint32_t{buf[at]} << 24) | (std::uint32_t{buf[at + 1]} << 16) |
         (std::uint32_t{buf[at + 2]} << 8) | std::uint32_t{buf[at + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarClasses = 10;

/// Reads an IDX image file (magic 0x803, u8 pixels) and its IDX label file
/// (magic 0x801). The class count is max(label) + 1.
inline LabeledDataset load_idx(const std::filesystem::path& images_path,
                               const std::filesystem::path& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  if (img.size() < 16) throw TruncatedPayload("IDX image header truncated: " + images_path.string());
  if (lab.size() < 8) throw TruncatedPayload("IDX label header truncated: " + labels_path.string());
  if (detail::read_be32(img, 0) != kIdxImageMagic)
    throw BadMagicNumber("IDX image magic is not 0x00000803: " + images_path.string());
  if (detail::read_be32(lab, 0) != kIdxLabelMagic)
    throw BadMagicNumber("IDX label magic is not 0x00000801: " + labels_path.string());

  const std::size_t n_img = detail::read_be32(img, 4);
  const std::size_t rows = detail::read_be32(img, 8);
  const std::size_t cols = detail::read_be32(img, 12);
  const std::size_t n_lab = detail::read_be32(lab, 4);
  if (n_img != n_lab)
    throw CountMismatch("IDX count mismatch: " + std::to_string(n_img) + " images vs " +
                        std::to_string(n_lab) + " labels");
  const std::size_t dim = rows * cols;
  if (img.size() < 16 + n_img * dim) throw TruncatedPayload("IDX image payload truncated");
  if (lab.size() < 8 + n_lab) throw TruncatedPayload("IDX label payload truncated");

  Samples raw;
  raw.dim = dim;
  raw.labels.resize(n_img);
  raw.features.resize(n_img * dim);
  int max_label = -1;
  for (std::size_t i = 0; i < n_img; ++i) {
    raw.labels[i] = lab[8 + i];
    max_label = std::max(max_label, raw.labels[i]);
  }
  for (std::size_t j = 0; j < n_img * dim; ++j) raw.features[j] = img[16 + j] / 255.0;
  raw.num_classes = static_cast<std::size_t>(max_label + 1);
  return LabeledDataset::from_samples(std::move(raw));
}

/// Reads CIFAR-10 binary batches: each record is one label byte followed by
/// 3072 pixel bytes (R plane, G plane, B plane, 32x32 each).
inline LabeledDataset load_cifar_binary(std::span<const std::filesystem::path> paths) {
  if (paths.empty()) throw EmptyInput("load_cifar_binary: no input files");
  Samples raw;
  raw.dim = kCifarRecordBytes - 1;
  raw.num_classes = kCifarClasses;
  for (const auto& path : paths) {
    const auto buf = detail::read_file(path);
    if (buf.size() % kCifarRecordBytes != 0)
      throw BadRecordLength(path.string() + ": length " + std::to_string(buf.size()) +
                            " is not a multiple of 3073");
    for (std::size_t at = 0; at < buf.size(); at += kCifarRecordBytes) {
      if (buf[at] >= kCifarClasses)
        throw LabelOutOfRange(path.string() + ": label byte " + std::to_string(buf[at]));
      raw.labels.push_back(buf[at]);
      for (std::size_t j = 1; j < kCifarRecordBytes; ++j) raw.features.push_back(buf[at + j] / 255.0);
    }
  }
  return LabeledDataset::from_samples(std::move(raw));
}

/// Gaussian blobs in [0,1]^d, one per class.
///
/// Class k owns the coordinates j with j % K == k; its mean is `low` there
/// plus a bump of height h, with h chosen so every pair of means is exactly
/// distance 1 apart when K divides d. Requires d >= K.
inline LabeledDataset synth_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim,
                                  double spread, std::uint64_t seed) {
  require(num_classes >= 2, "synth_blobs: need at least 2 classes");
  require(per_class >= 1, "synth_blobs: need at least 1 sample per class");
  require(dim >= 2, "synth_blobs: need dimension >= 2");
  require(dim >= num_classes, "synth_blobs: need dimension >= class count");
  require(spread >= 0.0 && std::isfinite(spread), "synth_blobs: spread must be finite and >= 0");

  const double coords_per_class = static_cast<double>(dim / num_classes);
  const double bump = 1.0 / std::sqrt(2.0 * coords_per_class);
  const double low = 0.5 - bump / 2.0;

  Samples raw;
  raw.dim = dim;
  raw.num_classes = num_classes;
  raw.labels.reserve(num_classes * per_class);
  raw.features.reserve(num_classes * per_class * dim);
  Rng rng(seed);
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (std::size_t s = 0; s < per_class; ++s) {
      raw.labels.push_back(static_cast<int>(k));
      for (std::size_t j = 0; j < dim; ++j) {
        const double mean = low + (j % num_classes == k ? bump : 0.0);
        const double noise = spread > 0.0 ? spread * rng.normal() : 0.0;
        raw.features.push_back(std::clamp(mean + noise, 0.0, 1.0));
      }
    }
  }
  return LabeledDataset::from_samples(std::move(raw));
}

/// Stratified split. Per class, round(test_fraction * n_k) samples go to the
/// test side, chosen by a seeded shuffle. Both sides keep source order
/// within each class.
inline std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds,
                                                       double test_fraction, std::uint64_t seed) {
  require(test_fraction > 0.0 && test_fraction < 1.0, "split: test_fraction must be in (0,1)");
  Rng rng(seed);
  std::vector<bool> to_test(ds.size(), false);
  for (std::size_t k = 0; k < ds.num_classes(); ++k) {
    const std::size_t n = ds.class_count(k);
    if (n == 0) continue;
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    if (n_test == 0 || n_test >= n)
      throw StratificationError("split: class " + std::to_string(k) + " with " + std::to_string(n) +
                                " samples cannot be stratified at test_fraction " +
                                std::to_string(test_fraction));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), ds.class_begin(k));
    rng.shuffle(std::span(idx));
    for (std::size_t t = 0; t < n_test; ++t) to_test[idx[t]] = true;
  }

  // Walk in source order so each side's own "original order" is the
  // relative source order of its members.
  std::vector<std::size_t> by_source(ds.size());
  std::iota(by_source.begin(), by_source.end(), std::size_t{0});
  std::sort(by_source.begin(), by_source.end(),
            [&](std::size_t a, std::size_t b) { return ds.original_index(a) < ds.original_index(b); });

  Samples train, test;
  for (Samples* s : {&train, &test}) {
    s->dim = ds.dim();
    s->num_classes = ds.num_classes();
  }
  for (std::size_t i : by_source) {
    Samples& dst = to_test[i] ? test : train;
    dst.labels.push_back(ds.label(i));
    const auto row = ds.features(i);
    dst.features.insert(dst.features.end(), row.begin(), row.end());
  }
  return {LabeledDataset::from_samples(std::move(train)), LabeledDataset::from_samples(std::move(test))};
}

// ---------------------------------------------------------------------------
// CSV: one `label,f0,f1,...` row per sample, no header. Values are written
// with 17 significant digits so a reload is bit-exact.

inline void write_csv(const Samples& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DatasetError("cannot write " + path.string());
  char buf[32];
  for (std::size_t i = 0; i < s.size(); ++i) {
    out << s.labels[i];
    for (double v : s.row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw DatasetError("write failed: " + path.string());
}

/// Reads a CSV written by write_csv. If num_classes is 0 it is inferred as
/// max(label) + 1.
inline Samples read_csv(const std::filesystem::path& path, std::size_t num_classes = 0) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path.string());
  Samples s;
  std::string line;
  int max_label = -1;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    std::getline(ss, cell, ',');
    int label = 0;
    try {
      label = std::stoi(cell);
      while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": malformed CSV row");
    }
    if (s.labels.empty()) s.dim = row.size();
    if (row.size() != s.dim)
      throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": ragged row");
    if (label < 0) throw LabelOutOfRange(path.string() + ": negative label");
    max_label = std::max(max_label, label);
    s.labels.push_back(label);
    s.features.insert(s.features.end(), row.begin(), row.end());
  }
  if (s.labels.empty()) throw EmptyInput(path.string() + ": no rows");
  s.num_classes = num_classes ? num_classes : static_cast<std::size_t>(max_label + 1);
  if (static_cast<std::size_t>(max_label) >= s.num_classes)
    throw LabelOutOfRange(path.string() + ": label exceeds class count");
  return s;
}

}  // namespace lps
