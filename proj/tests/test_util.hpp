#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lps/dataset.hpp"

namespace lps::testing {

/// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("lps_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

/// Builds a LabeledDataset from explicit labels with constant features.
inline LabeledDataset dataset_from_labels(const std::vector<int>& labels, std::size_t classes,
                                          std::size_t dim = 1, double value = 0.5) {
  Samples s;
  s.dim = dim;
  s.num_classes = classes;
  s.labels = labels;
  s.features.assign(labels.size() * dim, value);
  return LabeledDataset::from_samples(std::move(s));
}

}  // namespace lps::testing
