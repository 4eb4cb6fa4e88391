#pragma once

// Reference checks that share no code path with the routines they verify:
// exhaustive enumeration for the inner selection and central finite
// differences for backpropagation. Used by the `verify` command and tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "lps/dataset.hpp"
#include "lps/model.hpp"
#include "lps/poisoning.hpp"

namespace lps::oracle {

/// Best objective over every binary mask whose per-class block sums equal
/// the quotas. Exponential; intended for |D| <= ~20.
inline double brute_force_inner(std::span<const double> scores, const LabeledDataset& ds,
                                const SelectionConstraint& con) {
  const std::size_t n = ds.size();
  require(n <= 24, "brute_force_inner: instance too large to enumerate");
  double best = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> sums(ds.num_classes());
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << n); ++bits) {
    std::fill(sums.begin(), sums.end(), 0);
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (bits >> i & 1U) {
        ++sums[static_cast<std::size_t>(ds.label(i))];
        obj += scores[i];
      }
    if (sums == con.quotas) best = std::max(best, obj);
  }
  return best;
}

/// Central-difference gradient of the mean cross-entropy over `data`.
inline std::vector<double> numerical_gradient(const Classifier& model, const Samples& data, double step = 1e-5) {
  Classifier probe = model;
  auto p = probe.parameters();
  std::vector<double> g(p.size());
  auto loss = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto z = probe.logits(data.row(i));
      const double m = *std::max_element(z.begin(), z.end());
      double e = 0.0;
      for (double v : z) e += std::exp(v - m);
      s += m + std::log(e) - z[static_cast<std::size_t>(data.labels[i])];
    }
    return s / static_cast<double>(data.size());
  };
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double keep = p[k];
    p[k] = keep + step;
    const double up = loss();
    p[k] = keep - step;
    const double down = loss();
    p[k] = keep;
    g[k] = (up - down) / (2.0 * step);
  }
  return g;
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps parameters whose true
/// gradient is ~0 from turning rounding noise into large relative errors.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Smallest |pre-activation| over all hidden units and samples. Finite
/// differences are only valid when this is well above the step size.
inline double min_hidden_margin(const Classifier& model, const Samples& data) {
  Classifier probe = model;
  double margin = std::numeric_limits<double>::infinity();
  const auto& dims = model.dims();
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<double> a(data.row(i).begin(), data.row(i).end());
    for (std::size_t l = 0; l + 2 < dims.size(); ++l) {
      auto w = probe.weights(l);
      auto b = probe.biases(l);
      std::vector<double> z(dims[l + 1]);
      for (std::size_t o = 0; o < z.size(); ++o) {
        double acc = b[o];
        for (std::size_t k = 0; k < dims[l]; ++k) acc += w[o * dims[l] + k] * a[k];
        z[o] = acc;
        margin = std::min(margin, std::abs(acc));
      }
      for (double& v : z) v = std::max(v, 0.0);
      a = std::move(z);
    }
  }
  return margin;
}

}  // namespace lps::oracle
