#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lps/common.hpp"
#include "lps/dataset.hpp"

namespace lps {

/// Multi-layer perceptron with ReLU hidden layers and a softmax head.
///
/// All parameters live in one flat buffer. Layer l occupies
/// [offset(l), offset(l) + out*in) for its row-major weight matrix
/// (out x in), followed by `out` biases.
class Classifier {
 public:
  Classifier() = default;

  /// He-uniform weights, zero biases. dims = {input, hidden..., classes}.
  static Classifier init(std::vector<std::size_t> dims, std::uint64_t seed) {
    Classifier m = zeros(std::move(dims));
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < m.dims_.size(); ++l) {
      const double bound = std::sqrt(6.0 / static_cast<double>(m.dims_[l]));
      double* w = m.params_.data() + m.offsets_[l];
      for (std::size_t i = 0; i < m.dims_[l] * m.dims_[l + 1]; ++i) w[i] = rng.uniform(-bound, bound);
    }
    return m;
  }

  /// All-zero parameters (uniform softmax output).
  static Classifier zeros(std::vector<std::size_t> dims) {
    require(dims.size() >= 2, "Classifier: need at least input and output dims");
    for (std::size_t w : dims) require(w >= 1, "Classifier: zero-width layer");
    require(dims.back() >= 2, "Classifier: need at least 2 classes");
    Classifier m;
    m.dims_ = std::move(dims);
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < m.dims_.size(); ++l) {
      m.offsets_.push_back(total);
      total += m.dims_[l] * m.dims_[l + 1] + m.dims_[l + 1];
    }
    m.params_.assign(total, 0.0);
    return m;
  }

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t num_classes() const { return dims_.back(); }
  std::size_t num_layers() const noexcept { return offsets_.size(); }
  std::size_t num_params() const noexcept { return params_.size(); }

  std::span<const double> parameters() const noexcept { return params_; }
  std::span<double> parameters() noexcept { return params_; }

  std::span<double> weights(std::size_t l) {
    return {params_.data() + offsets_[l], dims_[l] * dims_[l + 1]};
  }
  std::span<double> biases(std::size_t l) {
    return {params_.data() + offsets_[l] + dims_[l] * dims_[l + 1], dims_[l + 1]};
  }

  /// Output-layer pre-activations.
  std::vector<double> logits(std::span<const double> x) const {
    check_input(x);
    std::vector<double> a(x.begin(), x.end()), z;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      affine(l, a, z);
      if (l + 1 < num_layers())
        for (double& v : z) v = std::max(v, 0.0);
      a.swap(z);
    }
    return a;
  }

  std::vector<double> probabilities(std::span<const double> x) const {
    auto z = logits(x);
    softmax_inplace(z);
    return z;
  }

  /// Cross-entropy of one sample, -ln p_y, computed as logsumexp(z) - z_y.
  double loss(std::span<const double> x, int y) const {
    const auto z = logits(x);
    const double l = log_sum_exp(z) - z[static_cast<std::size_t>(y)];
    if (!std::isfinite(l)) throw NumericError("per-sample loss is not finite");
    return l;
  }

  /// argmax of the output; ties go to the lowest class index.
  int predict(std::span<const double> x) const {
    const auto z = logits(x);
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }

  /// Adds d loss(x, y) / d params, scaled by `scale`, into `grad`.
  /// Returns the loss and writes whether the prediction was correct.
  double accumulate_gradient(std::span<const double> x, int y, double scale, std::span<double> grad,
                             bool* correct = nullptr) const {
    check_input(x);
    const std::size_t L = num_layers();
    // acts[l] is the input to layer l; pre[l] its pre-activation output.
    std::vector<std::vector<double>> acts(L + 1), pre(L);
    acts[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < L; ++l) {
      affine(l, acts[l], pre[l]);
      acts[l + 1] = pre[l];
      if (l + 1 < L)
        for (double& v : acts[l + 1]) v = std::max(v, 0.0);
    }
    auto& z = pre[L - 1];
    const auto cls = static_cast<std::size_t>(y);
    const double loss = log_sum_exp(z) - z[cls];
    if (correct) *correct = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()) == cls;

    std::vector<double> delta = z;
    softmax_inplace(delta);
    delta[cls] -= 1.0;
    std::vector<double> prev;
    for (std::size_t l = L; l-- > 0;) {
      const std::size_t in = dims_[l], out = dims_[l + 1];
      const double* w = params_.data() + offsets_[l];
      double* gw = grad.data() + offsets_[l];
      double* gb = gw + in * out;
      const auto& a = acts[l];
      for (std::size_t o = 0; o < out; ++o) {
        const double d = scale * delta[o];
        gb[o] += d;
        double* row = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += d * a[i];
      }
      if (l == 0) break;
      prev.assign(in, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        const double* row = w + o * in;
        for (std::size_t i = 0; i < in; ++i) prev[i] += row[i] * delta[o];
      }
      for (std::size_t i = 0; i < in; ++i)
        if (pre[l - 1][i] <= 0.0) prev[i] = 0.0;
      delta.swap(prev);
    }
    return loss;
  }

  bool operator==(const Classifier&) const = default;

  static void softmax_inplace(std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) sum += (v = std::exp(v - m));
    for (double& v : z) v /= sum;
  }

  static double log_sum_exp(std::span<const double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    return m + std::log(sum);
  }

 private:
  void check_input(std::span<const double> x) const {
    if (x.size() != input_dim())
      throw DimensionMismatch("model expects inputs of length " + std::to_string(input_dim()) +
                              ", got " + std::to_string(x.size()));
  }

  void affine(std::size_t l, const std::vector<double>& a, std::vector<double>& z) const {
    const std::size_t in = dims_[l], out = dims_[l + 1];
    const double* w = params_.data() + offsets_[l];
    const double* b = w + in * out;
    z.resize(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double* row = w + o * in;
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += row[i] * a[i];
      z[o] = acc;
    }
  }

  std::vector<std::size_t> dims_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

inline double per_sample_loss(const Classifier& model, std::span<const double> x, int y) {
  return model.loss(x, y);
}

inline int predict(const Classifier& model, std::span<const double> x) { return model.predict(x); }

/// Mean cross-entropy over all samples (the plain training loss).
inline double mean_loss(const Classifier& model, const Samples& data) {
  require(!data.empty(), "mean_loss: empty dataset");
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) sum += model.loss(data.row(i), data.labels[i]);
  const double l = sum / static_cast<double>(data.size());
  if (!std::isfinite(l)) throw NumericError("mean loss is not finite");
  return l;
}

inline double accuracy(const Classifier& model, const Samples& data) {
  require(!data.empty(), "accuracy: empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hits += model.predict(data.row(i)) == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Gradient of the mean loss over `indices` (all samples when empty).
inline double batch_gradient(const Classifier& model, const Samples& data,
                             std::span<const std::size_t> indices, std::span<double> grad,
                             std::size_t* hits = nullptr) {
  require(grad.size() == model.num_params(), "batch_gradient: gradient buffer size mismatch");
  std::fill(grad.begin(), grad.end(), 0.0);
  const std::size_t n = indices.empty() ? data.size() : indices.size();
  require(n > 0, "batch_gradient: empty batch");
  const double scale = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = indices.empty() ? k : indices[k];
    bool ok = false;
    loss += model.accumulate_gradient(data.row(i), data.labels[i], scale, grad, &ok);
    if (hits) *hits += ok;
  }
  return loss * scale;
}

/// w <- w - lr * (g + wd * w), written as a contraction so that a zero
/// gradient scales every parameter by exactly (1 - lr * wd).
inline void sgd_step(Classifier& model, std::span<const double> grad, double lr, double weight_decay) {
  auto p = model.parameters();
  require(grad.size() == p.size(), "sgd_step: gradient size mismatch");
  const double shrink = 1.0 - lr * weight_decay;
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = p[i] * shrink - lr * grad[i];
}

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 128;
  double lr = 0.01;
  std::vector<std::size_t> lr_decay_epochs = {21, 33};
  double lr_decay_factor = 0.1;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;

  bool operator==(const TrainConfig&) const = default;

  void validate() const {
    require(lr >= 0.0 && std::isfinite(lr), "TrainConfig: lr must be finite and >= 0");
    require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    require(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0, "TrainConfig: decay factor must be in (0,1]");
    require(weight_decay >= 0.0, "TrainConfig: weight_decay must be >= 0");
  }

  /// Step schedule: the rate is multiplied by the decay factor once for
  /// every milestone that `epoch` has reached.
  double lr_at(std::size_t epoch) const {
    double rate = lr;
    for (std::size_t m : lr_decay_epochs)
      if (epoch >= m) rate *= lr_decay_factor;
    return rate;
  }
};

struct EpochReport {
  double mean_loss = 0.0;
  double accuracy = 0.0;  // running accuracy over the epoch's batches
  double lr = 0.0;
};

/// One pass of mini-batch SGD over a shuffle of `data` seeded by
/// (cfg.seed, epoch_index).
inline EpochReport train_epoch(Classifier& model, const Samples& data, const TrainConfig& cfg,
                               std::size_t epoch_index) {
  cfg.validate();
  require(!data.empty(), "train_epoch: empty dataset");
  if (data.dim != model.input_dim())
    throw DimensionMismatch("train_epoch: data dim " + std::to_string(data.dim) + " vs model input " +
                            std::to_string(model.input_dim()));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, epoch_index));
  rng.shuffle(std::span(order));

  const std::size_t batch = std::min(cfg.batch_size, data.size());
  const double lr = cfg.lr_at(epoch_index);
  std::vector<double> grad(model.num_params());
  double loss_sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t start = 0; start < order.size(); start += batch) {
    const std::size_t len = std::min(batch, order.size() - start);
    const std::span<const std::size_t> idx(order.data() + start, len);
    const double l = batch_gradient(model, data, idx, grad, &hits);
    for (double g : grad)
      if (!std::isfinite(g))
        throw NumericError("train_epoch: non-finite gradient in epoch " + std::to_string(epoch_index) +
                           " at batch starting " + std::to_string(start));
    loss_sum += l * static_cast<double>(len);
    sgd_step(model, grad, lr, cfg.weight_decay);
  }
  const double n = static_cast<double>(data.size());
  return {loss_sum / n, static_cast<double>(hits) / n, lr};
}

/// Runs cfg.epochs epochs; returns the last report.
inline EpochReport train(Classifier& model, const Samples& data, const TrainConfig& cfg) {
  EpochReport last;
  for (std::size_t e = 0; e < cfg.epochs; ++e) last = train_epoch(model, data, cfg, e);
  return last;
}

// ---------------------------------------------------------------------------
// Checkpoint: "LPSMLP01", u64 layer-count, u64 dims..., then IEEE-754
// doubles, all little-endian. Reload is bit-exact.

class CheckpointError : public Error {
 public:
  using Error::Error;
};

namespace detail {
inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'L', 'P', 'S', 'M', 'L', 'P', '0', '1'};

inline void save_checkpoint(const Classifier& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(kCheckpointMagic, 8);
  detail::put_u64(out, model.dims().size());
  for (std::size_t d : model.dims()) detail::put_u64(out, d);
  for (double p : model.parameters()) detail::put_u64(out, std::bit_cast<std::uint64_t>(p));
  if (!out) throw CheckpointError("write failed: " + path.string());
}

inline Classifier load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw CheckpointError(path.string() + ": not an LPSMLP01 checkpoint");
  const std::uint64_t n_dims = detail::get_u64(in);
  if (n_dims < 2 || n_dims > 64) throw CheckpointError(path.string() + ": implausible layer count");
  std::vector<std::size_t> dims(n_dims);
  for (auto& d : dims) d = detail::get_u64(in);
  Classifier m = Classifier::zeros(std::move(dims));
  for (double& p : m.parameters()) p = std::bit_cast<double>(detail::get_u64(in));
  for (double p : m.parameters())
    if (!std::isfinite(p)) throw CheckpointError(path.string() + ": non-finite parameter");
  return m;
}

}  // namespace lps
