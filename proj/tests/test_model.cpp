#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "lps/model.hpp"
#include "lps/oracle.hpp"
#include "test_util.hpp"

using namespace lps;

namespace {

/// One-layer model [2 -> 3] with hand-set parameters.
Classifier hand_model() {
  Classifier m = Classifier::zeros({2, 3});
  const std::vector<double> w = {0.5, -1.0, 2.0, 0.25, -0.75, 1.5};
  const std::vector<double> b = {0.1, -0.2, 0.3};
  std::copy(w.begin(), w.end(), m.weights(0).begin());
  std::copy(b.begin(), b.end(), m.biases(0).begin());
  return m;
}

Samples random_batch(Rng& rng, std::size_t n, std::size_t d, std::size_t K) {
  Samples s;
  s.dim = d;
  s.num_classes = K;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) s.features.push_back(rng.uniform());
    s.labels.push_back(static_cast<int>(rng.below(K)));
  }
  return s;
}

/// Nearest-centroid accuracy, an architecture-free baseline.
double nearest_centroid_accuracy(const Samples& s) {
  std::vector<std::vector<double>> mean(s.num_classes, std::vector<double>(s.dim, 0.0));
  std::vector<double> count(s.num_classes, 0.0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto k = static_cast<std::size_t>(s.labels[i]);
    count[k] += 1;
    for (std::size_t j = 0; j < s.dim; ++j) mean[k][j] += s.row(i)[j];
  }
  for (std::size_t k = 0; k < s.num_classes; ++k)
    for (double& v : mean[k]) v /= count[k];
  std::size_t hits = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < s.num_classes; ++k) {
      double d = 0;
      for (std::size_t j = 0; j < s.dim; ++j) d += (s.row(i)[j] - mean[k][j]) * (s.row(i)[j] - mean[k][j]);
      if (d < best_d) best_d = d, best = k;
    }
    hits += static_cast<int>(best) == s.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(s.size());
}

}  // namespace

TEST(Init, DeterministicAndCounted) {
  const auto a = Classifier::init({4, 8, 3}, 9);
  EXPECT_EQ(a, Classifier::init({4, 8, 3}, 9));
  EXPECT_NE(a, Classifier::init({4, 8, 3}, 10));
  EXPECT_EQ(a.num_params(), 4u * 8 + 8 + 8 * 3 + 3);
  auto copy = a;
  for (double b : copy.biases(0)) EXPECT_EQ(b, 0.0);
  const double bound = std::sqrt(6.0 / 4.0);
  for (double w : copy.weights(0)) EXPECT_LE(std::abs(w), bound);
}

TEST(Init, ZeroWidthLayerRejected) {
  EXPECT_THROW(Classifier::init({4, 0, 3}, 1), PreconditionError);
  EXPECT_THROW(Classifier::init({4}, 1), PreconditionError);
}

TEST(PerSampleLoss, UniformOutput) {
  const auto m = Classifier::zeros({5, 10});
  EXPECT_NEAR(per_sample_loss(m, std::vector<double>(5, 0.3), 4), 2.302585092994046, 1e-12);
}

TEST(PerSampleLoss, ConfidentPredictionNearZero) {
  Classifier m = Classifier::zeros({1, 3});
  m.biases(0)[1] = 40.0;
  EXPECT_LT(per_sample_loss(m, std::vector<double>{0.0}, 1), 1e-15);
  EXPECT_GT(per_sample_loss(m, std::vector<double>{0.0}, 0), 39.0);
}

TEST(PerSampleLoss, HandComputedSoftmax) {
  const auto m = hand_model();
  const std::vector<double> x = {0.2, 0.7};
  // z = W x + b computed by hand
  const double z0 = 0.5 * 0.2 + -1.0 * 0.7 + 0.1;   // -0.5
  const double z1 = 2.0 * 0.2 + 0.25 * 0.7 - 0.2;   //  0.375
  const double z2 = -0.75 * 0.2 + 1.5 * 0.7 + 0.3;  //  1.2
  const double denom = std::exp(z0) + std::exp(z1) + std::exp(z2);
  EXPECT_NEAR(per_sample_loss(m, x, 0), -std::log(std::exp(z0) / denom), 1e-14);
  EXPECT_NEAR(per_sample_loss(m, x, 1), -std::log(std::exp(z1) / denom), 1e-14);
  EXPECT_NEAR(per_sample_loss(m, x, 2), -std::log(std::exp(z2) / denom), 1e-14);
  const auto p = m.probabilities(x);
  EXPECT_NEAR(p[2], std::exp(z2) / denom, 1e-15);
}

TEST(PerSampleLoss, DimensionMismatch) {
  EXPECT_THROW(per_sample_loss(hand_model(), std::vector<double>(3, 0.0), 0), DimensionMismatch);
}

TEST(Predict, TieGoesToLowestClass) {
  EXPECT_EQ(predict(Classifier::zeros({3, 5}), std::vector<double>(3, 0.1)), 0);
}

TEST(Predict, ArgmaxAndShiftInvariance) {
  Classifier m = Classifier::zeros({1, 4});
  m.biases(0)[2] = 3.0;
  EXPECT_EQ(predict(m, std::vector<double>{0.5}), 2);
  for (double& b : m.biases(0)) b += 17.5;
  EXPECT_EQ(predict(m, std::vector<double>{0.5}), 2);
}

TEST(Forward, ProbabilitiesNormalised) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto m = Classifier::init({6, 9, 5, 4}, rng.next());
    std::vector<double> x(6);
    for (double& v : x) v = rng.uniform();
    const auto p = m.probabilities(x);
    double sum = 0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

// Analytic gradients vs central differences with step 1e-5.
TEST(Gradient, MatchesFiniteDifferences) {
  Rng rng(2024);
  for (int t = 0; t < 25; ++t) {
    const std::size_t d = 2 + rng.below(4), h = 2 + rng.below(6), K = 2 + rng.below(3);
    std::vector<std::size_t> dims = {d, h, K};
    if (t % 2) dims.insert(dims.begin() + 2, 3);
    const auto model = Classifier::init(dims, rng.next());
    Samples batch;
    do batch = random_batch(rng, 5, d, K);
    while (oracle::min_hidden_margin(model, batch) < 1e-3);
    std::vector<double> grad(model.num_params());
    batch_gradient(model, batch, {}, grad);
    const auto fd = oracle::numerical_gradient(model, batch, 1e-5);
    for (std::size_t k = 0; k < grad.size(); ++k)
      EXPECT_LE(oracle::relative_error(grad[k], fd[k]), 1e-4) << "param " << k << " of model " << t;
  }
}

TEST(Sgd, WeightDecayOnlyContracts) {
  auto m = Classifier::init({3, 4, 2}, 1);
  const auto before = m;
  const std::vector<double> zero(m.num_params(), 0.0);
  sgd_step(m, zero, 0.1, 5e-4);
  const double f = 1.0 - 0.1 * 5e-4;
  for (std::size_t i = 0; i < m.num_params(); ++i) EXPECT_EQ(m.parameters()[i], before.parameters()[i] * f);
}

TEST(TrainEpoch, ZeroLearningRateLeavesParameters) {
  const auto ds = synth_blobs(3, 10, 4, 0.1, 1);
  auto m = Classifier::init({4, 8, 3}, 2);
  const auto before = m;
  TrainConfig cfg;
  cfg.lr = 0.0;
  const auto rep = train_epoch(m, ds.samples(), cfg, 0);
  EXPECT_EQ(m, before);
  EXPECT_GT(rep.mean_loss, 0.0);
  EXPECT_GE(rep.accuracy, 0.0);
}

TEST(TrainEpoch, Deterministic) {
  const auto ds = synth_blobs(3, 10, 4, 0.1, 1);
  TrainConfig cfg;
  cfg.batch_size = 7;
  cfg.seed = 3;
  auto a = Classifier::init({4, 8, 3}, 2), b = a;
  train_epoch(a, ds.samples(), cfg, 4);
  train_epoch(b, ds.samples(), cfg, 4);
  EXPECT_EQ(a, b);
  auto c = Classifier::init({4, 8, 3}, 2);
  train_epoch(c, ds.samples(), cfg, 5);
  EXPECT_NE(a, c);
}

TEST(TrainConfig, StepSchedule) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.lr_at(0), 0.01);
  EXPECT_DOUBLE_EQ(cfg.lr_at(20), 0.01);
  EXPECT_DOUBLE_EQ(cfg.lr_at(21), 0.001);
  EXPECT_NEAR(cfg.lr_at(59), 0.0001, 1e-18);
  cfg.lr_decay_factor = 0.0;
  EXPECT_THROW(cfg.validate(), PreconditionError);
}

TEST(Train, BlobsBecomeSeparable) {
  const auto ds = synth_blobs(3, 50, 6, 0.1, 12);
  ASSERT_GE(nearest_centroid_accuracy(ds.samples()), 0.99);
  auto m = Classifier::init({6, 64, 32, 3}, 1);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 8;
  cfg.seed = 1;
  train(m, ds.samples(), cfg);
  EXPECT_GE(accuracy(m, ds.samples()), 0.95);
}

TEST(Train, EarlyLossMostlyDecreases) {
  int monotone = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto ds = synth_blobs(4, 40, 16, 0.1, seed);
    auto m = Classifier::init({16, 64, 32, 4}, seed);
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.seed = seed;
    std::vector<double> losses;
    for (std::size_t e = 0; e < 5; ++e) losses.push_back(train_epoch(m, ds.samples(), cfg, e).mean_loss);
    monotone += std::is_sorted(losses.rbegin(), losses.rend());
  }
  EXPECT_GE(monotone, 4);
}

TEST(Train, NonFiniteGradientAborts) {
  const auto ds = synth_blobs(2, 4, 2, 0.1, 1);
  auto m = Classifier::init({2, 3, 2}, 1);
  m.parameters()[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  EXPECT_THROW(train_epoch(m, ds.samples(), cfg, 0), NumericError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto dir = lps::testing::scratch_dir("ckpt");
  auto m = Classifier::init({5, 7, 3}, 77);
  m.parameters()[3] = 1.0 / 3.0;
  save_checkpoint(m, dir / "m.bin");
  EXPECT_EQ(load_checkpoint(dir / "m.bin"), m);
  {
    std::ofstream bad(dir / "bad.bin", std::ios::binary);
    bad << "NOTACKPT";
  }
  EXPECT_THROW(load_checkpoint(dir / "bad.bin"), CheckpointError);
}
