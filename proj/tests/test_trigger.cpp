#include <gtest/gtest.h>

#include <set>

#include "lps/trigger.hpp"
#include "test_util.hpp"

using namespace lps;

namespace {
const ImageShape kShape{4, 4, 1};

std::vector<double> random_vector(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (double& x : v) x = rng.uniform();
  return v;
}
}  // namespace

TEST(Fuse, BlendEndpoints) {
  Rng rng(1);
  const auto x = random_vector(rng, 16);
  const auto eps = random_vector(rng, 16);
  EXPECT_EQ(fuse(x, make_blend_trigger(kShape, eps, 0.0)), x);
  EXPECT_EQ(fuse(x, make_blend_trigger(kShape, eps, 1.0)), eps);
}

TEST(Fuse, BlendArithmetic) {
  std::vector<double> x(16, 0.4), eps(16, 1.0);
  const auto out = fuse(x, make_blend_trigger(kShape, eps, 0.2));
  for (double v : out) EXPECT_NEAR(v, 0.52, 1e-15);
}

TEST(Fuse, PatchOverwritesOnlyItsRegion) {
  TriggerSpec t;
  t.kind = TriggerKind::patch;
  t.shape = kShape;
  t.patch_height = t.patch_width = 1;
  t.pattern = {1.0};
  const auto out = fuse(std::vector<double>(16, 0.0), t);
  EXPECT_EQ(out[0], 1.0);
  for (std::size_t j = 1; j < 16; ++j) EXPECT_EQ(out[j], 0.0);
}

TEST(Fuse, DefaultPatchIsBottomRight3x3) {
  const auto t = make_patch_trigger({5, 5, 3});
  const auto out = fuse(std::vector<double>(75, 0.25), t);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t q = 0; q < 5; ++q)
        EXPECT_EQ(out[c * 25 + r * 5 + q], (r >= 2 && q >= 2) ? 1.0 : 0.25);
}

TEST(Fuse, SignalIsHorizontalSinusoid) {
  const auto t = make_signal_trigger({2, 8, 1}, 0.2, 1);
  const auto out = fuse(std::vector<double>(16, 0.5), t);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t q = 0; q < 8; ++q)
      EXPECT_NEAR(out[r * 8 + q], 0.5 + 0.2 * std::sin(2.0 * M_PI * static_cast<double>(q) / 8.0), 1e-15);
}

TEST(Fuse, DimensionMismatch) {
  const auto t = make_blend_trigger(kShape, std::vector<double>(16, 0.5), 0.3);
  EXPECT_THROW(fuse(std::vector<double>(15, 0.5), t), DimensionMismatch);
  auto bad = t;
  bad.pattern.resize(10);
  EXPECT_THROW(bad.validate(16), DimensionMismatch);
}

TEST(TriggerSpec, ValidateRejectsBadPatch) {
  auto t = make_patch_trigger(kShape, 3);
  t.patch_row = 2;
  EXPECT_THROW(t.validate(16), PreconditionError);
  EXPECT_THROW(make_patch_trigger(kShape, 5), PreconditionError);
}

// Property: output stays in [0,1]^d and fusion is pure.
TEST(Fuse, OutputInUnitBoxAndDeterministic) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = random_vector(rng, 16);
    TriggerSpec t;
    switch (trial % 3) {
      case 0: t = make_blend_trigger(kShape, random_vector(rng, 16), rng.uniform()); break;
      case 1: t = make_patch_trigger(kShape, 1 + rng.below(4), rng.uniform()); break;
      default: t = make_signal_trigger(kShape, 2.0 * rng.uniform(), 1 + static_cast<int>(rng.below(4))); break;
    }
    const auto a = fuse(x, t);
    for (double v : a) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(a, fuse(x, t));
  }
}

TEST(PatchCsv, LoadsGrid) {
  auto dir = lps::testing::scratch_dir("patch_csv");
  {
    std::ofstream out(dir / "p.csv");
    out << "1,0\n0,1\n0.5,0.5\n";
  }
  std::size_t h = 0, w = 0;
  const auto g = load_patch_csv(dir / "p.csv", h, w);
  EXPECT_EQ(h, 3u);
  EXPECT_EQ(w, 2u);
  EXPECT_EQ(g, (std::vector<double>{1, 0, 0, 1, 0.5, 0.5}));
}

TEST(MapLabel, Modes) {
  EXPECT_EQ(map_label(3, 10, {LabelModeKind::all_to_all, 0}), 4);
  EXPECT_EQ(map_label(9, 10, {LabelModeKind::all_to_all, 0}), 0);
  EXPECT_EQ(map_label(5, 10, {LabelModeKind::all_to_one, 0}), 0);
  EXPECT_EQ(map_label(5, 10, {LabelModeKind::clean_label, 2}), 5);
}

TEST(MapLabel, AllToAllIsBijection) {
  for (std::size_t K = 2; K <= 12; ++K) {
    std::set<int> image;
    for (std::size_t y = 0; y < K; ++y) image.insert(map_label(static_cast<int>(y), K, {LabelModeKind::all_to_all, 0}));
    EXPECT_EQ(image.size(), K);
    EXPECT_EQ(*image.begin(), 0);
    EXPECT_EQ(*image.rbegin(), static_cast<int>(K - 1));
  }
}

TEST(LabelMode, TargetMustBeAClass) {
  EXPECT_THROW((LabelMode{LabelModeKind::all_to_one, 4}.validate(4)), PreconditionError);
  EXPECT_NO_THROW((LabelMode{LabelModeKind::all_to_one, 3}.validate(4)));
}
