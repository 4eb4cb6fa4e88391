#include <gtest/gtest.h>

#include <numeric>

#include "lps/dataset.hpp"
#include "test_util.hpp"

using namespace lps;
using lps::testing::put_be32;
using lps::testing::scratch_dir;
using lps::testing::write_bytes;

namespace {

void write_idx(const std::filesystem::path& dir, std::uint32_t n_images, std::uint32_t n_labels,
               const std::vector<unsigned char>& pixels, const std::vector<unsigned char>& labels,
               std::uint32_t image_magic = kIdxImageMagic) {
  std::vector<unsigned char> img, lab;
  put_be32(img, image_magic);
  put_be32(img, n_images);
  put_be32(img, 2);
  put_be32(img, 2);
  img.insert(img.end(), pixels.begin(), pixels.end());
  put_be32(lab, kIdxLabelMagic);
  put_be32(lab, n_labels);
  lab.insert(lab.end(), labels.begin(), labels.end());
  write_bytes(dir / "img", img);
  write_bytes(dir / "lab", lab);
}

void expect_invariants(const LabeledDataset& ds) {
  const auto& counts = ds.class_counts();
  EXPECT_EQ(std::accumulate(counts.begin(), counts.end(), std::size_t{0}), ds.size());
  for (std::size_t k = 0; k < ds.num_classes(); ++k) {
    EXPECT_EQ(ds.class_begin(k), std::accumulate(counts.begin(), counts.begin() + static_cast<long>(k), std::size_t{0}));
    for (std::size_t i = ds.class_begin(k); i < ds.class_end(k); ++i) EXPECT_EQ(ds.label(i), static_cast<int>(k));
  }
  for (std::size_t i = 1; i < ds.size(); ++i) EXPECT_LE(ds.label(i - 1), ds.label(i));
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (double v : ds.features(i)) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
}

}  // namespace

TEST(LoadIdx, ClassSortsAndScales) {
  auto dir = scratch_dir("idx_ok");
  // 4 images of 2x2; image i is filled with byte 10*i, except image 0 pixel 0 = 255.
  std::vector<unsigned char> px;
  for (unsigned char i = 0; i < 4; ++i)
    for (int p = 0; p < 4; ++p) px.push_back(static_cast<unsigned char>(10 * i));
  px[0] = 255;
  write_idx(dir, 4, 4, px, {1, 0, 1, 0});
  const auto ds = load_idx(dir / "img", dir / "lab");
  EXPECT_EQ(ds.num_classes(), 2u);
  EXPECT_EQ(ds.class_counts(), (std::vector<std::size_t>{2, 2}));
  EXPECT_EQ(ds.label(0), 0);
  EXPECT_EQ(ds.label(1), 0);
  // stable: class-0 block holds source images 1 then 3
  EXPECT_EQ(ds.original_index(0), 1u);
  EXPECT_EQ(ds.original_index(1), 3u);
  EXPECT_EQ(ds.original_index(2), 0u);
  EXPECT_DOUBLE_EQ(ds.features(2)[0], 1.0);  // byte 255
  EXPECT_DOUBLE_EQ(ds.features(2)[1], 0.0);  // byte 0
  EXPECT_DOUBLE_EQ(ds.features(0)[0], 10.0 / 255.0);
  expect_invariants(ds);
}

TEST(LoadIdx, CountMismatch) {
  auto dir = scratch_dir("idx_count");
  write_idx(dir, 4, 5, std::vector<unsigned char>(16, 0), {0, 1, 0, 1, 0});
  EXPECT_THROW(load_idx(dir / "img", dir / "lab"), CountMismatch);
}

TEST(LoadIdx, BadMagic) {
  auto dir = scratch_dir("idx_magic");
  write_idx(dir, 1, 1, std::vector<unsigned char>(4, 0), {0}, 0x00000801);
  EXPECT_THROW(load_idx(dir / "img", dir / "lab"), BadMagicNumber);
}

TEST(LoadIdx, TruncatedPayload) {
  auto dir = scratch_dir("idx_trunc");
  write_idx(dir, 2, 2, std::vector<unsigned char>(5, 0), {0, 1});
  EXPECT_THROW(load_idx(dir / "img", dir / "lab"), TruncatedPayload);
}

TEST(LoadCifar, SingleRecord) {
  auto dir = scratch_dir("cifar_one");
  std::vector<unsigned char> rec(kCifarRecordBytes, 128);
  rec[0] = 7;
  rec[1] = 255;
  write_bytes(dir / "b1", rec);
  const std::vector<std::filesystem::path> files{dir / "b1"};
  const auto ds = load_cifar_binary(files);
  EXPECT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.label(0), 7);
  EXPECT_EQ(ds.dim(), 3072u);
  EXPECT_DOUBLE_EQ(ds.features(0)[0], 1.0);  // first R-plane byte
  EXPECT_DOUBLE_EQ(ds.features(0)[3071], 128.0 / 255.0);
}

TEST(LoadCifar, TwoFilesAreClassSorted) {
  auto dir = scratch_dir("cifar_two");
  std::vector<unsigned char> a(kCifarRecordBytes, 0), b(kCifarRecordBytes, 0);
  a[0] = 3;
  b[0] = 1;
  write_bytes(dir / "a", a);
  write_bytes(dir / "b", b);
  const std::vector<std::filesystem::path> files{dir / "a", dir / "b"};
  const auto ds = load_cifar_binary(files);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.label(0), 1);
  EXPECT_EQ(ds.label(1), 3);
  expect_invariants(ds);
}

TEST(LoadCifar, Errors) {
  EXPECT_THROW(load_cifar_binary({}), EmptyInput);
  auto dir = scratch_dir("cifar_bad");
  write_bytes(dir / "short", std::vector<unsigned char>(kCifarRecordBytes + 1, 0));
  const std::vector<std::filesystem::path> bad_len{dir / "short"};
  EXPECT_THROW(load_cifar_binary(bad_len), BadRecordLength);
  std::vector<unsigned char> rec(kCifarRecordBytes, 0);
  rec[0] = 10;
  write_bytes(dir / "lab", rec);
  const std::vector<std::filesystem::path> bad_label{dir / "lab"};
  EXPECT_THROW(load_cifar_binary(bad_label), LabelOutOfRange);
}

TEST(SynthBlobs, Deterministic) {
  const auto a = synth_blobs(2, 10, 4, 0.1, 7);
  const auto b = synth_blobs(2, 10, 4, 0.1, 7);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, synth_blobs(2, 10, 4, 0.1, 8));
}

TEST(SynthBlobs, ZeroSpreadGivesClassMeans) {
  const auto ds = synth_blobs(4, 3, 16, 0.0, 1);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t i = ds.class_begin(k); i < ds.class_end(k); ++i)
      for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(ds.features(i)[j], ds.features(ds.class_begin(k))[j]);
  // means are exactly unit distance apart
  for (std::size_t k = 1; k < 4; ++k) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < 16; ++j) {
      const double diff = ds.features(0)[j] - ds.features(ds.class_begin(k))[j];
      d2 += diff * diff;
    }
    EXPECT_NEAR(std::sqrt(d2), 1.0, 1e-12);
  }
}

TEST(SynthBlobs, Counts) {
  const auto ds = synth_blobs(3, 5, 4, 0.2, 3);
  EXPECT_EQ(ds.size(), 15u);
  EXPECT_EQ(ds.class_counts(), (std::vector<std::size_t>{5, 5, 5}));
  expect_invariants(ds);
}

TEST(SynthBlobs, Preconditions) {
  EXPECT_THROW(synth_blobs(1, 5, 4, 0.1, 0), PreconditionError);
  EXPECT_THROW(synth_blobs(2, 0, 4, 0.1, 0), PreconditionError);
  EXPECT_THROW(synth_blobs(2, 5, 1, 0.1, 0), PreconditionError);
  EXPECT_THROW(synth_blobs(5, 5, 4, 0.1, 0), PreconditionError);
}

TEST(Split, StratifiedCounts) {
  const auto ds = synth_blobs(3, 10, 4, 0.1, 5);
  const auto [train, test] = split(ds, 0.2, 9);
  EXPECT_EQ(train.class_counts(), (std::vector<std::size_t>{8, 8, 8}));
  EXPECT_EQ(test.class_counts(), (std::vector<std::size_t>{2, 2, 2}));
  expect_invariants(train);
  expect_invariants(test);
}

TEST(Split, DeterministicUnderSeed) {
  const auto ds = synth_blobs(3, 10, 4, 0.1, 5);
  EXPECT_EQ(split(ds, 0.3, 4), split(ds, 0.3, 4));
}

TEST(Split, TinyClassCannotStratify) {
  const auto ds = lps::testing::dataset_from_labels({0, 1, 1, 1}, 2);
  EXPECT_THROW(split(ds, 0.5, 1), StratificationError);
}

TEST(LabeledDataset, SortIsIdempotent) {
  const auto ds = synth_blobs(3, 4, 4, 0.1, 2);
  const auto again = LabeledDataset::from_samples(ds.samples());
  EXPECT_EQ(again.samples(), ds.samples());
  for (std::size_t i = 0; i < again.size(); ++i) EXPECT_EQ(again.original_index(i), i);
}

// Property: reporting a mask in source order and back is the identity.
TEST(LabeledDataset, OrderRoundTrip) {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    Samples s;
    s.dim = 1;
    s.num_classes = 1 + rng.below(5);
    const std::size_t n = 1 + rng.below(30);
    for (std::size_t i = 0; i < n; ++i) {
      s.labels.push_back(static_cast<int>(rng.below(s.num_classes)));
      s.features.push_back(rng.uniform());
    }
    const auto ds = LabeledDataset::from_samples(s);
    std::vector<std::uint8_t> mask(n);
    for (auto& m : mask) m = static_cast<std::uint8_t>(rng.below(2));
    const auto orig = ds.to_original_order<std::uint8_t>(mask);
    EXPECT_EQ(ds.to_sorted_order<std::uint8_t>(orig), mask);
    EXPECT_EQ(ds.in_original_order(), s);
    expect_invariants(ds);
  }
}

TEST(Csv, RoundTripIsBitExact) {
  auto dir = scratch_dir("csv");
  const auto ds = synth_blobs(3, 4, 5, 0.3, 8);
  write_csv(ds.samples(), dir / "d.csv");
  EXPECT_EQ(read_csv(dir / "d.csv"), ds.samples());
}
