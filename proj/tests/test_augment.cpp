#include <gtest/gtest.h>

#include "s3d/augment.hpp"
#include "s3d/error.hpp"
#include "s3d/rng.hpp"

using namespace s3d;

namespace {

Sketch random_binary(std::uint64_t seed, int w, int h, double density) {
  SplitMix64 g(seed);
  std::vector<double> v(static_cast<std::size_t>(w) * h);
  for (double& x : v) x = g.uniform() < density ? 1.0 : 0.0;
  return Sketch(w, h, v);
}

Sketch invert(const Sketch& s) {
  std::vector<double> v(s.data().begin(), s.data().end());
  for (double& x : v) x = 1.0 - x;
  return Sketch(s.width(), s.height(), v);
}

// Direct max/min over the clamped square, for comparison.
Sketch brute_filter(const Sketch& s, int k, bool take_max) {
  const int r = k / 2;
  std::vector<double> out(s.pixel_count());
  for (int y = 0; y < s.height(); ++y) {
    for (int x = 0; x < s.width(); ++x) {
      double acc = take_max ? 0.0 : 1.0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = std::clamp(x + dx, 0, s.width() - 1);
          const int yy = std::clamp(y + dy, 0, s.height() - 1);
          const double v = s.at(xx, yy) >= 0.5 ? 1.0 : 0.0;
          acc = take_max ? std::max(acc, v) : std::min(acc, v);
        }
      }
      out[static_cast<std::size_t>(y) * s.width() + x] = acc;
    }
  }
  return Sketch(s.width(), s.height(), out);
}

}  // namespace

TEST(Dilate, Basics) {
  EXPECT_EQ(dilate(Sketch(7, 7), 3), Sketch(7, 7));
  std::vector<double> v(49, 0.0);
  v[24] = 1.0;
  const Sketch d = dilate(Sketch(7, 7, v), 3);
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 7; ++x) {
      EXPECT_EQ(d.at(x, y), (std::abs(x - 3) <= 1 && std::abs(y - 3) <= 1) ? 1.0 : 0.0);
    }
  }
}

TEST(Erode, Basics) {
  const Sketch ones(7, 7, std::vector<double>(49, 1.0));
  EXPECT_EQ(erode(ones, 3), ones);
  std::vector<double> v(49, 0.0);
  for (int y = 2; y <= 4; ++y) {
    for (int x = 2; x <= 4; ++x) v[y * 7 + x] = 1.0;
  }
  const Sketch e = erode(Sketch(7, 7, v), 3);
  for (int i = 0; i < 49; ++i) EXPECT_EQ(e.data()[i], i == 24 ? 1.0 : 0.0);
}

TEST(Morphology, MatchesBruteForceFilters) {
  for (int k : {1, 3, 5, 7}) {
    const Sketch s = random_binary(k, 23, 17, 0.3);
    EXPECT_EQ(dilate(s, k), brute_filter(s, k, true)) << k;
    EXPECT_EQ(erode(s, k), brute_filter(s, k, false)) << k;
  }
}

TEST(Morphology, OrderPropertiesOnRandomSketches) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Sketch s = random_binary(seed, 32, 32, 0.25);
    const Sketch d = dilate(s, 3), e = erode(s, 7);
    const Sketch dual = invert(dilate(invert(s), 7));
    for (std::size_t i = 0; i < s.pixel_count(); ++i) {
      ASSERT_GE(d.data()[i], s.data()[i]);
      ASSERT_LE(e.data()[i], s.data()[i]);
      ASSERT_EQ(e.data()[i], dual.data()[i]);
    }
  }
}

TEST(Morphology, DilationIsMonotone) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Sketch x = random_binary(seed, 20, 20, 0.2);
    std::vector<double> sup(x.data().begin(), x.data().end());
    SplitMix64 g(seed + 99);
    for (double& v : sup) {
      if (g.uniform() < 0.1) v = 1.0;
    }
    const Sketch dx = dilate(x, 3), dy = dilate(Sketch(20, 20, sup), 3);
    for (std::size_t i = 0; i < sup.size(); ++i) ASSERT_LE(dx.data()[i], dy.data()[i]);
  }
}

TEST(Morphology, KernelOneIsBinarize) {
  SplitMix64 g(5);
  std::vector<double> v(64);
  for (double& x : v) x = g.uniform();
  const Sketch s(8, 8, v);
  EXPECT_EQ(dilate(s, 1), binarize(s));
  EXPECT_EQ(erode(s, 1), binarize(s));
}

TEST(Morphology, EvenKernelRejected) {
  EXPECT_THROW(dilate(Sketch(4, 4), 2), ConfigError);
  EXPECT_THROW(erode(Sketch(4, 4), 0), ConfigError);
}

TEST(RandomAugment, IdentityOnlyPolicyBinarizes) {
  AugmentPolicy p{1.0, 0.0, 0.0, 3, 7, 0.5};
  const Sketch s(4, 1, {0.2, 0.5, 0.7, 0.0});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    EXPECT_EQ(random_augment(s, p, seed), Sketch(4, 1, {0, 1, 1, 0}));
  }
}

TEST(RandomAugment, BranchFrequencies) {
  AugmentPolicy p;
  int counts[3] = {0, 0, 0};
  for (std::uint64_t seed = 0; seed < 10000; ++seed) ++counts[static_cast<int>(draw_branch(p, seed))];
  EXPECT_NEAR(counts[0] / 1e4, 0.50, 0.02);
  EXPECT_NEAR(counts[1] / 1e4, 0.25, 0.02);
  EXPECT_NEAR(counts[2] / 1e4, 0.25, 0.02);
}

TEST(RandomAugment, OutputIsOneOfTheBranches) {
  AugmentPolicy p;
  const Sketch s = random_binary(3, 16, 16, 0.3);
  const Sketch id = apply_branch(s, p, AugmentBranch::kIdentity);
  const Sketch di = apply_branch(s, p, AugmentBranch::kDilate);
  const Sketch er = apply_branch(s, p, AugmentBranch::kErode);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Sketch out = random_augment(s, p, seed);
    EXPECT_EQ(out, random_augment(s, p, seed));
    EXPECT_TRUE(out == id || out == di || out == er);
    switch (draw_branch(p, seed)) {
      case AugmentBranch::kIdentity: EXPECT_EQ(out, id); break;
      case AugmentBranch::kDilate: EXPECT_EQ(out, di); break;
      case AugmentBranch::kErode: EXPECT_EQ(out, er); break;
    }
  }
}

TEST(AugmentPolicy, ProbabilitiesMustSumToOne) {
  AugmentPolicy p{0.5, 0.5, 0.5, 3, 7, 0.5};
  EXPECT_THROW(p.validate(), ConfigError);
}
