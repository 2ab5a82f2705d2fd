#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "shiftlab/datagen.hpp"

using namespace shiftlab;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("shiftlab_datagen_" + name)).string();
}

Dataset roundtrip(const Dataset& ds) {
  std::stringstream ss;
  write_dataset(ss, ds);
  return read_dataset(ss);
}

// Fisher discriminant on the sample itself: w = S_w^{-1} (mu1 - mu0), threshold
// at the projected midpoint shifted by the log prior ratio.
double lda_train_accuracy(const Dataset& ds) {
  const auto& y = *ds.labels;
  const Eigen::Index d = ds.features.cols();
  Eigen::VectorXd mu[2] = {Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d)};
  double count[2] = {0, 0};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    mu[y[i]] += ds.features.row(static_cast<Eigen::Index>(i)).transpose();
    count[y[i]] += 1;
  }
  mu[0] /= count[0];
  mu[1] /= count[1];
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Eigen::VectorXd c = ds.features.row(static_cast<Eigen::Index>(i)).transpose() - mu[y[i]];
    S += c * c.transpose();
  }
  S /= static_cast<double>(ds.size() - 2);
  const Eigen::VectorXd w = S.ldlt().solve(mu[1] - mu[0]);
  const double threshold = 0.5 * w.dot(mu[0] + mu[1]) - std::log(count[1] / count[0]);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double s = w.dot(ds.features.row(static_cast<Eigen::Index>(i)).transpose());
    hits += (s > threshold ? 1 : 0) == y[i];
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

}  // namespace

TEST(TwoMoons, NoiselessPointsLieOnCanonicalArcs) {
  const auto ds = gen_two_moons(1000, 0.0, ShiftSpec::rotate(0.0), 7);
  ASSERT_EQ(ds.size(), 1000u);
  ASSERT_EQ(ds.dim(), 2);
  ASSERT_EQ(ds.num_classes, 2);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double x = ds.features(i, 0), y = ds.features(i, 1);
    if ((*ds.labels)[i] == 0) {
      EXPECT_NEAR(x * x + y * y, 1.0, 1e-12);
      EXPECT_GE(y, -1e-15);
    } else {
      EXPECT_NEAR((x - 1) * (x - 1) + (y - 0.5) * (y - 0.5), 1.0, 1e-12);
      EXPECT_LE(y, 0.5 + 1e-15);
    }
  }
}

TEST(TwoMoons, HalfTurnReflectsThroughCentroid) {
  const auto a = gen_two_moons(100, 0.0, ShiftSpec::rotate(0.0), 7);
  const auto b = gen_two_moons(100, 0.0, ShiftSpec::rotate(180.0), 7);
  ASSERT_EQ(a.labels, b.labels);
  for (Eigen::Index i = 0; i < 100; ++i) {
    EXPECT_NEAR(b.features(i, 0), 2 * 0.5 - a.features(i, 0), 1e-12);
    EXPECT_NEAR(b.features(i, 1), 2 * 0.25 - a.features(i, 1), 1e-12);
  }
}

TEST(TwoMoons, CentroidOfNoiselessMoonsIsTheRotationPivot) {
  // Empirical centroid of a dense noiseless sample approaches the pivot.
  const auto ds = gen_two_moons(200000, 0.0, ShiftSpec::rotate(0.0), 1);
  EXPECT_NEAR(ds.features.col(0).mean(), kMoonsCentroidX, 5e-3);
  EXPECT_NEAR(ds.features.col(1).mean(), kMoonsCentroidY, 5e-3);
}

TEST(TwoMoons, Deterministic) {
  const auto a = gen_two_moons(500, 0.1, ShiftSpec::rotate(30.0), 3);
  const auto b = gen_two_moons(500, 0.1, ShiftSpec::rotate(30.0), 3);
  EXPECT_TRUE(a == b);
  const auto c = gen_two_moons(500, 0.1, ShiftSpec::rotate(30.0), 4);
  EXPECT_FALSE(a == c);
}

TEST(TwoMoons, RejectsBadArguments) {
  EXPECT_THROW(gen_two_moons(1, 0.1, ShiftSpec::rotate(0.0), 0), ParameterError);
  EXPECT_THROW(gen_two_moons(10, -0.1, ShiftSpec::rotate(0.0), 0), ParameterError);
  EXPECT_THROW(gen_two_moons(10, 0.1, ShiftSpec::rotate(360.0), 0), ParameterError);
  EXPECT_THROW(gen_two_moons(10, 0.1, ShiftSpec::rotate(-1.0), 0), ParameterError);
  try {
    gen_two_moons(10, 0.1, ShiftSpec::rotate(400.0), 0);
    FAIL();
  } catch (const ParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("[0, 360)"), std::string::npos);
  }
}

TEST(TwoMoons, RotationInverseRestoresFeatures) {
  const auto base = gen_two_moons(300, 0.2, ShiftSpec::rotate(0.0), 11);
  for (double theta : {1.0, 30.0, 97.5, 180.0, 359.0}) {
    const auto back = rotate_dataset(rotate_dataset(base, theta), 360.0 - theta);
    EXPECT_LE((back.features - base.features).cwiseAbs().maxCoeff(), 1e-9) << theta;
  }
}

TEST(TwoMoons, LabelShiftsApply) {
  const auto prior = gen_two_moons(4000, 0.1, ShiftSpec::label_prior({0.8, 0.2}, 5), 1);
  const double ones = std::count(prior.labels->begin(), prior.labels->end(), 1);
  EXPECT_NEAR(ones / 4000.0, 0.2, 0.03);

  const auto plain = gen_two_moons(50, 0.0, ShiftSpec::rotate(0.0), 2);
  const auto flipped = gen_two_moons(50, 0.0, ShiftSpec::permute_labels(9), 2);
  EXPECT_EQ(plain.features, flipped.features);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ((*flipped.labels)[i], 1 - (*plain.labels)[i]);

  const auto moved = gen_two_moons(50, 0.0, ShiftSpec::translate({2.0, -1.0}), 2);
  EXPECT_NEAR((moved.features.col(0) - plain.features.col(0)).maxCoeff(), 2.0, 1e-12);
  EXPECT_NEAR((moved.features.col(1) - plain.features.col(1)).minCoeff(), -1.0, 1e-12);
}

TEST(Blobs, SeparableBlobsPassLdaOracle) {
  const auto ds = gen_gaussian_blobs(200, 2, 2, 6.0, {0.5, 0.5}, 1);
  ASSERT_EQ(ds.size(), 200u);
  EXPECT_GE(lda_train_accuracy(ds), 0.99);
}

TEST(Blobs, DegeneratePriorGivesSingleClass) {
  const auto ds = gen_gaussian_blobs(100, 2, 2, 4.0, {1.0, 0.0}, 3);
  for (int y : *ds.labels) EXPECT_EQ(y, 0);
}

TEST(Blobs, Deterministic) {
  EXPECT_TRUE(gen_gaussian_blobs(200, 3, 4, 5.0, {0.2, 0.3, 0.5}, 9) ==
              gen_gaussian_blobs(200, 3, 4, 5.0, {0.2, 0.3, 0.5}, 9));
}

TEST(Blobs, ClassMeansSitAtSeparationAlongOwnDirection) {
  const double sep = 5.0;
  const auto ds = gen_gaussian_blobs(20000, 5, 2, sep, std::vector<double>(5, 0.2), 4);
  std::map<int, Eigen::VectorXd> sum;
  std::map<int, double> count;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int y = (*ds.labels)[i];
    if (!sum.count(y)) sum[y] = Eigen::VectorXd::Zero(2);
    sum[y] += ds.features.row(static_cast<Eigen::Index>(i)).transpose();
    count[y] += 1;
  }
  for (auto& [k, s] : sum) EXPECT_NEAR((s / count[k]).norm(), sep, 0.1) << k;
  EXPECT_NEAR(sum[0](0) / count[0], sep, 0.1);
  EXPECT_NEAR(sum[1](1) / count[1], sep, 0.1);
  EXPECT_NEAR(sum[2](0) / count[2], -sep, 0.1);
}

TEST(Blobs, CountsFollowPriors) {
  const auto ds = gen_gaussian_blobs(20000, 3, 2, 3.0, {0.6, 0.3, 0.1}, 8);
  std::vector<double> freq(3, 0.0);
  for (int y : *ds.labels) freq[y] += 1.0 / 20000.0;
  EXPECT_NEAR(freq[0], 0.6, 0.015);
  EXPECT_NEAR(freq[1], 0.3, 0.015);
  EXPECT_NEAR(freq[2], 0.1, 0.015);
}

TEST(Blobs, RejectsMalformedPriors) {
  EXPECT_THROW(gen_gaussian_blobs(10, 2, 2, 3.0, {0.5, 0.4}, 0), ParameterError);
  EXPECT_THROW(gen_gaussian_blobs(10, 2, 2, 3.0, {0.5, 0.25, 0.25}, 0), ParameterError);
  EXPECT_THROW(gen_gaussian_blobs(10, 2, 2, 3.0, {1.5, -0.5}, 0), ParameterError);
  EXPECT_THROW(gen_gaussian_blobs(10, 1, 2, 3.0, {1.0}, 0), ParameterError);
}

TEST(Adversarial, TwoClassesFlipExactly) {
  const auto base = gen_two_moons(200, 0.1, ShiftSpec::rotate(0.0), 1);
  const auto adv = make_adversarial_source(base, 42);
  EXPECT_EQ(adv.features, base.features);
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ((*adv.labels)[i], 1 - (*base.labels)[i]);
  EXPECT_TRUE(make_adversarial_source(adv, 42) == base);
}

TEST(Adversarial, PermutationHasNoFixedPoint) {
  const auto base = gen_gaussian_blobs(600, 3, 2, 4.0, {1.0 / 3, 1.0 / 3, 1.0 / 3}, 2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto adv = make_adversarial_source(base, seed);
    std::map<int, std::set<int>> image;
    for (std::size_t i = 0; i < base.size(); ++i) image[(*base.labels)[i]].insert((*adv.labels)[i]);
    std::set<int> targets;
    for (const auto& [from, to] : image) {
      ASSERT_EQ(to.size(), 1u);
      EXPECT_NE(*to.begin(), from);
      targets.insert(*to.begin());
    }
    EXPECT_EQ(targets.size(), 3u);
  }
}

TEST(Adversarial, RejectsUnlabeled) {
  const auto ds = gen_two_moons(20, 0.1, ShiftSpec::rotate(0.0), 1).unlabeled();
  EXPECT_THROW(make_adversarial_source(ds, 1), ParameterError);
}

TEST(Split, NineToOne) {
  const auto ds = gen_two_moons(100, 0.1, ShiftSpec::rotate(0.0), 1);
  const auto [train, test] = split(ds, 0.9, 3);
  EXPECT_EQ(train.size(), 90u);
  EXPECT_EQ(test.size(), 10u);
}

TEST(Split, HalfOfTenIsStratified) {
  Dataset ds;
  ds.features = Matrix::Random(10, 2);
  ds.labels = std::vector<int>{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto [a, b] = split(ds, 0.5, seed);
    EXPECT_EQ(a.size(), 5u);
    EXPECT_EQ(b.size(), 5u);
    for (const auto* part : {&a, &b}) {
      const auto zeros = std::count(part->labels->begin(), part->labels->end(), 0);
      EXPECT_TRUE(zeros == 2 || zeros == 3);
    }
  }
}

TEST(Split, DeterministicDisjointAndCovering) {
  const auto ds = gen_gaussian_blobs(257, 3, 2, 2.0, {0.5, 0.3, 0.2}, 5);
  const auto a = split_indices(ds, 0.7, 11), b = split_indices(ds, 0.7, 11);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  for (auto i : a.test) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), ds.size());
  EXPECT_EQ(a.train.size(), static_cast<std::size_t>(std::llround(257 * 0.7)));
}

TEST(Split, PreservesClassProportionsWithinOneSample) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const std::size_t n = 50 + seed * 13;
    const auto ds = gen_gaussian_blobs(n, 4, 2, 2.0, {0.4, 0.3, 0.2, 0.1}, seed);
    const double f = 0.1 + 0.03 * static_cast<double>(seed);
    const auto idx = split_indices(ds, f, seed);
    std::vector<double> total(4, 0), in_train(4, 0);
    for (std::size_t i = 0; i < n; ++i) total[(*ds.labels)[i]] += 1;
    for (auto i : idx.train) in_train[(*ds.labels)[i]] += 1;
    for (int k = 0; k < 4; ++k) EXPECT_LE(std::abs(in_train[k] - f * total[k]), 1.0) << seed << ' ' << k;
  }
}

TEST(Split, RejectsFractionOutsideOpenInterval) {
  const auto ds = gen_two_moons(20, 0.1, ShiftSpec::rotate(0.0), 1);
  for (double f : {0.0, 1.0, -0.1, 1.5}) EXPECT_THROW(split(ds, f, 0), ParameterError) << f;
}

TEST(Split, UnlabeledSplitsBySize) {
  const auto ds = gen_two_moons(31, 0.1, ShiftSpec::rotate(0.0), 1).unlabeled();
  const auto [a, b] = split(ds, 0.5, 2);
  EXPECT_EQ(a.size() + b.size(), 31u);
  EXPECT_EQ(a.size(), static_cast<std::size_t>(std::llround(15.5)));
  EXPECT_FALSE(a.labeled());
}

TEST(DatasetFile, RoundTripIsBitExact) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto ds = gen_gaussian_blobs(123, 3, 5, 1.7, {0.2, 0.5, 0.3}, seed);
    ds.features *= 1.0 / 3.0;  // non-terminating binary fractions
    ds.domain_id = "blob-" + std::to_string(seed);
    const auto back = roundtrip(ds);
    EXPECT_TRUE(back == ds);
    EXPECT_EQ(std::memcmp(back.features.data(), ds.features.data(), sizeof(double) * ds.features.size()), 0);
  }
}

TEST(DatasetFile, UnlabeledRoundTripStaysUnlabeled) {
  const auto ds = gen_two_moons(40, 0.1, ShiftSpec::rotate(15.0), 4).unlabeled();
  const auto back = roundtrip(ds);
  EXPECT_FALSE(back.labeled());
  EXPECT_TRUE(back == ds);
}

TEST(DatasetFile, SaveAndLoadFromDisk) {
  const auto ds = gen_two_moons(64, 0.1, ShiftSpec::rotate(30.0), 4);
  const auto path = temp_path("disk.csv");
  save_dataset(ds, path);
  EXPECT_TRUE(load_dataset(path) == ds);
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "#shiftlab-dataset v1 n=64 d=2 K=2 domain=moons");
  std::filesystem::remove(path);
  EXPECT_THROW(load_dataset(path), IoError);
}

TEST(DatasetFile, RejectsLabelEqualToK) {
  std::stringstream ss("#shiftlab-dataset v1 n=2 d=1 K=2 domain=x\n0.5,0\n0.25,2\n");
  EXPECT_THROW(read_dataset(ss), FormatError);
}

TEST(DatasetFile, RejectsMalformedInput) {
  const char* bad[] = {
      "",
      "#shiftlab-dataset v2 n=1 d=1 K=2 domain=x\n0,0\n",
      "#shiftlab-dataset v1 n=2 d=1 K=2 domain=x\n0,0\n",
      "#shiftlab-dataset v1 n=1 d=2 K=2 domain=x\n0,0\n",
      "#shiftlab-dataset v1 n=1 d=1 K=2 domain=x\nabc,0\n",
      "#shiftlab-dataset v1 n=2 d=1 K=2 domain=x\n0,0\n1,-1\n",
      "#shiftlab-dataset v1 n=1 d=1 K=2 domain=x\n0,0\n1,1\n",
      "#shiftlab-dataset v1 n=1 d=1 K=1 domain=x\n0,0\n",
      "#shiftlab-dataset v1 n=1 d=1 K=2 domain=x\nnan,0\n",
  };
  for (const char* text : bad) {
    std::stringstream ss(text);
    EXPECT_THROW(read_dataset(ss), FormatError) << text;
  }
}
