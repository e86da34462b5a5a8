#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "emp/embedder.hpp"
#include "emp/errors.hpp"
#include "emp/simulator.hpp"
#include "test_support.hpp"

namespace emp {
namespace {

Frame constant_frame(int h, int w, double value, double depth) {
  Frame f;
  f.rgb.height = h;
  f.rgb.width = w;
  f.rgb.data.assign(static_cast<std::size_t>(h * w * 3), value);
  f.depth = DepthMap::Constant(h, w, depth);
  f.intrinsics = Intrinsics{static_cast<double>(w), static_cast<double>(w), (w - 1) / 2.0,
                            (h - 1) / 2.0, w, h};
  return f;
}

Frame random_frame(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Frame f = constant_frame(h, w, 0.0, 1.0);
  for (double& v : f.rgb.data) v = u(rng);
  for (Eigen::Index i = 0; i < f.depth.size(); ++i) f.depth.data()[i] = 0.5 + 4.0 * u(rng);
  return f;
}

TEST(Extract, ZeroInputZeroBiasGivesZeroFeatures) {
  const Frame f = constant_frame(16, 16, 0.0, 0.0);
  const PointEmbeddings pe = extract(f, EmbedderParams::initialise({}, 3));
  EXPECT_EQ(pe.feats.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_FALSE(pe.valid.any());
}

TEST(Extract, ConstantInputGivesConstantInterior) {
  const Frame f = constant_frame(32, 48, 0.4, 2.0);
  const PointEmbeddings pe = extract(f, EmbedderParams::initialise({}, 1));
  const int gh = pe.grid_height, gw = pe.grid_width;
  const Eigen::RowVectorXd ref = pe.feats.row(2 * gw + 2);
  for (int r = 2; r < gh - 2; ++r) {
    for (int c = 2; c < gw - 2; ++c) {
      EXPECT_LT((pe.feats.row(r * gw + c) - ref).norm(), 1e-12);
    }
  }
}

TEST(Extract, DefaultConfigGives4800Points) {
  const Frame f = constant_frame(120, 160, 0.5, 3.0);
  const PointEmbeddings pe = extract(f, EmbedderParams::initialise({}, 0));
  EXPECT_EQ(pe.size(), 4800);
  EXPECT_EQ(pe.grid_height, 60);
  EXPECT_EQ(pe.grid_width, 80);
  EXPECT_EQ(pe.channels(), 16);
  EXPECT_EQ(pe.coords.rows(), 4800);
}

TEST(Extract, QuarterGridWithSecondStride) {
  EmbedderConfig cfg;
  cfg.second_stride = 2;
  const PointEmbeddings pe = extract(constant_frame(32, 48, 0.5, 3.0), EmbedderParams::initialise(cfg, 0));
  EXPECT_EQ(pe.grid_height, 8);
  EXPECT_EQ(pe.grid_width, 12);
}

TEST(Extract, NonDivisibleFrameRejected) {
  EXPECT_THROW(extract(constant_frame(18, 16, 0.5, 1.0), EmbedderParams::initialise({}, 0)),
               InvalidArgument);
}

TEST(Extract, Deterministic) {
  const Frame f = random_frame(24, 32, 4);
  const EmbedderParams p = EmbedderParams::initialise({}, 9);
  const PointEmbeddings a = extract(f, p);
  const PointEmbeddings b = extract(f, p);
  EXPECT_TRUE(a.feats == b.feats);
  EXPECT_TRUE(a.coords == b.coords);
}

TEST(Extract, RowsOfFeaturesAndCoordinatesShareAPixel) {
  Frame f = constant_frame(32, 32, 0.2, 2.0);
  // Mark one 2x2 input cell, which lands on grid cell (5, 3).
  for (int r = 10; r < 12; ++r) {
    for (int c = 6; c < 8; ++c) {
      f.depth(r, c) = 5.0;
      for (int ch = 0; ch < 3; ++ch) f.rgb.at(r, c, ch) = 1.0;
    }
  }
  const PointEmbeddings base = extract(constant_frame(32, 32, 0.2, 2.0), EmbedderParams::initialise({}, 2));
  const PointEmbeddings pe = extract(f, EmbedderParams::initialise({}, 2));
  const Eigen::Index marked = 5 * 16 + 3;
  Eigen::Index deepest = 0;
  pe.coords.col(2).maxCoeff(&deepest);
  EXPECT_EQ(deepest, marked);
  EXPECT_NEAR(pe.coords(marked, 2), 5.0, 1e-12);
  EXPECT_GT((pe.feats.row(marked) - base.feats.row(marked)).norm(), 1e-6);
  EXPECT_LT((pe.feats.row(0) - base.feats.row(0)).norm(), 1e-15);
}

TEST(Extract, InvalidDepthMasksPoint) {
  Frame f = constant_frame(16, 16, 0.3, 2.0);
  f.depth(0, 0) = 0.0;
  const PointEmbeddings pe = extract(f, EmbedderParams::initialise({}, 2));
  EXPECT_FALSE(pe.valid(0));
  EXPECT_EQ(pe.valid.count(), pe.size() - 1);
  EXPECT_TRUE(pe.feats.allFinite());
}

TEST(Tape, ForwardMatchesExtractExactly) {
  const Frame f = random_frame(16, 24, 8);
  const EmbedderParams p = EmbedderParams::initialise({}, 5);
  const auto [pe, tape] = extract_with_tape(f, p);
  const PointEmbeddings plain = extract(f, p);
  EXPECT_TRUE(pe.feats == plain.feats);
  EXPECT_TRUE(pe.coords == plain.coords);
}

TEST(Tape, ReplayOnPerturbedParamsMatchesFreshForward) {
  const Frame f = random_frame(16, 16, 8);
  EmbedderParams p = EmbedderParams::initialise({}, 5);
  const PointEmbeddings before = extract_with_tape(f, p).first;
  for (double& w : p.conv2_weight) w += 1e-3;
  EXPECT_TRUE(extract_with_tape(f, p).first.feats == extract(f, p).feats);
  EXPECT_FALSE(before.feats == extract(f, p).feats);
}

TEST(Tape, GradientMatchesFiniteDifferences) {
  EmbedderConfig cfg;
  cfg.channels = 3;
  cfg.hidden = 4;
  cfg.second_stride = 2;
  const Frame f = random_frame(8, 8, 11);
  EmbedderParams p = EmbedderParams::initialise(cfg, 1);
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  const auto [pe, tape] = extract_with_tape(f, p);
  RowMatrix g(pe.feats.rows(), pe.feats.cols());
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n(rng);

  EmbedderParams grads = EmbedderParams::zeros(cfg);
  backpropagate(tape, p, g, grads);
  auto loss = [&](const EmbedderParams& q) { return (extract(f, q).feats.array() * g.array()).sum(); };

  auto pt = p.tensors();
  auto gt = grads.tensors();
  const double step = 1e-4;
  for (std::size_t t = 0; t < pt.size(); ++t) {
    double diff = 0.0, na = 0.0, nf = 0.0;
    for (std::size_t i = 0; i < pt[t].data.size(); ++i) {
      const double saved = pt[t].data[i];
      pt[t].data[i] = saved + step;
      const double up = loss(p);
      pt[t].data[i] = saved - step;
      const double down = loss(p);
      pt[t].data[i] = saved;
      const double fd = (up - down) / (2 * step);
      diff += (fd - gt[t].data[i]) * (fd - gt[t].data[i]);
      na += gt[t].data[i] * gt[t].data[i];
      nf += fd * fd;
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nf), 1e-12});
    EXPECT_LT(rel, 1e-4) << pt[t].name;
  }
}

TEST(Params, InitialisationIsSeededAndBounded) {
  const EmbedderParams a = EmbedderParams::initialise({}, 4);
  const EmbedderParams b = EmbedderParams::initialise({}, 4);
  const EmbedderParams c = EmbedderParams::initialise({}, 5);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  const double limit1 = std::sqrt(6.0 / (4 * 9 + 16 * 9));
  for (double w : a.conv1_weight) EXPECT_LE(std::abs(w), limit1);
  for (double bias : a.conv1_bias) EXPECT_EQ(bias, 0.0);
}

TEST(Checkpoint, RoundTripsAtFloatPrecision) {
  const EmbedderParams p = EmbedderParams::initialise({}, 6);
  const std::string path = (std::filesystem::temp_directory_path() / "emp_ckpt_test.ckpt").string();
  save_checkpoint(path, p);
  const EmbedderParams q = load_checkpoint(path);
  EXPECT_TRUE(q.config == p.config);
  EmbedderParams rounded = p;
  for (const TensorView& t : rounded.tensors()) {
    for (double& v : t.data) v = static_cast<float>(v);
  }
  EXPECT_TRUE(q == rounded);
  save_checkpoint(path, q);
  EXPECT_TRUE(load_checkpoint(path) == q);
  std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedFileIsParseError) {
  const std::string path = (std::filesystem::temp_directory_path() / "emp_ckpt_trunc.ckpt").string();
  save_checkpoint(path, EmbedderParams::initialise({}, 6));
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 10);
  EXPECT_THROW(load_checkpoint(path), ParseError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), ParseError);
}

class OracleTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    scene_ = new Scene(Scene::generate(4));
    TrajectorySpec spec;
    spec.frames = 2;
    spec.seed = 4;
    frames_ = new std::vector<Frame>(generate_sequence(*scene_, spec));
  }
  static void TearDownTestSuite() {
    delete frames_;
    delete scene_;
  }
  static Scene* scene_;
  static std::vector<Frame>* frames_;
};
Scene* OracleTest::scene_ = nullptr;
std::vector<Frame>* OracleTest::frames_ = nullptr;

TEST_F(OracleTest, FunctionOfWorldPositionOnly) {
  Points3 w(2, 3);
  w << 0.3, -1.2, 0.9, 0.3, -1.2, 0.9;
  const RowMatrix f = oracle_encode(w, {});
  EXPECT_LT((f.row(0) - f.row(1)).norm(), 1e-12);
  EXPECT_EQ(f.cols(), OracleConfig{}.channels());
}

TEST_F(OracleTest, ViewpointInvariant) {
  const Frame& a = (*frames_)[0];
  const Frame& b = (*frames_)[1];
  const PointEmbeddings pa = extract_oracle(a, {});
  const Points3 wa = transform(pa.coords, *a.gt_pose);
  // A world point seen in view a, re-expressed in view b's camera and lifted back.
  for (Eigen::Index i = 0; i < wa.rows(); i += 211) {
    if (!pa.valid(i)) continue;
    const Vec3 in_b = b.gt_pose->inverse().apply(wa.row(i).transpose());
    const Points3 back = transform(Points3(in_b.transpose()), *b.gt_pose);
    EXPECT_LT((oracle_encode(back, {}).row(0) - pa.feats.row(i)).norm(), 1e-9);
  }
}

TEST_F(OracleTest, SeparatedPointsHaveDistinctFeatures) {
  const Frame& a = (*frames_)[0];
  const PointEmbeddings pe = extract_oracle(a, {});
  const Points3 w = transform(pe.coords, *a.gt_pose);
  for (Eigen::Index i = 0; i < w.rows(); i += 61) {
    for (Eigen::Index j = i + 1; j < w.rows(); j += 53) {
      if (!pe.valid(i) || !pe.valid(j) || (w.row(i) - w.row(j)).norm() < 0.05) continue;
      EXPECT_GT((pe.feats.row(i) - pe.feats.row(j)).norm(), 0.0);
    }
  }
}

TEST_F(OracleTest, MissingPoseIsPreconditionError) {
  Frame f = (*frames_)[0];
  f.gt_pose.reset();
  EXPECT_THROW(extract_oracle(f, {}), PreconditionError);
}

}  // namespace
}  // namespace emp
