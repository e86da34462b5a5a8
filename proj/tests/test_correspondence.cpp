#include <gtest/gtest.h>

#include <cmath>

#include "emp/correspondence.hpp"
#include "emp/errors.hpp"
#include "test_support.hpp"

namespace emp {
namespace {

DistanceMatrix column(std::initializer_list<double> values) {
  DistanceMatrix d;
  d.values.resize(static_cast<Eigen::Index>(values.size()), 1);
  Eigen::Index i = 0;
  for (double v : values) d.values(i++, 0) = v;
  d.row_valid = Mask::Constant(d.values.rows(), true);
  d.col_valid = Mask::Constant(1, true);
  return d;
}

ConfidenceMatrix confidence(const Eigen::MatrixXd& values) {
  ConfidenceMatrix c;
  c.values = values;
  c.row_valid = Mask::Constant(values.rows(), true);
  c.column_valid = Mask::Constant(values.cols(), true);
  return c;
}

Eigen::MatrixXd random_stochastic(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  for (Eigen::Index j = 0; j < cols; ++j) m.col(j) /= m.col(j).sum();
  return m;
}

void expect_column_stochastic(const ConfidenceMatrix& c) {
  for (Eigen::Index j = 0; j < c.cols(); ++j) {
    if (c.column_valid(j)) {
      EXPECT_NEAR(c.values.col(j).sum(), 1.0, 1e-6);
    }
  }
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    if (!c.row_valid(i)) {
      EXPECT_EQ(c.values.row(i).cwiseAbs().maxCoeff(), 0.0);
    }
  }
}

TEST(EmbedDistances, SelfDistanceIsSqrtEpsilon) {
  RowMatrix a(1, 3);
  a << 0.3, -2.0, 1.5;
  const DistanceMatrix d = embed_distances(a, Mask::Constant(1, true), a, Mask::Constant(1, true));
  EXPECT_NEAR(d.values(0, 0), 1e-6, 1e-9);
}

TEST(EmbedDistances, OrthogonalUnitVectors) {
  RowMatrix a(1, 2), b(1, 2);
  a << 1, 0;
  b << 0, 1;
  const DistanceMatrix d = embed_distances(a, Mask::Constant(1, true), b, Mask::Constant(1, true));
  EXPECT_NEAR(d.values(0, 0), std::sqrt(2.0), 1e-9);
}

TEST(EmbedDistances, MatchesPairwiseLoop) {
  std::mt19937_64 rng(1);
  const RowMatrix a = test::random_points(rng, 5, 2.0);
  const RowMatrix b = test::random_points(rng, 4, 2.0);
  const DistanceMatrix d = embed_distances(a, Mask::Constant(5, true), b, Mask::Constant(4, true));
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int c = 0; c < 3; ++c) s += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
      EXPECT_NEAR(d.values(i, j), std::sqrt(s + 1e-12), 1e-9);
    }
  }
}

TEST(EmbedDistances, WidthMismatchRejected) {
  const RowMatrix a = RowMatrix::Zero(2, 3);
  const RowMatrix b = RowMatrix::Zero(2, 4);
  EXPECT_THROW(embed_distances(a, Mask::Constant(2, true), b, Mask::Constant(2, true)), InvalidArgument);
}

TEST(Softmax, SymmetricColumn) {
  const ConfidenceMatrix c = softmax_confidence(column({0.0, 0.0}));
  EXPECT_NEAR(c.values(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(c.values(1, 0), 0.5, 1e-15);
}

TEST(Softmax, ClosedForm) {
  const ConfidenceMatrix c = softmax_confidence(column({0.0, std::log(3.0)}));
  EXPECT_NEAR(c.values(0, 0), 0.75, 1e-9);
  EXPECT_NEAR(c.values(1, 0), 0.25, 1e-9);
}

TEST(Softmax, SharpTemperature) {
  const ConfidenceMatrix c = softmax_confidence(column({0.0, 0.001}), 1e5);
  EXPECT_GT(c.values(0, 0), 0.99999);
  EXPECT_NEAR(c.values(1, 0), std::exp(-100.0) / (1.0 + std::exp(-100.0)), 1e-50);
}

TEST(Softmax, MaskedRowsAndEmptyColumns) {
  DistanceMatrix d;
  d.values = Eigen::MatrixXd::Random(4, 3).cwiseAbs();
  d.row_valid = Mask::Constant(4, true);
  d.row_valid(1) = false;
  d.col_valid = Mask::Constant(3, true);
  d.col_valid(2) = false;
  const ConfidenceMatrix c = softmax_confidence(d);
  expect_column_stochastic(c);
  EXPECT_FALSE(c.column_valid(2));
  EXPECT_EQ(c.values.col(2).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(c.values.row(1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Softmax, ColumnsSumToOneAcrossScales) {
  std::mt19937_64 rng(2);
  const RowMatrix a = test::random_points(rng, 30, 1.0);
  const RowMatrix b = test::random_points(rng, 10, 1.0);
  const DistanceMatrix d = embed_distances(a, Mask::Constant(30, true), b, Mask::Constant(10, true));
  for (double scale : {1e-3, 1.0, 10.0, 1e3, 1e5, 1e8}) expect_column_stochastic(softmax_confidence(d, scale));
}

TEST(Softmax, ArgmaxEntryMonotoneInScale) {
  DistanceMatrix d = column({0.7, 0.2, 0.9, 0.25, 3.0});
  double previous = 0.0;
  for (double scale = 1.0; scale <= 1e6; scale *= 1.7) {
    const double top = softmax_confidence(d, scale).values(1, 0);
    EXPECT_GE(top, previous - 1e-15);
    previous = top;
  }
}

TEST(Softmax, ShiftInvariantPerColumn) {
  std::mt19937_64 rng(3);
  DistanceMatrix d;
  d.values = random_stochastic(rng, 6, 4) * 5.0;
  d.row_valid = Mask::Constant(6, true);
  d.col_valid = Mask::Constant(4, true);
  const ConfidenceMatrix before = softmax_confidence(d, 2.0);
  d.values.col(2).array() += 17.0;
  const ConfidenceMatrix after = softmax_confidence(d, 2.0);
  EXPECT_LT((before.values - after.values).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(GtConfidence, UniqueCoincidentPointIsOneHot) {
  Points3 mem(4, 3);
  mem << 0, 0, 0, 0.01, 0, 0, 0, 0.02, 0, 1, 1, 1;
  Points3 q(1, 3);
  q << 0, 0, 0;
  const ConfidenceMatrix c = gt_confidence({mem, Mask::Constant(4, true)}, {q, Mask::Constant(1, true)}, 1e5);
  EXPECT_NEAR(c.values(0, 0), 1.0, 1e-6);
  EXPECT_NEAR(c.values.col(0).tail(3).sum(), 0.0, 1e-6);
}

TEST(GtConfidence, EquidistantPairSplitsEvenly) {
  Points3 mem(3, 3);
  mem << -0.5, 0, 0, 0.5, 0, 0, 10, 10, 10;
  Points3 q = Points3::Zero(1, 3);
  const ConfidenceMatrix c = gt_confidence({mem, Mask::Constant(3, true)}, {q, Mask::Constant(1, true)}, 1e5);
  EXPECT_NEAR(c.values(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(c.values(1, 0), 0.5, 1e-12);
}

TEST(GtConfidence, UnmatchedPointSpreadsOverMinimalSet) {
  // 120 memory points on a sphere of radius 0.05 plus one slightly farther.
  std::mt19937_64 rng(4);
  Points3 mem(121, 3);
  for (int i = 0; i < 120; ++i) {
    Vec3 v = test::random_points(rng, 1, 1.0).row(0).transpose();
    mem.row(i) = 0.05 * v.normalized().transpose();
  }
  mem.row(120) << 0.07, 0, 0;
  const Points3 q = Points3::Zero(1, 3);
  const ConfidenceMatrix c = gt_confidence({mem, Mask::Constant(121, true)}, {q, Mask::Constant(1, true)}, 1e5);
  EXPECT_LE(c.values.col(0).maxCoeff(), 1.0 / 120.0 + 1e-6);
  EXPECT_LT(c.values(120, 0), 1e-100);
}

TEST(CrossEntropy, PerfectOneHotIsZero) {
  const ConfidenceMatrix gt = confidence(Eigen::MatrixXd::Identity(4, 4));
  EXPECT_LE(cross_entropy(gt, gt), 1e-9);
}

TEST(CrossEntropy, UniformPredictionGivesLogM) {
  const int m = 7;
  const ConfidenceMatrix gt = confidence(Eigen::MatrixXd::Identity(m, 3));
  const ConfidenceMatrix pred = confidence(Eigen::MatrixXd::Constant(m, 3, 1.0 / m));
  EXPECT_NEAR(cross_entropy(pred, gt), std::log(static_cast<double>(m)), 1e-9);
}

TEST(CrossEntropy, MinimisedAtGroundTruth) {
  std::mt19937_64 rng(5);
  const ConfidenceMatrix gt = confidence(random_stochastic(rng, 4, 3));
  const double at_gt = cross_entropy(gt, gt);
  for (int trial = 0; trial < 200; ++trial) {
    ConfidenceMatrix pred = confidence(random_stochastic(rng, 4, 3));
    EXPECT_LE(at_gt, cross_entropy(pred, gt) + 1e-9);
    // Small perturbations of gt along the simplex.
    Eigen::MatrixXd near = gt.values + 0.01 * (random_stochastic(rng, 4, 3) - gt.values);
    EXPECT_LE(at_gt, cross_entropy(confidence(near), gt) + 1e-9);
  }
}

TEST(CrossEntropy, SkipsEmptyGroundTruthColumns) {
  ConfidenceMatrix gt = confidence(Eigen::MatrixXd::Identity(3, 3));
  gt.values.col(2).setZero();
  gt.column_valid(2) = false;
  const ConfidenceMatrix pred = confidence(Eigen::MatrixXd::Constant(3, 3, 1.0 / 3));
  EXPECT_NEAR(cross_entropy(pred, gt), std::log(3.0), 1e-9);
}

TEST(CrossEntropy, ShapeMismatchRejected) {
  EXPECT_THROW(cross_entropy(confidence(Eigen::MatrixXd::Identity(3, 3)),
                             confidence(Eigen::MatrixXd::Identity(3, 2))),
               InvalidArgument);
}

TEST(ExtractMatches, MaxAndLowestIndexTie) {
  Eigen::MatrixXd v(3, 2);
  v << 0.1, 0.5, 0.7, 0.5, 0.2, 0.0;
  const CorrespondenceSet m = extract_matches(confidence(v));
  EXPECT_DOUBLE_EQ(m.weights(0), 0.7);
  EXPECT_EQ(m.indices(0), 1);
  EXPECT_EQ(m.indices(1), 0);
}

TEST(ExtractMatches, AgreesWithColumnScan) {
  std::mt19937_64 rng(6);
  ConfidenceMatrix c = confidence(random_stochastic(rng, 9, 12));
  c.row_valid(4) = false;
  c.values.row(4).setZero();
  const CorrespondenceSet m = extract_matches(c);
  for (Eigen::Index j = 0; j < 12; ++j) {
    int best = -1;
    for (int i = 0; i < 9; ++i) {
      if (c.row_valid(i) && (best < 0 || c.values(i, j) > c.values(best, j))) best = i;
    }
    EXPECT_EQ(m.indices(j), best);
    EXPECT_EQ(m.weights(j), c.values(best, j));
  }
}

TEST(ExtractMatches, InvalidColumnFlagged) {
  ConfidenceMatrix c = confidence(Eigen::MatrixXd::Identity(2, 2));
  c.column_valid(1) = false;
  c.values.col(1).setZero();
  const CorrespondenceSet m = extract_matches(c);
  EXPECT_FALSE(m.valid(1));
  EXPECT_EQ(m.indices(1), -1);
}

TEST(SoftMatches, OneHotSelectsAndUniformAverages) {
  Points3 mem(3, 3);
  mem << 1, 2, 3, -1, 0, 4, 5, 5, 5;
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(3, 2);
  v(2, 0) = 1.0;
  v(0, 1) = 0.5;
  v(1, 1) = 0.5;
  const PointCloud q = soft_matches(confidence(v), mem);
  EXPECT_TRUE(q.points.row(0) == mem.row(2));
  EXPECT_LT((q.points.row(1) - Eigen::RowVector3d(0, 1, 3.5)).norm(), 1e-15);
}

TEST(SoftMatches, AgreesWithWeightedSumLoop) {
  std::mt19937_64 rng(7);
  const Points3 mem = test::random_points(rng, 8, 3.0);
  const ConfidenceMatrix c = confidence(random_stochastic(rng, 8, 5));
  const PointCloud q = soft_matches(c, mem);
  for (int j = 0; j < 5; ++j) {
    Vec3 s = Vec3::Zero();
    for (int i = 0; i < 8; ++i) s += c.values(i, j) * mem.row(i).transpose();
    EXPECT_LT((q.points.row(j).transpose() - s).norm(), 1e-9);
  }
  EXPECT_THROW(soft_matches(c, test::random_points(rng, 7, 1.0)), InvalidArgument);
}

TEST(SoftMatches, SharpGroundTruthConvergesToHardSelection) {
  std::mt19937_64 rng(8);
  Points3 mem(27, 3);
  int r = 0;
  for (int x = 0; x < 3; ++x) {
    for (int y = 0; y < 3; ++y) {
      for (int z = 0; z < 3; ++z) mem.row(r++) << x, y, z;
    }
  }
  Points3 q = mem.topRows(10) + 0.01 * test::random_points(rng, 10, 1.0);
  const ConfidenceMatrix c = gt_confidence({mem, Mask::Constant(27, true)}, {q, Mask::Constant(10, true)}, 1e6);
  const PointCloud soft = soft_matches(c, mem);
  const CorrespondenceSet hard = extract_matches(c);
  for (int j = 0; j < 10; ++j) {
    EXPECT_LT((soft.points.row(j) - mem.row(hard.indices(j))).cwiseAbs().maxCoeff(), 1e-4);
  }
}

SpatialMemory memory_from(const RowMatrix& feats, const Points3& coords, const Mask& valid) {
  SpatialMemory mem(1, feats.rows(), feats.cols());
  PointEmbeddings pe;
  pe.feats = feats;
  pe.coords = coords;
  pe.valid = valid;
  mem.insert(pe, Pose::identity());
  return mem;
}

void expect_streaming_matches_dense(const SpatialMemory& mem, const PointEmbeddings& pe, double scale) {
  const ConfidenceMatrix dense = softmax_confidence(embed_distances(mem, pe), scale);
  const CorrespondenceSet hard = extract_matches(dense);
  const PointCloud soft = soft_matches(dense, mem.coords());
  const MemoryMatch stream = match_against_memory(mem, pe, scale);
  ASSERT_EQ(stream.matches.size(), hard.size());
  for (Eigen::Index j = 0; j < hard.size(); ++j) {
    ASSERT_EQ(stream.matches.valid(j), hard.valid(j));
    if (!hard.valid(j)) continue;
    EXPECT_NEAR(stream.matches.weights(j), hard.weights(j), 1e-9);
    // Argmax agrees whenever the dense maximum is not a near tie.
    if (dense.values(stream.matches.indices(j), j) < hard.weights(j) - 1e-9) {
      ADD_FAILURE() << "column " << j << " picked a non-maximal row";
    }
    EXPECT_LT((stream.soft_targets.row(j) - soft.points.row(j)).norm(), 1e-6);
  }
}

TEST(StreamingMatcher, AgreesWithDensePathSharp) {
  std::mt19937_64 rng(9);
  const Points3 world = test::random_points(rng, 2500, 2.0);
  Mask mvalid = Mask::Constant(2500, true);
  for (int i = 0; i < 2500; i += 37) mvalid(i) = false;
  OracleConfig oc;
  const SpatialMemory mem = memory_from(oracle_encode(world, oc), world, mvalid);
  PointEmbeddings pe;
  pe.coords = world.topRows(300) + 0.02 * test::random_points(rng, 300, 1.0);
  pe.feats = oracle_encode(pe.coords, oc);
  pe.valid = Mask::Constant(300, true);
  pe.valid(5) = false;
  expect_streaming_matches_dense(mem, pe, 1.0);
}

TEST(StreamingMatcher, AgreesWithDensePathFlat) {
  std::mt19937_64 rng(10);
  const Points3 coords = test::random_points(rng, 1500, 2.0);
  const RowMatrix feats = 0.05 * RowMatrix::Random(1500, 16);
  const SpatialMemory mem = memory_from(feats, coords, Mask::Constant(1500, true));
  PointEmbeddings pe;
  pe.coords = test::random_points(rng, 200, 2.0);
  pe.feats = 0.05 * RowMatrix::Random(200, 16);
  pe.valid = Mask::Constant(200, true);
  expect_streaming_matches_dense(mem, pe, 1.0);
  expect_streaming_matches_dense(mem, pe, 50.0);
}

TEST(CorrespondenceSet, LowConfidenceFraction) {
  CorrespondenceSet s;
  s.weights = Eigen::VectorXd::LinSpaced(10, 0.0, 0.09);
  s.indices = Eigen::VectorXi::Zero(10);
  s.valid = Mask::Constant(10, true);
  s.valid(0) = false;
  // Valid weights 0.01 .. 0.09; those below 0.05 are 0.01 .. 0.04.
  EXPECT_NEAR(s.low_confidence_fraction(), 4.0 / 9.0, 1e-12);
}

}  // namespace
}  // namespace emp
