#include <gtest/gtest.h>

#include <cmath>

#include "ddm/autodiff.hpp"
#include "ddm/matrix.hpp"
#include "ddm/params.hpp"
#include "ddm/rng.hpp"
#include "test_util.hpp"

using namespace ddm;
using ddm::testing::random_matrix;

TEST(Matmul, IdentityRight) {
  DenseMatrix a{{1, 2}, {3, 4}};
  EXPECT_EQ(matmul(a, DenseMatrix::identity(2)), a);
}

TEST(Matmul, HandProduct) {
  DenseMatrix r = matmul(DenseMatrix{{1, 2}}, DenseMatrix{{3}, {4}});
  ASSERT_EQ(r.rows(), 1u);
  ASSERT_EQ(r.cols(), 1u);
  EXPECT_EQ(r(0, 0), 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
  RngStream rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_matrix(rng, 5, 4, -10, 10);
    auto b = random_matrix(rng, 4, 3, -10, 10);
    EXPECT_LE(max_abs_diff(matmul(a, b), ddm::testing::triple_loop(a, b)), 1e-12);
    EXPECT_LE(max_abs_diff(matmul_tn(transpose(a), b), ddm::testing::triple_loop(a, b)), 1e-12);
    EXPECT_LE(max_abs_diff(matmul_nt(a, transpose(b)), ddm::testing::triple_loop(a, b)), 1e-12);
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(DenseMatrix(2, 3), DenseMatrix(2, 3));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
  }
}

TEST(Matmul, NonFiniteOutputRejected) {
  DenseMatrix a{{1e308, 1e308}};
  DenseMatrix b{{1e308}, {1e308}};
  EXPECT_THROW(matmul(a, b), NumericError);
}

TEST(Spmm, IdentityAdjacency) {
  RngStream rng(2);
  auto x = random_matrix(rng, 4, 3);
  EXPECT_EQ(spmm(SparseAdjacency::identity(4), x), x);
}

TEST(Spmm, EmptyAdjacencyAnnihilates) {
  RngStream rng(3);
  auto x = random_matrix(rng, 4, 3);
  EXPECT_EQ(spmm(SparseAdjacency(4), x), DenseMatrix(4, 3));
}

TEST(Spmm, MatchesDenseOracle) {
  RngStream rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<AdjEntry> e;
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j)
        if (rng.uniform() < 0.3) e.push_back({i, j, rng.uniform(0.0, 10.0)});
    SparseAdjacency adj(6, e);
    auto x = random_matrix(rng, 6, 2, -10, 10);
    EXPECT_LE(max_abs_diff(spmm(adj, x), ddm::testing::triple_loop(adj.to_dense(), x)), 1e-12);
    EXPECT_LE(max_abs_diff(spmm_transposed(adj, x), ddm::testing::triple_loop(transpose(adj.to_dense()), x)), 1e-12);
  }
}

TEST(Spmm, ShapeMismatch) { EXPECT_THROW(spmm(SparseAdjacency::identity(3), DenseMatrix(4, 2)), DimensionError); }

TEST(SparseAdjacency, SortsAndMergesDuplicates) {
  SparseAdjacency a(3, {{2, 0, 1.0}, {0, 1, 2.0}, {0, 1, 0.5}});
  ASSERT_EQ(a.nnz(), 2u);
  EXPECT_EQ(a.entries()[0].row, 0u);
  EXPECT_DOUBLE_EQ(a.entries()[0].weight, 2.5);
  EXPECT_EQ(a.entries()[1].row, 2u);
}

TEST(SparseAdjacency, RejectsBadEntries) {
  EXPECT_THROW(SparseAdjacency(2, {{0, 2, 1.0}}), ContractError);
  EXPECT_THROW(SparseAdjacency(2, {{0, 1, -1.0}}), ContractError);
  EXPECT_THROW(SparseAdjacency(2, {{0, 1, NAN}}), ContractError);
}

TEST(SparseAdjacency, UndirectedEdgesAreSymmetric) {
  const std::vector<std::pair<std::size_t, std::size_t>> edges{{0, 1}, {1, 2}, {3, 0}};
  auto a = SparseAdjacency::from_undirected_edges(4, edges);
  EXPECT_EQ(a.nnz(), 6u);
  EXPECT_TRUE(a.is_symmetric());
}

// ---------------------------------------------------------------------------
// Autodiff

TEST(Backward, QuadraticDerivative) {
  ParamStore ps;
  ps.add("w", DenseMatrix{{3}});
  ad::Tape tape;
  auto w = tape.param(ps, "w");
  ad::backward(ad::sum(ad::hadamard(w, w)), ps);
  EXPECT_DOUBLE_EQ(ps.grad("w")(0, 0), 6.0);
}

TEST(Backward, IndependentSlotGetsZero) {
  ParamStore ps;
  ps.add("w", DenseMatrix{{3}});
  ps.add("unused", DenseMatrix{{1, 2}});
  ps.grad("unused").fill(7.0);
  ad::Tape tape;
  auto w = tape.param(ps, "w");
  ad::backward(ad::sum(w), ps);
  EXPECT_EQ(ps.grad("unused"), DenseMatrix(1, 2));
}

TEST(Backward, NonScalarIsContractError) {
  ParamStore ps;
  ps.add("w", DenseMatrix(2, 2, 1.0));
  ad::Tape tape;
  auto w = tape.param(ps, "w");
  EXPECT_THROW(ad::backward(w, ps), ContractError);
}

TEST(Backward, ClearsTape) {
  ParamStore ps;
  ps.add("w", DenseMatrix{{1}});
  ad::Tape tape;
  auto w = tape.param(ps, "w");
  ad::backward(ad::sum(w), ps);
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, GradientsAccumulateOverReuse) {
  // loss = sum(w) + sum(w ⊙ x): dw = 1 + x
  ParamStore ps;
  ps.add("w", DenseMatrix{{1, 2}});
  ad::Tape tape;
  auto w = tape.param(ps, "w");
  auto x = tape.constant(DenseMatrix{{5, -1}});
  auto l = ad::add(ad::sum(w), ad::sum(ad::hadamard(w, x)));
  ad::backward(l, ps);
  EXPECT_EQ(ps.grad("w"), (DenseMatrix{{6, 0}}));
}

namespace {

// Every op on random inputs in [-2, 2] against central differences.
struct OpCase {
  const char* name;
  std::function<ad::Var(ad::Tape&, const ParamStore&)> build;
};

}  // namespace

TEST(Autodiff, EveryOpMatchesFiniteDifferences) {
  RngStream rng(11);
  SparseAdjacency adj(4, {{0, 1, 0.5}, {1, 0, 0.5}, {2, 3, 1.5}, {3, 3, 1.0}, {1, 2, 0.25}});
  const std::vector<std::size_t> seg{0, 1, 1, 0};
  const std::vector<int> labels{0, 2, 1, 2};
  const std::vector<std::size_t> rows{0, 1, 3};
  const DenseMatrix target = random_matrix(rng, 4, 3);
  const DenseMatrix wsq = random_matrix(rng, 3, 3);
  std::vector<OpCase> cases{
      {"matmul", [&](ad::Tape& t, const ParamStore& p) { return ad::sum(ad::matmul(t.param(p, "a"), t.param(p, "b"))); }},
      {"spmm", [&](ad::Tape& t, const ParamStore& p) { return ad::mse(ad::spmm(adj, t.param(p, "a")), target); }},
      {"add", [&](ad::Tape& t, const ParamStore& p) { return ad::mse(ad::add(t.param(p, "a"), t.param(p, "a")), target); }},
      {"add_row", [&](ad::Tape& t, const ParamStore& p) { return ad::mse(ad::add_row(t.param(p, "a"), t.param(p, "r")), target); }},
      {"hadamard",
       [&](ad::Tape& t, const ParamStore& p) { return ad::sum(ad::hadamard(t.param(p, "a"), t.param(p, "a"))); }},
      {"relu",
       [&](ad::Tape& t, const ParamStore& p) { return ad::mse(ad::relu(t.param(p, "a")), target); }},
      {"concat_cols",
       [&](ad::Tape& t, const ParamStore& p) {
         auto c = ad::concat_cols(t.param(p, "a"), t.param(p, "a"));
         return ad::sum(ad::hadamard(c, c));
       }},
      {"row_mean",
       [&](ad::Tape& t, const ParamStore& p) {
         auto m = ad::row_mean(t.param(p, "a"));
         return ad::sum(ad::hadamard(m, m));
       }},
      {"segment_mean",
       [&](ad::Tape& t, const ParamStore& p) {
         auto m = ad::segment_mean(t.param(p, "a"), seg, 2);
         return ad::sum(ad::hadamard(m, m));
       }},
      {"softmax_cross_entropy",
       [&](ad::Tape& t, const ParamStore& p) {
         return ad::softmax_cross_entropy(ad::matmul(t.param(p, "a"), t.param(p, "sq")), labels, rows);
       }},
  };
  for (const auto& c : cases) {
    ParamStore ps;
    ps.add("a", random_matrix(rng, 4, 3));
    ps.add("b", random_matrix(rng, 3, 2));
    ps.add("r", random_matrix(rng, 1, 3));
    ps.add("sq", wsq);
    // Keep ReLU inputs away from the kink so central differences are valid.
    for (double& v : ps.value("a").values())
      if (std::abs(v) < 0.05) v = 0.3;
    auto res = ddm::testing::check_gradients(ps, [&](ad::Tape& t) { return c.build(t, ps); });
    EXPECT_LE(res.max_rel_error, 1e-6) << c.name << " worst " << res.worst_slot;
  }
}

TEST(Autodiff, ShapeErrors) {
  ad::Tape t;
  auto a = t.constant(DenseMatrix(2, 3));
  auto b = t.constant(DenseMatrix(2, 2));
  EXPECT_THROW(ad::matmul(a, b), DimensionError);
  EXPECT_THROW(ad::add(a, b), DimensionError);
  EXPECT_THROW(ad::mse(a, DenseMatrix(3, 2)), DimensionError);
  EXPECT_THROW(ad::add_row(a, t.constant(DenseMatrix(1, 2))), DimensionError);
}

// ---------------------------------------------------------------------------
// Adam

TEST(Adam, FirstStepIsSignTimesLr) {
  ParamStore ps;
  ps.add("w", DenseMatrix{{0.0, 1.0, -2.0}});
  ad::Tape tape;
  auto w = tape.param(ps, "w");
  // d/dw of sum(c ⊙ w) = c
  ad::backward(ad::sum(ad::hadamard(w, tape.constant(DenseMatrix{{3.0, -0.5, 100.0}}))), ps);
  AdamState st;
  adam_step(ps, st);
  EXPECT_NEAR(ps.value("w")(0, 0), 0.0 - 1e-3, 1e-6);
  EXPECT_NEAR(ps.value("w")(0, 1), 1.0 + 1e-3, 1e-6);
  EXPECT_NEAR(ps.value("w")(0, 2), -2.0 - 1e-3, 1e-6);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  ParamStore ps;
  ps.add("w", DenseMatrix{{1.5, -2.5}});
  ps.add("v", DenseMatrix{{4}});
  const DenseMatrix before = ps.value("w");
  AdamState st;
  for (int i = 0; i < 5; ++i) {
    ad::Tape tape;
    auto v = tape.param(ps, "v");
    tape.param(ps, "w");
    ad::backward(ad::sum(v), ps);
    adam_step(ps, st);
  }
  EXPECT_EQ(ps.value("w"), before);
}

TEST(Adam, StepBeforeBackwardIsContractError) {
  ParamStore ps;
  ps.add("w", DenseMatrix{{1}});
  AdamState st;
  EXPECT_THROW(adam_step(ps, st), ContractError);
}

TEST(Adam, ConvergesOnScalarQuadratic) {
  // f(w) = (w - 3)², oracle recursion run alongside.
  ParamStore ps;
  ps.add("w", DenseMatrix{{0.0}});
  AdamState st(AdamOptions{0.1});
  double w = 0.0, m = 0.0, v = 0.0;
  for (int k = 1; k <= 100; ++k) {
    ad::Tape tape;
    auto d = ad::add(tape.param(ps, "w"), tape.constant(DenseMatrix{{-3.0}}));
    ad::backward(ad::sum(ad::hadamard(d, d)), ps);
    adam_step(ps, st);
    const double g = 2.0 * (w - 3.0);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 0.1 * (m / (1 - std::pow(0.9, k))) / (std::sqrt(v / (1 - std::pow(0.999, k))) + 1e-8);
  }
  EXPECT_LT(std::abs(ps.value("w")(0, 0) - 3.0), 0.5);
  EXPECT_NEAR(ps.value("w")(0, 0), w, 1e-12);
}

TEST(Adam, StepCounterStrictlyIncreases) {
  ParamStore ps;
  ps.add("w", DenseMatrix{{1}});
  AdamState st;
  for (std::uint64_t i = 1; i <= 3; ++i) {
    ad::Tape tape;
    ad::backward(ad::sum(tape.param(ps, "w")), ps);
    adam_step(ps, st);
    EXPECT_EQ(st.step, i);
  }
}

// ---------------------------------------------------------------------------
// RNG

TEST(Rng, SameStreamSameMatrix) {
  RngStream a = RngStream(42).split(3).split(1);
  RngStream b = RngStream(42).split(3).split(1);
  EXPECT_EQ(gaussian(a, 7, 5), gaussian(b, 7, 5));
}

TEST(Rng, SplitDoesNotDisturbParent) {
  RngStream a(9), b(9);
  (void)a.split(4);
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, PathIsRecorded) {
  RngStream s = RngStream(5).split(2).split(7);
  EXPECT_EQ(s.seed(), 5u);
  EXPECT_EQ(s.path(), (std::vector<std::uint64_t>{2, 7}));
}

TEST(Rng, GaussianMoments) {
  RngStream rng(123);
  DenseMatrix g = gaussian(rng, 1000, 1000);
  double s = 0.0, s2 = 0.0;
  for (double v : g.values()) {
    s += v;
    s2 += v * v;
  }
  const double n = 1e6, mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 0.005);
  EXPECT_NEAR(var, 1.0, 0.01);
}

TEST(Rng, SplitStreamsUncorrelated) {
  const RngStream root(77);
  RngStream a = root.split(0), b = root.split(1);
  const int n = 100000;
  double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  for (int i = 0; i < n; ++i) {
    const double x = a.normal(), y = b.normal();
    sa += x;
    sb += y;
    sab += x * y;
    saa += x * x;
    sbb += y * y;
  }
  const double cov = sab / n - (sa / n) * (sb / n);
  const double corr = cov / std::sqrt((saa / n - sa * sa / n / n) * (sbb / n - sb * sb / n / n));
  EXPECT_LE(std::abs(corr), 0.01);
}

TEST(Rng, UniformIndexInRangeAndCoversAll) {
  RngStream rng(8);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto k = rng.uniform_index(7);
    ASSERT_LT(k, 7u);
    ++hits[k];
  }
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Rng, UniformOpenInterval) {
  RngStream rng(10);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(DenseMatrix, ConstructionChecks) {
  EXPECT_THROW(DenseMatrix(2, 2, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW((DenseMatrix{{1, 2}, {3}}), DimensionError);
  DenseMatrix m{{1, 2}, {3, 4}};
  EXPECT_EQ(m.shape_string(), "2x2");
  EXPECT_EQ(m(1, 0), 3.0);
}
