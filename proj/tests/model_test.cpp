#include "mft/model.hpp"

#include <gtest/gtest.h>

namespace mft {
namespace {

SystemSpec paper_scalar(int n, double sw2 = 0.0, double sv2 = 0.0,
                        double sv02 = 0.0) {
  return scalar_system(n, 1.0, 0.3, 0.5, 0.2, 1.0, 1.0, 1.0, 0.5, sw2, sv2,
                       sv02);
}

MatrixXd row(std::initializer_list<double> v) {
  MatrixXd m(1, v.size());
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

// Two types, two-dimensional states and scalar controls.
SystemSpec two_type_spec(int n) {
  SystemSpec s;
  s.num_types = 2;
  s.agents_per_type = n;
  s.d_x = 2;
  s.d_u = 1;
  for (int m = 0; m < 2; ++m) {
    TypeParams p;
    p.A = (MatrixXd(2, 2) << 0.9, 0.1 * m, 0.2, 0.7).finished();
    p.B = (MatrixXd(2, 1) << 0.3, 1.0 - 0.5 * m).finished();
    p.D = MatrixXd::Constant(2, 4, 0.05 * (m + 1));
    p.E = MatrixXd::Constant(2, 2, -0.1);
    p.Q = (MatrixXd(2, 2) << 2.0, 0.3, 0.3, 1.0).finished();
    p.R = MatrixXd::Constant(1, 1, 1.0 + m);
    s.per_type.push_back(p);
  }
  s.Q_bar = MatrixXd::Identity(4, 4);
  s.R_bar = 0.5 * MatrixXd::Identity(2, 2);
  s.sigma_w2 = 1.0;
  s.sigma_v2 = 0.3;
  s.sigma_v02 = 0.2;
  return s;
}

TEST(Decompose, TwoAgents) {
  const DecomposedState d = decompose(row({1, 3}), paper_scalar(2));
  EXPECT_DOUBLE_EQ(d.mf[0], 2.0);
  EXPECT_DOUBLE_EQ(d.rel(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(d.rel(0, 1), 1.0);
}

TEST(Decompose, IdenticalAgents) {
  const DecomposedState d = decompose(row({4, 4, 4}), paper_scalar(3));
  EXPECT_DOUBLE_EQ(d.mf[0], 4.0);
  EXPECT_EQ(d.rel.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Decompose, ThreeAgents) {
  const DecomposedState d = decompose(row({0, 1, 5}), paper_scalar(3));
  EXPECT_DOUBLE_EQ(d.mf[0], 2.0);
  EXPECT_DOUBLE_EQ(d.rel(0, 0), -2.0);
  EXPECT_DOUBLE_EQ(d.rel(0, 1), -1.0);
  EXPECT_DOUBLE_EQ(d.rel(0, 2), 3.0);
  EXPECT_NEAR(d.rel.sum(), 0.0, 1e-12);
}

TEST(Decompose, DimensionMismatch) {
  EXPECT_THROW(decompose(row({1, 2, 3}), paper_scalar(2)), InvalidInput);
}

TEST(Decompose, RelativesSumToZeroPerType) {
  const SystemSpec s = two_type_spec(5);
  std::mt19937_64 gen(3);
  std::normal_distribution<double> g(0.0, 10.0);
  for (int trial = 0; trial < 50; ++trial) {
    MatrixXd x(2, 10);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(gen);
    const DecomposedState d = decompose(x, s);
    for (int m = 0; m < 2; ++m) {
      EXPECT_LT(d.rel.middleCols(m * 5, 5).rowwise().sum().cwiseAbs().maxCoeff(),
                1e-10);
    }
  }
}

TEST(Step, ScalarSingleAgent) {
  const SystemSpec s = paper_scalar(1);
  RandomSource rng(0);
  const GlobalState next = step({row({1}), 1}, row({0}), s, rng);
  EXPECT_DOUBLE_EQ(next.x(0, 0), 1.5);
  EXPECT_EQ(next.t, 2);
}

TEST(Step, ScalarTwoAgents) {
  const SystemSpec s = paper_scalar(2);
  RandomSource rng(0);
  const GlobalState next = step({row({1, 3}), 1}, row({0, 0}), s, rng);
  EXPECT_DOUBLE_EQ(next.x(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(next.x(0, 1), 4.0);
}

TEST(Step, SameSeedIsBitIdentical) {
  const SystemSpec s = paper_scalar(3, 1.0, 0.5, 0.5);
  RandomSource a(42);
  RandomSource b(42);
  const GlobalState x{row({1, -2, 0.5}), 1};
  const MatrixXd u = row({0.1, 0.2, -0.3});
  const GlobalState na = step(x, u, s, a);
  const GlobalState nb = step(x, u, s, b);
  EXPECT_EQ(na.x, nb.x);
}

TEST(Step, NoiseDrawOrder) {
  // Global, then per type, then per agent; each draw consumes d_x normals.
  const SystemSpec s = two_type_spec(2);
  RandomSource rng(7);
  RandomSource ref(7);
  const MatrixXd x = MatrixXd::Zero(2, 4);
  const MatrixXd u = MatrixXd::Zero(1, 4);
  const GlobalState next = step({x, 1}, u, s, rng);

  VectorXd v0(2), v1(2), v2(2);
  ref.gaussian(v0);
  ref.gaussian(v1);
  ref.gaussian(v2);
  for (int i = 0; i < 4; ++i) {
    VectorXd w(2);
    ref.gaussian(w);
    const VectorXd expected = std::sqrt(s.sigma_w2) * w +
                              std::sqrt(s.sigma_v2) * (i < 2 ? v1 : v2) +
                              std::sqrt(s.sigma_v02) * v0;
    EXPECT_NEAR((next.x.col(i) - expected).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  }
}

TEST(Step, DynamicsSplitIdentity) {
  // Noise-free step, then decompose, equals the mean-field and relative
  // recursions applied to the decomposed inputs.
  const SystemSpec s = two_type_spec(3);
  std::mt19937_64 gen(11);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    MatrixXd x(2, 6), u(1, 6);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(gen);
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = g(gen);
    const DecomposedState dx = decompose(x, s);
    const DecomposedState du = decompose(u, s);
    const DecomposedState next = decompose(step_mean(x, u, s), s);

    // x_mf' = Abar x_mf + Bbar u_mf, built here block by block.
    for (int m = 0; m < 2; ++m) {
      const TypeParams& p = s.per_type[m];
      const VectorXd mf = p.A * dx.mf.segment(m * 2, 2) +
                          p.B * du.mf.segment(m, 1) + p.D * dx.mf +
                          p.E * du.mf;
      EXPECT_LT((next.mf.segment(m * 2, 2) - mf).cwiseAbs().maxCoeff(), 1e-10);
      for (int i = 0; i < 3; ++i) {
        const int col = m * 3 + i;
        const VectorXd rel = p.A * dx.rel.col(col) + p.B * du.rel.col(col);
        EXPECT_LT((next.rel.col(col) - rel).cwiseAbs().maxCoeff(), 1e-10);
      }
    }
  }
}

TEST(Cost, Zero) {
  const SystemSpec s = paper_scalar(2);
  EXPECT_EQ(per_step_cost(row({0, 0}), row({0, 0}), s), 0.0);
}

TEST(Cost, TwoAgentExample) {
  EXPECT_DOUBLE_EQ(per_step_cost(row({1, 3}), row({0, 0}), paper_scalar(2)),
                   9.0);
}

TEST(Cost, SplitIdentity) {
  const SystemSpec s = two_type_spec(4);
  std::mt19937_64 gen(5);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    MatrixXd x(2, 8), u(1, 8);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(gen);
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = g(gen);
    const double direct = per_step_cost(x, u, s);
    const double split = split_cost(decompose(x, s), decompose(u, s), s).total();
    EXPECT_NEAR(direct, split, 1e-9 * std::abs(direct));
    EXPECT_GE(direct, 0.0);
  }
}

TEST(SystemSpec, Validation) {
  SystemSpec s = paper_scalar(2);
  EXPECT_NO_THROW(s.validate());
  s.per_type[0].Q(0, 0) = -1.0;
  EXPECT_THROW(s.validate(), InvalidInput);
  s = paper_scalar(2);
  s.per_type[0].D = MatrixXd::Zero(1, 2);
  EXPECT_THROW(s.validate(), InvalidInput);
  s = two_type_spec(2);
  EXPECT_NO_THROW(s.validate());
  s.Q_bar(0, 1) = 0.5;
  EXPECT_THROW(s.validate(), InvalidInput);
}

TEST(SystemSpec, MeanFieldCostMatrices) {
  const SystemSpec s = two_type_spec(2);
  MatrixXd expected = s.Q_bar;
  expected.block(0, 0, 2, 2) += s.per_type[0].Q;
  expected.block(2, 2, 2, 2) += s.per_type[1].Q;
  EXPECT_EQ(s.mean_field_Q(), expected);
  EXPECT_DOUBLE_EQ(s.mean_field_R()(1, 1), 0.5 + 2.0);
}

}  // namespace
}  // namespace mft
