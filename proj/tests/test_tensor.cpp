#include "mionet/tensor.hpp"

#include <gtest/gtest.h>

#include "mionet/rng.hpp"

using namespace mionet;

namespace {

// Independent brute-force oracle: nested loops over every index tuple.
double contract_oracle(const Tensor& u, const std::vector<Vec>& alphas) {
  std::vector<int> idx(static_cast<std::size_t>(u.ndim()), 0);
  double total = 0.0;
  for (std::size_t flat = 0; flat < u.size(); ++flat) {
    double term = u.data()[flat];
    for (int ax = 0; ax < u.ndim(); ++ax)
      term *= alphas[static_cast<std::size_t>(ax)][idx[static_cast<std::size_t>(ax)]];
    total += term;
    for (int ax = u.ndim() - 1; ax >= 0; --ax) {
      if (++idx[static_cast<std::size_t>(ax)] < u.dim(ax)) break;
      idx[static_cast<std::size_t>(ax)] = 0;
    }
  }
  return total;
}

Vec random_vec(Rng& rng, int n) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = 2.0 * rng.uniform() - 1.0;
  return v;
}

Tensor random_tensor(Rng& rng, std::vector<int> shape) {
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = 2.0 * rng.uniform() - 1.0;
  return t;
}

Tensor delta_tensor(int ways, int p) {
  Tensor t(std::vector<int>(static_cast<std::size_t>(ways), p));
  std::size_t stride = 0;
  for (int ax = 0; ax < ways; ++ax) stride = stride * static_cast<std::size_t>(p) + 1;
  for (int j = 0; j < p; ++j) t.data()[static_cast<std::size_t>(j) * stride] = 1.0;
  return t;
}

}  // namespace

TEST(Tensor, InvariantsOnConstruction) {
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 3}, {1.0, 2.0}), DimensionError);
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  t.at({1, 2}) = 5.0;
  EXPECT_EQ(t.data()[5], 5.0);
}

TEST(Contract, BasisVectorSelection) {
  Tensor u({3}, {1.0, 0.0, 0.0});
  Vec a(3);
  a << 3, 5, 7;
  EXPECT_DOUBLE_EQ(contract_multilinear(u, {a}), 3.0);
}

TEST(Contract, TwoWayIdentity) {
  Tensor u({2, 2}, {1, 0, 0, 1});
  Vec a(2), b(2);
  a << 2.0, -3.0;
  b << 0.5, 4.0;
  EXPECT_DOUBLE_EQ(contract_multilinear(u, {a, b}), 2.0 * 0.5 + (-3.0) * 4.0);
}

TEST(Contract, MatchesBruteForceOracle) {
  Rng rng(42);
  Tensor u = random_tensor(rng, {2, 3, 2});
  std::vector<Vec> alphas = {random_vec(rng, 2), random_vec(rng, 3), random_vec(rng, 2)};
  const double got = contract_multilinear(u, alphas);
  const double want = contract_oracle(u, alphas);
  EXPECT_NEAR(got, want, 1e-14 * std::max(1.0, std::abs(want)));
}

TEST(Contract, SlotMismatchNamesSlot) {
  Tensor u({2, 3});
  std::vector<Vec> bad = {Vec::Ones(2), Vec::Ones(4)};
  try {
    contract_multilinear(u, bad);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("slot 1"), std::string::npos);
  }
}

TEST(Contract, Multilinearity) {
  Rng rng(7);
  Tensor u = random_tensor(rng, {4, 3});
  Vec a = random_vec(rng, 4), b = random_vec(rng, 4), beta = random_vec(rng, 3);
  const double s = 1.7, t = -0.4;
  const double lhs = contract_multilinear(u, {s * a + t * b, beta});
  const double rhs = s * contract_multilinear(u, {a, beta}) +
                     t * contract_multilinear(u, {b, beta});
  EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(rhs)));
}

TEST(ContractToVector, AllOnes) {
  Tensor w({2, 2, 1}, std::vector<double>(4, 1.0));
  Vec a = Vec::Ones(2);
  Vec out = contract_to_vector(w, {a, a});
  ASSERT_EQ(out.size(), 1);
  EXPECT_DOUBLE_EQ(out[0], 4.0);
}

TEST(ContractToVector, DeltaSelectsDiagonal) {
  Tensor w = delta_tensor(3, 2);
  Vec a(2), b(2);
  a << 1.5, -2.0;
  b << 3.0, 0.25;
  Vec out = contract_to_vector(w, {a, b});
  ASSERT_EQ(out.size(), 2);
  EXPECT_DOUBLE_EQ(out[0], 1.5 * 3.0);
  EXPECT_DOUBLE_EQ(out[1], -2.0 * 0.25);
}

TEST(ContractToVector, MatchesBruteForceOracle) {
  Rng rng(3);
  Tensor w = random_tensor(rng, {2, 3, 4});
  std::vector<Vec> alphas = {random_vec(rng, 2), random_vec(rng, 3)};
  Vec got = contract_to_vector(w, alphas);
  for (int k = 0; k < 4; ++k) {
    Tensor slice({2, 3});
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j) slice.at({i, j}) = w.at({i, j, k});
    EXPECT_NEAR(got[k], contract_oracle(slice, alphas), 1e-14);
  }
}

TEST(HadamardSum, SmallExamples) {
  Vec a(2), b(2);
  a << 1, 2;
  b << 3, 4;
  EXPECT_DOUBLE_EQ(hadamard_sum({a, b}), 11.0);
  EXPECT_DOUBLE_EQ(hadamard_sum({a, b, Vec::Zero(2)}), 0.0);
  EXPECT_THROW(hadamard_sum({}), DimensionError);
  EXPECT_THROW(hadamard_sum({a, Vec::Ones(3)}), DimensionError);
}

TEST(HadamardSum, EqualsDeltaContraction) {
  Rng rng(11);
  std::vector<Vec> vs = {random_vec(rng, 5), random_vec(rng, 5), random_vec(rng, 5)};
  const double got = hadamard_sum(vs);
  const double want = contract_multilinear(delta_tensor(3, 5), vs);
  EXPECT_NEAR(got, want, 1e-12 * std::max(1.0, std::abs(want)));
}

TEST(CpExpand, SingleOuterProductOfBasisVectors) {
  CPFactors f;
  f.rank = 1;
  for (int ax = 0; ax < 3; ++ax) {
    Mat m = Mat::Zero(2, 1);
    m(0, 0) = 1.0;
    f.factors.push_back(m);
  }
  Tensor t = cp_expand(f, {2, 2, 2});
  EXPECT_DOUBLE_EQ(t.at({0, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(t.data()[1] + t.data()[2] + t.data()[7], 0.0);
}

TEST(CpExpand, IdentityColumnsGiveDelta) {
  CPFactors f;
  f.rank = 3;
  for (int ax = 0; ax < 3; ++ax) f.factors.push_back(Mat::Identity(3, 3));
  Tensor t = cp_expand(f, {3, 3, 3});
  Tensor d = delta_tensor(3, 3);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_DOUBLE_EQ(t.data()[i], d.data()[i]);
}

TEST(CpExpand, ContractionIdentity) {
  Rng rng(5);
  CPFactors f;
  f.rank = 2;
  for (int ax = 0; ax < 3; ++ax) {
    Mat m(3, 2);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 2; ++j) m(i, j) = 2.0 * rng.uniform() - 1.0;
    f.factors.push_back(m);
  }
  Tensor t = cp_expand(f, {3, 3, 3});
  std::vector<Vec> alphas = {random_vec(rng, 3), random_vec(rng, 3)};

  // Per-rank oracle: contract_to_vector(cp_expand(F), a_1, a_2) must equal
  // sum_j (prod_i a_i . col_j(F_i)) col_j(F_3).
  Vec got = contract_to_vector(t, alphas);
  Vec want = Vec::Zero(3);
  for (int j = 0; j < 2; ++j) {
    double scale = alphas[0].dot(f.factors[0].col(j)) * alphas[1].dot(f.factors[1].col(j));
    want += scale * f.factors[2].col(j);
  }
  for (int i = 0; i < 3; ++i)
    EXPECT_NEAR(got[i], want[i], 1e-12 * std::max(1.0, std::abs(want[i])));
}

TEST(CpExpand, ShapeMismatchThrows) {
  CPFactors f;
  f.rank = 1;
  f.factors.push_back(Mat::Ones(2, 1));
  f.factors.push_back(Mat::Ones(3, 1));
  EXPECT_THROW(cp_expand(f, {2, 4}), DimensionError);
  EXPECT_THROW(cp_expand(f, {2}), DimensionError);
}
