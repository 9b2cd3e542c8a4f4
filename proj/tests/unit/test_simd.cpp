#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "drscreen/random.hpp"
#include "drscreen/simd/kernels.hpp"

using namespace drscreen;
using namespace drscreen::simd;

namespace {

template <class T>
std::vector<T> random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return v;
}

template <class T>
class SimdEquivalence : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!isa_available(Isa::kAvx2)) GTEST_SKIP() << "AVX2 not available on this CPU";
  }
};

using Types = ::testing::Types<float, double>;
TYPED_TEST_SUITE(SimdEquivalence, Types);

}  // namespace

TYPED_TEST(SimdEquivalence, GemmMatchesReferenceAcrossShapes) {
  using T = TypeParam;
  const auto& ref = kernels_for<T>(Isa::kScalar);
  const auto& vec = kernels_for<T>(Isa::kAvx2);
  Rng rng(11);
  // Odd sizes hit every tail path; k > 256 crosses a k-block boundary.
  const std::size_t shapes[][3] = {{1, 1, 1},   {3, 5, 7},    {6, 16, 9},  {7, 17, 33},
                                   {13, 31, 5}, {64, 40, 300}, {73, 9, 260}, {2, 128, 64}};
  for (const auto& s : shapes) {
    const std::size_t m = s[0], n = s[1], k = s[2];
    const std::size_t lda = k + 3, ldb = n + 2, ldc = n + 5;
    const auto a = random_vec<T>(m * lda, rng);
    const auto b = random_vec<T>(k * ldb, rng);
    for (bool acc : {false, true}) {
      auto c_ref = random_vec<T>(m * ldc, rng);
      auto c_vec = c_ref;
      ref.gemm(m, n, k, a.data(), lda, b.data(), ldb, c_ref.data(), ldc, acc);
      vec.gemm(m, n, k, a.data(), lda, b.data(), ldb, c_vec.data(), ldc, acc);
      const double tol = (std::is_same_v<T, float> ? 2e-5 : 1e-12) * std::sqrt(static_cast<double>(k));
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < ldc; ++j) {
          const std::size_t idx = i * ldc + j;
          if (j >= n) {
            ASSERT_EQ(c_ref[idx], c_vec[idx]) << "padding touched";
            continue;
          }
          ASSERT_NEAR(c_ref[idx], c_vec[idx], tol * (1.0 + std::abs(c_ref[idx])))
              << "m=" << m << " n=" << n << " k=" << k << " acc=" << acc;
        }
      }
    }
  }
}

TYPED_TEST(SimdEquivalence, ChannelAffineIsBitIdentical) {
  using T = TypeParam;
  const auto& ref = kernels_for<T>(Isa::kScalar);
  const auto& vec = kernels_for<T>(Isa::kAvx2);
  Rng rng(5);
  for (std::size_t channels : {1u, 7u, 8u, 19u, 64u}) {
    const std::size_t rows = 13, ldx = channels + 4, ldy = channels + 1;
    const auto x = random_vec<T>(rows * ldx, rng, -3, 3);
    const auto scale = random_vec<T>(channels, rng);
    const auto shift = random_vec<T>(channels, rng);
    for (bool relu : {false, true}) {
      std::vector<T> y1(rows * ldy, T(9)), y2(rows * ldy, T(9));
      ref.channel_affine(x.data(), rows, channels, ldx, scale.data(), shift.data(), relu, y1.data(), ldy);
      vec.channel_affine(x.data(), rows, channels, ldx, scale.data(), shift.data(), relu, y2.data(), ldy);
      ASSERT_EQ(y1, y2) << "channels=" << channels << " relu=" << relu;
    }
  }
}

TYPED_TEST(SimdEquivalence, AdamIsBitIdentical) {
  using T = TypeParam;
  const auto& ref = kernels_for<T>(Isa::kScalar);
  const auto& vec = kernels_for<T>(Isa::kAvx2);
  Rng rng(9);
  for (std::size_t n : {1u, 3u, 8u, 37u, 1000u}) {
    auto theta1 = random_vec<T>(n, rng), m1 = random_vec<T>(n, rng, 0, 0.1), v1 = random_vec<T>(n, rng, 0, 0.1);
    auto theta2 = theta1, m2 = m1, v2 = v1;
    const auto g = random_vec<T>(n, rng);
    const AdamCoefficients<T> c{T(5e-5), T(0.9), T(0.999), T(1e-8), T(1 - 0.9 * 0.9 * 0.9), T(1 - 0.999 * 0.999 * 0.999)};
    ref.adam_update(theta1.data(), m1.data(), v1.data(), g.data(), n, c);
    vec.adam_update(theta2.data(), m2.data(), v2.data(), g.data(), n, c);
    ASSERT_EQ(theta1, theta2);
    ASSERT_EQ(m1, m2);
    ASSERT_EQ(v1, v2);
  }
}

TEST(SimdDispatch, ScalarAlwaysAvailableAndSelectable) {
  EXPECT_TRUE(isa_available(Isa::kScalar));
  const Isa before = active_isa();
  set_active_isa(Isa::kScalar);
  EXPECT_EQ(active_isa(), Isa::kScalar);
  EXPECT_EQ(active_kernels<float>().isa, Isa::kScalar);
  set_active_isa(before);
  EXPECT_EQ(isa_name(Isa::kScalar), "scalar");
}

TEST(SimdReference, GemmSmallOracle) {
  // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
  const double a[] = {1, 2, 3, 4}, b[] = {5, 6, 7, 8};
  double c[4] = {};
  kernels_for<double>(Isa::kScalar).gemm(2, 2, 2, a, 2, b, 2, c, 2, false);
  EXPECT_EQ(c[0], 19);
  EXPECT_EQ(c[1], 22);
  EXPECT_EQ(c[2], 43);
  EXPECT_EQ(c[3], 50);
}
