#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "faultformer/errors.hpp"
#include "faultformer/gradcheck.hpp"
#include "faultformer/ops.hpp"
#include "faultformer/spectral.hpp"
#include "oracles.hpp"

using namespace faultformer;

namespace {

double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

// (1/L) sum over the full Hermitian-expanded spectrum.
double spectral_energy(const ComplexSpectrum& s, std::size_t row) {
  const std::size_t n = s.length;
  double e = 0.0;
  for (std::size_t k = 0; k < s.bins(); ++k) {
    const double m2 = s.re(row, k) * s.re(row, k) + s.im(row, k) * s.im(row, k);
    const bool paired = k != 0 && !(n % 2 == 0 && k == n / 2);
    e += paired ? 2.0 * m2 : m2;
  }
  return e / static_cast<double>(n);
}

class SpectralLengths : public ::testing::TestWithParam<std::size_t> {};

}  // namespace

TEST(Spectral, ConstantSignalIsPureDc) {
  const double c = 2.5;
  auto s = rdft(Tensor({1, 4}, {c, c, c, c}));
  EXPECT_DOUBLE_EQ(s.re(0, 0), 4 * c);
  for (std::size_t k = 1; k < 3; ++k) {
    EXPECT_NEAR(s.re(0, k), 0.0, 1e-15);
    EXPECT_NEAR(s.im(0, k), 0.0, 1e-15);
  }
}

TEST(Spectral, UnitImpulseIsFlat) {
  auto s = rdft(Tensor({1, 4}, {1, 0, 0, 0}));
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(s.re(0, k), 1.0, 1e-15);
    EXPECT_NEAR(s.im(0, k), 0.0, 1e-15);
  }
}

TEST(Spectral, ShortLengthIsRejected) { EXPECT_THROW(rdft(Tensor({1, 1}, std::vector<double>{1.0})), DimensionError); }

TEST(Spectral, DcOnlySpectrumGivesOnes) {
  const std::size_t n = 8;
  std::vector<double> re(n / 2 + 1, 0.0), im(n / 2 + 1, 0.0);
  re[0] = static_cast<double>(n);
  auto x = irdft(ComplexSpectrum::from_parts({1}, n, re, im));
  for (double v : x.data()) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(Spectral, MatchesNaiveOracleUpTo64) {
  for (std::size_t n = 2; n <= 64; ++n) {
    auto x = oracle::random_vector(n, 100 + n);
    auto s = rdft(Tensor({1, n}, x));
    auto ref = oracle::naive_dft(x);
    double err = 0.0;
    for (std::size_t k = 0; k < s.bins(); ++k) {
      err = std::max(err, std::abs(s.re(0, k) - ref[k].real()));
      err = std::max(err, std::abs(s.im(0, k) - ref[k].imag()));
    }
    EXPECT_LT(err, 1e-10) << "L=" << n;
  }
}

TEST(Spectral, RealSignalSpectrumHasZeroImaginaryEdges) {
  for (std::size_t n : {6u, 7u, 32u}) {
    auto s = rdft(oracle::random_tensor({1, n}, n));
    EXPECT_EQ(s.im(0, 0), 0.0);
    if (n % 2 == 0) {
      EXPECT_EQ(s.im(0, s.bins() - 1), 0.0);
    }
  }
}

TEST_P(SpectralLengths, RoundTripAndParseval) {
  const std::size_t n = GetParam();
  Tensor x = oracle::random_tensor({2, 3, n}, 7 * n);
  auto s = rdft(x);
  Tensor back = irdft(s);
  EXPECT_LT(oracle::max_abs_diff(back.data(), x.data()), 1e-9);
  for (std::size_t row = 0; row < 6; ++row) {
    const double e = energy(x.data().subspan(row * n, n));
    EXPECT_LT(std::abs(spectral_energy(s, row) - e) / e, 1e-9);
  }
}

INSTANTIATE_TEST_SUITE_P(Lengths, SpectralLengths,
                         ::testing::Values(2, 3, 4, 5, 16, 31, 61, 64, 100, 123, 247, 496, 1000, 2048, 4096));

TEST(Spectral, Linearity) {
  const std::size_t n = 123;
  Tensor x = oracle::random_tensor({1, n}, 1);
  Tensor y = oracle::random_tensor({1, n}, 2);
  const double a = 0.7, b = -1.3;
  auto lhs = rdft(add(scale(x, a), scale(y, b)));
  auto sx = rdft(x);
  auto sy = rdft(y);
  for (std::size_t i = 0; i < lhs.packed.numel(); ++i) {
    EXPECT_NEAR(lhs.packed[i], a * sx.packed[i] + b * sy.packed[i], 1e-10);
  }
}

TEST(Spectral, ComplexHadamardIdentityAndRotation) {
  auto s = rdft(oracle::random_tensor({2, 16}, 5));
  auto same = complex_hadamard(s, SpectralWeight::identity(2, s.bins()));
  EXPECT_LT(oracle::max_abs_diff(same.packed.data(), s.packed.data()), 1e-15);

  SpectralWeight rot{Tensor::full({2, s.bins()}, 0.0), Tensor::full({2, s.bins()}, 1.0)};
  auto r = complex_hadamard(s, rot);
  for (std::size_t row = 0; row < 2; ++row) {
    for (std::size_t k = 0; k < s.bins(); ++k) {
      EXPECT_DOUBLE_EQ(r.re(row, k), -s.im(row, k));
      EXPECT_DOUBLE_EQ(r.im(row, k), s.re(row, k));
    }
  }
}

TEST(Spectral, ComplexHadamardRejectsMismatch) {
  auto s = rdft(oracle::random_tensor({2, 16}, 5));
  EXPECT_THROW(complex_hadamard(s, SpectralWeight::identity(3, s.bins())), DimensionError);
  EXPECT_THROW(complex_hadamard(s, SpectralWeight::identity(2, s.bins() + 1)), DimensionError);
}

TEST(Spectral, ComplexHadamardPowerGradient) {
  auto x = oracle::random_tensor({2, 16}, 6);
  SpectralWeight w{oracle::random_tensor({2, 9}, 7, true), oracle::random_tensor({2, 9}, 8, true)};
  auto f = [&] {
    auto out = complex_hadamard(rdft(x), w);
    return sum(hadamard(out.packed, out.packed));
  };
  auto report = gradcheck(f, {{"w.re", w.re}, {"w.im", w.im}});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(Spectral, FarReconstructIdentityFilterScales) {
  Tensor x = oracle::random_tensor({2, 3, 61}, 9);
  Tensor y = far_reconstruct(x, SpectralWeight::identity(3, 31), 0.1);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y[i], 0.1 * x[i], 1e-9);
  Tensor z = far_reconstruct(x, SpectralWeight::identity(3, 31), 0.0);
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(Spectral, FarReconstructBandstopRemovesBins) {
  const std::size_t n = 64;
  Tensor x = oracle::random_tensor({1, 2, n}, 10);
  SpectralWeight w = SpectralWeight::identity(2, n / 2 + 1);
  auto re = w.re.mutable_data();
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t k = 8; k <= 16; ++k) re[c * (n / 2 + 1) + k] = 0.0;
  }
  auto s = rdft(far_reconstruct(x, w, 1.0));
  auto orig = rdft(x);
  for (std::size_t row = 0; row < 2; ++row) {
    for (std::size_t k = 0; k < s.bins(); ++k) {
      if (k >= 8 && k <= 16) {
        EXPECT_LT(s.magnitude(row, k), 1e-9) << "bin " << k;
      } else {
        EXPECT_NEAR(s.re(row, k), orig.re(row, k), 1e-9);
        EXPECT_NEAR(s.im(row, k), orig.im(row, k), 1e-9);
      }
    }
  }
}

TEST(Spectral, FarReconstructIsLinearInInput) {
  Tensor x = oracle::random_tensor({1, 2, 30}, 11);
  Tensor y = oracle::random_tensor({1, 2, 30}, 12);
  SpectralWeight w{oracle::random_tensor({2, 16}, 13), oracle::random_tensor({2, 16}, 14)};
  Tensor lhs = far_reconstruct(add(scale(x, 2.0), y), w, 0.3);
  Tensor rhs = add(scale(far_reconstruct(x, w, 0.3), 2.0), far_reconstruct(y, w, 0.3));
  EXPECT_LT(oracle::max_abs_diff(lhs.data(), rhs.data()), 1e-12);
}

TEST(Spectral, SpectrumCsvColumns) {
  auto s = rdft(Tensor({1, 4}, {1, 0, 0, 0}));
  std::ostringstream out;
  write_spectrum_csv(out, s, 8.0);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "channel,bin,frequency_hz,re,im,magnitude");
  std::getline(in, line);
  EXPECT_EQ(line, "0,0,0,1,0,1");
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 6), "0,1,2,");
}
