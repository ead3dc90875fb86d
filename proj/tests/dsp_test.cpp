#include <gtest/gtest.h>

#include <cmath>
#include <complex>

#include "tcrn/dsp.hpp"
#include "tcrn/grad_check.hpp"
#include "tcrn/rng.hpp"

using tcrn::ConvGeometry;
using tcrn::Tensor;
using tcrn::WindowKind;
using tcrn::WindowSpec;

namespace {

// Direct summation oracle for strided cross-correlation, written with the
// same per-output accumulation order the library commits to.
Tensor<double> conv_oracle(const Tensor<double>& input,
                           const Tensor<double>& kernels,
                           const ConvGeometry& g) {
  const std::size_t T = input.extent(1);
  const std::size_t P = T + g.causal_left_pad;
  std::vector<std::vector<double>> padded(g.in_channels,
                                          std::vector<double>(P, 0.0));
  for (std::size_t i = 0; i < g.in_channels; ++i)
    for (std::size_t t = 0; t < T; ++t)
      padded[i][g.causal_left_pad + t] = input(i, t);
  const std::size_t J = (P - g.kernel_size) / g.stride + 1;
  Tensor<double> out{{g.out_channels, J}};
  for (std::size_t o = 0; o < g.out_channels; ++o)
    for (std::size_t j = 0; j < J; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.in_channels; ++i)
        for (std::size_t t = 0; t < g.kernel_size; ++t)
          acc += padded[i][j * g.stride + t] * kernels(o, i, t);
      out(o, j) = acc;
    }
  return out;
}

// Scatter-add oracle for the transposed convolution.
Tensor<double> deconv_oracle(const Tensor<double>& frames,
                             const Tensor<double>& kernels,
                             const ConvGeometry& g) {
  const std::size_t J = frames.extent(1);
  const std::size_t T_rec = (J - 1) * g.stride + g.kernel_size;
  Tensor<double> out{{g.out_channels, T_rec}};
  for (std::size_t i = 0; i < g.in_channels; ++i)
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t o = 0; o < g.out_channels; ++o)
        for (std::size_t t = 0; t < g.kernel_size; ++t)
          out(o, j * g.stride + t) += frames(i, j) * kernels(i, o, t);
  return out;
}

// Textbook STFT magnitude via per-frame complex DFT accumulation.
Tensor<double> stft_oracle(const Tensor<double>& s, std::size_t N,
                           std::size_t hop, WindowKind kind) {
  auto w = tcrn::make_window<double>({kind, N});
  const std::size_t J = (s.size() - N) / hop + 1;
  const std::size_t B = N / 2 + 1;
  Tensor<double> mag{{B, J}};
  for (std::size_t j = 0; j < J; ++j)
    for (std::size_t f = 0; f < B; ++f) {
      std::complex<double> acc(0.0, 0.0);
      for (std::size_t t = 0; t < N; ++t) {
        const double phase = -2.0 * M_PI * double(f) * double(t) / double(N);
        acc += s[j * hop + t] * w[t] *
               std::complex<double>(std::cos(phase), std::sin(phase));
      }
      mag(f, j) = std::abs(acc);
    }
  return mag;
}

Tensor<double> random_tensor(std::vector<std::size_t> shape, tcrn::Rng& rng) {
  Tensor<double> t{std::move(shape)};
  t.fill_uniform(rng, -1.0, 1.0);
  return t;
}

}  // namespace

TEST(Window, HannPeriodicLength4) {
  auto w = tcrn::make_window<double>({WindowKind::hann_periodic, 4});
  EXPECT_NEAR(w[0], 0.0, 1e-15);
  EXPECT_NEAR(w[1], 0.5, 1e-15);
  EXPECT_NEAR(w[2], 1.0, 1e-15);
  EXPECT_NEAR(w[3], 0.5, 1e-15);
}

TEST(Window, RectangularAndShortHann) {
  auto r = tcrn::make_window<double>({WindowKind::rectangular, 3});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r[i], 1.0);
  auto h = tcrn::make_window<double>({WindowKind::hann_periodic, 2});
  EXPECT_NEAR(h[0], 0.0, 1e-15);
  EXPECT_NEAR(h[1], 1.0, 1e-15);
  EXPECT_THROW(tcrn::make_window<double>({WindowKind::hann_periodic, 1}),
               std::invalid_argument);
}

TEST(Conv1d, IdentityKernel) {
  auto f = Tensor<double>::from_values({1, 4}, {1, 0, 0, 0});
  auto k = Tensor<double>::from_values({1, 1, 1}, {1});
  auto out = tcrn::conv1d(f, k, {.kernel_size = 1, .stride = 1});
  ASSERT_EQ(out.extent(1), 4u);
  EXPECT_EQ(out(0, 0), 1.0);
  EXPECT_EQ(out(0, 1), 0.0);
  EXPECT_EQ(out(0, 2), 0.0);
  EXPECT_EQ(out(0, 3), 0.0);
}

TEST(Conv1d, StridedBoxcar) {
  auto f = Tensor<double>::from_values({1, 4}, {1, 2, 3, 4});
  auto k = Tensor<double>::from_values({1, 1, 2}, {1, 1});
  auto out = tcrn::conv1d(f, k, {.kernel_size = 2, .stride = 2});
  ASSERT_EQ(out.extent(1), 2u);
  EXPECT_EQ(out(0, 0), 3.0);
  EXPECT_EQ(out(0, 1), 7.0);
}

TEST(Conv1d, MatchesNaiveOracleExactly) {
  tcrn::Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    ConvGeometry g;
    g.in_channels = 1 + rng.below(3);
    g.out_channels = 1 + rng.below(3);
    g.kernel_size = 2 + rng.below(7);
    g.stride = 1 + rng.below(g.kernel_size);
    g.causal_left_pad = rng.below(2) ? g.kernel_size - 1 : 0;
    const std::size_t T = g.kernel_size + rng.below(40);
    auto f = random_tensor({g.in_channels, T}, rng);
    auto k = random_tensor({g.out_channels, g.in_channels, g.kernel_size}, rng);
    auto got = tcrn::conv1d(f, k, g);
    auto want = conv_oracle(f, k, g);
    ASSERT_TRUE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], want[i]);
  }
}

TEST(Conv1d, InputShorterThanFrameThrows) {
  Tensor<double> f{{1, 3}};
  Tensor<double> k{{1, 1, 4}};
  EXPECT_THROW(tcrn::conv1d(f, k, {.kernel_size = 4, .stride = 1}),
               std::invalid_argument);
}

TEST(Conv1d, FastAccumulationStaysClose) {
  tcrn::Rng rng(321);
  auto f = random_tensor({2, 200}, rng);
  auto k = random_tensor({3, 2, 16}, rng);
  ConvGeometry g{.kernel_size = 16, .stride = 4, .in_channels = 2,
                 .out_channels = 3};
  auto strict = tcrn::conv1d(f, k, g);
  tcrn::set_fast_accumulation(true);
  auto fast = tcrn::conv1d(f, k, g);
  tcrn::set_fast_accumulation(false);
  for (std::size_t i = 0; i < strict.size(); ++i)
    EXPECT_NEAR(strict[i], fast[i], 1e-12);
}

TEST(WindowedConv, RectangularWindowDegeneratesToPlain) {
  tcrn::Rng rng(13);
  ConvGeometry g{.kernel_size = 6, .stride = 2, .in_channels = 2,
                 .out_channels = 2};
  auto f = random_tensor({2, 30}, rng);
  auto k = random_tensor({2, 2, 6}, rng);
  auto ones = tcrn::make_window<double>({WindowKind::rectangular, 6});
  auto a = tcrn::windowed_conv1d(f, k, ones, g);
  auto b = tcrn::conv1d(f, k, g);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(WindowedConv, HannWindowSumsToTwo) {
  auto f = Tensor<double>::from_values({1, 4}, {1, 1, 1, 1});
  auto k = Tensor<double>::from_values({1, 1, 4}, {1, 1, 1, 1});
  auto w = tcrn::make_window<double>({WindowKind::hann_periodic, 4});
  auto out = tcrn::windowed_conv1d(f, k, w, {.kernel_size = 4, .stride = 4});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR(out[0], 2.0, 1e-15);
}

TEST(WindowedConv, MismatchedWindowThrows) {
  Tensor<double> f{{1, 8}};
  Tensor<double> k{{1, 1, 4}};
  auto w = tcrn::make_window<double>({WindowKind::hann_periodic, 6});
  EXPECT_THROW(
      tcrn::windowed_conv1d(f, k, w, {.kernel_size = 4, .stride = 2}),
      std::invalid_argument);
}

TEST(WindowedConv, KernelGradientIsWindowScaled) {
  // d/dk of sum(R .* windowed_conv(F, k, W)) must equal the plain conv
  // kernel gradient premultiplied elementwise by W.
  tcrn::Rng rng(17);
  ConvGeometry g{.kernel_size = 4, .stride = 2, .in_channels = 1,
                 .out_channels = 2};
  auto f = random_tensor({1, 16}, rng);
  auto k0 = random_tensor({2, 1, 4}, rng);
  auto w = tcrn::make_window<double>({WindowKind::hann_periodic, 4});
  const std::size_t J = g.out_frames(16);
  auto r = random_tensor({2, J}, rng);

  Tensor<double> analytic{{2, 1, 4}};
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t t = 0; t < 4; ++t) {
      double acc = 0.0;
      for (std::size_t j = 0; j < J; ++j)
        acc += r(o, j) * f(0, j * g.stride + t);
      analytic(o, 0, t) = acc * w[t];
    }

  auto loss = [&](const Tensor<double>& k) {
    auto y = tcrn::windowed_conv1d(f, k, w, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * r[i];
    return acc;
  };
  auto report = tcrn::finite_diff_check(loss, k0, analytic, 1e-5, 8);
  EXPECT_LT(report.max_rel_error, 1e-8);
}

TEST(Deconv1d, SingleFrameCopiesKernel) {
  auto h = Tensor<double>::from_values({1, 1}, {1});
  auto k = Tensor<double>::from_values({1, 1, 3}, {1, 2, 3});
  auto out = tcrn::deconv1d(h, k, {.kernel_size = 3, .stride = 2});
  ASSERT_EQ(out.extent(1), 3u);
  EXPECT_EQ(out(0, 0), 1.0);
  EXPECT_EQ(out(0, 1), 2.0);
  EXPECT_EQ(out(0, 2), 3.0);
}

TEST(Deconv1d, UnevenOverlapPattern) {
  auto h = Tensor<double>::from_values({1, 3}, {1, 1, 1});
  auto k = Tensor<double>::from_values({1, 1, 3}, {1, 1, 1});
  auto out = tcrn::deconv1d(h, k, {.kernel_size = 3, .stride = 2});
  const double want[7] = {1, 1, 2, 1, 2, 1, 1};
  ASSERT_EQ(out.extent(1), 7u);
  for (std::size_t p = 0; p < 7; ++p) EXPECT_EQ(out(0, p), want[p]);
}

TEST(Deconv1d, EvenOverlapInteriorIsFlat) {
  auto h = Tensor<double>::from_values({1, 3}, {1, 1, 1});
  auto k = Tensor<double>::from_values({1, 1, 4}, {1, 1, 1, 1});
  auto out = tcrn::deconv1d(h, k, {.kernel_size = 4, .stride = 2});
  ASSERT_EQ(out.extent(1), 8u);
  for (std::size_t p = 2; p < 6; ++p) EXPECT_EQ(out(0, p), 2.0);
}

TEST(Deconv1d, MatchesScatterAddOracleExactly) {
  tcrn::Rng rng(19);
  for (int trial = 0; trial < 30; ++trial) {
    ConvGeometry g;
    g.in_channels = 1 + rng.below(3);
    g.out_channels = 1 + rng.below(3);
    g.kernel_size = 2 + rng.below(7);
    g.stride = 1 + rng.below(g.kernel_size);
    const std::size_t J = 1 + rng.below(20);
    auto h = random_tensor({g.in_channels, J}, rng);
    auto k = random_tensor({g.in_channels, g.out_channels, g.kernel_size}, rng);
    auto got = tcrn::deconv1d(h, k, g);
    auto want = deconv_oracle(h, k, g);
    ASSERT_TRUE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], want[i]);
  }
}

TEST(Deconv1d, AdjointOfConv) {
  // <conv(F,k), H> == <F, deconv(H,k)> for the same unpadded geometry.
  tcrn::Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    ConvGeometry g;
    g.in_channels = 1 + rng.below(3);
    g.out_channels = 1 + rng.below(3);
    g.kernel_size = 2 + rng.below(7);
    g.stride = 1 + rng.below(g.kernel_size);
    const std::size_t J = 1 + rng.below(12);
    const std::size_t T = (J - 1) * g.stride + g.kernel_size;
    auto f = random_tensor({g.in_channels, T}, rng);
    auto k = random_tensor({g.out_channels, g.in_channels, g.kernel_size}, rng);
    auto h = random_tensor({g.out_channels, J}, rng);

    auto conv_out = tcrn::conv1d(f, k, g);
    ASSERT_EQ(conv_out.extent(1), J);
    double lhs = 0.0;
    for (std::size_t i = 0; i < conv_out.size(); ++i) lhs += conv_out[i] * h[i];

    ConvGeometry gt = g;
    gt.in_channels = g.out_channels;
    gt.out_channels = g.in_channels;
    auto back = tcrn::deconv1d(h, k, gt);
    ASSERT_EQ(back.extent(1), T);
    double rhs = 0.0;
    for (std::size_t i = 0; i < back.size(); ++i) rhs += back[i] * f[i];

    EXPECT_NEAR(lhs, rhs, 1e-10);
  }
}

TEST(Deconv1d, CheckerboardDichotomy) {
  // Constant frames and a constant kernel reconstruct a constant interior
  // exactly when the kernel size is divisible by the stride.
  for (std::size_t m = 1; m <= 16; ++m)
    for (std::size_t s = 1; s <= m; ++s) {
      const std::size_t J = 20;
      Tensor<double> h{{1, J}};
      h.fill(1.0);
      Tensor<double> k{{1, 1, m}};
      k.fill(1.0);
      auto out = tcrn::deconv1d(h, k, {.kernel_size = m, .stride = s});
      const std::size_t T_rec = (J - 1) * s + m;
      bool flat = true;
      const double first = out(0, m);
      for (std::size_t p = m; p + m < T_rec; ++p)
        if (out(0, p) != first) flat = false;
      EXPECT_EQ(flat, m % s == 0) << "kernel " << m << " stride " << s;
    }
}

TEST(Envelope, RectangularNoOverlapIsFlat) {
  auto w = tcrn::make_window<double>({WindowKind::rectangular, 4});
  auto env = tcrn::sum_square_envelope(w, std::size_t{4}, std::size_t{5}, 0.1,
                                       1.0);
  for (std::size_t p = 0; p < env.size(); ++p) EXPECT_EQ(env[p], 1.0);
}

TEST(Envelope, HannHalfOverlapClosedForm) {
  const std::size_t L = 320, hop = 160, J = 8;
  auto w = tcrn::make_window<double>({WindowKind::hann_periodic, L});
  auto env = tcrn::sum_square_envelope(w, hop, J, 0.1, 1.0);
  // Interior: env(p) = 0.5*(1 + cos^2(2*pi*p/320)), inside [0.5, 1], so the
  // clamp must stay inactive there.
  for (std::size_t p = L; p + L < env.size(); ++p) {
    const double c = std::cos(2.0 * M_PI * double(p) / double(L));
    EXPECT_NEAR(env[p], 0.5 * (1.0 + c * c), 1e-12);
    EXPECT_GE(env[p], 0.5);
    EXPECT_LE(env[p], 1.0);
  }
  // First sample: only W(0) = 0 contributes, so the raw value 0 clamps up.
  EXPECT_EQ(env[0], 0.1);
  EXPECT_THROW(tcrn::sum_square_envelope(w, hop, J, 0.0, 1.0),
               std::invalid_argument);
}

TEST(Stft, ZeroSignalGivesZeroMagnitudes) {
  Tensor<double> s{{512}};
  auto mag = tcrn::stft_magnitude(s, tcrn::make_stft_spec(320, 160));
  for (std::size_t i = 0; i < mag.size(); ++i) EXPECT_EQ(mag[i], 0.0);
}

TEST(Stft, CosineConcentratesInItsBin) {
  const std::size_t N = 320, k0 = 25;
  Tensor<double> s{{N}};
  for (std::size_t t = 0; t < N; ++t)
    s[t] = std::cos(2.0 * M_PI * double(k0) * double(t) / double(N));
  auto mag = tcrn::stft_magnitude(
      s, tcrn::make_stft_spec(N, N, WindowKind::rectangular));
  ASSERT_EQ(mag.extent(1), 1u);
  EXPECT_NEAR(mag(k0, 0), double(N) / 2.0, 1e-9);
  for (std::size_t f = 0; f < mag.extent(0); ++f)
    if (f != k0) EXPECT_LT(mag(f, 0), 1e-8);
}

TEST(Stft, MatchesDirectDftOracle) {
  tcrn::Rng rng(29);
  const std::size_t N = 32, hop = 16;
  auto basis = tcrn::make_stft_basis<double>(tcrn::make_stft_spec(N, hop));
  for (int trial = 0; trial < 100; ++trial) {
    Tensor<double> s{{N + hop * (1 + rng.below(6))}};
    s.fill_uniform(rng, -1.0, 1.0);
    auto got = tcrn::stft_magnitude(s, basis);
    auto want = stft_oracle(s, N, hop, WindowKind::hann_periodic);
    ASSERT_TRUE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i)
      EXPECT_NEAR(got[i], want[i], 1e-6);
  }
}

TEST(Stft, ShortSignalThrows) {
  Tensor<double> s{{100}};
  EXPECT_THROW(tcrn::stft_magnitude(s, tcrn::make_stft_spec(320, 160)),
               std::invalid_argument);
}
