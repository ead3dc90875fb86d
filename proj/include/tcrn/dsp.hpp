#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>

#include "tcrn/tensor.hpp"

namespace tcrn {

enum class WindowKind { hann_periodic, rectangular };

struct WindowSpec {
  WindowKind kind = WindowKind::hann_periodic;
  std::size_t length = 0;
};

inline const char* window_kind_name(WindowKind k) {
  switch (k) {
    case WindowKind::hann_periodic: return "hann_periodic";
    case WindowKind::rectangular: return "rectangular";
  }
  throw std::invalid_argument("unknown window kind");
}

inline WindowKind window_kind_from_name(const std::string& name) {
  if (name == "hann_periodic") return WindowKind::hann_periodic;
  if (name == "rectangular") return WindowKind::rectangular;
  throw std::invalid_argument("unknown window kind: " + name);
}

/// Periodic Hann: W(t) = 0.5*(1 - cos(2*pi*t/L)), t in [0, L). W(0) == 0.
template <class Scalar>
Tensor<Scalar> make_window(const WindowSpec& spec) {
  if (spec.length < 2)
    throw std::invalid_argument("make_window: length must be >= 2");
  Tensor<Scalar> w{{spec.length}};
  switch (spec.kind) {
    case WindowKind::hann_periodic:
      for (std::size_t t = 0; t < spec.length; ++t)
        w[t] = static_cast<Scalar>(
            0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(t) /
                                  static_cast<double>(spec.length))));
      break;
    case WindowKind::rectangular:
      w.fill(Scalar(1));
      break;
  }
  return w;
}

struct ConvGeometry {
  std::size_t kernel_size = 0;
  std::size_t stride = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t causal_left_pad = 0;

  bool even_overlap() const { return kernel_size % stride == 0; }

  std::size_t out_frames(std::size_t input_length) const {
    const std::size_t padded = input_length + causal_left_pad;
    if (padded < kernel_size)
      throw std::invalid_argument("conv: input shorter than one frame");
    return (padded - kernel_size) / stride + 1;
  }

  std::size_t reconstructed_length(std::size_t n_frames) const {
    return (n_frames - 1) * stride + kernel_size;
  }
};

/// Opt-in accumulation mode for the hot loops. The default keeps the naive
/// per-output summation order (bit-reproducible and oracle-exact); the fast
/// mode uses eight independent accumulator chains, which is still
/// deterministic per build but sums in a different order.
inline bool& fast_accumulation_flag() {
  static bool enabled = false;
  return enabled;
}
inline void set_fast_accumulation(bool enabled) {
  fast_accumulation_flag() = enabled;
}
inline bool fast_accumulation() { return fast_accumulation_flag(); }

namespace detail {

template <class Scalar>
inline Scalar dot_strict(const Scalar* a, const Scalar* b, std::size_t n) {
  Scalar acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class Scalar>
inline Scalar dot_unrolled(const Scalar* a, const Scalar* b, std::size_t n) {
  Scalar s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
    s4 += a[i + 4] * b[i + 4];
    s5 += a[i + 5] * b[i + 5];
    s6 += a[i + 6] * b[i + 6];
    s7 += a[i + 7] * b[i + 7];
  }
  Scalar acc = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class Scalar>
inline Scalar dot_span(const Scalar* a, const Scalar* b, std::size_t n) {
  return fast_accumulation() ? dot_unrolled(a, b, n) : dot_strict(a, b, n);
}

template <class Scalar>
inline void axpy(Scalar* y, const Scalar* x, Scalar a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

/// Single-sample strided framing product:
///   out[o][j] = bias[o] + sum_i sum_t in[i][j*stride + t] * k[o][i][t]
/// `in` is already padded ([in_ch, padded_len]). The strict path keeps one
/// accumulation chain per output in (i, t) order; the fast path sums
/// per-channel unrolled dots instead.
template <class Scalar>
void conv_frames(const Scalar* in, std::size_t in_ch, std::size_t padded_len,
                 const Scalar* kernels, std::size_t out_ch, std::size_t m,
                 std::size_t stride, const Scalar* bias, Scalar* out,
                 std::size_t n_frames) {
  const bool fast = fast_accumulation();
  for (std::size_t o = 0; o < out_ch; ++o) {
    const Scalar* ko = kernels + o * in_ch * m;
    Scalar* row = out + o * n_frames;
    for (std::size_t j = 0; j < n_frames; ++j) {
      Scalar acc = bias ? bias[o] : Scalar(0);
      if (fast) {
        for (std::size_t i = 0; i < in_ch; ++i)
          acc += dot_unrolled(in + i * padded_len + j * stride, ko + i * m, m);
      } else {
        for (std::size_t i = 0; i < in_ch; ++i) {
          const Scalar* x = in + i * padded_len + j * stride;
          const Scalar* kk = ko + i * m;
          for (std::size_t t = 0; t < m; ++t) acc += x[t] * kk[t];
        }
      }
      row[j] = acc;
    }
  }
}

/// Transposed framing product (overlap-add scatter):
///   out[o][j*stride + t] += frames[i][j] * k[i][o][t]
/// `out` must be pre-filled (zeros or bias).
template <class Scalar>
void deconv_scatter(const Scalar* frames, std::size_t in_ch,
                    std::size_t n_frames, const Scalar* kernels,
                    std::size_t out_ch, std::size_t m, std::size_t stride,
                    Scalar* out, std::size_t out_len) {
  for (std::size_t i = 0; i < in_ch; ++i) {
    const Scalar* frow = frames + i * n_frames;
    for (std::size_t j = 0; j < n_frames; ++j) {
      const Scalar h = frow[j];
      if (h == Scalar(0)) continue;
      for (std::size_t o = 0; o < out_ch; ++o)
        axpy(out + o * out_len + j * stride, kernels + (i * out_ch + o) * m, h,
             m);
    }
  }
  (void)out_len;
}

}  // namespace detail

/// Strided cross-correlation of a multi-channel signal with a kernel bank.
/// Frame j covers padded samples [j*stride, j*stride + m); zeros are
/// prepended per geom.causal_left_pad, so no output frame reads past the end
/// of its own kernel span.
template <class Scalar>
Tensor<Scalar> conv1d(const Tensor<Scalar>& input,
                      const Tensor<Scalar>& kernels, const ConvGeometry& geom) {
  if (input.rank() != 2 || input.extent(0) != geom.in_channels)
    throw std::invalid_argument("conv1d: input must be [in_channels, T]");
  if (kernels.rank() != 3 || kernels.extent(0) != geom.out_channels ||
      kernels.extent(1) != geom.in_channels ||
      kernels.extent(2) != geom.kernel_size)
    throw std::invalid_argument("conv1d: kernel shape mismatch");
  const std::size_t T = input.extent(1);
  const std::size_t J = geom.out_frames(T);
  const std::size_t P = T + geom.causal_left_pad;

  Tensor<Scalar> padded{{geom.in_channels, P}};
  for (std::size_t i = 0; i < geom.in_channels; ++i)
    for (std::size_t t = 0; t < T; ++t)
      padded(i, geom.causal_left_pad + t) = input(i, t);

  Tensor<Scalar> out{{geom.out_channels, J}};
  detail::conv_frames(padded.data(), geom.in_channels, P, kernels.data(),
                      geom.out_channels, geom.kernel_size, geom.stride,
                      static_cast<const Scalar*>(nullptr), out.data(), J);
  return out;
}

/// Convolution with an effective kernel W(t)*k(t). The window is a constant
/// buffer: in training only k receives gradient.
template <class Scalar>
Tensor<Scalar> windowed_conv1d(const Tensor<Scalar>& input,
                               const Tensor<Scalar>& kernels,
                               const Tensor<Scalar>& window,
                               const ConvGeometry& geom) {
  if (window.size() != geom.kernel_size)
    throw std::invalid_argument("windowed_conv1d: window/kernel length mismatch");
  Tensor<Scalar> effective = kernels;
  const std::size_t m = geom.kernel_size;
  for (std::size_t oi = 0; oi < geom.out_channels * geom.in_channels; ++oi)
    for (std::size_t t = 0; t < m; ++t) effective[oi * m + t] *= window[t];
  return conv1d(input, effective, geom);
}

/// Transposed convolution / overlap-add: frame j scatters kernel-weighted
/// contributions onto samples [j*stride, j*stride + m). Adjoint of conv1d
/// for the same (unpadded) geometry.
template <class Scalar>
Tensor<Scalar> deconv1d(const Tensor<Scalar>& frames,
                        const Tensor<Scalar>& kernels,
                        const ConvGeometry& geom) {
  if (frames.rank() != 2 || frames.extent(0) != geom.in_channels)
    throw std::invalid_argument("deconv1d: input must be [in_channels, J]");
  if (kernels.rank() != 3 || kernels.extent(0) != geom.in_channels ||
      kernels.extent(1) != geom.out_channels ||
      kernels.extent(2) != geom.kernel_size)
    throw std::invalid_argument("deconv1d: kernel shape mismatch");
  const std::size_t J = frames.extent(1);
  const std::size_t T_rec = geom.reconstructed_length(J);
  Tensor<Scalar> out{{geom.out_channels, T_rec}};
  detail::deconv_scatter(frames.data(), geom.in_channels, J, kernels.data(),
                         geom.out_channels, geom.kernel_size, geom.stride,
                         out.data(), T_rec);
  return out;
}

/// Accumulated squared-window weight at each reconstructed sample,
/// env(p) = sum_j W^2(p - j*stride), clamped to [clamp_lo, clamp_hi].
/// Dividing a deconvolution output by this removes the windowing gain ripple.
template <class Scalar>
Tensor<Scalar> sum_square_envelope(const Tensor<Scalar>& window,
                                   std::size_t stride, std::size_t n_frames,
                                   Scalar clamp_lo, Scalar clamp_hi) {
  if (clamp_lo <= Scalar(0))
    throw std::invalid_argument("sum_square_envelope: clamp_lo must be > 0");
  const std::size_t m = window.size();
  const std::size_t T_rec = (n_frames - 1) * stride + m;
  Tensor<Scalar> env{{T_rec}};
  for (std::size_t j = 0; j < n_frames; ++j)
    for (std::size_t t = 0; t < m; ++t)
      env[j * stride + t] += window[t] * window[t];
  for (std::size_t p = 0; p < T_rec; ++p)
    env[p] = std::min(std::max(env[p], clamp_lo), clamp_hi);
  return env;
}

struct StftSpec {
  WindowSpec window;
  std::size_t fft_size = 0;  // == window.length
  std::size_t hop = 0;

  std::size_t n_bins() const { return fft_size / 2 + 1; }
};

inline StftSpec make_stft_spec(std::size_t window_len, std::size_t hop,
                               WindowKind kind = WindowKind::hann_periodic) {
  return StftSpec{WindowSpec{kind, window_len}, window_len, hop};
}

/// Fixed convolution kernels that imitate the STFT: row f holds the windowed
/// cosine atom for bin f, row n_bins + f the windowed negative-sine atom.
template <class Scalar>
struct StftBasis {
  StftSpec spec;
  Tensor<Scalar> kernels;  // [2*n_bins, 1, fft_size]

  std::size_t n_bins() const { return spec.n_bins(); }
};

template <class Scalar>
StftBasis<Scalar> make_stft_basis(const StftSpec& spec) {
  if (spec.fft_size != spec.window.length)
    throw std::invalid_argument("stft: fft_size must equal window length");
  if (spec.hop == 0) throw std::invalid_argument("stft: hop must be > 0");
  const std::size_t N = spec.fft_size;
  const std::size_t B = spec.n_bins();
  Tensor<double> w = make_window<double>(spec.window);
  Tensor<Scalar> k{{2 * B, 1, N}};
  for (std::size_t f = 0; f < B; ++f) {
    for (std::size_t t = 0; t < N; ++t) {
      const double phase = 2.0 * M_PI * static_cast<double>(f) *
                           static_cast<double>(t) / static_cast<double>(N);
      k(f, 0, t) = static_cast<Scalar>(w[t] * std::cos(phase));
      k(B + f, 0, t) = static_cast<Scalar>(-w[t] * std::sin(phase));
    }
  }
  return StftBasis<Scalar>{spec, std::move(k)};
}

/// Real/imag parts of the STFT of a mono signal, via the fixed kernel bank.
/// Returns [n_bins, J] pairs through the out-parameters.
template <class Scalar>
void stft_reim(const Tensor<Scalar>& signal, const StftBasis<Scalar>& basis,
               Tensor<Scalar>& re, Tensor<Scalar>& im) {
  if (signal.rank() != 1)
    throw std::invalid_argument("stft: signal must be rank 1");
  const std::size_t T = signal.size();
  const std::size_t N = basis.spec.fft_size;
  if (T < N) throw std::invalid_argument("stft: signal shorter than window");
  const std::size_t J = (T - N) / basis.spec.hop + 1;
  const std::size_t B = basis.n_bins();
  Tensor<Scalar> both{{2 * B, J}};
  detail::conv_frames(signal.data(), std::size_t{1}, T, basis.kernels.data(),
                      2 * B, N, basis.spec.hop,
                      static_cast<const Scalar*>(nullptr), both.data(), J);
  re = Tensor<Scalar>{{B, J}};
  im = Tensor<Scalar>{{B, J}};
  for (std::size_t f = 0; f < B; ++f)
    for (std::size_t j = 0; j < J; ++j) {
      re(f, j) = both(f, j);
      im(f, j) = both(B + f, j);
    }
}

template <class Scalar>
Tensor<Scalar> stft_magnitude(const Tensor<Scalar>& signal,
                              const StftBasis<Scalar>& basis) {
  Tensor<Scalar> re, im;
  stft_reim(signal, basis, re, im);
  Tensor<Scalar> mag{re.shape()};
  for (std::size_t i = 0; i < mag.size(); ++i)
    mag[i] = std::sqrt(re[i] * re[i] + im[i] * im[i]);
  return mag;
}

template <class Scalar>
Tensor<Scalar> stft_magnitude(const Tensor<Scalar>& signal,
                              const StftSpec& spec) {
  return stft_magnitude(signal, make_stft_basis<Scalar>(spec));
}

}  // namespace tcrn
