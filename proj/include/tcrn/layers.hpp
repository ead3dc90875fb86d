#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcrn/dsp.hpp"
#include "tcrn/rng.hpp"
#include "tcrn/tensor.hpp"

namespace tcrn {

/// Named handle onto one trainable array and its gradient slot.
template <class Scalar>
struct ParamRef {
  std::string name;
  Tensor<Scalar>* value;
  Tensor<Scalar>* grad;
};

/// Named handle onto non-trainable layer state (running statistics).
template <class Scalar>
struct StateRef {
  std::string name;
  Tensor<Scalar>* value;
};

namespace detail {

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <class Scalar>
inline Scalar sigmoid(Scalar z) {
  return Scalar(1) / (Scalar(1) + std::exp(-z));
}

}  // namespace detail

/// Kernel-windowed 1-D convolution with bias. The window is a fixed buffer:
/// gradient reaches the kernels and bias only.
template <class Scalar>
class ConvLayer {
 public:
  ConvLayer(ConvGeometry geom, WindowSpec window_spec)
      : geom_(geom),
        window_(make_window<Scalar>(window_spec)),
        kernels_{{geom.out_channels, geom.in_channels, geom.kernel_size}},
        bias_{{geom.out_channels}},
        kernels_grad_{kernels_.shape()},
        bias_grad_{bias_.shape()} {
    detail::require(window_spec.length == geom.kernel_size,
                    "ConvLayer: window length must equal kernel size");
    detail::require(geom.stride >= 1 && geom.kernel_size >= geom.stride,
                    "ConvLayer: need stride >= 1 and kernel_size >= stride");
  }

  void init_params(Rng& rng) {
    const double bound =
        1.0 / std::sqrt(double(geom_.in_channels * geom_.kernel_size));
    kernels_.fill_uniform(rng, Scalar(-bound), Scalar(bound));
    bias_.fill(Scalar(0));
  }

  const ConvGeometry& geometry() const { return geom_; }
  const Tensor<Scalar>& window() const { return window_; }

  // x: [B, in_ch, T] -> [B, out_ch, J]
  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    detail::require(x.rank() == 3 && x.extent(1) == geom_.in_channels,
                    "ConvLayer: input must be [B, in_channels, T]");
    const std::size_t B = x.extent(0), T = x.extent(2);
    const std::size_t J = geom_.out_frames(T);
    const std::size_t P = T + geom_.causal_left_pad;

    padded_ = Tensor<Scalar>{{B, geom_.in_channels, P}};
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < geom_.in_channels; ++i)
        for (std::size_t t = 0; t < T; ++t)
          padded_(b, i, geom_.causal_left_pad + t) = x(b, i, t);
    input_length_ = T;
    has_cache_ = true;

    Tensor<Scalar> effective = effective_kernels();
    Tensor<Scalar> out{{B, geom_.out_channels, J}};
    for (std::size_t b = 0; b < B; ++b)
      detail::conv_frames(padded_.data() + b * geom_.in_channels * P,
                          geom_.in_channels, P, effective.data(),
                          geom_.out_channels, geom_.kernel_size, geom_.stride,
                          bias_.data(), out.data() + b * geom_.out_channels * J,
                          J);
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    if (!has_cache_)
      throw std::runtime_error("ConvLayer: backward without cached forward");
    const std::size_t B = padded_.extent(0);
    const std::size_t P = padded_.extent(2);
    const std::size_t m = geom_.kernel_size;
    const std::size_t J = grad_out.extent(2);
    detail::require(grad_out.rank() == 3 && grad_out.extent(0) == B &&
                        grad_out.extent(1) == geom_.out_channels,
                    "ConvLayer: grad_out shape mismatch");

    Tensor<Scalar> effective = effective_kernels();
    Tensor<Scalar> eff_grad{kernels_.shape()};
    Tensor<Scalar> grad_padded{padded_.shape()};
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < geom_.out_channels; ++o) {
        const Scalar* gy = grad_out.data() + (b * geom_.out_channels + o) * J;
        for (std::size_t j = 0; j < J; ++j) {
          const Scalar g = gy[j];
          if (g == Scalar(0)) continue;
          for (std::size_t i = 0; i < geom_.in_channels; ++i) {
            const std::size_t off = i * P + j * geom_.stride;
            detail::axpy(eff_grad.data() + (o * geom_.in_channels + i) * m,
                         padded_.data() + b * geom_.in_channels * P + off, g,
                         m);
            detail::axpy(grad_padded.data() + b * geom_.in_channels * P + off,
                         effective.data() + (o * geom_.in_channels + i) * m, g,
                         m);
          }
          bias_grad_[o] += g;
        }
      }
    // Chain through the constant window onto the raw kernels.
    for (std::size_t oi = 0; oi < geom_.out_channels * geom_.in_channels; ++oi)
      for (std::size_t t = 0; t < m; ++t)
        kernels_grad_[oi * m + t] += eff_grad[oi * m + t] * window_[t];

    Tensor<Scalar> grad_in{{B, geom_.in_channels, input_length_}};
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < geom_.in_channels; ++i)
        for (std::size_t t = 0; t < input_length_; ++t)
          grad_in(b, i, t) =
              grad_padded(b, i, geom_.causal_left_pad + t);
    return grad_in;
  }

  std::vector<ParamRef<Scalar>> params() {
    return {{"kernels", &kernels_, &kernels_grad_},
            {"bias", &bias_, &bias_grad_}};
  }
  std::vector<StateRef<Scalar>> state_arrays() { return {}; }

  void zero_grads() {
    kernels_grad_.fill(Scalar(0));
    bias_grad_.fill(Scalar(0));
  }

  Tensor<Scalar>& kernels() { return kernels_; }
  Tensor<Scalar>& bias() { return bias_; }

 private:
  Tensor<Scalar> effective_kernels() const {
    Tensor<Scalar> eff = kernels_;
    const std::size_t m = geom_.kernel_size;
    for (std::size_t oi = 0; oi < geom_.out_channels * geom_.in_channels; ++oi)
      for (std::size_t t = 0; t < m; ++t) eff[oi * m + t] *= window_[t];
    return eff;
  }

  ConvGeometry geom_;
  Tensor<Scalar> window_;
  Tensor<Scalar> kernels_, bias_, kernels_grad_, bias_grad_;
  Tensor<Scalar> padded_;
  std::size_t input_length_ = 0;
  bool has_cache_ = false;
};

enum class LayerMode { train, eval };

/// Per-channel standardization over (batch, frames) with learned affine and
/// running statistics for eval mode.
template <class Scalar>
class BatchNormLayer {
 public:
  explicit BatchNormLayer(std::size_t channels, double eps = 1e-5,
                          double momentum = 0.1)
      : channels_(channels),
        eps_(eps),
        momentum_(momentum),
        gamma_{{channels}},
        beta_{{channels}},
        running_mean_{{channels}},
        running_var_{{channels}},
        gamma_grad_{{channels}},
        beta_grad_{{channels}} {
    gamma_.fill(Scalar(1));
    running_var_.fill(Scalar(1));
  }

  void set_mode(LayerMode mode) { mode_ = mode; }
  LayerMode mode() const { return mode_; }

  // x: [B, C, J]
  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    detail::require(x.rank() == 3 && x.extent(1) == channels_,
                    "BatchNormLayer: input must be [B, C, J]");
    const std::size_t B = x.extent(0), J = x.extent(2);
    Tensor<Scalar> out{x.shape()};
    if (mode_ == LayerMode::train) {
      if (B < 2)
        throw std::invalid_argument(
            "BatchNormLayer: train mode needs batch size >= 2");
      const double n = double(B * J);
      xhat_ = Tensor<Scalar>{x.shape()};
      inv_std_ = Tensor<Scalar>{{channels_}};
      for (std::size_t c = 0; c < channels_; ++c) {
        double mean = 0.0;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t j = 0; j < J; ++j) mean += double(x(b, c, j));
        mean /= n;
        double var = 0.0;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t j = 0; j < J; ++j) {
            const double d = double(x(b, c, j)) - mean;
            var += d * d;
          }
        var /= n;
        const double istd = 1.0 / std::sqrt(var + eps_);
        inv_std_[c] = Scalar(istd);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t j = 0; j < J; ++j) {
            const Scalar xh = Scalar((double(x(b, c, j)) - mean) * istd);
            xhat_(b, c, j) = xh;
            out(b, c, j) = gamma_[c] * xh + beta_[c];
          }
        const double unbiased = var * n / (n - 1.0);
        running_mean_[c] =
            Scalar((1.0 - momentum_) * double(running_mean_[c]) +
                   momentum_ * mean);
        running_var_[c] = Scalar((1.0 - momentum_) * double(running_var_[c]) +
                                 momentum_ * unbiased);
      }
      has_cache_ = true;
    } else {
      for (std::size_t c = 0; c < channels_; ++c) {
        const Scalar istd =
            Scalar(1.0 / std::sqrt(double(running_var_[c]) + eps_));
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t j = 0; j < J; ++j)
            out(b, c, j) =
                gamma_[c] * (x(b, c, j) - running_mean_[c]) * istd + beta_[c];
      }
      has_cache_ = false;
    }
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    if (mode_ != LayerMode::train || !has_cache_)
      throw std::runtime_error("BatchNormLayer: backward without train forward");
    const std::size_t B = grad_out.extent(0), J = grad_out.extent(2);
    detail::require(grad_out.same_shape(xhat_),
                    "BatchNormLayer: grad_out shape mismatch");
    const double n = double(B * J);
    Tensor<Scalar> grad_in{grad_out.shape()};
    for (std::size_t c = 0; c < channels_; ++c) {
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0, sum_gy = 0.0,
             sum_gy_xhat = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < J; ++j) {
          const double gy = double(grad_out(b, c, j));
          const double xh = double(xhat_(b, c, j));
          const double dxh = gy * double(gamma_[c]);
          sum_gy += gy;
          sum_gy_xhat += gy * xh;
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * xh;
        }
      beta_grad_[c] += Scalar(sum_gy);
      gamma_grad_[c] += Scalar(sum_gy_xhat);
      const double istd = double(inv_std_[c]);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < J; ++j) {
          const double dxh = double(grad_out(b, c, j)) * double(gamma_[c]);
          const double xh = double(xhat_(b, c, j));
          grad_in(b, c, j) = Scalar(
              istd * (dxh - sum_dxhat / n - xh * sum_dxhat_xhat / n));
        }
    }
    return grad_in;
  }

  std::vector<ParamRef<Scalar>> params() {
    return {{"gamma", &gamma_, &gamma_grad_}, {"beta", &beta_, &beta_grad_}};
  }
  std::vector<StateRef<Scalar>> state_arrays() {
    return {{"running_mean", &running_mean_},
            {"running_var", &running_var_}};
  }

  void zero_grads() {
    gamma_grad_.fill(Scalar(0));
    beta_grad_.fill(Scalar(0));
  }

  Tensor<Scalar>& gamma() { return gamma_; }
  Tensor<Scalar>& beta() { return beta_; }
  Tensor<Scalar>& running_mean() { return running_mean_; }
  Tensor<Scalar>& running_var() { return running_var_; }

 private:
  std::size_t channels_;
  double eps_, momentum_;
  LayerMode mode_ = LayerMode::train;
  Tensor<Scalar> gamma_, beta_, running_mean_, running_var_;
  Tensor<Scalar> gamma_grad_, beta_grad_;
  Tensor<Scalar> xhat_, inv_std_;
  bool has_cache_ = false;
};

/// Leaky map with one learned slope per channel.
template <class Scalar>
class PReLULayer {
 public:
  explicit PReLULayer(std::size_t channels, Scalar init_alpha = Scalar(0.25))
      : channels_(channels), alpha_{{channels}}, alpha_grad_{{channels}} {
    alpha_.fill(init_alpha);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    detail::require(x.rank() == 3 && x.extent(1) == channels_,
                    "PReLULayer: input must be [B, C, J]");
    input_ = x;
    has_cache_ = true;
    Tensor<Scalar> out{x.shape()};
    const std::size_t B = x.extent(0), J = x.extent(2);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < channels_; ++c)
        for (std::size_t j = 0; j < J; ++j) {
          const Scalar v = x(b, c, j);
          out(b, c, j) = v >= Scalar(0) ? v : alpha_[c] * v;
        }
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    if (!has_cache_)
      throw std::runtime_error("PReLULayer: backward without cached forward");
    detail::require(grad_out.same_shape(input_),
                    "PReLULayer: grad_out shape mismatch");
    Tensor<Scalar> grad_in{grad_out.shape()};
    const std::size_t B = grad_out.extent(0), J = grad_out.extent(2);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < channels_; ++c)
        for (std::size_t j = 0; j < J; ++j) {
          const Scalar v = input_(b, c, j);
          const Scalar gy = grad_out(b, c, j);
          if (v >= Scalar(0)) {
            grad_in(b, c, j) = gy;
          } else {
            grad_in(b, c, j) = gy * alpha_[c];
            alpha_grad_[c] += gy * v;
          }
        }
    return grad_in;
  }

  std::vector<ParamRef<Scalar>> params() {
    return {{"alpha", &alpha_, &alpha_grad_}};
  }
  std::vector<StateRef<Scalar>> state_arrays() { return {}; }
  void zero_grads() { alpha_grad_.fill(Scalar(0)); }

  Tensor<Scalar>& alpha() { return alpha_; }

 private:
  std::size_t channels_;
  Tensor<Scalar> alpha_, alpha_grad_;
  Tensor<Scalar> input_;
  bool has_cache_ = false;
};

/// Unidirectional single-layer LSTM over the frame axis. State persists
/// across forward calls until reset_state(), so independent utterances must
/// be separated by a reset.
template <class Scalar>
class LstmLayer {
 public:
  LstmLayer(std::size_t input_size, std::size_t hidden)
      : in_(input_size), hidden_(hidden) {
    for (int g = 0; g < 4; ++g) {
      w_[g] = Tensor<Scalar>{{hidden, input_size}};
      u_[g] = Tensor<Scalar>{{hidden, hidden}};
      b_[g] = Tensor<Scalar>{{hidden}};
      w_grad_[g] = Tensor<Scalar>{w_[g].shape()};
      u_grad_[g] = Tensor<Scalar>{u_[g].shape()};
      b_grad_[g] = Tensor<Scalar>{b_[g].shape()};
    }
  }

  void init_params(Rng& rng) {
    const double bound = 1.0 / std::sqrt(double(hidden_));
    for (int g = 0; g < 4; ++g) {
      w_[g].fill_uniform(rng, Scalar(-bound), Scalar(bound));
      u_[g].fill_uniform(rng, Scalar(-bound), Scalar(bound));
      b_[g].fill(Scalar(0));
    }
    b_[kForget].fill(Scalar(1));  // open forget gates at the start
  }

  void reset_state() { has_state_ = false; }

  // x: [B, C, J] -> [B, H, J]
  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    detail::require(x.rank() == 3 && x.extent(1) == in_,
                    "LstmLayer: input must be [B, C, J]");
    const std::size_t B = x.extent(0), J = x.extent(2);
    if (has_state_ && state_h_.extent(0) != B)
      throw std::runtime_error(
          "LstmLayer: batch size changed without reset_state");
    if (!has_state_) {
      state_h_ = Tensor<Scalar>{{B, hidden_}};
      state_c_ = Tensor<Scalar>{{B, hidden_}};
      has_state_ = true;
    }
    h0_ = state_h_;
    c0_ = state_c_;

    // [B, J, C] layout keeps per-step vectors contiguous.
    xt_ = Tensor<Scalar>{{B, J, in_}};
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < in_; ++c)
        for (std::size_t j = 0; j < J; ++j) xt_(b, j, c) = x(b, c, j);

    for (int g = 0; g < 4; ++g) gates_[g] = Tensor<Scalar>{{B, J, hidden_}};
    cell_ = Tensor<Scalar>{{B, J, hidden_}};
    tanh_cell_ = Tensor<Scalar>{{B, J, hidden_}};
    hidden_seq_ = Tensor<Scalar>{{B, J, hidden_}};

    Tensor<Scalar> out{{B, hidden_, J}};
    std::vector<Scalar> z(4 * hidden_);
    for (std::size_t b = 0; b < B; ++b) {
      Scalar* h_prev = state_h_.data() + b * hidden_;
      Scalar* c_prev = state_c_.data() + b * hidden_;
      for (std::size_t j = 0; j < J; ++j) {
        const Scalar* xv = xt_.data() + (b * J + j) * in_;
        for (int g = 0; g < 4; ++g)
          for (std::size_t h = 0; h < hidden_; ++h)
            z[g * hidden_ + h] =
                b_[g][h] +
                detail::dot_span(w_[g].data() + h * in_, xv, in_) +
                detail::dot_span(u_[g].data() + h * hidden_, h_prev, hidden_);
        for (std::size_t h = 0; h < hidden_; ++h) {
          const Scalar ig = detail::sigmoid(z[kInput * hidden_ + h]);
          const Scalar fg = detail::sigmoid(z[kForget * hidden_ + h]);
          const Scalar gg = std::tanh(z[kCell * hidden_ + h]);
          const Scalar og = detail::sigmoid(z[kOutput * hidden_ + h]);
          const Scalar c = fg * c_prev[h] + ig * gg;
          const Scalar tc = std::tanh(c);
          const Scalar hv = og * tc;
          const std::size_t at = (b * J + j) * hidden_ + h;
          gates_[kInput][at] = ig;
          gates_[kForget][at] = fg;
          gates_[kCell][at] = gg;
          gates_[kOutput][at] = og;
          cell_[at] = c;
          tanh_cell_[at] = tc;
          hidden_seq_[at] = hv;
          c_prev[h] = c;
          h_prev[h] = hv;
          out(b, h, j) = hv;
        }
      }
    }
    has_cache_ = true;
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    if (!has_cache_)
      throw std::runtime_error("LstmLayer: backward without cached forward");
    const std::size_t B = xt_.extent(0), J = xt_.extent(1);
    detail::require(grad_out.rank() == 3 && grad_out.extent(0) == B &&
                        grad_out.extent(1) == hidden_ &&
                        grad_out.extent(2) == J,
                    "LstmLayer: grad_out shape mismatch");
    Tensor<Scalar> grad_in{{B, in_, J}};
    std::vector<Scalar> dh(hidden_), dc(hidden_), dz(4 * hidden_),
        dx(in_), dh_prev(hidden_);
    for (std::size_t b = 0; b < B; ++b) {
      std::fill(dh.begin(), dh.end(), Scalar(0));
      std::fill(dc.begin(), dc.end(), Scalar(0));
      for (std::size_t jj = J; jj-- > 0;) {
        const std::size_t at = (b * J + jj) * hidden_;
        const Scalar* c_prev =
            jj == 0 ? c0_.data() + b * hidden_ : cell_.data() + at - hidden_;
        const Scalar* h_prev = jj == 0 ? h0_.data() + b * hidden_
                                       : hidden_seq_.data() + at - hidden_;
        for (std::size_t h = 0; h < hidden_; ++h) {
          const Scalar gy = grad_out(b, h, jj) + dh[h];
          const Scalar ig = gates_[kInput][at + h];
          const Scalar fg = gates_[kForget][at + h];
          const Scalar gg = gates_[kCell][at + h];
          const Scalar og = gates_[kOutput][at + h];
          const Scalar tc = tanh_cell_[at + h];
          const Scalar dcv =
              gy * og * (Scalar(1) - tc * tc) + dc[h];
          dz[kOutput * hidden_ + h] = gy * tc * og * (Scalar(1) - og);
          dz[kInput * hidden_ + h] = dcv * gg * ig * (Scalar(1) - ig);
          dz[kForget * hidden_ + h] = dcv * c_prev[h] * fg * (Scalar(1) - fg);
          dz[kCell * hidden_ + h] = dcv * ig * (Scalar(1) - gg * gg);
          dc[h] = dcv * fg;
        }
        const Scalar* xv = xt_.data() + (b * J + jj) * in_;
        std::fill(dx.begin(), dx.end(), Scalar(0));
        std::fill(dh_prev.begin(), dh_prev.end(), Scalar(0));
        for (int g = 0; g < 4; ++g)
          for (std::size_t h = 0; h < hidden_; ++h) {
            const Scalar d = dz[g * hidden_ + h];
            if (d == Scalar(0)) continue;
            detail::axpy(w_grad_[g].data() + h * in_, xv, d, in_);
            detail::axpy(u_grad_[g].data() + h * hidden_, h_prev, d, hidden_);
            b_grad_[g][h] += d;
            detail::axpy(dx.data(), w_[g].data() + h * in_, d, in_);
            detail::axpy(dh_prev.data(), u_[g].data() + h * hidden_, d,
                         hidden_);
          }
        for (std::size_t c = 0; c < in_; ++c) grad_in(b, c, jj) = dx[c];
        std::copy(dh_prev.begin(), dh_prev.end(), dh.begin());
      }
    }
    return grad_in;
  }

  std::vector<ParamRef<Scalar>> params() {
    std::vector<ParamRef<Scalar>> out;
    static const char* gate_names[4] = {"i", "f", "g", "o"};
    for (int g = 0; g < 4; ++g) {
      out.push_back({std::string("w_") + gate_names[g], &w_[g], &w_grad_[g]});
      out.push_back({std::string("u_") + gate_names[g], &u_[g], &u_grad_[g]});
      out.push_back({std::string("b_") + gate_names[g], &b_[g], &b_grad_[g]});
    }
    return out;
  }
  std::vector<StateRef<Scalar>> state_arrays() { return {}; }

  void zero_grads() {
    for (int g = 0; g < 4; ++g) {
      w_grad_[g].fill(Scalar(0));
      u_grad_[g].fill(Scalar(0));
      b_grad_[g].fill(Scalar(0));
    }
  }

  std::size_t hidden_size() const { return hidden_; }

 private:
  static constexpr int kInput = 0, kForget = 1, kCell = 2, kOutput = 3;

  std::size_t in_, hidden_;
  Tensor<Scalar> w_[4], u_[4], b_[4];
  Tensor<Scalar> w_grad_[4], u_grad_[4], b_grad_[4];
  Tensor<Scalar> state_h_, state_c_, h0_, c0_;
  Tensor<Scalar> xt_, gates_[4], cell_, tanh_cell_, hidden_seq_;
  bool has_state_ = false;
  bool has_cache_ = false;
};

/// Kernel-windowed transposed convolution with bias; optionally divides the
/// output by the window sum-square envelope (clamped to [0.1, 1]) to remove
/// windowing gain from the resynthesized waveform.
template <class Scalar>
class DeconvLayer {
 public:
  DeconvLayer(ConvGeometry geom, WindowSpec window_spec,
              bool envelope_normalize)
      : geom_(geom),
        envelope_normalize_(envelope_normalize),
        window_(make_window<Scalar>(window_spec)),
        kernels_{{geom.in_channels, geom.out_channels, geom.kernel_size}},
        bias_{{geom.out_channels}},
        kernels_grad_{kernels_.shape()},
        bias_grad_{bias_.shape()} {
    detail::require(window_spec.length == geom.kernel_size,
                    "DeconvLayer: window length must equal kernel size");
  }

  void init_params(Rng& rng) {
    const double bound =
        1.0 / std::sqrt(double(geom_.in_channels * geom_.kernel_size));
    kernels_.fill_uniform(rng, Scalar(-bound), Scalar(bound));
    bias_.fill(Scalar(0));
  }

  const ConvGeometry& geometry() const { return geom_; }
  const Tensor<Scalar>& window() const { return window_; }

  // frames: [B, in_ch, J] -> [B, out_ch, (J-1)*stride + m]
  Tensor<Scalar> forward(const Tensor<Scalar>& frames) {
    detail::require(frames.rank() == 3 && frames.extent(1) == geom_.in_channels,
                    "DeconvLayer: input must be [B, in_channels, J]");
    const std::size_t B = frames.extent(0), J = frames.extent(2);
    const std::size_t T_rec = geom_.reconstructed_length(J);
    input_ = frames;
    has_cache_ = true;

    if (envelope_normalize_)
      envelope_ = sum_square_envelope(window_, geom_.stride, J, Scalar(0.1),
                                      Scalar(1.0));

    Tensor<Scalar> effective = effective_kernels();
    Tensor<Scalar> out{{B, geom_.out_channels, T_rec}};
    for (std::size_t b = 0; b < B; ++b) {
      Scalar* ob = out.data() + b * geom_.out_channels * T_rec;
      for (std::size_t o = 0; o < geom_.out_channels; ++o)
        for (std::size_t p = 0; p < T_rec; ++p) ob[o * T_rec + p] = bias_[o];
      detail::deconv_scatter(frames.data() + b * geom_.in_channels * J,
                             geom_.in_channels, J, effective.data(),
                             geom_.out_channels, geom_.kernel_size,
                             geom_.stride, ob, T_rec);
      if (envelope_normalize_)
        for (std::size_t o = 0; o < geom_.out_channels; ++o)
          for (std::size_t p = 0; p < T_rec; ++p)
            ob[o * T_rec + p] /= envelope_[p];
    }
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    if (!has_cache_)
      throw std::runtime_error("DeconvLayer: backward without cached forward");
    const std::size_t B = input_.extent(0), J = input_.extent(2);
    const std::size_t T_rec = geom_.reconstructed_length(J);
    const std::size_t m = geom_.kernel_size;
    detail::require(grad_out.rank() == 3 && grad_out.extent(0) == B &&
                        grad_out.extent(1) == geom_.out_channels &&
                        grad_out.extent(2) == T_rec,
                    "DeconvLayer: grad_out shape mismatch");

    Tensor<Scalar> dz = grad_out;
    if (envelope_normalize_)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < geom_.out_channels; ++o)
          for (std::size_t p = 0; p < T_rec; ++p)
            dz(b, o, p) /= envelope_[p];

    Tensor<Scalar> effective = effective_kernels();
    Tensor<Scalar> eff_grad{kernels_.shape()};
    Tensor<Scalar> grad_in{{B, geom_.in_channels, J}};
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t o = 0; o < geom_.out_channels; ++o)
        for (std::size_t p = 0; p < T_rec; ++p) bias_grad_[o] += dz(b, o, p);
      for (std::size_t i = 0; i < geom_.in_channels; ++i)
        for (std::size_t j = 0; j < J; ++j) {
          const Scalar hv = input_(b, i, j);
          Scalar acc = 0;
          for (std::size_t o = 0; o < geom_.out_channels; ++o) {
            const Scalar* dzp =
                dz.data() + (b * geom_.out_channels + o) * T_rec +
                j * geom_.stride;
            detail::axpy(eff_grad.data() + (i * geom_.out_channels + o) * m,
                         dzp, hv, m);
            acc += detail::dot_span(
                dzp, effective.data() + (i * geom_.out_channels + o) * m, m);
          }
          grad_in(b, i, j) = acc;
        }
    }
    for (std::size_t io = 0; io < geom_.in_channels * geom_.out_channels; ++io)
      for (std::size_t t = 0; t < m; ++t)
        kernels_grad_[io * m + t] += eff_grad[io * m + t] * window_[t];
    return grad_in;
  }

  std::vector<ParamRef<Scalar>> params() {
    return {{"kernels", &kernels_, &kernels_grad_},
            {"bias", &bias_, &bias_grad_}};
  }
  std::vector<StateRef<Scalar>> state_arrays() { return {}; }

  void zero_grads() {
    kernels_grad_.fill(Scalar(0));
    bias_grad_.fill(Scalar(0));
  }

  Tensor<Scalar>& kernels() { return kernels_; }
  Tensor<Scalar>& bias() { return bias_; }

 private:
  Tensor<Scalar> effective_kernels() const {
    Tensor<Scalar> eff = kernels_;
    const std::size_t m = geom_.kernel_size;
    for (std::size_t io = 0; io < geom_.in_channels * geom_.out_channels; ++io)
      for (std::size_t t = 0; t < m; ++t) eff[io * m + t] *= window_[t];
    return eff;
  }

  ConvGeometry geom_;
  bool envelope_normalize_;
  Tensor<Scalar> window_, envelope_;
  Tensor<Scalar> kernels_, bias_, kernels_grad_, bias_grad_;
  Tensor<Scalar> input_;
  bool has_cache_ = false;
};

}  // namespace tcrn
