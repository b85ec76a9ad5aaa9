#pragma once

// A small pre-norm transformer used as a deterministic, inspectable stand-in
// for a causal language model. Parameters live in one flat double buffer; the
// named tensors below index into it in a fixed order, which is also the init
// order and the checkpoint order:
//
//   token_embedding      [vocab_size x dim]
//   position_embedding   [max_seq_len x dim]
//   per layer l:
//     ln1.gain, ln1.bias                [dim]
//     attn.wq, attn.wk, attn.wv, attn.wo [dim x dim], each followed by its bias [dim]
//     ln2.gain, ln2.bias                [dim]
//     mlp.w1 [dim x 4dim], mlp.b1 [4dim], mlp.w2 [4dim x dim], mlp.b2 [dim]
//   final_ln.gain, final_ln.bias        [dim]
//
// Weights are stored input-major: y[j] = b[j] + sum_i x[i] * W[i * cols + j].

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "echoembed/backend.hpp"
#include "echoembed/error.hpp"
#include "echoembed/random.hpp"

namespace echoembed {

struct ToyModelConfig {
  std::size_t vocab_size = 1024;
  std::size_t dim = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t max_seq_len = 128;
  std::uint64_t seed = 0;
  AttentionMode attention = AttentionMode::causal;
  double init_std = 0.02;

  std::size_t head_dim() const noexcept { return dim / n_heads; }
  std::size_t mlp_dim() const noexcept { return 4 * dim; }

  void validate() const {
    if (vocab_size < 2 || dim < 1 || n_layers < 1 || n_heads < 1 || max_seq_len < 1) {
      throw Error(Errc::invalid_config, "toy model dimensions must be >= 1 (vocab >= 2)");
    }
    if (dim % n_heads != 0) {
      throw Error(Errc::invalid_config,
                  "dim " + std::to_string(dim) + " is not divisible by n_heads " + std::to_string(n_heads));
    }
    if (!(init_std > 0.0) || !std::isfinite(init_std)) throw Error(Errc::invalid_config, "init_std must be > 0");
  }

  friend bool operator==(const ToyModelConfig&, const ToyModelConfig&) = default;
};

struct TensorSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
};

namespace detail {

struct LayerSlots {
  std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

constexpr double kLayerNormEps = 1e-5;

inline double gelu(double x) noexcept { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_grad(double x) noexcept {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

// out[T x n] = in[T x m] * W[m x n] + b
inline void linear(const double* in, std::size_t rows, std::size_t m, const double* w, const double* b,
                   std::size_t n, double* out) {
  for (std::size_t t = 0; t < rows; ++t) {
    double* o = out + t * n;
    std::copy(b, b + n, o);
    const double* x = in + t * m;
    for (std::size_t i = 0; i < m; ++i) {
      const double a = x[i];
      const double* wr = w + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += a * wr[j];
    }
  }
}

// Accumulates dW, db and (if d_in is non-null) overwrites d_in.
inline void linear_backward(const double* in, std::size_t rows, std::size_t m, const double* w, std::size_t n,
                            const double* d_out, double* d_in, double* dw, double* db) {
  for (std::size_t t = 0; t < rows; ++t) {
    const double* g = d_out + t * n;
    const double* x = in + t * m;
    for (std::size_t j = 0; j < n; ++j) db[j] += g[j];
    for (std::size_t i = 0; i < m; ++i) {
      const double a = x[i];
      double* dwr = dw + i * n;
      const double* wr = w + i * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        dwr[j] += a * g[j];
        acc += wr[j] * g[j];
      }
      if (d_in) d_in[t * m + i] = acc;
    }
  }
}

inline void layer_norm(const double* x, std::size_t rows, std::size_t d, const double* gain, const double* bias,
                       double* out, double* xhat, double* inv_std) {
  for (std::size_t t = 0; t < rows; ++t) {
    const double* xr = x + t * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[t] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (xr[i] - mean) * inv;
      xhat[t * d + i] = h;
      out[t * d + i] = gain[i] * h + bias[i];
    }
  }
}

// Adds the input gradient into d_x.
inline void layer_norm_backward(const double* xhat, const double* inv_std, std::size_t rows, std::size_t d,
                                const double* gain, const double* d_out, double* d_x, double* d_gain,
                                double* d_bias) {
  std::vector<double> dxhat(d);
  for (std::size_t t = 0; t < rows; ++t) {
    const double* g = d_out + t * d;
    const double* h = xhat + t * d;
    double sum = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      d_gain[i] += g[i] * h[i];
      d_bias[i] += g[i];
      dxhat[i] = g[i] * gain[i];
      sum += dxhat[i];
      dot += dxhat[i] * h[i];
    }
    const double scale = inv_std[t] / static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) {
      d_x[t * d + i] += scale * (static_cast<double>(d) * dxhat[i] - sum - h[i] * dot);
    }
  }
}

}  // namespace detail

/// Intermediate activations kept by a taped forward pass.
struct ForwardTape {
  struct Layer {
    std::vector<double> ln1_xhat, ln1_inv, h1, q, k, v, probs, attn, ln2_xhat, ln2_inv, h2, pre_act, act;
  };
  std::vector<std::uint32_t> token_ids;
  AttentionMode attention = AttentionMode::causal;
  std::vector<Layer> layers;
  std::vector<double> final_xhat, final_inv;
};

class ToyModel {
 public:
  static ToyModel init(const ToyModelConfig& config) {
    config.validate();
    ToyModel model(config);
    Xoshiro256ss rng(config.seed);
    for (auto& p : model.params_) p = config.init_std * rng.normal();
    return model;
  }

  /// Rebuilds a model from an explicit parameter buffer (checkpoints).
  static ToyModel from_parameters(const ToyModelConfig& config, std::vector<double> params) {
    config.validate();
    ToyModel model(config);
    if (params.size() != model.params_.size()) {
      throw Error(Errc::dimension_mismatch, "expected " + std::to_string(model.params_.size()) +
                                                " parameters, got " + std::to_string(params.size()));
    }
    model.params_ = std::move(params);
    return model;
  }

  const ToyModelConfig& config() const noexcept { return config_; }
  const std::vector<TensorSlot>& tensors() const noexcept { return slots_; }
  std::span<const double> parameters() const noexcept { return params_; }
  std::span<double> parameters() noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  HiddenStates forward(std::span<const std::uint32_t> ids) const { return forward(ids, config_.attention); }

  HiddenStates forward(std::span<const std::uint32_t> ids, AttentionMode mode, ForwardTape* tape = nullptr) const {
    const std::size_t T = ids.size();
    const std::size_t d = config_.dim;
    if (T > config_.max_seq_len) {
      throw Error(Errc::sequence_too_long, std::to_string(T) + " tokens exceed max_seq_len " +
                                               std::to_string(config_.max_seq_len));
    }
    for (auto id : ids) {
      if (id >= config_.vocab_size) {
        throw Error(Errc::index_out_of_range, "token id " + std::to_string(id) + " outside vocabulary");
      }
    }
    if (tape) {
      tape->token_ids.assign(ids.begin(), ids.end());
      tape->attention = mode;
      tape->layers.assign(config_.n_layers, {});
    }

    std::vector<double> x(T * d);
    const double* tok = p(slots_[0]);
    const double* pos = p(slots_[1]);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < d; ++i) x[t * d + i] = tok[ids[t] * d + i] + pos[t * d + i];

    std::vector<double> scratch_xhat(T * d), scratch_inv(T), h(T * d), q(T * d), k(T * d), v(T * d),
        attn(T * d), proj(T * d), pre(T * config_.mlp_dim()), act(T * config_.mlp_dim());
    std::vector<double> probs(config_.n_heads * T * T);

    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      const auto& L = layers_[l];
      detail::layer_norm(x.data(), T, d, p(L.ln1_g), p(L.ln1_b), h.data(), scratch_xhat.data(), scratch_inv.data());
      if (tape) {
        tape->layers[l].ln1_xhat = scratch_xhat;
        tape->layers[l].ln1_inv = scratch_inv;
        tape->layers[l].h1 = h;
      }
      detail::linear(h.data(), T, d, p(L.wq), p(L.bq), d, q.data());
      detail::linear(h.data(), T, d, p(L.wk), p(L.bk), d, k.data());
      detail::linear(h.data(), T, d, p(L.wv), p(L.bv), d, v.data());
      attention(q, k, v, T, mode, probs, attn);
      detail::linear(attn.data(), T, d, p(L.wo), p(L.bo), d, proj.data());
      for (std::size_t i = 0; i < T * d; ++i) x[i] += proj[i];
      if (tape) {
        auto& tl = tape->layers[l];
        tl.q = q;
        tl.k = k;
        tl.v = v;
        tl.probs = probs;
        tl.attn = attn;
      }

      detail::layer_norm(x.data(), T, d, p(L.ln2_g), p(L.ln2_b), h.data(), scratch_xhat.data(), scratch_inv.data());
      detail::linear(h.data(), T, d, p(L.w1), p(L.b1), config_.mlp_dim(), pre.data());
      for (std::size_t i = 0; i < pre.size(); ++i) act[i] = detail::gelu(pre[i]);
      detail::linear(act.data(), T, config_.mlp_dim(), p(L.w2), p(L.b2), d, proj.data());
      for (std::size_t i = 0; i < T * d; ++i) x[i] += proj[i];
      if (tape) {
        auto& tl = tape->layers[l];
        tl.ln2_xhat = scratch_xhat;
        tl.ln2_inv = scratch_inv;
        tl.h2 = h;
        tl.pre_act = pre;
        tl.act = act;
      }
    }

    HiddenStates out(T, d);
    out.attention = mode;
    const auto& fg = slots_[slots_.size() - 2];
    const auto& fb = slots_[slots_.size() - 1];
    detail::layer_norm(x.data(), T, d, p(fg), p(fb), out.data.data(), scratch_xhat.data(), scratch_inv.data());
    if (tape) {
      tape->final_xhat = scratch_xhat;
      tape->final_inv = scratch_inv;
    }
    return out;
  }

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(hidden states).
  void backward(const ForwardTape& tape, const HiddenStates& d_states, std::span<double> grad) const {
    const std::size_t T = tape.token_ids.size();
    const std::size_t d = config_.dim;
    const std::size_t m = config_.mlp_dim();
    if (grad.size() != params_.size() || d_states.rows != T || d_states.dim != d) {
      throw Error(Errc::dimension_mismatch, "backward buffers do not match the taped forward pass");
    }
    auto g = [&](const TensorSlot& s) { return grad.data() + s.offset; };

    std::vector<double> dx(T * d, 0.0);
    const auto& fg = slots_[slots_.size() - 2];
    const auto& fb = slots_[slots_.size() - 1];
    detail::layer_norm_backward(tape.final_xhat.data(), tape.final_inv.data(), T, d, p(fg), d_states.data.data(),
                                dx.data(), g(fg), g(fb));

    std::vector<double> d_h(T * d), d_act(T * m), d_pre(T * m), d_attn(T * d), dq(T * d), dk(T * d), dv(T * d),
        tmp(T * d);
    for (std::size_t li = config_.n_layers; li-- > 0;) {
      const auto& L = layers_[li];
      const auto& tl = tape.layers[li];

      // MLP branch: x += W2 gelu(W1 LN2(x))
      detail::linear_backward(tl.act.data(), T, m, p(L.w2), d, dx.data(), d_act.data(), g(slot(L.w2)),
                              g(slot(L.b2)));
      for (std::size_t i = 0; i < T * m; ++i) d_pre[i] = d_act[i] * detail::gelu_grad(tl.pre_act[i]);
      detail::linear_backward(tl.h2.data(), T, d, p(L.w1), m, d_pre.data(), d_h.data(), g(slot(L.w1)),
                              g(slot(L.b1)));
      detail::layer_norm_backward(tl.ln2_xhat.data(), tl.ln2_inv.data(), T, d, p(L.ln2_g), d_h.data(), dx.data(),
                                  g(slot(L.ln2_g)), g(slot(L.ln2_b)));

      // Attention branch: x += Wo attn(Q, K, V)
      detail::linear_backward(tl.attn.data(), T, d, p(L.wo), d, dx.data(), d_attn.data(), g(slot(L.wo)),
                              g(slot(L.bo)));
      attention_backward(tl, T, tape.attention, d_attn, dq, dk, dv);
      std::fill(d_h.begin(), d_h.end(), 0.0);
      detail::linear_backward(tl.h1.data(), T, d, p(L.wq), d, dq.data(), tmp.data(), g(slot(L.wq)), g(slot(L.bq)));
      for (std::size_t i = 0; i < T * d; ++i) d_h[i] += tmp[i];
      detail::linear_backward(tl.h1.data(), T, d, p(L.wk), d, dk.data(), tmp.data(), g(slot(L.wk)), g(slot(L.bk)));
      for (std::size_t i = 0; i < T * d; ++i) d_h[i] += tmp[i];
      detail::linear_backward(tl.h1.data(), T, d, p(L.wv), d, dv.data(), tmp.data(), g(slot(L.wv)), g(slot(L.bv)));
      for (std::size_t i = 0; i < T * d; ++i) d_h[i] += tmp[i];
      detail::layer_norm_backward(tl.ln1_xhat.data(), tl.ln1_inv.data(), T, d, p(L.ln1_g), d_h.data(), dx.data(),
                                  g(slot(L.ln1_g)), g(slot(L.ln1_b)));
    }

    double* d_tok = g(slots_[0]);
    double* d_pos = g(slots_[1]);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < d; ++i) {
        d_tok[tape.token_ids[t] * d + i] += dx[t * d + i];
        d_pos[t * d + i] += dx[t * d + i];
      }
    }
  }

 private:
  explicit ToyModel(const ToyModelConfig& config) : config_(config) {
    const std::size_t d = config.dim;
    std::size_t offset = 0;
    auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
      slots_.push_back({std::move(name), offset, rows, cols});
      offset += rows * cols;
      return slots_.size() - 1;
    };
    add("token_embedding", config.vocab_size, d);
    add("position_embedding", config.max_seq_len, d);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
      const auto pre = "layer" + std::to_string(l) + ".";
      detail::LayerSlots s{};
      s.ln1_g = add(pre + "ln1.gain", 1, d);
      s.ln1_b = add(pre + "ln1.bias", 1, d);
      s.wq = add(pre + "attn.wq", d, d);
      s.bq = add(pre + "attn.bq", 1, d);
      s.wk = add(pre + "attn.wk", d, d);
      s.bk = add(pre + "attn.bk", 1, d);
      s.wv = add(pre + "attn.wv", d, d);
      s.bv = add(pre + "attn.bv", 1, d);
      s.wo = add(pre + "attn.wo", d, d);
      s.bo = add(pre + "attn.bo", 1, d);
      s.ln2_g = add(pre + "ln2.gain", 1, d);
      s.ln2_b = add(pre + "ln2.bias", 1, d);
      s.w1 = add(pre + "mlp.w1", d, config.mlp_dim());
      s.b1 = add(pre + "mlp.b1", 1, config.mlp_dim());
      s.w2 = add(pre + "mlp.w2", config.mlp_dim(), d);
      s.b2 = add(pre + "mlp.b2", 1, d);
      layers_.push_back(s);
    }
    add("final_ln.gain", 1, d);
    add("final_ln.bias", 1, d);
    params_.assign(offset, 0.0);
  }

  const TensorSlot& slot(std::size_t index) const { return slots_[index]; }
  const double* p(const TensorSlot& s) const { return params_.data() + s.offset; }
  const double* p(std::size_t index) const { return p(slots_[index]); }

  // Row t attends to s <= t (causal) or to every s (bidirectional). Masked
  // positions are skipped entirely, so causal row t never reads rows > t.
  void attention(const std::vector<double>& q, const std::vector<double>& k, const std::vector<double>& v,
                 std::size_t T, AttentionMode mode, std::vector<double>& probs, std::vector<double>& out) const {
    const std::size_t d = config_.dim;
    const std::size_t hd = config_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    probs.assign(config_.n_heads * T * T, 0.0);
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t head = 0; head < config_.n_heads; ++head) {
      const std::size_t c0 = head * hd;
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t limit = mode == AttentionMode::causal ? t + 1 : T;
        double* pr = probs.data() + (head * T + t) * T;
        double max_score = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < limit; ++s) {
          double dot = 0.0;
          for (std::size_t i = 0; i < hd; ++i) dot += q[t * d + c0 + i] * k[s * d + c0 + i];
          pr[s] = dot * scale;
          max_score = std::max(max_score, pr[s]);
        }
        double z = 0.0;
        for (std::size_t s = 0; s < limit; ++s) {
          pr[s] = std::exp(pr[s] - max_score);
          z += pr[s];
        }
        for (std::size_t s = 0; s < limit; ++s) pr[s] /= z;
        for (std::size_t s = 0; s < limit; ++s)
          for (std::size_t i = 0; i < hd; ++i) out[t * d + c0 + i] += pr[s] * v[s * d + c0 + i];
      }
    }
  }

  void attention_backward(const ForwardTape::Layer& tl, std::size_t T, AttentionMode mode,
                          const std::vector<double>& d_out, std::vector<double>& dq, std::vector<double>& dk,
                          std::vector<double>& dv) const {
    const std::size_t d = config_.dim;
    const std::size_t hd = config_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    std::vector<double> dp(T);
    for (std::size_t head = 0; head < config_.n_heads; ++head) {
      const std::size_t c0 = head * hd;
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t limit = mode == AttentionMode::causal ? t + 1 : T;
        const double* pr = tl.probs.data() + (head * T + t) * T;
        double weighted = 0.0;
        for (std::size_t s = 0; s < limit; ++s) {
          double dot = 0.0;
          for (std::size_t i = 0; i < hd; ++i) {
            dot += d_out[t * d + c0 + i] * tl.v[s * d + c0 + i];
            dv[s * d + c0 + i] += pr[s] * d_out[t * d + c0 + i];
          }
          dp[s] = dot;
          weighted += pr[s] * dot;
        }
        for (std::size_t s = 0; s < limit; ++s) {
          const double ds = pr[s] * (dp[s] - weighted) * scale;
          for (std::size_t i = 0; i < hd; ++i) {
            dq[t * d + c0 + i] += ds * tl.k[s * d + c0 + i];
            dk[s * d + c0 + i] += ds * tl.q[t * d + c0 + i];
          }
        }
      }
    }
  }

  ToyModelConfig config_;
  std::vector<TensorSlot> slots_;
  std::vector<detail::LayerSlots> layers_;
  std::vector<double> params_;
};

/// Backend adapter: toy tokenizer + toy transformer.
class ToyBackend final : public Backend {
 public:
  explicit ToyBackend(ToyModel model)
      : model_(std::move(model)), tokenizer_(model_.config().vocab_size), mode_(model_.config().attention) {}
  ToyBackend(ToyModel model, AttentionMode mode)
      : model_(std::move(model)), tokenizer_(model_.config().vocab_size), mode_(mode) {}

  Output encode(std::string_view text) override {
    Output out;
    out.tokens = tokenizer_.tokenize(text);
    out.states = model_.forward(out.tokens.token_ids, mode_);
    return out;
  }

  /// Appends the reserved end-of-sequence id (zero-width offset at the end).
  Output encode_with_eos(std::string_view text) const {
    Output out;
    out.tokens = tokenizer_.tokenize(text);
    out.tokens.token_ids.push_back(tokenizer_.eos_id());
    out.tokens.offsets.emplace_back(text.size(), text.size());
    out.states = model_.forward(out.tokens.token_ids, mode_);
    return out;
  }

  std::size_t dim() const override { return model_.config().dim; }
  std::size_t max_seq_len() const override { return model_.config().max_seq_len; }
  std::optional<std::size_t> token_count(std::string_view text) const override {
    return tokenizer_.tokenize(text).size();
  }

  const ToyModel& model() const noexcept { return model_; }
  ToyModel& model() noexcept { return model_; }
  const ToyTokenizer& tokenizer() const noexcept { return tokenizer_; }
  AttentionMode attention() const noexcept { return mode_; }

 private:
  ToyModel model_;
  ToyTokenizer tokenizer_;
  AttentionMode mode_;
};

// ---------------------------------------------------------------------------
// Checkpoints. Little-endian throughout:
//   bytes 0..7   magic "ECHOTOY1"
//   u32          format version (1)
//   u32          attention (0 causal, 1 bidirectional)
//   u64 x 6      vocab_size, dim, n_layers, n_heads, max_seq_len, seed
//   f64          init_std
//   u64          parameter count
//   f32 x count  parameters in tensor order

namespace detail {

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
    throw Error(Errc::io_error, "truncated checkpoint");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline constexpr char kCheckpointMagic[8] = {'E', 'C', 'H', 'O', 'T', 'O', 'Y', '1'};

}  // namespace detail

inline void save_checkpoint(const ToyModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write checkpoint " + path.string());
  const auto& c = model.config();
  out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::write_le<std::uint32_t>(out, 1);
  detail::write_le<std::uint32_t>(out, c.attention == AttentionMode::causal ? 0 : 1);
  for (std::uint64_t v : {c.vocab_size, c.dim, c.n_layers, c.n_heads, c.max_seq_len}) detail::write_le(out, v);
  detail::write_le<std::uint64_t>(out, c.seed);
  detail::write_le<double>(out, c.init_std);
  detail::write_le<std::uint64_t>(out, model.parameter_count());
  for (double p : model.parameters()) detail::write_le<float>(out, static_cast<float>(p));
  if (!out) throw Error(Errc::io_error, "failed writing checkpoint " + path.string());
}

inline ToyModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0) {
    throw Error(Errc::io_error, "not a toy-model checkpoint: " + path.string());
  }
  if (detail::read_le<std::uint32_t>(in) != 1) throw Error(Errc::io_error, "unsupported checkpoint version");
  ToyModelConfig c;
  c.attention = detail::read_le<std::uint32_t>(in) == 0 ? AttentionMode::causal : AttentionMode::bidirectional;
  c.vocab_size = detail::read_le<std::uint64_t>(in);
  c.dim = detail::read_le<std::uint64_t>(in);
  c.n_layers = detail::read_le<std::uint64_t>(in);
  c.n_heads = detail::read_le<std::uint64_t>(in);
  c.max_seq_len = detail::read_le<std::uint64_t>(in);
  c.seed = detail::read_le<std::uint64_t>(in);
  c.init_std = detail::read_le<double>(in);
  const auto count = detail::read_le<std::uint64_t>(in);
  std::vector<double> params(count);
  for (auto& p : params) p = detail::read_le<float>(in);
  return ToyModel::from_parameters(c, std::move(params));
}

}  // namespace echoembed
