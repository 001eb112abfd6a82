#pragma once

#include "eradiff/image.hpp"
#include "eradiff/ops.hpp"
#include "eradiff/rng.hpp"
#include "eradiff/tensor.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace eradiff {

struct DenoiserConfig {
  int image_channels = 3;
  int image_size = 32;
  std::vector<int> widths{16, 32, 48};  // stem width, then one entry per 2x downsampling stage
  int attention_resolution = 8;         // token grid side; must equal image_size / 2^(widths.size()-1)
  int attention_dim = 32;
  int time_dim = 32;
  double output_init_scale = 0.1;  // shrinks the last conv so eps_hat starts near zero
  bool sra = true;

  int depth() const { return static_cast<int>(widths.size()) - 1; }
  int input_channels() const { return 2 * image_channels + 1; }
};

void validate(const DenoiserConfig& config);

/// Downsampled hole vector m and the pairwise rule built from it: entry (i, j)
/// is 1 when token i or token j is background, and -inf when both are holes.
struct ExtendedMask {
  int tokens = 0;
  MaskBits m;             // length tokens, 1 = hole
  Eigen::ArrayXXd m_prime;  // tokens x tokens, values in {1, -inf}

  /// Row-major 0/1 flags of the -inf entries.
  MaskBits suppressed() const {
    MaskBits out(Eigen::Index(tokens) * tokens);
    for (int i = 0; i < tokens; ++i)
      for (int j = 0; j < tokens; ++j) out(Eigen::Index(i) * tokens + j) = std::isinf(m_prime(i, j)) ? 1 : 0;
    return out;
  }
};

/// Max-pools the mask onto an h x w grid (any covered pixel makes a hole
/// token) and builds the extended mask. Full-hole grids are rejected.
ExtendedMask extended_mask(const Mask& mask, int h, int w);

/// Extended mask from an already-flattened token vector.
ExtendedMask extended_mask_from_tokens(const MaskBits& m);

inline constexpr double kSuppressedLogit = -1e9;

/// Scaled dot-product attention on [L, d] or [N, L, d] operands. When
/// `suppressed` is given, flagged logits are replaced by a large negative
/// value before the softmax. Returns the attended values; the attention
/// weights are written to `weights` when requested.
template <typename Scalar>
Tensor<Scalar> attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                         const MaskBits* suppressed = nullptr, Tensor<Scalar>* weights = nullptr) {
  const Index d = q.dim(q.rank() - 1);
  Tensor<Scalar> logits = scale(matmul(q, transpose_last2(k)), Scalar(1.0 / std::sqrt(static_cast<double>(d))));
  if (suppressed) {
    const Index cols = logits.dim(logits.rank() - 1);
    for (Index r = 0; r < logits.size() / cols; ++r)
      if (suppressed->segment(r * cols, cols).cast<int>().sum() == cols)
        throw std::domain_error("attention: a query row has every key suppressed");
    logits = masked_fill(logits, *suppressed, Scalar(kSuppressedLogit));
  }
  Tensor<Scalar> a = softmax_lastdim(logits);
  if (weights) *weights = a;
  return matmul(a, v);
}

/// Self-rectifying attention for one image: hole queries see only background keys.
template <typename Scalar>
Tensor<Scalar> sra_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                             const ExtendedMask& mask, Tensor<Scalar>* weights = nullptr) {
  if (q.rank() != 2 || q.dim(0) != mask.tokens || k.dim(0) != mask.tokens || v.dim(0) != mask.tokens)
    throw ShapeError("sra_attention: expected [L, d] operands with L = " + std::to_string(mask.tokens) +
                     " (got " + to_string(q.shape()) + ")");
  const MaskBits s = mask.suppressed();
  return attention(q, k, v, &s, weights);
}

/// Sinusoidal timestep features, [N, dim].
template <typename Scalar>
Tensor<Scalar> timestep_embedding(const std::vector<int>& t, int dim) {
  const int half = dim / 2;
  typename Tensor<Scalar>::Array out(static_cast<Index>(t.size()) * dim);
  for (std::size_t n = 0; n < t.size(); ++n)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      out(static_cast<Index>(n) * dim + i) = static_cast<Scalar>(std::sin(t[n] * freq));
      out(static_cast<Index>(n) * dim + half + i) = static_cast<Scalar>(std::cos(t[n] * freq));
    }
  return Tensor<Scalar>(Shape{static_cast<Index>(t.size()), dim}, std::move(out));
}

/// The epsilon predictor: conditioned conv encoder/decoder with one attention
/// block at the lowest resolution. Parameters are kept in declaration order,
/// which is also the checkpoint order.
template <typename Scalar>
class DenoiserModel {
 public:
  DenoiserModel() = default;
  explicit DenoiserModel(DenoiserConfig config) : config_(std::move(config)) { validate(config_); }

  const DenoiserConfig& config() const { return config_; }
  DenoiserConfig& mutable_config() { return config_; }
  bool sra_enabled() const { return config_.sra; }
  void set_sra(bool on) { config_.sra = on; }

  std::vector<Tensor<Scalar>>& parameters() { return params_; }
  const std::vector<Tensor<Scalar>>& parameters() const { return params_; }
  const std::vector<std::string>& names() const { return names_; }
  Index parameter_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }
  const Tensor<Scalar>& param(const std::string& name) const { return params_.at(index_.at(name)); }

  void add_parameter(const std::string& name, Tensor<Scalar> t) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    index_[name] = params_.size();
    names_.push_back(name);
    params_.push_back(std::move(t));
  }
  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  DenoiserConfig config_;
  std::vector<Tensor<Scalar>> params_;
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> init_normal(Shape shape, double stddev, std::uint64_t seed) {
  Rng rng(seed);
  typename Tensor<Scalar>::Array v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v(i) = static_cast<Scalar>(stddev * rng.normal());
  return Tensor<Scalar>(std::move(shape), std::move(v), true);
}

}  // namespace detail

/// Deterministic, seeded construction of every weight.
template <typename Scalar>
DenoiserModel<Scalar> build_denoiser(const DenoiserConfig& config, std::uint64_t seed) {
  DenoiserModel<Scalar> model(config);
  std::uint64_t counter = 0;
  auto next_seed = [&] { return derive_seed(seed, {counter++}); };
  auto conv = [&](const std::string& name, int cin, int cout, double gain = 1.0) {
    const double fan_in = 9.0 * cin;
    model.add_parameter(name + ".w", detail::init_normal<Scalar>({cout, cin, 3, 3}, gain * std::sqrt(2.0 / fan_in),
                                                                 next_seed()));
    model.add_parameter(name + ".b", Tensor<Scalar>::zeros({cout}, true));
  };
  auto norm = [&](const std::string& name, int ch) {
    model.add_parameter(name + ".g", Tensor<Scalar>(Shape{ch}, Tensor<Scalar>::Array::Ones(ch), true));
    model.add_parameter(name + ".beta", Tensor<Scalar>::zeros({ch}, true));
  };
  auto dense = [&](const std::string& name, int in, int out, double gain = 1.0) {
    model.add_parameter(name + ".w",
                        detail::init_normal<Scalar>({out, in}, gain * std::sqrt(1.0 / in), next_seed()));
    model.add_parameter(name + ".b", Tensor<Scalar>::zeros({out}, true));
  };

  const auto& w = config.widths;
  conv("stem", config.input_channels(), w[0]);
  norm("stem.norm", w[0]);
  for (int i = 1; i <= config.depth(); ++i) {
    conv("down" + std::to_string(i), w[i - 1], w[i]);
    norm("down" + std::to_string(i) + ".norm", w[i]);
  }
  dense("time.l1", config.time_dim, 2 * config.time_dim);
  dense("time.l2", 2 * config.time_dim, w.back());
  conv("mid", w.back(), w.back());
  norm("mid.norm", w.back());
  dense("attn.q", w.back(), config.attention_dim);
  dense("attn.k", w.back(), config.attention_dim);
  dense("attn.v", w.back(), config.attention_dim);
  dense("attn.o", config.attention_dim, w.back(), 0.5);
  for (int i = config.depth(); i >= 1; --i) {
    conv("up" + std::to_string(i), w[i] + w[i - 1], w[i - 1]);
    norm("up" + std::to_string(i) + ".norm", w[i - 1]);
  }
  conv("out", w[0], config.image_channels, config.output_init_scale);
  return model;
}

/// [x_t | mask | masked_image] along channels. The mask must be binary.
template <typename Scalar>
Tensor<Scalar> condition_input(const Tensor<Scalar>& x_t, const Tensor<Scalar>& mask,
                               const Tensor<Scalar>& masked_image) {
  if (x_t.rank() != 4 || mask.rank() != 4 || masked_image.shape() != x_t.shape() || mask.dim(1) != 1 ||
      mask.dim(0) != x_t.dim(0) || mask.dim(2) != x_t.dim(2) || mask.dim(3) != x_t.dim(3))
    throw ShapeError("condition_input: expected x_t[N,C,H,W], mask[N,1,H,W], masked_image[N,C,H,W] (got " +
                     to_string(x_t.shape()) + ", " + to_string(mask.shape()) + ", " +
                     to_string(masked_image.shape()) + ")");
  for (Index i = 0; i < mask.size(); ++i)
    if (mask[i] != Scalar(0) && mask[i] != Scalar(1)) throw std::invalid_argument("condition_input: mask is not binary");
  return concat_channels<Scalar>({x_t, mask, masked_image});
}

/// Batch of masks as a [N, 1, H, W] constant tensor.
template <typename Scalar>
Tensor<Scalar> mask_tensor(const std::vector<Mask>& masks) {
  if (masks.empty()) throw std::invalid_argument("mask_tensor: empty batch");
  const Index hw = masks[0].bits.size();
  typename Tensor<Scalar>::Array v(static_cast<Index>(masks.size()) * hw);
  for (std::size_t n = 0; n < masks.size(); ++n) {
    if (!masks[n].same_shape(masks[0])) throw ShapeError("mask_tensor: masks differ in shape");
    v.segment(static_cast<Index>(n) * hw, hw) = masks[n].bits.template cast<Scalar>();
  }
  return Tensor<Scalar>(Shape{static_cast<Index>(masks.size()), 1, masks[0].height, masks[0].width}, std::move(v));
}

/// eps_theta(x_t, t | mask, masked image). `sra` overrides the model flag.
/// Full-image masks are rejected when SRA is active (no background key exists).
template <typename Scalar>
Tensor<Scalar> predict_eps(const DenoiserModel<Scalar>& model, const Tensor<Scalar>& x_t, const std::vector<Mask>& masks,
                           const Tensor<Scalar>& masked_image, const std::vector<int>& t,
                           std::optional<bool> sra = std::nullopt) {
  const DenoiserConfig& cfg = model.config();
  const Index batch = x_t.dim(0);
  if (x_t.rank() != 4 || x_t.dim(1) != cfg.image_channels || x_t.dim(2) != cfg.image_size ||
      x_t.dim(3) != cfg.image_size)
    throw ShapeError("predict_eps: x_t shape " + to_string(x_t.shape()) + " does not match model config");
  if (static_cast<Index>(masks.size()) != batch || static_cast<Index>(t.size()) != batch)
    throw ShapeError("predict_eps: batch of masks/timesteps does not match x_t");
  for (int ti : t)
    if (ti < 1) throw std::out_of_range("predict_eps: timestep must be >= 1");
  for (const auto& m : masks)
    if (m.full()) throw std::domain_error("predict_eps: full-image mask has no background to attend to");

  auto P = [&](const std::string& name) -> const Tensor<Scalar>& { return model.param(name); };
  auto conv_block = [&](const Tensor<Scalar>& h, const std::string& name, Index stride) {
    return silu(group_norm_lite(conv2d(h, P(name + ".w"), P(name + ".b"), stride, 1), P(name + ".norm.g"),
                                P(name + ".norm.beta")));
  };

  Tensor<Scalar> h = conv_block(condition_input(x_t, mask_tensor<Scalar>(masks), masked_image), "stem", 1);
  std::vector<Tensor<Scalar>> skips{h};
  for (int i = 1; i <= cfg.depth(); ++i) {
    h = conv_block(h, "down" + std::to_string(i), 2);
    if (i < cfg.depth()) skips.push_back(h);
  }

  Tensor<Scalar> temb = timestep_embedding<Scalar>(t, cfg.time_dim);
  temb = linear(silu(linear(temb, P("time.l1.w"), P("time.l1.b"))), P("time.l2.w"), P("time.l2.b"));
  h = add_channel_bias(h, temb);
  h = conv_block(h, "mid", 1);

  // attention over the token grid
  const Index ch = h.dim(1), side = h.dim(2), tokens = side * side;
  Tensor<Scalar> z = transpose_last2(reshape(h, {batch, ch, tokens}));
  Tensor<Scalar> q = linear(z, P("attn.q.w"), P("attn.q.b"));
  Tensor<Scalar> k = linear(z, P("attn.k.w"), P("attn.k.b"));
  Tensor<Scalar> v = linear(z, P("attn.v.w"), P("attn.v.b"));
  Tensor<Scalar> att;
  if (sra.value_or(cfg.sra)) {
    MaskBits suppressed(batch * tokens * tokens);
    for (Index n = 0; n < batch; ++n)
      suppressed.segment(n * tokens * tokens, tokens * tokens) =
          extended_mask(masks[static_cast<std::size_t>(n)], static_cast<int>(side), static_cast<int>(side)).suppressed();
    att = attention(q, k, v, &suppressed);
  } else {
    att = attention(q, k, v);
  }
  Tensor<Scalar> proj = linear(att, P("attn.o.w"), P("attn.o.b"));
  h = add(h, reshape(transpose_last2(proj), {batch, ch, side, side}));

  for (int i = cfg.depth(); i >= 1; --i) {
    h = concat_channels<Scalar>({upsample_nearest2x(h), skips[static_cast<std::size_t>(i - 1)]});
    h = conv_block(h, "up" + std::to_string(i), 1);
  }
  return conv2d(h, P("out.w"), P("out.b"), 1, 1);
}

}  // namespace eradiff
