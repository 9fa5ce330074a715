#include "interp/model/model_handle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace interp::model {

std::vector<int> TokenizedPrompt::ids() const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.id);
  return out;
}

std::optional<int> TokenizedPrompt::position_of_span(std::size_t begin, std::size_t end) const {
  for (const auto& t : tokens) {
    if (bos_prepended && t.index == 0) continue;
    if (t.char_begin < end && begin < t.char_end) return t.index;
  }
  return std::nullopt;
}

int NextTokenDistribution::argmax() const {
  return static_cast<int>(std::max_element(probabilities.begin(), probabilities.end()) - probabilities.begin());
}

double NextTokenDistribution::sum() const { return std::accumulate(probabilities.begin(), probabilities.end(), 0.0); }

struct ModelHandle::Plan {
  struct Capture {
    int layer;
    int head;  // -1 for MLP / residual
    int pos;
    ActivationKind what;
    std::size_t slot;
  };
  struct Replace {
    int layer;
    int head;
    int pos;
    ActivationKind what;
    const std::vector<float>* value;
  };
  std::vector<Capture> captures;
  std::vector<Replace> replacements;

  template <class F>
  void each_capture(int layer, ActivationKind what, F&& f) const {
    for (const auto& c : captures) {
      if (c.layer == layer && c.what == what) f(c);
    }
  }
  template <class F>
  void each_replace(int layer, ActivationKind what, F&& f) const {
    for (const auto& r : replacements) {
      if (r.layer == layer && r.what == what) f(r);
    }
  }
};

namespace {

Matrix apply_norm(const Matrix& x, const NormWeights& w, NormKind kind, float eps) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto row = x.row(i);
    if (kind == NormKind::kLayerNorm) {
      const float mean = row.mean();
      const Eigen::RowVectorXf centered = row.array() - mean;
      const float var = centered.squaredNorm() / static_cast<float>(x.cols());
      const float inv = 1.0f / std::sqrt(var + eps);
      out.row(i) = (centered * inv).cwiseProduct(w.weight.transpose());
      if (w.bias.size()) out.row(i) += w.bias.transpose();
    } else {
      const float ms = row.squaredNorm() / static_cast<float>(x.cols());
      const float inv = 1.0f / std::sqrt(ms + eps);
      out.row(i) = (row * inv).cwiseProduct(w.weight.transpose());
    }
  }
  return out;
}

float gelu_tanh(float x) {
  constexpr float k = 0.7978845608028654f;
  return 0.5f * x * (1.0f + std::tanh(k * (x + 0.044715f * x * x * x)));
}

float gelu_exact(float x) { return 0.5f * x * (1.0f + std::erf(x * 0.7071067811865476f)); }

float silu(float x) { return x / (1.0f + std::exp(-x)); }

void add_bias(Matrix& m, const Vector& b) {
  if (b.size()) m.rowwise() += b.transpose();
}

// Rotates the first `rotary_dim` features of every row in rotate-half layout.
void apply_rotary(Matrix& x, int rotary_dim, float base) {
  const int half = rotary_dim / 2;
  for (Eigen::Index p = 0; p < x.rows(); ++p) {
    for (int i = 0; i < half; ++i) {
      const float inv_freq = static_cast<float>(1.0 / std::pow(static_cast<double>(base), 2.0 * i / rotary_dim));
      const float angle = static_cast<float>(p) * inv_freq;
      const float c = std::cos(angle), s = std::sin(angle);
      const float x1 = x(p, i), x2 = x(p, i + half);
      x(p, i) = x1 * c - x2 * s;
      x(p, i + half) = x2 * c + x1 * s;
    }
  }
}

std::vector<float> row_to_vec(const Matrix& m, int row) {
  return std::vector<float>(m.row(row).data(), m.row(row).data() + m.cols());
}

void write_row(Matrix& m, int row, const std::vector<float>& v) {
  m.row(row) = Eigen::Map<const Eigen::RowVectorXf>(v.data(), static_cast<Eigen::Index>(v.size()));
}

const char* kind_name(ActivationKind k) {
  switch (k) {
    case ActivationKind::kHeadOutput: return "head_output";
    case ActivationKind::kAttentionPattern: return "attention_pattern";
    case ActivationKind::kResidualState: return "residual_state";
    case ActivationKind::kMlpOutput: return "mlp_output";
  }
  return "?";
}

}  // namespace

ModelHandle::ModelHandle(std::shared_ptr<const Checkpoint> checkpoint) : ckpt_(std::move(checkpoint)) {
  if (!ckpt_) throw ConfigError("null checkpoint");
  const auto& layers = ckpt_->weights.layers;
  bindings_.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (const auto& h : layers[l].heads) bindings_[l].push_back({&h, &h});
  }
}

TokenizedPrompt ModelHandle::tokenize(std::string_view prompt) const {
  if (prompt.empty()) throw LengthError("prompt is empty");
  TokenizedPrompt out;
  out.text = std::string(prompt);
  const auto& tok = tokenizer();
  if (config().prepend_bos && tok.bos_id()) {
    out.bos_prepended = true;
    out.tokens.push_back({tok.token_text(*tok.bos_id()), 0, *tok.bos_id(), 0, 0});
  }
  for (const auto& t : tok.encode(prompt)) {
    out.tokens.push_back({t.text, static_cast<int>(out.tokens.size()), t.id, t.char_begin, t.char_end});
  }
  if (out.size() > config().n_ctx) {
    throw LengthError("prompt has " + std::to_string(out.size()) + " tokens; context window is " +
                      std::to_string(config().n_ctx));
  }
  return out;
}

int ModelHandle::resolve_position(const TokenizedPrompt& prompt, int position) const {
  const int n = prompt.size();
  const int p = position < 0 ? n + position : position;
  if (p < 0 || p >= n) {
    throw AddressingError("token position " + std::to_string(position) + " out of range for " + std::to_string(n) +
                          "-token prompt");
  }
  return p;
}

void ModelHandle::validate(const ComponentRef& c) const {
  if (c.layer < 0 || c.layer >= config().n_layers) {
    throw AddressingError("layer " + std::to_string(c.layer) + " out of range in " + to_string(c));
  }
  if (c.head && (*c.head < 0 || *c.head >= config().n_heads)) {
    throw AddressingError("head " + std::to_string(*c.head) + " out of range in " + to_string(c));
  }
}

ModelHandle::RunOutput ModelHandle::run(const TokenizedPrompt& prompt, const Plan& plan, int start_layer,
                                        const Matrix* resid_in, bool keep_residuals) const {
  const auto& cfg = config();
  const auto& w = ckpt_->weights;
  const int n = prompt.size();
  if (n == 0) throw LengthError("prompt has no tokens");
  const int d = cfg.d_model, dh = cfg.d_head;

  RunOutput out;
  out.activations.resize(plan.captures.size());

  Matrix x;
  if (resid_in) {
    if (resid_in->rows() != n || resid_in->cols() != d) throw ValidationError("cached residual has wrong shape");
    x = *resid_in;
  } else {
    x.resize(n, d);
    for (int p = 0; p < n; ++p) {
      const int id = prompt.tokens[p].id;
      if (id < 0 || id >= w.embed.rows()) throw ValidationError("token id out of vocabulary range");
      x.row(p) = w.embed.row(id);
      if (cfg.positional == PositionalKind::kLearned) x.row(p) += w.pos_embed.row(p);
    }
  }

  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  for (int l = start_layer; l < cfg.n_layers; ++l) {
    if (keep_residuals) out.resid_inputs.push_back(x);
    const auto& lw = w.layers[l];
    const Matrix a = apply_norm(x, lw.ln_attn, cfg.norm, cfg.norm_eps);
    Matrix attn = Matrix::Zero(n, d);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const HeadWeights& kq = *bindings_[l][h].kq;
      const HeadWeights& ov = *bindings_[l][h].ov;
      Matrix q = a * kq.w_q;
      Matrix k = a * kq.w_k;
      Matrix v = a * ov.w_v;
      add_bias(q, kq.b_q);
      add_bias(k, kq.b_k);
      add_bias(v, ov.b_v);
      if (cfg.positional == PositionalKind::kRotary && cfg.rotary_dim > 0) {
        apply_rotary(q, cfg.rotary_dim, cfg.rotary_base);
        apply_rotary(k, cfg.rotary_dim, cfg.rotary_base);
      }
      Matrix pattern = Matrix::Zero(n, n);
      const Matrix scores = (q * k.transpose()) * scale;
      for (int i = 0; i < n; ++i) {
        const float mx = scores.row(i).head(i + 1).maxCoeff();
        float total = 0.0f;
        for (int j = 0; j <= i; ++j) {
          pattern(i, j) = std::exp(scores(i, j) - mx);
          total += pattern(i, j);
        }
        pattern.row(i).head(i + 1) /= total;
      }
      plan.each_replace(l, ActivationKind::kAttentionPattern, [&](const Plan::Replace& r) {
        if (r.head != h) return;
        pattern.row(r.pos).setZero();
        for (int j = 0; j <= r.pos; ++j) pattern(r.pos, j) = (*r.value)[j];
      });
      plan.each_capture(l, ActivationKind::kAttentionPattern, [&](const Plan::Capture& c) {
        if (c.head != h) return;
        out.activations[c.slot].assign(pattern.row(c.pos).data(), pattern.row(c.pos).data() + c.pos + 1);
      });
      Matrix head_out = (pattern * v) * ov.w_o;
      plan.each_replace(l, ActivationKind::kHeadOutput, [&](const Plan::Replace& r) {
        if (r.head == h) write_row(head_out, r.pos, *r.value);
      });
      plan.each_capture(l, ActivationKind::kHeadOutput, [&](const Plan::Capture& c) {
        if (c.head == h) out.activations[c.slot] = row_to_vec(head_out, c.pos);
      });
      attn += head_out;
    }
    add_bias(attn, lw.b_o);

    auto mlp = [&](const Matrix& in) {
      const Matrix m_in = apply_norm(in, lw.ln_mlp, cfg.norm, cfg.norm_eps);
      Matrix hidden = m_in * lw.w_in;
      add_bias(hidden, lw.b_in);
      if (cfg.mlp == MlpKind::kSwiGlu) {
        const Matrix gate = m_in * lw.w_gate;
        hidden = gate.unaryExpr(&silu).cwiseProduct(hidden);
      } else if (cfg.mlp == MlpKind::kGeluTanh) {
        hidden = hidden.unaryExpr(&gelu_tanh);
      } else {
        hidden = hidden.unaryExpr(&gelu_exact);
      }
      Matrix m_out = hidden * lw.w_out;
      add_bias(m_out, lw.b_out);
      plan.each_replace(l, ActivationKind::kMlpOutput, [&](const Plan::Replace& r) { write_row(m_out, r.pos, *r.value); });
      plan.each_capture(l, ActivationKind::kMlpOutput,
                        [&](const Plan::Capture& c) { out.activations[c.slot] = row_to_vec(m_out, c.pos); });
      return m_out;
    };

    if (cfg.parallel_residual) {
      const Matrix m = mlp(x);
      x += attn;
      x += m;
    } else {
      x += attn;
      x += mlp(x);
    }

    plan.each_replace(l, ActivationKind::kResidualState, [&](const Plan::Replace& r) { write_row(x, r.pos, *r.value); });
    plan.each_capture(l, ActivationKind::kResidualState,
                      [&](const Plan::Capture& c) { out.activations[c.slot] = row_to_vec(x, c.pos); });
  }
  if (keep_residuals) out.resid_inputs.push_back(x);

  const Eigen::RowVectorXf last = x.row(n - 1);
  out.distribution = unembed(std::span<const float>(last.data(), static_cast<std::size_t>(d)));
  out.distribution.position = n - 1;
  return out;
}

NextTokenDistribution ModelHandle::forward(const TokenizedPrompt& prompt) const {
  return run(prompt, Plan{}, 0, nullptr, false).distribution;
}

CaptureResult ModelHandle::forward_with_capture(const TokenizedPrompt& prompt,
                                                std::span<const CaptureSpec> captures) const {
  Plan plan;
  for (std::size_t i = 0; i < captures.size(); ++i) {
    const auto& spec = captures[i];
    validate(spec.component);
    const int pos = resolve_position(prompt, spec.token_position);
    int head = spec.component.head.value_or(-1);
    switch (spec.what) {
      case ActivationKind::kHeadOutput:
      case ActivationKind::kAttentionPattern:
        if (!spec.component.is_head()) {
          throw UnsupportedComponentError(std::string(kind_name(spec.what)) + " needs an attention head, got " +
                                          to_string(spec.component));
        }
        break;
      case ActivationKind::kMlpOutput:
        if (!spec.component.is_mlp()) {
          throw UnsupportedComponentError("mlp_output needs an MLP component, got " + to_string(spec.component));
        }
        break;
      case ActivationKind::kResidualState:
        head = -1;
        break;
    }
    plan.captures.push_back({spec.component.layer, head, pos, spec.what, i});
  }
  auto r = run(prompt, plan, 0, nullptr, false);
  return {std::move(r.distribution), std::move(r.activations)};
}

NextTokenDistribution ModelHandle::forward_with_intervention(const TokenizedPrompt& prompt,
                                                             std::span<const InterventionSpec> interventions) const {
  Plan plan;
  for (const auto& spec : interventions) {
    validate(spec.component);
    const int pos = resolve_position(prompt, spec.token_position);
    const ActivationKind what =
        spec.what.value_or(spec.component.is_head() ? ActivationKind::kHeadOutput : ActivationKind::kMlpOutput);
    std::size_t expected = static_cast<std::size_t>(config().d_model);
    int head = spec.component.head.value_or(-1);
    switch (what) {
      case ActivationKind::kHeadOutput:
      case ActivationKind::kAttentionPattern:
        if (!spec.component.is_head()) {
          throw UnsupportedComponentError(std::string(kind_name(what)) + " needs an attention head, got " +
                                          to_string(spec.component));
        }
        if (what == ActivationKind::kAttentionPattern) expected = static_cast<std::size_t>(pos + 1);
        break;
      case ActivationKind::kMlpOutput:
        if (!spec.component.is_mlp()) {
          throw UnsupportedComponentError("mlp_output needs an MLP component, got " + to_string(spec.component));
        }
        break;
      case ActivationKind::kResidualState:
        head = -1;
        break;
    }
    if (spec.replacement.size() != expected) {
      throw ValidationError("replacement for " + to_string(spec.component) + " has dimension " +
                            std::to_string(spec.replacement.size()) + ", expected " + std::to_string(expected));
    }
    plan.replacements.push_back({spec.component.layer, head, pos, what, &spec.replacement});
  }
  return run(prompt, plan, 0, nullptr, false).distribution;
}

std::vector<Matrix> ModelHandle::residual_cache(const TokenizedPrompt& prompt) const {
  return run(prompt, Plan{}, 0, nullptr, true).resid_inputs;
}

NextTokenDistribution ModelHandle::forward_from(const TokenizedPrompt& prompt, int start_layer,
                                                const Matrix& resid_in) const {
  if (start_layer < 0 || start_layer > config().n_layers) throw AddressingError("start layer out of range");
  return run(prompt, Plan{}, start_layer, &resid_in, false).distribution;
}

HeadWeights ModelHandle::read_head_weights(const ComponentRef& c) const {
  validate(c);
  if (!c.is_head()) throw UnsupportedComponentError("weights can only be read for attention heads, got " + to_string(c));
  const auto& b = bindings_[c.layer][*c.head];
  HeadWeights out;
  out.w_q = b.kq->w_q;
  out.w_k = b.kq->w_k;
  out.b_q = b.kq->b_q;
  out.b_k = b.kq->b_k;
  out.w_v = b.ov->w_v;
  out.w_o = b.ov->w_o;
  out.b_v = b.ov->b_v;
  return out;
}

NextTokenDistribution ModelHandle::unembed(std::span<const float> hidden) const {
  const auto& cfg = config();
  const auto& w = ckpt_->weights;
  if (static_cast<int>(hidden.size()) != cfg.d_model) {
    throw ValidationError("unembed expects a " + std::to_string(cfg.d_model) + "-dim vector, got " +
                          std::to_string(hidden.size()));
  }
  Matrix h(1, cfg.d_model);
  for (int i = 0; i < cfg.d_model; ++i) h(0, i) = hidden[i];
  const Matrix normed = apply_norm(h, w.ln_final, cfg.norm, cfg.norm_eps);
  const Matrix& u = w.unembedding();
  Eigen::VectorXf logits = u * normed.row(0).transpose();
  if (w.b_unembed.size()) logits += w.b_unembed;

  NextTokenDistribution dist;
  dist.probabilities.resize(static_cast<std::size_t>(logits.size()));
  const double mx = static_cast<double>(logits.maxCoeff());
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double e = std::exp(static_cast<double>(logits[i]) - mx);
    dist.probabilities[static_cast<std::size_t>(i)] = e;
    total += e;
  }
  for (auto& p : dist.probabilities) p /= total;
  return dist;
}

ModelHandle::SwapGuard::SwapGuard(ModelHandle& handle, const ComponentRef& a, const ComponentRef& b, SwapKind kind,
                                  bool one_directional)
    : handle_(handle) {
  for (const auto* c : {&a, &b}) {
    handle.validate(*c);
    if (!c->is_head()) throw UnsupportedComponentError("weight swaps need attention heads, got " + to_string(*c));
  }
  la_ = a.layer;
  ha_ = *a.head;
  lb_ = b.layer;
  hb_ = *b.head;
  auto& ba = handle.bindings_[la_][ha_];
  auto& bb = handle.bindings_[lb_][hb_];
  const HeadWeights* wa = kind == SwapKind::kKQ ? ba.kq : ba.ov;
  const HeadWeights* wb = kind == SwapKind::kKQ ? bb.kq : bb.ov;
  const bool same_shape = kind == SwapKind::kKQ
                              ? (wa->w_q.rows() == wb->w_q.rows() && wa->w_q.cols() == wb->w_q.cols() &&
                                 wa->b_q.size() == wb->b_q.size())
                              : (wa->w_v.rows() == wb->w_v.rows() && wa->w_v.cols() == wb->w_v.cols() &&
                                 wa->w_o.cols() == wb->w_o.cols() && wa->b_v.size() == wb->b_v.size());
  if (!same_shape) throw IncompatibleSwapError("head dimensions differ between " + to_string(a) + " and " + to_string(b));

  saved_a_ = ba;
  saved_b_ = bb;
  auto slot = [kind](HeadBinding& x) -> const HeadWeights*& { return kind == SwapKind::kKQ ? x.kq : x.ov; };
  if (one_directional) {
    slot(ba) = wb;
  } else {
    slot(ba) = wb;
    slot(bb) = wa;
  }
}

ModelHandle::SwapGuard::~SwapGuard() {
  handle_.bindings_[lb_][hb_] = saved_b_;
  handle_.bindings_[la_][ha_] = saved_a_;
}

}  // namespace interp::model
