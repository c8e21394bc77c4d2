// Shared dialogue encoder with three heads (handoff, local sentiment,
// dialogue satisfaction) and its hand-written backward pass.
//
//   e_t = mean of embedding rows of u_t
//   h_t = tanh(e_t * utt_proj + utt_bias)
//   s_t = tanh(h_t * ctx_in + s_{t-1} * ctx_rec + ctx_bias),  s_0 = 0
//   handoff_t   = softmax(s_t * head_handoff + bias_handoff)
//   sentiment_t = softmax(s_t * head_sent + bias_sent)
//   satisfaction = mean_t(s_t) * head_sat + bias_sat   (logits)
//
// Row-vector convention throughout: every per-utterance quantity is a row.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "corpus.hpp"
#include "labels.hpp"
#include "random.hpp"

namespace mhch {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Dims {
  std::size_t vocab_size = 120;
  std::size_t d_e = 32;
  std::size_t d_u = 32;
  std::size_t d_s = 32;

  void validate() const {
    if (vocab_size == 0 || d_e == 0 || d_u == 0 || d_s == 0)
      throw ValidationError("model dimensions must be positive");
  }
  bool operator==(const Dims&) const = default;
};

/// Every trainable array of the backbone, addressable by name. The same type
/// doubles as the gradient container.
struct ModelParameters {
  Matrix embedding;     // vocab x d_e
  Matrix utt_proj;      // d_e x d_u
  Matrix utt_bias;      // 1 x d_u
  Matrix ctx_in;        // d_u x d_s
  Matrix ctx_rec;       // d_s x d_s
  Matrix ctx_bias;      // 1 x d_s
  Matrix head_handoff;  // d_s x 2
  Matrix bias_handoff;  // 1 x 2
  Matrix head_sent;     // d_s x 3
  Matrix bias_sent;     // 1 x 3
  Matrix head_sat;      // d_s x 3
  Matrix bias_sat;      // 1 x 3

  static constexpr std::array<std::string_view, 12> kNames{
      "embedding", "utt_proj",  "utt_bias",  "ctx_in",   "ctx_rec",  "ctx_bias",
      "head_handoff", "bias_handoff", "head_sent", "bias_sent", "head_sat", "bias_sat"};

  template <typename F>
  void for_each(F&& f) {
    std::array<Matrix*, 12> arrays{&embedding, &utt_proj,     &utt_bias,     &ctx_in,
                                   &ctx_rec,   &ctx_bias,     &head_handoff, &bias_handoff,
                                   &head_sent, &bias_sent,    &head_sat,     &bias_sat};
    for (std::size_t i = 0; i < arrays.size(); ++i) f(kNames[i], *arrays[i]);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<ModelParameters*>(this)->for_each(
        [&](std::string_view name, Matrix& m) { f(name, static_cast<const Matrix&>(m)); });
  }

  /// Same-shaped container of zeros.
  static ModelParameters zeros(const Dims& d) {
    ModelParameters p;
    p.embedding = Matrix::Zero(d.vocab_size, d.d_e);
    p.utt_proj = Matrix::Zero(d.d_e, d.d_u);
    p.utt_bias = Matrix::Zero(1, d.d_u);
    p.ctx_in = Matrix::Zero(d.d_u, d.d_s);
    p.ctx_rec = Matrix::Zero(d.d_s, d.d_s);
    p.ctx_bias = Matrix::Zero(1, d.d_s);
    p.head_handoff = Matrix::Zero(d.d_s, kNumHandoff);
    p.bias_handoff = Matrix::Zero(1, kNumHandoff);
    p.head_sent = Matrix::Zero(d.d_s, kNumSentiments);
    p.bias_sent = Matrix::Zero(1, kNumSentiments);
    p.head_sat = Matrix::Zero(d.d_s, kNumSatisfaction);
    p.bias_sat = Matrix::Zero(1, kNumSatisfaction);
    return p;
  }

  Dims dims() const {
    return {static_cast<std::size_t>(embedding.rows()), static_cast<std::size_t>(embedding.cols()),
            static_cast<std::size_t>(utt_proj.cols()), static_cast<std::size_t>(ctx_rec.rows())};
  }

  Matrix& at(std::string_view name) {
    Matrix* found = nullptr;
    for_each([&](std::string_view n, Matrix& m) {
      if (n == name) found = &m;
    });
    if (!found) throw ValidationError("no parameter array named \"" + std::string(name) + "\"");
    return *found;
  }

  /// Sum of squares over every array.
  double squared_norm() const {
    double acc = 0.0;
    for_each([&](std::string_view, const Matrix& m) { acc += m.squaredNorm(); });
    return acc;
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](std::string_view, const Matrix& m) { ok = ok && m.allFinite(); });
    return ok;
  }

  void set_zero() {
    for_each([](std::string_view, Matrix& m) { m.setZero(); });
  }

  /// this += scale * other
  void add_scaled(const ModelParameters& other, double scale) {
    std::size_t i = 0;
    std::array<const Matrix*, 12> src{};
    other.for_each([&](std::string_view, const Matrix& m) { src[i++] = &m; });
    i = 0;
    for_each([&](std::string_view, Matrix& m) { m += scale * *src[i++]; });
  }

  bool operator==(const ModelParameters& o) const {
    bool eq = true;
    std::size_t i = 0;
    std::array<const Matrix*, 12> rhs{};
    o.for_each([&](std::string_view, const Matrix& m) { rhs[i++] = &m; });
    i = 0;
    for_each([&](std::string_view, const Matrix& m) {
      const Matrix& r = *rhs[i++];
      eq = eq && m.rows() == r.rows() && m.cols() == r.cols() && m == r;
    });
    return eq;
  }
};

using ParameterGradients = ModelParameters;

inline constexpr double kInitRange = 0.08;

/// Entries i.i.d. Uniform(-0.08, 0.08), filled array by array in kNames order.
inline ModelParameters init_params(const Dims& dims, std::uint64_t seed) {
  dims.validate();
  ModelParameters p = ModelParameters::zeros(dims);
  Rng rng(mix_seed(seed, 0x1A17));
  p.for_each([&](std::string_view, Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        double v = rng.uniform(-kInitRange, kInitRange);
        while (v == -kInitRange) v = rng.uniform(-kInitRange, kInitRange);
        m(r, c) = v;
      }
  });
  return p;
}

/// Row-wise softmax with the usual max shift.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

/// Pullback of a gradient on softmax outputs to its logits, row by row.
inline Matrix softmax_rows_backward(const Matrix& probs, const Matrix& grad_probs) {
  Matrix out(probs.rows(), probs.cols());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const double dot = probs.row(r).dot(grad_probs.row(r));
    out.row(r) = probs.row(r).cwiseProduct((grad_probs.row(r).array() - dot).matrix());
  }
  return out;
}

struct ForwardTrace {
  Matrix token_means;      // L x d_e
  Matrix utterances;       // L x d_u   (h)
  Matrix states;           // L x d_s   (s)
  Matrix handoff_logits;   // L x 2
  Matrix handoff_probs;    // L x 2, columns (normal, transferable)
  Matrix sentiment_logits; // L x 3
  Matrix sentiment_probs;  // L x 3, columns (positive, neutral, negative)
  RowVector satisfaction_logits;  // 3
  RowVector satisfaction_probs;   // 3

  std::size_t length() const { return static_cast<std::size_t>(states.rows()); }
};

inline ForwardTrace encode(const ModelParameters& p, const Dialogue& dialogue) {
  const auto L = static_cast<Eigen::Index>(dialogue.size());
  if (L == 0) throw ValidationError("cannot encode an empty dialogue");
  const Dims dims = p.dims();

  ForwardTrace tr;
  tr.token_means = Matrix::Zero(L, static_cast<Eigen::Index>(dims.d_e));
  for (Eigen::Index t = 0; t < L; ++t) {
    const auto& toks = dialogue.utterances[static_cast<std::size_t>(t)].tokens;
    if (toks.empty()) throw ValidationError("dialogue \"" + dialogue.id + "\" has an empty utterance");
    for (int tok : toks) {
      if (tok < 0 || static_cast<std::size_t>(tok) >= dims.vocab_size)
        throw ValidationError("token id " + std::to_string(tok) + " outside the vocabulary");
      tr.token_means.row(t) += p.embedding.row(tok);
    }
    tr.token_means.row(t) /= static_cast<double>(toks.size());
  }

  // Row-at-a-time products so that position t is bit-identical whatever
  // follows it (matrix-matrix kernels depend on the row count).
  tr.utterances.resize(L, static_cast<Eigen::Index>(dims.d_u));
  tr.states = Matrix::Zero(L, static_cast<Eigen::Index>(dims.d_s));
  tr.handoff_logits.resize(L, kNumHandoff);
  tr.sentiment_logits.resize(L, kNumSentiments);
  for (Eigen::Index t = 0; t < L; ++t) {
    const RowVector token_mean = tr.token_means.row(t);
    tr.utterances.row(t) = (token_mean * p.utt_proj + p.utt_bias.row(0)).array().tanh().matrix();
    const RowVector h = tr.utterances.row(t);
    RowVector pre = h * p.ctx_in + p.ctx_bias.row(0);
    if (t > 0) {
      const RowVector prev = tr.states.row(t - 1);
      pre += prev * p.ctx_rec;
    }
    tr.states.row(t) = pre.array().tanh().matrix();
    const RowVector s = tr.states.row(t);
    tr.handoff_logits.row(t) = s * p.head_handoff + p.bias_handoff.row(0);
    tr.sentiment_logits.row(t) = s * p.head_sent + p.bias_sent.row(0);
  }
  tr.handoff_probs = softmax_rows(tr.handoff_logits);
  tr.sentiment_probs = softmax_rows(tr.sentiment_logits);
  const RowVector pooled = tr.states.colwise().mean();
  tr.satisfaction_logits = pooled * p.head_sat + p.bias_sat.row(0);
  tr.satisfaction_probs = softmax_rows(tr.satisfaction_logits);
  return tr;
}

/// Gradients of a scalar loss with respect to the encoder outputs. Empty
/// matrices are treated as zero.
struct UpstreamGradients {
  Matrix handoff_probs;        // L x 2
  Matrix sentiment_probs;      // L x 3
  RowVector satisfaction_logits;  // 3
  Matrix states;               // L x d_s (direct dependence, e.g. cost scales)
};

namespace detail {

inline void check_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (m.size() != 0 && (m.rows() != rows || m.cols() != cols))
    throw ValidationError(std::string("upstream gradient ") + what + " has shape " +
                          std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                          ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
}

}  // namespace detail

/// Accumulates d(loss)/d(params) into `grads` (which must be shaped like p).
inline void backward(const ModelParameters& p, const Dialogue& dialogue, const ForwardTrace& tr,
                     const UpstreamGradients& up, ParameterGradients& grads) {
  const Eigen::Index L = static_cast<Eigen::Index>(tr.length());
  const Eigen::Index ds = tr.states.cols();
  if (static_cast<Eigen::Index>(dialogue.size()) != L)
    throw ValidationError("trace length does not match the dialogue");
  detail::check_shape(up.handoff_probs, L, 2, "handoff_probs");
  detail::check_shape(up.sentiment_probs, L, 3, "sentiment_probs");
  detail::check_shape(up.states, L, ds, "states");
  if (up.satisfaction_logits.size() != 0 && up.satisfaction_logits.size() != 3)
    throw ValidationError("upstream gradient satisfaction_logits must have 3 entries");

  Matrix d_states = up.states.size() ? up.states : Matrix::Zero(L, ds);

  if (up.handoff_probs.size()) {
    const Matrix dz = softmax_rows_backward(tr.handoff_probs, up.handoff_probs);
    grads.head_handoff.noalias() += tr.states.transpose() * dz;
    grads.bias_handoff += dz.colwise().sum();
    d_states.noalias() += dz * p.head_handoff.transpose();
  }
  if (up.sentiment_probs.size()) {
    const Matrix dz = softmax_rows_backward(tr.sentiment_probs, up.sentiment_probs);
    grads.head_sent.noalias() += tr.states.transpose() * dz;
    grads.bias_sent += dz.colwise().sum();
    d_states.noalias() += dz * p.head_sent.transpose();
  }
  if (up.satisfaction_logits.size()) {
    const RowVector pooled = tr.states.colwise().mean();
    grads.head_sat.noalias() += pooled.transpose() * up.satisfaction_logits;
    grads.bias_sat += up.satisfaction_logits;
    const RowVector d_pooled = up.satisfaction_logits * p.head_sat.transpose();
    d_states.rowwise() += d_pooled / static_cast<double>(L);
  }

  // Back-propagation through time.
  Matrix d_pre(L, ds);
  RowVector carry = RowVector::Zero(ds);
  for (Eigen::Index t = L - 1; t >= 0; --t) {
    const RowVector total = d_states.row(t) + carry;
    d_pre.row(t) = total.cwiseProduct((1.0 - tr.states.row(t).array().square()).matrix());
    carry = d_pre.row(t) * p.ctx_rec.transpose();
  }
  if (L > 1)
    grads.ctx_rec.noalias() +=
        tr.states.topRows(L - 1).transpose() * d_pre.bottomRows(L - 1);
  grads.ctx_in.noalias() += tr.utterances.transpose() * d_pre;
  grads.ctx_bias += d_pre.colwise().sum();

  const Matrix d_h = d_pre * p.ctx_in.transpose();
  const Matrix d_hpre = d_h.cwiseProduct((1.0 - tr.utterances.array().square()).matrix());
  grads.utt_proj.noalias() += tr.token_means.transpose() * d_hpre;
  grads.utt_bias += d_hpre.colwise().sum();

  const Matrix d_means = d_hpre * p.utt_proj.transpose();
  for (Eigen::Index t = 0; t < L; ++t) {
    const auto& toks = dialogue.utterances[static_cast<std::size_t>(t)].tokens;
    const RowVector share = d_means.row(t) / static_cast<double>(toks.size());
    for (int tok : toks) grads.embedding.row(tok) += share;
  }
}

inline ParameterGradients backward(const ModelParameters& p, const Dialogue& dialogue,
                                   const ForwardTrace& tr, const UpstreamGradients& up) {
  ParameterGradients g = ParameterGradients::zeros(p.dims());
  backward(p, dialogue, tr, up, g);
  return g;
}

}  // namespace mhch
