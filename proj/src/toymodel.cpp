// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "unmerge/toymodel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "unmerge/error.hpp"
#include "unmerge/rng.hpp"

namespace unmerge {

namespace {

constexpr float kBaseInitBound = 0.08f;

struct Dims {
  std::size_t vocab, in, hidden, embed, rank;
  int context;
};

Dims dims_of(const ModelConfig& cfg) {
  return {static_cast<std::size_t>(cfg.vocab_size), cfg.input_dim(), static_cast<std::size_t>(cfg.hidden_dim),
          static_cast<std::size_t>(cfg.embed_dim), static_cast<std::size_t>(cfg.lora_rank), cfg.context_len};
}

std::int64_t i64(std::size_t v) { return static_cast<std::int64_t>(v); }

Tensor uniform_tensor(Rng& rng, Shape shape, float bound) {
  const auto n = shape_numel(shape);
  std::vector<float> data(n);
  for (auto& v : data) v = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor(std::move(shape), std::move(data));
}

// Draws in name order: E, W1, W2, b1, b2.
NamedParamSet draw_base(const ModelConfig& cfg, Rng& rng) {
  const auto d = dims_of(cfg);
  NamedParamSet base;
  base.insert("E", uniform_tensor(rng, {i64(d.vocab), i64(d.embed)}, kBaseInitBound));
  base.insert("W1", uniform_tensor(rng, {i64(d.in), i64(d.hidden)}, kBaseInitBound));
  base.insert("W2", uniform_tensor(rng, {i64(d.hidden), i64(d.vocab)}, kBaseInitBound));
  base.insert("b1", uniform_tensor(rng, {i64(d.hidden)}, kBaseInitBound));
  base.insert("b2", uniform_tensor(rng, {i64(d.vocab)}, kBaseInitBound));
  return base;
}

NamedParamSet draw_adapters(const ModelConfig& cfg, Rng& rng) {
  const auto d = dims_of(cfg);
  NamedParamSet adapters;
  const auto a1_bound = static_cast<float>(1.0 / std::sqrt(static_cast<double>(d.in)));
  const auto a2_bound = static_cast<float>(1.0 / std::sqrt(static_cast<double>(d.hidden)));
  adapters.insert("A1", uniform_tensor(rng, {i64(d.rank), i64(d.in)}, a1_bound));
  adapters.insert("A2", uniform_tensor(rng, {i64(d.rank), i64(d.hidden)}, a2_bound));
  adapters.insert("B1", Tensor::zeros({i64(d.hidden), i64(d.rank)}));
  adapters.insert("B2", Tensor::zeros({i64(d.vocab), i64(d.rank)}));
  return adapters;
}

void require_shape(const NamedParamSet& set, const std::string& name, const Shape& shape, const char* what) {
  if (!set.contains(name)) throw StructuralError(std::string(what) + ": missing tensor '" + name + "'");
  if (set.at(name).shape() != shape) throw StructuralError(std::string(what) + ": tensor '" + name + "' has wrong shape");
}

void check_base(const ModelConfig& cfg, const NamedParamSet& base) {
  const auto d = dims_of(cfg);
  if (base.size() != 5) throw StructuralError("base parameters: expected E, W1, W2, b1, b2");
  require_shape(base, "E", {i64(d.vocab), i64(d.embed)}, "base parameters");
  require_shape(base, "W1", {i64(d.in), i64(d.hidden)}, "base parameters");
  require_shape(base, "W2", {i64(d.hidden), i64(d.vocab)}, "base parameters");
  require_shape(base, "b1", {i64(d.hidden)}, "base parameters");
  require_shape(base, "b2", {i64(d.vocab)}, "base parameters");
}

AdapterForm classify_adapters(const ModelConfig& cfg, const NamedParamSet& adapters) {
  if (adapters.empty()) return AdapterForm::none;
  const auto d = dims_of(cfg);
  if (adapters.contains("dW1")) {
    if (adapters.size() != 2) throw StructuralError("dense adapters: expected exactly dW1, dW2");
    require_shape(adapters, "dW1", {i64(d.in), i64(d.hidden)}, "dense adapters");
    require_shape(adapters, "dW2", {i64(d.hidden), i64(d.vocab)}, "dense adapters");
    return AdapterForm::dense;
  }
  if (cfg.lora_rank == 0) throw StructuralError("low-rank adapters given for a model with lora_rank 0");
  if (adapters.size() != 4) throw StructuralError("low-rank adapters: expected exactly A1, A2, B1, B2");
  require_shape(adapters, "A1", {i64(d.rank), i64(d.in)}, "low-rank adapters");
  require_shape(adapters, "A2", {i64(d.rank), i64(d.hidden)}, "low-rank adapters");
  require_shape(adapters, "B1", {i64(d.hidden), i64(d.rank)}, "low-rank adapters");
  require_shape(adapters, "B2", {i64(d.vocab), i64(d.rank)}, "low-rank adapters");
  return AdapterForm::low_rank;
}

std::vector<double> to_double(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// delta[i][j] += scale * sum_k b[j][k] * a[k][i]   (delta is rows x cols, a is r x rows, b is cols x r)
void add_low_rank(std::vector<double>& delta, std::size_t rows, std::size_t cols, std::size_t rank, const Tensor& a,
                  const Tensor& b, double scale) {
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t k = 0; k < rank; ++k) {
      const double bjk = b[j * rank + k];
      if (bjk == 0.0) continue;
      const double s = scale * bjk;
      for (std::size_t i = 0; i < rows; ++i) delta[i * cols + j] += s * a[k * rows + i];
    }
  }
}

std::pair<std::vector<double>, std::vector<double>> low_rank_deltas(const ModelConfig& cfg,
                                                                    const NamedParamSet& adapters) {
  const auto d = dims_of(cfg);
  std::vector<double> d1(d.in * d.hidden, 0.0);
  std::vector<double> d2(d.hidden * d.vocab, 0.0);
  add_low_rank(d1, d.in, d.hidden, d.rank, adapters.at("A1"), adapters.at("B1"), cfg.lora_scale());
  add_low_rank(d2, d.hidden, d.vocab, d.rank, adapters.at("A2"), adapters.at("B2"), cfg.lora_scale());
  return {std::move(d1), std::move(d2)};
}

struct Activations {
  std::vector<double> x;  // input_dim
  std::vector<double> u;  // hidden
  std::vector<double> z;  // vocab
};

void forward(const ModelConfig& cfg, const ToyLM::Weights& w, std::span<const Token> context, Activations& act) {
  const auto d = dims_of(cfg);
  act.x.assign(d.in, 0.0);
  for (int c = 0; c < d.context; ++c) {
    const auto tok = static_cast<std::size_t>(context[c]);
    std::copy_n(w.embed.begin() + static_cast<std::ptrdiff_t>(tok * d.embed), d.embed,
                act.x.begin() + static_cast<std::ptrdiff_t>(c * d.embed));
  }
  act.u = w.b1;
  for (std::size_t i = 0; i < d.in; ++i) {
    const double xi = act.x[i];
    if (xi == 0.0) continue;
    const double* row = w.w1.data() + i * d.hidden;
    for (std::size_t j = 0; j < d.hidden; ++j) act.u[j] += xi * row[j];
  }
  for (auto& v : act.u) v = std::tanh(v);
  act.z = w.b2;
  for (std::size_t j = 0; j < d.hidden; ++j) {
    const double uj = act.u[j];
    const double* row = w.w2.data() + j * d.vocab;
    for (std::size_t v = 0; v < d.vocab; ++v) act.z[v] += uj * row[v];
  }
}

void log_softmax_inplace(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  for (auto& v : z) v -= lse;
}

TokenIds checked_context(const ModelConfig& cfg, std::span<const Token> history) {
  for (Token t : history) {
    if (t < 0 || t >= cfg.vocab_size) {
      throw InputError("token id " + std::to_string(t) + " out of range for vocab_size " +
                       std::to_string(cfg.vocab_size));
    }
  }
  return make_context(history, cfg.context_len);
}

// Gradients of the loss w.r.t. the effective W1, W2 (and optionally E, b1, b2).
struct DenseGrads {
  std::vector<double> embed, w1, b1, w2, b2;
};

DenseGrads backward(const ToyLM& model, std::span<const LogitGrad> loss, bool want_all) {
  const auto& cfg = model.config();
  const auto d = dims_of(cfg);
  const auto& w = model.weights();
  DenseGrads g;
  g.w1.assign(d.in * d.hidden, 0.0);
  g.w2.assign(d.hidden * d.vocab, 0.0);
  if (want_all) {
    g.embed.assign(d.vocab * d.embed, 0.0);
    g.b1.assign(d.hidden, 0.0);
    g.b2.assign(d.vocab, 0.0);
  }
  Activations act;
  std::vector<double> du(d.hidden);
  std::vector<double> dx(d.in);
  for (const auto& item : loss) {
    if (item.dlogits.size() != d.vocab) throw InputError("logit gradient has wrong length");
    const auto ctx = checked_context(cfg, item.context);
    forward(cfg, w, ctx, act);
    const auto& dz = item.dlogits;
    for (std::size_t j = 0; j < d.hidden; ++j) {
      const double uj = act.u[j];
      const double* w2row = w.w2.data() + j * d.vocab;
      double* g2row = g.w2.data() + j * d.vocab;
      double acc = 0.0;
      for (std::size_t v = 0; v < d.vocab; ++v) {
        g2row[v] += uj * dz[v];
        acc += w2row[v] * dz[v];
      }
      du[j] = acc * (1.0 - uj * uj);  // through tanh
    }
    for (std::size_t i = 0; i < d.in; ++i) {
      const double xi = act.x[i];
      double* g1row = g.w1.data() + i * d.hidden;
      const double* w1row = w.w1.data() + i * d.hidden;
      double acc = 0.0;
      for (std::size_t j = 0; j < d.hidden; ++j) {
        g1row[j] += xi * du[j];
        acc += w1row[j] * du[j];
      }
      dx[i] = acc;
    }
    if (want_all) {
      for (std::size_t v = 0; v < d.vocab; ++v) g.b2[v] += dz[v];
      for (std::size_t j = 0; j < d.hidden; ++j) g.b1[j] += du[j];
      for (int c = 0; c < d.context; ++c) {
        const auto tok = static_cast<std::size_t>(ctx[c]);
        for (std::size_t e = 0; e < d.embed; ++e) g.embed[tok * d.embed + e] += dx[c * d.embed + e];
      }
    }
  }
  return g;
}

Tensor to_tensor(Shape shape, const std::vector<double>& data) {
  std::vector<float> f(data.size());
  std::transform(data.begin(), data.end(), f.begin(), [](double v) { return static_cast<float>(v); });
  return Tensor(std::move(shape), std::move(f));
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
  if (context_len < 1) throw ConfigError("context_len must be positive");
  if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
  if (hidden_dim < 1) throw ConfigError("hidden_dim must be positive");
  if (lora_rank < 0) throw ConfigError("lora_rank must be nonnegative");
  if (!(lora_alpha > 0.0)) throw ConfigError("lora_alpha must be positive");
  if (lora_rank > 0) {
    const auto in = static_cast<int>(input_dim());
    if (lora_rank > std::min(in, hidden_dim) || lora_rank > std::min(hidden_dim, vocab_size)) {
      throw ConfigError("lora_rank exceeds min(context_len*embed_dim, hidden_dim) or min(hidden_dim, vocab_size)");
    }
  }
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
  j = {{"vocab_size", cfg.vocab_size}, {"context_len", cfg.context_len}, {"embed_dim", cfg.embed_dim},
       {"hidden_dim", cfg.hidden_dim}, {"lora_rank", cfg.lora_rank},     {"lora_alpha", cfg.lora_alpha},
       {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
  cfg = ModelConfig{};
  if (j.contains("vocab_size")) cfg.vocab_size = j.at("vocab_size").get<int>();
  if (j.contains("context_len")) cfg.context_len = j.at("context_len").get<int>();
  if (j.contains("embed_dim")) cfg.embed_dim = j.at("embed_dim").get<int>();
  if (j.contains("hidden_dim")) cfg.hidden_dim = j.at("hidden_dim").get<int>();
  if (j.contains("lora_rank")) cfg.lora_rank = j.at("lora_rank").get<int>();
  if (j.contains("lora_alpha")) cfg.lora_alpha = j.at("lora_alpha").get<double>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
}

ToyLM::ToyLM(ModelConfig cfg, NamedParamSet base, NamedParamSet adapters)
    : cfg_(cfg), base_(std::move(base)), adapters_(std::move(adapters)) {
  cfg_.validate();
  check_base(cfg_, base_);
  form_ = classify_adapters(cfg_, adapters_);

  auto w = std::make_shared<Weights>();
  w->embed = to_double(base_.at("E"));
  w->w1 = to_double(base_.at("W1"));
  w->b1 = to_double(base_.at("b1"));
  w->w2 = to_double(base_.at("W2"));
  w->b2 = to_double(base_.at("b2"));
  if (form_ == AdapterForm::low_rank) {
    auto [d1, d2] = low_rank_deltas(cfg_, adapters_);
    for (std::size_t i = 0; i < d1.size(); ++i) w->w1[i] += d1[i];
    for (std::size_t i = 0; i < d2.size(); ++i) w->w2[i] += d2[i];
  } else if (form_ == AdapterForm::dense) {
    const auto& d1 = adapters_.at("dW1");
    const auto& d2 = adapters_.at("dW2");
    for (std::size_t i = 0; i < d1.numel(); ++i) w->w1[i] += d1[i];
    for (std::size_t i = 0; i < d2.numel(); ++i) w->w2[i] += d2[i];
  }
  weights_ = std::move(w);
}

ToyLM ToyLM::with_adapters(NamedParamSet adapters) const { return ToyLM(cfg_, base_, std::move(adapters)); }

ToyLM ToyLM::without_adapters() const { return ToyLM(cfg_, base_); }

std::vector<double> ToyLM::logits(std::span<const Token> context) const {
  const auto ctx = checked_context(cfg_, context);
  Activations act;
  forward(cfg_, *weights_, ctx, act);
  return act.z;
}

std::vector<double> ToyLM::log_probs(std::span<const Token> context) const {
  auto z = logits(context);
  log_softmax_inplace(z);
  return z;
}

ToyLM init_model(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  auto base = draw_base(cfg, rng);
  NamedParamSet adapters;
  if (cfg.lora_rank > 0) adapters = draw_adapters(cfg, rng);
  return ToyLM(cfg, std::move(base), std::move(adapters));
}

NamedParamSet init_adapters(const ModelConfig& cfg) {
  cfg.validate();
  if (cfg.lora_rank == 0) throw ConfigError("lora_rank must be positive to create adapters");
  Rng rng(cfg.seed);
  (void)draw_base(cfg, rng);
  return draw_adapters(cfg, rng);
}

NamedParamSet materialize_delta(const ModelConfig& cfg, const NamedParamSet& adapters) {
  const auto form = classify_adapters(cfg, adapters);
  const auto d = dims_of(cfg);
  NamedParamSet out;
  switch (form) {
    case AdapterForm::dense:
      return adapters;
    case AdapterForm::none:
      out.insert("dW1", Tensor::zeros({i64(d.in), i64(d.hidden)}));
      out.insert("dW2", Tensor::zeros({i64(d.hidden), i64(d.vocab)}));
      return out;
    case AdapterForm::low_rank: {
      auto [d1, d2] = low_rank_deltas(cfg, adapters);
      out.insert("dW1", to_tensor({i64(d.in), i64(d.hidden)}, d1));
      out.insert("dW2", to_tensor({i64(d.hidden), i64(d.vocab)}, d2));
      return out;
    }
  }
  return out;
}

NamedParamSet fold_adapters(const ToyLM& model) {
  NamedParamSet out = model.base();
  if (model.adapter_form() == AdapterForm::none) return out;
  const auto& w = model.weights();
  out.set("W1", to_tensor(model.base().at("W1").shape(), w.w1));
  out.set("W2", to_tensor(model.base().at("W2").shape(), w.w2));
  return out;
}

TokenIds make_context(std::span<const Token> history, int context_len) {
  TokenIds ctx(static_cast<std::size_t>(context_len), kPadToken);
  const auto n = std::min(history.size(), ctx.size());
  std::copy(history.end() - static_cast<std::ptrdiff_t>(n), history.end(),
            ctx.end() - static_cast<std::ptrdiff_t>(n));
  return ctx;
}

SequenceLogProb sequence_log_prob(const ToyLM& model, std::span<const Token> prompt,
                                  std::span<const Token> completion) {
  if (completion.empty()) throw InputError("sequence_log_prob: empty completion");
  TokenIds history(prompt.begin(), prompt.end());
  SequenceLogProb out;
  out.per_token.reserve(completion.size());
  for (Token target : completion) {
    if (target < 0 || target >= model.config().vocab_size) {
      throw InputError("completion token " + std::to_string(target) + " out of range");
    }
    const auto lp = model.log_probs(history);
    out.per_token.push_back(lp[static_cast<std::size_t>(target)]);
    out.total += lp[static_cast<std::size_t>(target)];
    history.push_back(target);
  }
  return out;
}

TokenIds greedy_decode(const ToyLM& model, std::span<const Token> prompt, int max_len) {
  if (max_len < 1) throw InputError("greedy_decode: max_len must be at least 1");
  TokenIds history(prompt.begin(), prompt.end());
  TokenIds out;
  const Token end = model.config().end_token();
  while (static_cast<int>(out.size()) < max_len) {
    const auto z = model.logits(history);
    // max_element returns the first maximum, i.e. the lowest id on ties.
    const auto next = static_cast<Token>(std::max_element(z.begin(), z.end()) - z.begin());
    out.push_back(next);
    history.push_back(next);
    if (next == end) break;
  }
  return out;
}

NamedParamSet gradients(const ToyLM& model, std::span<const LogitGrad> loss) {
  const auto& cfg = model.config();
  if (cfg.lora_rank == 0 || model.adapter_form() != AdapterForm::low_rank) {
    throw InputError("gradients: model has no low-rank adapters");
  }
  const auto d = dims_of(cfg);
  const auto g = backward(model, loss, false);
  const double s = cfg.lora_scale();
  const auto& a1 = model.adapters().at("A1");
  const auto& b1 = model.adapters().at("B1");
  const auto& a2 = model.adapters().at("A2");
  const auto& b2 = model.adapters().at("B2");

  // With D = s (B A)^T and G = dL/dD (rows x cols):
  //   dA[k][i] = s sum_j G[i][j] B[j][k],   dB[j][k] = s sum_i G[i][j] A[k][i]
  auto project = [&](const std::vector<double>& grad, std::size_t rows, std::size_t cols, const Tensor& a,
                     const Tensor& b, std::vector<double>& da, std::vector<double>& db) {
    da.assign(d.rank * rows, 0.0);
    db.assign(cols * d.rank, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const double gij = s * grad[i * cols + j];
        if (gij == 0.0) continue;
        for (std::size_t k = 0; k < d.rank; ++k) {
          da[k * rows + i] += gij * b[j * d.rank + k];
          db[j * d.rank + k] += gij * a[k * rows + i];
        }
      }
    }
  };
  std::vector<double> da1, db1, da2, db2;
  project(g.w1, d.in, d.hidden, a1, b1, da1, db1);
  project(g.w2, d.hidden, d.vocab, a2, b2, da2, db2);

  NamedParamSet out;
  out.insert("A1", to_tensor(a1.shape(), da1));
  out.insert("A2", to_tensor(a2.shape(), da2));
  out.insert("B1", to_tensor(b1.shape(), db1));
  out.insert("B2", to_tensor(b2.shape(), db2));
  return out;
}

NamedParamSet base_gradients(const ToyLM& model, std::span<const LogitGrad> loss) {
  if (model.adapter_form() != AdapterForm::none) throw InputError("base_gradients: model must not carry adapters");
  const auto g = backward(model, loss, true);
  const auto& base = model.base();
  NamedParamSet out;
  out.insert("E", to_tensor(base.at("E").shape(), g.embed));
  out.insert("W1", to_tensor(base.at("W1").shape(), g.w1));
  out.insert("W2", to_tensor(base.at("W2").shape(), g.w2));
  out.insert("b1", to_tensor(base.at("b1").shape(), g.b1));
  out.insert("b2", to_tensor(base.at("b2").shape(), g.b2));
  return out;
}

}  // namespace unmerge
