// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "unmerge/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "unmerge/error.hpp"
#include "unmerge/rng.hpp"

namespace unmerge {

namespace {

// log(sigmoid(x)) without overflow.
double log_sigmoid(double x) { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_batch(std::span<const Record> batch, const char* what) {
  if (batch.empty()) throw InputError(std::string(what) + ": empty batch");
}

// Walks every completion position of a record: calls fn(context, target, index).
template <typename Fn>
void for_each_position(const Record& r, int context_len, Fn&& fn) {
  TokenIds history = r.prompt;
  for (std::size_t t = 0; t < r.completion.size(); ++t) {
    fn(make_context(history, context_len), r.completion[t], t);
    history.push_back(r.completion[t]);
  }
}

std::vector<double> softmax_from_log(const std::vector<double>& lp) {
  std::vector<double> p(lp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) p[i] = std::exp(lp[i]);
  return p;
}

// Cycles through a shuffled index range, reshuffling at every wrap.
class Sampler {
 public:
  Sampler(std::size_t n, Rng& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(std::span(order_));
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      rng_.shuffle(std::span(order_));
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  Rng& rng_;
  std::size_t pos_ = 0;
};

void append_scaled(std::vector<LogitGrad>& out, std::vector<LogitGrad>&& in, double scale) {
  for (auto& g : in) {
    for (auto& v : g.dlogits) v *= scale;
    out.push_back(std::move(g));
  }
}

void sgd_step(NamedParamSet& params, const NamedParamSet& grads, double lr) {
  NamedParamSet next;
  for (const auto& [name, p] : params) {
    const auto& g = grads.at(name);
    std::vector<float> data(p.numel());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(p[i] - lr * g[i]);
    next.insert(name, Tensor(p.shape(), std::move(data)));
  }
  params = std::move(next);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

void UnlearnConfig::validate() const {
  if (alpha < 0 || beta_gdr < 0 || gamma < 0) throw ConfigError("alpha, beta_gdr and gamma must be nonnegative");
  if (!(alpha + beta_gdr + gamma > 0)) throw ConfigError("alpha + beta_gdr + gamma must be positive");
  if (!(npo_beta > 0)) throw ConfigError("npo_beta must be positive");
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and nonnegative");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (grad_accum < 1) throw ConfigError("grad_accum must be positive");
  if (snapshot_every < 1) throw ConfigError("snapshot_every must be positive");
}

void to_json(nlohmann::json& j, const UnlearnConfig& cfg) {
  j = {{"alpha", cfg.alpha},       {"beta_gdr", cfg.beta_gdr},     {"gamma", cfg.gamma},
       {"npo_beta", cfg.npo_beta}, {"lr", cfg.lr},                 {"epochs", cfg.epochs},
       {"batch_size", cfg.batch_size}, {"grad_accum", cfg.grad_accum}, {"seed", cfg.seed},
       {"snapshot_every", cfg.snapshot_every}};
}

void from_json(const nlohmann::json& j, UnlearnConfig& cfg) {
  cfg = UnlearnConfig{};
  if (j.contains("alpha")) cfg.alpha = j.at("alpha").get<double>();
  if (j.contains("beta_gdr")) cfg.beta_gdr = j.at("beta_gdr").get<double>();
  if (j.contains("gamma")) cfg.gamma = j.at("gamma").get<double>();
  if (j.contains("npo_beta")) cfg.npo_beta = j.at("npo_beta").get<double>();
  if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
  if (j.contains("grad_accum")) cfg.grad_accum = j.at("grad_accum").get<int>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("snapshot_every")) cfg.snapshot_every = j.at("snapshot_every").get<int>();
}

double npo_loss_from_log_ratios(std::span<const double> log_ratios, double npo_beta) {
  if (log_ratios.empty()) throw InputError("loss_npo: empty batch");
  double sum = 0.0;
  for (double r : log_ratios) sum += log_sigmoid(-npo_beta * r);
  return -(2.0 / npo_beta) * sum / static_cast<double>(log_ratios.size());
}

double kl_divergence(std::span<const double> log_p, std::span<const double> log_q) {
  if (log_p.size() != log_q.size()) throw InputError("kl_divergence: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < log_p.size(); ++i) {
    const double p = std::exp(log_p[i]);
    if (p > 0.0) kl += p * (log_p[i] - log_q[i]);
  }
  return kl;
}

LossValue loss_npo(const ToyLM& model, const ToyLM& ref, std::span<const Record> batch, double npo_beta) {
  require_batch(batch, "loss_npo");
  const auto n = static_cast<double>(batch.size());
  const int c = model.config().context_len;
  std::vector<double> ratios;
  ratios.reserve(batch.size());
  LossValue out;
  for (const auto& r : batch) {
    const auto mine = sequence_log_prob(model, r.prompt, r.completion);
    const auto theirs = sequence_log_prob(ref, r.prompt, r.completion);
    const double ratio = mine.total - theirs.total;
    ratios.push_back(ratio);
    // dL/dratio = (2/n) sigmoid(beta * ratio); dratio/dz = onehot(y) - p
    const double coef = 2.0 / n * sigmoid(npo_beta * ratio);
    for_each_position(r, c, [&](TokenIds ctx, Token target, std::size_t) {
      auto p = softmax_from_log(model.log_probs(ctx));
      for (auto& v : p) v = -coef * v;
      p[static_cast<std::size_t>(target)] += coef;
      out.logit_grads.push_back({std::move(ctx), std::move(p)});
    });
  }
  out.value = npo_loss_from_log_ratios(ratios, npo_beta);
  return out;
}

LossValue loss_gdr(const ToyLM& model, std::span<const Record> batch) {
  require_batch(batch, "loss_gdr");
  const auto n = static_cast<double>(batch.size());
  const int c = model.config().context_len;
  LossValue out;
  for (const auto& r : batch) {
    const auto len = static_cast<double>(r.completion.size());
    const double w = 1.0 / (n * len);
    double nll = 0.0;
    for_each_position(r, c, [&](TokenIds ctx, Token target, std::size_t) {
      const auto lp = model.log_probs(ctx);
      nll -= lp[static_cast<std::size_t>(target)];
      auto p = softmax_from_log(lp);
      p[static_cast<std::size_t>(target)] -= 1.0;
      for (auto& v : p) v *= w;
      out.logit_grads.push_back({std::move(ctx), std::move(p)});
    });
    out.value += nll / len;
  }
  out.value /= n;
  return out;
}

LossValue loss_klr(const ToyLM& model, const ToyLM& ref, std::span<const Record> batch) {
  require_batch(batch, "loss_klr");
  const auto n = static_cast<double>(batch.size());
  const int c = model.config().context_len;
  LossValue out;
  for (const auto& r : batch) {
    const auto len = static_cast<double>(r.completion.size());
    const double w = 1.0 / (n * len);
    double sum = 0.0;
    for_each_position(r, c, [&](TokenIds ctx, Token, std::size_t) {
      const auto lp = model.log_probs(ctx);
      const auto lq = ref.log_probs(ctx);
      const double kl = kl_divergence(lp, lq);
      sum += kl;
      // dKL/dz_j = p_j (log p_j - log q_j - KL)
      std::vector<double> g(lp.size());
      for (std::size_t j = 0; j < lp.size(); ++j) g[j] = w * std::exp(lp[j]) * (lp[j] - lq[j] - kl);
      out.logit_grads.push_back({std::move(ctx), std::move(g)});
    });
    out.value += sum / len;
  }
  out.value /= n;
  return out;
}

std::string TrainTrace::to_csv() const {
  std::string out = "step,epoch,loss_total,loss_npo,loss_gdr,loss_klr\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + fmt_double(r.epoch) + "," + fmt_double(r.loss_total) + "," +
           fmt_double(r.loss_npo) + "," + fmt_double(r.loss_gdr) + "," + fmt_double(r.loss_klr) + "\n";
  }
  return out;
}

int steps_per_epoch(std::size_t forget_size, const UnlearnConfig& cfg) {
  const auto per_step = static_cast<std::size_t>(cfg.batch_size) * static_cast<std::size_t>(cfg.grad_accum);
  return static_cast<int>((forget_size + per_step - 1) / per_step);
}

TrainResult train(const ToyLM& base, std::span<const Record> data, const UnlearnConfig& cfg) {
  cfg.validate();
  const auto forget = select_split(data, Split::forget);
  const auto retain = select_split(data, Split::retain);
  if (forget.empty()) throw DataError("train: data has no forget records");
  if (retain.empty()) throw DataError("train: data has no retain records");

  const ToyLM ref = base.without_adapters();
  NamedParamSet adapters = base.adapter_form() == AdapterForm::low_rank ? base.adapters() : init_adapters(base.config());
  ToyLM model = base.with_adapters(adapters);

  Rng rng(cfg.seed);
  Sampler forget_sampler(forget.size(), rng);
  Sampler retain_sampler(retain.size(), rng);

  const int per_epoch = steps_per_epoch(forget.size(), cfg);
  const int total_steps = per_epoch * cfg.epochs;

  TrainTrace trace;
  trace.snapshots.push_back({0, adapters});

  std::vector<Record> fb;
  std::vector<Record> rb;
  for (int step = 1; step <= total_steps; ++step) {
    TraceRow row;
    row.step = step;
    row.epoch = static_cast<double>(step) / per_epoch;
    std::vector<LogitGrad> combined;
    for (int micro = 0; micro < cfg.grad_accum; ++micro) {
      fb.clear();
      rb.clear();
      for (int b = 0; b < cfg.batch_size; ++b) {
        fb.push_back(forget[forget_sampler.next()]);
        rb.push_back(retain[retain_sampler.next()]);
      }
      auto npo = loss_npo(model, ref, fb, cfg.npo_beta);
      auto gdr = loss_gdr(model, rb);
      auto klr = loss_klr(model, ref, rb);
      const double inv = 1.0 / cfg.grad_accum;
      row.loss_npo += npo.value * inv;
      row.loss_gdr += gdr.value * inv;
      row.loss_klr += klr.value * inv;
      append_scaled(combined, std::move(npo.logit_grads), cfg.alpha * inv);
      append_scaled(combined, std::move(gdr.logit_grads), cfg.beta_gdr * inv);
      append_scaled(combined, std::move(klr.logit_grads), cfg.gamma * inv);
    }
    row.loss_total = cfg.alpha * row.loss_npo + cfg.beta_gdr * row.loss_gdr + cfg.gamma * row.loss_klr;
    trace.rows.push_back(row);

    sgd_step(adapters, gradients(model, combined), cfg.lr);
    model = base.with_adapters(adapters);
    if (step % cfg.snapshot_every == 0 || step == total_steps) trace.snapshots.push_back({step, adapters});
  }
  return {std::move(model), std::move(trace)};
}

void VanillaConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (!(lr >= 0)) throw ConfigError("lr must be nonnegative");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
}

void to_json(nlohmann::json& j, const VanillaConfig& cfg) {
  j = {{"epochs", cfg.epochs},
       {"lr", cfg.lr},
       {"momentum", cfg.momentum},
       {"batch_size", cfg.batch_size},
       {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, VanillaConfig& cfg) {
  cfg = VanillaConfig{};
  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
  if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
  if (j.contains("momentum")) cfg.momentum = j.at("momentum").get<double>();
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
}

ToyLM train_vanilla(const ToyLM& init, std::span<const Record> records, const VanillaConfig& cfg) {
  cfg.validate();
  if (records.empty()) throw DataError("train_vanilla: no records");
  ToyLM model = init.without_adapters();
  NamedParamSet params = model.base();
  std::map<std::string, std::vector<double>> velocity;
  for (const auto& [name, t] : params) velocity[name].assign(t.numel(), 0.0);

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Record> batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
        batch.push_back(records[order[k]]);
      }
      const auto loss = loss_gdr(model, batch);
      const auto grads = base_gradients(model, loss.logit_grads);
      NamedParamSet next;
      for (const auto& [name, p] : params) {
        const auto& g = grads.at(name);
        auto& v = velocity[name];
        std::vector<float> data(p.numel());
        for (std::size_t i = 0; i < data.size(); ++i) {
          v[i] = cfg.momentum * v[i] + g[i];
          data[i] = static_cast<float>(p[i] - cfg.lr * v[i]);
        }
        next.insert(name, Tensor(p.shape(), std::move(data)));
      }
      params = std::move(next);
      model = ToyLM(model.config(), params);
    }
  }
  return model;
}

}  // namespace unmerge
