// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "unmerge/tensor_store.hpp"

namespace unmerge {

using Token = std::int32_t;
using TokenIds = std::vector<Token>;

inline constexpr Token kPadToken = 0;

struct ModelConfig {
  int vocab_size = 64;
  int context_len = 5;
  int embed_dim = 8;
  int hidden_dim = 96;
  int lora_rank = 32;
  double lora_alpha = 32.0;
  std::uint64_t seed = 0;

  void validate() const;

  [[nodiscard]] std::size_t input_dim() const { return static_cast<std::size_t>(context_len) * embed_dim; }
  [[nodiscard]] double lora_scale() const { return lora_rank > 0 ? lora_alpha / lora_rank : 0.0; }
  [[nodiscard]] Token end_token() const { return vocab_size - 1; }

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

// How the adapter set of a model is represented.
//   low_rank: A1 (r x C*d), B1 (h x r), A2 (r x h), B2 (V x r)
//   dense:    dW1 (C*d x h), dW2 (h x V), e.g. the result of a merge
enum class AdapterForm { none, low_rank, dense };

// Fixed-context feed-forward next-token model:
//   x = concat(E[t_1..t_C]);  u = tanh(x W1 + b1);  z = u W2 + b2
// with W1 and W2 replaced by their adapter-augmented versions. For low-rank
// adapters the delta of W1 is scale * (B1 A1)^T (and likewise for W2), where
// scale = lora_alpha / r. Instances are immutable; effective weights are
// materialized once at construction.
class ToyLM {
 public:
  ToyLM(ModelConfig cfg, NamedParamSet base, NamedParamSet adapters = {});

  [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const NamedParamSet& base() const noexcept { return base_; }
  [[nodiscard]] const NamedParamSet& adapters() const noexcept { return adapters_; }
  [[nodiscard]] AdapterForm adapter_form() const noexcept { return form_; }

  [[nodiscard]] ToyLM with_adapters(NamedParamSet adapters) const;
  [[nodiscard]] ToyLM without_adapters() const;

  // Next-token log-probabilities for a context. Shorter contexts are
  // left-padded with kPadToken; longer ones are truncated to the last C tokens.
  [[nodiscard]] std::vector<double> log_probs(std::span<const Token> context) const;
  [[nodiscard]] std::vector<double> logits(std::span<const Token> context) const;

  // Materialized effective weights, row-major, in double precision.
  struct Weights {
    std::vector<double> embed;  // V x d
    std::vector<double> w1;     // C*d x h
    std::vector<double> b1;     // h
    std::vector<double> w2;     // h x V
    std::vector<double> b2;     // V
  };
  [[nodiscard]] const Weights& weights() const noexcept { return *weights_; }

 private:
  ModelConfig cfg_;
  NamedParamSet base_;
  NamedParamSet adapters_;
  AdapterForm form_ = AdapterForm::none;
  std::shared_ptr<const Weights> weights_;
};

// Base weights ~ U(-0.08, 0.08); A factors ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in));
// B factors zero, so a fresh model computes exactly the base function.
ToyLM init_model(const ModelConfig& cfg);

// Fresh low-rank adapters drawn from the same stream init_model would use.
NamedParamSet init_adapters(const ModelConfig& cfg);

// Effective dense deltas {dW1, dW2} of an adapter set of either form.
NamedParamSet materialize_delta(const ModelConfig& cfg, const NamedParamSet& adapters);

// Folds the adapters into the base weights (base + delta, rounded to f32).
NamedParamSet fold_adapters(const ToyLM& model);

// Last C tokens of history, left-padded with kPadToken.
TokenIds make_context(std::span<const Token> history, int context_len);

struct SequenceLogProb {
  double total = 0.0;
  std::vector<double> per_token;
};

// Teacher-forced log-probability of completion given prompt.
SequenceLogProb sequence_log_prob(const ToyLM& model, std::span<const Token> prompt,
                                  std::span<const Token> completion);

// Greedy argmax decoding (ties -> lowest id); stops after max_len tokens or
// once the end token has been emitted (the end token is kept in the output).
TokenIds greedy_decode(const ToyLM& model, std::span<const Token> prompt, int max_len);

// dL/dlogits at one scored position. A differentiable loss over a batch is
// represented by the list of these it produces.
struct LogitGrad {
  TokenIds context;
  std::vector<double> dlogits;
};

// Reverse-mode gradients of the loss w.r.t. the low-rank adapter factors
// (A1, A2, B1, B2); base weights are treated as constants.
NamedParamSet gradients(const ToyLM& model, std::span<const LogitGrad> loss);

// Gradients w.r.t. the base parameters (E, W1, W2, b1, b2) of an adapter-free
// model; used when building the vanilla model.
NamedParamSet base_gradients(const ToyLM& model, std::span<const LogitGrad> loss);

}  // namespace unmerge
