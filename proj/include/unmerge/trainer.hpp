// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "unmerge/datagen.hpp"
#include "unmerge/toymodel.hpp"

namespace unmerge {

// Coefficients of L_total = alpha * L_npo + beta_gdr * L_gdr + gamma * L_klr
// and the SGD schedule that minimizes it.
struct UnlearnConfig {
  double alpha = 0.4;
  double beta_gdr = 0.4;
  double gamma = 0.2;
  double npo_beta = 0.5;  // NPO temperature
  double lr = 0.4;
  int epochs = 5;
  int batch_size = 1;
  int grad_accum = 4;
  std::uint64_t seed = 42;
  int snapshot_every = 10;

  void validate() const;

  bool operator==(const UnlearnConfig&) const = default;
};

void to_json(nlohmann::json& j, const UnlearnConfig& cfg);
void from_json(const nlohmann::json& j, UnlearnConfig& cfg);

// A loss value together with dL/dlogits at every scored position, which is
// what gradients() consumes.
struct LossValue {
  double value = 0.0;
  std::vector<LogitGrad> logit_grads;
};

// -(2/beta) * mean_i log sigmoid(-beta * r_i) for sequence log-ratios r_i.
double npo_loss_from_log_ratios(std::span<const double> log_ratios, double npo_beta);

// KL(p || q) from log-probabilities, summed over the full vocabulary.
double kl_divergence(std::span<const double> log_p, std::span<const double> log_q);

// NPO on forget records; the log-ratio is log pi_theta(y|x) - log pi_ref(y|x)
// summed over completion tokens.
LossValue loss_npo(const ToyLM& model, const ToyLM& ref, std::span<const Record> batch, double npo_beta);

// Mean over records of the per-token teacher-forced cross-entropy.
LossValue loss_gdr(const ToyLM& model, std::span<const Record> batch);

// Mean over records of the per-position KL(pi_theta || pi_ref) on completions.
LossValue loss_klr(const ToyLM& model, const ToyLM& ref, std::span<const Record> batch);

struct TraceRow {
  int step = 0;
  double epoch = 0.0;
  double loss_total = 0.0;
  double loss_npo = 0.0;
  double loss_gdr = 0.0;
  double loss_klr = 0.0;
};

struct Snapshot {
  int step = 0;
  NamedParamSet adapters;
};

struct TrainTrace {
  std::vector<TraceRow> rows;
  std::vector<Snapshot> snapshots;

  // step,epoch,loss_total,loss_npo,loss_gdr,loss_klr
  [[nodiscard]] std::string to_csv() const;
};

struct TrainResult {
  ToyLM model;
  TrainTrace trace;
};

// Plain SGD on the adapters of `base` (fresh adapters are created when it has
// none). Each step accumulates grad_accum micro-batches, each made of one
// forget batch and one retain batch. The reference model is base without
// adapters. Snapshots are taken at step 0, every snapshot_every steps and at
// the final step.
TrainResult train(const ToyLM& base, std::span<const Record> data, const UnlearnConfig& cfg);

// Steps per epoch: one epoch is one pass over the forget split.
int steps_per_epoch(std::size_t forget_size, const UnlearnConfig& cfg);

// Full-parameter cross-entropy training that turns a randomly initialized
// model into the "vanilla" model which has memorized the given records.
struct VanillaConfig {
  int epochs = 100;
  double lr = 0.1;
  double momentum = 0.9;
  int batch_size = 16;
  std::uint64_t seed = 7;

  void validate() const;

  bool operator==(const VanillaConfig&) const = default;
};

void to_json(nlohmann::json& j, const VanillaConfig& cfg);
void from_json(const nlohmann::json& j, VanillaConfig& cfg);

// Returns an adapter-free model whose base weights were trained on `records`.
ToyLM train_vanilla(const ToyLM& init, std::span<const Record> records, const VanillaConfig& cfg);

}  // namespace unmerge
