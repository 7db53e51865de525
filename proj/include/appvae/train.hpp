#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "appvae/events.hpp"
#include "appvae/model.hpp"
#include "appvae/objective.hpp"
#include "json.hpp"

namespace appvae {

struct TrainConfig {
  int epochs = 1500;
  int batch_size = 32;
  double learning_rate = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 5.0;
  std::uint64_t seed = 0;
  double val_fraction = 0.3;
  int eval_samples = 1500;
  int threads = 1;   // fan-out for validation passes; batch updates stay serial
  double kl_beta = 1.0;  // optional KL weight during backprop; logs and model
                         // selection always use the unit-weight loss

  void validate() const {
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
    if (!(kl_beta >= 0.0)) throw ValidationError("kl_beta must be >= 0");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
      throw ValidationError("val_fraction must be in (0, 1)");
    if (eval_samples < 1) throw ValidationError("eval_samples must be >= 1");
  }
};

struct EpochLoss {
  double total = 0.0;
  double action = 0.0;
  double time = 0.0;
  double kl = 0.0;
};

struct TrainResult {
  Model model;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  Dataset train_split;
  Dataset val_split;
};

namespace detail {

inline void accumulate(EpochLoss& agg, const LossBreakdown& bd) {
  agg.total += bd.total;
  agg.action += bd.action_nll;
  agg.time += bd.time_nll;
  agg.kl += bd.kl;
}

inline EpochLoss per_step(const EpochLoss& agg, std::size_t steps) {
  const double n = static_cast<double>(steps);
  return {agg.total / n, agg.action / n, agg.time / n, agg.kl / n};
}

inline nlohmann::json loss_json(const EpochLoss& l) {
  return {{"total", l.total}, {"action", l.action}, {"time", l.time}, {"kl", l.kl}};
}

// Validation loss with noise fixed per (sequence, step) across epochs, so
// model selection compares epochs on identical draws. Sequences are
// independent; the reduction runs in index order, so the result does not
// depend on the thread count.
inline EpochLoss validation_loss(const Model& model, const Dataset& val, std::uint64_t seed,
                                 int threads) {
  std::vector<LossBreakdown> partial(val.sequences.size());
  parallel_for(val.sequences.size(), threads, [&](std::size_t i) {
    const ActionSequence& seq = val.sequences[i];
    RngNoise noise(derive_seed(derive_seed(seed, "val_noise"), content_hash(seq)));
    Tape tape;
    partial[i] = sequence_loss(tape, model, seq, noise).second;
  });
  EpochLoss agg;
  std::size_t steps = 0;
  for (std::size_t i = 0; i < partial.size(); ++i) {
    if (!std::isfinite(partial[i].total))
      throw NumericalError("non-finite validation loss on sequence " + std::to_string(i));
    accumulate(agg, partial[i]);
    steps += val.sequences[i].size();
  }
  return per_step(agg, steps);
}

}  // namespace detail

// Trains on a deterministic 1 - val_fraction / val_fraction split of the
// input, logging one JSON record per epoch, and returns the model restored
// to the epoch with the lowest validation loss. The initial parameters count
// as epoch 0, so the result can never validate worse than the init.
inline TrainResult train(const Dataset& dataset, const ModelConfig& model_cfg,
                         const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  model_cfg.validate();
  validate_dataset(dataset);
  if (dataset.num_categories != model_cfg.num_categories)
    throw ValidationError("dataset K=" + std::to_string(dataset.num_categories) +
                          " does not match model K=" + std::to_string(model_cfg.num_categories));

  auto [train_set, val_set] = split_dataset(dataset, 1.0 - cfg.val_fraction, cfg.seed);
  Model model(model_cfg, derive_seed(cfg.seed, "model"));

  if (log) {
    nlohmann::json head;
    head["record"] = "config";
    head["model"] = model_cfg;
    head["train"] = {{"epochs", cfg.epochs},     {"batch_size", cfg.batch_size},
                     {"learning_rate", cfg.learning_rate}, {"grad_clip", cfg.grad_clip},
                     {"seed", cfg.seed},         {"val_fraction", cfg.val_fraction}};
    head["split"] = {{"train_sequences", train_set.sequences.size()},
                     {"val_sequences", val_set.sequences.size()}};
    *log << head.dump() << '\n';
  }

  EpochLoss val = detail::validation_loss(model, val_set, cfg.seed, cfg.threads);
  double best_val = val.total;
  int best_epoch = 0;
  auto best_values = model.store().snapshot_values();
  if (log) {
    nlohmann::json rec;
    rec["record"] = "epoch";
    rec["epoch"] = 0;
    rec["val"] = detail::loss_json(val);
    *log << rec.dump() << '\n';
  }

  std::vector<std::size_t> order(train_set.sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    SplitMix64 shuffle_rng(derive_seed(derive_seed(cfg.seed, "shuffle"), epoch));
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.bounded(i + 1)]);

    EpochLoss train_agg;
    std::size_t train_steps = 0;
    const std::uint64_t epoch_seed = derive_seed(derive_seed(cfg.seed, "noise"), epoch);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double batch_count = static_cast<double>(stop - start);
      model.store().zero_grads();
      for (std::size_t i = start; i < stop; ++i) {
        const ActionSequence& seq = train_set.sequences[order[i]];
        RngNoise noise(derive_seed(epoch_seed, order[i]));
        Tape tape;
        const auto [loss_id, bd] = sequence_loss(tape, model, seq, noise, cfg.kl_beta);
        if (!std::isfinite(bd.total))
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(start / cfg.batch_size) + ", sequence " +
                               std::to_string(order[i]));
        // Per-sequence mean over steps, averaged over the batch.
        tape.backward(loss_id, 1.0 / (static_cast<double>(seq.size()) * batch_count));
        detail::accumulate(train_agg, bd);
        train_steps += seq.size();
      }
      model.store().clip_grads_global_norm(cfg.grad_clip);
      model.store().adam_step(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    }
    model.store().zero_grads();

    val = detail::validation_loss(model, val_set, cfg.seed, cfg.threads);
    if (val.total < best_val) {
      best_val = val.total;
      best_epoch = epoch;
      best_values = model.store().snapshot_values();
    }
    if (log) {
      nlohmann::json rec;
      rec["record"] = "epoch";
      rec["epoch"] = epoch;
      rec["train"] = detail::loss_json(detail::per_step(train_agg, train_steps));
      rec["val"] = detail::loss_json(val);
      *log << rec.dump() << '\n';
    }
  }

  model.store().restore_values(best_values);
  if (log) {
    nlohmann::json rec;
    rec["record"] = "best";
    rec["epoch"] = best_epoch;
    rec["val_total"] = best_val;
    *log << rec.dump() << '\n';
  }
  return TrainResult{std::move(model), best_epoch, best_val, std::move(train_set),
                     std::move(val_set)};
}

}  // namespace appvae
