#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "appvae/events.hpp"
#include "appvae/model.hpp"
#include "appvae/objective.hpp"
#include "appvae/train.hpp"
#include "appvae/util.hpp"

namespace appvae {

// Evaluation sub-seeds are derived from the content hash of the visible
// history, not from sequence position: predictions at step n depend only on
// x_{1:n-1} and the seed, duplicates of a sequence score identically, and
// batch order or thread count cannot change any result.

// Per-step log-likelihood estimate. For VAE variants this is importance
// sampling with S posterior draws per step:
//   log p(x_n | x_{1:n-1}) ~= logsumexp_s[ log p(x_n|z_s)
//       + log prior(z_s) - log posterior(z_s) ] - log S.
// Baselines have no latent code, so the exact factorized log-likelihood is
// returned (S is ignored). TD-LSTM carries no time density; its value covers
// the categorical term only.
inline std::vector<double> importance_sampled_ll(const Model& model, const ActionSequence& seq,
                                                 int S, std::uint64_t seed) {
  if (seq.events.empty()) throw ValidationError("importance_sampled_ll: empty sequence");
  if (S < 1) throw ValidationError("importance_sampled_ll: S must be >= 1");
  const ModelConfig& cfg = model.config();
  const std::vector<std::uint64_t> hashes = prefix_hashes(seq);
  const std::uint64_t base = derive_seed(seed, "isll");
  std::vector<double> ll(seq.size());
  SequenceEncoder enc(model);

  if (!model.is_vae()) {
    for (std::size_t n = 0; n < seq.size(); ++n) {
      const ActionEvent& ev = seq.events[n];
      const std::vector<double>& h = enc.encoder_hidden();
      double v = action_nll_from_log(model.action_log_probs_values(h), ev.category_id);
      if (cfg.variant == Variant::app_lstm)
        v += time_nll(model.lambda_values(h), ev.inter_arrival, cfg.delta_tau);
      ll[n] = -v;
      enc.consume(ev);
    }
    return ll;
  }

  std::vector<double> eps(cfg.latent_dim);
  std::vector<double> weights(S);
  for (std::size_t n = 0; n < seq.size(); ++n) {
    const ActionEvent& ev = seq.events[n];
    const GaussianParams prior = enc.prior_params();
    enc.consume(ev);
    const GaussianParams posterior = enc.posterior_params();
    SplitMix64 rng(derive_seed(base, hashes[n + 1]));
    for (int s = 0; s < S; ++s) {
      rng.fill_normal(eps);
      const std::vector<double> z = sample_latent_values(posterior, eps);
      const double recon =
          -action_nll_from_log(model.action_log_probs_values(z), ev.category_id) -
          time_nll(model.lambda_values(z), ev.inter_arrival, cfg.delta_tau);
      weights[s] = recon + gaussian_log_pdf(z, prior) - gaussian_log_pdf(z, posterior);
    }
    ll[n] = logsumexp(weights) - std::log(static_cast<double>(S));
  }
  return ll;
}

enum class PredictStrategy { mode, average };

inline PredictStrategy strategy_from_string(const std::string& s) {
  if (s == "mode") return PredictStrategy::mode;
  if (s == "average") return PredictStrategy::average;
  throw ValidationError("unknown strategy: " + s + " (expected mode|average)");
}

struct Prediction {
  int category = 0;
  double expected_tau = 0.0;
};

namespace detail {

inline int argmax_low(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;  // ties resolve to the lowest index
  return best;
}

// S prior draws; mode = most frequent per-sample argmax, average = argmax of
// the mean probability vector. expected_tau averages 1/lambda over all
// samples unless tau_from_mode_samples restricts it to samples whose argmax
// is the predicted category.
inline Prediction predict_from_prior(const Model& model, const GaussianParams& prior, int S,
                                     PredictStrategy strategy, SplitMix64& rng,
                                     bool tau_from_mode_samples) {
  const ModelConfig& cfg = model.config();
  std::vector<double> eps(cfg.latent_dim);
  std::vector<int> votes(cfg.num_categories, 0);
  std::vector<double> mean_probs(cfg.num_categories, 0.0);
  std::vector<int> sample_argmax(S);
  std::vector<double> sample_inv_lambda(S);
  for (int s = 0; s < S; ++s) {
    rng.fill_normal(eps);
    const std::vector<double> z = sample_latent_values(prior, eps);
    const std::vector<double> probs = model.action_probs_values(z);
    const int am = argmax_low(probs);
    votes[am] += 1;
    sample_argmax[s] = am;
    for (int k = 0; k < cfg.num_categories; ++k) mean_probs[k] += probs[k];
    sample_inv_lambda[s] = 1.0 / model.lambda_values(z);
  }
  Prediction out;
  if (strategy == PredictStrategy::mode) {
    int best = 0;
    for (int k = 1; k < cfg.num_categories; ++k)
      if (votes[k] > votes[best]) best = k;
    out.category = best;
  } else {
    out.category = argmax_low(mean_probs);
  }
  double tau_sum = 0.0;
  int tau_count = 0;
  for (int s = 0; s < S; ++s) {
    if (tau_from_mode_samples && sample_argmax[s] != out.category) continue;
    tau_sum += sample_inv_lambda[s];
    ++tau_count;
  }
  if (tau_count == 0) {  // no sample voted for the chosen category; fall back to all
    for (int s = 0; s < S; ++s) tau_sum += sample_inv_lambda[s];
    tau_count = S;
  }
  out.expected_tau = tau_sum / tau_count;
  return out;
}

inline Prediction predict_baseline(const Model& model, std::span<const double> h) {
  Prediction out;
  out.category = argmax_low(model.action_probs_values(h));
  out.expected_tau = model.config().variant == Variant::app_lstm
                         ? 1.0 / model.lambda_values(h)
                         : model.tau_hat_values(h);
  return out;
}

}  // namespace detail

// Predict the event following `history` (empty history predicts the first
// event via the begin-of-sequence context).
inline Prediction predict_next(const Model& model, const ActionSequence& history, int S,
                               PredictStrategy strategy, std::uint64_t seed,
                               bool tau_from_mode_samples = false) {
  if (S < 1) throw ValidationError("predict_next: S must be >= 1");
  SequenceEncoder enc(model);
  enc.consume(history);
  if (!model.is_vae()) return detail::predict_baseline(model, enc.encoder_hidden());
  SplitMix64 rng(derive_seed(derive_seed(seed, "pred"), content_hash(history)));
  return detail::predict_from_prior(model, enc.prior_params(), S, strategy, rng,
                                    tau_from_mode_samples);
}

struct SequenceScore {
  int sequence_id = 0;
  std::size_t steps = 0;
  double ll_sum = 0.0;
  double ll_mean = 0.0;
};

struct EvalReport {
  double accuracy_percent = 0.0;
  double mae = 0.0;
  double mean_expected_tau = 0.0;
  double ll_per_step_mean = 0.0;      // pooled over every step
  double ll_per_sequence_sum_mean = 0.0;
  std::size_t total_steps = 0;
  std::vector<SequenceScore> per_sequence;
};

// Teacher-forced evaluation: at every step the true history feeds the model,
// the prediction is compared against the true next event, and the per-step
// log-likelihood is estimated with S samples.
inline EvalReport evaluate(const Model& model, const Dataset& data, int S,
                           PredictStrategy strategy, std::uint64_t seed, int threads = 1,
                           bool tau_from_mode_samples = false) {
  validate_dataset(data);
  if (data.num_categories != model.config().num_categories)
    throw ValidationError("dataset K does not match the checkpoint");
  const std::uint64_t pred_base = derive_seed(seed, "pred");

  struct PerSeq {
    long correct = 0;
    double abs_err = 0.0;
    double tau_sum = 0.0;
    double ll_sum = 0.0;
    std::size_t steps = 0;
  };
  std::vector<PerSeq> partial(data.sequences.size());

  parallel_for(data.sequences.size(), threads, [&](std::size_t i) {
    const ActionSequence& seq = data.sequences[i];
    const std::vector<std::uint64_t> hashes = prefix_hashes(seq);
    PerSeq acc;
    SequenceEncoder enc(model);
    for (std::size_t n = 0; n < seq.size(); ++n) {
      const ActionEvent& ev = seq.events[n];
      Prediction pred;
      if (model.is_vae()) {
        SplitMix64 rng(derive_seed(pred_base, hashes[n]));
        pred = detail::predict_from_prior(model, enc.prior_params(), S, strategy, rng,
                                          tau_from_mode_samples);
      } else {
        pred = detail::predict_baseline(model, enc.encoder_hidden());
      }
      acc.correct += pred.category == ev.category_id ? 1 : 0;
      acc.abs_err += std::abs(pred.expected_tau - ev.inter_arrival);
      acc.tau_sum += pred.expected_tau;
      enc.consume(ev);
    }
    const std::vector<double> ll = importance_sampled_ll(model, seq, S, seed);
    for (double v : ll) acc.ll_sum += v;
    acc.steps = seq.size();
    partial[i] = acc;
  });

  EvalReport report;
  double ll_total = 0.0, seq_sum_total = 0.0, abs_err = 0.0, tau_total = 0.0;
  long correct = 0;
  for (std::size_t i = 0; i < partial.size(); ++i) {
    const PerSeq& p = partial[i];
    report.per_sequence.push_back({static_cast<int>(i), p.steps, p.ll_sum,
                                   p.ll_sum / static_cast<double>(p.steps)});
    report.total_steps += p.steps;
    ll_total += p.ll_sum;
    seq_sum_total += p.ll_sum;
    abs_err += p.abs_err;
    tau_total += p.tau_sum;
    correct += p.correct;
  }
  const double steps = static_cast<double>(report.total_steps);
  report.accuracy_percent = 100.0 * static_cast<double>(correct) / steps;
  report.mae = abs_err / steps;
  report.mean_expected_tau = tau_total / steps;
  report.ll_per_step_mean = ll_total / steps;
  report.ll_per_sequence_sum_mean = seq_sum_total / static_cast<double>(partial.size());
  return report;
}

// Autoregressive generation. Report mode emits (argmax category, 1/lambda);
// stochastic mode samples the category and an Exponential(lambda) time. The
// latent is drawn from the (learned) prior in both modes, so identical seeds
// give identical outputs.
inline ActionSequence generate(const Model& model, const ActionSequence& history, int num_steps,
                               std::uint64_t seed, bool stochastic) {
  if (num_steps < 1) throw ValidationError("generate: num_steps must be >= 1");
  const ModelConfig& cfg = model.config();
  SplitMix64 rng(derive_seed(seed, "gen"));
  SequenceEncoder enc(model);
  enc.consume(history);
  ActionSequence out;
  std::vector<double> eps(cfg.latent_dim);
  for (int step = 0; step < num_steps; ++step) {
    std::vector<double> probs;
    double lambda = 0.0, tau_direct = -1.0;
    if (model.is_vae()) {
      rng.fill_normal(eps);
      const std::vector<double> z = sample_latent_values(enc.prior_params(), eps);
      probs = model.action_probs_values(z);
      lambda = model.lambda_values(z);
    } else {
      const std::vector<double>& h = enc.encoder_hidden();
      probs = model.action_probs_values(h);
      if (cfg.variant == Variant::app_lstm) lambda = model.lambda_values(h);
      else tau_direct = model.tau_hat_values(h);
    }
    ActionEvent ev;
    if (stochastic) {
      ev.category_id = rng.categorical(probs);
      ev.inter_arrival = tau_direct >= 0.0 ? tau_direct : rng.exponential(lambda);
    } else {
      ev.category_id = detail::argmax_low(probs);
      ev.inter_arrival = tau_direct >= 0.0 ? tau_direct : 1.0 / lambda;
    }
    out.events.push_back(ev);
    enc.consume(ev);
  }
  return out;
}

// Rank sequences by mean per-step log-likelihood, descending; ties break on
// the lower sequence id.
inline std::vector<std::pair<int, double>> anomaly_rank(const Model& model, const Dataset& data,
                                                        int S, std::uint64_t seed,
                                                        int threads = 1) {
  validate_dataset(data);
  if (data.num_categories != model.config().num_categories)
    throw ValidationError("dataset K does not match the checkpoint");
  std::vector<std::pair<int, double>> scores(data.sequences.size());
  parallel_for(data.sequences.size(), threads, [&](std::size_t i) {
    const std::vector<double> ll = importance_sampled_ll(model, data.sequences[i], S, seed);
    double sum = 0.0;
    for (double v : ll) sum += v;
    scores[i] = {static_cast<int>(i), sum / static_cast<double>(ll.size())};
  });
  std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return scores;
}

struct TraversalRow {
  double z_value = 0.0;
  StepDistribution dist;
};

// Sweep one latent coordinate of the next-step prior over
// [mean - 5 sigma, mean + 5 sigma] while the other coordinates stay at one
// sampled z. A single point lands exactly on the mean.
inline std::vector<TraversalRow> latent_traversal(const Model& model,
                                                  const ActionSequence& history, int dim,
                                                  int num_points, std::uint64_t seed) {
  if (!model.is_vae()) throw ValidationError("latent_traversal requires a VAE variant");
  const ModelConfig& cfg = model.config();
  if (dim < 0 || dim >= cfg.latent_dim)
    throw ValidationError("latent_traversal: dim out of range");
  if (num_points < 1) throw ValidationError("latent_traversal: num_points must be >= 1");
  SequenceEncoder enc(model);
  enc.consume(history);
  const GaussianParams prior = enc.prior_params();
  SplitMix64 rng(derive_seed(seed, "traverse"));
  std::vector<double> eps(cfg.latent_dim);
  rng.fill_normal(eps);
  std::vector<double> z = sample_latent_values(prior, eps);
  const double mu = prior.mean[dim];
  const double sigma = std::exp(0.5 * prior.log_var[dim]);
  std::vector<TraversalRow> rows;
  rows.reserve(num_points);
  for (int i = 0; i < num_points; ++i) {
    const double offset =
        num_points == 1 ? 0.0 : -5.0 + 10.0 * static_cast<double>(i) / (num_points - 1);
    z[dim] = mu + sigma * offset;
    rows.push_back({z[dim], model.decode_step_values(z)});
  }
  return rows;
}

struct SweepRow {
  int latent_size = 0;
  double val_ll = 0.0;  // pooled per-step importance-sampled LL on the validation split
};

// Trains one model per latent size and reports validation log-likelihood.
inline std::vector<SweepRow> latent_size_sweep(const Dataset& dataset,
                                               const std::vector<int>& sizes,
                                               ModelConfig model_cfg, const TrainConfig& cfg,
                                               std::ostream* log = nullptr) {
  if (sizes.empty()) throw ValidationError("latent_size_sweep: empty size list");
  std::vector<SweepRow> rows;
  rows.reserve(sizes.size());
  for (int size : sizes) {
    model_cfg.latent_dim = size;
    TrainResult result = train(dataset, model_cfg, cfg, log);
    double sum = 0.0;
    std::size_t steps = 0;
    for (const ActionSequence& seq : result.val_split.sequences) {
      const std::vector<double> ll =
          importance_sampled_ll(result.model, seq, cfg.eval_samples, cfg.seed);
      for (double v : ll) sum += v;
      steps += ll.size();
    }
    rows.push_back({size, sum / static_cast<double>(steps)});
  }
  return rows;
}

}  // namespace appvae
