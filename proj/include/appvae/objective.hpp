#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "appvae/autodiff.hpp"
#include "appvae/errors.hpp"
#include "appvae/events.hpp"
#include "appvae/model.hpp"
#include "appvae/util.hpp"

namespace appvae {

// All terms follow the minimization convention: total = action + time + kl.
// `total` is the sum over steps; training divides by N before backprop.
struct LossBreakdown {
  double total = 0.0;
  double action_nll = 0.0;
  double time_nll = 0.0;
  double kl = 0.0;
  std::vector<double> per_step_action;
  std::vector<double> per_step_time;
  std::vector<double> per_step_kl;

  std::size_t steps() const { return per_step_action.size(); }
};

// KL(q || p) between diagonal Gaussians given means and log-variances:
//   1/2 sum_i [ e^{lq-lp} + (mp-mq)^2 e^{-lp} - 1 + lp - lq ]
inline double kl_diag_gaussians(const GaussianParams& q, const GaussianParams& p) {
  if (q.mean.size() != p.mean.size() || q.log_var.size() != p.log_var.size() ||
      q.mean.size() != q.log_var.size())
    throw ValidationError("kl_diag_gaussians: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < q.mean.size(); ++i) {
    const double dlv = q.log_var[i] - p.log_var[i];
    const double dm = p.mean[i] - q.mean[i];
    acc += std::exp(dlv) + dm * dm * std::exp(-p.log_var[i]) - 1.0 - dlv;
  }
  return 0.5 * acc;
}

inline double action_nll(std::span<const double> probs, int true_category) {
  if (true_category < 0 || true_category >= static_cast<int>(probs.size()))
    throw ValidationError("action_nll: category out of range");
  return -std::log(probs[true_category]);
}

inline double action_nll_from_log(std::span<const double> log_probs, int true_category) {
  if (true_category < 0 || true_category >= static_cast<int>(log_probs.size()))
    throw ValidationError("action_nll: category out of range");
  return -log_probs[true_category];
}

// Negative log of the exponential-interval likelihood
//   log(1 - e^{-lambda * delta_tau}) - lambda * tau
inline double time_nll(double lambda, double true_tau, double delta_tau) {
  if (!(lambda > 0.0)) throw ValidationError("time_nll: lambda must be positive");
  if (!(true_tau >= 0.0)) throw ValidationError("time_nll: tau must be >= 0");
  if (!(delta_tau > 0.0)) throw ValidationError("time_nll: delta_tau must be positive");
  return lambda * true_tau - log1mexp(lambda * delta_tau);
}

// ---- tape builders ---------------------------------------------------------

inline Tape::Id kl_node(Tape& tape, const GaussianNodes& q, const GaussianNodes& p) {
  const Tape::Id dlv = tape.sub(q.log_var, p.log_var);
  const Tape::Id ratio = tape.exp_(dlv);
  const Tape::Id dm = tape.sub(p.mean, q.mean);
  const Tape::Id maha = tape.mul(tape.mul(dm, dm), tape.exp_(tape.neg(p.log_var)));
  const Tape::Id rest = tape.affine(dlv, -1.0, -1.0);
  return tape.scale(tape.sum(tape.add(tape.add(ratio, maha), rest)), 0.5);
}

inline Tape::Id action_nll_node(Tape& tape, Tape::Id log_probs, int true_category) {
  return tape.neg(tape.pick(log_probs, true_category));
}

inline Tape::Id time_nll_node(Tape& tape, Tape::Id lambda, double true_tau, double delta_tau) {
  const Tape::Id interval = tape.log1mexp(tape.scale(lambda, delta_tau));
  return tape.sub(tape.scale(lambda, true_tau), interval);
}

// Sequence ELBO (negated, minimized): sum over steps of
// action NLL + interval time NLL + KL(posterior || prior), with the
// expectation taken by the single reparameterized sample recorded in the
// trace. Returns the differentiable total and a value breakdown.
//
// kl_weight scales the KL term of the differentiable total only (optional
// warm-up knob); the breakdown always reports the unit-weight loss.
inline std::pair<Tape::Id, LossBreakdown> elbo_loss(Tape& tape, const ForwardTrace& trace,
                                                    const ActionSequence& seq, double delta_tau,
                                                    double kl_weight = 1.0) {
  if (trace.size() != seq.size()) throw ValidationError("elbo_loss: trace/sequence length mismatch");
  if (trace.size() == 0) throw ValidationError("elbo_loss: empty trace");
  LossBreakdown bd;
  Tape::Id total = -1;
  for (std::size_t n = 0; n < trace.size(); ++n) {
    const auto& ids = trace.ids[n];
    const Tape::Id a = action_nll_node(tape, ids.log_probs, seq.events[n].category_id);
    const Tape::Id t = time_nll_node(tape, ids.lambda, seq.events[n].inter_arrival, delta_tau);
    const Tape::Id kl = kl_node(tape, {ids.post_mean, ids.post_log_var},
                                {ids.prior_mean, ids.prior_log_var});
    const Tape::Id step =
        tape.add(tape.add(a, t), kl_weight == 1.0 ? kl : tape.scale(kl, kl_weight));
    total = total < 0 ? step : tape.add(total, step);
    bd.per_step_action.push_back(tape.scalar(a));
    bd.per_step_time.push_back(tape.scalar(t));
    bd.per_step_kl.push_back(tape.scalar(kl));
    bd.action_nll += tape.scalar(a);
    bd.time_nll += tape.scalar(t);
    bd.kl += tape.scalar(kl);
  }
  bd.total = bd.action_nll + bd.time_nll + bd.kl;
  return {total, bd};
}

// APP-LSTM objective: the same reconstruction terms with no latent code.
inline std::pair<Tape::Id, LossBreakdown> reconstruction_loss(Tape& tape,
                                                              const ForwardTrace& trace,
                                                              const ActionSequence& seq,
                                                              double delta_tau) {
  if (trace.size() != seq.size())
    throw ValidationError("reconstruction_loss: trace/sequence length mismatch");
  LossBreakdown bd;
  Tape::Id total = -1;
  for (std::size_t n = 0; n < trace.size(); ++n) {
    const auto& ids = trace.ids[n];
    const Tape::Id a = action_nll_node(tape, ids.log_probs, seq.events[n].category_id);
    const Tape::Id t = time_nll_node(tape, ids.lambda, seq.events[n].inter_arrival, delta_tau);
    const Tape::Id step = tape.add(a, t);
    total = total < 0 ? step : tape.add(total, step);
    bd.per_step_action.push_back(tape.scalar(a));
    bd.per_step_time.push_back(tape.scalar(t));
    bd.per_step_kl.push_back(0.0);
    bd.action_nll += tape.scalar(a);
    bd.time_nll += tape.scalar(t);
  }
  bd.total = bd.action_nll + bd.time_nll;
  return {total, bd};
}

inline double td_lstm_loss(std::span<const double> action_probs, double tau_hat,
                           const ActionEvent& truth) {
  if (!(tau_hat >= 0.0)) throw ValidationError("td_lstm_loss: tau_hat must be >= 0");
  const double err = tau_hat - truth.inter_arrival;
  return action_nll(action_probs, truth.category_id) + err * err;
}

// TD-LSTM objective: cross entropy + squared error on the inter-arrival time.
inline std::pair<Tape::Id, LossBreakdown> td_lstm_loss_node(Tape& tape, const ForwardTrace& trace,
                                                            const ActionSequence& seq) {
  if (trace.size() != seq.size())
    throw ValidationError("td_lstm_loss: trace/sequence length mismatch");
  LossBreakdown bd;
  Tape::Id total = -1;
  for (std::size_t n = 0; n < trace.size(); ++n) {
    const auto& ids = trace.ids[n];
    const Tape::Id a = action_nll_node(tape, ids.log_probs, seq.events[n].category_id);
    const Tape::Id err = tape.affine(ids.tau_hat, 1.0, -seq.events[n].inter_arrival);
    const Tape::Id t = tape.mul(err, err);
    const Tape::Id step = tape.add(a, t);
    total = total < 0 ? step : tape.add(total, step);
    bd.per_step_action.push_back(tape.scalar(a));
    bd.per_step_time.push_back(tape.scalar(t));
    bd.per_step_kl.push_back(0.0);
    bd.action_nll += tape.scalar(a);
    bd.time_nll += tape.scalar(t);
  }
  bd.total = bd.action_nll + bd.time_nll;
  return {total, bd};
}

// Variant dispatch used by the trainer and validators.
inline std::pair<Tape::Id, LossBreakdown> sequence_loss(Tape& tape, const Model& model,
                                                        const ActionSequence& seq,
                                                        NoiseSource& noise,
                                                        double kl_weight = 1.0) {
  switch (model.config().variant) {
    case Variant::app_vae:
    case Variant::app_vae_fixed_prior: {
      const ForwardTrace trace = model.forward_teacher_forced(tape, seq, noise, true);
      return elbo_loss(tape, trace, seq, model.config().delta_tau, kl_weight);
    }
    case Variant::app_lstm: {
      const ForwardTrace trace = model.forward_baseline(tape, seq);
      return reconstruction_loss(tape, trace, seq, model.config().delta_tau);
    }
    case Variant::td_lstm: {
      const ForwardTrace trace = model.forward_baseline(tape, seq);
      return td_lstm_loss_node(tape, trace, seq);
    }
  }
  throw ValidationError("unknown variant");
}

}  // namespace appvae
