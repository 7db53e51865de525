#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "appvae/errors.hpp"
#include "appvae/events.hpp"
#include "appvae/rng.hpp"

namespace appvae {

// Ground-truth generators for marked point processes. Sequences are truncated
// at a fixed event count; sequence s draws from the sub-stream
// derive_seed(seed, s), so generation is deterministic and per-sequence
// independent of scheduling.

struct PoissonSpec {
  double rate = 1.0;
  int num_categories = 1;
  std::vector<double> category_probs;  // empty means uniform
};

struct HawkesSpec {
  double base_rate = 0.5;   // mu
  double excitation = 0.0;  // alpha, jump added per event
  double decay = 1.0;       // beta
  int num_categories = 1;   // marks are i.i.d. uniform over K
};

struct SelfCorrectingSpec {
  double drift = 1.0;       // mu, intensity exp(mu*t - alpha*N(t))
  double inhibition = 1.0;  // alpha
};

struct MarkovMarkSpec {
  std::vector<std::vector<double>> transition_matrix;  // K x K, row-stochastic
  std::vector<double> per_state_rate;                  // length K, positive
};

namespace detail {

inline void check_simplex(const std::vector<double>& p, const char* what) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw ValidationError(std::string(what) + " has a negative entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ValidationError(std::string(what) + " must sum to 1 (got " + format_double(sum) + ")");
}

inline std::vector<double> resolve_probs(const PoissonSpec& spec) {
  if (spec.category_probs.empty())
    return std::vector<double>(spec.num_categories, 1.0 / spec.num_categories);
  if (static_cast<int>(spec.category_probs.size()) != spec.num_categories)
    throw ValidationError("category_probs length must equal num_categories");
  check_simplex(spec.category_probs, "category_probs");
  return spec.category_probs;
}

}  // namespace detail

inline void validate_spec(const PoissonSpec& spec) {
  if (!(spec.rate > 0.0)) throw ValidationError("poisson rate must be positive");
  if (spec.num_categories < 1) throw ValidationError("num_categories must be >= 1");
  detail::resolve_probs(spec);
}

inline void validate_spec(const HawkesSpec& spec) {
  if (!(spec.base_rate > 0.0)) throw ValidationError("hawkes base rate must be positive");
  if (!(spec.excitation >= 0.0)) throw ValidationError("hawkes excitation must be >= 0");
  if (!(spec.decay > 0.0)) throw ValidationError("hawkes decay must be positive");
  if (!(spec.excitation < spec.decay))
    throw ValidationError("hawkes requires excitation < decay for stationarity");
  if (spec.num_categories < 1) throw ValidationError("num_categories must be >= 1");
}

inline void validate_spec(const SelfCorrectingSpec& spec) {
  if (!(spec.drift > 0.0)) throw ValidationError("self-correcting drift must be positive");
  if (!(spec.inhibition > 0.0)) throw ValidationError("self-correcting inhibition must be positive");
}

inline void validate_spec(const MarkovMarkSpec& spec) {
  const std::size_t k = spec.transition_matrix.size();
  if (k == 0) throw ValidationError("transition matrix is empty");
  for (const auto& row : spec.transition_matrix) {
    if (row.size() != k) throw ValidationError("transition matrix must be square");
    detail::check_simplex(row, "transition matrix row");
  }
  if (spec.per_state_rate.size() != k)
    throw ValidationError("per_state_rate length must equal the number of states");
  for (double r : spec.per_state_rate)
    if (!(r > 0.0)) throw ValidationError("per_state_rate entries must be positive");
}

inline Dataset gen_poisson(const PoissonSpec& spec, int num_sequences, int events_per_sequence,
                           std::uint64_t seed) {
  validate_spec(spec);
  if (num_sequences < 1 || events_per_sequence < 1)
    throw ValidationError("sequence and event counts must be >= 1");
  const std::vector<double> probs = detail::resolve_probs(spec);
  Dataset d{.sequences = {}, .num_categories = spec.num_categories, .name = "poisson"};
  d.sequences.resize(num_sequences);
  for (int s = 0; s < num_sequences; ++s) {
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    auto& seq = d.sequences[s].events;
    seq.reserve(events_per_sequence);
    for (int e = 0; e < events_per_sequence; ++e) {
      const double tau = rng.exponential(spec.rate);
      const int mark = rng.categorical(probs);
      seq.push_back({mark, tau});
    }
  }
  return d;
}

// Ogata thinning for intensity mu + sum_i alpha * exp(-beta * (t - t_i)).
// The bound is the current intensity value, refreshed at every candidate;
// exact because the intensity is non-increasing between events.
inline Dataset gen_hawkes(const HawkesSpec& spec, int num_sequences, int events_per_sequence,
                          std::uint64_t seed) {
  validate_spec(spec);
  if (num_sequences < 1 || events_per_sequence < 1)
    throw ValidationError("sequence and event counts must be >= 1");
  Dataset d{.sequences = {}, .num_categories = spec.num_categories, .name = "hawkes"};
  d.sequences.resize(num_sequences);
  for (int s = 0; s < num_sequences; ++s) {
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    auto& seq = d.sequences[s].events;
    seq.reserve(events_per_sequence);
    double t = 0.0, t_last = 0.0;
    double excitation = 0.0;  // sum of alpha * exp(-beta * (t - t_i)) at current t
    while (static_cast<int>(seq.size()) < events_per_sequence) {
      const double bound = spec.base_rate + excitation;
      const double w = rng.exponential(bound);
      excitation *= std::exp(-spec.decay * w);
      t += w;
      const double intensity = spec.base_rate + excitation;
      if (rng.uniform() * bound < intensity) {
        const int mark = static_cast<int>(rng.bounded(spec.num_categories));
        seq.push_back({mark, t - t_last});
        t_last = t;
        excitation += spec.excitation;
      }
    }
  }
  return d;
}

// Thinning with piecewise bound refresh for intensity exp(mu*t - alpha*N(t)),
// which increases between events: over a window [t, t+h] the value at t+h
// bounds the intensity, and h = min(1/intensity(t), 1/mu) keeps the bound
// within a factor e of the current value.
inline Dataset gen_self_correcting(const SelfCorrectingSpec& spec, int num_sequences,
                                   int events_per_sequence, std::uint64_t seed) {
  validate_spec(spec);
  if (num_sequences < 1 || events_per_sequence < 1)
    throw ValidationError("sequence and event counts must be >= 1");
  Dataset d{.sequences = {}, .num_categories = 1, .name = "self_correcting"};
  d.sequences.resize(num_sequences);
  for (int s = 0; s < num_sequences; ++s) {
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    auto& seq = d.sequences[s].events;
    seq.reserve(events_per_sequence);
    double t = 0.0, t_last = 0.0;
    long accepted = 0;
    auto log_intensity = [&](double at) { return spec.drift * at - spec.inhibition * accepted; };
    while (static_cast<int>(seq.size()) < events_per_sequence) {
      const double lam_now = std::exp(std::min(log_intensity(t), 700.0));
      const double window = std::min(1.0 / std::max(lam_now, 1e-300), 1.0 / spec.drift);
      const double bound = std::exp(std::min(log_intensity(t + window), 700.0));
      const double w = rng.exponential(bound);
      if (w > window) {
        t += window;  // no candidate in this window, refresh the bound
        continue;
      }
      t += w;
      const double intensity = std::exp(std::min(log_intensity(t), 700.0));
      if (rng.uniform() * bound < intensity) {
        seq.push_back({0, t - t_last});
        t_last = t;
        ++accepted;
      }
    }
  }
  return d;
}

// Mark chain follows the transition matrix; the inter-arrival preceding each
// event is exponential with the arriving mark's rate. Initial state uniform.
inline Dataset gen_markov_marks(const MarkovMarkSpec& spec, int num_sequences,
                                int events_per_sequence, std::uint64_t seed) {
  validate_spec(spec);
  if (num_sequences < 1 || events_per_sequence < 1)
    throw ValidationError("sequence and event counts must be >= 1");
  const int k = static_cast<int>(spec.transition_matrix.size());
  Dataset d{.sequences = {}, .num_categories = k, .name = "markov"};
  d.sequences.resize(num_sequences);
  for (int s = 0; s < num_sequences; ++s) {
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    auto& seq = d.sequences[s].events;
    seq.reserve(events_per_sequence);
    int state = static_cast<int>(rng.bounded(k));
    for (int e = 0; e < events_per_sequence; ++e) {
      const double tau = rng.exponential(spec.per_state_rate[state]);
      seq.push_back({state, tau});
      state = rng.categorical(spec.transition_matrix[state]);
    }
  }
  return d;
}

// Convenience spec: state i moves to (i+1) mod K with probability 1 - noise;
// the remaining mass is spread evenly over the other K-1 states.
inline MarkovMarkSpec markov_cycle_spec(int k, std::vector<double> rates = {},
                                        double noise = 0.0) {
  if (k < 2) throw ValidationError("cycle needs at least 2 states");
  if (!(noise >= 0.0 && noise < 1.0)) throw ValidationError("noise must be in [0, 1)");
  MarkovMarkSpec spec;
  spec.transition_matrix.assign(k, std::vector<double>(k, noise / (k - 1)));
  for (int i = 0; i < k; ++i) spec.transition_matrix[i][(i + 1) % k] = 1.0 - noise;
  spec.per_state_rate = rates.empty() ? std::vector<double>(k, 1.0) : std::move(rates);
  return spec;
}

}  // namespace appvae
