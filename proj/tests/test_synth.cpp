#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "appvae/errors.hpp"
#include "appvae/synth.hpp"

using namespace appvae;

namespace {

double mean_inter_arrival(const Dataset& d) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : d.sequences)
    for (const auto& e : s.events) {
      sum += e.inter_arrival;
      ++n;
    }
  return sum / static_cast<double>(n);
}

double stddev_inter_arrival(const Dataset& d, double mean) {
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& s : d.sequences)
    for (const auto& e : s.events) {
      sq += (e.inter_arrival - mean) * (e.inter_arrival - mean);
      ++n;
    }
  return std::sqrt(sq / static_cast<double>(n));
}

}  // namespace

TEST_CASE("poisson sample mean is within 3 SE of 1/rate") {
  const Dataset d = gen_poisson({2.0, 1, {}}, 200, 100, 7);
  REQUIRE(d.sequences.size() == 200);
  const std::size_t n = d.total_events();
  const double se = 0.5 / std::sqrt(static_cast<double>(n));  // sd of Exp(2) is 1/2
  CHECK(std::abs(mean_inter_arrival(d) - 0.5) < 3.0 * se);
}

TEST_CASE("poisson with K=1 marks everything 0; determinism holds") {
  const Dataset a = gen_poisson({1.0, 1, {}}, 20, 30, 3);
  for (const auto& s : a.sequences)
    for (const auto& e : s.events) {
      CHECK(e.category_id == 0);
      CHECK(e.inter_arrival >= 0.0);
      CHECK(std::isfinite(e.inter_arrival));
    }
  const Dataset b = gen_poisson({1.0, 1, {}}, 20, 30, 3);
  CHECK(a == b);
}

TEST_CASE("poisson category frequencies follow category_probs") {
  const Dataset d = gen_poisson({1.0, 3, {0.7, 0.2, 0.1}}, 100, 100, 11);
  std::vector<double> freq(3, 0.0);
  for (const auto& s : d.sequences)
    for (const auto& e : s.events) freq[e.category_id] += 1.0;
  const double n = static_cast<double>(d.total_events());
  CHECK_THAT(freq[0] / n, Catch::Matchers::WithinAbs(0.7, 0.015));
  CHECK_THAT(freq[1] / n, Catch::Matchers::WithinAbs(0.2, 0.015));
}

TEST_CASE("poisson rejects invalid specs") {
  CHECK_THROWS_AS(gen_poisson({0.0, 1, {}}, 1, 1, 0), ValidationError);
  CHECK_THROWS_AS(gen_poisson({1.0, 2, {0.5, 0.6}}, 1, 1, 0), ValidationError);
  CHECK_THROWS_AS(gen_poisson({1.0, 1, {}}, 0, 1, 0), ValidationError);
}

TEST_CASE("hawkes with alpha=0 degenerates to a Poisson stream") {
  const Dataset d = gen_hawkes({1.0, 0.0, 1.0, 1}, 100, 100, 5);
  const std::size_t n = d.total_events();
  const double se = 1.0 / std::sqrt(static_cast<double>(n));
  CHECK(std::abs(mean_inter_arrival(d) - 1.0) < 3.0 * se);
}

TEST_CASE("hawkes empirical rate matches the stationary value") {
  // stationary rate mu / (1 - alpha/beta) = 0.5 / 0.2 = 2.5
  const HawkesSpec spec{0.5, 0.8, 1.0, 1};
  const Dataset d = gen_hawkes(spec, 100, 1200, 9);
  double total_time = 0.0;
  std::size_t events = 0;
  for (const auto& s : d.sequences) {
    for (const auto& e : s.events) total_time += e.inter_arrival;
    events += s.size();
  }
  const double rate = static_cast<double>(events) / total_time;
  CHECK_THAT(rate, Catch::Matchers::WithinRel(2.5, 0.05));
}

TEST_CASE("hawkes is deterministic and validates stationarity") {
  const HawkesSpec spec{0.5, 0.3, 1.0, 2};
  CHECK(gen_hawkes(spec, 5, 20, 1) == gen_hawkes(spec, 5, 20, 1));
  CHECK_THROWS_AS(gen_hawkes({0.5, 1.0, 1.0, 1}, 1, 1, 0), ValidationError);
  CHECK_THROWS_AS(gen_hawkes({0.5, 1.5, 1.0, 1}, 1, 1, 0), ValidationError);
}

TEST_CASE("self-correcting output is more regular than rate-matched Poisson") {
  const Dataset d = gen_self_correcting({1.0, 1.0}, 100, 200, 13);
  const double m = mean_inter_arrival(d);
  const double cv = stddev_inter_arrival(d, m) / m;
  const Dataset p = gen_poisson({1.0 / m, 1, {}}, 100, 200, 13);
  const double pm = mean_inter_arrival(p);
  const double pcv = stddev_inter_arrival(p, pm) / pm;
  CHECK(cv < pcv);  // regularity: Poisson CV is ~1, self-correcting is well below
  CHECK(cv < 0.8);
  CHECK(gen_self_correcting({1.0, 1.0}, 3, 10, 2) == gen_self_correcting({1.0, 1.0}, 3, 10, 2));
}

TEST_CASE("stronger inhibition stretches the mean gap") {
  const double weak = mean_inter_arrival(gen_self_correcting({1.0, 0.5}, 50, 200, 21));
  const double strong = mean_inter_arrival(gen_self_correcting({1.0, 3.0}, 50, 200, 21));
  CHECK(strong > weak);
}

TEST_CASE("markov deterministic cycle follows the exact cycle") {
  const MarkovMarkSpec spec = markov_cycle_spec(3);
  const Dataset d = gen_markov_marks(spec, 10, 30, 17);
  for (const auto& s : d.sequences)
    for (std::size_t i = 1; i < s.events.size(); ++i)
      REQUIRE(s.events[i].category_id == (s.events[i - 1].category_id + 1) % 3);
}

TEST_CASE("markov identity matrix keeps the mark constant") {
  MarkovMarkSpec spec;
  spec.transition_matrix = {{1.0, 0.0}, {0.0, 1.0}};
  spec.per_state_rate = {1.0, 2.0};
  const Dataset d = gen_markov_marks(spec, 10, 20, 23);
  for (const auto& s : d.sequences)
    for (const auto& e : s.events) REQUIRE(e.category_id == s.events[0].category_id);
}

TEST_CASE("markov empirical transition frequencies match the matrix") {
  MarkovMarkSpec spec;
  spec.transition_matrix = {{0.6, 0.4}, {0.25, 0.75}};
  spec.per_state_rate = {1.0, 1.0};
  const Dataset d = gen_markov_marks(spec, 100, 1001, 29);
  double counts[2][2] = {{0, 0}, {0, 0}};
  double from[2] = {0, 0};
  for (const auto& s : d.sequences)
    for (std::size_t i = 1; i < s.events.size(); ++i) {
      const int a = s.events[i - 1].category_id;
      counts[a][s.events[i].category_id] += 1.0;
      from[a] += 1.0;
    }
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      const double p = spec.transition_matrix[a][b];
      const double se = std::sqrt(p * (1.0 - p) / from[a]);
      CHECK(std::abs(counts[a][b] / from[a] - p) < 3.0 * se);
    }
}

TEST_CASE("markov rejects non-stochastic rows") {
  MarkovMarkSpec spec;
  spec.transition_matrix = {{0.5, 0.4}, {0.5, 0.5}};
  spec.per_state_rate = {1.0, 1.0};
  CHECK_THROWS_AS(gen_markov_marks(spec, 1, 1, 0), ValidationError);
}

TEST_CASE("all generators emit valid datasets") {
  for (const Dataset& d :
       {gen_poisson({2.0, 3, {}}, 5, 10, 1), gen_hawkes({1.0, 0.5, 2.0, 2}, 5, 10, 1),
        gen_self_correcting({2.0, 1.0}, 5, 10, 1),
        gen_markov_marks(markov_cycle_spec(4, {1.0, 2.0, 3.0, 4.0}, 0.1), 5, 10, 1)}) {
    CHECK_NOTHROW(validate_dataset(d));
  }
}
