// Acceptance suite: runs every shipped guarantee end to end and prints one
// PASS/FAIL line per criterion. Exit code is the number of failures.
//
// Everything here is seeded and single-threaded; a rerun produces identical
// numbers.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "appvae/eval.hpp"
#include "appvae/events.hpp"
#include "appvae/model.hpp"
#include "appvae/objective.hpp"
#include "appvae/synth.hpp"
#include "appvae/train.hpp"

using namespace appvae;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int idx, const std::string& name, bool pass, const std::string& detail,
            double seconds) {
  std::printf("[%s] criterion %2d %-24s %s (%.1fs)\n", pass ? "PASS" : "FAIL", idx, name.c_str(),
              detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

void run(int idx, const std::string& name,
         const std::function<std::pair<bool, std::string>()>& fn) {
  const auto t0 = Clock::now();
  bool pass = false;
  std::string detail;
  try {
    std::tie(pass, detail) = fn();
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  report(idx, name, pass, detail, std::chrono::duration<double>(Clock::now() - t0).count());
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

ModelConfig small_model(int k, Variant variant, int hidden, int latent, double delta_tau) {
  ModelConfig cfg;
  cfg.num_categories = k;
  cfg.action_embed_dim = 12;
  cfg.time_embed_dim = 4;
  cfg.joint_embed_dim = 16;
  cfg.hidden_dim = hidden;
  cfg.latent_dim = latent;
  cfg.decoder_hidden_dim = 16;
  cfg.delta_tau = delta_tau;
  cfg.variant = variant;
  return cfg;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness of the full APP-VAE loss on random toy sequences.

std::pair<bool, std::string> criterion_gradients() {
  ModelConfig cfg;
  cfg.num_categories = 4;
  cfg.action_embed_dim = 6;
  cfg.time_embed_dim = 3;
  cfg.joint_embed_dim = 8;
  cfg.hidden_dim = 8;
  cfg.latent_dim = 6;
  cfg.decoder_hidden_dim = 8;
  cfg.variant = Variant::app_vae;

  SplitMix64 seq_rng(derive_seed(1001, "sequences"));
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    ActionSequence seq;
    const int n = 3 + static_cast<int>(seq_rng.bounded(4));  // N in [3, 6]
    for (int i = 0; i < n; ++i)
      seq.events.push_back({static_cast<int>(seq_rng.bounded(4)), seq_rng.exponential(1.0)});

    // central differences are invalid at relu kinks; scan init seeds until
    // every kink input clears a margin well above the probe epsilon
    for (std::uint64_t seed = 1002 + 100 * trial;; ++seed) {
      Model model(cfg, seed);
      std::vector<std::vector<double>> draws;
      SplitMix64 nrng(derive_seed(seed, "noise"));
      for (int i = 0; i < n; ++i) {
        std::vector<double> d(cfg.latent_dim);
        nrng.fill_normal(d);
        draws.push_back(d);
      }
      {
        CannedNoise probe_noise(draws);
        Tape probe;
        sequence_loss(probe, model, seq, probe_noise);
        if (probe.kink_margin() < 5e-4) continue;
      }
      auto loss = [&] {
        CannedNoise noise(draws);
        Tape tape;
        const auto [id, bd] = sequence_loss(tape, model, seq, noise);
        tape.backward(id);
        return tape.scalar(id);
      };
      // denominator floor 1e-5: gradients below the central-difference noise
      // floor (~1e-10 absolute) are verified absolutely, not relatively
      worst = std::max(worst, finite_diff_check(loss, model.store(), 1e-5, 1e-5));
      break;
    }
  }
  return {worst < 1e-4, "max_rel_err=" + fmt(worst) + " (limit 1e-4, 5 sequences)"};
}

// ---------------------------------------------------------------------------
// 2. Closed-form oracles: KL vs Monte Carlo, time NLL vs quadrature.

double simpson_rule(const std::function<double(double)>& f, double a, double b) {
  const double m = 0.5 * (a + b);
  return (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double eps,
                        double whole, int depth) {
  const double m = 0.5 * (a + b);
  const double left = simpson_rule(f, a, m);
  const double right = simpson_rule(f, m, b);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * eps)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson(f, a, m, eps / 2.0, left, depth - 1) +
         adaptive_simpson(f, m, b, eps / 2.0, right, depth - 1);
}

std::pair<bool, std::string> criterion_oracles() {
  // KL between diagonal Gaussians vs a 1e6-draw Monte Carlo estimate
  SplitMix64 rng(2001);
  double worst_kl_rel = 0.0;
  std::vector<double> eps(8);
  for (int pair = 0; pair < 20; ++pair) {
    GaussianParams q, p;
    for (int i = 0; i < 8; ++i) {
      q.mean.push_back(2.0 * rng.uniform() - 1.0);
      q.log_var.push_back(2.0 * rng.uniform() - 1.0);
      p.mean.push_back(2.0 * rng.uniform() - 1.0);
      p.log_var.push_back(2.0 * rng.uniform() - 1.0);
    }
    const double exact = kl_diag_gaussians(q, p);
    double sum = 0.0;
    const int draws = 1000000;
    for (int i = 0; i < draws; ++i) {
      rng.fill_normal(eps);
      const auto z = sample_latent_values(q, eps);
      sum += gaussian_log_pdf(z, q) - gaussian_log_pdf(z, p);
    }
    worst_kl_rel = std::max(worst_kl_rel, std::abs(sum / draws - exact) / exact);
  }

  // interval time NLL vs adaptive quadrature of the exponential density,
  // integrated in a shifted frame so e^{-lambda*tau} stays exact in log space
  double worst_time = 0.0;
  for (double lambda : {1e-4, 1e-2, 1.0, 10.0, 1e3}) {
    for (double tau : {0.0, 0.1, 1.0, 10.0, 100.0}) {
      for (double dt : {1e-3, 0.1, 1.0, 10.0}) {
        auto density = [&](double v) { return lambda * std::exp(-lambda * v); };
        const double whole = simpson_rule(density, 0.0, dt);
        const double integral =
            adaptive_simpson(density, 0.0, dt, std::abs(whole) * 1e-13 + 1e-300, whole, 48);
        const double oracle = -(std::log(integral) - lambda * tau);
        const double mine = time_nll(lambda, tau, dt);
        worst_time = std::max(worst_time, std::min(std::abs(mine - oracle),
                                                   std::abs(mine - oracle) / std::abs(oracle)));
      }
    }
  }
  const bool pass = worst_kl_rel < 0.01 && worst_time < 1e-8;
  return {pass, "kl_mc_rel=" + fmt(worst_kl_rel) + " (limit 0.01), time_vs_quadrature=" +
                    fmt(worst_time) + " (limit 1e-8)"};
}

// ---------------------------------------------------------------------------
// 3. Distribution contracts over random parameter/latent draws.

std::pair<bool, std::string> criterion_contracts() {
  SplitMix64 rng(3001);
  double worst_sum_err = 0.0;
  double lam_min = 1e300, lam_max = 0.0, tau_min = 1e300;
  const ModelConfig cfg = small_model(5, Variant::app_vae, 8, 6, 1.0);
  long draws = 0;
  for (int m = 0; m < 100; ++m) {
    Model model(cfg, derive_seed(3002, m));
    // stretch the decoders so extreme pre-activations get exercised
    for (auto& p : model.store().params())
      if (p->name.rfind("dec.", 0) == 0)
        for (double& v : p->value) v *= 1.0 + 9.0 * rng.uniform();
    std::vector<double> z(cfg.latent_dim);
    for (int d = 0; d < 100; ++d) {
      for (double& v : z) v = 10.0 * rng.normal();
      const StepDistribution dist = model.decode_step_values(z);
      double sum = 0.0;
      for (double pr : dist.action_probs) sum += pr;
      worst_sum_err = std::max(worst_sum_err, std::abs(sum - 1.0));
      lam_min = std::min(lam_min, dist.lambda);
      lam_max = std::max(lam_max, dist.lambda);
      tau_min = std::min(tau_min, rng.exponential(dist.lambda));
      ++draws;
    }
  }
  const bool pass = worst_sum_err < 1e-9 && lam_min >= kLambdaMin && lam_max <= kLambdaMax &&
                    tau_min >= 0.0 && draws == 10000;
  return {pass, "sum_err=" + fmt(worst_sum_err) + ", lambda in [" + fmt(lam_min) + ", " +
                    fmt(lam_max) + "], min tau=" + fmt(tau_min) + ", draws=10000"};
}

// ---------------------------------------------------------------------------
// 4. Synthetic rate recovery on Poisson(2) data, APP-LSTM and APP-VAE.

std::pair<bool, std::string> criterion_rate_recovery() {
  const Dataset train_data = gen_poisson({2.0, 1, {}}, 200, 100, 4001);
  const Dataset test_data = gen_poisson({2.0, 1, {}}, 60, 100, 4002);

  // verify the irreducible-MAE oracle E|tau - 1/lambda| = (2/e)/lambda by
  // simulation before using it as a target
  const double irreducible = 2.0 / std::exp(1.0) / 2.0;  // 1/e for lambda = 2
  {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& seq : test_data.sequences)
      for (const auto& ev : seq.events) {
        sum += std::abs(ev.inter_arrival - 0.5);
        ++n;
      }
    const double sample = sum / static_cast<double>(n);
    if (std::abs(sample - irreducible) > 3.0 * 0.5 / std::sqrt(static_cast<double>(n)))
      return {false, "irreducible-MAE oracle failed its simulation check"};
  }

  std::string detail;
  bool pass = true;
  for (Variant v : {Variant::app_lstm, Variant::app_vae}) {
    ModelConfig mc = small_model(1, v, 8, 4, 0.02);
    mc.action_embed_dim = 6;
    mc.joint_embed_dim = 8;
    mc.decoder_hidden_dim = 8;
    TrainConfig tc;
    tc.epochs = 30;
    tc.batch_size = 32;
    tc.learning_rate = 0.01;
    tc.seed = 4003;
    tc.eval_samples = 50;
    const TrainResult r = train(train_data, mc, tc);
    const EvalReport rep = evaluate(r.model, test_data, 50, PredictStrategy::mode, 4004);
    const bool tau_ok = std::abs(rep.mean_expected_tau - 0.5) < 0.05;
    const bool mae_ok = std::abs(rep.mae - irreducible) < 0.15 * irreducible;
    pass = pass && tau_ok && mae_ok;
    detail += to_string(v) + ": mean_Etau=" + fmt(rep.mean_expected_tau) +
              " (0.5 +-10%), mae=" + fmt(rep.mae) + " (" + fmt(irreducible) + " +-15%)  ";
  }
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 5/7/9 share one trained cycle model.

struct CycleArtifacts {
  TrainResult result;
  Dataset test_data;
};

CycleArtifacts train_cycle_model() {
  const auto spec = markov_cycle_spec(4);
  const Dataset train_data = gen_markov_marks(spec, 150, 30, 5001);
  const Dataset test_data = gen_markov_marks(spec, 100, 30, 5002);
  const ModelConfig mc = small_model(4, Variant::app_vae, 16, 8, 0.1);
  TrainConfig tc;
  tc.epochs = 120;
  tc.batch_size = 16;
  tc.learning_rate = 0.003;
  tc.seed = 5003;
  return {train(train_data, mc, tc), test_data};
}

std::pair<bool, std::string> criterion_structure(const CycleArtifacts& art) {
  Dataset holdout = art.test_data;
  holdout.sequences.resize(50);
  const EvalReport rep = evaluate(art.result.model, holdout, 25, PredictStrategy::mode, 5004);
  return {rep.accuracy_percent > 95.0,
          "teacher-forced accuracy=" + fmt(rep.accuracy_percent) + "% (limit 95%)"};
}

std::pair<bool, std::string> criterion_bound(const CycleArtifacts& art) {
  const Model& model = art.result.model;
  std::vector<double> diffs;
  for (std::size_t i = 0; i < art.test_data.sequences.size(); ++i) {
    const ActionSequence& seq = art.test_data.sequences[i];
    const auto ll = importance_sampled_ll(model, seq, 1500, 7001);
    double is_mean = 0.0;
    for (double v : ll) is_mean += v;
    is_mean /= static_cast<double>(ll.size());

    RngNoise noise(derive_seed(7002, i));
    Tape tape;
    const auto trace = model.forward_teacher_forced(tape, seq, noise, true);
    const auto [id, bd] = elbo_loss(tape, trace, seq, model.config().delta_tau);
    diffs.push_back(is_mean - (-bd.total / static_cast<double>(seq.size())));
  }
  double mean = 0.0;
  for (double d : diffs) mean += d;
  mean /= static_cast<double>(diffs.size());
  double var = 0.0;
  for (double d : diffs) var += (d - mean) * (d - mean);
  const double se = std::sqrt(var / (diffs.size() - 1.0) / static_cast<double>(diffs.size()));

  // baselines: the IS estimate must equal the exact factorized LL
  Model baseline(small_model(3, Variant::app_lstm, 8, 4, 1.0), 7003);
  const ActionSequence probe{{{0, 0.4}, {2, 1.1}, {1, 0.2}}};
  const auto bll = importance_sampled_ll(baseline, probe, 1500, 7004);
  double worst_exact = 0.0;
  {
    SequenceEncoder enc(baseline);
    for (std::size_t n = 0; n < probe.size(); ++n) {
      const auto& h = enc.encoder_hidden();
      const double exact =
          baseline.action_log_probs_values(h)[probe.events[n].category_id] -
          time_nll(baseline.lambda_values(h), probe.events[n].inter_arrival, 1.0);
      worst_exact = std::max(worst_exact, std::abs(bll[n] - exact));
      enc.consume(probe.events[n]);
    }
  }
  const bool pass = mean >= -3.0 * se && worst_exact < 1e-12;
  return {pass, "IS(1500)-ELBO mean=" + fmt(mean) + " over 100 seqs (>= -3SE=" +
                    fmt(-3.0 * se) + "), baseline |IS-exact|=" + fmt(worst_exact) +
                    " (limit 1e-12)"};
}

std::pair<bool, std::string> criterion_anomaly(const CycleArtifacts& art) {
  const Model& model = art.result.model;
  SplitMix64 shuffle_rng(9001);
  int wins = 0;
  for (int i = 0; i < 100; ++i) {
    const ActionSequence& original = art.test_data.sequences[i];
    ActionSequence shuffled = original;
    for (std::size_t j = shuffled.events.size() - 1; j > 0; --j) {
      const std::size_t k = shuffle_rng.bounded(j + 1);
      std::swap(shuffled.events[j].category_id, shuffled.events[k].category_id);
    }
    auto mean_ll = [&](const ActionSequence& seq) {
      const auto ll = importance_sampled_ll(model, seq, 50, 9002);
      double sum = 0.0;
      for (double v : ll) sum += v;
      return sum / static_cast<double>(ll.size());
    };
    if (mean_ll(original) > mean_ll(shuffled)) ++wins;
  }
  return {wins >= 90, "in-distribution outranks mark-shuffled copy in " + std::to_string(wins) +
                          "/100 pairs (limit 90)"};
}

// ---------------------------------------------------------------------------
// 6. Learned prior beats the fixed prior across seeds.

std::pair<bool, std::string> criterion_learned_prior() {
  const auto spec = markov_cycle_spec(4, {4.0, 2.0, 1.0, 0.5}, 0.1);
  const Dataset train_data = gen_markov_marks(spec, 100, 20, 6001);
  const Dataset test_data = gen_markov_marks(spec, 40, 20, 6002);
  int wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    double acc[2], ll[2];
    int slot = 0;
    for (Variant v : {Variant::app_vae, Variant::app_vae_fixed_prior}) {
      const ModelConfig mc = small_model(4, v, 16, 8, 0.05);
      TrainConfig tc;
      tc.epochs = 80;
      tc.batch_size = 16;
      tc.learning_rate = 0.003;
      tc.seed = seed;
      const TrainResult r = train(train_data, mc, tc);
      const EvalReport rep = evaluate(r.model, test_data, 50, PredictStrategy::mode, seed + 60);
      acc[slot] = rep.accuracy_percent;
      ll[slot] = rep.ll_per_step_mean;
      ++slot;
    }
    const bool win = acc[0] > acc[1] && ll[0] > ll[1];
    wins += win ? 1 : 0;
    per_seed += win ? 'W' : 'L';
  }
  return {wins >= 4, "learned prior wins IS-LL and accuracy in " + std::to_string(wins) +
                         "/5 seeds [" + per_seed + "] (limit 4)"};
}

// ---------------------------------------------------------------------------
// 8. Degenerate-model exactness.

std::pair<bool, std::string> criterion_degenerate() {
  Model model(small_model(4, Variant::app_vae_fixed_prior, 8, 6, 1.0), 8001);
  for (auto& p : model.store().params()) std::fill(p->value.begin(), p->value.end(), 0.0);
  const ActionSequence seq{{{2, 0.3}, {0, 1.4}, {1, 0.0}, {3, 2.2}}};
  double worst = 0.0;
  for (int s : {1, 2, 17, 256, 1500}) {
    for (std::uint64_t seed : {1ull, 9ull, 77ull}) {
      const auto ll = importance_sampled_ll(model, seq, s, seed);
      for (std::size_t n = 0; n < seq.size(); ++n) {
        const double exact = std::log(0.25) - time_nll(1.0, seq.events[n].inter_arrival, 1.0);
        worst = std::max(worst, std::abs(ll[n] - exact));
      }
    }
  }
  return {worst < 1e-12, "max |IS - exact| over S in {1..1500} x 3 seeds: " + fmt(worst) +
                             " (limit 1e-12, zero variance)"};
}

// ---------------------------------------------------------------------------
// 10. CLI determinism: identical bytes for identical seeds.

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::pair<bool, std::string> criterion_determinism() {
  const char* cli = APPVAE_CLI_PATH;
  const fs::path dir = fs::temp_directory_path() / "appvae_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto sh = [&](const std::string& args) {
    const std::string cmd = std::string(cli) + " " + args + " > " + (dir / "out.txt").string() +
                            " 2> " + (dir / "err.txt").string();
    return std::system(cmd.c_str()) == 0;
  };

  const std::string data = (dir / "d.evt").string();
  const std::string ckpt = (dir / "m.ckpt").string();
  const std::string model_flags =
      " --latent 6 --hidden 8 --action-embed 6 --time-embed 3 --joint-embed 8 --decoder-hidden 8";
  struct Step {
    std::string name;
    std::string args;
    std::vector<std::string> outputs;
  };
  const std::vector<Step> steps = {
      {"synth",
       "synth --process markov --cycle-k 3 --sequences 16 --events 10 --seed 11 --out " + data,
       {data, data + ".manifest.json"}},
      {"train",
       "train --data " + data + " --out " + ckpt + model_flags +
           " --epochs 3 --batch 8 --lr 0.01 --seed 12 --threads 1",
       {ckpt, ckpt + ".log.jsonl"}},
      {"eval",
       "eval --ckpt " + ckpt + " --data " + data + " --samples 16 --seed 13 --threads 1 --out " +
           (dir / "eval.tsv").string(),
       {(dir / "eval.tsv").string(), (dir / "out.txt").string()}},
      {"generate",
       "generate --ckpt " + ckpt + " --steps 8 --count 3 --stochastic --seed 14 --out " +
           (dir / "gen.evt").string(),
       {(dir / "gen.evt").string()}},
      {"score",
       "score --ckpt " + ckpt + " --data " + data + " --samples 16 --seed 15 --threads 1 --out " +
           (dir / "rank.tsv").string(),
       {(dir / "rank.tsv").string(), (dir / "out.txt").string()}},
      {"traverse",
       "traverse --ckpt " + ckpt + " --dim 2 --points 7 --history-data " + data +
           " --history-index 1 --history-len 4 --seed 16 --out " + (dir / "trav.tsv").string(),
       {(dir / "trav.tsv").string()}},
  };

  std::string failed;
  for (const Step& step : steps) {
    if (!sh(step.args)) {
      failed = step.name + " (first run failed)";
      break;
    }
    std::vector<std::string> first;
    for (const auto& f : step.outputs) first.push_back(slurp(f));
    if (!sh(step.args)) {
      failed = step.name + " (second run failed)";
      break;
    }
    for (std::size_t i = 0; i < step.outputs.size(); ++i) {
      if (slurp(step.outputs[i]) != first[i]) {
        failed = step.name + " (" + step.outputs[i] + " differs)";
        break;
      }
    }
    if (!failed.empty()) break;
  }
  fs::remove_all(dir);
  if (failed.empty())
    return {true, "synth/train/eval/generate/score/traverse byte-identical across reruns"};
  return {false, "non-deterministic: " + failed};
}

// ---------------------------------------------------------------------------
// 11. Latent-size sweep harness.

std::pair<bool, std::string> criterion_sweep() {
  const auto t0 = Clock::now();
  const Dataset data = gen_poisson({2.0, 2, {0.75, 0.25}}, 60, 15, 11001);
  const ModelConfig mc = small_model(2, Variant::app_vae, 8, 8, 0.05);
  TrainConfig tc;
  tc.epochs = 10;
  tc.batch_size = 16;
  tc.learning_rate = 0.01;
  tc.seed = 11002;
  tc.eval_samples = 50;
  const std::vector<int> sizes{8, 16, 32};
  const auto rows = latent_size_sweep(data, sizes, mc, tc);
  const double elapsed = std::chrono::duration<double>(Clock::now() - t0).count();
  bool pass = rows.size() == 3 && elapsed < 1800.0;
  std::string table = "sizes/LL:";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    pass = pass && rows[i].latent_size == sizes[i] && std::isfinite(rows[i].val_ll);
    table += " " + std::to_string(rows[i].latent_size) + "=" + fmt(rows[i].val_ll);
  }
  return {pass, table + " (3 rows, finite, < 30 min)"};
}

}  // namespace

int main() {
  std::printf("appvae acceptance suite\n");
  const auto t0 = Clock::now();

  run(1, "gradient-correctness", criterion_gradients);
  run(2, "closed-form-oracles", criterion_oracles);
  run(3, "distribution-contracts", criterion_contracts);
  run(4, "rate-recovery", criterion_rate_recovery);

  const CycleArtifacts cycle = [] {
    const auto t = Clock::now();
    CycleArtifacts art = train_cycle_model();
    std::printf("       (cycle model trained in %.1fs, best epoch %d)\n",
                std::chrono::duration<double>(Clock::now() - t).count(), art.result.best_epoch);
    return art;
  }();
  run(5, "structure-recovery", [&] { return criterion_structure(cycle); });
  run(6, "learned-vs-fixed-prior", criterion_learned_prior);
  run(7, "bound-property", [&] { return criterion_bound(cycle); });
  run(8, "degenerate-exactness", criterion_degenerate);
  run(9, "anomaly-scoring", [&] { return criterion_anomaly(cycle); });
  run(10, "determinism", criterion_determinism);
  run(11, "sweep-harness", criterion_sweep);

  std::printf("%d/11 criteria passed (total %.1fs)\n", 11 - g_failures,
              std::chrono::duration<double>(Clock::now() - t0).count());
  return g_failures;
}
