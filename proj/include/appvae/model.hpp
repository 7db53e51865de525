#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "appvae/autodiff.hpp"
#include "appvae/checkpoint.hpp"
#include "appvae/errors.hpp"
#include "appvae/events.hpp"
#include "appvae/rng.hpp"
#include "json.hpp"

namespace appvae {

enum class Variant { app_vae, app_vae_fixed_prior, app_lstm, td_lstm };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::app_vae: return "app_vae";
    case Variant::app_vae_fixed_prior: return "app_vae_fixed_prior";
    case Variant::app_lstm: return "app_lstm";
    case Variant::td_lstm: return "td_lstm";
  }
  throw ValidationError("unknown variant");
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "app_vae") return Variant::app_vae;
  if (s == "app_vae_fixed_prior") return Variant::app_vae_fixed_prior;
  if (s == "app_lstm") return Variant::app_lstm;
  if (s == "td_lstm") return Variant::td_lstm;
  throw ValidationError("unknown variant: " + s);
}

struct ModelConfig {
  int num_categories = 0;
  int action_embed_dim = 64;
  int time_embed_dim = 16;
  int joint_embed_dim = 128;
  int hidden_dim = 128;
  int latent_dim = 256;
  int decoder_hidden_dim = 128;
  double delta_tau = 1.0;  // width of the interval the time likelihood integrates over
  Variant variant = Variant::app_vae;

  void validate() const {
    if (num_categories < 1) throw ValidationError("num_categories must be >= 1");
    for (int d : {action_embed_dim, time_embed_dim, joint_embed_dim, hidden_dim, latent_dim,
                  decoder_hidden_dim})
      if (d < 1) throw ValidationError("all model dimensions must be >= 1");
    if (!(delta_tau > 0.0)) throw ValidationError("delta_tau must be positive");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"num_categories", c.num_categories},
       {"action_embed_dim", c.action_embed_dim},
       {"time_embed_dim", c.time_embed_dim},
       {"joint_embed_dim", c.joint_embed_dim},
       {"hidden_dim", c.hidden_dim},
       {"latent_dim", c.latent_dim},
       {"decoder_hidden_dim", c.decoder_hidden_dim},
       {"delta_tau", c.delta_tau},
       {"variant", to_string(c.variant)}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("num_categories").get_to(c.num_categories);
  j.at("action_embed_dim").get_to(c.action_embed_dim);
  j.at("time_embed_dim").get_to(c.time_embed_dim);
  j.at("joint_embed_dim").get_to(c.joint_embed_dim);
  j.at("hidden_dim").get_to(c.hidden_dim);
  j.at("latent_dim").get_to(c.latent_dim);
  j.at("decoder_hidden_dim").get_to(c.decoder_hidden_dim);
  j.at("delta_tau").get_to(c.delta_tau);
  c.variant = variant_from_string(j.at("variant").get<std::string>());
}

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;
inline constexpr double kLambdaMin = 1e-6;
inline constexpr double kLambdaMax = 1e6;

struct GaussianParams {
  std::vector<double> mean;
  std::vector<double> log_var;
};

struct StepDistribution {
  std::vector<double> action_probs;
  double lambda = 1.0;
};

struct GaussianNodes {
  Tape::Id mean = -1;
  Tape::Id log_var = -1;
};

// Per-step record of a teacher-forced pass. Value fields are filled for
// inspection; the tape ids feed the objective.
struct ForwardTrace {
  struct StepIds {
    Tape::Id post_mean = -1, post_log_var = -1;
    Tape::Id prior_mean = -1, prior_log_var = -1;
    Tape::Id z = -1;
    Tape::Id log_probs = -1;
    Tape::Id lambda = -1;
    Tape::Id tau_hat = -1;
  };
  std::vector<GaussianParams> posterior;
  std::vector<GaussianParams> prior;
  std::vector<std::vector<double>> latent;
  std::vector<StepDistribution> dist;
  std::vector<double> tau_hat;  // td_lstm only
  std::vector<StepIds> ids;

  std::size_t size() const { return ids.size(); }
};

// Injected source of standard-normal draws for the reparameterized sampler.
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual void fill(std::span<double> out) = 0;
};

class RngNoise : public NoiseSource {
 public:
  explicit RngNoise(std::uint64_t seed) : rng_(seed) {}
  void fill(std::span<double> out) override { rng_.fill_normal(out); }

 private:
  SplitMix64 rng_;
};

class ZeroNoise : public NoiseSource {
 public:
  void fill(std::span<double> out) override {
    for (double& x : out) x = 0.0;
  }
};

// Replays pre-drawn vectors; reset() restarts the stream so a loss closure
// sees identical noise on every invocation (finite-difference checks).
class CannedNoise : public NoiseSource {
 public:
  explicit CannedNoise(std::vector<std::vector<double>> draws) : draws_(std::move(draws)) {}
  void fill(std::span<double> out) override {
    if (next_ >= draws_.size()) throw ValidationError("CannedNoise exhausted");
    const auto& d = draws_[next_++];
    if (d.size() != out.size()) throw ValidationError("CannedNoise draw length mismatch");
    std::copy(d.begin(), d.end(), out.begin());
  }
  void reset() { next_ = 0; }

 private:
  std::vector<std::vector<double>> draws_;
  std::size_t next_ = 0;
};

inline std::vector<double> sample_latent_values(const GaussianParams& g,
                                                std::span<const double> noise) {
  if (g.mean.size() != noise.size() || g.log_var.size() != noise.size())
    throw ValidationError("sample_latent: dimension mismatch");
  std::vector<double> z(g.mean.size());
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] = g.mean[i] + std::exp(0.5 * g.log_var[i]) * noise[i];
  return z;
}

inline double gaussian_log_pdf(std::span<const double> z, const GaussianParams& g) {
  constexpr double kLog2Pi = 1.8378770664093453;
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = z[i] - g.mean[i];
    acc += g.log_var[i] + kLog2Pi + d * d * std::exp(-g.log_var[i]);
  }
  return -0.5 * acc;
}

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    SplitMix64 rng(derive_seed(init_seed, "init"));
    register_params(rng);
    bind();
  }

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  static Model load_checkpoint(const std::filesystem::path& path) {
    ParameterStore store;
    const nlohmann::json config = load_store(path, store);
    ModelConfig cfg = config.at("model").get<ModelConfig>();
    return Model(std::move(cfg), std::move(store));
  }

  void save_checkpoint(const std::filesystem::path& path) const {
    nlohmann::json config;
    config["model"] = cfg_;
    save_store(path, store_, config);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  bool is_vae() const {
    return cfg_.variant == Variant::app_vae || cfg_.variant == Variant::app_vae_fixed_prior;
  }
  bool has_learned_prior() const { return cfg_.variant == Variant::app_vae; }

  // ---- tape path -----------------------------------------------------

  Tape::Id embed_event(Tape& tape, int category_id, double inter_arrival) const {
    if (category_id < 0 || category_id >= cfg_.num_categories)
      throw ValidationError("embed_event: category out of range");
    if (!std::isfinite(inter_arrival) || inter_arrival < 0.0)
      throw ValidationError("embed_event: bad inter-arrival time");
    const Tape::Id a1 = tape.relu(tape.linear(*b_.ea_w1, *b_.ea_b1,
                                              tape.one_hot(category_id, cfg_.num_categories)));
    const Tape::Id a2 = tape.linear(*b_.ea_w2, *b_.ea_b2, a1);
    const Tape::Id t1 =
        tape.relu(tape.linear(*b_.et_w1, *b_.et_b1, tape.constant({inter_arrival})));
    const Tape::Id t2 = tape.linear(*b_.et_w2, *b_.et_b2, t1);
    return tape.linear(*b_.ej_w, *b_.ej_b, tape.concat(a2, t2));
  }

  Tape::Id embed_bos(Tape& tape) const { return tape.leaf(*b_.bos); }

  std::pair<LstmNodes, GaussianNodes> posterior_step(Tape& tape, const LstmNodes& state,
                                                     Tape::Id x_emb) const {
    require_vae("posterior_step");
    return posterior_step_on(tape, state, x_emb);
  }

  // Emits parameters for the NEXT step's latent, i.e. before consuming that
  // step's event. With the fixed-prior ablation this is N(0, I) always.
  std::pair<LstmNodes, GaussianNodes> prior_step(Tape& tape, const LstmNodes& state,
                                                 Tape::Id x_emb) const {
    require_vae("prior_step");
    if (!has_learned_prior()) {
      const std::vector<double> zeros(cfg_.latent_dim, 0.0);
      return {state, GaussianNodes{tape.constant(zeros), tape.constant(zeros)}};
    }
    const LstmNodes next = lstm_step(tape, b_.prior_lstm, state, x_emb);
    return {next, gauss_head(tape, next.h, b_.pr_w1, b_.pr_b1, b_.pr_wm, b_.pr_bm, b_.pr_wv,
                             b_.pr_bv)};
  }

  Tape::Id sample_latent(Tape& tape, const GaussianNodes& g, std::span<const double> noise) const {
    const Tape::Id std_dev = tape.exp_(tape.affine(g.log_var, 0.5, 0.0));
    return tape.add(g.mean, tape.mul(std_dev, tape.constant({noise.begin(), noise.end()})));
  }

  Tape::Id decode_action_log_probs(Tape& tape, Tape::Id z) const {
    const Tape::Id d1 = tape.relu(tape.linear(*b_.da_w1, *b_.da_b1, z));
    const Tape::Id d2 = tape.relu(tape.linear(*b_.da_w2, *b_.da_b2, d1));
    return tape.log_softmax(tape.linear(*b_.da_w3, *b_.da_b3, d2));
  }

  Tape::Id decode_time_lambda(Tape& tape, Tape::Id z) const {
    if (cfg_.variant == Variant::td_lstm)
      throw ValidationError("td_lstm has no intensity decoder");
    const Tape::Id d1 = tape.relu(tape.linear(*b_.dt_w1, *b_.dt_b1, z));
    const Tape::Id d2 = tape.relu(tape.linear(*b_.dt_w2, *b_.dt_b2, d1));
    return tape.clamp(tape.exp_(tape.linear(*b_.dt_w3, *b_.dt_b3, d2)), kLambdaMin, kLambdaMax);
  }

  Tape::Id decode_tau_hat(Tape& tape, Tape::Id h) const {
    if (cfg_.variant != Variant::td_lstm)
      throw ValidationError("decode_tau_hat is a td_lstm operation");
    const Tape::Id d1 = tape.relu(tape.linear(*b_.dt_w1, *b_.dt_b1, h));
    const Tape::Id d2 = tape.relu(tape.linear(*b_.dt_w2, *b_.dt_b2, d1));
    return tape.softplus(tape.linear(*b_.dt_w3, *b_.dt_b3, d2));
  }

  // One baseline step: decode the next-event distribution from the incoming
  // state (history only), then consume x_emb.
  struct BaselineStep {
    LstmNodes state;
    Tape::Id log_probs = -1;
    Tape::Id lambda = -1;   // app_lstm
    Tape::Id tau_hat = -1;  // td_lstm
  };

  BaselineStep baseline_step(Tape& tape, const LstmNodes& state, Tape::Id x_emb) const {
    if (is_vae()) throw ValidationError("baseline_step called on a VAE variant");
    BaselineStep out;
    out.log_probs = decode_action_log_probs(tape, state.h);
    if (cfg_.variant == Variant::app_lstm) out.lambda = decode_time_lambda(tape, state.h);
    else out.tau_hat = decode_tau_hat(tape, state.h);
    out.state = lstm_step(tape, b_.enc_lstm, state, x_emb);
    return out;
  }

  // Teacher-forced pass over a full sequence. Both recurrent branches first
  // consume the learned begin-of-sequence token; at step n the prior head is
  // read before the branch sees x_n, the posterior head after.
  ForwardTrace forward_teacher_forced(Tape& tape, const ActionSequence& seq, NoiseSource& noise,
                                      bool use_posterior_sampling) const {
    require_vae("forward_teacher_forced");
    if (seq.events.empty()) throw ValidationError("empty sequence");
    ForwardTrace trace;
    const Tape::Id bos = embed_bos(tape);
    LstmNodes post_state = lstm_step(tape, b_.post_lstm, lstm_initial(tape, cfg_.hidden_dim), bos);
    LstmNodes prior_state;
    if (has_learned_prior())
      prior_state = lstm_step(tape, b_.prior_lstm, lstm_initial(tape, cfg_.hidden_dim), bos);
    std::vector<double> eps(cfg_.latent_dim);
    for (const ActionEvent& ev : seq.events) {
      ForwardTrace::StepIds ids;
      GaussianNodes prior_g;
      if (has_learned_prior()) {
        prior_g = gauss_head(tape, prior_state.h, b_.pr_w1, b_.pr_b1, b_.pr_wm, b_.pr_bm,
                             b_.pr_wv, b_.pr_bv);
      } else {
        const std::vector<double> zeros(cfg_.latent_dim, 0.0);
        prior_g = {tape.constant(zeros), tape.constant(zeros)};
      }
      const Tape::Id x_emb = embed_event(tape, ev.category_id, ev.inter_arrival);
      auto [post_next, post_g] = posterior_step_on(tape, post_state, x_emb);
      post_state = post_next;

      noise.fill(eps);
      const GaussianNodes& sample_from = use_posterior_sampling ? post_g : prior_g;
      const Tape::Id z = sample_latent(tape, sample_from, eps);
      ids.post_mean = post_g.mean;
      ids.post_log_var = post_g.log_var;
      ids.prior_mean = prior_g.mean;
      ids.prior_log_var = prior_g.log_var;
      ids.z = z;
      ids.log_probs = decode_action_log_probs(tape, z);
      ids.lambda = decode_time_lambda(tape, z);
      trace.ids.push_back(ids);
      trace.posterior.push_back({tape.val(ids.post_mean), tape.val(ids.post_log_var)});
      trace.prior.push_back({tape.val(ids.prior_mean), tape.val(ids.prior_log_var)});
      trace.latent.push_back(tape.val(z));
      StepDistribution dist;
      dist.action_probs = tape.val(ids.log_probs);
      for (double& p : dist.action_probs) p = std::exp(p);
      dist.lambda = tape.scalar(ids.lambda);
      trace.dist.push_back(std::move(dist));

      if (has_learned_prior()) prior_state = lstm_step(tape, b_.prior_lstm, prior_state, x_emb);
    }
    return trace;
  }

  ForwardTrace forward_baseline(Tape& tape, const ActionSequence& seq) const {
    if (is_vae()) throw ValidationError("forward_baseline called on a VAE variant");
    if (seq.events.empty()) throw ValidationError("empty sequence");
    ForwardTrace trace;
    LstmNodes state = lstm_step(tape, b_.enc_lstm, lstm_initial(tape, cfg_.hidden_dim),
                                embed_bos(tape));
    for (const ActionEvent& ev : seq.events) {
      const BaselineStep step =
          baseline_step(tape, state, embed_event(tape, ev.category_id, ev.inter_arrival));
      state = step.state;
      ForwardTrace::StepIds ids;
      ids.log_probs = step.log_probs;
      ids.lambda = step.lambda;
      ids.tau_hat = step.tau_hat;
      trace.ids.push_back(ids);
      StepDistribution dist;
      dist.action_probs = tape.val(step.log_probs);
      for (double& p : dist.action_probs) p = std::exp(p);
      dist.lambda = step.lambda >= 0 ? tape.scalar(step.lambda) : 1.0;
      trace.dist.push_back(std::move(dist));
      if (step.tau_hat >= 0) trace.tau_hat.push_back(tape.scalar(step.tau_hat));
    }
    return trace;
  }

  // ---- value path (evaluation; agrees with the tape path bit for bit) ---

  std::vector<double> embed_event_values(int category_id, double inter_arrival) const {
    if (category_id < 0 || category_id >= cfg_.num_categories)
      throw ValidationError("embed_event: category out of range");
    std::vector<double> one_hot(cfg_.num_categories, 0.0);
    one_hot[category_id] = 1.0;
    std::vector<double> a = linear_values(*b_.ea_w1, b_.ea_b1, one_hot);
    relu_inplace(a);
    a = linear_values(*b_.ea_w2, b_.ea_b2, a);
    std::vector<double> t = linear_values(*b_.et_w1, b_.et_b1, std::vector<double>{inter_arrival});
    relu_inplace(t);
    t = linear_values(*b_.et_w2, b_.et_b2, t);
    a.insert(a.end(), t.begin(), t.end());
    return linear_values(*b_.ej_w, b_.ej_b, a);
  }

  std::vector<double> action_log_probs_values(std::span<const double> z) const {
    std::vector<double> d = linear_values(*b_.da_w1, b_.da_b1, z);
    relu_inplace(d);
    d = linear_values(*b_.da_w2, b_.da_b2, d);
    relu_inplace(d);
    d = linear_values(*b_.da_w3, b_.da_b3, d);
    log_softmax_inplace(d);
    return d;
  }

  std::vector<double> action_probs_values(std::span<const double> z) const {
    std::vector<double> lp = action_log_probs_values(z);
    for (double& v : lp) v = std::exp(v);
    return lp;
  }

  double lambda_values(std::span<const double> z) const {
    if (cfg_.variant == Variant::td_lstm)
      throw ValidationError("td_lstm has no intensity decoder");
    std::vector<double> d = linear_values(*b_.dt_w1, b_.dt_b1, z);
    relu_inplace(d);
    d = linear_values(*b_.dt_w2, b_.dt_b2, d);
    relu_inplace(d);
    d = linear_values(*b_.dt_w3, b_.dt_b3, d);
    return std::min(std::max(std::exp(d[0]), kLambdaMin), kLambdaMax);
  }

  double tau_hat_values(std::span<const double> h) const {
    if (cfg_.variant != Variant::td_lstm)
      throw ValidationError("tau_hat is a td_lstm output");
    std::vector<double> d = linear_values(*b_.dt_w1, b_.dt_b1, h);
    relu_inplace(d);
    d = linear_values(*b_.dt_w2, b_.dt_b2, d);
    relu_inplace(d);
    d = linear_values(*b_.dt_w3, b_.dt_b3, d);
    return appvae::softplus(d[0]);
  }

  StepDistribution decode_step_values(std::span<const double> z) const {
    StepDistribution dist;
    dist.action_probs = action_probs_values(z);
    dist.lambda = lambda_values(z);
    return dist;
  }

  GaussianParams posterior_head_values(std::span<const double> h) const {
    require_vae("posterior head");
    return gauss_head_values(h, b_.ph_w1, b_.ph_b1, b_.ph_wm, b_.ph_bm, b_.ph_wv, b_.ph_bv);
  }

  GaussianParams prior_head_values(std::span<const double> h) const {
    require_vae("prior head");
    if (!has_learned_prior())
      return {std::vector<double>(cfg_.latent_dim, 0.0), std::vector<double>(cfg_.latent_dim, 0.0)};
    return gauss_head_values(h, b_.pr_w1, b_.pr_b1, b_.pr_wm, b_.pr_bm, b_.pr_wv, b_.pr_bv);
  }

  const LstmWeights& posterior_lstm() const { return b_.post_lstm; }
  const LstmWeights& prior_lstm() const { return b_.prior_lstm; }
  const LstmWeights& encoder_lstm() const { return b_.enc_lstm; }

 private:
  struct Bindings {
    Param *ea_w1, *ea_b1, *ea_w2, *ea_b2;
    Param *et_w1, *et_b1, *et_w2, *et_b2;
    Param *ej_w, *ej_b;
    Param* bos;
    LstmWeights post_lstm{}, prior_lstm{}, enc_lstm{};
    Param *ph_w1 = nullptr, *ph_b1 = nullptr, *ph_wm = nullptr, *ph_bm = nullptr,
          *ph_wv = nullptr, *ph_bv = nullptr;
    Param *pr_w1 = nullptr, *pr_b1 = nullptr, *pr_wm = nullptr, *pr_bm = nullptr,
          *pr_wv = nullptr, *pr_bv = nullptr;
    Param *da_w1, *da_b1, *da_w2, *da_b2, *da_w3, *da_b3;
    Param *dt_w1, *dt_b1, *dt_w2, *dt_b2, *dt_w3, *dt_b3;
  };

  Model(ModelConfig cfg, ParameterStore&& store) : cfg_(cfg), store_(std::move(store)) {
    cfg_.validate();
    bind();
    std::size_t expected = 11 + 12;  // embeddings + BOS + first LSTM
    if (cfg_.variant == Variant::app_vae) expected += 12 + 6 + 6 + 12;
    else if (cfg_.variant == Variant::app_vae_fixed_prior) expected += 6 + 12;
    else expected += 12;
    if (store_.params().size() != expected)
      throw ValidationError("checkpoint parameter count does not match its config");
  }

  void require_vae(const char* what) const {
    if (!is_vae()) throw ValidationError(std::string(what) + " requires a VAE variant");
  }

  void register_params(SplitMix64& rng) {
    const int k = cfg_.num_categories;
    const int a = cfg_.action_embed_dim;
    const int t = cfg_.time_embed_dim;
    const int j = cfg_.joint_embed_dim;
    const int h = cfg_.hidden_dim;
    const int l = cfg_.latent_dim;
    const int d = cfg_.decoder_hidden_dim;

    store_.add_weight("emb.action.w1", a, k, rng);
    store_.add_zeros("emb.action.b1", a);
    store_.add_weight("emb.action.w2", a, a, rng);
    store_.add_zeros("emb.action.b2", a);
    store_.add_weight("emb.time.w1", t, 1, rng);
    store_.add_zeros("emb.time.b1", t);
    store_.add_weight("emb.time.w2", t, t, rng);
    store_.add_zeros("emb.time.b2", t);
    store_.add_weight("emb.joint.w", j, a + t, rng);
    store_.add_zeros("emb.joint.b", j);
    store_.add_weight("emb.bos", j, 1, rng, j);

    const bool vae = cfg_.variant == Variant::app_vae ||
                     cfg_.variant == Variant::app_vae_fixed_prior;
    if (vae) {
      register_lstm(store_, "post.lstm", j, h, rng);
      if (cfg_.variant == Variant::app_vae) register_lstm(store_, "prior.lstm", j, h, rng);
      auto head = [&](const std::string& prefix) {
        store_.add_weight(prefix + ".w1", h, h, rng);
        store_.add_zeros(prefix + ".b1", h);
        store_.add_weight(prefix + ".wm", l, h, rng);
        store_.add_zeros(prefix + ".bm", l);
        store_.add_weight(prefix + ".wv", l, h, rng);
        store_.add_zeros(prefix + ".bv", l);
      };
      head("post.head");
      if (cfg_.variant == Variant::app_vae) head("prior.head");
    } else {
      register_lstm(store_, "enc.lstm", j, h, rng);
    }

    const int dec_in = vae ? l : h;
    auto decoder = [&](const std::string& prefix, int out_dim) {
      store_.add_weight(prefix + ".w1", d, dec_in, rng);
      store_.add_zeros(prefix + ".b1", d);
      store_.add_weight(prefix + ".w2", d, d, rng);
      store_.add_zeros(prefix + ".b2", d);
      store_.add_weight(prefix + ".w3", out_dim, d, rng);
      store_.add_zeros(prefix + ".b3", out_dim);
    };
    decoder("dec.action", k);
    decoder(cfg_.variant == Variant::td_lstm ? "dec.tau" : "dec.time", 1);
  }

  void bind() {
    auto g = [&](const std::string& n) { return &store_.get(n); };
    auto expect = [&](Param* p, int rows, int cols) {
      if (p->rows != rows || p->cols != cols)
        throw ValidationError("checkpoint shape mismatch for " + p->name);
      return p;
    };
    const int k = cfg_.num_categories;
    const int a = cfg_.action_embed_dim;
    const int t = cfg_.time_embed_dim;
    const int j = cfg_.joint_embed_dim;
    const int h = cfg_.hidden_dim;
    const int l = cfg_.latent_dim;
    const int d = cfg_.decoder_hidden_dim;

    b_.ea_w1 = expect(g("emb.action.w1"), a, k);
    b_.ea_b1 = expect(g("emb.action.b1"), a, 1);
    b_.ea_w2 = expect(g("emb.action.w2"), a, a);
    b_.ea_b2 = expect(g("emb.action.b2"), a, 1);
    b_.et_w1 = expect(g("emb.time.w1"), t, 1);
    b_.et_b1 = expect(g("emb.time.b1"), t, 1);
    b_.et_w2 = expect(g("emb.time.w2"), t, t);
    b_.et_b2 = expect(g("emb.time.b2"), t, 1);
    b_.ej_w = expect(g("emb.joint.w"), j, a + t);
    b_.ej_b = expect(g("emb.joint.b"), j, 1);
    b_.bos = expect(g("emb.bos"), j, 1);

    if (is_vae()) {
      b_.post_lstm = bind_lstm(store_, "post.lstm");
      b_.ph_w1 = expect(g("post.head.w1"), h, h);
      b_.ph_b1 = expect(g("post.head.b1"), h, 1);
      b_.ph_wm = expect(g("post.head.wm"), l, h);
      b_.ph_bm = expect(g("post.head.bm"), l, 1);
      b_.ph_wv = expect(g("post.head.wv"), l, h);
      b_.ph_bv = expect(g("post.head.bv"), l, 1);
      if (has_learned_prior()) {
        b_.prior_lstm = bind_lstm(store_, "prior.lstm");
        b_.pr_w1 = expect(g("prior.head.w1"), h, h);
        b_.pr_b1 = expect(g("prior.head.b1"), h, 1);
        b_.pr_wm = expect(g("prior.head.wm"), l, h);
        b_.pr_bm = expect(g("prior.head.bm"), l, 1);
        b_.pr_wv = expect(g("prior.head.wv"), l, h);
        b_.pr_bv = expect(g("prior.head.bv"), l, 1);
      }
    } else {
      b_.enc_lstm = bind_lstm(store_, "enc.lstm");
    }

    const int dec_in = is_vae() ? l : h;
    b_.da_w1 = expect(g("dec.action.w1"), d, dec_in);
    b_.da_b1 = expect(g("dec.action.b1"), d, 1);
    b_.da_w2 = expect(g("dec.action.w2"), d, d);
    b_.da_b2 = expect(g("dec.action.b2"), d, 1);
    b_.da_w3 = expect(g("dec.action.w3"), k, d);
    b_.da_b3 = expect(g("dec.action.b3"), k, 1);
    const std::string tdec = cfg_.variant == Variant::td_lstm ? "dec.tau" : "dec.time";
    b_.dt_w1 = expect(g(tdec + ".w1"), d, dec_in);
    b_.dt_b1 = expect(g(tdec + ".b1"), d, 1);
    b_.dt_w2 = expect(g(tdec + ".w2"), d, d);
    b_.dt_b2 = expect(g(tdec + ".b2"), d, 1);
    b_.dt_w3 = expect(g(tdec + ".w3"), 1, d);
    b_.dt_b3 = expect(g(tdec + ".b3"), 1, 1);
  }

  std::pair<LstmNodes, GaussianNodes> posterior_step_on(Tape& tape, const LstmNodes& state,
                                                        Tape::Id x_emb) const {
    const LstmNodes next = lstm_step(tape, b_.post_lstm, state, x_emb);
    return {next, gauss_head(tape, next.h, b_.ph_w1, b_.ph_b1, b_.ph_wm, b_.ph_bm, b_.ph_wv,
                             b_.ph_bv)};
  }

  GaussianNodes gauss_head(Tape& tape, Tape::Id h, Param* w1, Param* b1, Param* wm, Param* bm,
                           Param* wv, Param* bv) const {
    const Tape::Id hidden = tape.relu(tape.linear(*w1, *b1, h));
    return {tape.linear(*wm, *bm, hidden),
            tape.clamp(tape.linear(*wv, *bv, hidden), kLogVarMin, kLogVarMax)};
  }

  GaussianParams gauss_head_values(std::span<const double> h, Param* w1, Param* b1, Param* wm,
                                   Param* bm, Param* wv, Param* bv) const {
    std::vector<double> hidden = linear_values(*w1, b1, h);
    relu_inplace(hidden);
    GaussianParams g{linear_values(*wm, bm, hidden), linear_values(*wv, bv, hidden)};
    for (double& v : g.log_var) v = std::min(std::max(v, kLogVarMin), kLogVarMax);
    return g;
  }

  static void relu_inplace(std::vector<double>& v) {
    for (double& x : v)
      if (x < 0.0) x = 0.0;
  }

  static void log_softmax_inplace(std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    const double lse = m + std::log(s);
    for (double& x : v) x -= lse;
  }

  ModelConfig cfg_;
  ParameterStore store_;
  Bindings b_{};

  friend class SequenceEncoder;
};

// Incremental value-path encoder. Construction consumes the BOS token; then
// for each step read the prior context before consume() and the posterior
// context after, mirroring the teacher-forced tape pass.
class SequenceEncoder {
 public:
  explicit SequenceEncoder(const Model& model) : model_(model) {
    const std::vector<double> bos = model.b_.bos->value;
    if (model_.is_vae()) {
      post_ = lstm_step_values(model.b_.post_lstm,
                               lstm_initial_values(model.config().hidden_dim), bos);
      if (model_.has_learned_prior())
        prior_ = lstm_step_values(model.b_.prior_lstm,
                                  lstm_initial_values(model.config().hidden_dim), bos);
    } else {
      enc_ = lstm_step_values(model.b_.enc_lstm,
                              lstm_initial_values(model.config().hidden_dim), bos);
    }
  }

  void consume(const ActionEvent& ev) {
    const std::vector<double> x = model_.embed_event_values(ev.category_id, ev.inter_arrival);
    if (model_.is_vae()) {
      post_ = lstm_step_values(model_.b_.post_lstm, post_, x);
      if (model_.has_learned_prior()) prior_ = lstm_step_values(model_.b_.prior_lstm, prior_, x);
    } else {
      enc_ = lstm_step_values(model_.b_.enc_lstm, enc_, x);
    }
  }

  void consume(const ActionSequence& seq) {
    for (const auto& ev : seq.events) consume(ev);
  }

  // Gaussian over the next step's latent given everything consumed so far.
  GaussianParams prior_params() const {
    if (!model_.has_learned_prior()) return model_.prior_head_values({});
    return model_.prior_head_values(prior_.h);
  }

  // Gaussian over the current step's latent (history including that step).
  GaussianParams posterior_params() const { return model_.posterior_head_values(post_.h); }

  // Baseline decoder input for the next step.
  const std::vector<double>& encoder_hidden() const {
    if (model_.is_vae()) throw ValidationError("encoder_hidden is a baseline context");
    return enc_.h;
  }

 private:
  const Model& model_;
  RecurrentState post_{}, prior_{}, enc_{};
};

}  // namespace appvae
