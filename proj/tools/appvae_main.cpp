// appvae command-line front end: data synthesis, training, evaluation,
// generation, anomaly scoring, latent traversal, and the latent-size sweep.
//
// Exit codes: 0 success, 1 usage, 2 data/validation, 3 numerical failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "appvae/errors.hpp"
#include "appvae/eval.hpp"
#include "appvae/events.hpp"
#include "appvae/model.hpp"
#include "appvae/synth.hpp"
#include "appvae/train.hpp"
#include "json.hpp"

namespace {

using namespace appvae;

struct SynthArgs {
  std::string process;
  std::string out;
  int sequences = 100;
  int events = 50;
  std::uint64_t seed = 0;
  double rate = 0.0;
  double mu = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  int k = 1;
  std::vector<double> probs;
  std::string transition;
  std::vector<double> state_rates;
  int cycle_k = 0;
  double cycle_noise = 0.0;
};

struct ModelFlags {
  int action_embed = 64;
  int time_embed = 16;
  int joint_embed = 128;
  int hidden = 128;
  int latent = 256;
  int decoder_hidden = 128;
  double delta_tau = 1.0;
  std::string variant = "app_vae";

  ModelConfig to_config(int k) const {
    ModelConfig cfg;
    cfg.num_categories = k;
    cfg.action_embed_dim = action_embed;
    cfg.time_embed_dim = time_embed;
    cfg.joint_embed_dim = joint_embed;
    cfg.hidden_dim = hidden;
    cfg.latent_dim = latent;
    cfg.decoder_hidden_dim = decoder_hidden;
    cfg.delta_tau = delta_tau;
    cfg.variant = variant_from_string(variant);
    return cfg;
  }
};

struct TrainFlags {
  int epochs = 1500;
  int batch = 32;
  double lr = 0.001;
  double grad_clip = 5.0;
  double val_fraction = 0.3;
  int samples = 1500;
  int threads = 1;
  double kl_beta = 1.0;
  std::uint64_t seed = 0;

  TrainConfig to_config() const {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch;
    cfg.learning_rate = lr;
    cfg.grad_clip = grad_clip;
    cfg.val_fraction = val_fraction;
    cfg.eval_samples = samples;
    cfg.threads = threads;
    cfg.kl_beta = kl_beta;
    cfg.seed = seed;
    return cfg;
  }
};

void add_model_flags(CLI::App* cmd, ModelFlags& m) {
  cmd->add_option("--variant", m.variant, "app_vae|app_vae_fixed_prior|app_lstm|td_lstm")
      ->capture_default_str();
  cmd->add_option("--latent", m.latent, "latent code dimension")->capture_default_str();
  cmd->add_option("--hidden", m.hidden, "LSTM hidden size")->capture_default_str();
  cmd->add_option("--action-embed", m.action_embed, "action embedding width")
      ->capture_default_str();
  cmd->add_option("--time-embed", m.time_embed, "time embedding width")->capture_default_str();
  cmd->add_option("--joint-embed", m.joint_embed, "joint embedding width")->capture_default_str();
  cmd->add_option("--decoder-hidden", m.decoder_hidden, "decoder MLP width")
      ->capture_default_str();
  cmd->add_option("--delta-tau", m.delta_tau, "time-likelihood interval width")
      ->capture_default_str();
}

void add_train_flags(CLI::App* cmd, TrainFlags& t) {
  cmd->add_option("--epochs", t.epochs, "training epochs")->capture_default_str();
  cmd->add_option("--batch", t.batch, "mini-batch size")->capture_default_str();
  cmd->add_option("--lr", t.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--grad-clip", t.grad_clip, "global gradient-norm clip")
      ->capture_default_str();
  cmd->add_option("--val-fraction", t.val_fraction, "validation share of the input")
      ->capture_default_str();
  cmd->add_option("--samples", t.samples, "Monte Carlo samples for validation LL")
      ->capture_default_str();
  cmd->add_option("--threads", t.threads, "worker threads for validation passes")
      ->capture_default_str();
  cmd->add_option("--kl-beta", t.kl_beta,
                  "KL weight during backprop (reported losses stay unit-weight)")
      ->capture_default_str();
}

CLI::Option* add_seed(CLI::App* cmd, std::uint64_t& seed) {
  return cmd->add_option("--seed", seed, "RNG seed")->envname("APP_TPP_SEED")
      ->capture_default_str();
}

std::vector<std::vector<double>> parse_matrix(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::stringstream row_stream(text);
  std::string row;
  while (std::getline(row_stream, row, ';')) {
    std::vector<double> vals;
    std::stringstream cell_stream(row);
    std::string cell;
    while (std::getline(cell_stream, cell, ',')) {
      double v = 0.0;
      if (!parse_double(cell, v))
        throw ValidationError("bad transition entry '" + cell + "'");
      vals.push_back(v);
    }
    rows.push_back(std::move(vals));
  }
  return rows;
}

int run_synth(const SynthArgs& a, const CLI::App* cmd) {
  nlohmann::json manifest{{"process", a.process}, {"sequences", a.sequences},
                          {"events", a.events},   {"seed", a.seed}};
  Dataset data;
  if (a.process == "poisson") {
    if (!cmd->count("--rate")) {
      std::cerr << "synth: --rate is required for --process poisson\n";
      return 1;
    }
    PoissonSpec spec{a.rate, a.k, a.probs};
    data = gen_poisson(spec, a.sequences, a.events, a.seed);
    manifest["rate"] = a.rate;
    manifest["k"] = a.k;
  } else if (a.process == "hawkes") {
    if (!cmd->count("--mu") || !cmd->count("--alpha") || !cmd->count("--beta")) {
      std::cerr << "synth: --mu, --alpha and --beta are required for --process hawkes\n";
      return 1;
    }
    HawkesSpec spec{a.mu, a.alpha, a.beta, a.k};
    data = gen_hawkes(spec, a.sequences, a.events, a.seed);
    manifest["mu"] = a.mu;
    manifest["alpha"] = a.alpha;
    manifest["beta"] = a.beta;
    manifest["k"] = a.k;
  } else if (a.process == "self_correcting") {
    if (!cmd->count("--mu") || !cmd->count("--alpha")) {
      std::cerr << "synth: --mu and --alpha are required for --process self_correcting\n";
      return 1;
    }
    SelfCorrectingSpec spec{a.mu, a.alpha};
    data = gen_self_correcting(spec, a.sequences, a.events, a.seed);
    manifest["mu"] = a.mu;
    manifest["alpha"] = a.alpha;
  } else if (a.process == "markov") {
    MarkovMarkSpec spec;
    if (a.cycle_k > 0) {
      spec = markov_cycle_spec(a.cycle_k, a.state_rates, a.cycle_noise);
    } else if (!a.transition.empty()) {
      spec.transition_matrix = parse_matrix(a.transition);
      spec.per_state_rate = a.state_rates;
    } else {
      std::cerr << "synth: markov needs --transition or --cycle-k\n";
      return 1;
    }
    data = gen_markov_marks(spec, a.sequences, a.events, a.seed);
    manifest["k"] = static_cast<int>(spec.transition_matrix.size());
  } else {
    std::cerr << "synth: unknown process '" << a.process << "'\n";
    return 1;
  }
  write_dataset_file(data, a.out);
  write_text_file_atomic(a.out + ".manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << data.sequences.size() << " sequences (K=" << data.num_categories
            << ") to " << a.out << "\n";
  return 0;
}

std::string report_text(const EvalReport& r) {
  std::ostringstream out;
  out << "sequences\t" << r.per_sequence.size() << "\n";
  out << "steps\t" << r.total_steps << "\n";
  out << "accuracy_percent\t" << format_double(r.accuracy_percent) << "\n";
  out << "mae\t" << format_double(r.mae) << "\n";
  out << "mean_expected_tau\t" << format_double(r.mean_expected_tau) << "\n";
  out << "ll_per_step_mean\t" << format_double(r.ll_per_step_mean) << "\n";
  out << "ll_per_sequence_sum_mean\t" << format_double(r.ll_per_sequence_sum_mean) << "\n";
  return out.str();
}

ActionSequence load_history(const std::string& path, int index, int len, double time_scale) {
  if (path.empty()) return {};
  const Dataset d = parse_dataset_file(path, time_scale);
  if (index < 0 || index >= static_cast<int>(d.sequences.size()))
    throw ValidationError("history index out of range");
  ActionSequence h = d.sequences[index];
  if (len >= 0 && len < static_cast<int>(h.events.size())) h.events.resize(len);
  return h;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"appvae: marked event-sequence modeling with a recurrent VAE point process"};
  app.require_subcommand(1);
  // key=value config files use one [subcommand] section per command;
  // explicit command-line flags always win over config values
  app.set_config("--config", "", "read options from a key=value config file");
  app.allow_config_extras(false);

  // synth -------------------------------------------------------------
  SynthArgs sy;
  CLI::App* synth = app.add_subcommand("synth", "generate synthetic event data");
  synth->fallthrough();
  synth->add_option("--process", sy.process, "poisson|hawkes|self_correcting|markov")
      ->required();
  synth->add_option("--out", sy.out, "output events file")->required();
  synth->add_option("--sequences", sy.sequences, "number of sequences")->capture_default_str();
  synth->add_option("--events", sy.events, "events per sequence")->capture_default_str();
  add_seed(synth, sy.seed);
  synth->add_option("--rate", sy.rate, "poisson rate");
  synth->add_option("--mu", sy.mu, "hawkes base rate / self-correcting drift");
  synth->add_option("--alpha", sy.alpha, "hawkes excitation / self-correcting inhibition");
  synth->add_option("--beta", sy.beta, "hawkes decay");
  synth->add_option("--k", sy.k, "number of categories")->capture_default_str();
  synth->add_option("--probs", sy.probs, "poisson category probabilities")->delimiter(',');
  synth->add_option("--transition", sy.transition,
                    "markov row-stochastic matrix, rows ';'-separated, entries ','-separated");
  synth->add_option("--state-rates", sy.state_rates, "markov per-state rates")->delimiter(',');
  synth->add_option("--cycle-k", sy.cycle_k, "markov: build a K-state cycle chain");
  synth->add_option("--cycle-noise", sy.cycle_noise, "markov cycle: off-cycle mass")
      ->capture_default_str();

  // train -------------------------------------------------------------
  struct {
    std::string data, out, log;
    double time_scale = 1.0;
    ModelFlags model;
    TrainFlags tr;
  } tr;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model on an events file");
  train_cmd->fallthrough();
  train_cmd->add_option("--data", tr.data, "events file")->required();
  train_cmd->add_option("--out", tr.out, "checkpoint path")->required();
  train_cmd->add_option("--log", tr.log, "training log path (default <out>.log.jsonl)");
  train_cmd->add_option("--time-scale", tr.time_scale, "multiply times on load")
      ->capture_default_str();
  add_model_flags(train_cmd, tr.model);
  add_train_flags(train_cmd, tr.tr);
  add_seed(train_cmd, tr.tr.seed);

  // eval --------------------------------------------------------------
  struct {
    std::string ckpt, data, out, strategy = "mode";
    int samples = 1500, threads = 1;
    double time_scale = 1.0;
    std::uint64_t seed = 0;
    bool tau_from_mode = false;
  } ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "teacher-forced evaluation of a checkpoint");
  eval_cmd->fallthrough();
  eval_cmd->add_option("--ckpt", ev.ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--data", ev.data, "events file")->required();
  eval_cmd->add_option("--out", ev.out, "per-sequence TSV report");
  eval_cmd->add_option("--samples", ev.samples, "Monte Carlo samples")->capture_default_str();
  eval_cmd->add_option("--strategy", ev.strategy, "mode|average")->capture_default_str();
  eval_cmd->add_option("--threads", ev.threads, "worker threads")->capture_default_str();
  eval_cmd->add_option("--time-scale", ev.time_scale, "multiply times on load")
      ->capture_default_str();
  eval_cmd->add_flag("--tau-from-mode-samples", ev.tau_from_mode,
                     "average 1/lambda only over samples voting for the predicted category");
  add_seed(eval_cmd, ev.seed);

  // generate ------------------------------------------------------------
  struct {
    std::string ckpt, out, history_data;
    int steps = 10, count = 1, history_index = 0, history_len = -1;
    bool stochastic = false;
    double time_scale = 1.0;
    std::uint64_t seed = 0;
  } ge;
  CLI::App* gen_cmd = app.add_subcommand("generate", "sample sequences from a checkpoint");
  gen_cmd->fallthrough();
  gen_cmd->add_option("--ckpt", ge.ckpt, "checkpoint path")->required();
  gen_cmd->add_option("--out", ge.out, "output events file")->required();
  gen_cmd->add_option("--steps", ge.steps, "events per generated sequence")
      ->capture_default_str();
  gen_cmd->add_option("--count", ge.count, "number of sequences")->capture_default_str();
  gen_cmd->add_flag("--stochastic", ge.stochastic,
                    "sample category and time instead of argmax and 1/lambda");
  gen_cmd->add_option("--history-data", ge.history_data, "events file supplying a history");
  gen_cmd->add_option("--history-index", ge.history_index, "sequence index in --history-data")
      ->capture_default_str();
  gen_cmd->add_option("--history-len", ge.history_len, "use only the first N history events");
  gen_cmd->add_option("--time-scale", ge.time_scale, "multiply times on load")
      ->capture_default_str();
  add_seed(gen_cmd, ge.seed);

  // score ---------------------------------------------------------------
  struct {
    std::string ckpt, data, out;
    int samples = 1500, threads = 1;
    double time_scale = 1.0;
    std::uint64_t seed = 0;
  } sc;
  CLI::App* score_cmd = app.add_subcommand("score", "rank sequences by per-step likelihood");
  score_cmd->fallthrough();
  score_cmd->add_option("--ckpt", sc.ckpt, "checkpoint path")->required();
  score_cmd->add_option("--data", sc.data, "events file")->required();
  score_cmd->add_option("--out", sc.out, "ranking TSV");
  score_cmd->add_option("--samples", sc.samples, "Monte Carlo samples")->capture_default_str();
  score_cmd->add_option("--threads", sc.threads, "worker threads")->capture_default_str();
  score_cmd->add_option("--time-scale", sc.time_scale, "multiply times on load")
      ->capture_default_str();
  add_seed(score_cmd, sc.seed);

  // traverse ------------------------------------------------------------
  struct {
    std::string ckpt, out, history_data;
    int dim = 0, points = 11, history_index = 0, history_len = -1;
    double time_scale = 1.0;
    std::uint64_t seed = 0;
  } tv;
  CLI::App* trav_cmd = app.add_subcommand("traverse", "latent traversal of the next-step prior");
  trav_cmd->fallthrough();
  trav_cmd->add_option("--ckpt", tv.ckpt, "checkpoint path")->required();
  trav_cmd->add_option("--dim", tv.dim, "latent dimension to sweep")->required();
  trav_cmd->add_option("--points", tv.points, "grid points")->capture_default_str();
  trav_cmd->add_option("--out", tv.out, "traversal TSV");
  trav_cmd->add_option("--history-data", tv.history_data, "events file supplying a history");
  trav_cmd->add_option("--history-index", tv.history_index, "sequence index in --history-data")
      ->capture_default_str();
  trav_cmd->add_option("--history-len", tv.history_len, "use only the first N history events");
  trav_cmd->add_option("--time-scale", tv.time_scale, "multiply times on load")
      ->capture_default_str();
  add_seed(trav_cmd, tv.seed);

  // sweep ---------------------------------------------------------------
  struct {
    std::string data, out;
    std::vector<int> sizes;
    double time_scale = 1.0;
    ModelFlags model;
    TrainFlags tr;
  } sw;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "train across latent sizes and report LL");
  sweep_cmd->fallthrough();
  sweep_cmd->add_option("--data", sw.data, "events file")->required();
  sweep_cmd->add_option("--sizes", sw.sizes, "latent sizes to try")->delimiter(',')->required();
  sweep_cmd->add_option("--out", sw.out, "sweep TSV");
  sweep_cmd->add_option("--time-scale", sw.time_scale, "multiply times on load")
      ->capture_default_str();
  add_model_flags(sweep_cmd, sw.model);
  add_train_flags(sweep_cmd, sw.tr);
  add_seed(sweep_cmd, sw.tr.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return run_synth(sy, synth);

    if (train_cmd->parsed()) {
      const Dataset data = parse_dataset_file(tr.data, tr.time_scale);
      const ModelConfig mc = tr.model.to_config(data.num_categories);
      const TrainConfig tc = tr.tr.to_config();
      std::ostringstream log;
      TrainResult result = train(data, mc, tc, &log);
      result.model.save_checkpoint(tr.out);
      const std::string log_path = tr.log.empty() ? tr.out + ".log.jsonl" : tr.log;
      write_text_file_atomic(log_path, log.str());
      std::cout << "best_epoch\t" << result.best_epoch << "\n"
                << "best_val_loss\t" << format_double(result.best_val_loss) << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      const Model model = Model::load_checkpoint(ev.ckpt);
      const Dataset data = parse_dataset_file(ev.data, ev.time_scale);
      const EvalReport report = evaluate(model, data, ev.samples,
                                         strategy_from_string(ev.strategy), ev.seed, ev.threads,
                                         ev.tau_from_mode);
      std::cout << report_text(report);
      if (!ev.out.empty()) {
        std::ostringstream tsv;
        tsv << "sequence_id\tsteps\tll_sum\tll_mean\n";
        for (const auto& s : report.per_sequence)
          tsv << s.sequence_id << '\t' << s.steps << '\t' << format_double(s.ll_sum) << '\t'
              << format_double(s.ll_mean) << '\n';
        write_text_file_atomic(ev.out, tsv.str());
      }
      return 0;
    }

    if (gen_cmd->parsed()) {
      const Model model = Model::load_checkpoint(ge.ckpt);
      const ActionSequence history =
          load_history(ge.history_data, ge.history_index, ge.history_len, ge.time_scale);
      Dataset out{.sequences = {}, .num_categories = model.config().num_categories,
                  .name = "generated"};
      for (int i = 0; i < ge.count; ++i)
        out.sequences.push_back(generate(model, history, ge.steps,
                                         derive_seed(ge.seed, static_cast<std::uint64_t>(i)),
                                         ge.stochastic));
      write_dataset_file(out, ge.out);
      std::cout << "wrote " << out.sequences.size() << " generated sequences to " << ge.out
                << "\n";
      return 0;
    }

    if (score_cmd->parsed()) {
      const Model model = Model::load_checkpoint(sc.ckpt);
      const Dataset data = parse_dataset_file(sc.data, sc.time_scale);
      const auto ranking = anomaly_rank(model, data, sc.samples, sc.seed, sc.threads);
      std::ostringstream tsv;
      tsv << "rank\tsequence_id\tll_mean\n";
      for (std::size_t r = 0; r < ranking.size(); ++r)
        tsv << r << '\t' << ranking[r].first << '\t' << format_double(ranking[r].second) << '\n';
      std::cout << tsv.str();
      if (!sc.out.empty()) write_text_file_atomic(sc.out, tsv.str());
      return 0;
    }

    if (trav_cmd->parsed()) {
      const Model model = Model::load_checkpoint(tv.ckpt);
      const ActionSequence history =
          load_history(tv.history_data, tv.history_index, tv.history_len, tv.time_scale);
      const auto rows = latent_traversal(model, history, tv.dim, tv.points, tv.seed);
      std::ostringstream tsv;
      tsv << "z_value\tlambda";
      for (int k = 0; k < model.config().num_categories; ++k) tsv << "\tp" << k;
      tsv << '\n';
      for (const auto& row : rows) {
        tsv << format_double(row.z_value) << '\t' << format_double(row.dist.lambda);
        for (double p : row.dist.action_probs) tsv << '\t' << format_double(p);
        tsv << '\n';
      }
      std::cout << tsv.str();
      if (!tv.out.empty()) write_text_file_atomic(tv.out, tsv.str());
      return 0;
    }

    if (sweep_cmd->parsed()) {
      const Dataset data = parse_dataset_file(sw.data, sw.time_scale);
      const ModelConfig mc = sw.model.to_config(data.num_categories);
      const TrainConfig tc = sw.tr.to_config();
      const auto rows = latent_size_sweep(data, sw.sizes, mc, tc);
      std::ostringstream table;
      table << "latent_size";
      for (const auto& row : rows) table << '\t' << row.latent_size;
      table << "\nval_ll";
      for (const auto& row : rows) table << '\t' << format_double(row.val_ll);
      table << '\n';
      std::cout << table.str();
      if (!sw.out.empty()) {
        std::ostringstream tsv;
        tsv << "latent_size\tval_ll\n";
        for (const auto& row : rows)
          tsv << row.latent_size << '\t' << format_double(row.val_ll) << '\n';
        write_text_file_atomic(sw.out, tsv.str());
      }
      return 0;
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
