#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "io.hpp"
#include "pbias/calibration.hpp"
#include "pbias/inference.hpp"
#include "pbias/noise_model.hpp"
#include "pbias/simulation.hpp"

namespace pbias::cli {

namespace {

using nlohmann::ordered_json;

struct PriorArgs {
  double alpha = 1.0;
  double beta = 1.0;
  double mass = 0.95;
  std::size_t grid = kDefaultGridPoints;
};

void add_prior_flags(CLI::App* sub, PriorArgs& a) {
  sub->add_option("--prior-alpha", a.alpha, "Beta prior alpha")->capture_default_str();
  sub->add_option("--prior-beta", a.beta, "Beta prior beta")->capture_default_str();
  sub->add_option("--mass", a.mass, "credible interval mass (equal-tailed)")->capture_default_str();
  sub->add_option("--grid", a.grid, "posterior grid points")->capture_default_str();
}

BetaPrior make_prior(const PriorArgs& a) {
  if (!(a.alpha > 0.0) || !(a.beta > 0.0)) throw InputError("--prior-alpha and --prior-beta must be positive");
  if (!(a.mass > 0.0 && a.mass < 1.0)) throw InputError("--mass must lie in (0, 1)");
  if (a.grid < kMinGridPoints) throw InputError("--grid must be at least 129");
  return BetaPrior(a.alpha, a.beta);
}

RunManifest make_manifest(const CLI::App* sub, const std::vector<std::string>& args) {
  RunManifest m;
  m.subcommand = sub->get_name();
  m.argv.assign(args.begin() + 1, args.end());
  m.tool_version = kToolVersion;
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_name() == "--help" || opt->get_name().empty()) continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& res = opt->results();
      for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
    } else {
      value = opt->get_default_str();
    }
    std::string key = opt->get_name();
    key.erase(0, key.find_first_not_of('-'));
    m.flags[key] = value;
  }
  return m;
}

// When replaying a manifest, inputs must hash to the recorded digests.
void check_digests(const RunManifest* expected, const RunManifest& current) {
  if (expected && expected->input_digests != current.input_digests) {
    throw InputError("input files differ from the digests recorded in the manifest");
  }
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) out << text;
  else write_file_atomic(path, text);
}

// ---------------------------------------------------------------------------

struct EstimateArgs {
  std::string train, val, eval, out;
  PriorArgs prior;
  double significance = 0.05;
};

int cmd_estimate(const EstimateArgs& a, RunManifest manifest, const RunManifest* expected, std::ostream& out) {
  const auto prior = make_prior(a.prior);
  if (!(a.significance > 0.0 && a.significance < 1.0)) throw InputError("--significance must lie in (0, 1)");
  const auto train = read_scored_csv(a.train, {Split::train, true, true, false});
  const auto val = read_scored_csv(a.val, {Split::validation, true, true, false});
  const auto eval = read_scored_csv(a.eval, {Split::evaluation, false, false, false});
  manifest.input_digests["train"] = train.digest;
  manifest.input_digests["val"] = val.digest;
  manifest.input_digests["eval"] = eval.digest;
  check_digests(expected, manifest);

  PipelineOptions opts;
  opts.prior = prior;
  opts.mass = a.prior.mass;
  opts.grid_points = a.prior.grid;
  opts.significance = a.significance;
  const auto report = estimate_pipeline(train.dataset, val.dataset, eval.dataset, opts);

  auto doc = to_json(report);
  doc["manifest"] = to_json(manifest);
  emit(doc.dump(2) + "\n", a.out, out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct PosteriorArgs {
  std::int64_t h = -1, t = -1;
  double m = -1.0;
  std::optional<double> p_train;
  PriorArgs prior;
  std::string grid_csv, out;
};

int cmd_posterior(const PosteriorArgs& a, const RunManifest& manifest, std::ostream& out) {
  const auto prior = make_prior(a.prior);
  if (a.h < 0 || a.t < 0 || a.h + a.t < 1) throw InputError("--h and --t must be non-negative with h + t >= 1");
  if (!detail::is_probability(a.m)) throw InputError("--m must lie in [0, 1]");
  if (!a.p_train && a.m != 1.0) throw InputError("--p-train is required unless --m 1");
  const double p_train = a.p_train.value_or(0.5);
  if (!detail::is_probability(p_train)) throw InputError("--p-train must lie in [0, 1]");

  const NoiseModel model(a.m, p_train);
  const BinaryCounts counts(a.h, a.t);
  const auto post = posterior(model, counts, prior, a.prior.grid);
  const auto ci = credible_interval(post, a.prior.mass);
  const auto s = posterior_summaries(post);

  ordered_json doc;
  doc["h"] = a.h;
  doc["t"] = a.t;
  doc["m"] = a.m;
  doc["p_train"] = p_train;
  doc["mu_hat"] = counts.mu_hat();
  doc["map"] = s.map_estimate;
  doc["posterior_mean"] = s.posterior_mean;
  doc["interval_lo"] = ci.lo;
  doc["interval_hi"] = ci.hi;
  doc["mass"] = ci.mass;
  doc["interval_convention"] = "equal-tailed";
  doc["prior_alpha"] = prior.alpha;
  doc["prior_beta"] = prior.beta;
  doc["grid_points"] = post.size();
  doc["manifest"] = to_json(manifest);

  std::string grid_text;
  if (!a.grid_csv.empty()) {
    std::ostringstream g;
    g << "mu,density\n";
    for (std::size_t i = 0; i < post.size(); ++i) {
      g << format_double(post.grid[i]) << ',' << format_double(post.density[i]) << '\n';
    }
    grid_text = g.str();
  }
  emit(doc.dump(2) + "\n", a.out, out);
  if (!a.grid_csv.empty()) write_file_atomic(a.grid_csv, grid_text);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string scenario;
  std::int64_t n = 0, trials = 0, n_train = 0, n_val = 0;
  double p_train = 0.0, target_mcc = 0.0, separation = 0.0, lr = 0.0, significance = 0.05;
  std::vector<double> p_eval, m_grid;
  std::uint64_t seed = 42;
  unsigned threads = 1;
  int epochs = 0;
  bool raw = false;
  std::string labels, out, manifest;
  PriorArgs prior;
};

struct SimulateOptions {
  CLI::Option *n, *trials, *n_train, *n_val, *p_train, *target_mcc, *separation, *lr, *significance, *p_eval,
      *m_grid, *epochs, *labels, *alpha, *beta, *mass, *grid;
};

int cmd_simulate(const SimulateArgs& a, const SimulateOptions& o, RunManifest manifest, std::ostream& out) {
  const auto scenario = parse_scenario(a.scenario);
  if (!scenario) {
    std::string names;
    for (auto s : kAllScenarios) names += (names.empty() ? "" : ", ") + std::string(to_string(s));
    throw InputError("unknown scenario '" + a.scenario + "'; valid scenarios: " + names);
  }
  auto cfg = SimConfig::defaults(*scenario);
  cfg.seed = a.seed;
  cfg.threads = std::max(1u, a.threads);
  if (o.n->count()) cfg.n = a.n;
  if (o.trials->count()) cfg.trials = a.trials;
  if (o.p_train->count()) cfg.p_train = a.p_train;
  if (o.p_eval->count()) cfg.p_eval = a.p_eval;
  if (o.m_grid->count()) cfg.m_grid = a.m_grid;
  if (o.n_train->count()) cfg.n_train = a.n_train;
  if (o.n_val->count()) cfg.n_val = a.n_val;
  if (o.target_mcc->count()) cfg.target_mcc = a.target_mcc;
  if (o.separation->count()) cfg.separation = a.separation;
  if (o.lr->count()) cfg.learning_rate = a.lr;
  if (o.epochs->count()) cfg.epochs = a.epochs;
  if (o.significance->count()) cfg.significance = a.significance;
  if (o.labels->count()) {
    const auto ls = parse_label_sampling(a.labels);
    if (!ls) throw InputError("--labels must be 'fixed' or 'bernoulli'");
    cfg.labels = *ls;
  }
  if (o.alpha->count() || o.beta->count()) cfg.prior = make_prior(a.prior);
  if (o.mass->count()) cfg.mass = a.prior.mass;
  if (o.grid->count()) cfg.grid_points = a.prior.grid;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  manifest.seed = cfg.seed;

  const auto tables = run_scenario(cfg);
  std::ostringstream csv;
  write_sim_csv(csv, a.raw ? tables.raw : tables.aggregate);
  emit(csv.str(), a.out, out);
  std::string manifest_path = a.manifest;
  if (manifest_path.empty() && !a.out.empty()) manifest_path = a.out + ".manifest.json";
  if (!manifest_path.empty()) write_file_atomic(manifest_path, to_json(manifest).dump(2) + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct CalibrateArgs {
  std::string scores, out, table;
  std::size_t bins = 15;
  bool platt = false;
  bool logits = false;
};

void append_table(std::ostringstream& os, const char* stage, const ReliabilityBins& rb) {
  for (std::size_t b = 0; b < rb.n_bins(); ++b) {
    const auto& bin = rb.bins[b];
    os << stage << ',' << b << ',' << format_double(bin.lo) << ',' << format_double(bin.hi) << ',' << bin.count
       << ',' << format_double(bin.mean_confidence) << ',' << format_double(bin.accuracy) << '\n';
  }
}

int cmd_calibrate(const CalibrateArgs& a, RunManifest manifest, const RunManifest* expected, std::ostream& out) {
  if (a.bins == 0) throw InputError("--bins must be positive");
  const auto data = read_scored_csv(a.scores, {Split::validation, true, a.platt, !a.logits});
  manifest.input_digests["scores"] = data.digest;
  check_digests(expected, manifest);
  const auto raw = data.dataset.scores();
  const auto labels = data.dataset.labels();

  std::vector<double> probs(raw.size());
  std::vector<double> logits(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (a.logits) {
      logits[i] = raw[i];
      probs[i] = detail::sigmoid(raw[i]);
    } else {
      probs[i] = raw[i];
      logits[i] = detail::logit(std::clamp(raw[i], 1e-12, 1.0 - 1e-12));
    }
  }

  const auto before = reliability(probs, labels, a.bins);
  ordered_json doc;
  doc["n"] = raw.size();
  doc["bins"] = a.bins;
  doc["input"] = a.logits ? "logits" : "probabilities";
  doc["ece_before"] = ece(before);
  std::ostringstream table;
  table << "stage,bin,lo,hi,count,mean_confidence,accuracy\n";
  append_table(table, "before", before);

  if (a.platt) {
    const auto fit = platt_fit(logits, labels);
    std::vector<double> calibrated(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) calibrated[i] = platt_apply(fit.params, logits[i]);
    const auto after = reliability(calibrated, labels, a.bins);
    doc["ece_after"] = ece(after);
    doc["platt_slope"] = fit.params.slope;
    doc["platt_intercept"] = fit.params.intercept;
    doc["platt_status"] = to_string(fit.status);
    doc["platt_iterations"] = fit.iterations;
    doc["platt_gradient_norm"] = fit.gradient_norm;
    append_table(table, "after", after);
  }
  doc["manifest"] = to_json(manifest);

  const std::string report = doc.dump(2) + "\n";
  if (a.table.empty()) {
    emit(report, a.out, out);
    out << (a.out.empty() ? "\n" : "") << table.str();
  } else {
    emit(report, a.out, out);
    write_file_atomic(a.table, table.str());
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const RunManifest* expected);

int cmd_replay(const std::string& path, std::ostream& out, std::ostream& err, const RunManifest* expected) {
  std::ifstream in(path);
  if (!in) throw InputError(path + ": cannot open manifest");
  RunManifest m;
  try {
    m = manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ": malformed manifest: " + e.what());
  }
  if (m.subcommand == "replay" || expected) throw InputError(path + ": a manifest cannot replay another replay");
  std::vector<std::string> args{"pbias"};
  args.insert(args.end(), m.argv.begin(), m.argv.end());
  return dispatch(args, out, err, &m);
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const RunManifest* expected) {
  CLI::App app{"Participation-bias estimation from calibrated classifier predictions", "pbias"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  EstimateArgs ea;
  auto* est = app.add_subcommand("estimate", "test for and reverse participation bias from score files");
  est->add_option("--train", ea.train, "training split CSV (score,label)")->required();
  est->add_option("--val", ea.val, "validation split CSV (score,label)")->required();
  est->add_option("--eval", ea.eval, "evaluation split CSV (score[,label])")->required();
  est->add_option("--significance", ea.significance, "test level for bias_detected")->capture_default_str();
  est->add_option("--out", ea.out, "report path (default stdout)");
  add_prior_flags(est, ea.prior);

  PosteriorArgs pa;
  auto* post = app.add_subcommand("posterior", "posterior over the true mean from prediction counts");
  post->set_help_flag("--help", "Print this help message and exit");  // frees -h for the count flag
  post->add_option("--h", pa.h, "positive predictions")->required();
  post->add_option("--t", pa.t, "negative predictions")->required();
  post->add_option("--m", pa.m, "accuracy parameter m")->required();
  post->add_option("--p-train", pa.p_train, "training positive rate");
  post->add_option("--grid-csv", pa.grid_csv, "write the full grid as mu,density CSV");
  post->add_option("--out", pa.out, "report path (default stdout)");
  add_prior_flags(post, pa.prior);

  SimulateArgs sa;
  SimulateOptions so{};
  auto* sim = app.add_subcommand("simulate", "Monte Carlo validation experiments");
  sim->add_option("scenario", sa.scenario, "mcc_noise | bias_drift | posterior_recovery | classifier_end_to_end")
      ->required();
  so.n = sim->add_option("--n", sa.n, "examples per trial (evaluation size)");
  so.trials = sim->add_option("--trials", sa.trials, "trials per cell");
  so.p_train = sim->add_option("--p-train", sa.p_train, "training positive rate");
  so.p_eval = sim->add_option("--p-eval", sa.p_eval, "evaluation mean(s), comma separated")->delimiter(',');
  so.m_grid = sim->add_option("--m-grid", sa.m_grid, "accuracy parameter grid, comma separated")->delimiter(',');
  sim->add_option("--seed", sa.seed, "random seed")->capture_default_str();
  sim->add_option("--threads", sa.threads, "worker threads (never changes output)")->capture_default_str();
  sim->add_flag("--raw", sa.raw, "emit one row per trial instead of per-cell aggregates");
  so.labels = sim->add_option("--labels", sa.labels, "label sampling: fixed | bernoulli");
  so.n_train = sim->add_option("--n-train", sa.n_train, "training size (classifier_end_to_end)");
  so.n_val = sim->add_option("--n-val", sa.n_val, "validation size (classifier_end_to_end)");
  so.target_mcc = sim->add_option("--target-mcc", sa.target_mcc, "validation MCC the class separation is tuned to");
  so.separation = sim->add_option("--separation", sa.separation, "fixed class separation d (skips tuning)");
  so.lr = sim->add_option("--lr", sa.lr, "logistic regression learning rate");
  so.epochs = sim->add_option("--epochs", sa.epochs, "logistic regression epochs");
  so.significance = sim->add_option("--significance", sa.significance, "bias test level");
  so.alpha = sim->add_option("--prior-alpha", sa.prior.alpha, "Beta prior alpha");
  so.beta = sim->add_option("--prior-beta", sa.prior.beta, "Beta prior beta");
  so.mass = sim->add_option("--mass", sa.prior.mass, "credible interval mass");
  so.grid = sim->add_option("--grid", sa.prior.grid, "posterior grid points");
  sim->add_option("--out", sa.out, "CSV path (default stdout); manifest written alongside");
  sim->add_option("--manifest", sa.manifest, "manifest path");

  CalibrateArgs ca;
  auto* cal = app.add_subcommand("calibrate", "ECE and Platt scaling for a score file");
  cal->add_option("scores", ca.scores, "CSV with score,label")->required();
  cal->add_option("--bins", ca.bins, "equal-width ECE bins")->capture_default_str();
  cal->add_flag("--platt", ca.platt, "fit Platt scaling and report ECE after");
  cal->add_flag("--logits", ca.logits, "scores are logits rather than probabilities");
  cal->add_option("--out", ca.out, "report path (default stdout)");
  cal->add_option("--table", ca.table, "reliability table CSV path (default: stdout after the report)");

  std::string replay_path;
  auto* rep = app.add_subcommand("replay", "re-run the command recorded in a manifest");
  rep->add_option("manifest", replay_path, "manifest JSON")->required();

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*est) return cmd_estimate(ea, make_manifest(est, args), expected, out);
    if (*post) return cmd_posterior(pa, make_manifest(post, args), out);
    if (*sim) return cmd_simulate(sa, so, make_manifest(sim, args), out);
    if (*cal) return cmd_calibrate(ca, make_manifest(cal, args), expected, out);
    if (*rep) return cmd_replay(replay_path, out, err, expected);
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitInput;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  return dispatch(args, out, err, nullptr);
}

}  // namespace pbias::cli
