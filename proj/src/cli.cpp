#include "hgvae/cli.hpp"

#include "hgvae/baseline.hpp"
#include "hgvae/checkpoint.hpp"
#include "hgvae/dataio.hpp"
#include "hgvae/imputer.hpp"
#include "hgvae/metrics.hpp"
#include "hgvae/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace hgvae::cli {

namespace {

struct Failure : std::runtime_error {
  Failure(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

std::uint64_t default_seed() {
  if (const char* env = std::getenv("HGVAE_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw Failure(kUsage, std::string("HGVAE_SEED is not an unsigned integer: '") + env + "'");
  }
  return 0;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!(f << text) || !f.flush()) throw Failure(kOutput, "cannot write " + path.string());
}

// Config snapshot, seed and tool version next to a command's main output.
void write_manifest(const std::filesystem::path& output, const std::vector<std::string>& args, std::uint64_t seed,
                    const KeyValues& snapshot) {
  std::ostringstream os;
  os << "# hgvae run manifest\n";
  std::string line;
  for (const auto& a : args) line += (line.empty() ? "" : " ") + a;
  KeyValues kv = snapshot;
  kv["run.command"] = line;
  kv["run.seed"] = std::to_string(seed);
  kv["run.version"] = kVersion;
  kv["run.compiler"] = __VERSION__;
  os << format_key_values(kv);
  write_text(std::filesystem::path(output.string() + ".manifest"), os.str());
}

std::unique_ptr<GenerativeModel> open_checkpoint(const std::string& path) {
  try {
    return load_checkpoint(path);
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw Failure(kCheckpoint, e.what());
  }
}

void store_dataset(const std::string& path, const MotionDataset& d) {
  try {
    save_dataset(path, d);
  } catch (const DatasetError&) {
    throw;
  } catch (const std::exception& e) {
    throw Failure(kOutput, e.what());
  }
}

MotionDataset load_centered(const std::string& path) {
  MotionDataset d = load_dataset(path);
  center_sequences(d);
  return d;
}

void check_fits(const GenerativeModel& model, const MotionDataset& d) {
  if (d.nodes() != model.nodes() || d.frames != model.features()) {
    throw Failure(kShape, "dataset has " + std::to_string(d.nodes()) + " nodes x " + std::to_string(d.frames) +
                              " frames, the model expects " + std::to_string(model.nodes()) + " x " +
                              std::to_string(model.features()));
  }
}

std::string latent_summary(const KeyValues& cfg) {
  auto it = cfg.find("latents");
  if (it == cfg.end()) return {};
  std::string out;
  std::istringstream in(it->second);
  for (std::string item; std::getline(in, item, ',');) {
    const auto x = item.find('x');
    out += "(" + item.substr(0, x) + "\xC3\x97" + item.substr(x + 1) + "),";
  }
  if (!out.empty()) out.pop_back();
  return out;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out, test_out, skeleton;
  std::size_t count = 512, classes = 1, frames = 50;
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
};

int do_synth(const SynthArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const SkeletonSpec skel = a.skeleton.empty() ? SkeletonSpec::default_human() : SkeletonSpec::load(a.skeleton);
  SynthOptions o;
  o.count = a.count;
  o.classes = a.classes;
  o.seed = a.seed;
  o.frames = a.frames;
  if (a.count == 0 || a.classes == 0 || a.frames == 0) throw Failure(kOutOfRange, "count, classes and frames must be positive");
  MotionDataset d = synthesize_motions(skel, o);
  if (!a.test_out.empty()) {
    auto split = split_dataset(d, a.train_fraction, a.seed);
    store_dataset(a.out, split.train);
    store_dataset(a.test_out, split.test);
    out << "wrote " << split.train.count() << " sequences to " << a.out << " and " << split.test.count() << " to "
        << a.test_out << "\n";
  } else {
    store_dataset(a.out, d);
    out << "wrote " << d.count() << " sequences to " << a.out << "\n";
  }
  write_manifest(a.out, args, a.seed, {{"synth.count", std::to_string(a.count)}, {"synth.classes", std::to_string(a.classes)}});
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, config, checkpoint, log, model;
  std::optional<std::size_t> epochs, batch_size, checkpoint_every, baseline_scale;
  std::optional<double> lr;
  std::uint64_t seed = 0;
  bool desk = false, conditional = false, quiet = false;
};

const char* const kTrainerKeys[] = {"learning_rate", "batch_size", "epochs", "kl_start", "kl_end",
                                    "kl_warmup_epochs", "clip_norm", "seed", "checkpoint_every"};

int do_train(const TrainArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  KeyValues file = a.config.empty() ? KeyValues{} : read_key_value_file(a.config);
  KeyValues model_keys;
  KeyValues trainer_keys;
  for (const auto& [k, v] : file) {
    const bool trainer = std::find(std::begin(kTrainerKeys), std::end(kTrainerKeys), k) != std::end(kTrainerKeys);
    (trainer ? trainer_keys : model_keys)[k] = v;
  }
  std::string kind = a.model.empty() ? (model_keys.count("model") ? model_keys["model"] : "hgvae") : a.model;
  model_keys.erase("model");

  const MotionDataset data = load_centered(a.data);
  std::vector<int> labels;
  std::unique_ptr<GenerativeModel> model;
  if (kind == "hgvae") {
    ModelConfig mc = a.desk ? ModelConfig::desk_scale() : ModelConfig{};
    if (!model_keys.empty()) {
      KeyValues merged = mc.to_key_values();
      for (const auto& [k, v] : model_keys) merged[k] = v;
      mc = ModelConfig::from_key_values(merged);
    }
    mc.nodes = data.nodes();
    mc.features = data.frames;
    if (a.conditional) {
      if (!data.labelled()) throw Failure(kDataset, "--conditional needs a labelled dataset");
      mc.condition_classes = static_cast<std::size_t>(*std::max_element(data.labels.begin(), data.labels.end())) + 1;
    }
    if (mc.condition_classes > 0) labels = data.labels;
    mc.validate();
    model = std::make_unique<HgVae>(mc, a.seed);
  } else if (kind == "vae-baseline") {
    if (a.conditional) throw Failure(kUnsupported, "the baseline VAE is not class-conditional");
    BaselineConfig bc = BaselineConfig::from_key_values(model_keys);
    if (a.baseline_scale) bc = bc.scaled(*a.baseline_scale);
    bc.nodes = data.nodes();
    bc.features = data.frames;
    bc.validate();
    model = std::make_unique<BaselineVae>(bc, a.seed);
  } else {
    throw Failure(kConfig, "unknown model '" + kind + "' (hgvae|vae-baseline)");
  }

  TrainConfig tc;
  if (a.desk) tc.batch_size = 64;
  tc.apply(trainer_keys);
  tc.seed = a.seed;
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.lr) tc.learning_rate = *a.lr;
  if (a.checkpoint_every) tc.checkpoint_every = *a.checkpoint_every;
  if (tc.checkpoint_every > 0) tc.checkpoint_path = a.checkpoint;

  DctCodec codec(data.frames);
  TrainCallbacks cb;
  if (!a.quiet) {
    cb.on_epoch = [&out, &tc](const EpochRecord& r) {
      out << "epoch " << r.epoch << "/" << tc.epochs << " objective " << r.objective << " kl_weight " << r.kl_weight
          << "\n";
    };
  }
  const TrainLog log = train(*model, encode_dataset(data, codec), labels, tc, cb);
  try {
    save_checkpoint(a.checkpoint, *model);
  } catch (const std::exception& e) {
    throw Failure(kOutput, e.what());
  }
  if (!a.log.empty()) {
    try {
      log.write(a.log);
    } catch (const TrainingError& e) {
      throw Failure(kOutput, e.what());
    }
  }
  KeyValues snap;
  for (const auto& [k, v] : model->describe()) snap["model." + k] = v;
  for (const auto& [k, v] : tc.to_key_values()) snap["train." + k] = v;
  write_manifest(a.checkpoint, args, a.seed, snap);
  out << "saved " << model->kind() << " (" << model->parameter_count() << " parameters) to " << a.checkpoint << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string checkpoint, out;
  std::size_t count = 1;
  double temperature = 1.0;
  std::optional<int> class_id;
  std::uint64_t seed = 0;
};

int do_generate(const GenerateArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  auto model = open_checkpoint(a.checkpoint);
  const auto* hg = dynamic_cast<const HgVae*>(model.get());
  if (!hg) throw Failure(kUnsupported, "generate needs an hgvae checkpoint");
  if (a.count == 0) throw Failure(kOutOfRange, "--count must be positive");
  if (!(a.temperature >= 0.0)) throw Failure(kOutOfRange, "--temperature must be nonnegative");
  if (a.class_id && (*a.class_id < 0 || static_cast<std::size_t>(*a.class_id) >= hg->condition_classes())) {
    throw Failure(kOutOfRange, "--class outside the model's " + std::to_string(hg->condition_classes()) + " classes");
  }
  if (!a.class_id && hg->condition_classes() > 0) throw Failure(kUsage, "class-conditional model needs --class");
  Rng rng(a.seed);
  const Tensor motion = hg->generate(a.count, a.temperature, rng, a.class_id);
  MotionDataset d = from_node_tensor(motion, hg->nodes() / 3, "generated:" + a.checkpoint);
  if (a.class_id) d.labels.assign(a.count, *a.class_id);
  store_dataset(a.out, d);
  write_manifest(a.out, args, a.seed, {});
  out << "wrote " << a.count << " generated sequences to " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct ImputeArgs {
  std::string checkpoint, data, means_data, out_csv, curve_csv, out_data, objective;
  std::vector<std::size_t> occlusions;
  std::optional<double> fraction;
  std::size_t steps = 10, batch = 800;
  double lr = 1.0;
  std::uint64_t seed = 0;
};

int do_impute(const ImputeArgs& a, bool score_only, const std::vector<std::string>& args, std::ostream& out) {
  auto model = open_checkpoint(a.checkpoint);
  const MotionDataset data = load_centered(a.data);
  check_fits(*model, data);
  std::vector<std::size_t> counts = a.occlusions;
  if (a.fraction) {
    counts = {static_cast<std::size_t>(std::llround(*a.fraction * static_cast<double>(data.sequence_size())))};
  }
  const MotionDataset means_src = a.means_data.empty() ? data : load_centered(a.means_data);
  check_fits(*model, means_src);
  std::vector<int> labels;
  if (model->condition_classes() > 0) {
    if (!data.labelled()) throw Failure(kDataset, "class-conditional model needs a labelled dataset");
    labels = data.labels;
  }
  for (auto c : counts) {
    if (c > data.sequence_size()) {
      throw Failure(kOutOfRange, "occlusion count " + std::to_string(c) + " exceeds " +
                                     std::to_string(data.sequence_size()) + " cells");
    }
  }
  ImputeConfig ic;
  ic.max_steps = score_only ? 0 : a.steps;
  ic.learning_rate = a.lr;
  ic.batch_size = a.batch;
  if (!a.objective.empty()) ic.objective = parse_score_objective(a.objective);
  if (!(ic.learning_rate > 0.0)) throw Failure(kOutOfRange, "--lr must be positive");
  if (ic.batch_size == 0) throw Failure(kOutOfRange, "--batch must be positive");

  const DctCodec codec(data.frames);
  const Tensor truth = to_node_tensor(data);
  const FeatureMeans means = compute_feature_means(means_src);
  const AnomalyCurve curve = anomaly_curve(*model, codec, truth, means, counts, a.seed, ic, labels);

  std::vector<ImputationRow> rows;
  for (const auto& r : curve.rows) {
    if (!(score_only && r.method == "map")) rows.push_back(r);
  }
  write_text(a.out_csv, imputation_csv(rows));
  if (!a.curve_csv.empty()) write_text(a.curve_csv, curve_csv(curve.points));
  if (!a.out_data.empty()) {
    if (counts.size() != 1) throw Failure(kUsage, "--out-data needs exactly one occlusion count");
    const auto masks = make_masks(truth.dim(0), counts[0], a.seed ^ (counts[0] * 0x9e3779b97f4a7c15ULL),
                                  truth.dim(1), truth.dim(2));
    const ImputeResult r = map_impute(*model, codec, mean_impute(truth, masks, means), masks, ic, labels);
    MotionDataset imputed = from_node_tensor(r.imputed, data.joints, "imputed:" + a.data);
    imputed.labels = data.labels;
    store_dataset(a.out_data, imputed);
  }
  KeyValues snap{{"impute.steps", std::to_string(ic.max_steps)},
                 {"impute.objective", ic.objective ? to_string(*ic.objective) : "model-default"}};
  std::ostringstream lr;
  lr.precision(17);
  lr << ic.learning_rate;
  snap["impute.learning_rate"] = lr.str();
  write_manifest(a.out_csv, args, a.seed, snap);

  for (const auto& p : curve.points) {
    out << "count " << p.count << ": score truth " << p.truth_mean << " degraded " << p.degraded_mean;
    if (!score_only) {
      out << " map " << p.map_mean << "; masked mse mean " << p.mean_mse << " map " << p.map_mse;
    }
    out << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string pred_csv, out_svg, mse_svg, summary_csv;
};

int do_eval(const EvalArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  std::ifstream in(a.pred_csv, std::ios::binary);
  if (!in) throw Failure(kDataset, "cannot open " + a.pred_csv);
  std::ostringstream text;
  text << in.rdbuf();
  std::vector<ImputationRow> rows;
  try {
    rows = parse_imputation_csv(text.str());
  } catch (const std::invalid_argument& e) {
    throw Failure(kDataset, e.what());
  }
  const ImputationSummary summary = summarize(rows);
  write_text(a.out_svg, render_svg(score_plot(summary)));
  if (!a.mse_svg.empty()) write_text(a.mse_svg, render_svg(mse_reduction_plot(summary)));
  if (!a.summary_csv.empty()) write_text(a.summary_csv, summary_csv(summary));
  write_manifest(a.out_svg, args, 0, {});
  out << summary_csv(summary);
  return kOk;
}

// ---------------------------------------------------------------------------

int do_inspect(const std::string& checkpoint, const std::string& data, std::ostream& out) {
  if (!checkpoint.empty()) {
    auto model = open_checkpoint(checkpoint);
    const KeyValues cfg = model->describe();
    out << format_key_values(cfg);
    if (const auto latents = latent_summary(cfg); !latents.empty()) out << "latent shapes: " << latents << "\n";
    out << "parameter_count: " << model->parameter_count() << "\n";
  }
  if (!data.empty()) {
    const MotionDataset d = load_dataset(data);
    out << "sequences: " << d.count() << "\njoints: " << d.joints << "\nframes: " << d.frames
        << "\nlabelled: " << (d.labelled() ? "yes" : "no") << "\nprovenance: " << d.provenance << "\n";
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical graph-convolutional VAE for human motion"};
  app.name("hgvae");
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::uint64_t env_seed = 0;
  try {
    env_seed = default_seed();
  } catch (const Failure& f) {
    err << "error: " << f.what() << "\n";
    return f.code;
  }

  SynthArgs sa;
  sa.seed = env_seed;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labelled motion dataset");
  synth->add_option("--out", sa.out, "Output dataset (HGMD)")->required();
  synth->add_option("--test-out", sa.test_out, "Also write a held-out split here");
  synth->add_option("--train-fraction", sa.train_fraction, "Fraction kept in --out when splitting")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--count", sa.count, "Number of sequences");
  synth->add_option("--classes", sa.classes, "Number of motion classes");
  synth->add_option("--frames", sa.frames, "Frames per sequence");
  synth->add_option("--skeleton", sa.skeleton, "Skeleton definition file");
  synth->add_option("--seed", sa.seed, "Random seed (default: $HGVAE_SEED or 0)");

  TrainArgs ta;
  ta.seed = env_seed;
  auto* trainc = app.add_subcommand("train", "Train a model on a dataset");
  trainc->add_option("--data", ta.data, "Training dataset (HGMD)")->required();
  trainc->add_option("--config", ta.config, "key = value file with model and trainer settings");
  trainc->add_option("--out-checkpoint", ta.checkpoint, "Checkpoint to write")->required();
  trainc->add_option("--log", ta.log, "Training log CSV");
  trainc->add_option("--model", ta.model, "hgvae or vae-baseline")->check(CLI::IsMember({"hgvae", "vae-baseline"}));
  trainc->add_option("--epochs", ta.epochs);
  trainc->add_option("--batch-size", ta.batch_size);
  trainc->add_option("--lr", ta.lr, "Adam learning rate");
  trainc->add_option("--checkpoint-every", ta.checkpoint_every, "Epochs between checkpoints");
  trainc->add_option("--baseline-scale", ta.baseline_scale, "Divide baseline hidden widths by this factor");
  trainc->add_flag("--desk", ta.desk, "Desk-scale model and batch size 64");
  trainc->add_flag("--conditional", ta.conditional, "Condition the top latent layer on dataset labels");
  trainc->add_flag("--quiet", ta.quiet, "No per-epoch progress");
  trainc->add_option("--seed", ta.seed, "Random seed (default: $HGVAE_SEED or 0)");

  GenerateArgs ga;
  ga.seed = env_seed;
  auto* gen = app.add_subcommand("generate", "Sample motion from a trained model");
  gen->add_option("--checkpoint", ga.checkpoint)->required();
  gen->add_option("--out", ga.out, "Output dataset (HGMD)")->required();
  gen->add_option("--count", ga.count);
  gen->add_option("--temperature", ga.temperature, "Noise scale, 0 for the mean path");
  gen->add_option("--class", ga.class_id, "Class for conditional models");
  gen->add_option("--seed", ga.seed);

  ImputeArgs ia;
  ia.seed = env_seed;
  auto* imp = app.add_subcommand("impute", "Occlude, mean-impute and MAP-impute a dataset");
  imp->add_option("--checkpoint", ia.checkpoint)->required();
  imp->add_option("--data", ia.data, "Evaluation dataset (HGMD)")->required();
  imp->add_option("--means-data", ia.means_data, "Training dataset for feature means (default: --data)");
  auto* occ = imp->add_option("--occlusions", ia.occlusions, "Occluded entries per sequence, comma separated")
                  ->delimiter(',');
  auto* frac = imp->add_option("--occlusion-fraction", ia.fraction, "Occluded fraction of entries")
                   ->check(CLI::Range(0.0, 1.0));
  occ->excludes(frac);
  imp->add_option("--steps", ia.steps, "Maximum ascent steps");
  imp->add_option("--lr", ia.lr, "Ascent learning rate");
  imp->add_option("--objective", ia.objective, "log_joint, elbo or posterior_density")
      ->check(CLI::IsMember({"log_joint", "elbo", "posterior_density"}));
  imp->add_option("--batch", ia.batch, "Datapoints ascended jointly");
  imp->add_option("--seed", ia.seed);
  imp->add_option("--out-csv", ia.out_csv, "Per-datapoint rows")->required();
  imp->add_option("--curve-csv", ia.curve_csv, "Per-count summary");
  imp->add_option("--out-data", ia.out_data, "MAP-imputed dataset (single occlusion count)");

  ImputeArgs sc;
  sc.seed = env_seed;
  auto* score = app.add_subcommand("score", "Anomaly scores of a dataset under increasing occlusion");
  score->add_option("--checkpoint", sc.checkpoint)->required();
  score->add_option("--data", sc.data)->required();
  score->add_option("--means-data", sc.means_data);
  score->add_option("--occlusion-grid", sc.occlusions, "Occlusion counts, comma separated")->delimiter(',');
  score->add_option("--objective", sc.objective)->check(CLI::IsMember({"log_joint", "elbo", "posterior_density"}));
  score->add_option("--batch", sc.batch);
  score->add_option("--seed", sc.seed);
  score->add_option("--out-csv", sc.out_csv)->required();
  score->add_option("--curve-csv", sc.curve_csv);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Summaries and plots from an imputation CSV");
  eval->add_option("--pred-csv", ea.pred_csv, "CSV written by impute or score")->required();
  eval->add_option("--out-svg", ea.out_svg, "Score against occlusion plot")->required();
  eval->add_option("--mse-svg", ea.mse_svg, "MSE reduction plot");
  eval->add_option("--summary-csv", ea.summary_csv);

  std::string inspect_ckpt, inspect_data;
  auto* inspect = app.add_subcommand("inspect", "Print a checkpoint's configuration or a dataset's header");
  inspect->add_option("--checkpoint", inspect_ckpt);
  inspect->add_option("--data", inspect_data);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*synth) return do_synth(sa, args, out);
    if (*trainc) return do_train(ta, args, out);
    if (*gen) return do_generate(ga, args, out);
    if (*imp) {
      if (ia.occlusions.empty() && !ia.fraction) throw Failure(kUsage, "impute needs --occlusions or --occlusion-fraction");
      return do_impute(ia, false, args, out);
    }
    if (*score) {
      if (sc.occlusions.empty()) sc.occlusions = {13, 27, 135, 270, 1350};
      return do_impute(sc, true, args, out);
    }
    if (*eval) return do_eval(ea, args, out);
    if (*inspect) {
      if (inspect_ckpt.empty() && inspect_data.empty()) throw Failure(kUsage, "inspect needs --checkpoint or --data");
      return do_inspect(inspect_ckpt, inspect_data, out);
    }
  } catch (const Failure& f) {
    err << "error: " << f.what() << "\n";
    return f.code;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kCheckpoint;
  } catch (const TruncatedError& e) {
    err << "error: " << e.what() << "\n";
    return kDataset;
  } catch (const DatasetError& e) {
    err << "error: " << e.what() << "\n";
    return kDataset;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << "\n";
    return kTraining;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kShape;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << "\n";
    return kOutOfRange;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}

int run(int argc, char** argv) {
  return run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace hgvae::cli
