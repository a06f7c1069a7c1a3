#include "euda/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "euda/config.hpp"
#include "euda/error.hpp"
#include "euda/feature_store.hpp"
#include "euda/manifest.hpp"
#include "euda/network.hpp"
#include "euda/trainer.hpp"

namespace euda::cli {
namespace {

enum class LogLevel { kQuiet, kInfo, kDebug };

LogLevel log_level() {
  const char* env = std::getenv("EUDA_LOG");
  if (!env) return LogLevel::kInfo;
  const std::string v = env;
  if (v == "quiet") return LogLevel::kQuiet;
  if (v == "debug") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TrainArgs {
  std::string source;
  std::string target;
  std::string config;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::string> bottleneck;
  std::optional<std::string> kernel;
  std::optional<std::string> estimator;
};

TrainConfig resolve_config(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = parse_config(read_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  if (a.lambda) cfg.lambda = *a.lambda;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.bottleneck) cfg.bottleneck = BottleneckConfig::parse(*a.bottleneck);
  if (a.kernel) {
    if (*a.kernel == "linear") {
      cfg.kernel = KernelSpec::linear();
    } else if (*a.kernel == "rbf") {
      if (cfg.kernel.family != KernelFamily::kRbfMulti) cfg.kernel = KernelSpec::rbf_median();
    } else {
      throw ConfigError("invalid config field 'kernel': expected rbf or linear");
    }
  }
  if (a.estimator) {
    if (*a.estimator == "biased") {
      cfg.estimator = Estimator::kBiased;
    } else if (*a.estimator == "unbiased") {
      cfg.estimator = Estimator::kUnbiased;
    } else {
      throw ConfigError("invalid config field 'estimator': expected biased or unbiased");
    }
  }
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const TrainConfig cfg = resolve_config(a);
  const LogLevel level = log_level();
  const DomainDataset source = load_dataset(a.source);
  const DomainDataset target = load_dataset(a.target);
  if (!source.has_labels()) throw ConsistencyError("source dataset " + a.source + " has no labels");
  if (source.dim() != target.dim()) throw ShapeError("source and target feature widths differ");

  const std::filesystem::path dir = a.out_dir;
  std::filesystem::create_directories(dir);
  const auto checkpoint_path = dir / "model.eudm";
  const auto metrics_path = dir / "metrics.jsonl";
  const auto manifest_path = dir / "manifest.json";

  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw IoError("cannot open " + metrics_path.string());

  // The evaluation copy is the only object whose labels get read.
  std::optional<DomainDataset> eval_copy;
  if (target.has_labels()) eval_copy.emplace(target);

  TrainHooks hooks;
  hooks.on_epoch_end = [&](std::size_t epoch, const ModelParams& params, std::span<const MetricsRecord> records) {
    for (const auto& r : records) {
      metrics << metrics_to_json(r) << '\n';
      if (level == LogLevel::kDebug) {
        err << "step " << r.step << " lr " << r.lr << " loss " << r.loss_total << " (ce " << r.loss_ce << ", mmd "
            << r.loss_mmd << ")\n";
      }
    }
    metrics.flush();
    if (level != LogLevel::kQuiet && !records.empty()) {
      err << "epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << records.back().loss_total;
      if (records.back().target_accuracy) err << " target_acc " << *records.back().target_accuracy;
      err << '\n';
    }
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs) {
      save_checkpoint(params, dir / ("model_epoch" + std::to_string(epoch + 1) + ".eudm"));
    }
  };

  const TrainResult result = train(source, target, cfg, eval_copy ? &*eval_copy : nullptr, hooks);
  save_checkpoint(result.params, checkpoint_path);

  RunManifest manifest;
  manifest.config = cfg;
  manifest.datasets = {{"source", std::filesystem::absolute(a.source), sha256_file(a.source)},
                       {"target", std::filesystem::absolute(a.target), sha256_file(a.target)}};
  manifest.artifacts = {{"checkpoint", std::filesystem::absolute(checkpoint_path)},
                        {"metrics", std::filesystem::absolute(metrics_path)}};
  save_manifest(manifest, manifest_path);

  if (eval_copy) {
    out << "target_accuracy " << std::setprecision(6) << evaluate(result.params, *eval_copy) << '\n';
  } else {
    out << "training finished (target unlabelled, no accuracy)\n";
  }
  return kOk;
}

struct SynthArgs {
  SynthSpec spec;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  bool zero_shift = false;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthSpec spec = a.spec;
  if (a.zero_shift) spec.shift_magnitude = 0.0;
  try {
    spec.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  auto [source, target] = synth_shifted_gaussians(spec, a.seed);
  const std::filesystem::path dir = a.out_dir;
  std::filesystem::create_directories(dir);
  save_dataset(source, dir / "source.eudf", FileFormat::kBinary);
  save_dataset(target, dir / "target.eudf", FileFormat::kBinary);
  out << "wrote " << (dir / "source.eudf").string() << " and " << (dir / "target.eudf").string() << " (n="
      << source.size() << ", d=" << source.dim() << ", C=" << spec.num_classes << ")\n";
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& manifest, std::ostream& out) {
  if (!manifest.empty()) load_manifest(manifest);
  const ModelParams params = load_checkpoint(checkpoint);
  const DomainDataset ds = load_dataset(data);
  if (!ds.has_labels()) throw ConsistencyError(data + " has no labels to evaluate against");
  require_shape(params, ds.dim(), ds.num_classes());
  out << "accuracy " << std::setprecision(6) << evaluate(params, ds) << '\n';
  return kOk;
}

int cmd_gradcheck(const std::string& preset, std::optional<double> lambda, const std::string& kernel,
                  std::ostream& out) {
  if (preset != "tiny") throw ConfigError("unknown gradcheck preset '" + preset + "' (available: tiny)");
  if (kernel != "rbf" && kernel != "linear") throw ConfigError("unknown kernel '" + kernel + "' (rbf|linear)");
  // Tiny model: d=6, bottleneck [8,4], 3 classes, batches of 8 per domain.
  TrainConfig cfg;
  cfg.lambda = lambda.value_or(0.7);
  cfg.bottleneck = {{8, 4}};
  cfg.kernel = kernel == "linear" ? KernelSpec::linear() : KernelSpec::rbf_median();
  cfg.validate();
  SynthSpec spec{3, 6, 8, 3.0, 1.5, 1.0};
  auto [source, target] = synth_shifted_gaussians(spec, 11);
  const BatchPair batch = paired_batches(source, target, 8, 11, 0).front();
  const ModelParams params = build_model(6, cfg.bottleneck, 3, 5);
  const GradCheckReport report = grad_check(params, batch, cfg, 1e-5);
  out << "max_relative_error " << std::scientific << std::setprecision(3) << report.max_relative_error
      << " checked " << report.checked << " skipped_near_kink " << report.skipped_near_kink << '\n';
  return report.max_relative_error < 1e-4 ? kOk : kGradCheckFailed;
}

int cmd_params(std::size_t input_dim, const std::string& config, std::size_t classes, std::ostream& out) {
  const BottleneckConfig bottleneck = BottleneckConfig::parse(config);
  if (input_dim < 1) throw ConfigError("--input-dim must be positive");
  if (classes < 2) throw ConfigError("--classes must be at least 2");
  out << count_trainable(input_dim, bottleneck, classes) << '\n';
  out << "  input_norm " << 2 * input_dim << " = 2*" << input_dim << '\n';
  std::size_t in = input_dim;
  for (std::size_t k = 0; k < bottleneck.hidden_sizes.size(); ++k) {
    const std::size_t o = bottleneck.hidden_sizes[k];
    out << "  layer" << k << " " << o * in + o << " = " << o << "*" << in << "+" << o << '\n';
    in = o;
  }
  out << "  classifier " << classes * in + classes << " = " << classes << "*" << in << "+" << classes << '\n';
  return kOk;
}

int cmd_convert(const std::string& in, const std::string& out_path, std::optional<std::uint32_t> classes,
                const std::string& tag, std::ostream& out) {
  DomainDataset ds = load_dataset(in, format_from_path(in), classes);
  if (!tag.empty()) {
    std::optional<std::vector<std::uint32_t>> labels;
    if (ds.has_labels()) labels = ds.labels();
    ds = DomainDataset(ds.features(), std::move(labels), ds.num_classes(), tag);
  }
  save_dataset(ds, out_path);
  out << "converted " << ds.size() << " rows x " << ds.dim() << " columns to " << out_path << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Domain-adaptation trainer over frozen feature vectors", "euda"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train bottleneck + classifier with the CE/MMD objective");
  train->add_option("--source", train_args.source, "Labelled source features (.eudf or .csv)")->required();
  train->add_option("--target", train_args.target, "Target features (.eudf or .csv)")->required();
  train->add_option("--config", train_args.config, "JSON config file");
  train->add_option("--out-dir", train_args.out_dir, "Directory for checkpoint, metrics and manifest");
  train->add_option("--seed", train_args.seed);
  train->add_option("--lambda", train_args.lambda);
  train->add_option("--epochs", train_args.epochs);
  train->add_option("--batch-size", train_args.batch_size);
  train->add_option("--bottleneck", train_args.bottleneck, "S|B|L|H|custom:a,b,c");
  train->add_option("--kernel", train_args.kernel, "rbf|linear");
  train->add_option("--estimator", train_args.estimator, "biased|unbiased");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Write a synthetic shifted-Gaussian source/target pair");
  synth->add_option("--classes", synth_args.spec.num_classes);
  synth->add_option("--dim", synth_args.spec.feature_dim);
  synth->add_option("--per-class", synth_args.spec.samples_per_class);
  synth->add_option("--rho", synth_args.spec.class_radius);
  synth->add_option("--shift", synth_args.spec.shift_magnitude);
  synth->add_option("--noise", synth_args.spec.noise_std);
  synth->add_option("--seed", synth_args.seed);
  synth->add_option("--out-dir", synth_args.out_dir);
  synth->add_flag("--zero-shift", synth_args.zero_shift, "Force the domain shift to zero");

  std::string eval_checkpoint, eval_data, eval_manifest;
  auto* eval = app.add_subcommand("eval", "Accuracy of a checkpoint on a labelled dataset");
  eval->add_option("--checkpoint", eval_checkpoint)->required();
  eval->add_option("--data", eval_data)->required();
  eval->add_option("--manifest", eval_manifest, "Verify dataset digests of a training manifest first");

  std::string gc_preset = "tiny", gc_kernel = "rbf";
  std::optional<double> gc_lambda;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the full training gradient");
  gradcheck->add_option("--preset", gc_preset);
  gradcheck->add_option("--lambda", gc_lambda);
  gradcheck->add_option("--kernel", gc_kernel);

  std::size_t p_dim = 768, p_classes = 65;
  std::string p_config = "B";
  auto* params = app.add_subcommand("params", "Count trainable parameters");
  params->add_option("--input-dim", p_dim);
  params->add_option("--config", p_config, "S|B|L|H|custom:a,b,c");
  params->add_option("--classes", p_classes);

  std::string c_in, c_out, c_tag;
  std::optional<std::uint32_t> c_classes;
  auto* convert = app.add_subcommand("convert", "Convert between CSV and EUDF (by extension)");
  convert->add_option("--in", c_in)->required();
  convert->add_option("--out", c_out)->required();
  convert->add_option("--classes", c_classes, "Class count for CSV input (default: max label + 1)");
  convert->add_option("--tag", c_tag, "Domain tag to store");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kConfigError;
  }

  try {
    if (*train) return cmd_train(train_args, out, err);
    if (*synth) return cmd_synth(synth_args, out);
    if (*eval) return cmd_eval(eval_checkpoint, eval_data, eval_manifest, out);
    if (*gradcheck) return cmd_gradcheck(gc_preset, gc_lambda, gc_kernel, out);
    if (*params) return cmd_params(p_dim, p_config, p_classes, out);
    if (*convert) return cmd_convert(c_in, c_out, c_classes, c_tag, out);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const DataFileError& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kConfigError;
}

}  // namespace euda::cli
