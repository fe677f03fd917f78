#pragma once

// Command-line front end. Kept in a header so the test suite can drive it
// in-process through run_cli().

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lcnn/lcnn.hpp"

namespace lcnn::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kInputError = 2, kModelError = 3 };

struct RunConfig {
  std::string data;
  std::string out;
  std::string weights;
  std::string image;
  std::uint64_t seed = 42;
  std::size_t threads = 1;

  std::size_t epochs = 50;
  double lr = 0.005;
  std::string optimizer = "adam";
  std::size_t batch_size = 32;
  bool augment = false;
  std::size_t augment_multiplier = 2;
  double train_ratio = 0.7;
  int precision = 32;
  std::size_t conv2_kernels = 64;
  double dropout = 0.5;
  bool lr_sweep = false;
  std::vector<double> sweep_lrs = kLearningRateSweep;
  double threshold = 0.5;
  AugmentConfig aug;

  std::string split = "test";

  std::size_t count = 8;
  std::size_t size = kModelImageSize;
  SynthOptions synth;
};

inline std::size_t default_threads() {
  if (const char* env = std::getenv("LCNN_THREADS")) {
    try {
      const auto n = std::stoul(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

namespace detail {

// Flat `key = value` file; '#' starts a comment. Keys are long flag names without dashes.
inline std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config file " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config file " + path + ": expected key = value, got '" + line + "'");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

// Config-file values are placed ahead of the explicit flags, and dropped
// entirely when the flag was also given on the command line.
inline std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> rest;
  std::string config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config.empty() || rest.empty()) return rest;
  std::set<std::string> given;
  for (const auto& a : rest)
    if (a.rfind("--", 0) == 0) given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));
  std::vector<std::string> out{rest.front()};
  for (const auto& [k, v] : read_config_file(config)) {
    if (given.count(k)) continue;
    out.push_back("--" + k);
    out.push_back(v);
  }
  out.insert(out.end(), rest.begin() + 1, rest.end());
  return out;
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_number(v[i]);
  return s;
}

inline std::string train_config_text(const RunConfig& c) {
  std::ostringstream os;
  os << "# resolved configuration; rerun with: lcnn train --config <this file>\n"
     << "data = " << c.data << '\n'
     << "out = " << c.out << '\n'
     << "seed = " << c.seed << '\n'
     << "epochs = " << c.epochs << '\n'
     << "lr = " << format_number(c.lr) << '\n'
     << "optimizer = " << c.optimizer << '\n'
     << "batch-size = " << c.batch_size << '\n'
     << "augment = " << (c.augment ? "on" : "off") << '\n'
     << "augment-multiplier = " << c.augment_multiplier << '\n'
     << "train-ratio = " << format_number(c.train_ratio) << '\n'
     << "precision = " << c.precision << '\n'
     << "conv2-kernels = " << c.conv2_kernels << '\n'
     << "dropout = " << format_number(c.dropout) << '\n'
     << "threshold = " << format_number(c.threshold) << '\n'
     << "lr-sweep = " << (c.lr_sweep ? "true" : "false") << '\n'
     << "sweep-lrs = " << join(c.sweep_lrs) << '\n'
     << "blur-sigma-min = " << format_number(c.aug.blur_sigma.lo) << '\n'
     << "blur-sigma-max = " << format_number(c.aug.blur_sigma.hi) << '\n'
     << "brightness = " << format_number(c.aug.brightness_delta) << '\n'
     << "contrast-min = " << format_number(c.aug.contrast.lo) << '\n'
     << "contrast-max = " << format_number(c.aug.contrast.hi) << '\n'
     << "rotation = " << format_number(c.aug.rotation_max_deg) << '\n'
     << "translate = " << format_number(c.aug.translate_max_frac) << '\n'
     << "zoom-min = " << format_number(c.aug.zoom.lo) << '\n'
     << "zoom-max = " << format_number(c.aug.zoom.hi) << '\n'
     << "crop-threshold = " << format_number(c.aug.crop_threshold) << '\n';
  return os.str();
}

inline ModelSpec model_spec(const RunConfig& c) {
  auto spec = ModelSpec::low_complexity(c.conv2_kernels);
  spec.dropout_rate = c.dropout;
  return spec;
}

inline TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.epochs = c.epochs;
  t.eta = c.lr;
  t.eta_sweep = c.sweep_lrs;
  t.optimizer = c.optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
  t.batch_size = c.batch_size;
  t.seed = c.seed;
  t.threshold = c.threshold;
  t.threads = c.threads;
  return t;
}

inline DatasetManifest prepare_manifest(const RunConfig& c, std::ostream& log, bool augment) {
  std::vector<std::string> warnings;
  auto manifest = ingest_directory(c.data, &warnings);
  for (const auto& w : warnings) log << "warning: " << w << '\n';
  manifest = stratified_split(std::move(manifest), {c.train_ratio, c.seed});
  if (augment) manifest = balance_train_set(std::move(manifest), c.seed, c.augment_multiplier);
  log << "dataset: " << manifest.count(kNormal) << " normal, " << manifest.count(kTumor) << " tumor; train "
      << manifest.count(kNormal, Split::train) << "/" << manifest.count(kTumor, Split::train) << ", test "
      << manifest.count(kNormal, Split::test) << "/" << manifest.count(kTumor, Split::test) << '\n';
  return manifest;
}

inline std::filesystem::path make_out_dir(const std::string& out) {
  if (out.empty()) throw InputError("--out is required");
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (!std::filesystem::is_directory(out)) throw InputError("cannot create output directory " + out);
  return out;
}

template <Real T>
int run_train(const RunConfig& c, std::ostream& out) {
  const auto dir = make_out_dir(c.out);
  const auto manifest = prepare_manifest(c, out, c.augment);
  write_manifest_csv(manifest, dir / "manifest.csv");
  write_text(dir / "config.txt", train_config_text(c));
  ImageStore store(manifest, c.aug);
  const auto spec = model_spec(c);
  const auto tcfg = train_config(c);

  if (c.lr_sweep) {
    std::ofstream csv(dir / "sweep.csv");
    const auto sweep = lr_sweep<T>(spec, store, tcfg, [&](const SweepRow& r) {
      out << "lr " << format_number(r.eta) << "  final test accuracy " << format_number(r.final_test_acc)
          << (r.diverged ? "  (diverged)" : "") << '\n';
    });
    csv << "eta,final_test_acc,best_test_acc,best_epoch,diverged,selected\n";
    for (std::size_t i = 0; i < sweep.rows.size(); ++i) {
      const auto& r = sweep.rows[i];
      csv << format_number(r.eta) << ',' << format_number(r.final_test_acc) << ',' << format_number(r.best_test_acc)
          << ',' << r.best_epoch << ',' << (r.diverged ? 1 : 0) << ',' << (i == sweep.best ? 1 : 0) << '\n';
    }
    out << "best lr " << format_number(sweep.rows[sweep.best].eta) << '\n';
    return kOk;
  }

  auto model = build_model<T>(spec, c.seed);
  out << "model: " << model.parameter_count() << " trainable parameters\n";
  auto result = train(model, store, tcfg, [&](const EpochRow& r) {
    out << "epoch " << r.epoch << "/" << c.epochs << "  train_loss " << format_number(r.train_loss) << "  train_acc "
        << format_number(r.train_acc) << "  test_loss " << format_number(r.test_loss) << "  test_acc "
        << format_number(r.test_acc) << '\n';
    return true;
  });
  save_weights(model, dir / "model_final.lcnn");
  model.restore(result.best_weights);
  save_weights(model, dir / "model_best.lcnn");
  emit_curves(result.log, dir);
  out << "best epoch " << result.log.best_epoch << ": " << metrics_line(result.log.best_confusion) << '\n';
  out << "final test: " << metrics_line(result.log.confusion) << '\n';
  return kOk;
}

inline Split parse_split(const std::string& s) {
  if (s == "test") return Split::test;
  if (s == "train") return Split::train;
  throw InputError("--split must be train or test");
}

template <Real T>
int run_eval(const RunConfig& c, std::ostream& out) {
  if (c.weights.empty()) throw InputError("--weights is required");
  const auto manifest = prepare_manifest(c, out, false);
  auto model = build_model<T>(model_spec(c), c.seed);
  load_weights(model, c.weights);
  ImageStore store(manifest);
  const auto split = parse_split(c.split);
  store.preload(manifest.indices(split), c.threads);
  const auto r = evaluate(model, store, split, c.batch_size, c.threshold);
  out << "final test: " << metrics_line(r.confusion) << '\n';
  out << confusion_table(r.confusion);
  const std::filesystem::path dir = c.out.empty() ? std::filesystem::path(c.weights).parent_path() : make_out_dir(c.out);
  write_text(dir / "eval_metrics.txt", "split=" + c.split + "\nloss=" + format_number(r.loss) + "\n" + metrics_kv(r.confusion));
  write_text(dir / "eval_metrics.json", metrics_json(r.confusion).dump(2) + "\n");
  return kOk;
}

template <Real T>
int run_predict(const RunConfig& c, std::ostream& out) {
  if (c.weights.empty()) throw InputError("--weights is required");
  if (c.image.empty()) throw InputError("--image is required");
  auto model = build_model<T>(model_spec(c), c.seed);
  load_weights(model, c.weights);
  const auto img = resize(decode_image(c.image), kModelImageSize, kModelImageSize);
  const double p = model.predict(image_tensor<T>(img))[0];
  out << (p >= c.threshold ? "tumor" : "normal") << ' ' << format_number(p) << '\n';
  return kOk;
}

inline int run_augment_preview(const RunConfig& c, std::ostream& out) {
  const auto dir = make_out_dir(c.out);
  std::vector<std::string> warnings;
  const auto manifest = ingest_directory(c.data, &warnings);
  Rng rng(derive_seed(c.seed, "augment-preview"));
  std::ofstream params(dir / "params.csv");
  params << "file,source,sigma,brightness,contrast,degrees,dx,dy,scale\n";
  auto cfg = c.aug;
  cfg.out_size = kModelImageSize;
  for (std::size_t i = 0; i < c.count; ++i) {
    const auto& rec = manifest.records[rng.below(manifest.records.size())];
    const auto src = decode_image(rec.path);
    const auto p = sample_augment_params(cfg, src.height, src.width, rng);
    char name[32];
    std::snprintf(name, sizeof name, "aug_%04zu.png", i);
    write_png(apply_augment(src, p, cfg), dir / name);
    params << name << ',' << rec.path.string() << ',' << format_number(p.sigma) << ',' << format_number(p.brightness)
           << ',' << format_number(p.contrast) << ',' << format_number(p.degrees) << ',' << p.dx << ',' << p.dy << ','
           << format_number(p.scale) << '\n';
  }
  out << "wrote " << c.count << " augmented samples to " << dir.string() << '\n';
  return kOk;
}

inline int run_synth(const RunConfig& c, std::ostream& out) {
  if (c.out.empty()) throw InputError("--out is required");
  auto opt = c.synth;
  opt.size = c.size;
  generate_synthetic_dataset(c.count, c.out, c.seed, opt);
  out << "wrote " << c.count / 2 << " normal and " << c.count - c.count / 2 << " tumor images to " << c.out << '\n';
  return kOk;
}

inline void add_common(CLI::App* app, RunConfig& c) {
  app->add_option("--seed", c.seed, "Run seed; every random stream derives from it")->capture_default_str();
  app->add_option("--threads", c.threads, "Worker threads for image decoding/augmentation (env LCNN_THREADS)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
}

inline void add_augment_options(CLI::App* app, RunConfig& c) {
  app->add_option("--blur-sigma-min", c.aug.blur_sigma.lo)->capture_default_str();
  app->add_option("--blur-sigma-max", c.aug.blur_sigma.hi)->capture_default_str();
  app->add_option("--brightness", c.aug.brightness_delta, "Max absolute brightness shift")->capture_default_str();
  app->add_option("--contrast-min", c.aug.contrast.lo)->capture_default_str();
  app->add_option("--contrast-max", c.aug.contrast.hi)->capture_default_str();
  app->add_option("--rotation", c.aug.rotation_max_deg, "Max rotation in degrees")->capture_default_str();
  app->add_option("--translate", c.aug.translate_max_frac, "Max shift as a fraction of the extent")->capture_default_str();
  app->add_option("--zoom-min", c.aug.zoom.lo)->capture_default_str();
  app->add_option("--zoom-max", c.aug.zoom.hi)->capture_default_str();
  app->add_option("--crop-threshold", c.aug.crop_threshold)->capture_default_str();
}

inline void add_model_options(CLI::App* app, RunConfig& c) {
  app->add_option("--conv2-kernels", c.conv2_kernels, "Kernel count of the second convolution")->capture_default_str();
  app->add_option("--dropout", c.dropout)->capture_default_str();
  app->add_option("--precision", c.precision, "Floating point width")->check(CLI::IsMember({32, 64}))->capture_default_str();
  app->add_option("--threshold", c.threshold, "Probability at or above which an image is tumorous")->capture_default_str();
}

inline void add_train_options(CLI::App* app, RunConfig& c) {
  app->add_option("--data", c.data, "Dataset root with normal/ and tumor/")->required();
  app->add_option("--out", c.out, "Output directory")->required();
  app->add_option("--epochs", c.epochs)->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--lr", c.lr, "Learning rate")->capture_default_str();
  app->add_option("--optimizer", c.optimizer)->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
  app->add_option("--batch-size", c.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--augment", c.augment, "on/off: balance and enlarge the train split with augmented copies")
      ->capture_default_str();
  app->add_option("--augment-multiplier", c.augment_multiplier, "Train-set size factor after balancing")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app->add_option("--train-ratio", c.train_ratio)->capture_default_str();
  app->add_option("--lr-sweep", c.lr_sweep, "Train once per learning rate in --sweep-lrs")->capture_default_str();
  app->add_option("--sweep-lrs", c.sweep_lrs)->delimiter(',')->capture_default_str();
  add_model_options(app, c);
  add_augment_options(app, c);
  add_common(app, c);
}

}  // namespace detail

/// Runs one CLI invocation; args excludes the program name.
inline int run_cli(const std::vector<std::string>& raw_args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  RunConfig c;
  c.threads = default_threads();
  CLI::App app{"Low-complexity CNN for binary tumor classification", "lcnn"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Train and evaluate on a labelled image directory");
  detail::add_train_options(train, c);
  auto* sweep = app.add_subcommand("lr-sweep", "Alias for train --lr-sweep");
  detail::add_train_options(sweep, c);

  auto* eval = app.add_subcommand("eval", "Score saved weights on a dataset split");
  eval->add_option("--weights", c.weights)->required();
  eval->add_option("--data", c.data)->required();
  eval->add_option("--out", c.out, "Directory for the summary (default: next to the weights)");
  eval->add_option("--train-ratio", c.train_ratio)->capture_default_str();
  eval->add_option("--split", c.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  eval->add_option("--batch-size", c.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  detail::add_model_options(eval, c);
  detail::add_common(eval, c);
  eval->allow_extras();  // a train config snapshot carries keys eval does not use

  auto* predict = app.add_subcommand("predict", "Classify one image");
  predict->add_option("--weights", c.weights)->required();
  predict->add_option("--image", c.image)->required();
  detail::add_model_options(predict, c);
  detail::add_common(predict, c);

  auto* preview = app.add_subcommand("augment-preview", "Write augmented samples for inspection");
  preview->add_option("--data", c.data)->required();
  preview->add_option("--out", c.out)->required();
  preview->add_option("--count", c.count)->capture_default_str();
  detail::add_augment_options(preview, c);
  detail::add_common(preview, c);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic normal/tumor dataset");
  synth->add_option("--out", c.out)->required();
  synth->add_option("--count", c.count, "Total images, split evenly")->capture_default_str();
  synth->add_option("--size", c.size)->capture_default_str();
  synth->add_option("--lesion-min", c.synth.lesion_intensity.lo)->capture_default_str();
  synth->add_option("--lesion-max", c.synth.lesion_intensity.hi)->capture_default_str();
  synth->add_option("--radius-min", c.synth.lesion_radius.lo)->capture_default_str();
  synth->add_option("--radius-max", c.synth.lesion_radius.hi)->capture_default_str();
  detail::add_common(synth, c);

  try {
    auto args = detail::expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }

  try {
    if (*sweep) c.lr_sweep = true;
    if (*train || *sweep) {
      if (!std::filesystem::is_directory(c.data)) throw InputError("data directory does not exist: " + c.data);
      return c.precision == 64 ? detail::run_train<double>(c, out) : detail::run_train<float>(c, out);
    }
    if (*eval) {
      if (!std::filesystem::is_directory(c.data)) throw InputError("data directory does not exist: " + c.data);
      return c.precision == 64 ? detail::run_eval<double>(c, out) : detail::run_eval<float>(c, out);
    }
    if (*predict) return c.precision == 64 ? detail::run_predict<double>(c, out) : detail::run_predict<float>(c, out);
    if (*preview) return detail::run_augment_preview(c, out);
    if (*synth) return detail::run_synth(c, out);
  } catch (const ModelError& e) {
    err << "error: " << e.what() << '\n';
    return kModelError;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kInternal;
}

}  // namespace lcnn::cli
