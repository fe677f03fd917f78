#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcnn/data.hpp"
#include "lcnn/loss.hpp"
#include "lcnn/metrics.hpp"
#include "lcnn/model.hpp"
#include "lcnn/optim.hpp"

namespace lcnn {

inline const std::vector<double> kLearningRateSweep{0.0001, 0.0005, 0.001, 0.005, 0.01, 0.05, 0.1};

struct TrainConfig {
  std::size_t epochs = 50;
  double eta = 0.005;
  std::vector<double> eta_sweep = kLearningRateSweep;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::size_t batch_size = 32;
  std::uint64_t seed = 42;
  double threshold = 0.5;
  std::size_t threads = 1;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (!(eta > 0)) throw std::invalid_argument("learning rate must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  }
};

struct EpochRow {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_acc = 0;
  double test_loss = 0;
  double test_acc = 0;

  friend bool operator==(const EpochRow&, const EpochRow&) = default;
};

struct TrainLog {
  std::vector<EpochRow> rows;
  ConfusionMatrix confusion;  // final-epoch weights on the test split
  Metrics metrics;
  std::size_t best_epoch = 0;  // highest test accuracy, first occurrence
  ConfusionMatrix best_confusion;
  Metrics best_metrics;
  std::size_t skipped_batches = 0;
};

template <Real T>
struct TrainResult {
  TrainLog log;
  std::vector<Tensor<T>> best_weights;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalResult {
  ConfusionMatrix confusion;
  double loss = 0.0;  // mean BCE
  Metrics metrics() const { return compute_metrics(confusion); }
};

/// Eval-mode pass over a split; p >= threshold is classified tumorous.
template <Real T>
EvalResult evaluate(Model<T>& model, ImageStore& store, Split split, std::size_t batch_size = 32, double threshold = 0.5) {
  EvalResult r;
  double loss_sum = 0.0;
  for (const auto& ids : sequential_plan(store.manifest(), split, batch_size)) {
    const auto batch = assemble_batch<T>(store, ids);
    const auto logits = model.forward(batch.inputs, Mode::eval);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const double p = sigmoid(static_cast<double>(logits[k]));
      loss_sum += bce(batch.labels[k], p);
      r.confusion.add(static_cast<int>(batch.labels[k]), p >= threshold);
    }
  }
  r.loss = loss_sum / static_cast<double>(r.confusion.total());
  return r;
}

namespace detail {
template <Real T>
std::string layer_norms(Model<T>& model) {
  std::ostringstream os;
  for (auto& p : model.parameters()) os << ' ' << p.name << '=' << std::sqrt(sum_squares(*p.value));
  return os.str();
}
}  // namespace detail

/// Return false to stop after the current epoch.
using EpochCallback = std::function<bool(const EpochRow&)>;

/// Mini-batch training with BCE on the train split, evaluating the test split
/// after each epoch. Train batches of a single sample are skipped because batch
/// normalization has no variance estimate for them.
template <Real T>
TrainResult<T> train(Model<T>& model, ImageStore& store, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const auto& manifest = store.manifest();
  if (manifest.count(Split::train) == 0) throw InputError("training split is empty");
  if (manifest.count(Split::test) == 0) throw InputError("test split is empty");
  {
    auto all = manifest.indices(Split::train);
    const auto test = manifest.indices(Split::test);
    all.insert(all.end(), test.begin(), test.end());
    store.preload(all, cfg.threads);
  }

  Optimizer<T> opt(cfg.optimizer, cfg.eta, model.parameters());
  TrainResult<T> result;
  double best_acc = -1.0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0, batch_no = 0;
    for (const auto& ids : batch_plan(manifest, Split::train, cfg.batch_size, cfg.seed, epoch)) {
      ++batch_no;
      if (ids.size() < 2) {
        ++result.log.skipped_batches;
        continue;
      }
      const auto batch = assemble_batch<T>(store, ids);
      model.zero_grad();
      const auto logits = model.forward(batch.inputs, Mode::train);
      const auto loss = bce_loss(batch.labels, logits);
      if (!std::isfinite(loss.value))
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no) +
                               "; parameter norms:" + detail::layer_norms(model));
      model.backward(loss.grad_wrt_logit);
      opt.step();
      loss_sum += loss.value * static_cast<double>(ids.size());
      seen += ids.size();
      for (std::size_t k = 0; k < ids.size(); ++k)
        correct += ((sigmoid(static_cast<double>(logits[k])) >= cfg.threshold) == (batch.labels[k] > 0.5));
    }

    const auto test = evaluate(model, store, Split::test, cfg.batch_size, cfg.threshold);
    EpochRow row{epoch, seen ? loss_sum / static_cast<double>(seen) : 0.0,
                 seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0, test.loss,
                 *test.metrics().accuracy};
    result.log.rows.push_back(row);
    result.log.confusion = test.confusion;
    result.log.metrics = test.metrics();
    if (row.test_acc > best_acc) {
      best_acc = row.test_acc;
      result.log.best_epoch = epoch;
      result.log.best_confusion = test.confusion;
      result.log.best_metrics = test.metrics();
      result.best_weights = model.snapshot();
    }
    if (on_epoch && !on_epoch(row)) break;
  }
  return result;
}

struct SweepRow {
  double eta = 0;
  double final_test_acc = 0;
  double best_test_acc = 0;
  std::size_t best_epoch = 0;
  bool diverged = false;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // ascending eta
  std::size_t best = 0;        // row with the highest final test accuracy
};

/// One fresh model per learning rate, all from the same seed.
template <Real T>
SweepResult lr_sweep(const ModelSpec& spec, ImageStore& store, const TrainConfig& cfg,
                     const std::function<void(const SweepRow&)>& on_row = {}) {
  if (cfg.eta_sweep.empty()) throw std::invalid_argument("learning-rate sweep list is empty");
  auto etas = cfg.eta_sweep;
  std::sort(etas.begin(), etas.end());
  SweepResult out;
  for (double eta : etas) {
    TrainConfig run = cfg;
    run.eta = eta;
    auto model = build_model<T>(spec, cfg.seed);
    SweepRow row{eta};
    try {
      const auto r = train(model, store, run);
      row.final_test_acc = r.log.rows.back().test_acc;
      row.best_test_acc = r.log.rows[r.log.best_epoch - 1].test_acc;
      row.best_epoch = r.log.best_epoch;
    } catch (const TrainingDiverged&) {
      row.diverged = true;
    }
    out.rows.push_back(row);
    if (on_row) on_row(row);
  }
  for (std::size_t i = 1; i < out.rows.size(); ++i)
    if (out.rows[i].final_test_acc > out.rows[out.best].final_test_acc) out.best = i;
  return out;
}

// ---------------------------------------------------------------------------
// Output files

/// Shortest decimal that round-trips; independent of locale.
inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw InputError("bad number '" + std::string(s) + "'");
  return v;
}

inline constexpr const char* kCurvesHeader = "epoch,train_loss,train_acc,test_loss,test_acc";

inline void write_curves_csv(const std::vector<EpochRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << kCurvesHeader << '\n';
  for (const auto& r : rows)
    out << r.epoch << ',' << format_number(r.train_loss) << ',' << format_number(r.train_acc) << ','
        << format_number(r.test_loss) << ',' << format_number(r.test_acc) << '\n';
}

inline std::vector<EpochRow> read_curves_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCurvesHeader) throw InputError("bad curves header in " + path.string());
  std::vector<EpochRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::string_view sv(line);
    for (std::size_t pos; (pos = sv.find(',')) != std::string_view::npos; sv.remove_prefix(pos + 1)) f.push_back(sv.substr(0, pos));
    f.push_back(sv);
    if (f.size() != 5) throw InputError("bad curves row: " + line);
    rows.push_back({static_cast<std::size_t>(parse_number(f[0])), parse_number(f[1]), parse_number(f[2]), parse_number(f[3]),
                    parse_number(f[4])});
  }
  return rows;
}

inline nlohmann::json metrics_json(const ConfusionMatrix& cm) {
  const auto m = compute_metrics(cm);
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"tp", cm.tp},
          {"tn", cm.tn},
          {"fp", cm.fp},
          {"fn", cm.fn},
          {"accuracy", opt(m.accuracy)},
          {"specificity", opt(m.specificity)},
          {"recall", opt(m.recall)},
          {"precision", opt(m.precision)},
          {"f1", opt(m.f1)}};
}

/// key=value lines; undefined metrics are written as `undefined`.
inline std::string metrics_kv(const ConfusionMatrix& cm, const std::string& prefix = "") {
  const auto m = compute_metrics(cm);
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string("undefined"); };
  std::ostringstream os;
  os << prefix << "tp=" << cm.tp << '\n'
     << prefix << "tn=" << cm.tn << '\n'
     << prefix << "fp=" << cm.fp << '\n'
     << prefix << "fn=" << cm.fn << '\n'
     << prefix << "accuracy=" << opt(m.accuracy) << '\n'
     << prefix << "specificity=" << opt(m.specificity) << '\n'
     << prefix << "recall=" << opt(m.recall) << '\n'
     << prefix << "precision=" << opt(m.precision) << '\n'
     << prefix << "f1=" << opt(m.f1) << '\n';
  return os.str();
}

inline std::string confusion_table(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "                 pred_normal  pred_tumor\n";
  os << "actual_normal  " << std::setw(12) << cm.tn << std::setw(12) << cm.fp << '\n';
  os << "actual_tumor   " << std::setw(12) << cm.fn << std::setw(12) << cm.tp << '\n';
  return os.str();
}

/// One-line summary: accuracy, specificity, recall, F1 (percent).
inline std::string metrics_line(const ConfusionMatrix& cm) {
  const auto m = compute_metrics(cm);
  auto pct = [](const std::optional<double>& v) {
    if (!v) return std::string("undefined");
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * *v << '%';
    return os.str();
  };
  return "accuracy " + pct(m.accuracy) + "  specificity " + pct(m.specificity) + "  recall " + pct(m.recall) + "  f1 " +
         pct(m.f1);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

/// curves.csv, metrics.json, metrics.txt and confusion.txt under out_dir.
inline void emit_curves(const TrainLog& log, const std::filesystem::path& out_dir) {
  if (log.rows.empty()) throw std::invalid_argument("emit_curves: empty training log");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (!std::filesystem::is_directory(out_dir)) throw InputError("cannot create output directory " + out_dir.string());
  write_curves_csv(log.rows, out_dir / "curves.csv");
  nlohmann::json j{{"epochs", log.rows.size()},
                   {"final", metrics_json(log.confusion)},
                   {"best", metrics_json(log.best_confusion)},
                   {"best_epoch", log.best_epoch}};
  write_text(out_dir / "metrics.json", j.dump(2) + "\n");
  write_text(out_dir / "metrics.txt", "epochs=" + std::to_string(log.rows.size()) + "\n" + metrics_kv(log.confusion) +
                                          "best_epoch=" + std::to_string(log.best_epoch) + "\n" +
                                          metrics_kv(log.best_confusion, "best_"));
  write_text(out_dir / "confusion.txt", confusion_table(log.confusion));
}

}  // namespace lcnn
