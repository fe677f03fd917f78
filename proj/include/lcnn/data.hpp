#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "lcnn/augment.hpp"
#include "lcnn/error.hpp"
#include "lcnn/image.hpp"
#include "lcnn/rng.hpp"
#include "lcnn/tensor.hpp"

namespace lcnn {

enum class Split { unassigned, train, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::unassigned: break;
  }
  return "unassigned";
}

inline constexpr int kNormal = 0;
inline constexpr int kTumor = 1;

struct Record {
  std::filesystem::path path;
  int label = kNormal;
  Split split = Split::unassigned;
  // Augmented copies point at the record they were derived from and carry the
  // seed that regenerates them; they have no file of their own.
  std::optional<std::size_t> origin;
  std::uint64_t aug_seed = 0;

  bool synthetic() const { return origin.has_value(); }
};

struct DatasetManifest {
  std::vector<Record> records;

  std::size_t count(int label, std::optional<Split> split = std::nullopt) const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const Record& r) {
      return r.label == label && (!split || r.split == *split);
    }));
  }

  std::size_t count(Split split) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [&](const Record& r) { return r.split == split; }));
  }

  std::vector<std::size_t> indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].split == split) out.push_back(i);
    return out;
  }
};

/// Class-directory names accepted by ingest_directory. Three-way sources
/// (benign/malignant) collapse to the tumorous class.
inline std::optional<int> label_for_directory(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  static const std::map<std::string, int> aliases{
      {"normal", kNormal}, {"no", kNormal},    {"healthy", kNormal},   {"negative", kNormal},
      {"tumor", kTumor},   {"tumour", kTumor}, {"yes", kTumor},        {"abnormal", kTumor},
      {"benign", kTumor},  {"malignant", kTumor}, {"positive", kTumor},
  };
  auto it = aliases.find(name);
  if (it == aliases.end()) return std::nullopt;
  return it->second;
}

inline bool is_image_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

inline constexpr double kMaxSkippedFraction = 0.05;

/// Scans root/<class>/ for PNG and JPEG files. Every file is decoded once;
/// undecodable files are skipped with a warning unless more than 5% fail.
inline DatasetManifest ingest_directory(const std::filesystem::path& root, std::vector<std::string>* warnings = nullptr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw InputError("data directory does not exist: " + root.string());
  auto warn = [&](std::string msg) {
    if (warnings) warnings->push_back(std::move(msg));
  };

  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());

  DatasetManifest manifest;
  std::array<std::size_t, 2> dirs_per_label{};
  std::size_t candidates = 0, skipped = 0;
  for (const auto& dir : class_dirs) {
    const auto label = label_for_directory(dir.filename().string());
    if (!label) {
      warn("ignoring directory " + dir.string());
      continue;
    }
    ++dirs_per_label[*label];
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw InputError("class directory has no images: " + dir.string());
    for (const auto& f : files) {
      ++candidates;
      try {
        (void)decode_image(f);
      } catch (const DecodeError& e) {
        ++skipped;
        warn(std::string("skipping undecodable file: ") + e.what());
        continue;
      }
      manifest.records.push_back({f, *label, Split::unassigned, std::nullopt, 0});
    }
  }
  if (dirs_per_label[kNormal] == 0) throw InputError("no normal/ class directory under " + root.string());
  if (dirs_per_label[kTumor] == 0) throw InputError("no tumor/ class directory under " + root.string());
  if (static_cast<double>(skipped) > kMaxSkippedFraction * static_cast<double>(candidates))
    throw InputError(std::to_string(skipped) + " of " + std::to_string(candidates) + " images under " + root.string() +
                     " could not be decoded");
  for (int label : {kNormal, kTumor})
    if (manifest.count(label) == 0) throw InputError("no decodable images for class " + std::to_string(label));
  return manifest;
}

struct SplitSpec {
  double train_ratio = 0.7;
  std::uint64_t seed = 42;
};

/// Per class, floor(train_ratio * n) records (chosen by a seeded shuffle) go
/// to train and the rest to test.
inline DatasetManifest stratified_split(DatasetManifest manifest, const SplitSpec& spec) {
  if (!(spec.train_ratio > 0 && spec.train_ratio < 1)) throw std::invalid_argument("split: train ratio must be in (0,1)");
  Rng rng(derive_seed(spec.seed, "split"));
  for (int label : {kNormal, kTumor}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
      if (manifest.records[i].label == label && !manifest.records[i].synthetic()) idx.push_back(i);
    if (idx.size() < 2)
      throw InputError("split: class " + std::to_string(label) + " needs at least 2 records, has " + std::to_string(idx.size()));
    rng.shuffle(idx.begin(), idx.end());
    const auto n_train = static_cast<std::size_t>(std::floor(spec.train_ratio * static_cast<double>(idx.size()) + 1e-9));
    for (std::size_t k = 0; k < idx.size(); ++k) manifest.records[idx[k]].split = k < n_train ? Split::train : Split::test;
  }
  return manifest;
}

/// Tops up the minority training class with augmented copies until both classes
/// are equal, then (multiplier k > 1) adds augmented copies so each class holds
/// k times its balanced count. Sources are always original training records.
inline DatasetManifest balance_train_set(DatasetManifest manifest, std::uint64_t seed, std::size_t multiplier = 1) {
  if (multiplier < 1) throw std::invalid_argument("balance: multiplier must be >= 1");
  for (const auto& r : manifest.records)
    if (r.split == Split::unassigned) throw std::invalid_argument("balance: manifest has unsplit records");
  Rng rng(derive_seed(seed, "balance"));

  std::array<std::vector<std::size_t>, 2> sources;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.split == Split::train && !r.synthetic()) sources[r.label].push_back(i);
  }
  auto add_copies = [&](int label, std::size_t n) {
    if (n > 0 && sources[label].empty())
      throw InputError("balance: class " + std::to_string(label) + " has no training records to augment");
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t src = sources[label][rng.below(sources[label].size())];
      manifest.records.push_back({manifest.records[src].path, label, Split::train, src, rng.next_u64()});
    }
  };

  const std::size_t n0 = manifest.count(kNormal, Split::train), n1 = manifest.count(kTumor, Split::train);
  if (n0 < n1) add_copies(kNormal, n1 - n0);
  if (n1 < n0) add_copies(kTumor, n0 - n1);
  const std::size_t balanced = std::max(n0, n1);
  for (int label : {kNormal, kTumor}) add_copies(label, (multiplier - 1) * balanced);
  return manifest;
}

/// `path,label,split,origin` audit listing. Augmented copies are listed as
/// `<source>#aug=<seed>` with the source path in the origin column.
inline void write_manifest_csv(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write manifest " + path.string());
  out << "path,label,split,origin\n";
  for (const auto& r : m.records) {
    if (r.synthetic())
      out << r.path.string() << "#aug=" << r.aug_seed << ',' << r.label << ',' << to_string(r.split) << ','
          << m.records[*r.origin].path.string() << '\n';
    else
      out << r.path.string() << ',' << r.label << ',' << to_string(r.split) << ",\n";
  }
  if (!out) throw InputError("failed writing manifest " + path.string());
}

/// Decoded, model-ready (100x100) images for every record of a manifest.
class ImageStore {
 public:
  ImageStore(const DatasetManifest& manifest, AugmentConfig augment = {}, std::size_t image_size = kModelImageSize)
      : manifest_(&manifest), augment_(augment), image_size_(image_size), images_(manifest.records.size()) {
    augment_.out_size = image_size;
  }

  const DatasetManifest& manifest() const { return *manifest_; }
  std::size_t image_size() const { return image_size_; }

  /// Originals are decoded and resized; augmented copies are regenerated from
  /// their source and seed. Pure per record, so any number of workers gives
  /// identical results.
  ImageBuffer render(std::size_t index) const {
    const Record& r = manifest_->records.at(index);
    if (!r.synthetic()) return resize(decode_image(r.path), image_size_, image_size_);
    Rng rng(r.aug_seed);
    return augment_sample(decode_image(manifest_->records.at(*r.origin).path), augment_, rng);
  }

  const ImageBuffer& get(std::size_t index) {
    auto& slot = images_.at(index);
    if (!slot) slot = render(index);
    return *slot;
  }

  void preload(std::span<const std::size_t> indices, std::size_t threads = 1) {
    std::vector<std::size_t> todo;
    for (auto i : indices)
      if (!images_.at(i)) todo.push_back(i);
    threads = std::max<std::size_t>(1, std::min(threads, todo.size()));
    if (threads == 1) {
      for (auto i : todo) images_[i] = render(i);
      return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        try {
          for (std::size_t k = t; k < todo.size(); k += threads) images_[todo[k]] = render(todo[k]);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

 private:
  const DatasetManifest* manifest_;
  AugmentConfig augment_;
  std::size_t image_size_;
  std::vector<std::optional<ImageBuffer>> images_;
};

template <Real T>
struct Batch {
  Tensor<T> inputs;  // B x H x W x 1
  Tensor<T> labels;  // B
  std::vector<std::size_t> records;
};

/// Seeded per-epoch shuffle of a split, cut into batches; the last batch may be short.
inline std::vector<std::vector<std::size_t>> batch_plan(const DatasetManifest& m, Split split, std::size_t batch_size,
                                                        std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  auto idx = m.indices(split);
  if (idx.empty()) throw InputError(std::string("split '") + to_string(split) + "' is empty");
  Rng rng(derive_seed(derive_seed(seed, "batches"), epoch));
  rng.shuffle(idx.begin(), idx.end());
  std::vector<std::vector<std::size_t>> plan;
  for (std::size_t i = 0; i < idx.size(); i += batch_size)
    plan.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                      idx.begin() + static_cast<std::ptrdiff_t>(std::min(i + batch_size, idx.size())));
  return plan;
}

/// Fixed-order batches (no shuffle), for evaluation.
inline std::vector<std::vector<std::size_t>> sequential_plan(const DatasetManifest& m, Split split, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  auto idx = m.indices(split);
  if (idx.empty()) throw InputError(std::string("split '") + to_string(split) + "' is empty");
  std::vector<std::vector<std::size_t>> plan;
  for (std::size_t i = 0; i < idx.size(); i += batch_size)
    plan.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                      idx.begin() + static_cast<std::ptrdiff_t>(std::min(i + batch_size, idx.size())));
  return plan;
}

template <Real T>
Tensor<T> image_tensor(const ImageBuffer& img) {
  Tensor<T> t(Shape{1, img.height, img.width, 1});
  std::copy(img.pixels.begin(), img.pixels.end(), t.data());
  return t;
}

template <Real T>
Batch<T> assemble_batch(ImageStore& store, const std::vector<std::size_t>& records) {
  const std::size_t s = store.image_size();
  Batch<T> b{Tensor<T>(Shape{records.size(), s, s, 1}), Tensor<T>(Shape{records.size()}), records};
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& img = store.get(records[k]);
    std::copy(img.pixels.begin(), img.pixels.end(), b.inputs.data() + k * s * s);
    b.labels[k] = static_cast<T>(store.manifest().records[records[k]].label);
  }
  return b;
}

template <Real T>
std::vector<Batch<T>> make_batches(ImageStore& store, Split split, std::size_t batch_size, std::uint64_t seed,
                                   std::uint64_t epoch) {
  std::vector<Batch<T>> out;
  for (const auto& ids : batch_plan(store.manifest(), split, batch_size, seed, epoch))
    out.push_back(assemble_batch<T>(store, ids));
  return out;
}

}  // namespace lcnn
