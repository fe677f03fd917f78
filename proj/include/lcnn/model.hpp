#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include "lcnn/layers.hpp"
#include "lcnn/loss.hpp"
#include "lcnn/rng.hpp"
#include "lcnn/tensor.hpp"

namespace lcnn {

struct ConvBlockSpec {
  std::size_t kernels = 32;
  std::size_t kernel_size = 9;
  std::size_t pool = 4;
};

/// Layer recipe: for each conv block conv(same) -> batchnorm -> relu -> maxpool,
/// then flatten, hidden dense layers each followed by relu (dropout after the
/// hidden layer at `dropout_after`), and a single-logit output layer. The
/// sigmoid is applied by Model::predict and fused into the loss for training.
struct ModelSpec {
  std::size_t input_h = 100;
  std::size_t input_w = 100;
  std::size_t input_c = 1;
  std::vector<ConvBlockSpec> conv_blocks{{32, 9, 4}, {64, 5, 4}};
  std::vector<std::size_t> dense_hidden{4096, 1024};
  double dropout_rate = 0.5;
  std::size_t dropout_after = 0;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  static ModelSpec low_complexity(std::size_t conv2_kernels = 64) {
    ModelSpec s;
    s.conv_blocks[1].kernels = conv2_kernels;
    return s;
  }

  /// 8x8 input, conv 2@3x3, pool 2x2, dense 4 -> 1. Used for end-to-end gradient checks.
  static ModelSpec tiny() {
    ModelSpec s;
    s.input_h = s.input_w = 8;
    s.conv_blocks = {{2, 3, 2}};
    s.dense_hidden = {4};
    s.dropout_rate = 0.0;
    return s;
  }
};

struct LayerInfo {
  std::size_t index;
  std::string name;
  std::string kind;
  Shape output;
  std::size_t params;
};

template <Real T>
class Model {
 public:
  struct Entry {
    std::string name;
    std::unique_ptr<Layer<T>> layer;
  };

  Model(ModelSpec spec, std::vector<Entry> layers, std::vector<LayerInfo> trace)
      : spec_(std::move(spec)), layers_(std::move(layers)), trace_(std::move(trace)) {
    if (!layers_.empty()) layers_.front().layer->set_needs_input_grad(false);
  }

  const ModelSpec& spec() const { return spec_; }
  const std::vector<LayerInfo>& trace() const { return trace_; }
  std::size_t layer_count() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i).layer; }
  const std::string& layer_name(std::size_t i) const { return layers_.at(i).name; }

  Shape input_shape() const { return Shape{spec_.input_h, spec_.input_w, spec_.input_c}; }

  /// Logits, shape [B x 1].
  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    const Shape expected = detail::with_batch(x.shape().rank() == 4 ? x.dim(0) : 1, input_shape());
    if (x.shape() != expected)
      throw ShapeError("model input must be Bx" + std::to_string(spec_.input_h) + "x" + std::to_string(spec_.input_w) +
                       "x" + std::to_string(spec_.input_c) + ", got " + x.shape().str());
    Tensor<T> h = layers_.front().layer->forward(x, mode);
    for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i].layer->forward(h, mode);
    return h;
  }

  /// Eval-mode probabilities, shape [B x 1].
  Tensor<T> predict(const Tensor<T>& x) { return sigmoid(forward(x, Mode::eval)); }

  void backward(const Tensor<T>& grad_logits) {
    Tensor<T> g = grad_logits;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      g = layers_[i].layer->backward(g);
      if (i > 0 && g.empty()) throw std::logic_error("layer " + layers_[i].name + " returned no input gradient");
    }
  }

  void zero_grad() {
    for (auto& e : layers_) e.layer->zero_grad();
  }

  std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> out;
    for (auto& e : layers_)
      for (auto& p : e.layer->parameters()) out.push_back({e.name + "." + p.name, p.value, p.grad});
    return out;
  }

  /// Everything needed to reproduce eval-mode outputs: parameters then buffers, per layer.
  std::vector<BufferRef<T>> state() {
    std::vector<BufferRef<T>> out;
    for (auto& e : layers_) {
      for (auto& p : e.layer->parameters()) out.push_back({e.name + "." + p.name, p.value});
      for (auto& b : e.layer->buffers()) out.push_back({e.name + "." + b.name, b.value});
    }
    return out;
  }

  std::vector<Tensor<T>> snapshot() {
    std::vector<Tensor<T>> out;
    for (auto& s : state()) out.push_back(*s.value);
    return out;
  }

  void restore(const std::vector<Tensor<T>>& snap) {
    auto st = state();
    if (snap.size() != st.size()) throw ModelError("snapshot does not match model layout");
    for (std::size_t i = 0; i < st.size(); ++i) {
      if (snap[i].shape() != st[i].value->shape()) throw ModelError("snapshot shape mismatch for " + st[i].name);
      *st[i].value = snap[i];
    }
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& p : parameters()) n += p.value->size();
    return n;
  }

 private:
  ModelSpec spec_;
  std::vector<Entry> layers_;
  std::vector<LayerInfo> trace_;
};

/// Instantiates the layers of `spec` with He-normal weights (std sqrt(2/fan_in)),
/// zero biases, unit gamma and zero beta. Weight and dropout streams derive from `seed`.
template <Real T>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
  using Entry = typename Model<T>::Entry;
  std::vector<Entry> layers;
  std::vector<LayerInfo> trace;
  Rng init(derive_seed(seed, "init"));
  Shape shape{spec.input_h, spec.input_w, spec.input_c};

  auto add = [&](std::string name, std::unique_ptr<Layer<T>> layer) {
    const std::size_t index = layers.size();
    try {
      shape = layer->output_shape(shape);
    } catch (const std::exception& e) {
      throw ShapeError("layer " + std::to_string(index) + " (" + name + "): " + e.what());
    }
    std::size_t params = 0;
    for (auto& p : layer->parameters()) params += p.value->size();
    trace.push_back({index, name, layer->kind(), shape, params});
    layers.push_back({std::move(name), std::move(layer)});
  };
  auto he_init = [&](Tensor<T>& w, std::size_t fan_in) {
    w = tensor_random<T>(w.shape(), Normal{0.0, std::sqrt(2.0 / static_cast<double>(fan_in))}, init);
  };

  std::size_t channels = spec.input_c;
  for (std::size_t b = 0; b < spec.conv_blocks.size(); ++b) {
    const auto& cb = spec.conv_blocks[b];
    const std::string id = std::to_string(b + 1);
    if (cb.kernel_size % 2 == 0)
      throw ShapeError("layer " + std::to_string(layers.size()) + " (conv" + id + "): kernel size must be odd");
    auto conv = std::make_unique<Conv2d<T>>(cb.kernel_size, cb.kernel_size, channels, cb.kernels, Padding::same);
    he_init(conv->kernels(), cb.kernel_size * cb.kernel_size * channels);
    add("conv" + id, std::move(conv));
    add("bn" + id, std::make_unique<BatchNorm<T>>(cb.kernels, spec.bn_momentum, spec.bn_eps));
    add("relu" + id, std::make_unique<Relu<T>>());
    add("pool" + id, std::make_unique<MaxPool2d<T>>(cb.pool, cb.pool));
    channels = cb.kernels;
  }
  add("flatten", std::make_unique<Flatten<T>>());

  auto dense = [&](const std::string& name, std::size_t out) {
    const std::size_t in = shape.numel();
    auto d = std::make_unique<Dense<T>>(in, out);
    he_init(d->weights(), in);
    add(name, std::move(d));
  };
  for (std::size_t i = 0; i < spec.dense_hidden.size(); ++i) {
    const std::string id = std::to_string(i + 1);
    dense("fc" + id, spec.dense_hidden[i]);
    add("fc" + id + "_relu", std::make_unique<Relu<T>>());
    if (i == spec.dropout_after && spec.dropout_rate > 0.0)
      add("dropout", std::make_unique<Dropout<T>>(spec.dropout_rate, derive_seed(seed, "dropout")));
  }
  dense("fc" + std::to_string(spec.dense_hidden.size() + 1), 1);

  return Model<T>(spec, std::move(layers), std::move(trace));
}

// ---------------------------------------------------------------------------
// Weight files
//
//   "LCNN" | u32 version | u32 tensor count |
//   per tensor: u32 name length | name bytes | u32 rank | u32 extents[rank] | f32 data[]
//
// All integers and floats little-endian. Tensors appear in Model::state() order.

inline constexpr std::uint32_t kWeightFormatVersion = 1;

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw ModelError(std::string("corrupt weight file: truncated while reading ") + what);
  }

  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <Real T>
void save_weights(Model<T>& model, const std::filesystem::path& path) {
  std::string buf = "LCNN";
  detail::put_u32(buf, kWeightFormatVersion);
  auto st = model.state();
  detail::put_u32(buf, static_cast<std::uint32_t>(st.size()));
  for (const auto& s : st) {
    detail::put_u32(buf, static_cast<std::uint32_t>(s.name.size()));
    buf += s.name;
    const auto& dims = s.value->shape().dims();
    detail::put_u32(buf, static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) detail::put_u32(buf, static_cast<std::uint32_t>(d));
    for (T v : s.value->values()) detail::put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write weight file " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw InputError("failed writing weight file " + path.string());
}

/// Loads a weight file into an already-built model; names and shapes must match exactly.
template <Real T>
void load_weights(Model<T>& model, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open weight file " + path.string());
  detail::ByteReader r(std::string(std::istreambuf_iterator<char>(in), {}));
  if (r.bytes(4, "magic") != "LCNN") throw ModelError("not a weight file (bad magic): " + path.string());
  const auto version = r.u32("version");
  if (version != kWeightFormatVersion)
    throw ModelError("unsupported weight file version " + std::to_string(version));
  auto st = model.state();
  const auto count = r.u32("tensor count");
  if (count != st.size())
    throw ModelError("weight file holds " + std::to_string(count) + " tensors, model expects " + std::to_string(st.size()));
  std::vector<Tensor<T>> loaded;
  for (const auto& s : st) {
    const auto name = r.bytes(r.u32("name length"), "name");
    if (name != s.name) throw ModelError("weight file tensor '" + name + "' where model expects '" + s.name + "'");
    const auto rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw ModelError("corrupt weight file: bad rank for " + name);
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = r.u32("extent");
    for (auto d : dims)
      if (d == 0) throw ModelError("corrupt weight file: zero extent for " + name);
    const Shape shape(dims);
    if (shape != s.value->shape())
      throw ModelError("shape mismatch for " + name + ": file " + shape.str() + ", model " + s.value->shape().str());
    Tensor<T> t(shape);
    for (auto& v : t.values()) v = static_cast<T>(std::bit_cast<float>(r.u32("tensor data")));
    loaded.push_back(std::move(t));
  }
  if (!r.done()) throw ModelError("corrupt weight file: trailing bytes");
  for (std::size_t i = 0; i < st.size(); ++i) *st[i].value = std::move(loaded[i]);
}

}  // namespace lcnn
