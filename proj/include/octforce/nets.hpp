#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "octforce/common.hpp"
#include "octforce/ops.hpp"
#include "octforce/streams.hpp"
#include "octforce/tensor.hpp"

namespace octforce::nets {

using ad::Pad;
using ad::Shape;
using ad::Tensor;

enum class ArchId { conv_gru_cnn, cnn_gru, cnn2d, cnn1d, gru };

inline const char* arch_name(ArchId a) {
  switch (a) {
    case ArchId::conv_gru_cnn: return "convgru-cnn";
    case ArchId::cnn_gru: return "cnn-gru";
    case ArchId::cnn2d: return "2d-cnn";
    case ArchId::cnn1d: return "1d-cnn";
    case ArchId::gru: return "gru";
  }
  throw InvalidArgument("arch_name: bad ArchId");
}

inline ArchId parse_arch(const std::string& s) {
  if (s == "convgru-cnn") return ArchId::conv_gru_cnn;
  if (s == "cnn-gru") return ArchId::cnn_gru;
  if (s == "2d-cnn") return ArchId::cnn2d;
  if (s == "1d-cnn") return ArchId::cnn1d;
  if (s == "gru") return ArchId::gru;
  throw InvalidArgument("unknown architecture '" + s +
                        "' (expected convgru-cnn, cnn-gru, 2d-cnn, 1d-cnn or gru)");
}

inline std::vector<ArchId> all_archs() {
  return {ArchId::conv_gru_cnn, ArchId::cnn_gru, ArchId::cnn2d, ArchId::cnn1d, ArchId::gru};
}

// Residual trunk layout: within each group the first block downsamples with
// stride 2 and raises the feature count, the rest keep stride 1 and the same
// width. The recurrent front-ends are sized independently. gru_layers /
// gru_hidden configure the pure recurrent model; the CNN-GRU hybrid always
// stacks two recurrent layers on the per-step CNN features.
struct ResGroup {
  int blocks = 1;
  int features = 1;
};

struct LayerSpec {
  std::vector<ResGroup> groups{{2, 16}, {2, 32}, {2, 64}};
  int kernel = 3;
  int convgru_layers = 2;
  int convgru_features = 8;
  int convgru_kernel = 3;
  int gru_layers = 3;
  int gru_hidden = 32;

  static LayerSpec desk_default() { return {}; }

  // Small enough for end-to-end finite-difference checks.
  static LayerSpec tiny() {
    LayerSpec s;
    s.groups = {{1, 2}, {1, 3}};
    s.convgru_layers = 1;
    s.convgru_features = 2;
    s.gru_layers = 2;
    s.gru_hidden = 3;
    return s;
  }

  void validate() const {
    if (groups.empty()) throw InvalidArgument("layer spec: at least one ResBlock group required");
    int prev = 0;
    for (const auto& g : groups) {
      if (g.blocks < 1) throw InvalidArgument("layer spec: group needs >= 1 block");
      if (g.features < prev)
        throw InvalidArgument("layer spec: feature counts must be non-decreasing (" +
                              std::to_string(g.features) + " after " + std::to_string(prev) + ")");
      prev = g.features;
    }
    if (kernel < 1 || kernel % 2 == 0)
      throw InvalidArgument("layer spec: kernel must be odd, got " + std::to_string(kernel));
    if (convgru_kernel < 1 || convgru_kernel % 2 == 0)
      throw InvalidArgument("layer spec: convgru kernel must be odd, got " +
                            std::to_string(convgru_kernel));
    if (convgru_layers < 1 || convgru_features < 1)
      throw InvalidArgument("layer spec: convgru stack needs >= 1 layer and >= 1 feature map");
    if (gru_layers < 1 || gru_hidden < 1)
      throw InvalidArgument("layer spec: gru stack needs >= 1 layer and >= 1 hidden unit");
  }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
struct ModelParams {
  std::vector<std::pair<std::string, Tensor<T>>> items;

  // Returns a copy of the handle (shared storage), never a reference into
  // the growable list.
  Tensor<T> add(const std::string& name, Tensor<T> t) {
    for (const auto& [n, _] : items)
      if (n == name) throw InvalidArgument("duplicate parameter name: " + name);
    items.emplace_back(name, std::move(t));
    return items.back().second;
  }

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }

  std::size_t count_values() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items) n += t.size();
    return n;
  }

  void zero_grads() {
    for (auto& [_, t] : items) t.zero_grad();
  }
};

template <typename T>
struct GruCellParams {
  Tensor<T> wz, uz, bz, wr, ur, br, wh, uh, bh;
};

template <typename T>
struct ConvGruCellParams {
  Tensor<T> wz, uz, bz, wr, ur, br, wh, uh, bh;
  int kernel = 3;
};

template <typename T>
struct ResBlock1dParams {
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> proj;  // undefined when the shortcut is the identity
  int stride = 1;
};

template <typename T>
struct ResBlock2dParams {
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> proj;
  int stride = 1;
};

// ---------------------------------------------------------------------------
// Cells and blocks
// ---------------------------------------------------------------------------

// z = sigmoid(Wz x + Uz h + bz)
// r = sigmoid(Wr x + Ur h + br)
// hcand = tanh(Wh x + Uh (r .* h) + bh)
// h' = (1 - z) .* h + z .* hcand
template <typename T>
Tensor<T> gru_cell(const Tensor<T>& x, const Tensor<T>& h_prev, const GruCellParams<T>& p) {
  auto z = ad::sigmoid(ad::add(ad::dense(x, p.wz, p.bz), ad::dense(h_prev, p.uz)));
  auto r = ad::sigmoid(ad::add(ad::dense(x, p.wr, p.br), ad::dense(h_prev, p.ur)));
  auto cand = ad::tanh(ad::add(ad::dense(x, p.wh, p.bh), ad::dense(ad::mul(r, h_prev), p.uh)));
  return ad::add(ad::mul(ad::one_minus(z), h_prev), ad::mul(z, cand));
}

// Same gating with every matrix product replaced by a stride-1 "same"
// convolution over the depth axis, so the hidden state keeps its spatial
// length.
template <typename T>
Tensor<T> convgru_cell(const Tensor<T>& x, const Tensor<T>& h_prev,
                       const ConvGruCellParams<T>& p) {
  auto z = ad::sigmoid(ad::add(ad::conv1d(x, p.wz, p.bz, 1, Pad::same),
                               ad::conv1d(h_prev, p.uz, 1, Pad::same)));
  auto r = ad::sigmoid(ad::add(ad::conv1d(x, p.wr, p.br, 1, Pad::same),
                               ad::conv1d(h_prev, p.ur, 1, Pad::same)));
  auto cand = ad::tanh(ad::add(ad::conv1d(x, p.wh, p.bh, 1, Pad::same),
                               ad::conv1d(ad::mul(r, h_prev), p.uh, 1, Pad::same)));
  return ad::add(ad::mul(ad::one_minus(z), h_prev), ad::mul(z, cand));
}

// y = relu(F(x) + P(x)), F = conv-relu-conv, P = identity when shapes allow,
// otherwise a strided 1x1 projection.
template <typename T>
Tensor<T> resblock_1d(const Tensor<T>& x, const ResBlock1dParams<T>& p) {
  auto main = ad::conv1d(ad::relu(ad::conv1d(x, p.w1, p.b1, p.stride, Pad::same)), p.w2, p.b2, 1,
                         Pad::same);
  auto shortcut = p.proj.defined() ? ad::conv1d(x, p.proj, p.stride, Pad::same) : x;
  return ad::relu(ad::add(main, shortcut));
}

template <typename T>
Tensor<T> resblock_2d(const Tensor<T>& x, const ResBlock2dParams<T>& p) {
  auto main = ad::conv2d(ad::relu(ad::conv2d(x, p.w1, p.b1, p.stride, p.stride, Pad::same)), p.w2,
                         p.b2, 1, 1, Pad::same);
  auto shortcut = p.proj.defined() ? ad::conv2d(x, p.proj, p.stride, p.stride, Pad::same) : x;
  return ad::relu(ad::add(main, shortcut));
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
Tensor<T> init_uniform(Shape shape, int fan_in, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(ad::numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-s, s));
  return Tensor<T>::from(std::move(shape), std::move(v), /*wants_grad=*/true);
}

// [B, t_s, d_c] -> [B, 1, d_c] at time t (fresh leaf, inputs carry no grad)
template <typename T>
Tensor<T> slice_step_3d(const Tensor<T>& x, int t) {
  const int B = x.dim(0), ts = x.dim(1), dc = x.dim(2);
  Tensor<T> out = Tensor<T>::zeros({B, 1, dc});
  const T* px = x.data();
  T* po = out.data();
  for (int b = 0; b < B; ++b)
    std::copy(px + (static_cast<std::size_t>(b) * ts + t) * dc,
              px + (static_cast<std::size_t>(b) * ts + t + 1) * dc,
              po + static_cast<std::size_t>(b) * dc);
  return out;
}

template <typename T>
Tensor<T> slice_step_2d(const Tensor<T>& x, int t) {
  const int B = x.dim(0), ts = x.dim(1), dc = x.dim(2);
  Tensor<T> out = Tensor<T>::zeros({B, dc});
  const T* px = x.data();
  T* po = out.data();
  for (int b = 0; b < B; ++b)
    std::copy(px + (static_cast<std::size_t>(b) * ts + t) * dc,
              px + (static_cast<std::size_t>(b) * ts + t + 1) * dc,
              po + static_cast<std::size_t>(b) * dc);
  return out;
}

// [B, t_s, d_c] -> [B, 1, t_s, d_c]; same layout, so a plain copy
template <typename T>
Tensor<T> as_image(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros({x.dim(0), 1, x.dim(1), x.dim(2)});
  std::copy(x.data(), x.data() + x.size(), out.data());
  return out;
}

}  // namespace detail

template <typename T>
class Model {
 public:
  ArchId arch = ArchId::conv_gru_cnn;
  LayerSpec spec;
  int t_s = 0;
  int d_c = 0;
  ModelParams<T> params;
  streams::NormStats norm;

  std::vector<ConvGruCellParams<T>> convgru_stack;
  std::vector<GruCellParams<T>> gru_stack;
  std::vector<ResBlock1dParams<T>> trunk1d;
  std::vector<ResBlock2dParams<T>> trunk2d;
  Tensor<T> head_w, head_b;

  // [batch, t_s, d_c] -> [batch, 1]
  Tensor<T> forward(const Tensor<T>& input) const {
    if (input.rank() != 3 || input.dim(1) != t_s || input.dim(2) != d_c)
      throw ShapeError(std::string("model input must be [batch, ") + std::to_string(t_s) + ", " +
                       std::to_string(d_c) + "], got " + ad::shape_str(input.shape()));
    const int B = input.dim(0);
    switch (arch) {
      case ArchId::conv_gru_cnn: {
        std::vector<Tensor<T>> h;
        for (const auto& layer : convgru_stack) {
          h.push_back(Tensor<T>::zeros({B, layer.wz.dim(0), d_c}));
        }
        for (int t = 0; t < t_s; ++t) {
          Tensor<T> x = detail::slice_step_3d(input, t);
          for (std::size_t l = 0; l < convgru_stack.size(); ++l) {
            h[l] = convgru_cell(x, h[l], convgru_stack[l]);
            x = h[l];
          }
        }
        return head(run_trunk1d(h.back()));
      }
      case ArchId::cnn_gru: {
        std::vector<Tensor<T>> h;
        for (const auto& layer : gru_stack) h.push_back(Tensor<T>::zeros({B, layer.uz.dim(0)}));
        for (int t = 0; t < t_s; ++t) {
          Tensor<T> feat = ad::global_avg_pool(run_trunk1d(detail::slice_step_3d(input, t)));
          Tensor<T> x = feat;
          for (std::size_t l = 0; l < gru_stack.size(); ++l) {
            h[l] = gru_cell(x, h[l], gru_stack[l]);
            x = h[l];
          }
        }
        return ad::dense(h.back(), head_w, head_b);
      }
      case ArchId::cnn2d: {
        Tensor<T> x = detail::as_image(input);
        for (const auto& block : trunk2d) x = resblock_2d(x, block);
        return ad::dense(ad::global_avg_pool(x), head_w, head_b);
      }
      case ArchId::cnn1d: {
        return head(run_trunk1d(detail::slice_step_3d(input, t_s - 1)));
      }
      case ArchId::gru: {
        std::vector<Tensor<T>> h;
        for (const auto& layer : gru_stack) h.push_back(Tensor<T>::zeros({B, layer.uz.dim(0)}));
        for (int t = 0; t < t_s; ++t) {
          Tensor<T> x = detail::slice_step_2d(input, t);
          for (std::size_t l = 0; l < gru_stack.size(); ++l) {
            h[l] = gru_cell(x, h[l], gru_stack[l]);
            x = h[l];
          }
        }
        return ad::dense(h.back(), head_w, head_b);
      }
    }
    throw InvalidArgument("forward: bad ArchId");
  }

  std::size_t param_count() const { return params.count_values(); }

 private:
  Tensor<T> run_trunk1d(Tensor<T> x) const {
    for (const auto& block : trunk1d) x = resblock_1d(x, block);
    return x;
  }

  Tensor<T> head(const Tensor<T>& trunk_out) const {
    return ad::dense(ad::global_avg_pool(trunk_out), head_w, head_b);
  }
};

// ---------------------------------------------------------------------------
// Builder
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
GruCellParams<T> make_gru_cell(Model<T>& m, const std::string& prefix, int in, int hidden,
                               Rng& rng) {
  GruCellParams<T> p;
  p.wz = m.params.add(prefix + ".wz", init_uniform<T>({hidden, in}, in, rng));
  p.uz = m.params.add(prefix + ".uz", init_uniform<T>({hidden, hidden}, hidden, rng));
  p.bz = m.params.add(prefix + ".bz", Tensor<T>::zeros({hidden}, true));
  p.wr = m.params.add(prefix + ".wr", init_uniform<T>({hidden, in}, in, rng));
  p.ur = m.params.add(prefix + ".ur", init_uniform<T>({hidden, hidden}, hidden, rng));
  p.br = m.params.add(prefix + ".br", Tensor<T>::zeros({hidden}, true));
  p.wh = m.params.add(prefix + ".wh", init_uniform<T>({hidden, in}, in, rng));
  p.uh = m.params.add(prefix + ".uh", init_uniform<T>({hidden, hidden}, hidden, rng));
  p.bh = m.params.add(prefix + ".bh", Tensor<T>::zeros({hidden}, true));
  return p;
}

template <typename T>
ConvGruCellParams<T> make_convgru_cell(Model<T>& m, const std::string& prefix, int ch_in, int ch_h,
                                       int k, Rng& rng) {
  ConvGruCellParams<T> p;
  p.kernel = k;
  const int fan_x = ch_in * k, fan_h = ch_h * k;
  p.wz = m.params.add(prefix + ".wz", init_uniform<T>({ch_h, ch_in, k}, fan_x, rng));
  p.uz = m.params.add(prefix + ".uz", init_uniform<T>({ch_h, ch_h, k}, fan_h, rng));
  p.bz = m.params.add(prefix + ".bz", Tensor<T>::zeros({ch_h}, true));
  p.wr = m.params.add(prefix + ".wr", init_uniform<T>({ch_h, ch_in, k}, fan_x, rng));
  p.ur = m.params.add(prefix + ".ur", init_uniform<T>({ch_h, ch_h, k}, fan_h, rng));
  p.br = m.params.add(prefix + ".br", Tensor<T>::zeros({ch_h}, true));
  p.wh = m.params.add(prefix + ".wh", init_uniform<T>({ch_h, ch_in, k}, fan_x, rng));
  p.uh = m.params.add(prefix + ".uh", init_uniform<T>({ch_h, ch_h, k}, fan_h, rng));
  p.bh = m.params.add(prefix + ".bh", Tensor<T>::zeros({ch_h}, true));
  return p;
}

template <typename T>
ResBlock1dParams<T> make_resblock_1d(Model<T>& m, const std::string& prefix, int in, int out,
                                     int k, int stride, Rng& rng) {
  ResBlock1dParams<T> p;
  p.stride = stride;
  p.w1 = m.params.add(prefix + ".w1", init_uniform<T>({out, in, k}, in * k, rng));
  p.b1 = m.params.add(prefix + ".b1", Tensor<T>::zeros({out}, true));
  p.w2 = m.params.add(prefix + ".w2", init_uniform<T>({out, out, k}, out * k, rng));
  p.b2 = m.params.add(prefix + ".b2", Tensor<T>::zeros({out}, true));
  if (stride != 1 || in != out)
    p.proj = m.params.add(prefix + ".proj", init_uniform<T>({out, in, 1}, in, rng));
  return p;
}

template <typename T>
ResBlock2dParams<T> make_resblock_2d(Model<T>& m, const std::string& prefix, int in, int out,
                                     int k, int stride, Rng& rng) {
  ResBlock2dParams<T> p;
  p.stride = stride;
  p.w1 = m.params.add(prefix + ".w1", init_uniform<T>({out, in, k, k}, in * k * k, rng));
  p.b1 = m.params.add(prefix + ".b1", Tensor<T>::zeros({out}, true));
  p.w2 = m.params.add(prefix + ".w2", init_uniform<T>({out, out, k, k}, out * k * k, rng));
  p.b2 = m.params.add(prefix + ".b2", Tensor<T>::zeros({out}, true));
  if (stride != 1 || in != out)
    p.proj = m.params.add(prefix + ".proj", init_uniform<T>({out, in, 1, 1}, in, rng));
  return p;
}

template <typename T>
void make_trunk1d(Model<T>& m, int in_channels, Rng& rng) {
  int in = in_channels;
  for (std::size_t g = 0; g < m.spec.groups.size(); ++g) {
    const auto& grp = m.spec.groups[g];
    for (int b = 0; b < grp.blocks; ++b) {
      const int stride = b == 0 ? 2 : 1;
      const std::string prefix =
          "trunk1d.g" + std::to_string(g) + ".b" + std::to_string(b);
      m.trunk1d.push_back(
          make_resblock_1d(m, prefix, in, grp.features, m.spec.kernel, stride, rng));
      in = grp.features;
    }
  }
}

template <typename T>
void make_trunk2d(Model<T>& m, int in_channels, Rng& rng) {
  int in = in_channels;
  for (std::size_t g = 0; g < m.spec.groups.size(); ++g) {
    const auto& grp = m.spec.groups[g];
    for (int b = 0; b < grp.blocks; ++b) {
      const int stride = b == 0 ? 2 : 1;
      const std::string prefix =
          "trunk2d.g" + std::to_string(g) + ".b" + std::to_string(b);
      m.trunk2d.push_back(
          make_resblock_2d(m, prefix, in, grp.features, m.spec.kernel, stride, rng));
      in = grp.features;
    }
  }
}

template <typename T>
void make_head(Model<T>& m, int in_features, Rng& rng) {
  m.head_w = m.params.add("head.w", init_uniform<T>({1, in_features}, in_features, rng));
  m.head_b = m.params.add("head.b", Tensor<T>::zeros({1}, true));
}

}  // namespace detail

template <typename T>
Model<T> build(ArchId arch, const LayerSpec& spec, int t_s, int d_c, std::uint64_t seed) {
  spec.validate();
  if (t_s < 1) throw InvalidArgument("build: t_s must be >= 1");
  if (d_c < 1) throw InvalidArgument("build: d_c must be >= 1");
  Model<T> m;
  m.arch = arch;
  m.spec = spec;
  m.t_s = t_s;
  m.d_c = d_c;
  m.norm.pixel_mean.assign(static_cast<std::size_t>(d_c), 0.0);
  m.norm.pixel_std.assign(static_cast<std::size_t>(d_c), 1.0);
  Rng rng(derive_seed(seed, 17));

  switch (arch) {
    case ArchId::conv_gru_cnn: {
      int ch = 1;
      for (int l = 0; l < spec.convgru_layers; ++l) {
        m.convgru_stack.push_back(detail::make_convgru_cell(m, "convgru." + std::to_string(l), ch,
                                                            spec.convgru_features,
                                                            spec.convgru_kernel, rng));
        ch = spec.convgru_features;
      }
      detail::make_trunk1d(m, spec.convgru_features, rng);
      detail::make_head(m, spec.groups.back().features, rng);
      break;
    }
    case ArchId::cnn_gru: {
      detail::make_trunk1d(m, 1, rng);
      int in = spec.groups.back().features;
      for (int l = 0; l < 2; ++l) {
        m.gru_stack.push_back(
            detail::make_gru_cell(m, "gru." + std::to_string(l), in, spec.gru_hidden, rng));
        in = spec.gru_hidden;
      }
      detail::make_head(m, spec.gru_hidden, rng);
      break;
    }
    case ArchId::cnn2d: {
      detail::make_trunk2d(m, 1, rng);
      detail::make_head(m, spec.groups.back().features, rng);
      break;
    }
    case ArchId::cnn1d: {
      detail::make_trunk1d(m, 1, rng);
      detail::make_head(m, spec.groups.back().features, rng);
      break;
    }
    case ArchId::gru: {
      int in = d_c;
      for (int l = 0; l < spec.gru_layers; ++l) {
        m.gru_stack.push_back(
            detail::make_gru_cell(m, "gru." + std::to_string(l), in, spec.gru_hidden, rng));
        in = spec.gru_hidden;
      }
      detail::make_head(m, spec.gru_hidden, rng);
      break;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
// Format: magic "OCTCKPT1", then for each tensor in save order:
//   [u32 name length][name][u32 rank][u32 dim...][f64 values...]
// Values are always stored at 64 bits. Metadata (architecture, window size,
// normalization statistics) travels as reserved "meta/" and "norm/" entries
// so one file rebuilds the full predictor.

inline constexpr char kCheckpointMagic[8] = {'O', 'C', 'T', 'C', 'K', 'P', 'T', '1'};

namespace detail {

inline void write_record(std::ostream& os, const std::string& name,
                         const std::vector<int>& shape, const double* values, std::size_t n) {
  io::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  io::write_bytes(os, name.data(), name.size());
  io::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) io::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  io::write_bytes(os, values, n * sizeof(double));
}

struct RawRecord {
  std::vector<int> shape;
  std::vector<double> values;
};

inline std::map<std::string, RawRecord> read_records(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  char magic[8];
  io::read_bytes(is, magic, 8, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw BadMagicError(path + ": not a checkpoint file (bad magic)");
  std::map<std::string, RawRecord> out;
  while (is.peek() != std::ifstream::traits_type::eof()) {
    const auto name_len = io::read_raw<std::uint32_t>(is, "tensor name length");
    std::string name(name_len, '\0');
    if (name_len) io::read_bytes(is, name.data(), name_len, "tensor name");
    const auto rank = io::read_raw<std::uint32_t>(is, "tensor rank");
    RawRecord rec;
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = io::read_raw<std::uint32_t>(is, "tensor dim");
      rec.shape.push_back(static_cast<int>(d));
      n *= d;
    }
    rec.values.resize(n);
    io::read_bytes(is, rec.values.data(), n * sizeof(double), "tensor values");
    out[name] = std::move(rec);
  }
  return out;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const Model<T>& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  io::write_bytes(os, kCheckpointMagic, 8);

  auto scalar = [&](const std::string& name, double v) {
    detail::write_record(os, name, {1}, &v, 1);
  };
  scalar("meta/arch", static_cast<double>(static_cast<int>(m.arch)));
  scalar("meta/t_s", m.t_s);
  scalar("meta/d_c", m.d_c);
  scalar("meta/kernel", m.spec.kernel);
  {
    std::vector<double> g;
    for (const auto& grp : m.spec.groups) {
      g.push_back(grp.blocks);
      g.push_back(grp.features);
    }
    detail::write_record(os, "meta/groups", {static_cast<int>(m.spec.groups.size()), 2}, g.data(),
                         g.size());
  }
  {
    const double cg[3] = {static_cast<double>(m.spec.convgru_layers),
                          static_cast<double>(m.spec.convgru_features),
                          static_cast<double>(m.spec.convgru_kernel)};
    detail::write_record(os, "meta/convgru", {3}, cg, 3);
    const double gr[2] = {static_cast<double>(m.spec.gru_layers),
                          static_cast<double>(m.spec.gru_hidden)};
    detail::write_record(os, "meta/gru", {2}, gr, 2);
  }
  scalar("meta/scale_labels", m.norm.scale_labels ? 1.0 : 0.0);
  scalar("meta/label_scale", m.norm.label_scale);
  detail::write_record(os, "norm/pixel_mean", {m.d_c}, m.norm.pixel_mean.data(),
                       m.norm.pixel_mean.size());
  detail::write_record(os, "norm/pixel_std", {m.d_c}, m.norm.pixel_std.data(),
                       m.norm.pixel_std.size());

  for (const auto& [name, t] : m.params.items) {
    std::vector<double> v(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) v[i] = static_cast<double>(t.data()[i]);
    detail::write_record(os, name, t.shape(), v.data(), v.size());
  }
  os.close();
  if (!os) throw DataError("write failed: " + path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  auto records = detail::read_records(path);
  auto take_scalar = [&](const std::string& name) {
    auto it = records.find(name);
    if (it == records.end()) throw DataError(path + ": checkpoint missing '" + name + "'");
    if (it->second.values.size() != 1)
      throw DataError(path + ": '" + name + "' is not a scalar");
    return it->second.values[0];
  };

  LayerSpec spec;
  spec.groups.clear();
  {
    auto it = records.find("meta/groups");
    if (it == records.end()) throw DataError(path + ": checkpoint missing 'meta/groups'");
    const auto& vals = it->second.values;
    for (std::size_t i = 0; i + 1 < vals.size(); i += 2)
      spec.groups.push_back(ResGroup{static_cast<int>(vals[i]), static_cast<int>(vals[i + 1])});
  }
  spec.kernel = static_cast<int>(take_scalar("meta/kernel"));
  {
    auto it = records.find("meta/convgru");
    if (it == records.end()) throw DataError(path + ": checkpoint missing 'meta/convgru'");
    spec.convgru_layers = static_cast<int>(it->second.values.at(0));
    spec.convgru_features = static_cast<int>(it->second.values.at(1));
    spec.convgru_kernel = static_cast<int>(it->second.values.at(2));
    it = records.find("meta/gru");
    if (it == records.end()) throw DataError(path + ": checkpoint missing 'meta/gru'");
    spec.gru_layers = static_cast<int>(it->second.values.at(0));
    spec.gru_hidden = static_cast<int>(it->second.values.at(1));
  }
  const int arch_raw = static_cast<int>(take_scalar("meta/arch"));
  if (arch_raw < 0 || arch_raw > static_cast<int>(ArchId::gru))
    throw DataError(path + ": checkpoint has unknown architecture id " + std::to_string(arch_raw));
  const auto arch = static_cast<ArchId>(arch_raw);
  const int t_s = static_cast<int>(take_scalar("meta/t_s"));
  const int d_c = static_cast<int>(take_scalar("meta/d_c"));

  Model<T> m = build<T>(arch, spec, t_s, d_c, /*seed=*/0);
  m.norm.scale_labels = take_scalar("meta/scale_labels") != 0.0;
  m.norm.label_scale = take_scalar("meta/label_scale");
  {
    auto it = records.find("norm/pixel_mean");
    if (it == records.end()) throw DataError(path + ": checkpoint missing 'norm/pixel_mean'");
    m.norm.pixel_mean = it->second.values;
    it = records.find("norm/pixel_std");
    if (it == records.end()) throw DataError(path + ": checkpoint missing 'norm/pixel_std'");
    m.norm.pixel_std = it->second.values;
  }

  for (auto& [name, t] : m.params.items) {
    auto it = records.find(name);
    if (it == records.end()) throw DataError(path + ": checkpoint missing parameter '" + name + "'");
    if (it->second.shape != t.shape())
      throw DataError(path + ": parameter '" + name + "' has shape " +
                      ad::shape_str(it->second.shape) + ", model expects " +
                      ad::shape_str(t.shape()));
    for (std::size_t i = 0; i < t.size(); ++i)
      t.data()[i] = static_cast<T>(it->second.values[i]);
  }
  return m;
}

}  // namespace octforce::nets
