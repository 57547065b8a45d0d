#include "volxai/neuralnet.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "volxai/errors.hpp"
#include "volxai/rng.hpp"

namespace volxai::nn {

using nlohmann::json;

namespace {

int conv_out(int in, int stride) { return (in - 1) / stride + 1; }

std::size_t cube(int s) { return static_cast<std::size_t>(s) * s * s; }

}  // namespace

void ModelSpec::validate() const {
  if (input_size < 1) throw InvalidArgument("model input_size must be >= 1");
  if (blocks.empty()) throw InvalidArgument("model needs at least one conv block");
  for (const auto& b : blocks) {
    if (b.channels < 1) throw InvalidArgument("conv block channels must be >= 1");
    if (b.stride < 1) throw InvalidArgument("conv block stride must be >= 1");
  }
  if (hidden_units < 0) throw InvalidArgument("hidden_units must be >= 0");
  if (outputs != 1 && outputs != 2) throw InvalidArgument("model outputs must be 1 or 2");
  for (int c = 0; c < 2; ++c) {
    if (!std::isfinite(input_shift[c]) || !std::isfinite(input_scale[c]) || input_scale[c] == 0)
      throw InvalidArgument("input normalization must be finite with non-zero scale");
    if (!(input_window[c][0] < input_window[c][1]))
      throw InvalidArgument("input window must satisfy lo < hi");
  }
}

int ModelSpec::block_input_size(int b) const {
  int s = input_size;
  for (int i = 0; i < b; ++i) s = conv_out(s, blocks[static_cast<std::size_t>(i)].stride);
  return s;
}

int ModelSpec::block_output_size(int b) const {
  return conv_out(block_input_size(b), blocks[static_cast<std::size_t>(b)].stride);
}

int ModelSpec::layer_width(int layer) const {
  const int nb = static_cast<int>(blocks.size());
  if (layer >= 0 && layer < nb) return blocks[static_cast<std::size_t>(layer)].channels;
  if (layer == nb && hidden_units > 0) return hidden_units;
  throw InvalidArgument("layer " + std::to_string(layer) + " is not exposed by this model");
}

json to_json(const ModelSpec& s) {
  json blocks = json::array();
  for (const auto& b : s.blocks) blocks.push_back({{"channels", b.channels}, {"stride", b.stride}});
  return json{{"input_size", s.input_size},  {"input_window", s.input_window}, {"input_shift", s.input_shift},
              {"input_scale", s.input_scale}, {"blocks", blocks},
              {"hidden_units", s.hidden_units}, {"outputs", s.outputs}};
}

ModelSpec model_spec_from_json(const json& j, ModelSpec s) {
  if (j.contains("input_size")) s.input_size = j["input_size"].get<int>();
  if (j.contains("input_window"))
    s.input_window = j["input_window"].get<std::array<std::array<double, 2>, 2>>();
  if (j.contains("input_shift")) s.input_shift = j["input_shift"].get<std::array<double, 2>>();
  if (j.contains("input_scale")) s.input_scale = j["input_scale"].get<std::array<double, 2>>();
  if (j.contains("blocks")) {
    s.blocks.clear();
    for (const auto& b : j["blocks"])
      s.blocks.push_back({b.at("channels").get<int>(), b.value("stride", 2)});
  }
  if (j.contains("hidden_units")) s.hidden_units = j["hidden_units"].get<int>();
  if (j.contains("outputs")) s.outputs = j["outputs"].get<int>();
  s.validate();
  return s;
}

std::size_t Params::parameter_count() const {
  std::size_t n = 0;
  for (auto b : blocks()) n += b.size();
  return n;
}

std::vector<std::span<double>> Params::blocks() {
  std::vector<std::span<double>> out;
  for (auto& c : conv) {
    out.emplace_back(c.weight);
    out.emplace_back(c.bias);
  }
  if (hidden) {
    out.emplace_back(hidden->weight);
    out.emplace_back(hidden->bias);
  }
  out.emplace_back(head.weight);
  out.emplace_back(head.bias);
  return out;
}

std::vector<std::span<const double>> Params::blocks() const {
  std::vector<std::span<const double>> out;
  for (const auto& c : conv) {
    out.emplace_back(c.weight);
    out.emplace_back(c.bias);
  }
  if (hidden) {
    out.emplace_back(hidden->weight);
    out.emplace_back(hidden->bias);
  }
  out.emplace_back(head.weight);
  out.emplace_back(head.bias);
  return out;
}

bool Params::all_finite() const {
  for (auto b : blocks())
    for (double x : b)
      if (!std::isfinite(x)) return false;
  return true;
}

Params zero_params(const ModelSpec& spec) {
  spec.validate();
  Params p;
  int in = 2;
  for (const auto& b : spec.blocks) {
    ConvParams c;
    c.in_channels = in;
    c.out_channels = b.channels;
    c.stride = b.stride;
    c.weight.assign(static_cast<std::size_t>(b.channels) * in * 27, 0.0);
    c.bias.assign(static_cast<std::size_t>(b.channels), 0.0);
    p.conv.push_back(std::move(c));
    in = b.channels;
  }
  if (spec.hidden_units > 0) {
    DenseParams h;
    h.in = in;
    h.out = spec.hidden_units;
    h.weight.assign(static_cast<std::size_t>(h.in) * h.out, 0.0);
    h.bias.assign(static_cast<std::size_t>(h.out), 0.0);
    p.hidden = std::move(h);
    in = spec.hidden_units;
  }
  p.head.in = in;
  p.head.out = spec.outputs;
  p.head.weight.assign(static_cast<std::size_t>(in) * spec.outputs, 0.0);
  p.head.bias.assign(static_cast<std::size_t>(spec.outputs), 0.0);
  return p;
}

Params init_params(const ModelSpec& spec, std::uint64_t seed) {
  Params p = zero_params(spec);
  p.init_seed = seed;
  rng::Stream s(rng::derive_seed(seed, rng::StreamTag::Init));
  auto fill = [&](std::vector<double>& w, int fan_in, double gain) {
    const double bound = std::sqrt(gain / fan_in);
    for (double& x : w) x = s.uniform(-bound, bound);
  };
  for (auto& c : p.conv) fill(c.weight, c.in_channels * 27, 6.0);
  if (p.hidden) fill(p.hidden->weight, p.hidden->in, 6.0);
  fill(p.head.weight, p.head.in, 3.0);
  return p;
}

void check_params(const ModelSpec& spec, const Params& p) {
  const Params ref = zero_params(spec);
  bool ok = p.conv.size() == ref.conv.size() && p.hidden.has_value() == ref.hidden.has_value();
  if (ok) {
    const auto a = p.blocks();
    const auto b = ref.blocks();
    ok = a.size() == b.size();
    for (std::size_t i = 0; ok && i < a.size(); ++i) ok = a[i].size() == b[i].size();
    for (std::size_t i = 0; ok && i < p.conv.size(); ++i)
      ok = p.conv[i].stride == ref.conv[i].stride && p.conv[i].in_channels == ref.conv[i].in_channels &&
           p.conv[i].out_channels == ref.conv[i].out_channels;
  }
  if (!ok) throw InvalidArgument("parameter shapes do not match the model spec");
  if (!p.all_finite()) throw InvalidArgument("parameters contain non-finite values");
}

namespace {

// Feature maps are [channel][z][y][x] with x fastest.
struct Cache {
  std::vector<std::vector<double>> maps;  // maps[0] = normalized input, maps[b+1] = block b output
  std::vector<int> sizes;                 // spatial size of maps[i]
  std::vector<double> pooled;
  std::vector<double> hidden;  // post-ReLU
  std::vector<double> logits;
};

// Column matrix of a 3x3x3 convolution with zero padding 1: row (i * 27 + k)
// holds tap k of input channel i for every output position.
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMat im2col(const std::vector<double>& in, int channels, int stride, int s_in, int s_out) {
  const std::size_t vin = cube(s_in);
  const Eigen::Index vout = static_cast<Eigen::Index>(cube(s_out));
  RowMat col = RowMat::Zero(channels * 27, vout);
  for (int i = 0; i < channels; ++i) {
    const double* src = in.data() + i * vin;
    for (int k = 0; k < 27; ++k) {
      const int kz = k / 9, ky = (k / 3) % 3, kx = k % 3;
      double* dst = col.row(i * 27 + k).data();
      for (int z = 0; z < s_out; ++z) {
        const int iz = z * stride + kz - 1;
        if (iz < 0 || iz >= s_in) continue;
        for (int y = 0; y < s_out; ++y) {
          const int iy = y * stride + ky - 1;
          if (iy < 0 || iy >= s_in) continue;
          const double* row = src + (static_cast<std::size_t>(iz) * s_in + iy) * s_in;
          double* orow = dst + (static_cast<std::size_t>(z) * s_out + y) * s_out;
          for (int x = 0; x < s_out; ++x) {
            const int ix = x * stride + kx - 1;
            if (ix >= 0 && ix < s_in) orow[x] = row[ix];
          }
        }
      }
    }
  }
  return col;
}

void conv_forward(const ConvParams& c, const std::vector<double>& in, int s_in, int s_out,
                  std::vector<double>& out) {
  const auto vout = static_cast<Eigen::Index>(cube(s_out));
  const RowMat col = im2col(in, c.in_channels, c.stride, s_in, s_out);
  const Eigen::Map<const RowMat> w(c.weight.data(), c.out_channels, c.in_channels * 27);
  out.resize(static_cast<std::size_t>(c.out_channels) * static_cast<std::size_t>(vout));
  Eigen::Map<RowMat> o(out.data(), c.out_channels, vout);
  o.noalias() = w * col;
  for (int k = 0; k < c.out_channels; ++k) o.row(k).array() += c.bias[static_cast<std::size_t>(k)];
}

// Given dout (gradient w.r.t. pre-activation output), accumulate weight/bias
// gradients and, when din is non-null, the input gradient.
void conv_backward(const ConvParams& c, const std::vector<double>& in, int s_in, int s_out,
                   const std::vector<double>& dout, std::vector<double>* dw, std::vector<double>* db,
                   std::vector<double>* din) {
  const std::size_t vin = cube(s_in);
  const auto vout = static_cast<Eigen::Index>(cube(s_out));
  const Eigen::Map<const RowMat> g(dout.data(), c.out_channels, vout);
  const RowMat col = im2col(in, c.in_channels, c.stride, s_in, s_out);
  if (db)
    for (int k = 0; k < c.out_channels; ++k) (*db)[static_cast<std::size_t>(k)] += g.row(k).sum();
  if (dw) {
    Eigen::Map<RowMat> w(dw->data(), c.out_channels, c.in_channels * 27);
    w.noalias() += g * col.transpose();
  }
  if (!din) return;
  const Eigen::Map<const RowMat> w(c.weight.data(), c.out_channels, c.in_channels * 27);
  const RowMat dcol = w.transpose() * g;
  din->assign(static_cast<std::size_t>(c.in_channels) * vin, 0.0);
  for (int i = 0; i < c.in_channels; ++i) {
    double* dst = din->data() + i * vin;
    for (int k = 0; k < 27; ++k) {
      const int kz = k / 9, ky = (k / 3) % 3, kx = k % 3;
      const double* src = dcol.row(i * 27 + k).data();
      for (int z = 0; z < s_out; ++z) {
        const int iz = z * c.stride + kz - 1;
        if (iz < 0 || iz >= s_in) continue;
        for (int y = 0; y < s_out; ++y) {
          const int iy = y * c.stride + ky - 1;
          if (iy < 0 || iy >= s_in) continue;
          double* row = dst + (static_cast<std::size_t>(iz) * s_in + iy) * s_in;
          const double* grow = src + (static_cast<std::size_t>(z) * s_out + y) * s_out;
          for (int x = 0; x < s_out; ++x) {
            const int ix = x * c.stride + kx - 1;
            if (ix >= 0 && ix < s_in) row[ix] += grow[x];
          }
        }
      }
    }
  }
}

void dense_forward(const DenseParams& d, const std::vector<double>& in, std::vector<double>& out) {
  out.assign(static_cast<std::size_t>(d.out), 0.0);
  for (int o = 0; o < d.out; ++o) {
    double acc = d.bias[static_cast<std::size_t>(o)];
    for (int i = 0; i < d.in; ++i)
      acc += d.weight[static_cast<std::size_t>(o) * d.in + i] * in[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(o)] = acc;
  }
}

void dense_backward(const DenseParams& d, const std::vector<double>& in,
                    const std::vector<double>& dout, std::vector<double>* dw,
                    std::vector<double>* db, std::vector<double>& din) {
  din.assign(static_cast<std::size_t>(d.in), 0.0);
  for (int o = 0; o < d.out; ++o) {
    const double g = dout[static_cast<std::size_t>(o)];
    if (db) (*db)[static_cast<std::size_t>(o)] += g;
    for (int i = 0; i < d.in; ++i) {
      const std::size_t k = static_cast<std::size_t>(o) * d.in + i;
      if (dw) (*dw)[k] += g * in[static_cast<std::size_t>(i)];
      din[static_cast<std::size_t>(i)] += g * d.weight[k];
    }
  }
}

void check_patch(const ModelSpec& spec, const Patch& patch) {
  if (patch.size != spec.input_size || patch.pet.size() != cube(spec.input_size) ||
      patch.ct.size() != cube(spec.input_size)) {
    throw InvalidArgument("patch of size " + std::to_string(patch.size) +
                          " does not match model input size " + std::to_string(spec.input_size));
  }
}

Cache run_forward(const Model& m, const Patch& patch, int shift_layer,
                  std::span<const double> shift) {
  const ModelSpec& spec = m.spec;
  check_patch(spec, patch);
  const int nb = static_cast<int>(spec.blocks.size());
  Cache c;
  c.maps.resize(static_cast<std::size_t>(nb) + 1);
  c.sizes.resize(static_cast<std::size_t>(nb) + 1);
  const std::size_t v0 = patch.voxels();
  auto& x0 = c.maps[0];
  x0.resize(2 * v0);
  const auto& w = spec.input_window;
  for (std::size_t i = 0; i < v0; ++i) {
    x0[i] = (std::clamp(patch.pet[i], w[0][0], w[0][1]) - spec.input_shift[0]) * spec.input_scale[0];
    x0[v0 + i] = (std::clamp(patch.ct[i], w[1][0], w[1][1]) - spec.input_shift[1]) * spec.input_scale[1];
  }
  c.sizes[0] = spec.input_size;
  for (int b = 0; b < nb; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    c.sizes[bi + 1] = conv_out(c.sizes[bi], m.params.conv[bi].stride);
    conv_forward(m.params.conv[bi], c.maps[bi], c.sizes[bi], c.sizes[bi + 1], c.maps[bi + 1]);
    auto& a = c.maps[bi + 1];
    for (double& v : a) v = std::max(v, 0.0);
    if (b == shift_layer) {
      const std::size_t vol = cube(c.sizes[bi + 1]);
      for (std::size_t ch = 0; ch < shift.size(); ++ch)
        for (std::size_t p = 0; p < vol; ++p) a[ch * vol + p] += shift[ch];
    }
  }
  const auto& last = c.maps.back();
  const std::size_t vol = cube(c.sizes.back());
  const int width = spec.pooled_width();
  c.pooled.assign(static_cast<std::size_t>(width), 0.0);
  for (int ch = 0; ch < width; ++ch) {
    double acc = 0.0;
    for (std::size_t p = 0; p < vol; ++p) acc += last[ch * vol + p];
    c.pooled[static_cast<std::size_t>(ch)] = acc / static_cast<double>(vol);
  }
  const std::vector<double>* feat = &c.pooled;
  if (m.params.hidden) {
    dense_forward(*m.params.hidden, c.pooled, c.hidden);
    for (double& v : c.hidden) v = std::max(v, 0.0);
    if (shift_layer == nb)
      for (std::size_t k = 0; k < shift.size(); ++k) c.hidden[k] += shift[k];
    feat = &c.hidden;
  }
  dense_forward(m.params.head, *feat, c.logits);
  return c;
}

std::vector<double> pooled_of(const Cache& c, int b) {
  const auto& a = c.maps[static_cast<std::size_t>(b) + 1];
  const std::size_t vol = cube(c.sizes[static_cast<std::size_t>(b) + 1]);
  const std::size_t ch = a.size() / vol;
  std::vector<double> out(ch, 0.0);
  for (std::size_t k = 0; k < ch; ++k) {
    double acc = 0.0;
    for (std::size_t p = 0; p < vol; ++p) acc += a[k * vol + p];
    out[k] = acc / static_cast<double>(vol);
  }
  return out;
}

// Backpropagates dlogits. When `grads` is given, parameter gradients are
// accumulated. When `want_layer` >= 0 its channel-shift gradient is stored
// in `layer_grad`; without parameter gradients the sweep stops there.
void run_backward(const Model& m, const Cache& c, const std::vector<double>& dlogits,
                  Gradients* grads, int want_layer, std::vector<double>* layer_grad) {
  const int nb = static_cast<int>(m.spec.blocks.size());
  const bool has_hidden = m.params.hidden.has_value();
  const std::size_t head_slot = static_cast<std::size_t>(2 * nb + (has_hidden ? 2 : 0));
  auto slot = [&](std::size_t k) { return grads ? &grads->blocks[k] : nullptr; };

  std::vector<double> dfeat;
  dense_backward(m.params.head, has_hidden ? c.hidden : c.pooled, dlogits, slot(head_slot),
                 slot(head_slot + 1), dfeat);
  std::vector<double> dpooled;
  if (has_hidden) {
    if (want_layer == nb) {
      *layer_grad = dfeat;
      if (!grads) return;
    }
    for (std::size_t k = 0; k < dfeat.size(); ++k)
      if (!(c.hidden[k] > 0.0)) dfeat[k] = 0.0;
    dense_backward(*m.params.hidden, c.pooled, dfeat, slot(2 * static_cast<std::size_t>(nb)),
                   slot(2 * static_cast<std::size_t>(nb) + 1), dpooled);
  } else {
    dpooled = std::move(dfeat);
  }

  std::vector<double> dmap;
  {
    const std::size_t vol = cube(c.sizes.back());
    dmap.assign(dpooled.size() * vol, 0.0);
    for (std::size_t ch = 0; ch < dpooled.size(); ++ch)
      for (std::size_t p = 0; p < vol; ++p) dmap[ch * vol + p] = dpooled[ch] / static_cast<double>(vol);
  }
  for (int b = nb - 1; b >= 0; --b) {
    const auto bi = static_cast<std::size_t>(b);
    const auto& a = c.maps[bi + 1];
    const std::size_t vol = cube(c.sizes[bi + 1]);
    if (b == want_layer) {
      const std::size_t ch = a.size() / vol;
      layer_grad->assign(ch, 0.0);
      for (std::size_t k = 0; k < ch; ++k) {
        double acc = 0.0;
        for (std::size_t p = 0; p < vol; ++p) acc += dmap[k * vol + p];
        (*layer_grad)[k] = acc;
      }
      if (!grads) return;
    }
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!(a[i] > 0.0)) dmap[i] = 0.0;
    std::vector<double> din;
    const bool need_input = b > 0 && (grads || want_layer < b);
    conv_backward(m.params.conv[bi], c.maps[bi], c.sizes[bi], c.sizes[bi + 1], dmap,
                  slot(2 * bi), slot(2 * bi + 1), need_input ? &din : nullptr);
    if (!need_input) break;
    dmap = std::move(din);
  }
}

}  // namespace

ForwardResult forward(const Model& m, const Patch& patch, std::span<const int> layers) {
  for (int l : layers) (void)m.spec.layer_width(l);
  const Cache c = run_forward(m, patch, -1, {});
  ForwardResult r;
  r.logits = c.logits;
  const int nb = static_cast<int>(m.spec.blocks.size());
  for (int l : layers) {
    ActivationSnapshot s;
    s.layer = l;
    s.pooled = l == nb ? c.hidden : pooled_of(c, l);
    r.snapshots.push_back(std::move(s));
  }
  return r;
}

std::vector<double> grad_wrt_layer(const Model& m, const Patch& patch, int layer, int output) {
  (void)m.spec.layer_width(layer);
  if (output < 0 || output >= m.spec.outputs)
    throw InvalidArgument("output index " + std::to_string(output) + " out of range");
  const Cache c = run_forward(m, patch, -1, {});
  std::vector<double> dlogits(static_cast<std::size_t>(m.spec.outputs), 0.0);
  dlogits[static_cast<std::size_t>(output)] = 1.0;
  std::vector<double> g;
  run_backward(m, c, dlogits, nullptr, layer, &g);
  return g;
}

std::vector<double> forward_with_layer_shift(const Model& m, const Patch& patch, int layer,
                                             std::span<const double> shift) {
  if (static_cast<int>(shift.size()) != m.spec.layer_width(layer))
    throw InvalidArgument("shift length does not match layer width");
  return run_forward(m, patch, layer, shift).logits;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= z;
  return p;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double predict_posterior(const Model& m, const Patch& patch) {
  const auto logits = forward(m, patch).logits;
  if (m.spec.outputs == 1) return sigmoid(logits[0]);
  return softmax(logits)[1];
}

Gradients Gradients::zeros_like(const Params& p) {
  Gradients g;
  for (auto b : p.blocks()) g.blocks.emplace_back(b.size(), 0.0);
  return g;
}

void Gradients::scale(double s) {
  for (auto& b : blocks)
    for (double& x : b) x *= s;
}

double loss_and_gradients(const Model& m, const Patch& patch, int label, Gradients* acc) {
  if (label < 0 || label > 1)
    throw InvalidArgument("label must be 0 or 1");
  const Cache c = run_forward(m, patch, -1, {});
  std::vector<double> dlogits(c.logits.size());
  double loss;
  if (m.spec.outputs == 2) {
    const double mx = std::max(c.logits[0], c.logits[1]);
    const double lse = mx + std::log(std::exp(c.logits[0] - mx) + std::exp(c.logits[1] - mx));
    loss = lse - c.logits[static_cast<std::size_t>(label)];
    const auto p = softmax(c.logits);
    dlogits[0] = p[0] - (label == 0 ? 1.0 : 0.0);
    dlogits[1] = p[1] - (label == 1 ? 1.0 : 0.0);
  } else {
    const double z = c.logits[0];
    // softplus(z) - y z, computed stably
    loss = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - label * z;
    dlogits[0] = sigmoid(z) - label;
  }
  if (acc) run_backward(m, c, dlogits, acc, -1, nullptr);
  return loss;
}

}  // namespace volxai::nn
