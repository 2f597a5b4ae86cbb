#include "hscal/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace hscal {

namespace {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Byte length of the UTF-8 sequence starting at s[i]; malformed bytes count as 1.
std::size_t utf8_char_len(std::string_view s, std::size_t i) {
  const auto c = static_cast<unsigned char>(s[i]);
  std::size_t len = 1;
  if (c >= 0xF0 && c <= 0xF4) len = 4;
  else if (c >= 0xE0) len = 3;
  else if (c >= 0xC2 && c <= 0xDF) len = 2;
  if (c >= 0xF5 || (c >= 0x80 && c < 0xC2)) return 1;
  if (i + len > s.size()) return 1;
  for (std::size_t k = 1; k < len; ++k) {
    if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return 1;
  }
  return len;
}

void apply_activation(std::span<double> v, Activation a) {
  if (a == Activation::tanh)
    for (double& x : v) x = std::tanh(x);
}

void check_batch_buckets(std::span<const SparseFeatures> batch, std::size_t buckets) {
  for (const auto& s : batch) {
    if (s.index.size() != s.value.size()) throw ShapeError("sparse features: index/value length mismatch");
    for (auto b : s.index)
      if (b >= buckets) throw ShapeError("sparse features: bucket out of range");
  }
}

}  // namespace

void Featurizer::validate() const {
  if (ngram_min < 1 || ngram_min > ngram_max || ngram_max > 5) {
    throw ConfigError("featurizer: need 1 <= ngram_min <= ngram_max <= 5");
  }
  if (num_buckets < 256 || !is_power_of_two(num_buckets)) {
    throw ConfigError("featurizer: num_buckets must be a power of two >= 256");
  }
}

double SparseFeatures::total() const {
  double t = 0.0;
  for (double v : value) t += v;
  return t;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

SparseFeatures featurize(std::string_view text, const Featurizer& f) {
  f.validate();
  std::string lowered;
  if (f.lowercase) {
    lowered.assign(text);
    for (char& c : lowered)
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    text = lowered;
  }
  // Code-point start offsets plus the end sentinel.
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < text.size(); i += utf8_char_len(text, i)) starts.push_back(i);
  const std::size_t nchars = starts.size();
  starts.push_back(text.size());

  const std::uint64_t mask = f.num_buckets - 1;
  std::map<std::uint32_t, double> counts;
  for (std::size_t n = f.ngram_min; n <= f.ngram_max; ++n) {
    if (n > nchars) break;
    for (std::size_t i = 0; i + n <= nchars; ++i) {
      const auto gram = text.substr(starts[i], starts[i + n] - starts[i]);
      counts[static_cast<std::uint32_t>(fnv1a64(gram) & mask)] += 1.0;
    }
  }
  SparseFeatures out;
  out.index.reserve(counts.size());
  out.value.reserve(counts.size());
  for (const auto& [b, c] : counts) {
    out.index.push_back(b);
    out.value.push_back(c);
  }
  return out;
}

std::vector<SparseFeatures> featurize_all(std::span<const std::string> texts, const Featurizer& f) {
  std::vector<SparseFeatures> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(featurize(t, f));
  return out;
}

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

Activation activation_from_string(std::string_view s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

std::size_t EncoderParams::output_dim() const {
  return layers.empty() ? embed.cols() : layers.back().weight.cols();
}

void EncoderParams::validate() const {
  std::size_t width = embed.cols();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.weight.rows() != width || layer.bias.size() != layer.weight.cols()) {
      throw ShapeError("encoder layer " + std::to_string(l) + " does not chain");
    }
    width = layer.weight.cols();
  }
}

EncoderParams init_encoder(std::size_t num_buckets, const EncoderDims& dims, Rng& rng) {
  auto fill = [&rng](std::span<double> v, std::size_t fan_in) {
    const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : v) x = rng.uniform(-r, r);
  };
  EncoderParams p;
  p.embed = Matrix(num_buckets, dims.d_embed);
  fill(p.embed.data(), num_buckets);
  std::vector<std::size_t> widths = {dims.d_embed};
  widths.insert(widths.end(), dims.hidden.begin(), dims.hidden.end());
  widths.push_back(dims.output_dim);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    DenseLayer layer;
    layer.weight = Matrix(widths[l], widths[l + 1]);
    layer.bias.assign(widths[l + 1], 0.0);
    fill(layer.weight.data(), widths[l]);
    fill(layer.bias, widths[l]);
    layer.activation = l + 2 == widths.size() ? dims.output_activation : dims.hidden_activation;
    p.layers.push_back(std::move(layer));
  }
  return p;
}

Matrix encode(std::span<const SparseFeatures> batch, const EncoderParams& p, EncoderCache* cache) {
  p.validate();
  check_batch_buckets(batch, p.embed.rows());
  const std::size_t n = batch.size();
  Matrix x(n, p.embed.cols());
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = x.row(i);
    const auto& s = batch[i];
    for (std::size_t t = 0; t < s.index.size(); ++t) {
      auto er = p.embed.row(s.index[t]);
      const double c = s.value[t];
      for (std::size_t d = 0; d < xi.size(); ++d) xi[d] += c * er[d];
    }
  }
  if (cache) {
    cache->embedded = x;
    cache->outputs.clear();
  }
  for (const auto& layer : p.layers) {
    Matrix y = matmul(x, layer.weight);
    for (std::size_t i = 0; i < n; ++i) {
      auto yi = y.row(i);
      for (std::size_t d = 0; d < yi.size(); ++d) yi[d] += layer.bias[d];
      apply_activation(yi, layer.activation);
    }
    if (cache) cache->outputs.push_back(y);
    x = std::move(y);
  }
  return x;
}

void EncoderGrads::reset(const EncoderParams& p) {
  if (embed.rows() != p.embed.rows() || embed.cols() != p.embed.cols()) {
    embed = Matrix(p.embed.rows(), p.embed.cols());
  } else {
    for (auto r : touched_rows)
      for (double& v : embed.row(r)) v = 0.0;
  }
  touched_rows.clear();
  weight.resize(p.layers.size());
  bias.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    weight[l] = Matrix(p.layers[l].weight.rows(), p.layers[l].weight.cols());
    bias[l].assign(p.layers[l].bias.size(), 0.0);
  }
}

void encode_backward(std::span<const SparseFeatures> batch, const EncoderParams& p,
                     const EncoderCache& cache, const Matrix& grad_e, EncoderGrads& grads) {
  const std::size_t n = batch.size();
  if (grad_e.rows() != n || grad_e.cols() != p.output_dim()) throw ShapeError("encode_backward: grad shape");
  if (cache.outputs.size() != p.layers.size()) throw ShapeError("encode_backward: stale cache");
  Matrix delta = grad_e;
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const auto& layer = p.layers[l];
    const Matrix& out = cache.outputs[l];
    if (layer.activation == Activation::tanh) {
      auto dd = delta.data();
      auto od = out.data();
      for (std::size_t t = 0; t < dd.size(); ++t) dd[t] *= 1.0 - od[t] * od[t];
    }
    const Matrix& input = l == 0 ? cache.embedded : cache.outputs[l - 1];
    // dW += input^T delta, db += column sums of delta.
    Matrix& gw = grads.weight[l];
    for (std::size_t i = 0; i < n; ++i) {
      auto in_row = input.row(i);
      auto d_row = delta.row(i);
      for (std::size_t a = 0; a < in_row.size(); ++a) {
        const double v = in_row[a];
        if (v == 0.0) continue;
        auto gw_row = gw.row(a);
        for (std::size_t b = 0; b < d_row.size(); ++b) gw_row[b] += v * d_row[b];
      }
      for (std::size_t b = 0; b < d_row.size(); ++b) grads.bias[l][b] += d_row[b];
    }
    delta = matmul_transposed(delta, layer.weight);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = batch[i];
    auto d_row = delta.row(i);
    for (std::size_t t = 0; t < s.index.size(); ++t) {
      auto g = grads.embed.row(s.index[t]);
      const double c = s.value[t];
      for (std::size_t d = 0; d < g.size(); ++d) g[d] += c * d_row[d];
      grads.touched_rows.push_back(s.index[t]);
    }
  }
  std::sort(grads.touched_rows.begin(), grads.touched_rows.end());
  grads.touched_rows.erase(std::unique(grads.touched_rows.begin(), grads.touched_rows.end()),
                           grads.touched_rows.end());
}

double HypersphericalHead::scale() const {
  return scale_mode == ScaleMode::frobenius ? frobenius_norm(frame.x()) : fixed_scale;
}

LinearHead init_linear_head(std::size_t h, std::size_t k, Rng& rng) {
  LinearHead head{Matrix(h, k), std::vector<double>(k, 0.0)};
  const double r = 1.0 / std::sqrt(static_cast<double>(h));
  for (double& v : head.weight.data()) v = rng.uniform(-r, r);
  for (double& v : head.bias) v = rng.uniform(-r, r);
  return head;
}

Matrix decode_hyperspherical(const Matrix& e, const HypersphericalHead& head) {
  if (e.cols() != head.frame.h()) {
    throw ShapeError("decode_hyperspherical: encoded dim " + std::to_string(e.cols()) + " != frame dim " +
                     std::to_string(head.frame.h()));
  }
  Matrix logits = matmul_transposed(e, head.frame.x());
  const double s = head.scale();
  for (double& v : logits.data()) v *= s;
  return logits;
}

Matrix decode_linear(const Matrix& e, const LinearHead& head) {
  if (head.bias.size() != head.weight.cols()) throw ShapeError("decode_linear: bias length");
  Matrix logits = matmul(e, head.weight);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] += head.bias[k];
  }
  return logits;
}

std::size_t head_num_labels(const Head& head) {
  return std::visit(
      [](const auto& h) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(h)>, HypersphericalHead>) return h.frame.k();
        else return h.weight.cols();
      },
      head);
}

std::size_t head_input_dim(const Head& head) {
  return std::visit(
      [](const auto& h) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(h)>, HypersphericalHead>) return h.frame.h();
        else return h.weight.rows();
      },
      head);
}

void Model::validate() const {
  featurizer.validate();
  encoder.validate();
  if (encoder.embed.rows() != featurizer.num_buckets) {
    throw ConfigError("embedding rows " + std::to_string(encoder.embed.rows()) + " != bucket count " +
                      std::to_string(featurizer.num_buckets));
  }
  if (head_input_dim(head) != encoder.output_dim()) {
    throw ConfigError("head input dim " + std::to_string(head_input_dim(head)) + " != encoder output dim " +
                      std::to_string(encoder.output_dim()));
  }
  if (const auto* lin = std::get_if<LinearHead>(&head); lin && lin->bias.size() != lin->weight.cols()) {
    throw ConfigError("linear head bias length mismatch");
  }
  if (!labels.empty() && labels.size() != num_labels()) {
    throw ConfigError("label vocabulary size " + std::to_string(labels.size()) + " != head label count " +
                      std::to_string(num_labels()));
  }
}

Matrix forward(const Model& m, std::span<const SparseFeatures> batch, ForwardCache* cache) {
  Matrix e = encode(batch, m.encoder, cache ? &cache->encoder : nullptr);
  Matrix logits = std::visit(
      [&e](const auto& h) {
        if constexpr (std::is_same_v<std::decay_t<decltype(h)>, HypersphericalHead>)
          return decode_hyperspherical(e, h);
        else
          return decode_linear(e, h);
      },
      m.head);
  if (cache) cache->e = std::move(e);
  return logits;
}

void ModelGrads::reset(const Model& m) {
  encoder.reset(m.encoder);
  if (const auto* lin = std::get_if<LinearHead>(&m.head)) {
    head_weight = Matrix(lin->weight.rows(), lin->weight.cols());
    head_bias.assign(lin->bias.size(), 0.0);
  } else {
    head_weight = Matrix();
    head_bias.clear();
  }
}

HeadGrads decode_backward(const Head& head, const Matrix& e, const Matrix& grad_logits) {
  if (grad_logits.rows() != e.rows() || grad_logits.cols() != head_num_labels(head)) {
    throw ShapeError("decode_backward: logit gradient shape");
  }
  HeadGrads g;
  if (const auto* hs = std::get_if<HypersphericalHead>(&head)) {
    g.e = matmul(grad_logits, hs->frame.x());
    const double s = hs->scale();
    for (double& v : g.e.data()) v *= s;
    return g;
  }
  const auto& lin = std::get<LinearHead>(head);
  g.weight = matmul(transpose(e), grad_logits);
  g.bias.assign(lin.bias.size(), 0.0);
  for (std::size_t i = 0; i < grad_logits.rows(); ++i) {
    auto r = grad_logits.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) g.bias[k] += r[k];
  }
  g.e = matmul_transposed(grad_logits, lin.weight);
  return g;
}

void backward(const Model& m, std::span<const SparseFeatures> batch, const ForwardCache& cache,
              const Matrix& grad_logits, ModelGrads& grads) {
  HeadGrads hg = decode_backward(m.head, cache.e, grad_logits);
  if (m.is_hyperspherical()) {
    encode_backward(batch, m.encoder, cache.encoder, hg.e, grads.encoder);
    return;
  }
  grads.head_weight = std::move(hg.weight);
  grads.head_bias = std::move(hg.bias);
  encode_backward(batch, m.encoder, cache.encoder, hg.e, grads.encoder);
}

}  // namespace hscal
