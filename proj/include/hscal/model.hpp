#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hscal/numerics.hpp"
#include "hscal/sphere.hpp"

namespace hscal {

// Hashed character n-gram featurizer.
struct Featurizer {
  std::size_t ngram_min = 1;
  std::size_t ngram_max = 3;
  std::size_t num_buckets = 4096;  // power of two
  bool lowercase = true;           // ASCII letters only

  void validate() const;
  bool operator==(const Featurizer&) const = default;
};

// Sparse count vector: strictly increasing bucket ids with positive counts.
struct SparseFeatures {
  std::vector<std::uint32_t> index;
  std::vector<double> value;

  double total() const;
  bool operator==(const SparseFeatures&) const = default;
};

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

// N-grams are taken over Unicode code points; each n-gram's UTF-8 bytes are
// hashed with FNV-1a and masked to the bucket count. Bytes that are not
// valid UTF-8 count as single characters.
SparseFeatures featurize(std::string_view text, const Featurizer& f);

enum class Activation { identity, tanh };

std::string to_string(Activation a);
Activation activation_from_string(std::string_view s);

struct DenseLayer {
  Matrix weight;  // fan_in x fan_out
  std::vector<double> bias;
  Activation activation = Activation::tanh;
};

// Embedding bag followed by an MLP. The encoder output rows are E_i.
struct EncoderParams {
  Matrix embed;  // num_buckets x d_embed
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return embed.cols(); }
  std::size_t output_dim() const;
  void validate() const;
};

struct EncoderDims {
  std::size_t d_embed = 64;
  std::vector<std::size_t> hidden = {128};
  std::size_t output_dim = 32;
  Activation hidden_activation = Activation::tanh;
  Activation output_activation = Activation::tanh;
};

// Uniform in +-1/sqrt(fan_in) for every weight and bias; fan_in of the
// embedding table is the bucket count.
EncoderParams init_encoder(std::size_t num_buckets, const EncoderDims& dims, Rng& rng);

struct EncoderCache {
  Matrix embedded;
  std::vector<Matrix> outputs;  // post-activation output of each layer
};

// Sum of count-weighted embedding rows per sample, then the layer chain.
Matrix encode(std::span<const SparseFeatures> batch, const EncoderParams& p,
              EncoderCache* cache = nullptr);

struct EncoderGrads {
  Matrix embed;  // dense, only `touched_rows` are nonzero
  std::vector<std::uint32_t> touched_rows;
  std::vector<Matrix> weight;
  std::vector<std::vector<double>> bias;

  // Shapes buffers for `p` and zeroes them.
  void reset(const EncoderParams& p);
};

// Accumulates d(loss)/d(params) given d(loss)/dE into `grads` (which must be
// reset beforehand).
void encode_backward(std::span<const SparseFeatures> batch, const EncoderParams& p,
                     const EncoderCache& cache, const Matrix& grad_e, EncoderGrads& grads);

enum class ScaleMode { frobenius, fixed };

// Frozen label frame. Logits are scale * E X^T.
struct HypersphericalHead {
  FrameMatrix frame;
  ScaleMode scale_mode = ScaleMode::frobenius;
  double fixed_scale = 1.0;

  // Frobenius norm of the frame, or the fixed scalar.
  double scale() const;
};

struct LinearHead {
  Matrix weight;  // H x K
  std::vector<double> bias;
};

LinearHead init_linear_head(std::size_t h, std::size_t k, Rng& rng);

Matrix decode_hyperspherical(const Matrix& e, const HypersphericalHead& head);
Matrix decode_linear(const Matrix& e, const LinearHead& head);

using Head = std::variant<HypersphericalHead, LinearHead>;

struct HeadGrads {
  Matrix e;
  Matrix weight;  // linear head only
  std::vector<double> bias;
};

HeadGrads decode_backward(const Head& head, const Matrix& e, const Matrix& grad_logits);

std::size_t head_num_labels(const Head& head);
std::size_t head_input_dim(const Head& head);

struct Model {
  Featurizer featurizer;
  EncoderParams encoder;
  Head head;
  std::vector<std::string> labels;

  std::size_t num_labels() const { return head_num_labels(head); }
  bool is_hyperspherical() const { return std::holds_alternative<HypersphericalHead>(head); }
  void validate() const;
};

struct ForwardCache {
  EncoderCache encoder;
  Matrix e;
};

Matrix forward(const Model& m, std::span<const SparseFeatures> batch, ForwardCache* cache = nullptr);

struct ModelGrads {
  EncoderGrads encoder;
  Matrix head_weight;  // empty for the hyperspherical head
  std::vector<double> head_bias;

  void reset(const Model& m);
};

// Gradients of a loss with respect to every trainable parameter, given
// d(loss)/d(logits). The hyperspherical frame is frozen.
void backward(const Model& m, std::span<const SparseFeatures> batch, const ForwardCache& cache,
              const Matrix& grad_logits, ModelGrads& grads);

std::vector<SparseFeatures> featurize_all(std::span<const std::string> texts, const Featurizer& f);

}  // namespace hscal
