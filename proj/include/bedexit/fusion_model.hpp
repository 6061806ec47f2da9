#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bedexit/imaging.hpp"
#include "bedexit/rng.hpp"

namespace bedexit::model {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class FusionMode { early_concat, mid_concat, gated, cross };

/// Which images feed the model: both (dual stream / early concat) or a single modality.
enum class Modality { both, line, texture };

std::string fusion_mode_name(FusionMode m);
FusionMode parse_fusion_mode(const std::string& text);
std::string modality_name(Modality m);
Modality parse_modality(const std::string& text);

struct ModelConfig {
  int input_size = 64;
  int patch_size = 8;
  int embed_dim = 64;
  int num_blocks_per_stream = 2;
  int attn_heads = 4;
  int window_tokens = 4;  // attention window side, in tokens
  int mlp_ratio = 2;
  FusionMode fusion_mode = FusionMode::cross;
  int fusion_heads = 4;
  double dropout = 0.0;
  Modality modality = Modality::both;

  void validate() const;
  int grid() const { return input_size / patch_size; }
  int tokens() const { return grid() * grid(); }
  int window_side() const;
  int in_channels() const;
  int num_streams() const;
  int fused_dim() const;

  std::vector<std::pair<std::string, std::string>> to_kv() const;
  static ModelConfig from_kv(const std::vector<std::pair<std::string, std::string>>& kv);
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

/// Name and shape of every learnable tensor, in checkpoint order.
struct TensorSpec {
  std::string name;
  std::vector<int> dims;  // rank 1 (biases, norms) or rank 2
};

std::vector<TensorSpec> tensor_specs(const ModelConfig& config);

template <typename T>
struct ModelParams {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<std::vector<int>> dims;
  std::vector<Mat<T>> tensors;  // rank-1 tensors are stored as 1 x n

  std::size_t size() const { return tensors.size(); }
  std::size_t count() const;
  /// Index of a tensor by name; throws Error(checkpoint) when absent.
  std::size_t index_of(const std::string& name) const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.config = config;
    out.names = names;
    out.dims = dims;
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }
};

/// Zero-filled tensors with the layout of `config`.
template <typename T>
ModelParams<T> zero_params(const ModelConfig& config);

/// Truncated normal (std 0.02) for projection weights and positional offsets, zeros for
/// biases and norm offsets, ones for norm scales.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

/// Gradient buffers shaped like a parameter set.
template <typename T>
struct Gradients {
  std::vector<Mat<T>> tensors;

  static Gradients zeros_like(const ModelParams<T>& p);
  void set_zero();
  void add(const Gradients& other);
  void scale(T s);
  T norm() const;
};

struct Example {
  const imaging::ImagePair* images = nullptr;
  int label = 0;
};

struct LinearIdx {
  std::size_t w = 0, b = 0;
};
struct NormIdx {
  std::size_t g = 0, b = 0;
};
struct BlockIdx {
  NormIdx ln1;
  LinearIdx qkv, proj;
  NormIdx ln2;
  LinearIdx fc1, fc2;
};
struct StreamIdx {
  LinearIdx embed;
  std::size_t pos = 0;
  std::vector<BlockIdx> blocks;
  NormIdx norm;
};
struct CrossIdx {
  NormIdx ln_q, ln_kv;
  LinearIdx q, k, v, o;
};

/// Tensor indices of every layer, derived from the config alone.
struct ParamLayout {
  std::vector<StreamIdx> streams;
  bool has_gate = false;
  LinearIdx gate;
  bool has_cross = false;
  CrossIdx cross[2];  // [0]: line queries texture, [1]: texture queries line
  LinearIdx head1, head2;
};

ParamLayout make_layout(const ModelConfig& config);

template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct NormCache {
  Mat<T> xhat;
  ColVec<T> rstd;
};

template <typename T>
struct BlockCache {
  Mat<T> x_in, h1, qkv, attn, x_mid, h2, pre, act;
  NormCache<T> ln1, ln2;
  std::vector<Mat<T>> probs;  // per (window, head)
};

template <typename T>
struct StreamCache {
  Mat<T> patches;
  std::vector<BlockCache<T>> blocks;
  Mat<T> x_last, out;
  NormCache<T> norm;
};

template <typename T>
struct CrossCache {
  Mat<T> hq, hkv, q, k, v, attn, out;
  NormCache<T> ln_q, ln_kv;
  std::vector<Mat<T>> probs;  // per head
};

template <typename T>
struct ForwardCache {
  std::vector<StreamCache<T>> streams;
  std::vector<Mat<T>> pooled;
  Mat<T> gate_in, gate;
  CrossCache<T> cross[2];
  Mat<T> fused, dropout_mask, head_pre, head_act;
  T logit = 0;
};

/// The dual-stream windowed-attention classifier. Holds a reference to its parameters.
template <typename T>
class Network {
public:
  explicit Network(const ModelParams<T>& params);

  /// Rejects images whose size or channel count does not match the config.
  void check_input(const imaging::ImagePair& images) const;

  /// Logit for one image pair. With `cache` set, keeps what backward() needs; with
  /// `dropout_rng` set (training), applies dropout to the fused embedding.
  T forward(const imaging::ImagePair& images, ForwardCache<T>* cache = nullptr,
            CounterRng* dropout_rng = nullptr) const;

  /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logit).
  void backward(const ForwardCache<T>& cache, T dlogit, Gradients<T>& grads) const;

  /// Per-stream token sequences (tokens x embed_dim) after the final stream norm.
  std::vector<Mat<T>> encode(const imaging::ImagePair& images) const;

  /// Fused embedding for given stream outputs (two sequences for dual-stream modes).
  Mat<T> fuse(const std::vector<Mat<T>>& streams) const;

  /// Logit for a fused embedding.
  T head(const Mat<T>& fused) const;

private:
  Mat<T> stream_forward(std::size_t s, const imaging::ImagePair& images, StreamCache<T>* cache) const;
  Mat<T> fuse_forward(const std::vector<Mat<T>>& streams, ForwardCache<T>* cache, CounterRng* dropout_rng) const;
  T head_forward(const Mat<T>& fused, ForwardCache<T>* cache) const;

  const ModelParams<T>& p_;
  ParamLayout layout_;
};

/// Image patches (tokens x patch_size^2 * channels), tokens ordered window by window so
/// each attention window is a contiguous block of rows.
template <typename T>
Mat<T> patchify(const imaging::ImagePair& images, const ModelConfig& config, int stream);

double sigmoid(double z);

/// Binary cross-entropy of a logit in the stable form max(z,0) - z*y + log(1 + exp(-|z|)).
double bce_with_logit(double logit, int label);

template <typename T>
struct BatchResult {
  T loss = 0;  // mean over the batch
  std::size_t correct = 0;
};

/// Mean batch loss and its exact gradient (accumulated into `grads`, which is zeroed first).
/// Throws Error(numeric) naming the first tensor with a non-finite gradient.
template <typename T>
BatchResult<T> loss_and_gradients(const ModelParams<T>& params, std::span<const Example> batch, Gradients<T>& grads,
                                  CounterRng* dropout_rng = nullptr);

template <typename T>
T batch_loss(const ModelParams<T>& params, std::span<const Example> batch);

}  // namespace bedexit::model
