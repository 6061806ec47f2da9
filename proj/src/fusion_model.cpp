#include "bedexit/fusion_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bedexit/error.hpp"

namespace bedexit::model {

std::string fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::early_concat: return "early_concat";
    case FusionMode::mid_concat: return "mid_concat";
    case FusionMode::gated: return "gated";
    case FusionMode::cross: return "cross";
  }
  return "cross";
}

FusionMode parse_fusion_mode(const std::string& text) {
  if (text == "early_concat") return FusionMode::early_concat;
  if (text == "mid_concat") return FusionMode::mid_concat;
  if (text == "gated") return FusionMode::gated;
  if (text == "cross") return FusionMode::cross;
  fail(ErrorCode::config, "unknown fusion mode '" + text + "' (expected early_concat, mid_concat, gated or cross)");
}

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::both: return "both";
    case Modality::line: return "line";
    case Modality::texture: return "texture";
  }
  return "both";
}

Modality parse_modality(const std::string& text) {
  if (text == "both") return Modality::both;
  if (text == "line") return Modality::line;
  if (text == "texture") return Modality::texture;
  fail(ErrorCode::config, "unknown modality '" + text + "' (expected both, line or texture)");
}

int ModelConfig::window_side() const { return std::min(window_tokens, grid()); }

int ModelConfig::in_channels() const {
  return modality == Modality::both && fusion_mode == FusionMode::early_concat ? 6 : 3;
}

int ModelConfig::num_streams() const {
  return modality == Modality::both && fusion_mode != FusionMode::early_concat ? 2 : 1;
}

int ModelConfig::fused_dim() const {
  if (num_streams() == 1) return embed_dim;
  return fusion_mode == FusionMode::gated ? embed_dim : 2 * embed_dim;
}

void ModelConfig::validate() const {
  require(input_size > 0 && patch_size > 0 && input_size % patch_size == 0, ErrorCode::config,
          "model.input_size must be a positive multiple of model.patch_size");
  require(embed_dim > 0 && attn_heads > 0 && embed_dim % attn_heads == 0, ErrorCode::config,
          "model.embed_dim must be divisible by model.attn_heads");
  require(fusion_heads > 0 && embed_dim % fusion_heads == 0, ErrorCode::config,
          "model.embed_dim must be divisible by model.fusion_heads");
  require(num_blocks_per_stream >= 0, ErrorCode::config, "model.num_blocks_per_stream must be >= 0");
  require(window_tokens > 0 && grid() % window_side() == 0, ErrorCode::config,
          "model.window_tokens must divide the token grid");
  require(mlp_ratio > 0, ErrorCode::config, "model.mlp_ratio must be positive");
  require(dropout >= 0.0 && dropout < 1.0, ErrorCode::config, "model.dropout must be in [0, 1)");
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_kv() const {
  char drop[32];
  std::snprintf(drop, sizeof(drop), "%.17g", dropout);
  return {{"input_size", std::to_string(input_size)},
          {"patch_size", std::to_string(patch_size)},
          {"embed_dim", std::to_string(embed_dim)},
          {"num_blocks_per_stream", std::to_string(num_blocks_per_stream)},
          {"attn_heads", std::to_string(attn_heads)},
          {"window_tokens", std::to_string(window_tokens)},
          {"mlp_ratio", std::to_string(mlp_ratio)},
          {"fusion_mode", fusion_mode_name(fusion_mode)},
          {"fusion_heads", std::to_string(fusion_heads)},
          {"dropout", drop},
          {"modality", modality_name(modality)}};
}

ModelConfig ModelConfig::from_kv(const std::vector<std::pair<std::string, std::string>>& kv) {
  ModelConfig c;
  auto to_int = [](const std::string& k, const std::string& v) {
    try {
      std::size_t used = 0;
      const int x = std::stoi(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      fail(ErrorCode::checkpoint, "checkpoint config: bad integer for " + k + ": '" + v + "'");
    }
  };
  for (const auto& [k, v] : kv) {
    if (k == "input_size") c.input_size = to_int(k, v);
    else if (k == "patch_size") c.patch_size = to_int(k, v);
    else if (k == "embed_dim") c.embed_dim = to_int(k, v);
    else if (k == "num_blocks_per_stream") c.num_blocks_per_stream = to_int(k, v);
    else if (k == "attn_heads") c.attn_heads = to_int(k, v);
    else if (k == "window_tokens") c.window_tokens = to_int(k, v);
    else if (k == "mlp_ratio") c.mlp_ratio = to_int(k, v);
    else if (k == "fusion_mode") c.fusion_mode = parse_fusion_mode(v);
    else if (k == "fusion_heads") c.fusion_heads = to_int(k, v);
    else if (k == "dropout") c.dropout = std::stod(v);
    else if (k == "modality") c.modality = parse_modality(v);
    else fail(ErrorCode::checkpoint, "checkpoint config: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) { return a.to_kv() == b.to_kv(); }

namespace {

struct LayoutBuilder {
  std::vector<TensorSpec> specs;

  std::size_t add(std::string name, std::vector<int> dims) {
    specs.push_back({std::move(name), std::move(dims)});
    return specs.size() - 1;
  }
  LinearIdx linear(const std::string& name, int in, int out) {
    LinearIdx l;
    l.w = add(name + ".weight", {in, out});
    l.b = add(name + ".bias", {out});
    return l;
  }
  NormIdx norm(const std::string& name, int dim) {
    NormIdx n;
    n.g = add(name + ".scale", {dim});
    n.b = add(name + ".offset", {dim});
    return n;
  }
};

ParamLayout build_layout(const ModelConfig& c, LayoutBuilder& b) {
  c.validate();
  ParamLayout L;
  const int d = c.embed_dim;
  const int patch_dim = c.patch_size * c.patch_size * c.in_channels();
  for (int s = 0; s < c.num_streams(); ++s) {
    const std::string prefix = "stream" + std::to_string(s);
    StreamIdx st;
    st.embed = b.linear(prefix + ".embed", patch_dim, d);
    st.pos = b.add(prefix + ".pos", {c.tokens(), d});
    for (int k = 0; k < c.num_blocks_per_stream; ++k) {
      const std::string bp = prefix + ".block" + std::to_string(k);
      BlockIdx blk;
      blk.ln1 = b.norm(bp + ".ln1", d);
      blk.qkv = b.linear(bp + ".qkv", d, 3 * d);
      blk.proj = b.linear(bp + ".proj", d, d);
      blk.ln2 = b.norm(bp + ".ln2", d);
      blk.fc1 = b.linear(bp + ".fc1", d, c.mlp_ratio * d);
      blk.fc2 = b.linear(bp + ".fc2", c.mlp_ratio * d, d);
      st.blocks.push_back(blk);
    }
    st.norm = b.norm(prefix + ".norm", d);
    L.streams.push_back(std::move(st));
  }
  if (c.num_streams() == 2 && c.fusion_mode == FusionMode::gated) {
    L.has_gate = true;
    L.gate = b.linear("fusion.gate", 2 * d, d);
  }
  if (c.num_streams() == 2 && c.fusion_mode == FusionMode::cross) {
    L.has_cross = true;
    const char* names[2] = {"fusion.line_to_texture", "fusion.texture_to_line"};
    for (int k = 0; k < 2; ++k) {
      CrossIdx x;
      x.ln_q = b.norm(std::string(names[k]) + ".ln_q", d);
      x.ln_kv = b.norm(std::string(names[k]) + ".ln_kv", d);
      x.q = b.linear(std::string(names[k]) + ".q", d, d);
      x.k = b.linear(std::string(names[k]) + ".k", d, d);
      x.v = b.linear(std::string(names[k]) + ".v", d, d);
      x.o = b.linear(std::string(names[k]) + ".o", d, d);
      L.cross[k] = x;
    }
  }
  L.head1 = b.linear("head.fc1", c.fused_dim(), d);
  L.head2 = b.linear("head.fc2", d, 1);
  return L;
}

bool is_norm_scale(const std::string& name) { return name.size() > 6 && name.ends_with(".scale"); }
bool is_bias_like(const std::string& name) { return name.ends_with(".bias") || name.ends_with(".offset"); }

}  // namespace

ParamLayout make_layout(const ModelConfig& config) {
  LayoutBuilder b;
  return build_layout(config, b);
}

std::vector<TensorSpec> tensor_specs(const ModelConfig& config) {
  LayoutBuilder b;
  build_layout(config, b);
  return b.specs;
}

template <typename T>
std::size_t ModelParams<T>::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

template <typename T>
std::size_t ModelParams<T>::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  fail(ErrorCode::checkpoint, "no tensor named '" + name + "'");
}

template <typename T>
ModelParams<T> zero_params(const ModelConfig& config) {
  ModelParams<T> p;
  p.config = config;
  for (const auto& spec : tensor_specs(config)) {
    p.names.push_back(spec.name);
    p.dims.push_back(spec.dims);
    const int rows = spec.dims.size() == 2 ? spec.dims[0] : 1;
    const int cols = spec.dims.back();
    p.tensors.push_back(Mat<T>::Zero(rows, cols));
  }
  return p;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams<T> p = zero_params<T>(config);
  CounterRng rng(derive_seed(seed, "init"));
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& t = p.tensors[i];
    if (is_norm_scale(p.names[i])) {
      t.setOnes();
    } else if (!is_bias_like(p.names[i])) {
      for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = static_cast<T>(rng.truncated_normal(0.02));
    }
  }
  return p;
}

template <typename T>
Gradients<T> Gradients<T>::zeros_like(const ModelParams<T>& p) {
  Gradients<T> g;
  for (const auto& t : p.tensors) g.tensors.push_back(Mat<T>::Zero(t.rows(), t.cols()));
  return g;
}

template <typename T>
void Gradients<T>::set_zero() {
  for (auto& t : tensors) t.setZero();
}

template <typename T>
void Gradients<T>::add(const Gradients& other) {
  for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i] += other.tensors[i];
}

template <typename T>
void Gradients<T>::scale(T s) {
  for (auto& t : tensors) t *= s;
}

template <typename T>
T Gradients<T>::norm() const {
  T sq = 0;
  for (const auto& t : tensors) sq += t.squaredNorm();
  return std::sqrt(sq);
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double bce_with_logit(double logit, int label) {
  return std::max(logit, 0.0) - logit * static_cast<double>(label) + std::log1p(std::exp(-std::abs(logit)));
}

namespace {

template <typename T>
using Ref = Eigen::Ref<Mat<T>>;
template <typename T>
using CRef = Eigen::Ref<const Mat<T>>;

template <typename T>
T sigmoid_t(T z) {
  if (z >= 0) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

template <typename T>
void linear(const CRef<T>& x, const Mat<T>& w, const Mat<T>& b, Mat<T>& y) {
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
}

// Accumulates dW, db; returns dX when wanted.
template <typename T>
void linear_backward(const CRef<T>& x, const Mat<T>& w, const CRef<T>& dy, Mat<T>& dw, Mat<T>& db, Mat<T>* dx) {
  dw.noalias() += x.transpose() * dy;
  db += dy.colwise().sum();
  if (dx) dx->noalias() = dy * w.transpose();
}

constexpr double kNormEps = 1e-5;

template <typename T>
void layer_norm(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, Mat<T>& y, NormCache<T>* cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat<T> xhat(n, d);
  ColVec<T> rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mu = x.row(i).mean();
    const T var = (x.row(i).array() - mu).square().mean();
    rstd(i) = T(1) / std::sqrt(var + T(kNormEps));
    xhat.row(i) = (x.row(i).array() - mu) * rstd(i);
  }
  y = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
}

template <typename T>
void layer_norm_backward(const NormCache<T>& c, const Mat<T>& g, const Mat<T>& dy, Mat<T>& dg, Mat<T>& db,
                         Mat<T>& dx_accum) {
  dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  const Mat<T> dxhat = (dy.array().rowwise() * g.row(0).array()).matrix();
  const T inv_d = T(1) / static_cast<T>(dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T mean_dxhat = dxhat.row(i).sum() * inv_d;
    const T mean_dxhat_xhat = dxhat.row(i).dot(c.xhat.row(i)) * inv_d;
    dx_accum.row(i).array() +=
        c.rstd(i) * (dxhat.row(i).array() - mean_dxhat - c.xhat.row(i).array() * mean_dxhat_xhat);
  }
}

// tanh approximation of GELU
template <typename T>
T gelu(T x) {
  const T k = T(0.7978845608028654);
  return T(0.5) * x * (T(1) + std::tanh(k * (x + T(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
  const T k = T(0.7978845608028654);
  const T t = std::tanh(k * (x + T(0.044715) * x * x * x));
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * k * (T(1) + T(3) * T(0.044715) * x * x);
}

// Multi-head attention of queries q (n x D) over keys/values (m x D); writes out (n x D).
template <typename T>
void attention(const CRef<T>& q, const CRef<T>& k, const CRef<T>& v, int heads, Ref<T> out,
               std::vector<Mat<T>>* probs) {
  const Eigen::Index d = q.cols() / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  for (int h = 0; h < heads; ++h) {
    Mat<T> s = (q.middleCols(h * d, d) * k.middleCols(h * d, d).transpose()) * scale;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const T mx = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - mx).exp();
      s.row(i) /= s.row(i).sum();
    }
    out.middleCols(h * d, d).noalias() = s * v.middleCols(h * d, d);
    if (probs) probs->push_back(std::move(s));
  }
}

// Gradients of attention(); `probs` points at this call's per-head probabilities.
template <typename T>
void attention_backward(const CRef<T>& q, const CRef<T>& k, const CRef<T>& v, const Mat<T>* probs, int heads,
                        const CRef<T>& dout, Ref<T> dq, Ref<T> dk, Ref<T> dv) {
  const Eigen::Index d = q.cols() / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  for (int h = 0; h < heads; ++h) {
    const Mat<T>& a = probs[h];
    const auto dout_h = dout.middleCols(h * d, d);
    dv.middleCols(h * d, d).noalias() = a.transpose() * dout_h;
    Mat<T> da = dout_h * v.middleCols(h * d, d).transpose();
    const ColVec<T> rowdot = (da.array() * a.array()).rowwise().sum();
    Mat<T> ds = (a.array() * (da.array().colwise() - rowdot.array())).matrix() * scale;
    dq.middleCols(h * d, d).noalias() = ds * k.middleCols(h * d, d);
    dk.middleCols(h * d, d).noalias() = ds.transpose() * q.middleCols(h * d, d);
  }
}

}  // namespace

template <typename T>
Mat<T> patchify(const imaging::ImagePair& images, const ModelConfig& c, int stream) {
  const int g = c.grid(), ws = c.window_side(), p = c.patch_size;
  const int per_side = g / ws;
  const int channels = c.in_channels();
  std::vector<const imaging::ImageTensor*> sources;
  if (c.modality == Modality::line) {
    sources = {&images.line};
  } else if (c.modality == Modality::texture) {
    sources = {&images.texture};
  } else if (c.fusion_mode == FusionMode::early_concat) {
    sources = {&images.line, &images.texture};
  } else {
    sources = {stream == 0 ? &images.line : &images.texture};
  }
  Mat<T> out(c.tokens(), p * p * channels);
  for (int t = 0; t < c.tokens(); ++t) {
    const int w = t / (ws * ws), r = t % (ws * ws);
    const int py = (w / per_side) * ws + r / ws;
    const int px = (w % per_side) * ws + r % ws;
    int col = 0;
    for (int dy = 0; dy < p; ++dy)
      for (int dx = 0; dx < p; ++dx)
        for (const auto* img : sources)
          for (int ch = 0; ch < 3; ++ch) out(t, col++) = static_cast<T>(img->at(py * p + dy, px * p + dx, ch));
  }
  return out;
}

template <typename T>
Network<T>::Network(const ModelParams<T>& params) : p_(params), layout_(make_layout(params.config)) {
  require(params.size() == tensor_specs(params.config).size(), ErrorCode::checkpoint,
          "parameter set does not match its config");
}

template <typename T>
void Network<T>::check_input(const imaging::ImagePair& images) const {
  const auto& c = p_.config;
  auto check = [&](const imaging::ImageTensor& img, const char* which) {
    require(img.height == c.input_size && img.width == c.input_size && img.channels == 3 &&
                img.values.size() == static_cast<std::size_t>(c.input_size) * c.input_size * 3,
            ErrorCode::invalid_argument,
            std::string("model input: ") + which + " image must be " + std::to_string(c.input_size) + "x" +
                std::to_string(c.input_size) + "x3");
  };
  if (c.modality != Modality::texture) check(images.line, "line");
  if (c.modality != Modality::line) check(images.texture, "texture");
}

template <typename T>
Mat<T> Network<T>::stream_forward(std::size_t s, const imaging::ImagePair& images, StreamCache<T>* cache) const {
  const auto& c = p_.config;
  const auto& P = p_.tensors;
  const StreamIdx& st = layout_.streams[s];
  const int d = c.embed_dim;
  const int win = c.window_side() * c.window_side();
  const int n_windows = c.tokens() / win;

  Mat<T> patches = patchify<T>(images, c, static_cast<int>(s));
  Mat<T> x;
  linear<T>(patches, P[st.embed.w], P[st.embed.b], x);
  x += P[st.pos];
  if (cache) {
    cache->patches = std::move(patches);
    cache->blocks.assign(st.blocks.size(), {});
  }

  for (std::size_t k = 0; k < st.blocks.size(); ++k) {
    const BlockIdx& b = st.blocks[k];
    BlockCache<T> local;
    BlockCache<T>& bc = cache ? cache->blocks[k] : local;
    bc.probs.clear();
    bc.x_in = x;
    layer_norm<T>(x, P[b.ln1.g], P[b.ln1.b], bc.h1, &bc.ln1);
    linear<T>(bc.h1, P[b.qkv.w], P[b.qkv.b], bc.qkv);
    bc.attn.resize(c.tokens(), d);
    for (int w = 0; w < n_windows; ++w) {
      const auto rows = bc.qkv.middleRows(w * win, win);
      attention<T>(rows.leftCols(d), rows.middleCols(d, d), rows.rightCols(d), c.attn_heads,
                   bc.attn.middleRows(w * win, win), cache ? &bc.probs : nullptr);
    }
    Mat<T> proj;
    linear<T>(bc.attn, P[b.proj.w], P[b.proj.b], proj);
    bc.x_mid = x + proj;
    layer_norm<T>(bc.x_mid, P[b.ln2.g], P[b.ln2.b], bc.h2, &bc.ln2);
    linear<T>(bc.h2, P[b.fc1.w], P[b.fc1.b], bc.pre);
    bc.act = bc.pre.unaryExpr([](T v) { return gelu(v); });
    Mat<T> mlp;
    linear<T>(bc.act, P[b.fc2.w], P[b.fc2.b], mlp);
    x = bc.x_mid + mlp;
  }
  Mat<T> out;
  if (cache) {
    cache->x_last = x;
    layer_norm<T>(x, P[st.norm.g], P[st.norm.b], out, &cache->norm);
    cache->out = out;
  } else {
    layer_norm<T>(x, P[st.norm.g], P[st.norm.b], out, nullptr);
  }
  return out;
}

template <typename T>
Mat<T> Network<T>::fuse_forward(const std::vector<Mat<T>>& streams, ForwardCache<T>* cache,
                                CounterRng* dropout_rng) const {
  const auto& c = p_.config;
  const auto& P = p_.tensors;
  const int d = c.embed_dim;
  Mat<T> fused(1, c.fused_dim());

  if (layout_.has_cross) {
    for (int dir = 0; dir < 2; ++dir) {
      const CrossIdx& x = layout_.cross[dir];
      const Mat<T>& a = streams[static_cast<std::size_t>(dir)];
      const Mat<T>& b = streams[static_cast<std::size_t>(1 - dir)];
      CrossCache<T> local;
      CrossCache<T>& cc = cache ? cache->cross[dir] : local;
      cc.probs.clear();
      layer_norm<T>(a, P[x.ln_q.g], P[x.ln_q.b], cc.hq, &cc.ln_q);
      layer_norm<T>(b, P[x.ln_kv.g], P[x.ln_kv.b], cc.hkv, &cc.ln_kv);
      linear<T>(cc.hq, P[x.q.w], P[x.q.b], cc.q);
      linear<T>(cc.hkv, P[x.k.w], P[x.k.b], cc.k);
      linear<T>(cc.hkv, P[x.v.w], P[x.v.b], cc.v);
      cc.attn.resize(a.rows(), d);
      attention<T>(cc.q, cc.k, cc.v, c.fusion_heads, cc.attn, &cc.probs);
      Mat<T> o;
      linear<T>(cc.attn, P[x.o.w], P[x.o.b], o);
      cc.out = a + o;
      fused.middleCols(dir * d, d) = cc.out.colwise().mean();
    }
  } else {
    std::vector<Mat<T>> pooled;
    for (const auto& s : streams) pooled.push_back(s.colwise().mean());
    if (streams.size() == 1) {
      fused = pooled[0];
    } else if (layout_.has_gate) {
      Mat<T> gate_in(1, 2 * d);
      gate_in << pooled[0], pooled[1];
      Mat<T> u;
      linear<T>(gate_in, P[layout_.gate.w], P[layout_.gate.b], u);
      const Mat<T> g = u.unaryExpr([](T v) { return sigmoid_t(v); });
      fused = (g.array() * pooled[0].array() + (T(1) - g.array()) * pooled[1].array()).matrix();
      if (cache) {
        cache->gate_in = std::move(gate_in);
        cache->gate = g;
      }
    } else {
      fused << pooled[0], pooled[1];
    }
    if (cache) cache->pooled = std::move(pooled);
  }

  if (dropout_rng && c.dropout > 0.0) {
    Mat<T> mask(1, fused.cols());
    const T keep = T(1) / T(1.0 - c.dropout);
    for (Eigen::Index i = 0; i < mask.cols(); ++i) mask(0, i) = dropout_rng->uniform() < c.dropout ? T(0) : keep;
    fused = (fused.array() * mask.array()).matrix();
    if (cache) cache->dropout_mask = std::move(mask);
  } else if (cache) {
    cache->dropout_mask.resize(0, 0);
  }
  return fused;
}

template <typename T>
T Network<T>::head_forward(const Mat<T>& fused, ForwardCache<T>* cache) const {
  const auto& P = p_.tensors;
  Mat<T> pre;
  linear<T>(fused, P[layout_.head1.w], P[layout_.head1.b], pre);
  const Mat<T> act = pre.unaryExpr([](T v) { return gelu(v); });
  const T logit = (act * P[layout_.head2.w])(0, 0) + P[layout_.head2.b](0, 0);
  if (cache) {
    cache->head_pre = std::move(pre);
    cache->head_act = act;
    cache->logit = logit;
  }
  return logit;
}

template <typename T>
T Network<T>::forward(const imaging::ImagePair& images, ForwardCache<T>* cache, CounterRng* dropout_rng) const {
  check_input(images);
  std::vector<Mat<T>> streams;
  if (cache) cache->streams.assign(layout_.streams.size(), {});
  for (std::size_t s = 0; s < layout_.streams.size(); ++s)
    streams.push_back(stream_forward(s, images, cache ? &cache->streams[s] : nullptr));
  Mat<T> fused = fuse_forward(streams, cache, dropout_rng);
  if (cache) cache->fused = fused;
  return head_forward(fused, cache);
}

template <typename T>
std::vector<Mat<T>> Network<T>::encode(const imaging::ImagePair& images) const {
  check_input(images);
  std::vector<Mat<T>> streams;
  for (std::size_t s = 0; s < layout_.streams.size(); ++s) streams.push_back(stream_forward(s, images, nullptr));
  return streams;
}

template <typename T>
Mat<T> Network<T>::fuse(const std::vector<Mat<T>>& streams) const {
  require(static_cast<int>(streams.size()) == p_.config.num_streams(), ErrorCode::invalid_argument,
          "fuse: wrong number of token sequences");
  for (const auto& s : streams)
    require(s.rows() == streams[0].rows() && s.cols() == p_.config.embed_dim, ErrorCode::invalid_argument,
            "fuse: token sequences must share token count and embed_dim");
  return fuse_forward(streams, nullptr, nullptr);
}

template <typename T>
T Network<T>::head(const Mat<T>& fused) const {
  require(fused.rows() == 1 && fused.cols() == p_.config.fused_dim() && fused.allFinite(),
          ErrorCode::invalid_argument, "head: fused embedding has the wrong shape or is non-finite");
  return head_forward(fused, nullptr);
}

template <typename T>
void Network<T>::backward(const ForwardCache<T>& cache, T dlogit, Gradients<T>& grads) const {
  const auto& c = p_.config;
  const auto& P = p_.tensors;
  auto& G = grads.tensors;
  const int d = c.embed_dim;

  // Head.
  G[layout_.head2.w] += cache.head_act.transpose() * dlogit;
  G[layout_.head2.b](0, 0) += dlogit;
  Mat<T> dpre = (P[layout_.head2.w].transpose() * dlogit).array() *
                cache.head_pre.unaryExpr([](T v) { return gelu_grad(v); }).array();
  Mat<T> dfused;
  linear_backward<T>(cache.fused, P[layout_.head1.w], dpre, G[layout_.head1.w], G[layout_.head1.b], &dfused);
  if (cache.dropout_mask.size() > 0) dfused = (dfused.array() * cache.dropout_mask.array()).matrix();

  // Fusion: produce d(loss)/d(stream outputs).
  const std::size_t n_streams = layout_.streams.size();
  std::vector<Mat<T>> dstream(n_streams);
  const auto tokens = static_cast<Eigen::Index>(c.tokens());
  auto spread = [&](const Mat<T>& dpooled) {
    return Mat<T>(dpooled.replicate(tokens, 1) / static_cast<T>(tokens));
  };

  if (layout_.has_cross) {
    for (auto& m : dstream) m = Mat<T>::Zero(tokens, d);
    for (int dir = 0; dir < 2; ++dir) {
      const CrossIdx& x = layout_.cross[dir];
      const CrossCache<T>& cc = cache.cross[dir];
      const Mat<T> dout = spread(dfused.middleCols(dir * d, d));
      auto& da = dstream[static_cast<std::size_t>(dir)];
      auto& db = dstream[static_cast<std::size_t>(1 - dir)];
      da += dout;
      Mat<T> dattn;
      linear_backward<T>(cc.attn, P[x.o.w], dout, G[x.o.w], G[x.o.b], &dattn);
      Mat<T> dq(cc.q.rows(), d), dk(cc.k.rows(), d), dv(cc.v.rows(), d);
      attention_backward<T>(cc.q, cc.k, cc.v, cc.probs.data(), c.fusion_heads, dattn, dq, dk, dv);
      Mat<T> dhq, dhkv, tmp;
      linear_backward<T>(cc.hq, P[x.q.w], dq, G[x.q.w], G[x.q.b], &dhq);
      linear_backward<T>(cc.hkv, P[x.k.w], dk, G[x.k.w], G[x.k.b], &dhkv);
      linear_backward<T>(cc.hkv, P[x.v.w], dv, G[x.v.w], G[x.v.b], &tmp);
      dhkv += tmp;
      layer_norm_backward<T>(cc.ln_q, P[x.ln_q.g], dhq, G[x.ln_q.g], G[x.ln_q.b], da);
      layer_norm_backward<T>(cc.ln_kv, P[x.ln_kv.g], dhkv, G[x.ln_kv.g], G[x.ln_kv.b], db);
    }
  } else if (n_streams == 1) {
    dstream[0] = spread(dfused);
  } else if (layout_.has_gate) {
    const Mat<T>& a = cache.pooled[0];
    const Mat<T>& b = cache.pooled[1];
    const Mat<T>& g = cache.gate;
    const Mat<T> dg = (dfused.array() * (a.array() - b.array())).matrix();
    Mat<T> da = (dfused.array() * g.array()).matrix();
    Mat<T> db = (dfused.array() * (T(1) - g.array())).matrix();
    const Mat<T> du = (dg.array() * g.array() * (T(1) - g.array())).matrix();
    Mat<T> dgate_in;
    linear_backward<T>(cache.gate_in, P[layout_.gate.w], du, G[layout_.gate.w], G[layout_.gate.b], &dgate_in);
    da += dgate_in.leftCols(d);
    db += dgate_in.rightCols(d);
    dstream[0] = spread(da);
    dstream[1] = spread(db);
  } else {
    dstream[0] = spread(dfused.leftCols(d));
    dstream[1] = spread(dfused.rightCols(d));
  }

  // Streams.
  const int win = c.window_side() * c.window_side();
  const int n_windows = c.tokens() / win;
  const int heads = c.attn_heads;
  for (std::size_t s = 0; s < n_streams; ++s) {
    const StreamIdx& st = layout_.streams[s];
    const StreamCache<T>& sc = cache.streams[s];
    Mat<T> dx = Mat<T>::Zero(tokens, d);
    layer_norm_backward<T>(sc.norm, P[st.norm.g], dstream[s], G[st.norm.g], G[st.norm.b], dx);

    for (std::size_t k = st.blocks.size(); k-- > 0;) {
      const BlockIdx& b = st.blocks[k];
      const BlockCache<T>& bc = sc.blocks[k];
      // MLP branch.
      Mat<T> dact;
      linear_backward<T>(bc.act, P[b.fc2.w], dx, G[b.fc2.w], G[b.fc2.b], &dact);
      const Mat<T> dpre_blk = (dact.array() * bc.pre.unaryExpr([](T v) { return gelu_grad(v); }).array()).matrix();
      Mat<T> dh2;
      linear_backward<T>(bc.h2, P[b.fc1.w], dpre_blk, G[b.fc1.w], G[b.fc1.b], &dh2);
      Mat<T> dmid = dx;
      layer_norm_backward<T>(bc.ln2, P[b.ln2.g], dh2, G[b.ln2.g], G[b.ln2.b], dmid);
      // Attention branch.
      Mat<T> dattn;
      linear_backward<T>(bc.attn, P[b.proj.w], dmid, G[b.proj.w], G[b.proj.b], &dattn);
      Mat<T> dqkv(tokens, 3 * d);
      for (int w = 0; w < n_windows; ++w) {
        const auto rows = bc.qkv.middleRows(w * win, win);
        auto drows = dqkv.middleRows(w * win, win);
        attention_backward<T>(rows.leftCols(d), rows.middleCols(d, d), rows.rightCols(d),
                              bc.probs.data() + static_cast<std::size_t>(w) * heads, heads,
                              dattn.middleRows(w * win, win), drows.leftCols(d), drows.middleCols(d, d),
                              drows.rightCols(d));
      }
      Mat<T> dh1;
      linear_backward<T>(bc.h1, P[b.qkv.w], dqkv, G[b.qkv.w], G[b.qkv.b], &dh1);
      dx = dmid;
      layer_norm_backward<T>(bc.ln1, P[b.ln1.g], dh1, G[b.ln1.g], G[b.ln1.b], dx);
    }
    G[st.pos] += dx;
    linear_backward<T>(sc.patches, P[st.embed.w], dx, G[st.embed.w], G[st.embed.b], nullptr);
  }
}

template <typename T>
BatchResult<T> loss_and_gradients(const ModelParams<T>& params, std::span<const Example> batch, Gradients<T>& grads,
                                  CounterRng* dropout_rng) {
  require(!batch.empty(), ErrorCode::invalid_argument, "empty batch");
  if (grads.tensors.size() != params.size()) grads = Gradients<T>::zeros_like(params);
  grads.set_zero();
  Network<T> net(params);
  ForwardCache<T> cache;
  BatchResult<T> result;
  const T inv_n = T(1) / static_cast<T>(batch.size());
  double loss = 0.0;
  for (const auto& ex : batch) {
    const T logit = net.forward(*ex.images, &cache, dropout_rng);
    const double z = static_cast<double>(logit);
    require(std::isfinite(z), ErrorCode::numeric, "non-finite logit in forward pass");
    loss += bce_with_logit(z, ex.label);
    if ((z >= 0.0) == (ex.label == 1)) ++result.correct;
    const T dlogit = (sigmoid_t(logit) - static_cast<T>(ex.label)) * inv_n;
    net.backward(cache, dlogit, grads);
  }
  for (std::size_t i = 0; i < grads.tensors.size(); ++i)
    require(grads.tensors[i].allFinite(), ErrorCode::numeric, "non-finite gradient in tensor '" + params.names[i] + "'");
  result.loss = static_cast<T>(loss / static_cast<double>(batch.size()));
  return result;
}

template <typename T>
T batch_loss(const ModelParams<T>& params, std::span<const Example> batch) {
  Network<T> net(params);
  double loss = 0.0;
  for (const auto& ex : batch) loss += bce_with_logit(static_cast<double>(net.forward(*ex.images)), ex.label);
  return static_cast<T>(loss / static_cast<double>(batch.size()));
}

#define BEDEXIT_INSTANTIATE(T)                                                                                   \
  template struct ModelParams<T>;                                                                                \
  template ModelParams<T> zero_params<T>(const ModelConfig&);                                                    \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                                     \
  template struct Gradients<T>;                                                                                  \
  template class Network<T>;                                                                                     \
  template Mat<T> patchify<T>(const imaging::ImagePair&, const ModelConfig&, int);                               \
  template BatchResult<T> loss_and_gradients<T>(const ModelParams<T>&, std::span<const Example>, Gradients<T>&, \
                                                CounterRng*);                                                    \
  template T batch_loss<T>(const ModelParams<T>&, std::span<const Example>);

BEDEXIT_INSTANTIATE(float)
BEDEXIT_INSTANTIATE(double)

}  // namespace bedexit::model
