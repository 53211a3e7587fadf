#include "catv2ton/backbone.hpp"

#include <cmath>
#include <json.hpp>

namespace catv2ton {

RopeSplit ModelConfig::rope_split() const {
  if (rope_temporal || rope_row || rope_col) return {rope_temporal, rope_row, rope_col};
  const std::size_t dh = head_dim();
  return {dh / 2, dh / 4, dh - dh / 2 - dh / 4};
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (num_blocks == 0) fail("num_blocks must be >= 1");
  if (heads == 0 || hidden % heads != 0) fail("hidden must be divisible by heads");
  if (head_dim() % 2 != 0) fail("per-head dim must be even");
  if (ffn == 0 || patch == 0 || channels == 0 || pose_channels == 0) fail("zero extent");
  const RopeSplit s = rope_split();
  if (s.temporal % 2 || s.row % 2 || s.col % 2) fail("rotary groups must be even");
  if (s.total() != head_dim()) fail("rotary groups must sum to the per-head dim");
  if (!(norm_eps > 0.0)) fail("norm_eps must be positive");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["num_blocks"] = num_blocks;
  j["hidden"] = hidden;
  j["heads"] = heads;
  j["ffn"] = ffn;
  j["patch"] = patch;
  j["channels"] = channels;
  j["pose_channels"] = pose_channels;
  j["max_frames"] = max_frames;
  j["rope_temporal"] = rope_temporal;
  j["rope_row"] = rope_row;
  j["rope_col"] = rope_col;
  j["rope_base"] = rope_base;
  j["norm_eps"] = norm_eps;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: invalid JSON: ") + e.what());
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  try {
    get("num_blocks", c.num_blocks);
    get("hidden", c.hidden);
    get("heads", c.heads);
    get("ffn", c.ffn);
    get("patch", c.patch);
    get("channels", c.channels);
    get("pose_channels", c.pose_channels);
    get("max_frames", c.max_frames);
    get("rope_temporal", c.rope_temporal);
    get("rope_row", c.rope_row);
    get("rope_col", c.rope_col);
    get("rope_base", c.rope_base);
    get("norm_eps", c.norm_eps);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
Tensor<T> timestep_embedding(double t, std::size_t dim) {
  const std::size_t half = dim / 2;
  std::vector<T> emb(dim, T(0));
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                 static_cast<double>(half));
    emb[i] = static_cast<T>(std::cos(t * freq));
    emb[half + i] = static_cast<T>(std::sin(t * freq));
  }
  return Tensor<T>({1, dim}, std::move(emb));
}

template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const std::vector<TokenPosition>& positions,
                         const BlockWeights<T>& w, const ModelConfig& cfg) {
  const RopeSplit split = cfg.rope_split();
  Tensor<T> q = rope(matmul(x, w.wq), cfg.heads, positions, split, cfg.rope_base);
  Tensor<T> k = rope(matmul(x, w.wk), cfg.heads, positions, split, cfg.rope_base);
  Tensor<T> v = matmul(x, w.wv);
  return matmul(attention(q, k, v, cfg.heads), w.wo);
}

template <typename T>
Tensor<T> dit_block(const Tensor<T>& x, const std::optional<Tensor<T>>& temb,
                    const std::vector<TokenPosition>& positions, const BlockWeights<T>& w,
                    const ModelConfig& cfg) {
  Tensor<T> h = temb ? add_rowwise(x, *temb) : x;
  h = add(h, self_attention(layer_norm(h, w.ln1_gamma, w.ln1_beta, cfg.norm_eps), positions, w,
                            cfg));
  Tensor<T> f = gelu(linear(layer_norm(h, w.ln2_gamma, w.ln2_beta, cfg.norm_eps), w.w1, w.b1));
  return add(h, linear(f, w.w2, w.b2));
}

template <typename T>
Tensor<T> pose_inject(const Tensor<T>& h1, const Tensor<T>& pose_tokens,
                      const std::vector<TokenPosition>& positions,
                      const PoseEncoderWeights<T>& pose, const ModelConfig& cfg) {
  if (pose_tokens.rank() != 2 || pose_tokens.dim(0) != h1.dim(0)) {
    throw AlignmentError("pose_inject: " + shape_str(pose_tokens.shape()) +
                         " pose tokens vs hidden state " + shape_str(h1.shape()));
  }
  Tensor<T> p = linear(pose_tokens, pose.embed_w, pose.embed_b);
  p = dit_block(p, std::optional<Tensor<T>>{}, positions, pose.block, cfg);
  return add(h1, linear(p, pose.out_w, pose.out_b));
}

namespace {

template <typename T>
Tensor<T> init_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  return Tensor<T>::randn({rows, cols}, rng, 1.0 / std::sqrt(static_cast<double>(rows)), true);
}

template <typename T>
BlockWeights<T> init_block(const ModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.hidden;
  BlockWeights<T> b;
  b.ln1_gamma = Tensor<T>::full({d}, T(1), true);
  b.ln1_beta = Tensor<T>::zeros({d}, true);
  b.wq = init_matrix<T>(d, d, rng);
  b.wk = init_matrix<T>(d, d, rng);
  b.wv = init_matrix<T>(d, d, rng);
  b.wo = init_matrix<T>(d, d, rng);
  b.ln2_gamma = Tensor<T>::full({d}, T(1), true);
  b.ln2_beta = Tensor<T>::zeros({d}, true);
  b.w1 = init_matrix<T>(d, cfg.ffn, rng);
  b.b1 = Tensor<T>::zeros({cfg.ffn}, true);
  b.w2 = init_matrix<T>(cfg.ffn, d, rng);
  b.b2 = Tensor<T>::zeros({d}, true);
  return b;
}

template <typename T>
Tensor<T> copy_param(const Tensor<T>& src) {
  Tensor<T> out = src.detach();
  out.set_requires_grad(true);
  return out;
}

template <typename T>
BlockWeights<T> copy_block(const BlockWeights<T>& b) {
  return {copy_param(b.ln1_gamma), copy_param(b.ln1_beta), copy_param(b.wq), copy_param(b.wk),
          copy_param(b.wv),        copy_param(b.wo),       copy_param(b.ln2_gamma),
          copy_param(b.ln2_beta),  copy_param(b.w1),       copy_param(b.b1),
          copy_param(b.w2),        copy_param(b.b2)};
}

}  // namespace

template <typename T>
DiTModel<T>::DiTModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.hidden;
  auto& w = weights_;
  w.embed_w = init_matrix<T>(config_.token_in(), d, rng);
  w.embed_b = Tensor<T>::zeros({d}, true);
  w.time_w1 = init_matrix<T>(d, d, rng);
  w.time_b1 = Tensor<T>::zeros({d}, true);
  w.time_w2 = init_matrix<T>(d, d, rng);
  w.time_b2 = Tensor<T>::zeros({d}, true);
  for (std::size_t i = 0; i < config_.num_blocks; ++i) w.blocks.push_back(init_block<T>(config_, rng));
  w.pose.embed_w = init_matrix<T>(config_.pose_token_in(), d, rng);
  w.pose.embed_b = Tensor<T>::zeros({d}, true);
  w.pose.block = copy_block(w.blocks[0]);
  w.pose.out_w = Tensor<T>::zeros({d, d}, true);
  w.pose.out_b = Tensor<T>::zeros({d}, true);
  w.final_gamma = Tensor<T>::full({d}, T(1), true);
  w.final_beta = Tensor<T>::zeros({d}, true);
  w.unembed_w = Tensor<T>::zeros({d, config_.token_out()}, true);
  w.unembed_b = Tensor<T>::zeros({config_.token_out()}, true);
  register_parameters();
}

template <typename T>
void DiTModel<T>::register_parameters() {
  params_.clear();
  auto& w = weights_;
  auto reg = [&](std::string name, const Tensor<T>& t) { params_.push_back({std::move(name), t, true}); };
  auto reg_block = [&](const std::string& prefix, const BlockWeights<T>& b) {
    reg(prefix + ".ln1.gamma", b.ln1_gamma);
    reg(prefix + ".ln1.beta", b.ln1_beta);
    reg(prefix + ".attn.wq", b.wq);
    reg(prefix + ".attn.wk", b.wk);
    reg(prefix + ".attn.wv", b.wv);
    reg(prefix + ".attn.wo", b.wo);
    reg(prefix + ".ln2.gamma", b.ln2_gamma);
    reg(prefix + ".ln2.beta", b.ln2_beta);
    reg(prefix + ".ffn.w1", b.w1);
    reg(prefix + ".ffn.b1", b.b1);
    reg(prefix + ".ffn.w2", b.w2);
    reg(prefix + ".ffn.b2", b.b2);
  };
  reg("embed.w", w.embed_w);
  reg("embed.b", w.embed_b);
  reg("time.w1", w.time_w1);
  reg("time.b1", w.time_b1);
  reg("time.w2", w.time_w2);
  reg("time.b2", w.time_b2);
  for (std::size_t i = 0; i < w.blocks.size(); ++i) reg_block("blocks." + std::to_string(i), w.blocks[i]);
  reg("pose.embed.w", w.pose.embed_w);
  reg("pose.embed.b", w.pose.embed_b);
  reg_block("pose.block", w.pose.block);
  reg("pose.out.w", w.pose.out_w);
  reg("pose.out.b", w.pose.out_b);
  reg("final_norm.gamma", w.final_gamma);
  reg("final_norm.beta", w.final_beta);
  reg("unembed.w", w.unembed_w);
  reg("unembed.b", w.unembed_b);
}

template <typename T>
Parameter<T>* DiTModel<T>::find_parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename T>
Tensor<T> DiTModel<T>::forward_tokens(const Tensor<T>& tokens, const Tensor<T>& pose_tokens,
                                      const std::vector<TokenPosition>& positions, double t,
                                      bool use_pose) const {
  if (tokens.rank() != 2 || tokens.dim(1) != config_.token_in()) {
    throw ContractError("forward: token width " + shape_str(tokens.shape()) + " expected " +
                        std::to_string(config_.token_in()) + " ((2C+1)p^2)");
  }
  if (positions.size() != tokens.dim(0)) {
    throw AlignmentError("forward: " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(tokens.dim(0)) + " tokens");
  }
  const auto& w = weights_;
  const Tensor<T> temb = linear(
      gelu(linear(timestep_embedding<T>(t, config_.hidden), w.time_w1, w.time_b1)), w.time_w2,
      w.time_b2);
  const std::optional<Tensor<T>> temb_opt = temb;
  Tensor<T> h = linear(tokens, w.embed_w, w.embed_b);
  h = dit_block(h, temb_opt, positions, w.blocks[0], config_);
  if (use_pose) h = pose_inject(h, pose_tokens, positions, w.pose, config_);
  for (std::size_t i = 1; i < w.blocks.size(); ++i) {
    h = dit_block(h, temb_opt, positions, w.blocks[i], config_);
  }
  h = layer_norm(h, w.final_gamma, w.final_beta, config_.norm_eps);
  return linear(h, w.unembed_w, w.unembed_b);
}

template <typename T>
FreezeReport DiTModel<T>::freeze_partition(FreezeMode mode) {
  FreezeReport report;
  for (auto& p : params_) {
    const bool attention = p.name.starts_with("blocks.") &&
                           p.name.find(".attn.") != std::string::npos;
    const bool pose = p.name.starts_with("pose.");
    p.trainable = mode == FreezeMode::full || attention || pose;
    report.total += p.value.numel();
    if (p.trainable) report.trainable += p.value.numel();
  }
  report.ratio = static_cast<double>(report.trainable) / static_cast<double>(report.total);
  return report;
}

template <typename T>
std::size_t DiTModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename T>
DiTModel<T> DiTModel<T>::clone() const {
  DiTModel out;
  out.config_ = config_;
  const auto& w = weights_;
  auto& o = out.weights_;
  o.embed_w = copy_param(w.embed_w);
  o.embed_b = copy_param(w.embed_b);
  o.time_w1 = copy_param(w.time_w1);
  o.time_b1 = copy_param(w.time_b1);
  o.time_w2 = copy_param(w.time_w2);
  o.time_b2 = copy_param(w.time_b2);
  for (const auto& b : w.blocks) o.blocks.push_back(copy_block(b));
  o.pose.embed_w = copy_param(w.pose.embed_w);
  o.pose.embed_b = copy_param(w.pose.embed_b);
  o.pose.block = copy_block(w.pose.block);
  o.pose.out_w = copy_param(w.pose.out_w);
  o.pose.out_b = copy_param(w.pose.out_b);
  o.final_gamma = copy_param(w.final_gamma);
  o.final_beta = copy_param(w.final_beta);
  o.unembed_w = copy_param(w.unembed_w);
  o.unembed_b = copy_param(w.unembed_b);
  out.register_parameters();
  for (std::size_t i = 0; i < params_.size(); ++i) out.params_[i].trainable = params_[i].trainable;
  return out;
}

VideoTensor predict_noise(const DiTModel<float>& model, const ConditionedSequence& seq, double t,
                          bool use_pose) {
  const auto& cfg = model.config();
  if (seq.frames.channels() != cfg.frame_channels() || seq.image_channels != cfg.channels) {
    throw ContractError("forward: frames carry " + std::to_string(seq.frames.channels()) +
                        " channels, model expects 2C+1 = " +
                        std::to_string(cfg.frame_channels()));
  }
  if (seq.pose.channels() != cfg.pose_channels) {
    throw ContractError("forward: pose maps carry " + std::to_string(seq.pose.channels()) +
                        " channels, model expects " + std::to_string(cfg.pose_channels));
  }
  NoGradGuard no_grad;
  const Patchified x = patchify(seq.frames, cfg.patch);
  const Patchified pose = patchify(seq.pose, cfg.patch);
  const Tensorf out = model.forward_tokens(x.tokens, pose.tokens, x.positions, t, use_pose);
  return unpatchify(out, seq.total_frames(), cfg.channels, seq.frames.height(),
                    seq.frames.width(), cfg.patch);
}

template class DiTModel<float>;
template class DiTModel<double>;

#define CATV2TON_INSTANTIATE_BACKBONE(T)                                                         \
  template Tensor<T> timestep_embedding<T>(double, std::size_t);                                 \
  template Tensor<T> self_attention(const Tensor<T>&, const std::vector<TokenPosition>&,        \
                                    const BlockWeights<T>&, const ModelConfig&);                 \
  template Tensor<T> dit_block(const Tensor<T>&, const std::optional<Tensor<T>>&,                \
                               const std::vector<TokenPosition>&, const BlockWeights<T>&,        \
                               const ModelConfig&);                                              \
  template Tensor<T> pose_inject(const Tensor<T>&, const Tensor<T>&,                             \
                                 const std::vector<TokenPosition>&, const PoseEncoderWeights<T>&, \
                                 const ModelConfig&);

CATV2TON_INSTANTIATE_BACKBONE(float)
CATV2TON_INSTANTIATE_BACKBONE(double)

}  // namespace catv2ton
