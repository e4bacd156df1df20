#include "instformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "instformer/error.hpp"
#include "instformer/rng.hpp"

namespace instformer {

std::string_view to_string(EncodingMode mode) {
  switch (mode) {
    case EncodingMode::none: return "none";
    case EncodingMode::inter_only: return "inter";
    case EncodingMode::intra_only: return "intra";
    case EncodingMode::both: return "both";
  }
  return "both";
}

EncodingMode encoding_mode_from_string(std::string_view name) {
  if (name == "none") return EncodingMode::none;
  if (name == "inter") return EncodingMode::inter_only;
  if (name == "intra") return EncodingMode::intra_only;
  if (name == "both") return EncodingMode::both;
  throw InvalidArgument("unknown encoding mode '" + std::string(name) + "' (expected none|inter|intra|both)");
}

ModelConfig model_preset(std::string_view name) {
  ModelConfig c;
  if (name == "desk") {
    c.noise_scale = 0.1;
    return c;
  }
  if (name == "full") {
    c.n_pc = 1000;
    return c;
  }
  if (name == "tiny") {
    c.d_model = 32;
    c.n_heads = 2;
    c.noise_dim = 8;
    c.max_parts = 8;
    c.n_pc = 16;
    c.head_width = 32;
    return c;
  }
  throw InvalidArgument("unknown preset '" + std::string(name) + "' (expected tiny|desk|full)");
}

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    throw InvalidArgument("ModelConfig: d_model (" + std::to_string(d_model) + ") must be a positive multiple of n_heads (" +
                          std::to_string(n_heads) + ")");
  if (n_layers == 0) throw InvalidArgument("ModelConfig: n_layers must be >= 1");
  if (max_parts == 0) throw InvalidArgument("ModelConfig: max_parts must be >= 1");
  if (n_pc < 4) throw InvalidArgument("ModelConfig: n_pc must be >= 4");
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale))
    throw InvalidArgument("ModelConfig: noise_scale must be finite and >= 0");
  if (head_width == 0 || ffn_multiplier == 0) throw InvalidArgument("ModelConfig: head_width and ffn_multiplier must be >= 1");
}

// ---- ParameterStore ---------------------------------------------------------

ad::Tensor ParameterStore::add(std::string name, ad::Shape shape, std::vector<double> values) {
  if (contains(name)) throw InvalidArgument("ParameterStore: duplicate parameter " + name);
  auto t = ad::Tensor::parameter(std::move(shape), std::move(values));
  entries_.emplace_back(std::move(name), t);
  return t;
}

const ad::Tensor& ParameterStore::get(std::string_view name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw InvalidArgument("ParameterStore: no parameter named " + std::string(name));
}

bool ParameterStore::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

void ParameterStore::set_trainable(std::string_view prefix, bool trainable) {
  for (auto& [name, t] : entries_)
    if (std::string_view(name).starts_with(prefix)) t.set_requires_grad(trainable);
}

void ParameterStore::set_all_trainable(bool trainable) {
  for (auto& [name, t] : entries_) t.set_requires_grad(trainable);
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

std::vector<std::vector<double>> ParameterStore::snapshot() const {
  std::vector<std::vector<double>> out;
  for (const auto& [name, t] : entries_) out.push_back(t.value());
  return out;
}

// ---- token inputs -----------------------------------------------------------

std::size_t TokenInputs::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true));
}

TokenInputs make_token_inputs(const ModelConfig& config, std::span<const InstanceCode> codes,
                              std::span<const double> noise, std::size_t slots) {
  if (codes.size() > slots) throw InvalidArgument("make_token_inputs: more parts than slots");
  if (noise.size() != codes.size() * config.noise_dim)
    throw InvalidArgument("make_token_inputs: expected " + std::to_string(codes.size() * config.noise_dim) +
                          " noise values, got " + std::to_string(noise.size()));
  const std::size_t m = config.max_parts;
  const bool use_inter = config.encoding == EncodingMode::both || config.encoding == EncodingMode::inter_only;
  const bool use_intra = config.encoding == EncodingMode::both || config.encoding == EncodingMode::intra_only;
  std::vector<double> code_values(slots * 2 * m, 0.0);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i].inter.size() != m || codes[i].intra.size() != m)
      throw InvalidArgument("make_token_inputs: instance code width differs from max_parts");
    if (use_inter) std::copy(codes[i].inter.begin(), codes[i].inter.end(), code_values.begin() + i * 2 * m);
    if (use_intra) std::copy(codes[i].intra.begin(), codes[i].intra.end(), code_values.begin() + i * 2 * m + m);
  }
  TokenInputs in;
  in.codes = ad::Tensor::constant({slots, 2 * m}, std::move(code_values));
  if (config.noise_dim > 0) {
    std::vector<double> noise_values(slots * config.noise_dim, 0.0);
    std::copy(noise.begin(), noise.end(), noise_values.begin());
    in.noise = ad::Tensor::constant({slots, config.noise_dim}, std::move(noise_values));
  }
  in.valid.assign(slots, false);
  std::fill_n(in.valid.begin(), codes.size(), true);
  return in;
}

std::vector<double> key_padding_mask(std::size_t rows, const std::vector<bool>& key_valid) {
  std::vector<double> mask(rows * key_valid.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < key_valid.size(); ++c)
      if (!key_valid[c]) mask[r * key_valid.size() + c] = -std::numeric_limits<double>::infinity();
  return mask;
}

std::vector<Pose> poses_of(const ad::Tensor& layer_poses, std::size_t count) {
  if (layer_poses.rank() != 2 || layer_poses.dim(1) != 7 || layer_poses.dim(0) < count)
    throw ShapeError("poses_of: expected [>=" + std::to_string(count) + ",7], got " + ad::to_string(layer_poses.shape()));
  std::vector<Pose> out;
  const auto& v = layer_poses.value();
  for (std::size_t i = 0; i < count; ++i) {
    Pose p = Pose::from_array(std::span<const double>(v).subspan(i * 7, 7));
    p.rotation = p.rotation.normalized();
    out.push_back(p);
  }
  return out;
}

ad::Tensor identity_poses(std::size_t slots) {
  std::vector<double> v(slots * 7, 0.0);
  for (std::size_t i = 0; i < slots; ++i) v[i * 7] = 1.0;
  return ad::Tensor::constant({slots, 7}, std::move(v));
}

ad::Tensor poses_tensor(std::span<const Pose> poses, std::size_t slots) {
  if (poses.size() > slots) throw InvalidArgument("poses_tensor: more poses than slots");
  std::vector<double> v(slots * 7, 0.0);
  for (std::size_t i = 0; i < slots; ++i) v[i * 7] = 1.0;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const auto a = poses[i].to_array();
    std::copy(a.begin(), a.end(), v.begin() + i * 7);
  }
  return ad::Tensor::constant({slots, 7}, std::move(v));
}

// ---- layers -----------------------------------------------------------------

ad::Tensor AssemblyModel::Linear::operator()(const ad::Tensor& x) const { return ad::add(ad::matmul(x, weight), bias); }

ad::Tensor AssemblyModel::Norm::operator()(const ad::Tensor& x) const { return ad::layer_norm(x, gain, bias); }

AssemblyModel::Linear AssemblyModel::make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(in * out);
  for (auto& v : w) v = dist(rng);
  Linear l;
  l.weight = params_.add(name + ".weight", {in, out}, std::move(w));
  l.bias = params_.add(name + ".bias", {out}, std::vector<double>(out, 0.0));
  return l;
}

AssemblyModel::Linear AssemblyModel::make_token_projection(const std::string& name, Rng& rng) {
  Linear l = make_linear(name, config_.token_width(), config_.d_model, rng);
  // Noise rows start at zero.
  auto& w = l.weight.mutable_value();
  const std::size_t first_noise_row = config_.token_width() - config_.noise_dim;
  std::fill(w.begin() + first_noise_row * config_.d_model, w.end(), 0.0);
  return l;
}

AssemblyModel::Norm AssemblyModel::make_norm(const std::string& name, std::size_t width) {
  Norm n;
  n.gain = params_.add(name + ".gain", {width}, std::vector<double>(width, 1.0));
  n.bias = params_.add(name + ".bias", {width}, std::vector<double>(width, 0.0));
  return n;
}

AssemblyModel::Attention AssemblyModel::make_attention(const std::string& name, Rng& rng) {
  const std::size_t d = config_.d_model;
  return Attention{make_linear(name + ".q", d, d, rng), make_linear(name + ".k", d, d, rng),
                   make_linear(name + ".v", d, d, rng), make_linear(name + ".o", d, d, rng)};
}

AssemblyModel::FeedForward AssemblyModel::make_ffn(const std::string& name, Rng& rng) {
  const std::size_t d = config_.d_model;
  const std::size_t hidden = d * config_.ffn_multiplier;
  return FeedForward{make_linear(name + ".up", d, hidden, rng), make_linear(name + ".down", hidden, d, rng)};
}

AssemblyModel::Head AssemblyModel::make_head(const std::string& name, Rng& rng) {
  Head h;
  h.fc1 = make_linear(name + ".fc1", config_.d_model, config_.head_width, rng);
  h.fc2 = make_linear(name + ".fc2", config_.head_width, config_.head_width, rng);
  // Output layer starts at zero with quaternion-w bias 1: every layer initially predicts identity.
  std::vector<double> bias(7, 0.0);
  bias[0] = 1.0;
  h.out.weight = params_.add(name + ".out.weight", {config_.head_width, 7}, std::vector<double>(config_.head_width * 7, 0.0));
  h.out.bias = params_.add(name + ".out.bias", {7}, std::move(bias));
  return h;
}

AssemblyModel::AssemblyModel(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(derive_seed({seed, 0x1d}));
  pn1_ = make_linear("pointnet.fc1", 3, 64, rng);
  pn2_ = make_linear("pointnet.fc2", 64, 128, rng);
  pn3_ = make_linear("pointnet.fc3", 128, config_.d_model, rng);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "encoder." + std::to_string(l);
    EncoderBlock b;
    b.in_proj = make_token_projection(p + ".in_proj", rng);
    b.ln_attn = make_norm(p + ".ln_attn", config_.d_model);
    b.attn = make_attention(p + ".attn", rng);
    b.ln_ffn = make_norm(p + ".ln_ffn", config_.d_model);
    b.ffn = make_ffn(p + ".ffn", rng);
    encoder_.push_back(std::move(b));
  }
  head_ = make_head("head", rng);
}

void AssemblyModel::add_decoder(std::uint64_t seed) {
  if (has_decoder_) throw InvalidArgument("AssemblyModel::add_decoder: decoder already present");
  Rng rng(derive_seed({seed, 0xdec}));
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l);
    DecoderBlock b;
    b.in_proj = make_token_projection(p + ".in_proj", rng);
    b.ln_self = make_norm(p + ".ln_self", config_.d_model);
    b.self_attn = make_attention(p + ".self_attn", rng);
    b.ln_cross = make_norm(p + ".ln_cross", config_.d_model);
    b.cross_attn = make_attention(p + ".cross_attn", rng);
    b.ln_ffn = make_norm(p + ".ln_ffn", config_.d_model);
    b.ffn = make_ffn(p + ".ffn", rng);
    decoder_.push_back(std::move(b));
  }
  auto copy = [&](const std::string& name, const Linear& src) {
    Linear l;
    l.weight = params_.add(name + ".weight", src.weight.shape(), src.weight.value());
    l.bias = params_.add(name + ".bias", src.bias.shape(), src.bias.value());
    return l;
  };
  decoder_head_.fc1 = copy("decoder_head.fc1", head_.fc1);
  decoder_head_.fc2 = copy("decoder_head.fc2", head_.fc2);
  decoder_head_.out = copy("decoder_head.out", head_.out);
  has_decoder_ = true;
}

void AssemblyModel::randomize(std::uint64_t seed, double bound) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& [name, t] : params_.entries()) {
    auto& v = t.mutable_value();
    const bool is_gain = std::string_view(name).ends_with(".gain");
    for (auto& x : v) x = (is_gain ? 1.0 : 0.0) + dist(rng);
  }
}

// ---- forward ----------------------------------------------------------------

ad::Tensor AssemblyModel::pointnet_encode(std::span<const PartCloud> parts) const {
  if (parts.empty()) throw InvalidArgument("pointnet_encode: no parts");
  std::vector<double> coords;
  bool uniform = true;
  for (const auto& p : parts) {
    uniform = uniform && p.size() == parts[0].size();
    for (const auto& x : p.points()) coords.insert(coords.end(), {x.x(), x.y(), x.z()});
  }
  const std::size_t total = coords.size() / 3;
  const auto pts = ad::Tensor::constant({total, 3}, std::move(coords));
  const auto h = pn3_(ad::relu(pn2_(ad::relu(pn1_(pts)))));
  const std::size_t d = config_.d_model;
  if (uniform) return ad::reduce_max(ad::reshape(h, {parts.size(), parts[0].size(), d}), 1);
  std::vector<ad::Tensor> pooled;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    pooled.push_back(ad::reshape(ad::reduce_max(ad::slice(h, 0, offset, offset + p.size()), 0), {1, d}));
    offset += p.size();
  }
  return ad::concat(std::span<const ad::Tensor>(pooled), 0);
}

ad::Tensor AssemblyModel::zero_padding(const ad::Tensor& x, const std::vector<bool>& valid) const {
  if (std::all_of(valid.begin(), valid.end(), [](bool v) { return v; })) return x;
  const std::size_t width = x.dim(1);
  std::vector<double> keep(valid.size() * width, 0.0);
  for (std::size_t s = 0; s < valid.size(); ++s)
    if (valid[s]) std::fill_n(keep.begin() + s * width, width, 1.0);
  return ad::mul(x, ad::Tensor::constant({valid.size(), width}, std::move(keep)));
}

ad::Tensor AssemblyModel::build_tokens(std::size_t layer, const ad::Tensor& features, const TokenInputs& inputs,
                                       const ad::Tensor& prev_poses, bool decoder) const {
  const std::size_t slots = inputs.slots();
  if (features.rank() != 2 || features.dim(0) != slots || features.dim(1) != config_.d_model)
    throw ShapeError("build_tokens: features " + ad::to_string(features.shape()) + " do not match " +
                     std::to_string(slots) + " slots of width " + std::to_string(config_.d_model));
  if (prev_poses.rank() != 2 || prev_poses.dim(0) != slots || prev_poses.dim(1) != 7)
    throw ShapeError("build_tokens: previous poses " + ad::to_string(prev_poses.shape()) + " do not match " +
                     std::to_string(slots) + " slots");
  if (inputs.codes.dim(0) != slots || (config_.noise_dim > 0 && inputs.noise.dim(0) != slots))
    throw ShapeError("build_tokens: code/noise rows do not match " + std::to_string(slots) + " slots");
  std::vector<ad::Tensor> pieces{features, inputs.codes, prev_poses};
  if (config_.noise_dim > 0) pieces.push_back(inputs.noise);
  const auto joined = ad::concat(std::span<const ad::Tensor>(pieces), 1);
  const Linear& proj = decoder ? decoder_.at(layer).in_proj : encoder_.at(layer).in_proj;
  return zero_padding(proj(joined), inputs.valid);
}

ad::Tensor AssemblyModel::attend(const Attention& attn, const ad::Tensor& queries, const ad::Tensor& keys,
                                 std::span<const double> mask) const {
  const std::size_t heads = config_.n_heads;
  const std::size_t dh = config_.d_model / heads;
  const auto q = attn.q(queries);
  const auto k = attn.k(keys);
  const auto v = attn.v(keys);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = ad::slice(q, 1, h * dh, (h + 1) * dh);
    const auto kh = ad::slice(k, 1, h * dh, (h + 1) * dh);
    const auto vh = ad::slice(v, 1, h * dh, (h + 1) * dh);
    const auto weights = ad::softmax(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt), 1, mask);
    outs.push_back(ad::matmul(weights, vh));
  }
  const auto joined = heads == 1 ? outs[0] : ad::concat(std::span<const ad::Tensor>(outs), 1);
  return attn.o(joined);
}

ad::Tensor AssemblyModel::feed_forward(const FeedForward& ffn, const ad::Tensor& x) const {
  return ffn.down(ad::relu(ffn.up(x)));
}

ad::Tensor AssemblyModel::pose_head(const ad::Tensor& features, bool decoder) const {
  const Head& h = decoder ? decoder_head_ : head_;
  if (decoder && !has_decoder_) throw InvalidArgument("pose_head: model has no decoder");
  const auto raw = h.out(ad::relu(h.fc2(ad::relu(h.fc1(features)))));
  const auto rotation = ad::l2_normalize(ad::slice(raw, 1, 0, 4), 1);
  const auto translation = ad::tanh(ad::slice(raw, 1, 4, 7));
  return ad::concat({rotation, translation}, 1);
}

EncoderOutput AssemblyModel::encode(const ad::Tensor& features, const TokenInputs& inputs,
                                    const ad::Tensor* fixed_poses) const {
  if (inputs.valid_count() == 0) throw InvalidArgument("encoder_forward: every slot is masked");
  const std::size_t slots = inputs.slots();
  if (slots > config_.max_parts)
    throw InvalidArgument("encoder_forward: " + std::to_string(slots) + " slots exceed max_parts");
  const auto mask = key_padding_mask(slots, inputs.valid);
  EncoderOutput out;
  out.memory.valid = inputs.valid;
  ad::Tensor h = features;
  ad::Tensor prev = fixed_poses ? *fixed_poses : identity_poses(slots);
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    const auto& block = encoder_[l];
    const auto x = build_tokens(l, h, inputs, prev);
    const auto a = ad::add(x, attend(block.attn, block.ln_attn(x), block.ln_attn(x), mask));
    h = ad::add(a, feed_forward(block.ffn, block.ln_ffn(a)));
    auto poses = pose_head(h);
    out.memory.layers.push_back(h);
    if (!fixed_poses) prev = poses;
    out.poses.push_back(std::move(poses));
  }
  return out;
}

PoseSequence AssemblyModel::decode(const ad::Tensor& query_features, const TokenInputs& query_inputs,
                                   const EncoderMemory& memory) const {
  if (!has_decoder_) throw InvalidArgument("decoder_forward: model has no decoder");
  if (memory.layers.size() != decoder_.size() ||
      std::none_of(memory.valid.begin(), memory.valid.end(), [](bool v) { return v; }))
    throw InvalidArgument("decoder_forward: empty encoder memory");
  if (query_inputs.valid_count() == 0) throw InvalidArgument("decoder_forward: no query parts");
  const std::size_t slots = query_inputs.slots();
  const auto self_mask = key_padding_mask(slots, query_inputs.valid);
  const auto cross_mask = key_padding_mask(slots, memory.valid);
  PoseSequence poses;
  ad::Tensor h = query_features;
  ad::Tensor prev = identity_poses(slots);
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    const auto& block = decoder_[l];
    const auto x = build_tokens(l, h, query_inputs, prev, true);
    const auto xs = block.ln_self(x);
    const auto a = ad::add(x, attend(block.self_attn, xs, xs, self_mask));
    const auto b = ad::add(a, attend(block.cross_attn, block.ln_cross(a), memory.layers[l], cross_mask));
    h = ad::add(b, feed_forward(block.ffn, block.ln_ffn(b)));
    prev = pose_head(h, true);
    poses.push_back(prev);
  }
  return poses;
}

}  // namespace instformer
