#include "csasr/model.hpp"

#include <cmath>
#include <string>

#include "csasr/errors.hpp"
#include "csasr/losses.hpp"

namespace csasr {
namespace {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

std::vector<std::uint8_t> causal_mask(std::size_t n) {
  std::vector<std::uint8_t> m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = 1;
  return m;
}

// Registers parameters under a dotted prefix with deterministic initial values.
class Initializer {
 public:
  Initializer(ParameterStore& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  Tensor uniform(const std::string& name, Shape shape, double limit) {
    std::uniform_real_distribution<double> d(-limit, limit);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = d(rng_);
    return store_.add(name, Tensor::from_data(std::move(shape), std::move(v)));
  }
  Tensor normal(const std::string& name, Shape shape, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = d(rng_);
    return store_.add(name, Tensor::from_data(std::move(shape), std::move(v)));
  }
  Tensor constant(const std::string& name, Shape shape, double value) {
    return store_.add(name, Tensor::full(std::move(shape), value));
  }

  Linear linear(const std::string& name, std::size_t in, std::size_t out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    return {uniform(name + ".weight", {in, out}, limit), constant(name + ".bias", {out}, 0.0)};
  }
  LayerNormParams norm(const std::string& name, std::size_t d) {
    return {constant(name + ".gamma", {d}, 1.0), constant(name + ".beta", {d}, 0.0)};
  }
  MultiHeadAttention attention(const std::string& name, std::size_t d, int heads) {
    MultiHeadAttention a;
    a.query = linear(name + ".query", d, d);
    a.key = linear(name + ".key", d, d);
    a.value = linear(name + ".value", d, d);
    a.out = linear(name + ".out", d, d);
    a.heads = heads;
    return a;
  }
  FeedForward ffn(const std::string& name, std::size_t d, std::size_t inner, bool swish) {
    return {norm(name + ".norm", d), linear(name + ".in", d, inner), linear(name + ".out", inner, d), swish};
  }
  TransformerDecoder decoder(const std::string& name, const ModelConfig& c, int layers, std::size_t out_dim) {
    const auto D = static_cast<std::size_t>(c.d_model);
    TransformerDecoder dec;
    dec.embedding = normal(name + ".embedding", {static_cast<std::size_t>(c.vocab_size), D}, 1.0 / std::sqrt(D));
    for (int l = 0; l < layers; ++l) {
      const std::string p = name + ".layers." + std::to_string(l);
      dec.layers.push_back({norm(p + ".self_norm", D), attention(p + ".self_attn", D, c.heads),
                            norm(p + ".src_norm", D), attention(p + ".src_attn", D, c.heads),
                            ffn(p + ".ffn", D, static_cast<std::size_t>(c.ffn_dim), false)});
    }
    dec.after_norm = norm(name + ".after_norm", D);
    dec.output = linear(name + ".output", D, out_dim);
    return dec;
  }

 private:
  ParameterStore& store_;
  Rng rng_;
};

}  // namespace

// ---- config -----------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (d_model < 1 || heads < 1 || d_model % heads != 0) fail("d_model must be a positive multiple of heads");
  if (enc_layers < 0 || dec_layers < 0 || ld_layers < 0) fail("layer counts must be >= 0");
  if (ffn_dim < 1 || conv_kernel < 1) fail("ffn_dim and conv_kernel must be >= 1");
  if (subsample_factor != 1 && subsample_factor != 2 && subsample_factor != 4)
    fail("subsample_factor must be 1, 2 or 4");
  if (feat_dim < 1 || vocab_size < 4 || ld_vocab_size < 1) fail("feat_dim, vocab_size and ld_vocab_size too small");
  if (blank_id < 0 || blank_id >= vocab_size || sos_eos_id < 0 || sos_eos_id >= vocab_size)
    fail("blank_id / sos_eos_id outside the vocabulary");
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0,1]");
  if (!(beta >= 0.0)) fail("beta must be >= 0");
  if (use_lpb && use_grl) fail("use_lpb and use_grl are mutually exclusive");
  if ((use_lpb || use_grl) && !use_ld) fail("use_lpb / use_grl need the LD decoder (use_ld)");
  if (lpb_stop_gradient && !use_lpb) fail("lpb_stop_gradient only applies with use_lpb");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0,1)");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) fail("label_smoothing must lie in [0,1)");
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.d_model = 256;
  c.heads = 4;
  c.enc_layers = 12;
  c.dec_layers = 6;
  c.ld_layers = 6;
  c.ffn_dim = 2048;
  c.conv_kernel = 15;
  c.feat_dim = 83;
  c.vocab_size = 5628;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model},
                     {"heads", c.heads},
                     {"enc_layers", c.enc_layers},
                     {"dec_layers", c.dec_layers},
                     {"ld_layers", c.ld_layers},
                     {"ffn_dim", c.ffn_dim},
                     {"conv_kernel", c.conv_kernel},
                     {"subsample_factor", c.subsample_factor},
                     {"feat_dim", c.feat_dim},
                     {"vocab_size", c.vocab_size},
                     {"ld_vocab_size", c.ld_vocab_size},
                     {"blank_id", c.blank_id},
                     {"sos_eos_id", c.sos_eos_id},
                     {"alpha", c.alpha},
                     {"beta", c.beta},
                     {"use_ld", c.use_ld},
                     {"ld_full_context", c.ld_full_context},
                     {"use_lpb", c.use_lpb},
                     {"use_grl", c.use_grl},
                     {"grl_lambda", c.grl_lambda},
                     {"lpb_stop_gradient", c.lpb_stop_gradient},
                     {"dropout", c.dropout},
                     {"label_smoothing", c.label_smoothing}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  read_field(j, "d_model", c.d_model);
  read_field(j, "heads", c.heads);
  read_field(j, "enc_layers", c.enc_layers);
  read_field(j, "dec_layers", c.dec_layers);
  read_field(j, "ld_layers", c.ld_layers);
  read_field(j, "ffn_dim", c.ffn_dim);
  read_field(j, "conv_kernel", c.conv_kernel);
  read_field(j, "subsample_factor", c.subsample_factor);
  read_field(j, "feat_dim", c.feat_dim);
  read_field(j, "vocab_size", c.vocab_size);
  read_field(j, "ld_vocab_size", c.ld_vocab_size);
  read_field(j, "blank_id", c.blank_id);
  read_field(j, "sos_eos_id", c.sos_eos_id);
  read_field(j, "alpha", c.alpha);
  read_field(j, "beta", c.beta);
  read_field(j, "use_ld", c.use_ld);
  read_field(j, "ld_full_context", c.ld_full_context);
  read_field(j, "use_lpb", c.use_lpb);
  read_field(j, "use_grl", c.use_grl);
  read_field(j, "grl_lambda", c.grl_lambda);
  read_field(j, "lpb_stop_gradient", c.lpb_stop_gradient);
  read_field(j, "dropout", c.dropout);
  read_field(j, "label_smoothing", c.label_smoothing);
}

// ---- blocks -----------------------------------------------------------------

Tensor MultiHeadAttention::operator()(const Tensor& query_in, const Tensor& memory,
                                      std::span<const std::uint8_t> mask, double dropout_rate,
                                      const ForwardContext& ctx) const {
  const std::size_t d = query_in.size(1);
  const std::size_t dk = d / static_cast<std::size_t>(heads);
  const Tensor q = query(query_in), k = key(memory), v = value(memory);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> contexts;
  contexts.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dk;
    Tensor scores = scale(matmul(slice_cols(q, off, dk), transpose(slice_cols(k, off, dk))), inv_sqrt);
    if (!mask.empty()) scores = masked_fill(scores, mask);
    Tensor weights = softmax(scores);
    if (ctx.train && ctx.rng) weights = dropout(weights, dropout_rate, *ctx.rng, true);
    contexts.push_back(matmul(weights, slice_cols(v, off, dk)));
  }
  return out(heads == 1 ? contexts.front() : concat(contexts));
}

Tensor FeedForward::operator()(const Tensor& x, double dropout_rate, const ForwardContext& ctx) const {
  Tensor h = in(norm(x));
  h = use_swish ? swish(h) : relu(h);
  if (ctx.train && ctx.rng) h = dropout(h, dropout_rate, *ctx.rng, true);
  h = out(h);
  if (ctx.train && ctx.rng) h = dropout(h, dropout_rate, *ctx.rng, true);
  return h;
}

Tensor ConvModule::operator()(const Tensor& x, double dropout_rate, const ForwardContext& ctx) const {
  Tensor h = glu(pointwise_in(norm(x)));
  h = depthwise_conv1d(h, depthwise_weight, depthwise_bias);
  h = swish(depthwise_norm(h));
  h = pointwise_out(h);
  if (ctx.train && ctx.rng) h = dropout(h, dropout_rate, *ctx.rng, true);
  return h;
}

Tensor ConformerBlock::operator()(const Tensor& x, double dropout_rate, const ForwardContext& ctx) const {
  Tensor h = add(x, scale(ffn_macaron(x, dropout_rate, ctx), 0.5));
  Tensor a = attn_norm(h);
  Tensor att = attn(a, a, {}, dropout_rate, ctx);
  if (ctx.train && ctx.rng) att = dropout(att, dropout_rate, *ctx.rng, true);
  h = add(h, att);
  h = add(h, conv(h, dropout_rate, ctx));
  h = add(h, scale(ffn(h, dropout_rate, ctx), 0.5));
  return final_norm(h);
}

Tensor DecoderLayer::operator()(const Tensor& x, const Tensor& memory, std::span<const std::uint8_t> self_mask,
                                double dropout_rate, const ForwardContext& ctx) const {
  Tensor a = self_norm(x);
  Tensor s = self_attn(a, a, self_mask, dropout_rate, ctx);
  if (ctx.train && ctx.rng) s = dropout(s, dropout_rate, *ctx.rng, true);
  Tensor h = add(x, s);
  Tensor c = src_attn(src_norm(h), memory, {}, dropout_rate, ctx);
  if (ctx.train && ctx.rng) c = dropout(c, dropout_rate, *ctx.rng, true);
  h = add(h, c);
  return add(h, ffn(h, dropout_rate, ctx));
}

Tensor TransformerDecoder::operator()(const Tensor& input, const Tensor& memory, bool causal,
                                      const ForwardContext& ctx, double dropout_rate) const {
  const std::size_t n = input.size(0), d = input.size(1);
  Tensor h = add(scale(input, std::sqrt(static_cast<double>(d))), positional_encoding(n, d));
  if (ctx.train && ctx.rng) h = dropout(h, dropout_rate, *ctx.rng, true);
  const std::vector<std::uint8_t> mask = causal ? causal_mask(n) : std::vector<std::uint8_t>{};
  for (const auto& layer : layers) h = layer(h, memory, mask, dropout_rate, ctx);
  return output(after_norm(h));
}

Tensor positional_encoding(std::size_t n, std::size_t d) {
  std::vector<double> pe(n * d);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(d));
      pe[pos * d + i] = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < d) pe[pos * d + i + 1] = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return Tensor::from_data({n, d}, std::move(pe));
}

Tensor features_tensor(const Utterance& utt) {
  return Tensor::from_data({utt.num_frames, utt.feat_dim}, utt.features);
}

// ---- model ------------------------------------------------------------------

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Initializer init(params_, seed);
  const auto D = static_cast<std::size_t>(config_.d_model);
  const auto F = static_cast<std::size_t>(config_.feat_dim);
  const auto V = static_cast<std::size_t>(config_.vocab_size);

  std::size_t channels_in = 1, width = F;
  for (int f = config_.subsample_factor, i = 0; f > 1; f /= 2, ++i) {
    const std::string p = "encoder.subsample.conv" + std::to_string(i);
    const double limit = std::sqrt(6.0 / static_cast<double>((channels_in + D) * 9));
    sub_conv_weight_.push_back(init.uniform(p + ".weight", {D, channels_in, 3, 3}, limit));
    sub_conv_bias_.push_back(init.constant(p + ".bias", {D}, 0.0));
    channels_in = D;
    width = (width + 1) / 2;
  }
  sub_out_ = init.linear("encoder.subsample.out", width * channels_in, D);

  const double dw_limit = std::sqrt(3.0 / static_cast<double>(config_.conv_kernel));
  for (int l = 0; l < config_.enc_layers; ++l) {
    const std::string p = "encoder.layers." + std::to_string(l);
    ConformerBlock b;
    b.ffn_macaron = init.ffn(p + ".ffn_macaron", D, static_cast<std::size_t>(config_.ffn_dim), true);
    b.attn_norm = init.norm(p + ".attn_norm", D);
    b.attn = init.attention(p + ".attn", D, config_.heads);
    b.conv.norm = init.norm(p + ".conv.norm", D);
    b.conv.pointwise_in = init.linear(p + ".conv.pointwise_in", D, 2 * D);
    b.conv.depthwise_weight =
        init.uniform(p + ".conv.depthwise.weight", {D, static_cast<std::size_t>(config_.conv_kernel)}, dw_limit);
    b.conv.depthwise_bias = init.constant(p + ".conv.depthwise.bias", {D}, 0.0);
    b.conv.depthwise_norm = init.norm(p + ".conv.depthwise_norm", D);
    b.conv.pointwise_out = init.linear(p + ".conv.pointwise_out", D, D);
    b.ffn = init.ffn(p + ".ffn", D, static_cast<std::size_t>(config_.ffn_dim), true);
    b.final_norm = init.norm(p + ".final_norm", D);
    encoder_.push_back(std::move(b));
  }
  ctc_out_ = init.linear("ctc.output", D, V);
  asr_decoder_ = init.decoder("asr_decoder", config_, config_.dec_layers, V);
  if (config_.use_ld)
    ld_decoder_ = std::make_unique<TransformerDecoder>(
        init.decoder("ld_decoder", config_, config_.ld_layers, static_cast<std::size_t>(config_.ld_vocab_size)));
  if (config_.use_lpb)
    lpb_projection_ = init.linear("lpb.projection", D + static_cast<std::size_t>(config_.ld_vocab_size), D);
}

Tensor Model::encode(const Tensor& features, const ForwardContext& ctx) const {
  if (features.dim() != 2 || features.size(1) != static_cast<std::size_t>(config_.feat_dim))
    throw ShapeError("encode: features must be [T," + std::to_string(config_.feat_dim) + "], got " +
                     shape_str(features.shape()));
  const std::size_t T = features.size(0);
  if (T < static_cast<std::size_t>(config_.subsample_factor))
    throw std::invalid_argument("encode: " + std::to_string(T) + " frames is shorter than the subsampling factor " +
                                std::to_string(config_.subsample_factor));
  Tensor x = reshape(features, {T, features.size(1), 1});
  for (std::size_t i = 0; i < sub_conv_weight_.size(); ++i) x = relu(conv2d(x, sub_conv_weight_[i], sub_conv_bias_[i], 2, 1));
  const std::size_t T1 = x.size(0);
  x = sub_out_(reshape(x, {T1, x.numel() / T1}));
  const auto D = static_cast<std::size_t>(config_.d_model);
  x = add(scale(x, std::sqrt(static_cast<double>(D))), positional_encoding(T1, D));
  if (ctx.train && ctx.rng) x = dropout(x, config_.dropout, *ctx.rng, true);
  for (const auto& block : encoder_) x = block(x, config_.dropout, ctx);
  return x;
}

Tensor Model::ctc_log_probs(const Tensor& encoded) const { return log_softmax(ctc_out_(encoded)); }

Tensor Model::asr_embed(std::span<const int> ids) const { return embedding(asr_decoder_.embedding, ids); }

Tensor Model::lpb_augment(const Tensor& embeddings, const Tensor& ld_posteriors) const {
  if (!config_.use_lpb) throw std::logic_error("lpb_augment: model built without use_lpb");
  if (embeddings.size(0) != ld_posteriors.size(0))
    throw ShapeError("lpb_augment: " + std::to_string(embeddings.size(0)) + " embeddings vs " +
                     std::to_string(ld_posteriors.size(0)) + " posterior rows");
  return lpb_projection_(concat({embeddings, ld_posteriors}));
}

Tensor Model::asr_decoder_logits(const Tensor& input_embeddings, const Tensor& encoded,
                                 const ForwardContext& ctx) const {
  if (!input_embeddings.defined() || input_embeddings.dim() != 2 ||
      input_embeddings.size(1) != static_cast<std::size_t>(config_.d_model))
    throw ShapeError("asr_decoder_logits: input embeddings must be [n," + std::to_string(config_.d_model) + "]");
  if (input_embeddings.size(0) == 0) throw std::invalid_argument("asr_decoder_logits: empty prefix");
  return asr_decoder_(input_embeddings, encoded, true, ctx, config_.dropout);
}

Tensor Model::ld_decoder_logits(std::span<const int> ids, const Tensor& encoded, bool causal,
                                const ForwardContext& ctx) const {
  if (!ld_decoder_) throw std::logic_error("ld_decoder_logits: model has no LD decoder");
  ++ld_forward_count_;
  return (*ld_decoder_)(embedding(ld_decoder_->embedding, ids), encoded, causal, ctx, config_.dropout);
}

LossTensors Model::compute_losses(const Utterance& utt, const ForwardContext& ctx) const {
  if (utt.tokens.size() < 2) throw DataError("utterance " + utt.id + " lacks sos/eos framing");
  LossTensors out;
  const Tensor encoded = encode(features_tensor(utt), ctx);

  const std::vector<int> target = utt.target();
  const double ctc_norm = static_cast<double>(std::max<std::size_t>(1, target.size()));
  out.ctc = scale(ctc_loss(ctc_log_probs(encoded), target, config_.blank_id, &out.ctc_infeasible), 1.0 / ctc_norm);

  const std::vector<int> dec_in(utt.tokens.begin(), utt.tokens.end() - 1);
  const std::vector<int> dec_out(utt.tokens.begin() + 1, utt.tokens.end());

  Tensor posteriors;
  if (ld_decoder_) {
    Tensor ld_memory = encoded;
    if (config_.use_grl) ld_memory = gradient_reversal(encoded, config_.grl_lambda);
    if (config_.lpb_stop_gradient) ld_memory = stop_gradient(encoded);
    const Tensor ld_logits = ld_decoder_logits(dec_in, ld_memory, !config_.ld_full_context, ctx);
    std::vector<int> ld_targets;
    ld_targets.reserve(dec_in.size());
    for (std::size_t i = 0; i < dec_in.size(); ++i) ld_targets.push_back(static_cast<int>(utt.ld_labels[i]));
    out.ld = label_smoothed_ce(ld_logits, ld_targets, config_.label_smoothing);
    if (config_.use_lpb) {
      posteriors = softmax(ld_logits);
      if (config_.lpb_stop_gradient) posteriors = stop_gradient(posteriors);
    }
  }

  Tensor emb = asr_embed(dec_in);
  if (config_.use_lpb) emb = lpb_augment(emb, posteriors);
  out.att = label_smoothed_ce(asr_decoder_logits(emb, encoded, ctx), dec_out, config_.label_smoothing);

  out.total = ld_decoder_ ? joint_loss(out.ctc, out.att, out.ld, config_.alpha, config_.beta)
                          : asr_loss(out.ctc, out.att, config_.alpha);
  return out;
}

// ---- persistence ------------------------------------------------------------

void save_model(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra_meta) {
  CheckpointFile ckpt;
  ckpt.meta = extra_meta.is_object() ? extra_meta : nlohmann::json::object();
  ckpt.meta["model_config"] = model.config();
  ckpt.tensors = model.params().snapshot();
  save_checkpoint(path, ckpt);
}

ModelConfig read_model_config(const CheckpointFile& ckpt) {
  if (!ckpt.meta.contains("model_config")) throw DataError("checkpoint has no embedded model_config");
  return ckpt.meta.at("model_config").get<ModelConfig>();
}

std::unique_ptr<Model> load_model(const std::filesystem::path& path) {
  CheckpointFile ckpt;
  try {
    ckpt = load_checkpoint(path);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  auto model = std::make_unique<Model>(read_model_config(ckpt), 0);
  try {
    model->params().load(ckpt.tensors);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  return model;
}

}  // namespace csasr
