#pragma once

// Hybrid CTC/attention network with an auxiliary language-diarization (LD)
// decoder.
//
//   features -> conv2d subsampling -> conformer blocks -> H
//   H -> linear -> log-softmax                      (CTC head)
//   H, [sos, w1..wN] -> causal transformer decoder  (ASR decoder)
//   H, [sos, w1..wN] -> transformer decoder         (LD decoder, 4 labels)
//
// The LD decoder runs either with full self-attention context or causally.
// With language-posterior bias (LPB) each ASR-decoder input embedding is
// concatenated with the LD posterior of the same position and projected back
// to width D. With gradient reversal (GRL) the LD decoder reads H through a
// layer that negates and scales gradients on the way back.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "csasr/checkpoint.hpp"
#include "csasr/corpus.hpp"
#include "csasr/ops.hpp"

namespace csasr {

struct ModelConfig {
  int d_model = 64;
  int heads = 4;
  int enc_layers = 4;
  int dec_layers = 2;
  int ld_layers = 2;
  int ffn_dim = 256;
  int conv_kernel = 7;
  int subsample_factor = 4;
  int feat_dim = 16;
  int vocab_size = 44;
  int ld_vocab_size = kLdVocabSize;
  int blank_id = 0;
  int sos_eos_id = 3;
  double alpha = 0.3;
  double beta = 0.0;
  bool use_ld = false;
  bool ld_full_context = true;
  bool use_lpb = false;
  bool use_grl = false;
  double grl_lambda = 1.0;
  // Isolates the LD branch: LD posteriors reach the ASR decoder without a
  // backward path, and the LD decoder reads H without one either.
  bool lpb_stop_gradient = false;
  double dropout = 0.1;
  double label_smoothing = 0.1;

  // Throws ConfigError.
  void validate() const;
  // Widths and depths of the large published configuration.
  static ModelConfig full_scale();
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;
};

// ---- building blocks -------------------------------------------------------

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }
};

struct LayerNormParams {
  Tensor gamma, beta;
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

struct MultiHeadAttention {
  Linear query, key, value, out;
  int heads = 1;
  // query_in [n,D], memory [m,D]; mask is n*m bytes (nonzero = blocked) or empty.
  Tensor operator()(const Tensor& query_in, const Tensor& memory, std::span<const std::uint8_t> mask,
                    double dropout_rate, const ForwardContext& ctx) const;
};

struct FeedForward {
  LayerNormParams norm;
  Linear in, out;
  bool use_swish = true;  // relu otherwise
  Tensor operator()(const Tensor& x, double dropout_rate, const ForwardContext& ctx) const;
};

struct ConvModule {
  LayerNormParams norm;
  Linear pointwise_in;  // D -> 2D, followed by GLU
  Tensor depthwise_weight, depthwise_bias;
  LayerNormParams depthwise_norm;
  Linear pointwise_out;
  Tensor operator()(const Tensor& x, double dropout_rate, const ForwardContext& ctx) const;
};

struct ConformerBlock {
  FeedForward ffn_macaron;
  LayerNormParams attn_norm;
  MultiHeadAttention attn;
  ConvModule conv;
  FeedForward ffn;
  LayerNormParams final_norm;
  Tensor operator()(const Tensor& x, double dropout_rate, const ForwardContext& ctx) const;
};

struct DecoderLayer {
  LayerNormParams self_norm;
  MultiHeadAttention self_attn;
  LayerNormParams src_norm;
  MultiHeadAttention src_attn;
  FeedForward ffn;
  Tensor operator()(const Tensor& x, const Tensor& memory, std::span<const std::uint8_t> self_mask,
                    double dropout_rate, const ForwardContext& ctx) const;
};

struct TransformerDecoder {
  Tensor embedding;  // [V, D]
  std::vector<DecoderLayer> layers;
  LayerNormParams after_norm;
  Linear output;
  // input [n,D] (already embedded), memory H [T1,D] -> logits [n, out]
  Tensor operator()(const Tensor& input, const Tensor& memory, bool causal, const ForwardContext& ctx,
                    double dropout_rate) const;
};

// Per-utterance loss terms as graph nodes. `ld` is undefined without an LD decoder.
struct LossTensors {
  Tensor ctc, att, ld, total;
  bool ctc_infeasible = false;
};

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // features [T,F] -> H [T1,D]. Throws std::invalid_argument when T < subsample_factor.
  Tensor encode(const Tensor& features, const ForwardContext& ctx) const;
  // H -> per-frame log-probabilities [T1,V], blank included.
  Tensor ctc_log_probs(const Tensor& encoded) const;

  // Raw ASR-decoder embedding rows [n,D].
  Tensor asr_embed(std::span<const int> ids) const;
  // Concatenates [n,D] with [n,V^ld] and projects back to [n,D].
  Tensor lpb_augment(const Tensor& embeddings, const Tensor& ld_posteriors) const;
  // Causal ASR decoder over already-embedded inputs; logits [n,V].
  Tensor asr_decoder_logits(const Tensor& input_embeddings, const Tensor& encoded, const ForwardContext& ctx) const;
  // LD decoder logits [n,V^ld].
  Tensor ld_decoder_logits(std::span<const int> ids, const Tensor& encoded, bool causal,
                           const ForwardContext& ctx) const;

  // Teacher-forced training objective for one utterance.
  LossTensors compute_losses(const Utterance& utt, const ForwardContext& ctx) const;

  // Number of LD decoder forward passes since construction.
  long ld_forward_count() const { return ld_forward_count_.load(); }

  bool has_ld_decoder() const { return ld_decoder_ != nullptr; }

 private:
  ModelConfig config_;
  ParameterStore params_;
  // Subsampling
  std::vector<Tensor> sub_conv_weight_, sub_conv_bias_;
  Linear sub_out_;
  std::vector<ConformerBlock> encoder_;
  Linear ctc_out_;
  TransformerDecoder asr_decoder_;
  std::unique_ptr<TransformerDecoder> ld_decoder_;
  Linear lpb_projection_;
  mutable std::atomic<long> ld_forward_count_{0};
};

// Sinusoidal absolute positional encoding, [n, d].
Tensor positional_encoding(std::size_t n, std::size_t d);

Tensor features_tensor(const Utterance& utt);

void save_model(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra_meta = {});
std::unique_ptr<Model> load_model(const std::filesystem::path& path);
ModelConfig read_model_config(const CheckpointFile& ckpt);

}  // namespace csasr
