#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "voltcast/data.hpp"
#include "voltcast/ops.hpp"
#include "voltcast/rng.hpp"
#include "voltcast/tensor.hpp"

namespace voltcast {

// Encoder-decoder forecaster: input embedding with sinusoidal positional
// encoding, importance self-attention, a distilling encoder that halves the
// sequence length after every layer but the last, and a generative decoder
// that emits the whole horizon in one forward pass.
struct TransformerConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_encoder_layers = 3;
  std::size_t n_decoder_layers = 2;
  std::size_t d_ff = 128;
  std::size_t input_len = 96;
  std::size_t horizon = 24;
  std::size_t label_len = 24;
  double importance_factor = 5.0;  // queries kept: ceil(c * ln L)
  double dropout = 0.05;
  std::size_t n_features = 1;
  std::size_t target_col = 0;

  void validate() const;
};

struct AttentionBlockParams {
  Tensor wq, wk, wv, wo;        // [d_model x d_model]
  Tensor ln1_gain, ln1_bias;    // after attention residual
  Tensor ln2_gain, ln2_bias;    // after feed-forward residual
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

struct CrossBlockParams {
  AttentionBlockParams self;    // masked self-attention + feed-forward
  Tensor cq, ck, cv, co;        // cross-attention projections
  Tensor lnc_gain, lnc_bias;    // after cross-attention residual
};

struct ConvDistillParams {
  Tensor w;  // [3 x d_model x d_model]
  Tensor b;  // [d_model]
};

struct TransformerParams {
  Tensor embed_w;      // [n_features x d_model], bias-free
  Tensor dec_embed_w;  // [1 x d_model], bias-free
  Tensor pos_table;    // [max_pos x d_model], fixed sinusoids, not trained
  std::vector<AttentionBlockParams> encoder;
  std::vector<ConvDistillParams> distill;  // n_encoder_layers - 1
  std::vector<CrossBlockParams> decoder;
  Tensor out_w;  // [d_model x 1]
  Tensor out_b;  // [1]

  static TransformerParams init(const TransformerConfig& cfg, Rng& rng);

  // Trainable tensors in the declared checkpoint order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters();
};

struct EncoderOutput {
  Tensor memory;                        // [L_final x d_model]
  std::vector<std::size_t> layer_lens;  // input length of every layer
};

enum class AttentionKind { Importance, Full };

// Sequence lengths entering each encoder layer under ceil-halving; the
// encoder records exactly these.
std::vector<std::size_t> encoder_layer_lengths(std::size_t input_len,
                                               std::size_t n_layers);

Tensor positional_encoding(std::size_t max_pos, std::size_t d_model);

// Linear projection of the feature window plus positional encoding.
Tensor embed(Tape& tape, const TransformerParams& params,
             const TransformerConfig& cfg, const Tensor& window);

// Scaled dot-product attention computed exactly for the top-u queries ranked
// by max-minus-mean of raw scores over an evenly spaced key sample of size
// 5*ln(L); remaining queries emit the per-head mean of values.
// u = min(L, max(1, ceil(c * ln L))).
Tensor importance_attention(Tape& tape, const Tensor& queries,
                            const Tensor& keys, const Tensor& values,
                            std::size_t n_heads, double importance_factor);

// Exact multi-head attention; mask (if defined) is added to the scores of
// every head.
Tensor full_attention(Tape& tape, const Tensor& queries, const Tensor& keys,
                      const Tensor& values, std::size_t n_heads,
                      const Tensor& mask = {});

// One attention block then conv(3, same-pad) -> ELU -> max-pool(3,2,1),
// halving the length (ceil for odd lengths).
Tensor distill_layer(Tape& tape, const TransformerParams& params,
                     const TransformerConfig& cfg, const Tensor& x,
                     std::size_t layer, Rng* dropout_rng);

EncoderOutput encode(Tape& tape, const TransformerParams& params,
                     const TransformerConfig& cfg, const Tensor& window,
                     Rng* dropout_rng = nullptr);

// Benchmark hook: choose the attention flavour and whether distillation
// (conv + pool) runs between layers.
EncoderOutput encode_variant(Tape& tape, const TransformerParams& params,
                             const TransformerConfig& cfg,
                             const Tensor& window, AttentionKind kind,
                             bool distill, Rng* dropout_rng = nullptr);

// One forward pass emits all horizon steps; the seed is label_prefix (the
// last label_len known target values) followed by placeholder_count zero
// placeholders. placeholder_count must equal cfg.horizon.
Tensor generative_decode(Tape& tape, const TransformerParams& params,
                         const TransformerConfig& cfg,
                         const EncoderOutput& enc,
                         const std::vector<double>& label_prefix,
                         std::size_t placeholder_count,
                         Rng* dropout_rng = nullptr);

// encode + generative_decode over a standardized window; returns [horizon].
Tensor forward(Tape& tape, const TransformerParams& params,
               const TransformerConfig& cfg, const Tensor& window,
               Rng* dropout_rng = nullptr);

std::vector<double> predict(const TransformerParams& params,
                            const TransformerConfig& cfg,
                            const WindowSample& sample);

struct TrainOptions {
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  std::size_t batch_size = 32;
  double lr = 1e-4;
};

struct EpochStats {
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct FitResult {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // 0-based index into epochs
};

// Adam on the horizon MSE with early stopping on validation MSE; the
// best-validation parameter values are restored before returning. With an
// empty validation set, early stopping is driven by training MSE.
FitResult fit_transformer(TransformerParams& params,
                          const TransformerConfig& cfg,
                          const std::vector<WindowSample>& train,
                          const std::vector<WindowSample>& val,
                          const TrainOptions& opts, Rng& rng);

double mean_window_mse(const TransformerParams& params,
                       const TransformerConfig& cfg,
                       const std::vector<WindowSample>& samples);

}  // namespace voltcast
