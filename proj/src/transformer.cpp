#include "voltcast/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "voltcast/errors.hpp"
#include "voltcast/optim.hpp"

namespace voltcast {

namespace {

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

AttentionBlockParams init_block(std::size_t d_model, std::size_t d_ff,
                                Rng& rng) {
  AttentionBlockParams b;
  b.wq = glorot({d_model, d_model}, d_model, d_model, rng);
  b.wk = glorot({d_model, d_model}, d_model, d_model, rng);
  b.wv = glorot({d_model, d_model}, d_model, d_model, rng);
  b.wo = glorot({d_model, d_model}, d_model, d_model, rng);
  b.ln1_gain = Tensor::full({d_model}, 1.0, true);
  b.ln1_bias = Tensor::zeros({d_model}, true);
  b.ln2_gain = Tensor::full({d_model}, 1.0, true);
  b.ln2_bias = Tensor::zeros({d_model}, true);
  b.ff_w1 = glorot({d_model, d_ff}, d_model, d_ff, rng);
  b.ff_b1 = Tensor::zeros({d_ff}, true);
  b.ff_w2 = glorot({d_ff, d_model}, d_ff, d_model, rng);
  b.ff_b2 = Tensor::zeros({d_model}, true);
  return b;
}

void collect_block(const std::string& prefix, const AttentionBlockParams& b,
                   std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".wq", b.wq);
  out.emplace_back(prefix + ".wk", b.wk);
  out.emplace_back(prefix + ".wv", b.wv);
  out.emplace_back(prefix + ".wo", b.wo);
  out.emplace_back(prefix + ".ln1_gain", b.ln1_gain);
  out.emplace_back(prefix + ".ln1_bias", b.ln1_bias);
  out.emplace_back(prefix + ".ln2_gain", b.ln2_gain);
  out.emplace_back(prefix + ".ln2_bias", b.ln2_bias);
  out.emplace_back(prefix + ".ff_w1", b.ff_w1);
  out.emplace_back(prefix + ".ff_b1", b.ff_b1);
  out.emplace_back(prefix + ".ff_w2", b.ff_w2);
  out.emplace_back(prefix + ".ff_b2", b.ff_b2);
}

Tensor maybe_dropout(Tape& tape, const Tensor& x, double rate,
                     Rng* dropout_rng) {
  if (!dropout_rng || rate <= 0.0) return x;
  return dropout(tape, x, rate, *dropout_rng);
}

// Residual attention sublayer + feed-forward sublayer with post-norm.
Tensor encoder_block(Tape& tape, const AttentionBlockParams& p,
                     const TransformerConfig& cfg, const Tensor& x,
                     AttentionKind kind, Rng* dropout_rng) {
  Tensor q = matmul(tape, x, p.wq);
  Tensor k = matmul(tape, x, p.wk);
  Tensor v = matmul(tape, x, p.wv);
  Tensor attn = kind == AttentionKind::Importance
                    ? importance_attention(tape, q, k, v, cfg.n_heads,
                                           cfg.importance_factor)
                    : full_attention(tape, q, k, v, cfg.n_heads);
  Tensor projected = maybe_dropout(tape, matmul(tape, attn, p.wo), cfg.dropout,
                                   dropout_rng);
  Tensor x1 = layer_norm(tape, add(tape, x, projected), p.ln1_gain, p.ln1_bias);
  Tensor h = gelu(tape, add_rowvec(tape, matmul(tape, x1, p.ff_w1), p.ff_b1));
  Tensor ff = add_rowvec(tape, matmul(tape, h, p.ff_w2), p.ff_b2);
  Tensor ff_dropped = maybe_dropout(tape, ff, cfg.dropout, dropout_rng);
  return layer_norm(tape, add(tape, x1, ff_dropped), p.ln2_gain, p.ln2_bias);
}

Tensor causal_mask(std::size_t n) {
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = -1e30;
  }
  return Tensor::from({n, n}, std::move(m), false);
}

}  // namespace

void TransformerConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw UsageError("config: d_model must be a positive multiple of n_heads");
  }
  if (n_encoder_layers == 0 || n_decoder_layers == 0) {
    throw UsageError("config: need at least one encoder and one decoder layer");
  }
  if (input_len == 0 || horizon == 0 || n_features == 0) {
    throw UsageError("config: input_len, horizon and n_features must be positive");
  }
  if (n_encoder_layers > 1 &&
      (input_len >> (n_encoder_layers - 1)) == 0) {
    throw UsageError("config: input_len " + std::to_string(input_len) +
                     " cannot support " + std::to_string(n_encoder_layers) +
                     " halving layers");
  }
  if (label_len > input_len) {
    throw UsageError("config: label_len must not exceed input_len");
  }
  if (target_col >= n_features) {
    throw UsageError("config: target_col out of range");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw UsageError("config: dropout must be in [0, 1)");
  }
  if (importance_factor <= 0.0) {
    throw UsageError("config: importance_factor must be positive");
  }
}

std::vector<std::size_t> encoder_layer_lengths(std::size_t input_len,
                                               std::size_t n_layers) {
  std::vector<std::size_t> lens;
  lens.reserve(n_layers);
  std::size_t len = input_len;
  for (std::size_t j = 0; j < n_layers; ++j) {
    lens.push_back(len);
    len = (len + 1) / 2;  // ceil(len / 2), the pool geometry guarantees it
  }
  return lens;
}

Tensor positional_encoding(std::size_t max_pos, std::size_t d_model) {
  std::vector<double> table(max_pos * d_model);
  for (std::size_t pos = 0; pos < max_pos; ++pos) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double exponent =
          static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, exponent);
      table[pos * d_model + i] = (i % 2 == 0) ? std::sin(angle)
                                              : std::cos(angle);
    }
  }
  return Tensor::from({max_pos, d_model}, std::move(table), false);
}

TransformerParams TransformerParams::init(const TransformerConfig& cfg,
                                          Rng& rng) {
  cfg.validate();
  TransformerParams p;
  p.embed_w = glorot({cfg.n_features, cfg.d_model}, cfg.n_features,
                     cfg.d_model, rng);
  p.dec_embed_w = glorot({1, cfg.d_model}, 1, cfg.d_model, rng);
  const std::size_t max_pos =
      std::max(cfg.input_len, cfg.label_len + cfg.horizon);
  p.pos_table = positional_encoding(max_pos, cfg.d_model);
  for (std::size_t j = 0; j < cfg.n_encoder_layers; ++j) {
    p.encoder.push_back(init_block(cfg.d_model, cfg.d_ff, rng));
    if (j + 1 < cfg.n_encoder_layers) {
      ConvDistillParams c;
      c.w = glorot({3, cfg.d_model, cfg.d_model}, 3 * cfg.d_model, cfg.d_model,
                   rng);
      c.b = Tensor::zeros({cfg.d_model}, true);
      p.distill.push_back(std::move(c));
    }
  }
  for (std::size_t j = 0; j < cfg.n_decoder_layers; ++j) {
    CrossBlockParams c;
    c.self = init_block(cfg.d_model, cfg.d_ff, rng);
    c.cq = glorot({cfg.d_model, cfg.d_model}, cfg.d_model, cfg.d_model, rng);
    c.ck = glorot({cfg.d_model, cfg.d_model}, cfg.d_model, cfg.d_model, rng);
    c.cv = glorot({cfg.d_model, cfg.d_model}, cfg.d_model, cfg.d_model, rng);
    c.co = glorot({cfg.d_model, cfg.d_model}, cfg.d_model, cfg.d_model, rng);
    c.lnc_gain = Tensor::full({cfg.d_model}, 1.0, true);
    c.lnc_bias = Tensor::zeros({cfg.d_model}, true);
    p.decoder.push_back(std::move(c));
  }
  p.out_w = glorot({cfg.d_model, 1}, cfg.d_model, 1, rng);
  p.out_b = Tensor::zeros({1}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>>
TransformerParams::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embed_w", embed_w);
  out.emplace_back("dec_embed_w", dec_embed_w);
  for (std::size_t j = 0; j < encoder.size(); ++j) {
    collect_block("encoder." + std::to_string(j), encoder[j], out);
  }
  for (std::size_t j = 0; j < distill.size(); ++j) {
    out.emplace_back("distill." + std::to_string(j) + ".w", distill[j].w);
    out.emplace_back("distill." + std::to_string(j) + ".b", distill[j].b);
  }
  for (std::size_t j = 0; j < decoder.size(); ++j) {
    const std::string prefix = "decoder." + std::to_string(j);
    collect_block(prefix + ".self", decoder[j].self, out);
    out.emplace_back(prefix + ".cq", decoder[j].cq);
    out.emplace_back(prefix + ".ck", decoder[j].ck);
    out.emplace_back(prefix + ".cv", decoder[j].cv);
    out.emplace_back(prefix + ".co", decoder[j].co);
    out.emplace_back(prefix + ".lnc_gain", decoder[j].lnc_gain);
    out.emplace_back(prefix + ".lnc_bias", decoder[j].lnc_bias);
  }
  out.emplace_back("out_w", out_w);
  out.emplace_back("out_b", out_b);
  return out;
}

std::vector<std::pair<std::string, Tensor>>
TransformerParams::named_parameters() {
  return static_cast<const TransformerParams*>(this)->named_parameters();
}

Tensor embed(Tape& tape, const TransformerParams& params,
             const TransformerConfig& cfg, const Tensor& window) {
  if (window.rank() != 2 || window.dim(1) != cfg.n_features) {
    throw UsageError("embed: window " + shape_str(window.shape()) +
                     " does not match the configured feature count " +
                     std::to_string(cfg.n_features));
  }
  const std::size_t len = window.dim(0);
  Tensor projected = matmul(tape, window, params.embed_w);
  Tensor pos = slice_rows(tape, params.pos_table, 0, len);
  return add(tape, projected, pos);
}

Tensor full_attention(Tape& tape, const Tensor& queries, const Tensor& keys,
                      const Tensor& values, std::size_t n_heads,
                      const Tensor& mask) {
  const std::size_t d_model = queries.dim(1);
  if (d_model % n_heads != 0 || keys.dim(1) != d_model ||
      values.dim(1) != d_model) {
    throw UsageError("full_attention: inconsistent widths");
  }
  const std::size_t dk = d_model / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(tape, queries, h * dk, (h + 1) * dk);
    Tensor kh = slice_cols(tape, keys, h * dk, (h + 1) * dk);
    Tensor vh = slice_cols(tape, values, h * dk, (h + 1) * dk);
    Tensor scores = scale(tape, matmul_bt(tape, qh, kh), inv_scale);
    if (mask.defined()) scores = add(tape, scores, mask);
    Tensor probs = softmax(tape, scores, -1);
    heads.push_back(matmul(tape, probs, vh));
  }
  return n_heads == 1 ? heads[0] : concat_cols(tape, heads);
}

Tensor importance_attention(Tape& tape, const Tensor& queries,
                            const Tensor& keys, const Tensor& values,
                            std::size_t n_heads, double importance_factor) {
  const std::size_t len = queries.dim(0);
  const std::size_t d_model = queries.dim(1);
  if (len == 0) throw UsageError("importance_attention: empty sequence");
  if (d_model % n_heads != 0 || keys.dim(1) != d_model ||
      values.dim(1) != d_model || keys.dim(0) != len ||
      values.dim(0) != len) {
    throw UsageError("importance_attention: inconsistent shapes");
  }
  const double log_len = std::log(static_cast<double>(len));
  const std::size_t kept = std::min<std::size_t>(
      len, std::max<std::size_t>(
               1, static_cast<std::size_t>(
                      std::ceil(importance_factor * log_len))));
  const std::size_t sampled = std::min<std::size_t>(
      len,
      std::max<std::size_t>(
          1, static_cast<std::size_t>(std::ceil(5.0 * log_len))));

  const std::size_t dk = d_model / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dk));

  // evenly spaced deterministic key sample
  std::vector<std::size_t> key_sample(sampled);
  for (std::size_t j = 0; j < sampled; ++j) {
    key_sample[j] = j * len / sampled;
  }

  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  const auto& qv = queries.values();
  const auto& kv = keys.values();
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * dk;

    // query importance: max-over-keys minus mean-over-keys of the raw dot
    // products on the sampled keys. Plain arrays; selection takes no
    // gradient.
    std::vector<std::pair<double, std::size_t>> ranked(len);
    for (std::size_t i = 0; i < len; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      double sum = 0.0;
      for (std::size_t s : key_sample) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dk; ++c) {
          dot += qv[i * d_model + off + c] * kv[s * d_model + off + c];
        }
        mx = std::max(mx, dot);
        sum += dot;
      }
      const double score = mx - sum / static_cast<double>(sampled);
      ranked[i] = {-score, i};  // ascending sort -> best first, ties by index
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<std::size_t> top(kept);
    for (std::size_t i = 0; i < kept; ++i) top[i] = ranked[i].second;
    std::sort(top.begin(), top.end());

    Tensor qh = slice_cols(tape, queries, off, off + dk);
    Tensor kh = slice_cols(tape, keys, off, off + dk);
    Tensor vh = slice_cols(tape, values, off, off + dk);

    Tensor base = broadcast_row(tape, mean_over_rows(tape, vh), len);
    if (kept == len) {
      Tensor scores = scale(tape, matmul_bt(tape, qh, kh), inv_scale);
      Tensor probs = softmax(tape, scores, -1);
      heads.push_back(matmul(tape, probs, vh));
      continue;
    }
    Tensor q_sel = gather_rows(tape, qh, top);
    Tensor scores = scale(tape, matmul_bt(tape, q_sel, kh), inv_scale);
    Tensor probs = softmax(tape, scores, -1);
    Tensor ctx = matmul(tape, probs, vh);
    heads.push_back(scatter_rows(tape, base, ctx, top));
  }
  return n_heads == 1 ? heads[0] : concat_cols(tape, heads);
}

Tensor distill_layer(Tape& tape, const TransformerParams& params,
                     const TransformerConfig& cfg, const Tensor& x,
                     std::size_t layer, Rng* dropout_rng) {
  Tensor y = encoder_block(tape, params.encoder.at(layer), cfg, x,
                           AttentionKind::Importance, dropout_rng);
  const ConvDistillParams& c = params.distill.at(layer);
  Tensor conv = conv1d(tape, y, c.w, c.b, 1, 1);
  return max_pool1d(tape, elu(tape, conv), 3, 2, 1);
}

EncoderOutput encode_variant(Tape& tape, const TransformerParams& params,
                             const TransformerConfig& cfg,
                             const Tensor& window, AttentionKind kind,
                             bool distill, Rng* dropout_rng) {
  Tensor x = embed(tape, params, cfg, window);
  EncoderOutput out;
  out.layer_lens.push_back(x.dim(0));
  const std::size_t k = cfg.n_encoder_layers;
  for (std::size_t j = 0; j + 1 < k; ++j) {
    x = encoder_block(tape, params.encoder[j], cfg, x, kind, dropout_rng);
    if (distill) {
      const ConvDistillParams& c = params.distill[j];
      Tensor conv = conv1d(tape, x, c.w, c.b, 1, 1);
      x = max_pool1d(tape, elu(tape, conv), 3, 2, 1);
    }
    out.layer_lens.push_back(x.dim(0));
  }
  x = encoder_block(tape, params.encoder[k - 1], cfg, x, kind, dropout_rng);
  out.memory = x;
  return out;
}

EncoderOutput encode(Tape& tape, const TransformerParams& params,
                     const TransformerConfig& cfg, const Tensor& window,
                     Rng* dropout_rng) {
  if (window.dim(0) != cfg.input_len) {
    throw UsageError("encode: window length " + std::to_string(window.dim(0)) +
                     " does not match configured input_len " +
                     std::to_string(cfg.input_len));
  }
  return encode_variant(tape, params, cfg, window, AttentionKind::Importance,
                        true, dropout_rng);
}

Tensor generative_decode(Tape& tape, const TransformerParams& params,
                         const TransformerConfig& cfg,
                         const EncoderOutput& enc,
                         const std::vector<double>& label_prefix,
                         std::size_t placeholder_count, Rng* dropout_rng) {
  if (placeholder_count != cfg.horizon) {
    throw UsageError("generative_decode: placeholder count " +
                     std::to_string(placeholder_count) +
                     " must equal the configured horizon " +
                     std::to_string(cfg.horizon));
  }
  if (label_prefix.size() != cfg.label_len) {
    throw UsageError("generative_decode: label prefix length " +
                     std::to_string(label_prefix.size()) +
                     " must equal label_len " + std::to_string(cfg.label_len));
  }
  const std::size_t seq = cfg.label_len + cfg.horizon;
  std::vector<double> seed(seq, 0.0);
  std::copy(label_prefix.begin(), label_prefix.end(), seed.begin());
  Tensor seed_t = Tensor::from({seq, 1}, std::move(seed), false);
  Tensor x = add(tape, matmul(tape, seed_t, params.dec_embed_w),
                 slice_rows(tape, params.pos_table, 0, seq));

  Tensor mask = causal_mask(seq);
  for (const CrossBlockParams& blk : params.decoder) {
    // masked self-attention
    Tensor q = matmul(tape, x, blk.self.wq);
    Tensor k = matmul(tape, x, blk.self.wk);
    Tensor v = matmul(tape, x, blk.self.wv);
    Tensor sa = full_attention(tape, q, k, v, cfg.n_heads, mask);
    Tensor sa_proj =
        maybe_dropout(tape, matmul(tape, sa, blk.self.wo), cfg.dropout,
                      dropout_rng);
    x = layer_norm(tape, add(tape, x, sa_proj), blk.self.ln1_gain,
                   blk.self.ln1_bias);

    // cross-attention to the encoder memory
    Tensor cq_t = matmul(tape, x, blk.cq);
    Tensor ck_t = matmul(tape, enc.memory, blk.ck);
    Tensor cv_t = matmul(tape, enc.memory, blk.cv);
    Tensor ca = full_attention(tape, cq_t, ck_t, cv_t, cfg.n_heads);
    Tensor ca_proj =
        maybe_dropout(tape, matmul(tape, ca, blk.co), cfg.dropout, dropout_rng);
    x = layer_norm(tape, add(tape, x, ca_proj), blk.lnc_gain, blk.lnc_bias);

    // feed-forward
    Tensor h =
        gelu(tape, add_rowvec(tape, matmul(tape, x, blk.self.ff_w1),
                              blk.self.ff_b1));
    Tensor ff = add_rowvec(tape, matmul(tape, h, blk.self.ff_w2),
                           blk.self.ff_b2);
    Tensor ff_dropped = maybe_dropout(tape, ff, cfg.dropout, dropout_rng);
    x = layer_norm(tape, add(tape, x, ff_dropped), blk.self.ln2_gain,
                   blk.self.ln2_bias);
  }
  Tensor projected = add_rowvec(tape, matmul(tape, x, params.out_w),
                                params.out_b);
  Tensor horizon_rows =
      slice_rows(tape, projected, cfg.label_len, seq);
  return reshape(tape, horizon_rows, {cfg.horizon});
}

Tensor forward(Tape& tape, const TransformerParams& params,
               const TransformerConfig& cfg, const Tensor& window,
               Rng* dropout_rng) {
  EncoderOutput enc = encode(tape, params, cfg, window, dropout_rng);
  std::vector<double> labels(cfg.label_len);
  const auto& wv = window.values();
  for (std::size_t i = 0; i < cfg.label_len; ++i) {
    const std::size_t row = cfg.input_len - cfg.label_len + i;
    labels[i] = wv[row * cfg.n_features + cfg.target_col];
  }
  return generative_decode(tape, params, cfg, enc, labels, cfg.horizon,
                           dropout_rng);
}

std::vector<double> predict(const TransformerParams& params,
                            const TransformerConfig& cfg,
                            const WindowSample& sample) {
  Tape tape = Tape::inference();
  Tensor window = Tensor::from({sample.input_len, sample.n_features},
                               sample.input, false);
  return forward(tape, params, cfg, window).values();
}

double mean_window_mse(const TransformerParams& params,
                       const TransformerConfig& cfg,
                       const std::vector<WindowSample>& samples) {
  double total = 0.0;
  std::size_t count = 0;
  for (const WindowSample& s : samples) {
    const std::vector<double> yhat = predict(params, cfg, s);
    for (std::size_t h = 0; h < yhat.size(); ++h) {
      const double r = yhat[h] - s.target[h];
      total += r * r;
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

FitResult fit_transformer(TransformerParams& params,
                          const TransformerConfig& cfg,
                          const std::vector<WindowSample>& train,
                          const std::vector<WindowSample>& val,
                          const TrainOptions& opts, Rng& rng) {
  if (train.empty()) throw UsageError("fit_transformer: no training windows");
  auto named = params.named_parameters();
  AdamConfig acfg;
  acfg.lr = opts.lr;
  Adam optimizer(named, acfg);

  FitResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_values;
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < opts.max_epochs; ++epoch) {
    rng.shuffle(order);
    double train_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += opts.batch_size) {
      const std::size_t stop =
          std::min(order.size(), start + opts.batch_size);
      optimizer.zero_grad();
      for (std::size_t i = start; i < stop; ++i) {
        const WindowSample& s = train[order[i]];
        Tape tape;
        Tensor window = Tensor::from({s.input_len, s.n_features}, s.input,
                                     false);
        Tensor pred = forward(tape, params, cfg, window,
                              cfg.dropout > 0.0 ? &rng : nullptr);
        Tensor target = Tensor::from({pred.size()}, s.target, false);
        Tensor loss = mse_loss(tape, pred, target);
        tape.backward(loss);
        train_loss += loss.item();
        ++seen;
      }
      // average the batch gradient
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto& [name, p] : named) {
        auto& g = p.mutable_grad();
        for (double& x : g) x *= inv;
      }
      optimizer.step();
    }
    EpochStats stats;
    stats.train_mse = train_loss / static_cast<double>(seen);
    stats.val_mse = val.empty() ? stats.train_mse
                                : mean_window_mse(params, cfg, val);
    result.epochs.push_back(stats);

    if (stats.val_mse < best_val) {
      best_val = stats.val_mse;
      result.best_epoch = result.epochs.size() - 1;
      since_best = 0;
      best_values.clear();
      for (const auto& [name, p] : named) best_values.push_back(p.values());
    } else if (++since_best >= opts.patience) {
      break;
    }
  }
  if (!best_values.empty()) {
    for (std::size_t i = 0; i < named.size(); ++i) {
      named[i].second.mutable_values() = best_values[i];
    }
  }
  return result;
}

}  // namespace voltcast
