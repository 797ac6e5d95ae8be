#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mqma/encoding.hpp"
#include "mqma/graph.hpp"
#include "mqma/rng.hpp"
#include "mqma/tokenizer.hpp"

namespace mqma {

enum class Strategy { kSqsa, kNaiveConcat, kPromptParallel };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kSqsa: return "sqsa";
    case Strategy::kNaiveConcat: return "naive_concat";
    case Strategy::kPromptParallel: return "prompt_parallel";
  }
  return "?";
}

inline Strategy strategy_from_name(const std::string& s) {
  if (s == "sqsa") return Strategy::kSqsa;
  if (s == "naive_concat" || s == "naive") return Strategy::kNaiveConcat;
  if (s == "prompt_parallel" || s == "parallel") return Strategy::kPromptParallel;
  throw std::invalid_argument("unknown strategy: " + s);
}

struct ModelConfig {
  int d_emb = 64;  // 512 would match the small-size profile
  int n_layers_enc = 2;
  int n_layers_dec = 2;
  int n_heads = 4;
  int ffn_dim = 256;
  int n_max = 5;
  int max_answer_len = 10;
  int max_text_len = 224;
  double dropout = 0.0;
  bool use_question_index_embeddings = true;
  bool freeze_prompts = false;
  std::uint64_t init_seed = 17;

  void validate() const {
    if (d_emb < 1 || n_heads < 1 || d_emb % n_heads != 0)
      throw std::invalid_argument("ModelConfig: d_emb must be a positive multiple of n_heads");
    if (n_max < 1) throw std::invalid_argument("ModelConfig: n_max must be >= 1");
    if (n_layers_enc < 1 || n_layers_dec < 1 || ffn_dim < 1 || max_answer_len < 1 ||
        max_text_len < 4)
      throw std::invalid_argument("ModelConfig: non-positive dimension");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("ModelConfig: bad dropout");
  }

  nlohmann::json to_json() const {
    return {{"d_emb", d_emb},
            {"n_layers_enc", n_layers_enc},
            {"n_layers_dec", n_layers_dec},
            {"n_heads", n_heads},
            {"ffn_dim", ffn_dim},
            {"n_max", n_max},
            {"max_answer_len", max_answer_len},
            {"max_text_len", max_text_len},
            {"dropout", dropout},
            {"use_question_index_embeddings", use_question_index_embeddings},
            {"freeze_prompts", freeze_prompts},
            {"init_seed", init_seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_emb = j.at("d_emb").get<int>();
    c.n_layers_enc = j.at("n_layers_enc").get<int>();
    c.n_layers_dec = j.at("n_layers_dec").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.n_max = j.at("n_max").get<int>();
    c.max_answer_len = j.at("max_answer_len").get<int>();
    c.max_text_len = j.at("max_text_len").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.use_question_index_embeddings = j.at("use_question_index_embeddings").get<bool>();
    c.freeze_prompts = j.at("freeze_prompts").get<bool>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    return c;
  }
};

/// Attention score-matrix entries (q-k pairs) accumulated per forward pass,
/// in the cost model's units: one count of Lq*Lk per attention module call,
/// heads treated as a constant factor.
struct AttnCounter {
  std::uint64_t encoder_self = 0;
  std::uint64_t decoder_self = 0;
  std::uint64_t decoder_cross = 0;
  void reset() { encoder_self = decoder_self = decoder_cross = 0; }
};

/// One training sample: an assembled encoder input plus one target token
/// sequence per question. Every target ends with [EOS]; trailing [PAD] ids
/// are allowed and masked out of the loss.
struct TrainExample {
  EncoderInput input;
  std::vector<std::vector<int>> targets;
};

struct NaiveDecodeResult {
  std::vector<std::vector<int>> answers;
  bool malformed = false;
};

// Encoder-decoder transformer over the multi-modal inputs. Pre-LN blocks,
// GELU feed-forward, learned absolute positions on the decoder side only
// (encoder positions are carried by the layout embeddings). All math is
// double precision and single threaded; decoding is greedy.
class Model {
 public:
  static constexpr int kPromptTokens = 4;  // "answer of question i:"

  Model(ModelConfig cfg, Vocab vocab) : cfg_(cfg), vocab_(std::move(vocab)) {
    cfg_.validate();
    if (vocab_.size() < vocab_.reserved() + 1)
      throw std::invalid_argument("Model: vocabulary has no word entries");
    build_params();
    init_params();
  }

  const ModelConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  ParamStore& params() { return params_; }
  EmbeddingTables& tables() { return tables_; }
  AttnCounter& counter() { return counter_; }

  int dec_position_capacity() const { return static_cast<int>(dec_pos_->value.rows()); }

  Param& prompt_param(int i) {
    if (i < 1 || i > cfg_.n_max) throw std::out_of_range("prompt index " + std::to_string(i));
    return *prompts_[static_cast<std::size_t>(i - 1)];
  }

  /// Table 6 ablation toggles, also applicable to a loaded checkpoint.
  void set_freeze_prompts(bool freeze) {
    cfg_.freeze_prompts = freeze;
    for (Param* p : prompts_) p->trainable = !freeze;
  }

  void set_use_question_index(bool use) {
    cfg_.use_question_index_embeddings = use;
    tables_.use_question_index = use;
  }

  // ---- graph building -------------------------------------------------

  NodeRef embed_input(Tape& tape, const EncoderInput& input) {
    tables_.use_question_index = cfg_.use_question_index_embeddings;
    return embed(tape, input, tables_);
  }

  /// Encoder stack over an embedding sequence. `keep` (optional) marks valid
  /// positions; zeros are masked out of attention keys.
  NodeRef encode_embeddings(Tape& tape, NodeRef x, const std::vector<std::uint8_t>& keep = {}) {
    if (!x->value.allFinite()) throw std::runtime_error("encode: non-finite input");
    const int len = static_cast<int>(x->value.rows());
    Mat mask;
    const Mat* mask_ptr = nullptr;
    if (!keep.empty()) {
      if (static_cast<int>(keep.size()) != len)
        throw std::invalid_argument("encode: pad mask length mismatch");
      mask = key_padding_mask(len, keep);
      mask_ptr = &mask;
    }
    for (auto& layer : enc_layers_) {
      NodeRef h = tape.layer_norm(x, tape.leaf(*layer.ln1_g), tape.leaf(*layer.ln1_b));
      NodeRef a = attention(tape, h, h, layer.attn, mask_ptr, &counter_.encoder_self);
      x = tape.add(x, maybe_dropout(tape, a));
      NodeRef h2 = tape.layer_norm(x, tape.leaf(*layer.ln2_g), tape.leaf(*layer.ln2_b));
      x = tape.add(x, maybe_dropout(tape, ffn(tape, h2, layer)));
    }
    return tape.layer_norm(x, tape.leaf(*enc_ln_g_), tape.leaf(*enc_ln_b_));
  }

  NodeRef encode_input(Tape& tape, const EncoderInput& input) {
    return encode_embeddings(tape, embed_input(tape, input));
  }

  /// Decoder stack over prefix embedding rows; returns L x |V| logits.
  /// Causal over the prefix, cross-attending into `enc`.
  NodeRef decoder_forward(Tape& tape, const NodeRef& enc, NodeRef x,
                          const std::vector<std::uint8_t>& enc_keep = {}) {
    const int len = static_cast<int>(x->value.rows());
    if (len < 1) throw std::invalid_argument("decoder_forward: empty prefix");
    if (len > dec_position_capacity())
      throw std::out_of_range("decoder_forward: prefix exceeds position capacity " +
                              std::to_string(dec_position_capacity()));
    std::vector<int> pos(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i) pos[static_cast<std::size_t>(i)] = i;
    x = tape.add(x, tape.gather_rows(*dec_pos_, pos));

    const Mat self_mask = causal_mask(len);
    Mat cross_mask;
    const Mat* cross_ptr = nullptr;
    if (!enc_keep.empty()) {
      cross_mask = key_padding_mask(len, enc_keep);
      cross_ptr = &cross_mask;
    }
    for (auto& layer : dec_layers_) {
      NodeRef h = tape.layer_norm(x, tape.leaf(*layer.ln1_g), tape.leaf(*layer.ln1_b));
      NodeRef a = attention(tape, h, h, layer.self_attn, &self_mask, &counter_.decoder_self);
      x = tape.add(x, maybe_dropout(tape, a));
      NodeRef h2 = tape.layer_norm(x, tape.leaf(*layer.ln2_g), tape.leaf(*layer.ln2_b));
      NodeRef c = attention(tape, h2, enc, layer.cross_attn, cross_ptr, &counter_.decoder_cross);
      x = tape.add(x, maybe_dropout(tape, c));
      NodeRef h3 = tape.layer_norm(x, tape.leaf(*layer.ln3_g), tape.leaf(*layer.ln3_b));
      x = tape.add(x, maybe_dropout(tape, ffn(tape, h3, layer)));
    }
    x = tape.layer_norm(x, tape.leaf(*dec_ln_g_), tape.leaf(*dec_ln_b_));
    return tape.matmul(x, tape.leaf(*w_out_));
  }

  NodeRef prompt_node(Tape& tape, int i) { return tape.leaf(prompt_param(i)); }

  NodeRef start_node(Tape& tape) {
    return tape.gather_rows(*tables_.token, {Vocab::kStart});
  }

  // ---- inference -------------------------------------------------------

  /// Runs the encoder without recording gradients; returns the state matrix.
  Mat encode_values(const EncoderInput& input) {
    Tape tape(false);
    return encode_input(tape, input)->value;
  }

  Mat encode_values(const Mat& embeddings, const std::vector<std::uint8_t>& keep = {}) {
    Tape tape(false);
    return encode_embeddings(tape, tape.constant(embeddings), keep)->value;
  }

  /// Next-token logits after the given prefix embedding rows.
  Eigen::RowVectorXd decode_step(const Mat& enc, const Mat& prefix_rows) {
    Tape tape(false);
    NodeRef logits = decoder_forward(tape, tape.constant(enc), tape.constant(prefix_rows));
    if (!logits->value.allFinite()) throw std::runtime_error("decode_step: non-finite logits");
    return logits->value.row(logits->value.rows() - 1);
  }

  /// Greedy decode from explicit prompt rows. The full prefix is recomputed
  /// each step (no KV cache); ties in argmax resolve to the lowest id.
  /// Returns generated ids with [EOS] stripped.
  std::vector<int> greedy_decode(const Mat& enc, const Mat& prompt_rows, int max_new,
                                 bool stop_at_eos = true) {
    std::vector<int> out;
    Mat prefix = prompt_rows;
    for (int step = 0; step < max_new; ++step) {
      const Eigen::RowVectorXd logits = decode_step(enc, prefix);
      const int tok = argmax(logits);
      if (stop_at_eos && tok == Vocab::kEos) break;
      out.push_back(tok);
      prefix.conservativeResize(prefix.rows() + 1, Eigen::NoChange);
      prefix.row(prefix.rows() - 1) = tables_.token->value.row(tok);
    }
    return out;
  }

  std::vector<int> decode_sqsa(const Mat& enc, int max_len = -1) {
    return greedy_decode(enc, start_rows(), resolve_len(max_len));
  }

  /// n greedy decodes sharing one encoder pass, advanced in lockstep.
  std::vector<std::vector<int>> decode_prompt_parallel(const Mat& enc, int n, int max_len = -1) {
    if (n < 1 || n > cfg_.n_max)
      throw std::out_of_range("decode_prompt_parallel: n out of [1, n_max]");
    std::vector<Mat> prompts;
    prompts.reserve(static_cast<std::size_t>(n));
    for (int i = 1; i <= n; ++i) prompts.push_back(prompt_param(i).value);
    return decode_prompt_parallel_with(enc, prompts, resolve_len(max_len));
  }

  /// Same, with caller-supplied prompt matrices (used by the SQSA-equivalence
  /// checks, which substitute the [START] row for P1).
  std::vector<std::vector<int>> decode_prompt_parallel_with(const Mat& enc,
                                                            const std::vector<Mat>& prompts,
                                                            int max_len) {
    struct State {
      Mat prefix;
      std::vector<int> out;
      bool done = false;
    };
    std::vector<State> states;
    for (const auto& p : prompts) states.push_back({p, {}, false});
    for (int step = 0; step < max_len; ++step) {
      bool any = false;
      for (auto& s : states) {
        if (s.done) continue;
        any = true;
        const Eigen::RowVectorXd logits = decode_step(enc, s.prefix);
        const int tok = argmax(logits);
        if (tok == Vocab::kEos) {
          s.done = true;
          continue;
        }
        s.out.push_back(tok);
        s.prefix.conservativeResize(s.prefix.rows() + 1, Eigen::NoChange);
        s.prefix.row(s.prefix.rows() - 1) = tables_.token->value.row(tok);
      }
      if (!any) break;
    }
    std::vector<std::vector<int>> answers;
    answers.reserve(states.size());
    for (auto& s : states) answers.push_back(std::move(s.out));
    return answers;
  }

  /// Splits a decoded token stream on [ANS_SEP] into n answers. A stream
  /// with other than n-1 separators is flagged malformed; missing answers
  /// come back empty, surplus content lands in the final slot.
  static NaiveDecodeResult split_answer_stream(const std::vector<int>& stream, int n) {
    NaiveDecodeResult res;
    res.answers.assign(static_cast<std::size_t>(n), {});
    std::size_t slot = 0;
    int separators = 0;
    for (int tok : stream) {
      if (tok == Vocab::kAnsSep) {
        ++separators;
        if (slot + 1 < static_cast<std::size_t>(n)) ++slot;
        continue;
      }
      res.answers[slot].push_back(tok);
    }
    res.malformed = separators != n - 1;
    return res;
  }

  /// Single greedy stream from [START], split on [ANS_SEP] into n answers.
  NaiveDecodeResult decode_naive_concat(const Mat& enc, int n, int max_len = -1) {
    if (n < 1) throw std::out_of_range("decode_naive_concat: n must be >= 1");
    const int la = resolve_len(max_len);
    return split_answer_stream(greedy_decode(enc, start_rows(), n * (la + 1)), n);
  }

  // ---- training --------------------------------------------------------

  /// Mean token cross-entropy over all answer positions of all questions.
  NodeRef training_loss_node(Tape& tape, std::span<const TrainExample> batch, Strategy strategy) {
    if (batch.empty()) throw std::invalid_argument("training_loss: empty batch");
    NodeRef total;
    long long count = 0;
    for (const auto& ex : batch) {
      validate_example(ex, strategy);
      NodeRef enc = encode_input(tape, ex.input);
      std::vector<std::pair<NodeRef, long long>> losses;
      if (strategy == Strategy::kPromptParallel) {
        for (std::size_t i = 0; i < ex.targets.size(); ++i)
          losses.push_back(sequence_loss(tape, enc, prompt_node(tape, static_cast<int>(i) + 1),
                                         ex.targets[i]));
      } else if (strategy == Strategy::kSqsa) {
        losses.push_back(sequence_loss(tape, enc, start_node(tape), ex.targets.at(0)));
      } else {
        losses.push_back(sequence_loss(tape, enc, start_node(tape), concat_targets(ex.targets)));
      }
      for (auto& [node, c] : losses) {
        total = total ? tape.add(total, node) : node;
        count += c;
      }
    }
    if (count == 0) throw std::invalid_argument("training_loss: no target tokens");
    return tape.scale(total, 1.0 / static_cast<double>(count));
  }

  double training_loss(std::span<const TrainExample> batch, Strategy strategy) {
    Tape tape(false);
    return training_loss_node(tape, batch, strategy)->value(0, 0);
  }

  /// Forward/backward/AdamW update; returns the batch loss.
  double training_step(std::span<const TrainExample> batch, Strategy strategy, AdamW& opt) {
    params_.zero_grads();
    Tape tape;
    NodeRef loss = training_loss_node(tape, batch, strategy);
    const double value = loss->value(0, 0);
    if (!std::isfinite(value)) throw std::runtime_error("training_step: non-finite loss");
    tape.backward(loss);
    opt.step(params_);
    return value;
  }

  struct GradCheckResult {
    double max_rel_err = 0.0;
    int checked = 0;
  };

  /// Central-difference check of training_loss gradients over a random
  /// subset of scalars spanning every trainable table and layer.
  GradCheckResult grad_check(std::span<const TrainExample> batch, Strategy strategy, double eps,
                             int min_samples, Rng& rng) {
    params_.zero_grads();
    {
      Tape tape;
      tape.backward(training_loss_node(tape, batch, strategy));
    }
    std::vector<std::pair<Param*, Eigen::Index>> picks;
    std::int64_t total = 0;
    for (auto& p : params_)
      if (p->trainable) total += p->size();
    for (auto& p : params_) {
      if (!p->trainable) continue;
      const auto share = static_cast<int>((static_cast<std::int64_t>(min_samples) * p->size() + total - 1) / total);
      const int k = std::max(2, share);
      for (int i = 0; i < k; ++i)
        picks.emplace_back(p.get(), static_cast<Eigen::Index>(rng.uniform_int(0, p->size() - 1)));
    }

    GradCheckResult res;
    res.checked = static_cast<int>(picks.size());
    for (auto& [param, idx] : picks) {
      const double analytic = param->grad(idx);
      const double orig = param->value(idx);
      param->value(idx) = orig + eps;
      const double up = training_loss(batch, strategy);
      param->value(idx) = orig - eps;
      const double down = training_loss(batch, strategy);
      param->value(idx) = orig;
      const double fd = (up - down) / (2.0 * eps);
      // The 1e-4 floor guards against finite-difference noise on near-zero
      // gradients; loss is O(1) so the noise floor is ~1e-11.
      const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-4});
      res.max_rel_err = std::max(res.max_rel_err, std::abs(analytic - fd) / denom);
    }
    return res;
  }

 private:
  struct AttnWeights {
    Param *wq = nullptr, *wk = nullptr, *wv = nullptr, *wo = nullptr;
  };
  struct EncLayer {
    AttnWeights attn;
    Param *ln1_g, *ln1_b, *ln2_g, *ln2_b;
    Param *ffn_w1, *ffn_b1, *ffn_w2, *ffn_b2;
  };
  struct DecLayer {
    AttnWeights self_attn, cross_attn;
    Param *ln1_g, *ln1_b, *ln2_g, *ln2_b, *ln3_g, *ln3_b;
    Param *ffn_w1, *ffn_b1, *ffn_w2, *ffn_b2;
  };

  void build_params() {
    const int d = cfg_.d_emb;
    const int v = vocab_.size();
    tables_.token = &params_.add("token_emb", v, d);
    const char* coord_names[6] = {"x1", "y1", "x2", "y2", "w", "h"};
    for (int c = 0; c < 6; ++c)
      tables_.layout[static_cast<std::size_t>(c)] =
          &params_.add(std::string("layout_") + coord_names[c], 1001, d);
    tables_.modality = &params_.add("modality_emb", 2, d);
    tables_.question_index = &params_.add("question_index_emb", cfg_.n_max + 1, d);
    tables_.patch_proj = &params_.add("patch_proj", kPatchDim, d);
    tables_.patch_ln_gain = &params_.add("patch_ln_gain", 1, d);
    tables_.patch_ln_bias = &params_.add("patch_ln_bias", 1, d);
    tables_.visual_squeeze = &params_.add("visual_squeeze", kVisualLen, kNumPatches);
    tables_.layout_squeeze = &params_.add("layout_squeeze", kVisualLen, kNumPatches);
    tables_.use_question_index = cfg_.use_question_index_embeddings;

    auto add_attn = [&](const std::string& prefix) {
      AttnWeights w;
      w.wq = &params_.add(prefix + ".wq", d, d);
      w.wk = &params_.add(prefix + ".wk", d, d);
      w.wv = &params_.add(prefix + ".wv", d, d);
      w.wo = &params_.add(prefix + ".wo", d, d);
      return w;
    };
    for (int l = 0; l < cfg_.n_layers_enc; ++l) {
      const std::string p = "enc." + std::to_string(l);
      EncLayer layer;
      layer.attn = add_attn(p + ".attn");
      layer.ln1_g = &params_.add(p + ".ln1.g", 1, d);
      layer.ln1_b = &params_.add(p + ".ln1.b", 1, d);
      layer.ln2_g = &params_.add(p + ".ln2.g", 1, d);
      layer.ln2_b = &params_.add(p + ".ln2.b", 1, d);
      layer.ffn_w1 = &params_.add(p + ".ffn.w1", d, cfg_.ffn_dim);
      layer.ffn_b1 = &params_.add(p + ".ffn.b1", 1, cfg_.ffn_dim);
      layer.ffn_w2 = &params_.add(p + ".ffn.w2", cfg_.ffn_dim, d);
      layer.ffn_b2 = &params_.add(p + ".ffn.b2", 1, d);
      enc_layers_.push_back(layer);
    }
    enc_ln_g_ = &params_.add("enc.final_ln.g", 1, d);
    enc_ln_b_ = &params_.add("enc.final_ln.b", 1, d);

    for (int l = 0; l < cfg_.n_layers_dec; ++l) {
      const std::string p = "dec." + std::to_string(l);
      DecLayer layer;
      layer.self_attn = add_attn(p + ".self");
      layer.cross_attn = add_attn(p + ".cross");
      layer.ln1_g = &params_.add(p + ".ln1.g", 1, d);
      layer.ln1_b = &params_.add(p + ".ln1.b", 1, d);
      layer.ln2_g = &params_.add(p + ".ln2.g", 1, d);
      layer.ln2_b = &params_.add(p + ".ln2.b", 1, d);
      layer.ln3_g = &params_.add(p + ".ln3.g", 1, d);
      layer.ln3_b = &params_.add(p + ".ln3.b", 1, d);
      layer.ffn_w1 = &params_.add(p + ".ffn.w1", d, cfg_.ffn_dim);
      layer.ffn_b1 = &params_.add(p + ".ffn.b1", 1, cfg_.ffn_dim);
      layer.ffn_w2 = &params_.add(p + ".ffn.w2", cfg_.ffn_dim, d);
      layer.ffn_b2 = &params_.add(p + ".ffn.b2", 1, d);
      dec_layers_.push_back(layer);
    }
    dec_ln_g_ = &params_.add("dec.final_ln.g", 1, d);
    dec_ln_b_ = &params_.add("dec.final_ln.b", 1, d);

    const int dec_positions =
        std::max(kPromptTokens + cfg_.max_answer_len + 1,
                 1 + cfg_.n_max * (cfg_.max_answer_len + 1)) + 2;
    dec_pos_ = &params_.add("dec_pos_emb", dec_positions, d);
    w_out_ = &params_.add("w_out", d, v);

    for (int i = 1; i <= cfg_.n_max; ++i)
      prompts_.push_back(&params_.add("prompt_" + std::to_string(i), kPromptTokens, d));
  }

  void init_params() {
    Rng rng(cfg_.init_seed);
    for (auto& p : params_) {
      const bool ln_gain = p->name.ends_with(".g") || p->name == "patch_ln_gain";
      const bool bias = p->name.ends_with(".b") || p->name.ends_with(".b1") ||
                        p->name.ends_with(".b2") || p->name == "patch_ln_bias";
      if (ln_gain) {
        p->value.setOnes();
      } else if (bias) {
        p->value.setZero();
      } else {
        // The squeeze maps contract 192 unit-scale rows; without fan-in
        // scaling the visual positions start an order of magnitude hotter
        // than the text positions and drown them in attention values.
        double sigma = 0.02;
        if (p->name == "visual_squeeze" || p->name == "layout_squeeze")
          sigma = 0.02 / std::sqrt(static_cast<double>(kNumPatches));
        for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value(i) = rng.normal(0.0, sigma);
      }
    }
    // Prompts start from the token embeddings of "answer of question i:".
    for (int i = 1; i <= cfg_.n_max; ++i) {
      const auto ids = tokenize("answer of question " + std::to_string(i) + ":", vocab_);
      if (static_cast<int>(ids.size()) != kPromptTokens)
        throw std::logic_error("prompt phrase token count mismatch");
      Param& p = prompt_param(i);
      for (int r = 0; r < kPromptTokens; ++r)
        p.value.row(r) = tables_.token->value.row(ids[static_cast<std::size_t>(r)]);
      p.trainable = !cfg_.freeze_prompts;
    }
  }

  NodeRef attention(Tape& tape, const NodeRef& q_in, const NodeRef& kv_in, const AttnWeights& w,
                    const Mat* additive_mask, std::uint64_t* count_slot) {
    const int d = cfg_.d_emb;
    const int dh = d / cfg_.n_heads;
    NodeRef q = tape.matmul(q_in, tape.leaf(*w.wq));
    NodeRef k = tape.matmul(kv_in, tape.leaf(*w.wk));
    NodeRef v = tape.matmul(kv_in, tape.leaf(*w.wv));
    if (count_slot)
      *count_slot += static_cast<std::uint64_t>(q_in->value.rows()) *
                     static_cast<std::uint64_t>(kv_in->value.rows());
    std::vector<NodeRef> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < cfg_.n_heads; ++h) {
      NodeRef qh = tape.slice_cols(q, h * dh, dh);
      NodeRef kh = tape.slice_cols(k, h * dh, dh);
      NodeRef vh = tape.slice_cols(v, h * dh, dh);
      NodeRef scores = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt);
      NodeRef att = tape.softmax_rows(scores, additive_mask);
      heads.push_back(tape.matmul(att, vh));
    }
    return tape.matmul(tape.concat_cols(heads), tape.leaf(*w.wo));
  }

  template <typename Layer>
  NodeRef ffn(Tape& tape, const NodeRef& x, const Layer& layer) {
    NodeRef h = tape.add_rowvec(tape.matmul(x, tape.leaf(*layer.ffn_w1)), tape.leaf(*layer.ffn_b1));
    h = tape.gelu(h);
    return tape.add_rowvec(tape.matmul(h, tape.leaf(*layer.ffn_w2)), tape.leaf(*layer.ffn_b2));
  }

  NodeRef maybe_dropout(Tape& tape, NodeRef x) {
    if (cfg_.dropout <= 0.0 || !tape.grad_enabled()) return x;
    Mat mask(x->value.rows(), x->value.cols());
    const double keep = 1.0 - cfg_.dropout;
    for (Eigen::Index i = 0; i < mask.size(); ++i)
      mask(i) = dropout_rng_.uniform() < keep ? 1.0 / keep : 0.0;
    return tape.hadamard_const(x, std::move(mask));
  }

  Mat start_rows() { return tables_.token->value.row(Vocab::kStart); }

  static int argmax(const Eigen::RowVectorXd& v) {
    int best = 0;
    for (int i = 1; i < v.size(); ++i)
      if (v(i) > v(best)) best = i;
    return best;
  }

  int resolve_len(int max_len) const { return max_len < 0 ? cfg_.max_answer_len : max_len; }

  void validate_example(const TrainExample& ex, Strategy strategy) const {
    if (ex.targets.empty()) throw std::invalid_argument("training_loss: example without targets");
    if (strategy == Strategy::kSqsa && ex.targets.size() != 1)
      throw std::invalid_argument("training_loss: SQSA expects exactly one target");
    if (strategy == Strategy::kPromptParallel &&
        static_cast<int>(ex.targets.size()) > cfg_.n_max)
      throw std::out_of_range("training_loss: more targets than n_max prompts");
    for (const auto& t : ex.targets) {
      bool has_eos = false;
      for (int id : t) {
        if (id == Vocab::kEos) {
          has_eos = true;
        } else if (has_eos && id != Vocab::kPad) {
          throw std::invalid_argument("training_loss: tokens after [EOS] must be [PAD]");
        }
      }
      if (!has_eos) throw std::invalid_argument("training_loss: target must end with [EOS]");
    }
  }

  /// Teacher-forced loss for one target sequence: rows are the prompt
  /// followed by the shifted target; only answer positions contribute.
  std::pair<NodeRef, long long> sequence_loss(Tape& tape, const NodeRef& enc,
                                              const NodeRef& prompt,
                                              const std::vector<int>& target) {
    const int plen = static_cast<int>(prompt->value.rows());
    const int tlen = static_cast<int>(target.size());
    NodeRef x = prompt;
    if (tlen > 1) {
      const std::vector<int> fed(target.begin(), target.end() - 1);
      x = tape.vstack({prompt, tape.gather_rows(*tables_.token, fed)});
    }
    NodeRef logits = decoder_forward(tape, enc, x);
    const int rows = plen + tlen - 1;
    std::vector<int> tgt(static_cast<std::size_t>(rows), 0);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(rows), 0);
    long long count = 0;
    for (int t = 0; t < tlen; ++t) {
      if (target[static_cast<std::size_t>(t)] == Vocab::kPad) continue;
      tgt[static_cast<std::size_t>(plen - 1 + t)] = target[static_cast<std::size_t>(t)];
      mask[static_cast<std::size_t>(plen - 1 + t)] = 1;
      ++count;
    }
    return {tape.ce_sum(logits, tgt, mask), count};
  }

  /// Naive-concatenation target: answers joined by [ANS_SEP], one final [EOS].
  std::vector<int> concat_targets(const std::vector<std::vector<int>>& targets) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (i > 0) out.push_back(Vocab::kAnsSep);
      for (int id : targets[i])
        if (id != Vocab::kEos && id != Vocab::kPad) out.push_back(id);
    }
    out.push_back(Vocab::kEos);
    return out;
  }

  ModelConfig cfg_;
  Vocab vocab_;
  ParamStore params_;
  EmbeddingTables tables_;
  std::vector<EncLayer> enc_layers_;
  std::vector<DecLayer> dec_layers_;
  Param* enc_ln_g_ = nullptr;
  Param* enc_ln_b_ = nullptr;
  Param* dec_ln_g_ = nullptr;
  Param* dec_ln_b_ = nullptr;
  Param* dec_pos_ = nullptr;
  Param* w_out_ = nullptr;
  std::vector<Param*> prompts_;
  AttnCounter counter_;
  Rng dropout_rng_{0x9e3779b97f4a7c15ull};
};

}  // namespace mqma
