#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mqma/augment.hpp"
#include "mqma/corpus.hpp"
#include "mqma/denoise.hpp"
#include "mqma/encoding.hpp"
#include "mqma/metrics.hpp"
#include "mqma/model.hpp"
#include "mqma/tokenizer.hpp"

namespace mqma {

struct PretrainConfig {
  std::string task = "mqma";  // "mqma" or "standard"
  int steps = 500;
  int batch_size = 8;
  std::uint64_t seed = 1;
  double lr = 3e-3;  // desk-scale default; the paper profile uses 1e-4
  double weight_decay = 0.0;
  double warmup_frac = 0.05;
  double lr_decay_floor = 1.0;  // 1.0 = constant after warmup
  DenoiseConfig denoise;
};

struct FinetuneConfig {
  int n = 2;
  AugmentConfig::Mode augment = AugmentConfig::Mode::kDynamic;
  int steps = 400;
  int batch_size = 8;
  std::uint64_t seed = 2;
  double lr = 3e-3;
  double weight_decay = 0.0;
  double warmup_frac = 0.05;
  double lr_decay_floor = 1.0;  // 1.0 = constant after warmup
};

struct EvalConfig {
  int n = 2;
  bool sqsa_when_n1 = false;  // decode from [START] instead of P1 when n == 1
};

struct TrainResult {
  std::vector<double> losses;  // one entry per step
};

inline void write_loss_csv(const std::string& path, const TrainResult& result) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_loss_csv: cannot open " + path);
  f << "step,loss\n";
  for (std::size_t i = 0; i < result.losses.size(); ++i)
    f << i << ',' << format_double(result.losses[i]) << '\n';
}

/// Vocabulary over everything the model will see: document tokens, attached
/// QA text, the denoising question templates, and the prompt phrases.
inline Vocab build_training_vocab(const std::vector<Document>& corpus, int max_size,
                                  int mask_count = Vocab::kDefaultMaskCount, int n_max = 5) {
  if (corpus.empty()) throw std::invalid_argument("build_training_vocab: empty corpus");
  std::vector<std::string> texts;
  texts.reserve(corpus.size() * 2);
  for (const auto& doc : corpus) {
    std::string body;
    for (const auto& t : doc.tokens) {
      body += t.text;
      body.push_back(' ');
    }
    texts.push_back(std::move(body));
    for (const auto& q : doc.qa) {
      texts.push_back(q.question);
      for (const auto& a : q.answers) texts.push_back(a);
    }
    // One template/prompt repetition per document keeps their frequency rank
    // representative of the generated training text.
    texts.push_back("Which text tokens are masked by after");
    texts.push_back("What are the masked text tokens of before");
    std::string prompts;
    for (int i = 1; i <= n_max; ++i) prompts += "answer of question " + std::to_string(i) + ": ";
    texts.push_back(std::move(prompts));
  }
  return build_vocab(texts, max_size, mask_count);
}

namespace detail {

/// Masked OCR view of a document: span tokens collapse into one sentinel
/// token carrying the union box of the span.
inline std::vector<OcrToken> masked_ocr_tokens(const Document& doc, const MaskResult& masked) {
  std::vector<OcrToken> out;
  std::size_t orig = 0;
  std::size_t span_i = 0;
  while (orig < doc.tokens.size()) {
    if (span_i < masked.spans.size() &&
        static_cast<int>(orig) == masked.spans[span_i].start) {
      const auto& span = masked.spans[span_i];
      PixelBox box = doc.tokens[orig].box;
      for (std::size_t k = 1; k < span.tokens.size(); ++k) {
        const auto& b = doc.tokens[orig + k].box;
        box.x1 = std::min(box.x1, b.x1);
        box.y1 = std::min(box.y1, b.y1);
        box.x2 = std::max(box.x2, b.x2);
        box.y2 = std::max(box.y2, b.y2);
      }
      out.push_back({"[MASK_" + std::to_string(span.sentinel) + "]", box});
      orig += span.tokens.size();
      ++span_i;
    } else {
      out.push_back(doc.tokens[orig]);
      ++orig;
    }
  }
  return out;
}

inline std::vector<int> target_ids(const std::string& answer, const Vocab& vocab, int max_answer_len) {
  auto ids = tokenize(answer, vocab);
  if (static_cast<int>(ids.size()) > max_answer_len - 1)
    ids.resize(static_cast<std::size_t>(max_answer_len - 1));
  ids.push_back(Vocab::kEos);
  return ids;
}

}  // namespace detail

/// One denoising training sample from an unlabeled document.
inline TrainExample make_pretrain_example(const Document& doc, const std::string& task,
                                          const Vocab& vocab, const ModelConfig& cfg,
                                          const DenoiseConfig& dcfg, Rng& rng) {
  std::vector<std::string> words;
  words.reserve(doc.tokens.size());
  for (const auto& t : doc.tokens) words.push_back(t.text);
  const MaskResult masked = mask_spans(words, rng, dcfg);
  const auto ocr = detail::masked_ocr_tokens(doc, masked);

  TrainExample ex;
  if (task == "standard") {
    const DenoiseExample dex = make_standard_example(masked);
    ex.input = make_encoder_input(
        assemble_content_block(ocr, doc.page_width, doc.page_height, vocab, cfg.max_text_len),
        patchify(doc), 0, cfg.max_text_len);
    // The sentinel-interleaved target decodes SQSA-style; give it headroom.
    auto ids = tokenize(dex.targets[0], vocab);
    const int cap = cfg.n_max * (cfg.max_answer_len + 1) - 1;
    if (static_cast<int>(ids.size()) > cap) ids.resize(static_cast<std::size_t>(cap));
    ids.push_back(Vocab::kEos);
    ex.targets.push_back(std::move(ids));
  } else if (task == "mqma") {
    const DenoiseExample dex = make_mqma_example(masked, rng, dcfg);
    if (static_cast<int>(dex.questions.size()) > cfg.n_max)
      throw std::logic_error("make_pretrain_example: more spans than n_max prompts");
    Document view;
    view.id = doc.id;
    view.page_width = doc.page_width;
    view.page_height = doc.page_height;
    view.tokens = ocr;
    view.image = doc.image;
    ex.input = make_encoder_input(
        assemble_text_block(dex.questions, view, vocab, cfg.max_text_len), patchify(doc),
        static_cast<int>(dex.questions.size()), cfg.max_text_len);
    for (const auto& answer : dex.targets)
      ex.targets.push_back(detail::target_ids(answer, vocab, cfg.max_answer_len));
  } else {
    throw std::invalid_argument("unknown pre-training task: " + task);
  }
  return ex;
}

/// One fine-tuning sample over the given ordered question indices.
inline TrainExample make_finetune_example(const Document& doc, const std::vector<int>& indices,
                                          const Vocab& vocab, const ModelConfig& cfg) {
  if (indices.empty()) throw std::invalid_argument("make_finetune_example: empty question batch");
  std::vector<std::string> questions;
  for (int i : indices) questions.push_back(doc.qa.at(static_cast<std::size_t>(i)).question);
  TrainExample ex;
  ex.input = make_encoder_input(assemble_text_block(questions, doc, vocab, cfg.max_text_len),
                                patchify(doc), static_cast<int>(questions.size()), cfg.max_text_len);
  for (int i : indices)
    ex.targets.push_back(detail::target_ids(doc.qa.at(static_cast<std::size_t>(i)).answers.front(),
                                            vocab, cfg.max_answer_len));
  return ex;
}

namespace detail {

inline double warmup_lr(double base, double frac, int step, int total_steps,
                        double decay_floor = 1.0) {
  const int warm = std::max(1, static_cast<int>(frac * total_steps));
  if (step < warm) return base * static_cast<double>(step + 1) / static_cast<double>(warm);
  if (decay_floor >= 1.0 || total_steps <= warm) return base;
  const double t = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
  return base * (1.0 - (1.0 - decay_floor) * t);
}

}  // namespace detail

/// Denoising pre-training loop; deterministic per (seed, config, corpus).
inline TrainResult pretrain(Model& model, const std::vector<Document>& corpus,
                            const PretrainConfig& cfg) {
  if (corpus.empty()) throw std::invalid_argument("pretrain: empty corpus");
  if (cfg.task == "mqma" && cfg.denoise.num_masks > model.config().n_max)
    throw std::invalid_argument("pretrain: num_masks exceeds model n_max");
  const Strategy strategy =
      cfg.task == "standard" ? Strategy::kSqsa : Strategy::kPromptParallel;
  AdamW opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  Rng rng(cfg.seed);
  TrainResult result;
  result.losses.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<TrainExample> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& doc =
          corpus[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(corpus.size()) - 1))];
      batch.push_back(
          make_pretrain_example(doc, cfg.task, model.vocab(), model.config(), cfg.denoise, rng));
    }
    opt.lr = detail::warmup_lr(cfg.lr, cfg.warmup_frac, step, cfg.steps, cfg.lr_decay_floor);
    try {
      result.losses.push_back(model.training_step(batch, strategy, opt));
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("pretrain aborted at step " + std::to_string(step) + ": " + e.what());
    }
  }
  return result;
}

using QuestionSampler = std::function<std::vector<int>(const Document&, Rng&)>;

/// Fine-tuning loop over QA-bearing documents. Documents rotate in stored
/// order; the sampler picks each document's question batch (dynamic draws
/// from the leak-group sampler, static cycles the fixed chunks).
inline TrainResult finetune(Model& model, const std::vector<Document>& corpus,
                            const FinetuneConfig& cfg, QuestionSampler sampler = nullptr) {
  if (cfg.n < 1 || cfg.n > model.config().n_max)
    throw std::invalid_argument("finetune: n must be in [1, n_max]");
  std::vector<const Document*> docs;
  for (const auto& d : corpus)
    if (!d.qa.empty()) docs.push_back(&d);
  if (docs.empty()) throw std::invalid_argument("finetune: corpus has no QA documents");

  AugmentConfig aug;
  aug.n = cfg.n;
  aug.mode = cfg.augment;
  std::unordered_map<const Document*, std::size_t> static_cursor;
  if (!sampler) {
    if (cfg.augment == AugmentConfig::Mode::kDynamic) {
      sampler = [aug](const Document& doc, Rng& rng) {
        return sample_training_batch(doc, aug, rng).question_indices;
      };
    } else {
      sampler = [aug, &static_cursor](const Document& doc, Rng&) {
        const auto batches = static_batches(doc, aug);
        auto& cur = static_cursor[&doc];
        const auto pick = batches[cur % batches.size()].question_indices;
        ++cur;
        return pick;
      };
    }
  }

  AdamW opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  Rng rng(cfg.seed);
  TrainResult result;
  result.losses.reserve(static_cast<std::size_t>(cfg.steps));
  std::size_t cursor = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<TrainExample> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Document& doc = *docs[cursor % docs.size()];
      ++cursor;
      batch.push_back(make_finetune_example(doc, sampler(doc, rng), model.vocab(), model.config()));
    }
    opt.lr = detail::warmup_lr(cfg.lr, cfg.warmup_frac, step, cfg.steps, cfg.lr_decay_floor);
    try {
      result.losses.push_back(model.training_step(batch, Strategy::kPromptParallel, opt));
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("finetune aborted at step " + std::to_string(step) + ": " + e.what());
    }
  }
  return result;
}

struct EvalOutcome {
  std::vector<EvalRecord> records;
  double mean_anls = 0.0;
  double mean_vqa_acc = 0.0;
};

/// Scores every question exactly once using fixed-order inference batches.
inline EvalOutcome evaluate(Model& model, const std::vector<Document>& corpus,
                            const EvalConfig& cfg) {
  EvalOutcome out;
  for (const auto& doc : corpus) {
    if (doc.qa.empty()) continue;
    for (const auto& batch : inference_batches(doc, cfg.n)) {
      const auto ex = make_finetune_example(doc, batch.question_indices, model.vocab(), model.config());
      const Mat enc = model.encode_values(ex.input);
      std::vector<std::vector<int>> answers;
      if (cfg.sqsa_when_n1 && batch.size() == 1) {
        answers.push_back(model.decode_sqsa(enc));
      } else {
        answers = model.decode_prompt_parallel(enc, batch.size());
      }
      for (int k = 0; k < batch.size(); ++k) {
        const int qi = batch.question_indices[static_cast<std::size_t>(k)];
        const auto& item = doc.qa[static_cast<std::size_t>(qi)];
        EvalRecord rec;
        rec.question_id = doc.id + "#" + std::to_string(qi);
        rec.prediction = detokenize(answers[static_cast<std::size_t>(k)], model.vocab());
        rec.best_gt = best_ground_truth(rec.prediction, item.answers);
        rec.anls = anls_score(rec.prediction, item.answers);
        rec.vqa_acc = vqa_accuracy(rec.prediction, item.answers);
        out.records.push_back(std::move(rec));
      }
    }
  }
  if (!out.records.empty()) {
    for (const auto& r : out.records) {
      out.mean_anls += r.anls;
      out.mean_vqa_acc += r.vqa_acc;
    }
    out.mean_anls /= static_cast<double>(out.records.size());
    out.mean_vqa_acc /= static_cast<double>(out.records.size());
  }
  return out;
}

}  // namespace mqma
