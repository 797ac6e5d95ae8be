// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Everything below is deterministic (fixed seeds, medians for the
// timing checks), so a green run is reproducible.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mqma/augment.hpp"
#include "mqma/bench.hpp"
#include "mqma/checkpoint.hpp"
#include "mqma/corpus.hpp"
#include "mqma/denoise.hpp"
#include "mqma/encoding.hpp"
#include "mqma/metrics.hpp"
#include "mqma/model.hpp"
#include "mqma/tokenizer.hpp"
#include "mqma/trainer.hpp"

using namespace mqma;

namespace {

struct Failure {
  std::string detail;
};

void expect(bool ok, const std::string& detail) {
  if (!ok) throw Failure{detail};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- C1: gradient correctness ---------------------------------------------

std::string check_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig cfg;
  cfg.d_emb = 8;
  cfg.n_layers_enc = 1;
  cfg.n_layers_dec = 1;
  cfg.n_heads = 2;
  cfg.ffn_dim = 16;
  cfg.n_max = 3;
  cfg.max_answer_len = 4;
  cfg.max_text_len = 48;
  cfg.init_seed = 11;
  const Vocab vocab =
      build_vocab({"answer of question 1: 2: 3: river stone maple cloud what is"}, 64);
  Model model(cfg, vocab);

  Document doc;
  doc.id = "g0";
  doc.page_width = 64;
  doc.page_height = 64;
  doc.tokens = {{"river", {2, 2, 20, 10}}, {"stone", {22, 2, 40, 10}}, {"maple", {2, 12, 20, 20}}};
  doc.image.assign(64 * 64, 0.0f);
  for (int y = 2; y < 10; ++y)
    for (int x = 2; x < 20; ++x) doc.image[static_cast<std::size_t>(y) * 64 + x] = 1.0f;

  TrainExample ex;
  ex.input = assemble_encoder_input({"what is river", "what is stone"}, doc, vocab, 48);
  std::vector<int> t1 = tokenize("stone maple", vocab);
  t1.push_back(Vocab::kEos);
  std::vector<int> t2 = tokenize("cloud", vocab);
  t2.push_back(Vocab::kEos);
  ex.targets = {t1, t2};
  const std::vector<TrainExample> batch = {ex};

  Rng rng(2025);
  const auto res = model.grad_check(batch, Strategy::kPromptParallel, 1e-5, 200, rng);
  const double elapsed = seconds_since(t0);
  expect(res.checked >= 200, "only checked " + std::to_string(res.checked) + " scalars");
  expect(res.max_rel_err < 1e-5,
         "max relative error " + format_double(res.max_rel_err) + " >= 1e-5");
  expect(elapsed < 60.0, "runtime " + format_double(elapsed) + "s >= 60s");

  std::ostringstream os;
  os << "max_rel_err=" << format_double(res.max_rel_err) << " over " << res.checked
     << " scalars in " << format_double(elapsed) << "s";
  return os.str();
}

// ---- C2: strategy equivalence ----------------------------------------------

std::string check_strategy_equivalence() {
  const Vocab vocab =
      build_vocab({"answer of question 1: 2: 3: 4: 5: a b c d e f g h"}, 96);
  int checked_sqsa = 0, checked_batch = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    ModelConfig cfg;
    cfg.d_emb = 8;
    cfg.n_layers_enc = 1;
    cfg.n_layers_dec = 1;
    cfg.n_heads = 2;
    cfg.ffn_dim = 16;
    cfg.n_max = 5;
    cfg.max_answer_len = 5;
    cfg.init_seed = seed * 101;
    Model model(cfg, vocab);

    Rng rng(seed * 7 + 1);
    const int enc_len = static_cast<int>(rng.uniform_int(4, 12));
    Mat emb(enc_len, cfg.d_emb);
    for (Eigen::Index i = 0; i < emb.size(); ++i) emb(i) = rng.normal(0.0, 0.5);
    const Mat enc = model.encode_values(emb);

    const auto sqsa = model.decode_sqsa(enc);
    const Mat start = model.tables().token->value.row(Vocab::kStart);
    const auto as_parallel = model.decode_prompt_parallel_with(enc, {start}, cfg.max_answer_len);
    expect(as_parallel.size() == 1 && as_parallel[0] == sqsa,
           "P1:=[START] decode diverged from SQSA at seed " + std::to_string(seed));
    ++checked_sqsa;

    const int n = static_cast<int>(rng.uniform_int(2, 5));
    const auto batched = model.decode_prompt_parallel(enc, n);
    for (int i = 1; i <= n; ++i) {
      const auto solo = model.greedy_decode(enc, model.prompt_param(i).value, cfg.max_answer_len);
      expect(batched[static_cast<std::size_t>(i - 1)] == solo,
             "batched decode diverged from sequential at seed " + std::to_string(seed));
    }
    ++checked_batch;
  }
  return "sqsa-equivalence on " + std::to_string(checked_sqsa) + " seeds, batch-equivalence on " +
         std::to_string(checked_batch) + " seeds, exact";
}

// ---- C3: denoising round trip ----------------------------------------------

std::string check_denoising() {
  // Table 1 worked example, byte-for-byte
  const std::vector<std::string> sentence = {"Thank", "you", "for", "inviting", "me",
                                             "to",    "your", "party", "last", "week"};
  const MaskResult worked = apply_spans(sentence, {{2, 2}, {8, 1}});
  expect(join_tokens(worked.masked_tokens) ==
             "Thank you [MASK_1] me to your party [MASK_2] week",
         "worked example masked sentence mismatch");
  expect(make_standard_example(worked).targets[0] == "[MASK_1] for inviting [MASK_2] last",
         "worked example standard target mismatch");
  {
    DenoiseConfig cfg;
    cfg.style = DenoiseConfig::Style::kWhich;
    Rng rng(1);
    const auto mq = make_mqma_example(worked, rng, cfg);
    bool found = false;
    for (std::size_t i = 0; i < mq.questions.size(); ++i) {
      if (mq.question_span[i] != 1) continue;
      found = true;
      expect(mq.questions[i] == "Which text tokens are masked by [MASK_1] after \"Thank you\"?",
             "worked example question mismatch: " + mq.questions[i]);
      expect(mq.targets[i] == "for inviting", "worked example answer mismatch: " + mq.targets[i]);
    }
    expect(found, "no question generated for sentinel 1");
  }

  // 1000 generated examples per mode reconstruct the source exactly and
  // every question byte-matches one of the two templates.
  const auto words = default_word_list();
  Rng rng(99);
  int mqma_examples = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::string> tokens;
    const int len = static_cast<int>(rng.uniform_int(6, 40));
    for (int i = 0; i < len; ++i)
      tokens.push_back(words[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(words.size()) - 1))]);

    const auto masked = mask_spans(tokens, rng);
    expect(reconstruct_tokens(masked.masked_tokens, masked.spans) == tokens,
           "standard-mode reconstruction failed at trial " + std::to_string(trial));
    const auto std_ex = make_standard_example(masked);
    const auto parsed = parse_standard_target(std_ex.targets[0]);
    expect(parsed.size() == masked.spans.size(), "standard target lost spans");
    expect(reconstruct_tokens(std_ex.masked_tokens, parsed) == tokens,
           "standard-target reconstruction failed at trial " + std::to_string(trial));

    if (masked.spans.empty()) continue;
    ++mqma_examples;
    const auto mq = make_mqma_example(masked, rng);
    expect(mq.questions.size() == masked.spans.size(), "question count != span count");
    std::vector<MaskedSpan> from_answers;
    for (std::size_t i = 0; i < mq.questions.size(); ++i) {
      const std::string mask_tok = "[MASK_" + std::to_string(mq.question_span[i]) + "]";
      const std::string ctx_q = "Which text tokens are masked by " + mask_tok + " after \"";
      const std::string ctx_w = "What are the masked text tokens of " + mask_tok + " after \"";
      const bool which = mq.questions[i].rfind(ctx_q, 0) == 0;
      const bool what = mq.questions[i].rfind(ctx_w, 0) == 0;
      expect((which || what) && mq.questions[i].size() >= 2 &&
                 mq.questions[i].substr(mq.questions[i].size() - 2) == "\"?",
             "template mismatch: " + mq.questions[i]);
      MaskedSpan s;
      s.sentinel = mq.question_span[i];
      std::istringstream ss(mq.targets[i]);
      std::string w;
      while (ss >> w) s.tokens.push_back(w);
      from_answers.push_back(std::move(s));
    }
    expect(reconstruct_tokens(mq.masked_tokens, from_answers) == tokens,
           "mqma reconstruction failed at trial " + std::to_string(trial));
  }
  return "1000 standard + " + std::to_string(mqma_examples) +
         " mqma examples reconstructed, templates byte-checked";
}

// ---- C4: cost-model fidelity -----------------------------------------------

std::string check_cost_model() {
  // frozen closed-form values
  const CostParams headline{5, 20, 500, 50};
  expect(analytic_cost(headline, Strategy::kSqsa).encoder_units == 1352000ull,
         "SQSA encoder units != 1,352,000");
  expect(analytic_cost(headline, Strategy::kPromptParallel).encoder_units == 360000ull,
         "MQMA encoder units != 360,000");

  ModelConfig cfg;
  cfg.d_emb = 32;
  cfg.n_layers_enc = 2;
  cfg.n_layers_dec = 2;
  cfg.n_heads = 4;
  cfg.ffn_dim = 64;
  cfg.n_max = 5;
  cfg.max_answer_len = 16;
  cfg.init_seed = 5;
  const Vocab vocab = build_vocab({"answer of question 1: 2: 3: 4: 5: a b c d"}, 64);
  Model model(cfg, vocab);

  // 20-point grid: instrumented counts must equal the closed forms exactly
  BenchOptions counts_only;
  counts_only.measure_time = false;
  Rng rng(41);
  int points = 0;
  for (int p = 0; p < 20; ++p) {
    CostParams params;
    params.n = static_cast<int>(rng.uniform_int(1, 5));
    params.l_q = static_cast<int>(rng.uniform_int(2, 10));
    params.l_c = static_cast<int>(rng.uniform_int(10, 60));
    params.l_a = static_cast<int>(rng.uniform_int(2, 16));
    for (auto s : {Strategy::kSqsa, Strategy::kNaiveConcat, Strategy::kPromptParallel}) {
      const auto measured = empirical_bench(model, params, s, counts_only);
      const auto expected = analytic_cost(params, s);
      expect(measured.encoder_units == expected.encoder_units &&
                 measured.decoder_units == expected.decoder_units &&
                 measured.seq_steps == expected.seq_steps,
             std::string("count mismatch for ") + strategy_name(s) + " at grid point " +
                 std::to_string(p));
    }
    ++points;
  }

  // latency orderings (medians; values are machine-specific, orderings are not)
  BenchOptions timed;
  timed.repeats = 7;
  timed.warmup = 2;
  std::ostringstream os;
  os << "grid=" << points << "pts exact";
  for (int n : {2, 5}) {
    const CostParams p{n, 20, 500, 8};
    const auto sqsa = empirical_bench(model, p, Strategy::kSqsa, timed);
    const auto mqma = empirical_bench(model, p, Strategy::kPromptParallel, timed);
    // sqsa.encoder_ms covers the n per-question passes of one image
    expect(mqma.encoder_ms < sqsa.encoder_ms,
           "MQMA encoder not faster than n x per-question SQSA at n=" + std::to_string(n));
    os << "; enc n=" << n << ": " << format_double(mqma.encoder_ms) << "ms vs "
       << format_double(sqsa.encoder_ms) << "ms";
  }
  for (int la : {8, 16}) {
    const CostParams p{2, 20, 500, la};
    const auto naive = empirical_bench(model, p, Strategy::kNaiveConcat, timed);
    const auto par = empirical_bench(model, p, Strategy::kPromptParallel, timed);
    const auto sqsa = empirical_bench(model, p, Strategy::kSqsa, timed);
    expect(naive.decoder_ms > par.decoder_ms,
           "naive decoder not slower than prompt-parallel at L_A=" + std::to_string(la));
    const double rel = std::abs(par.decoder_ms - sqsa.decoder_ms) / sqsa.decoder_ms;
    expect(rel <= 0.10, "prompt-parallel decoder " + format_double(rel * 100) +
                            "% off SQSA at L_A=" + std::to_string(la));
    os << "; dec L_A=" << la << ": naive " << format_double(naive.decoder_ms) << "ms > par "
       << format_double(par.decoder_ms) << "ms ~ sqsa " << format_double(sqsa.decoder_ms) << "ms";
  }
  return os.str();
}

// ---- C5: augmentation coverage ---------------------------------------------

std::string check_augmentation() {
  Document doc;
  doc.id = "aug";
  doc.page_width = 32;
  doc.page_height = 32;
  doc.tokens = {{"w", {0, 0, 8, 8}}};
  doc.image.assign(32 * 32, 0.5f);
  for (int i = 0; i < 4; ++i) doc.qa.push_back({"q" + std::to_string(i), {"a"}, "g"});

  // coverage: all 16 ordered batches of sizes 1..2 from 4 questions
  AugmentConfig cfg;
  cfg.n = 2;
  std::set<std::vector<int>> seen;
  Rng rng(314159);
  for (int draw = 0; draw < 10000; ++draw)
    seen.insert(sample_training_batch(doc, cfg, rng).question_indices);
  expect(seen.size() == 16, "observed " + std::to_string(seen.size()) + " of 16 ordered batches");

  // leak safety over 1e5 draws with the {Q1,Q2,Q3} / {Q4,Q5} grouping
  Document leak_doc = doc;
  leak_doc.qa.clear();
  const char* groups[5] = {"a", "a", "a", "b", "b"};
  for (int i = 0; i < 5; ++i)
    leak_doc.qa.push_back({"q" + std::to_string(i), {"x"}, groups[i]});
  AugmentConfig leak_cfg;
  leak_cfg.n = 5;
  Rng leak_rng(2718);
  for (int draw = 0; draw < 100000; ++draw) {
    const auto batch = sample_training_batch(leak_doc, leak_cfg, leak_rng);
    const bool in_a = batch.question_indices.front() <= 2;
    for (int q : batch.question_indices)
      expect((q <= 2) == in_a, "leak-group mix at draw " + std::to_string(draw));
  }

  // partition: every question exactly once for m in 1..7, n in 1..5
  for (int m = 1; m <= 7; ++m)
    for (int n = 1; n <= 5; ++n) {
      std::vector<std::string> labels;
      for (int i = 0; i < m; ++i) labels.push_back(i < (m + 1) / 2 ? "a" : "b");
      std::vector<int> counts(static_cast<std::size_t>(m), 0);
      for (const auto& b : inference_batches(labels, n)) {
        expect(static_cast<int>(b.size()) <= n, "oversized inference batch");
        for (int q : b) ++counts[static_cast<std::size_t>(q)];
      }
      for (int c : counts)
        expect(c == 1, "partition violated at m=" + std::to_string(m) + " n=" + std::to_string(n));
    }
  return "16/16 ordered batches in 1e4 draws, leak-safe over 1e5 draws, partitions exact";
}

// ---- C6: metrics -------------------------------------------------------------

std::string check_metrics() {
  expect(levenshtein("kitten", "sitting") == 3, "levenshtein(kitten,sitting) != 3");
  const double anls_607 = anls_score("607", {"6.7"});
  expect(std::abs(anls_607 - 2.0 / 3.0) < 1e-9, "anls(607,6.7) != 2/3");
  expect(anls_score("hello", {"world"}) == 0.0, "NL >= 0.5 must threshold to 0");

  // brute-force DP oracle over 1000 random pairs, |s| <= 12
  Rng rng(271828);
  auto oracle = [](const std::string& a, const std::string& b) {
    std::vector<std::vector<int>> d(a.size() + 1, std::vector<int>(b.size() + 1, 0));
    for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = static_cast<int>(i);
    for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= a.size(); ++i)
      for (std::size_t j = 1; j <= b.size(); ++j)
        d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                            d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    return d[a.size()][b.size()];
  };
  for (int trial = 0; trial < 1000; ++trial) {
    std::string a, b;
    for (int i = static_cast<int>(rng.uniform_int(0, 12)); i > 0; --i)
      a.push_back(static_cast<char>('a' + rng.uniform_int(0, 4)));
    for (int i = static_cast<int>(rng.uniform_int(0, 12)); i > 0; --i)
      b.push_back(static_cast<char>('a' + rng.uniform_int(0, 4)));
    expect(levenshtein(a, b) == oracle(a, b), "oracle mismatch on '" + a + "' vs '" + b + "'");
    const double s = anls_score(a, {b});
    expect(s >= 0.0 && s <= 1.0, "anls out of range");
    const std::size_t denom = std::max(a.size(), b.size());
    if (denom > 0 && static_cast<double>(oracle(a, b)) / static_cast<double>(denom) >= 0.5)
      expect(s == 0.0, "anls thresholding violated");
  }
  return "frozen cases + 1000-pair DP oracle agree";
}

// ---- C7: end-to-end smoke -----------------------------------------------------

ModelConfig smoke_config() {
  ModelConfig cfg;
  cfg.d_emb = 32;
  cfg.n_layers_enc = 2;
  cfg.n_layers_dec = 2;
  cfg.n_heads = 4;
  cfg.ffn_dim = 128;
  cfg.n_max = 5;
  cfg.max_answer_len = 6;
  cfg.max_text_len = 160;
  cfg.init_seed = 7;
  return cfg;
}

double probe_loss(Model& model, const std::vector<Document>& docs) {
  // Fixed probe over the training QA: singletons plus both pair orders per
  // document; the same measuring stick for both augmentation modes.
  std::vector<TrainExample> probes;
  for (const auto& doc : docs) {
    if (doc.qa.size() < 2) continue;
    for (const std::vector<int>& idx : {std::vector<int>{0}, {1}, {0, 1}, {1, 0}})
      probes.push_back(make_finetune_example(doc, idx, model.vocab(), model.config()));
  }
  return model.training_loss(probes, Strategy::kPromptParallel);
}

std::string check_end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto tmp = std::filesystem::temp_directory_path() / "mqma_acceptance_e2e";
  std::filesystem::create_directories(tmp);

  CorpusGenConfig gen;
  gen.seed = 2024;
  gen.num_docs = 200;
  gen.min_words = 18;
  gen.max_words = 30;
  gen.qa_per_doc = 2;
  gen.vocab_words = default_word_list();
  const auto corpus = generate_corpus(gen);
  const Vocab vocab = build_training_vocab(corpus, 512);

  Model model(smoke_config(), vocab);
  PretrainConfig pre;
  pre.task = "mqma";
  pre.steps = 500;
  pre.batch_size = 8;
  pre.seed = 1;
  pre.lr = 3e-3;
  const auto pre_result = pretrain(model, corpus, pre);
  const double initial = pre_result.losses.front();
  const double final_loss = pre_result.losses.back();
  expect(final_loss < 0.5 * initial, "pretrain loss " + format_double(final_loss) +
                                         " not below half of " + format_double(initial));

  const std::string ckpt = (tmp / "pretrain.ckpt").string();
  save_checkpoint(ckpt, model);

  // memorizable 50-question split: the first 25 documents (2 QA each)
  const std::vector<Document> split(corpus.begin(), corpus.begin() + 25);

  FinetuneConfig fin;
  fin.n = 2;
  fin.steps = 300;
  fin.batch_size = 8;
  fin.seed = 3;
  fin.lr = 3e-3;
  auto dyn_model = load_checkpoint(ckpt);
  finetune(*dyn_model, split, fin);
  EvalConfig ev;
  ev.n = 2;
  const auto outcome = evaluate(*dyn_model, split, ev);
  expect(outcome.records.size() == 50,
         "expected 50 evaluated questions, got " + std::to_string(outcome.records.size()));
  expect(outcome.mean_anls >= 0.9,
         "train-split ANLS " + format_double(outcome.mean_anls) + " < 0.9");

  // directional Table-6 mirror: identical seeds/steps, dynamic vs static,
  // measured on the same fixed probe batches
  FinetuneConfig stat = fin;
  stat.augment = AugmentConfig::Mode::kStatic;
  auto stat_model = load_checkpoint(ckpt);
  finetune(*stat_model, split, stat);
  const double dyn_probe = probe_loss(*dyn_model, split);
  const double stat_probe = probe_loss(*stat_model, split);
  expect(dyn_probe <= stat_probe, "dynamic probe loss " + format_double(dyn_probe) +
                                      " > static " + format_double(stat_probe));

  const double elapsed = seconds_since(t0);
  expect(elapsed < 600.0, "end-to-end runtime " + format_double(elapsed) + "s >= 600s");
  std::filesystem::remove_all(tmp);
  std::ostringstream os;
  os << "loss " << format_double(initial) << "->" << format_double(final_loss) << ", anls "
     << format_double(outcome.mean_anls) << ", probe dyn " << format_double(dyn_probe)
     << " <= static " << format_double(stat_probe) << ", " << format_double(elapsed) << "s";
  return os.str();
}

// ---- C8: ablation flags -------------------------------------------------------

std::string check_ablation_flags() {
  const Vocab vocab =
      build_vocab({"answer of question 1: 2: 3: 4: 5: what is word number river stone maple"}, 128);
  ModelConfig cfg;
  cfg.d_emb = 16;
  cfg.n_layers_enc = 1;
  cfg.n_layers_dec = 1;
  cfg.n_heads = 2;
  cfg.ffn_dim = 32;
  cfg.n_max = 3;
  cfg.max_answer_len = 4;
  cfg.max_text_len = 64;
  cfg.use_question_index_embeddings = false;
  Model model(cfg, vocab);

  Document doc;
  doc.id = "ab";
  doc.page_width = 64;
  doc.page_height = 64;
  doc.tokens = {{"river", {2, 2, 20, 10}}, {"stone", {22, 2, 40, 10}}};
  doc.image.assign(64 * 64, 0.5f);

  EncoderInput in = assemble_encoder_input({"what is river", "what is stone"}, doc, vocab, 64);
  EncoderInput forced = in;
  std::fill(forced.question_index.begin(), forced.question_index.end(), 0);
  Tape t1(false), t2(false);
  const Mat a = model.embed_input(t1, in)->value;
  const Mat b = model.embed_input(t2, forced)->value;
  expect(a == b, "QIE-off embeddings depend on question indices");

  // frozen prompts stay bit-identical through fine-tuning steps
  doc.qa = {{"what is word number 0 ?", {"river"}, "g"},
            {"what is word number 1 ?", {"stone"}, "g"}};
  ModelConfig fcfg = cfg;
  fcfg.use_question_index_embeddings = true;
  fcfg.freeze_prompts = true;
  Model frozen(fcfg, vocab);
  std::vector<Mat> before;
  for (int i = 1; i <= fcfg.n_max; ++i) before.push_back(frozen.prompt_param(i).value);
  FinetuneConfig fin;
  fin.n = 2;
  fin.steps = 10;
  fin.batch_size = 1;
  finetune(frozen, {doc}, fin);
  for (int i = 1; i <= fcfg.n_max; ++i)
    expect(frozen.prompt_param(i).value == before[static_cast<std::size_t>(i - 1)],
           "prompt " + std::to_string(i) + " changed under freeze");
  return "QIE-off embeddings index-independent; frozen prompts bit-identical after 10 steps";
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<std::string()> run;
  };
  const std::vector<Criterion> criteria = {
      {"gradient-correctness", check_gradients},
      {"strategy-equivalence", check_strategy_equivalence},
      {"denoising-round-trip", check_denoising},
      {"cost-model-fidelity", check_cost_model},
      {"augmentation-coverage", check_augmentation},
      {"metrics", check_metrics},
      {"end-to-end-smoke", check_end_to_end},
      {"ablation-flags", check_ablation_flags},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const std::string detail = c.run();
      std::printf("[PASS] %-22s %s (%.1fs)\n", c.name, detail.c_str(), seconds_since(t0));
    } catch (const Failure& f) {
      ++failures;
      std::printf("[FAIL] %-22s %s (%.1fs)\n", c.name, f.detail.c_str(), seconds_since(t0));
    } catch (const std::exception& e) {
      ++failures;
      std::printf("[FAIL] %-22s exception: %s (%.1fs)\n", c.name, e.what(), seconds_since(t0));
    }
    std::fflush(stdout);
  }
  if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
