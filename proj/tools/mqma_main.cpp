// Command-line front end: corpus generation, denoising pre-training,
// fine-tuning, evaluation, decoder benchmarking, and sample inspection.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

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

namespace {

namespace fs = std::filesystem;

struct ModelFlags {
  mqma::ModelConfig cfg;
  int vocab_size = 512;
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
  cmd->add_option("--d-emb", mf.cfg.d_emb, "Embedding width");
  cmd->add_option("--enc-layers", mf.cfg.n_layers_enc, "Encoder layers");
  cmd->add_option("--dec-layers", mf.cfg.n_layers_dec, "Decoder layers");
  cmd->add_option("--heads", mf.cfg.n_heads, "Attention heads");
  cmd->add_option("--ffn-dim", mf.cfg.ffn_dim, "Feed-forward width");
  cmd->add_option("--n-max", mf.cfg.n_max, "Maximum questions per sample");
  cmd->add_option("--max-answer-len", mf.cfg.max_answer_len, "Answer token budget");
  cmd->add_option("--max-text-len", mf.cfg.max_text_len, "Text sequence budget");
  cmd->add_option("--dropout", mf.cfg.dropout, "Dropout probability");
  cmd->add_flag("--no-qie", [&mf](std::int64_t) { mf.cfg.use_question_index_embeddings = false; },
                "Disable question-index embeddings");
  cmd->add_flag("--freeze-prompts", [&mf](std::int64_t) { mf.cfg.freeze_prompts = true; },
                "Keep decoder prompts fixed during training");
  cmd->add_option("--vocab-size", mf.vocab_size, "Vocabulary cap including specials");
}

void add_config_file(CLI::App* cmd, std::string& path) {
  cmd->add_option("--config", path, "key=value config file; explicit flags override");
}

// Expands `--config <file>` into option tokens inserted right after the
// subcommand name, so explicitly passed flags take precedence (every option
// uses a take-last policy). Lines are `key=value`; blank lines and lines
// starting with '#' are skipped; flag keys apply when truthy.
std::vector<std::string> expand_config_args(CLI::App& app, std::vector<std::string> args) {
  if (args.empty()) return args;
  CLI::App* sub = app.get_subcommand_no_throw(args[0]);
  if (!sub) return args;

  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      break;
    }
  }
  if (path.empty()) return args;

  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  std::vector<std::string> expanded;
  std::string line;
  while (std::getline(f, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line is not key=value: " + line);
    std::string key = line.substr(first, eq - first);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    std::string value = line.substr(eq + 1);
    const auto vb = value.find_first_not_of(" \t");
    value = vb == std::string::npos ? "" : value.substr(vb);
    while (!value.empty() && (value.back() == ' ' || value.back() == '\t' || value.back() == '\r'))
      value.pop_back();

    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (!opt) throw std::runtime_error("unknown config key: " + key);
    if (opt->get_expected_max() == 0) {  // flag
      if (value == "true" || value == "1" || value == "on" || value == "yes")
        expanded.push_back("--" + key);
    } else {
      expanded.push_back("--" + key);
      expanded.push_back(value);
    }
  }
  args.insert(args.begin() + 1, expanded.begin(), expanded.end());
  return args;
}

std::string out_path(const std::string& dir, const std::string& name) {
  fs::create_directories(dir);
  return (fs::path(dir) / name).string();
}

std::vector<std::string> load_word_list(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open word list " + path);
  std::vector<std::string> words;
  std::string w;
  while (f >> w) words.push_back(w);
  if (words.empty()) throw std::runtime_error("word list " + path + " is empty");
  return words;
}

void print_sample(const mqma::TrainExample& ex, const mqma::Vocab& vocab,
                  const std::vector<std::string>& questions) {
  std::printf("questions (%d):\n", ex.input.n_questions);
  for (std::size_t i = 0; i < questions.size(); ++i)
    std::printf("  Q%zu: %s\n", i + 1, questions[i].c_str());
  std::printf("text block (%d positions):\n", ex.input.text_len());
  std::printf("  %-4s %-14s %-4s %-4s %s\n", "pos", "token", "mod", "qidx", "box(x1,y1,x2,y2,w,h)");
  for (int i = 0; i < ex.input.text_len(); ++i) {
    const auto& b = ex.input.boxes[static_cast<std::size_t>(i)];
    std::printf("  %-4d %-14s %-4d %-4d (%d,%d,%d,%d,%d,%d)\n", i,
                vocab.token(ex.input.token_ids[static_cast<std::size_t>(i)]).c_str(),
                ex.input.modality[static_cast<std::size_t>(i)],
                ex.input.question_index[static_cast<std::size_t>(i)], b.x1, b.y1, b.x2, b.y2, b.w,
                b.h);
  }
  std::printf("visual block: %d positions, modality 1, question index 0\n", mqma::kVisualLen);
  std::printf("patch grid: %d patches of %d values, mean %.4f\n", mqma::kNumPatches,
              mqma::kPatchDim, ex.input.patch_grid.mean());
  std::printf("targets:\n");
  for (std::size_t i = 0; i < ex.targets.size(); ++i)
    std::printf("  A%zu: %s\n", i + 1, mqma::detokenize(ex.targets[i], vocab).c_str());
}

int run(int argc, char** argv) {
  CLI::App app{"Multi-question document VQA pipeline on synthetic OCR corpora"};
  app.require_subcommand(1);

  // gen-corpus ------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic JSONL corpus");
  mqma::CorpusGenConfig gen_cfg;
  std::string gen_out = "out";
  std::string word_list_path;
  gen->add_option("--seed", gen_cfg.seed, "Generator seed")->envname("MQMA_SEED");
  gen->add_option("--docs", gen_cfg.num_docs, "Number of documents");
  gen->add_option("--min-words", gen_cfg.min_words, "Minimum words per document");
  gen->add_option("--max-words", gen_cfg.max_words, "Maximum words per document");
  gen->add_option("--qa", gen_cfg.qa_per_doc, "QA items per document (0 = pre-training corpus)");
  gen->add_option("--leak-groups", gen_cfg.leak_groups, "Leak groups per document");
  gen->add_option("--words", word_list_path, "Word list file (default: built-in list)");
  gen->add_option("--out", gen_out, "Output directory");
  std::string gen_config;
  add_config_file(gen, gen_config);

  // pretrain ---------------------------------------------------------------
  auto* pre = app.add_subcommand("pretrain", "Denoising pre-training on a corpus");
  std::string pre_corpus, pre_out = "out";
  ModelFlags pre_model;
  mqma::PretrainConfig pre_cfg;
  pre->add_option("--corpus", pre_corpus, "Corpus JSONL path")->required();
  pre->add_option("--task", pre_cfg.task, "standard or mqma");
  pre->add_option("--steps", pre_cfg.steps, "Training steps");
  pre->add_option("--batch", pre_cfg.batch_size, "Batch size");
  pre->add_option("--seed", pre_cfg.seed, "Training seed")->envname("MQMA_SEED");
  pre->add_option("--lr", pre_cfg.lr, "Learning rate");
  pre->add_option("--weight-decay", pre_cfg.weight_decay, "Decoupled weight decay");
  pre->add_option("--warmup-frac", pre_cfg.warmup_frac, "Linear warmup fraction");
  pre->add_option("--masks", pre_cfg.denoise.num_masks, "Masked spans per example");
  pre->add_option("--max-span", pre_cfg.denoise.max_span_len, "Maximum span length");
  pre->add_option("--mask-ratio", pre_cfg.denoise.mask_ratio, "Masked-token budget ratio");
  pre->add_option("--ctx-len", pre_cfg.denoise.ctx_len, "Context tokens quoted in questions");
  pre->add_flag("--before-style", pre_cfg.denoise.use_before_style,
                "Quote trailing context in questions");
  pre->add_option("--init-seed", pre_model.cfg.init_seed, "Weight init seed");
  pre->add_option("--out", pre_out, "Output directory");
  add_model_flags(pre, pre_model);
  std::string pre_config;
  add_config_file(pre, pre_config);

  // finetune ---------------------------------------------------------------
  auto* fin = app.add_subcommand("finetune", "Fine-tune a checkpoint on QA documents");
  std::string fin_corpus, fin_ckpt, fin_out = "out", fin_augment = "dynamic";
  bool fin_freeze = false, fin_no_qie = false;
  mqma::FinetuneConfig fin_cfg;
  fin->add_option("--corpus", fin_corpus, "Corpus JSONL path")->required();
  fin->add_option("--ckpt", fin_ckpt, "Input checkpoint")->required();
  fin->add_option("--n", fin_cfg.n, "Questions answered at a time");
  fin->add_option("--augment", fin_augment, "dynamic or static");
  fin->add_option("--steps", fin_cfg.steps, "Training steps");
  fin->add_option("--batch", fin_cfg.batch_size, "Batch size");
  fin->add_option("--seed", fin_cfg.seed, "Training seed")->envname("MQMA_SEED");
  fin->add_option("--lr", fin_cfg.lr, "Learning rate");
  fin->add_option("--weight-decay", fin_cfg.weight_decay, "Decoupled weight decay");
  fin->add_option("--warmup-frac", fin_cfg.warmup_frac, "Linear warmup fraction");
  fin->add_flag("--freeze-prompts", fin_freeze, "Keep decoder prompts fixed");
  fin->add_flag("--no-qie", fin_no_qie, "Disable question-index embeddings");
  fin->add_option("--out", fin_out, "Output directory");
  std::string fin_config;
  add_config_file(fin, fin_config);

  // eval --------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint; writes the metrics CSV");
  std::string ev_corpus, ev_ckpt, ev_out = "out", ev_metric = "anls";
  mqma::EvalConfig ev_cfg;
  ev->add_option("--corpus", ev_corpus, "Corpus JSONL path")->required();
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
  ev->add_option("--n", ev_cfg.n, "Questions answered at a time");
  ev->add_option("--metric", ev_metric, "anls or vqa_acc (summary line)");
  ev->add_flag("--sqsa-when-n1", ev_cfg.sqsa_when_n1, "Decode from [START] when n = 1");
  ev->add_option("--out", ev_out, "Output directory");
  std::string ev_config;
  add_config_file(ev, ev_config);

  // bench-decoder -------------------------------------------------------------
  auto* bench = app.add_subcommand("bench-decoder", "Analytic + measured decoding costs");
  mqma::CostParams bench_params;
  std::string bench_strategies = "all", bench_out = "out";
  mqma::BenchOptions bench_opt;
  ModelFlags bench_model;
  std::uint64_t bench_seed = 7;
  bench->add_option("--n", bench_params.n, "Questions per image");
  bench->add_option("--lq", bench_params.l_q, "Tokens per question");
  bench->add_option("--lc", bench_params.l_c, "Content length");
  bench->add_option("--la", bench_params.l_a, "Decoder positions per answer");
  bench->add_option("--strategies", bench_strategies, "all, sqsa, naive, or parallel");
  bench->add_option("--repeats", bench_opt.repeats, "Timing repeats (median)");
  bench->add_option("--seed", bench_seed, "Synthetic input seed")->envname("MQMA_SEED");
  bench->add_flag("--no-time", [&bench_opt](std::int64_t) { bench_opt.measure_time = false; },
                  "Skip wall-time measurement, report units only");
  bench->add_option("--out", bench_out, "Output directory");
  add_model_flags(bench, bench_model);
  std::string bench_config;
  add_config_file(bench, bench_config);

  // inspect-sample -------------------------------------------------------------
  auto* ins = app.add_subcommand("inspect-sample", "Print one assembled training example");
  std::string ins_corpus, ins_mode = "auto";
  std::uint64_t ins_seed = 0;
  int ins_doc = 0, ins_n = 2;
  ModelFlags ins_model;
  ins->add_option("--corpus", ins_corpus, "Corpus JSONL path")->required();
  ins->add_option("--mode", ins_mode, "auto, pretrain-mqma, pretrain-standard, or finetune");
  ins->add_option("--seed", ins_seed, "Sampling seed")->envname("MQMA_SEED");
  ins->add_option("--doc", ins_doc, "Document index");
  ins->add_option("--n", ins_n, "Questions per sample (finetune mode)");
  add_model_flags(ins, ins_model);
  std::string ins_config;
  add_config_file(ins, ins_config);

  // explicit flags take precedence over config-file values
  for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
    for (CLI::Option* opt : sub->get_options())
      if (opt->get_expected_max() > 0) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  try {
    auto args = expand_config_args(app, {argv + 1, argv + argc});
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    std::cerr << "run '" << (argv[0] ? argv[0] : "mqma") << " --help' for usage\n";
    return 2;
  }

  if (gen->parsed()) {
    gen_cfg.vocab_words = word_list_path.empty() ? mqma::default_word_list()
                                                 : load_word_list(word_list_path);
    const auto docs = mqma::generate_corpus(gen_cfg);
    const auto path = out_path(gen_out, "corpus.jsonl");
    mqma::save_documents(path, docs);
    std::printf("wrote %zu documents to %s\n", docs.size(), path.c_str());
  } else if (pre->parsed()) {
    const auto corpus = mqma::load_documents(pre_corpus);
    const auto vocab = mqma::build_training_vocab(corpus, pre_model.vocab_size,
                                                  mqma::Vocab::kDefaultMaskCount,
                                                  pre_model.cfg.n_max);
    mqma::Model model(pre_model.cfg, vocab);
    const auto result = mqma::pretrain(model, corpus, pre_cfg);
    mqma::save_vocab(out_path(pre_out, "vocab.txt"), vocab);
    mqma::write_loss_csv(out_path(pre_out, "pretrain_loss.csv"), result);
    mqma::save_checkpoint(out_path(pre_out, "pretrain.ckpt"), model);
    std::printf("pretrain done: %d steps, loss %.4f -> %.4f\n", pre_cfg.steps,
                result.losses.front(), result.losses.back());
  } else if (fin->parsed()) {
    const auto corpus = mqma::load_documents(fin_corpus);
    auto model = mqma::load_checkpoint(fin_ckpt);
    if (fin_freeze) model->set_freeze_prompts(true);
    if (fin_no_qie) model->set_use_question_index(false);
    fin_cfg.augment = fin_augment == "static" ? mqma::AugmentConfig::Mode::kStatic
                                              : mqma::AugmentConfig::Mode::kDynamic;
    const auto result = mqma::finetune(*model, corpus, fin_cfg);
    mqma::write_loss_csv(out_path(fin_out, "finetune_loss.csv"), result);
    mqma::save_checkpoint(out_path(fin_out, "finetune.ckpt"), *model);
    std::printf("finetune done: %d steps, loss %.4f -> %.4f\n", fin_cfg.steps,
                result.losses.front(), result.losses.back());
  } else if (ev->parsed()) {
    const auto corpus = mqma::load_documents(ev_corpus);
    auto model = mqma::load_checkpoint(ev_ckpt);
    const auto outcome = mqma::evaluate(*model, corpus, ev_cfg);
    mqma::write_eval_csv(out_path(ev_out, "eval.csv"), outcome.records);
    if (ev_metric == "vqa_acc")
      std::printf("questions=%zu mean_vqa_acc=%.4f\n", outcome.records.size(), outcome.mean_vqa_acc);
    else
      std::printf("questions=%zu mean_anls=%.4f\n", outcome.records.size(), outcome.mean_anls);
  } else if (bench->parsed()) {
    std::vector<mqma::Strategy> strategies;
    if (bench_strategies == "all")
      strategies = {mqma::Strategy::kSqsa, mqma::Strategy::kNaiveConcat,
                    mqma::Strategy::kPromptParallel};
    else
      strategies = {mqma::strategy_from_name(bench_strategies)};
    bench_model.cfg.n_max = std::max(bench_model.cfg.n_max, bench_params.n);
    bench_model.cfg.max_answer_len = std::max(bench_model.cfg.max_answer_len, bench_params.l_a);
    bench_model.cfg.init_seed = bench_seed;
    bench_opt.input_seed = bench_seed;
    const mqma::Vocab vocab =
        mqma::build_vocab({"alpha beta gamma delta epsilon zeta eta theta"}, 64);
    mqma::Model model(bench_model.cfg, vocab);
    std::vector<mqma::CostReport> reports;
    for (auto s : strategies) {
      auto rep = mqma::empirical_bench(model, bench_params, s, bench_opt);
      const auto analytic = mqma::analytic_cost(bench_params, s);
      if (rep.encoder_units != analytic.encoder_units || rep.decoder_units != analytic.decoder_units)
        throw std::runtime_error("bench: instrumented counts diverge from the closed forms");
      reports.push_back(rep);
      std::printf("%-16s enc_units=%llu dec_units=%llu steps=%d enc_ms=%.3f dec_ms=%.3f\n",
                  mqma::strategy_name(s), static_cast<unsigned long long>(rep.encoder_units),
                  static_cast<unsigned long long>(rep.decoder_units), rep.seq_steps, rep.encoder_ms,
                  rep.decoder_ms);
    }
    mqma::write_bench_csv(out_path(bench_out, "bench.csv"), reports);
  } else if (ins->parsed()) {
    const auto corpus = mqma::load_documents(ins_corpus);
    if (ins_doc < 0 || ins_doc >= static_cast<int>(corpus.size()))
      throw std::runtime_error("inspect-sample: document index out of range");
    const auto& doc = corpus[static_cast<std::size_t>(ins_doc)];
    const auto vocab = mqma::build_training_vocab(corpus, ins_model.vocab_size,
                                                  mqma::Vocab::kDefaultMaskCount,
                                                  ins_model.cfg.n_max);
    mqma::Rng rng(ins_seed);
    std::string mode = ins_mode;
    if (mode == "auto") mode = doc.qa.empty() ? "pretrain-mqma" : "finetune";
    std::printf("document %s (%d tokens, %d qa items), mode %s\n", doc.id.c_str(),
                static_cast<int>(doc.tokens.size()), static_cast<int>(doc.qa.size()), mode.c_str());
    if (mode == "finetune") {
      mqma::AugmentConfig aug;
      aug.n = ins_n;
      const auto batch = mqma::sample_training_batch(doc, aug, rng);
      std::vector<std::string> questions;
      for (int i : batch.question_indices)
        questions.push_back(doc.qa[static_cast<std::size_t>(i)].question);
      const auto ex = mqma::make_finetune_example(doc, batch.question_indices, vocab, ins_model.cfg);
      print_sample(ex, vocab, questions);
    } else {
      const std::string task = mode == "pretrain-standard" ? "standard" : "mqma";
      mqma::DenoiseConfig dcfg;
      std::vector<std::string> questions;
      if (task == "mqma") {
        // Replays the same rng stream make_pretrain_example consumes below.
        std::vector<std::string> words;
        for (const auto& t : doc.tokens) words.push_back(t.text);
        mqma::Rng q_rng(ins_seed);
        const auto m2 = mqma::mask_spans(words, q_rng, dcfg);
        questions = mqma::make_mqma_example(m2, q_rng, dcfg).questions;
      }
      const auto ex = mqma::make_pretrain_example(doc, task, vocab, ins_model.cfg, dcfg, rng);
      print_sample(ex, vocab, questions);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
