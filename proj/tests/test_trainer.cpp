#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "mqma/trainer.hpp"

using namespace mqma;

namespace {

std::vector<Document> tiny_corpus(int docs, int qa_per_doc, std::uint64_t seed = 9) {
  CorpusGenConfig cfg;
  cfg.seed = seed;
  cfg.num_docs = docs;
  cfg.min_words = 12;
  cfg.max_words = 20;
  cfg.qa_per_doc = qa_per_doc;
  auto words = default_word_list();
  words.resize(16);
  cfg.vocab_words = std::move(words);
  return generate_corpus(cfg);
}

ModelConfig trainer_config() {
  ModelConfig cfg;
  cfg.d_emb = 16;
  cfg.n_layers_enc = 1;
  cfg.n_layers_dec = 1;
  cfg.n_heads = 2;
  cfg.ffn_dim = 32;
  cfg.n_max = 5;
  cfg.max_answer_len = 6;
  cfg.max_text_len = 128;
  cfg.init_seed = 77;
  return cfg;
}

}  // namespace

TEST_CASE("training vocab covers documents, qa text, and templates", "[trainer]") {
  const auto corpus = tiny_corpus(5, 2);
  const Vocab v = build_training_vocab(corpus, 256);
  REQUIRE(v.contains(corpus[0].tokens[0].text));
  for (const char* w : {"which", "what", "masked", "tokens", "after", "answer", "question", "word"})
    REQUIRE(v.contains(w));
  REQUIRE(v.contains("1:"));
  REQUIRE(v.contains("2:"));
}

TEST_CASE("mqma pretrain examples align questions, spans, and answers", "[trainer]") {
  const auto corpus = tiny_corpus(3, 0);
  const Vocab v = build_training_vocab(corpus, 256);
  const auto cfg = trainer_config();
  DenoiseConfig dcfg;
  Rng rng(4);
  const auto ex = make_pretrain_example(corpus[0], "mqma", v, cfg, dcfg, rng);
  REQUIRE(ex.input.n_questions >= 1);
  REQUIRE(ex.input.n_questions <= 5);
  REQUIRE(ex.targets.size() == static_cast<std::size_t>(ex.input.n_questions));
  for (const auto& t : ex.targets) {
    REQUIRE(t.back() == Vocab::kEos);
    REQUIRE(t.size() >= 2);  // at least one answer token
  }
  // sentinel ids appear in both the question block and the content block
  const auto sentinel_positions = [&](int qidx_value) {
    std::set<int> ids;
    for (std::size_t i = 0; i < ex.input.token_ids.size(); ++i)
      if (ex.input.question_index[i] == qidx_value &&
          v.token(ex.input.token_ids[i]).rfind("[MASK_", 0) == 0)
        ids.insert(ex.input.token_ids[i]);
    return ids;
  };
  const auto content_sentinels = sentinel_positions(0);
  REQUIRE(static_cast<int>(content_sentinels.size()) == ex.input.n_questions);
  for (int q = 1; q <= ex.input.n_questions; ++q) {
    const auto in_question = sentinel_positions(q);
    REQUIRE(in_question.size() == 1);
    REQUIRE(content_sentinels.count(*in_question.begin()) == 1);
  }
}

TEST_CASE("standard pretrain examples have no questions", "[trainer]") {
  const auto corpus = tiny_corpus(3, 0);
  const Vocab v = build_training_vocab(corpus, 256);
  DenoiseConfig dcfg;
  Rng rng(4);
  const auto ex = make_pretrain_example(corpus[0], "standard", v, trainer_config(), dcfg, rng);
  REQUIRE(ex.input.n_questions == 0);
  REQUIRE(ex.targets.size() == 1);
  for (int qi : ex.input.question_index) REQUIRE(qi == 0);
  Rng rng2(4);
  REQUIRE_THROWS_AS(
      make_pretrain_example(corpus[0], "bogus", v, trainer_config(), dcfg, rng2),
      std::invalid_argument);
}

TEST_CASE("masked sentinel boxes cover their span", "[trainer]") {
  const auto corpus = tiny_corpus(1, 0);
  const auto& doc = corpus[0];
  std::vector<std::string> words;
  for (const auto& t : doc.tokens) words.push_back(t.text);
  const auto masked = apply_spans(words, {{1, 2}});
  const auto ocr = detail::masked_ocr_tokens(doc, masked);
  REQUIRE(ocr.size() == doc.tokens.size() - 1);
  REQUIRE(ocr[1].text == "[MASK_1]");
  REQUIRE(ocr[1].box.x1 == std::min(doc.tokens[1].box.x1, doc.tokens[2].box.x1));
  REQUIRE(ocr[1].box.x2 == std::max(doc.tokens[1].box.x2, doc.tokens[2].box.x2));
}

TEST_CASE("pretrain loss decreases and is reproducible per seed", "[trainer]") {
  const auto corpus = tiny_corpus(8, 0);
  const Vocab v = build_training_vocab(corpus, 256);
  PretrainConfig pcfg;
  pcfg.task = "mqma";
  pcfg.steps = 30;
  pcfg.batch_size = 2;
  pcfg.seed = 5;
  pcfg.lr = 5e-3;

  Model m1(trainer_config(), v);
  const auto r1 = pretrain(m1, corpus, pcfg);
  REQUIRE(r1.losses.size() == 30);
  for (double l : r1.losses) REQUIRE(std::isfinite(l));
  REQUIRE(r1.losses.back() < r1.losses.front());

  Model m2(trainer_config(), v);
  const auto r2 = pretrain(m2, corpus, pcfg);
  REQUIRE(r1.losses == r2.losses);  // bit-identical curves
}

TEST_CASE("standard pretrain also runs and learns", "[trainer]") {
  const auto corpus = tiny_corpus(8, 0);
  const Vocab v = build_training_vocab(corpus, 256);
  PretrainConfig pcfg;
  pcfg.task = "standard";
  pcfg.steps = 20;
  pcfg.batch_size = 2;
  pcfg.lr = 5e-3;
  Model model(trainer_config(), v);
  const auto r = pretrain(model, corpus, pcfg);
  REQUIRE(r.losses.back() < r.losses.front());
}

TEST_CASE("pretrain aborts with the step index on non-finite loss", "[trainer]") {
  const auto corpus = tiny_corpus(4, 0);
  const Vocab v = build_training_vocab(corpus, 256);
  Model model(trainer_config(), v);
  model.params().find("w_out")->value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  PretrainConfig pcfg;
  pcfg.steps = 3;
  pcfg.batch_size = 1;
  REQUIRE_THROWS_WITH(pretrain(model, corpus, pcfg),
                      Catch::Matchers::ContainsSubstring("step 0"));
}

TEST_CASE("frozen prompts stay bit-identical through finetuning", "[trainer]") {
  const auto corpus = tiny_corpus(4, 2);
  const Vocab v = build_training_vocab(corpus, 256);
  auto cfg = trainer_config();
  Model model(cfg, v);
  model.set_freeze_prompts(true);
  std::vector<Mat> before;
  for (int i = 1; i <= cfg.n_max; ++i) before.push_back(model.prompt_param(i).value);
  FinetuneConfig fcfg;
  fcfg.n = 2;
  fcfg.steps = 8;
  fcfg.batch_size = 2;
  const auto r = finetune(model, corpus, fcfg);
  REQUIRE(r.losses.size() == 8);
  for (int i = 1; i <= cfg.n_max; ++i)
    REQUIRE(model.prompt_param(i).value == before[static_cast<std::size_t>(i - 1)]);
  // sanity: the rest of the model did move
  Model fresh(cfg, v);
  REQUIRE(fresh.params().find("w_out")->value != model.params().find("w_out")->value);
}

TEST_CASE("static and dynamic modes differ only in the sampler", "[trainer]") {
  const auto corpus = tiny_corpus(4, 3);
  const Vocab v = build_training_vocab(corpus, 256);
  FinetuneConfig fcfg;
  fcfg.n = 2;
  fcfg.steps = 6;
  fcfg.batch_size = 2;

  fcfg.augment = AugmentConfig::Mode::kStatic;
  Model m_static(trainer_config(), v);
  const auto r_static = finetune(m_static, corpus, fcfg);

  // dynamic run with a sampler stub that replays the static chunk order
  fcfg.augment = AugmentConfig::Mode::kDynamic;
  Model m_stub(trainer_config(), v);
  std::unordered_map<const Document*, std::size_t> cursor;
  QuestionSampler stub = [&cursor, &fcfg](const Document& doc, Rng&) {
    AugmentConfig aug;
    aug.n = fcfg.n;
    const auto batches = static_batches(doc, aug);
    auto& cur = cursor[&doc];
    const auto pick = batches[cur % batches.size()].question_indices;
    ++cur;
    return pick;
  };
  const auto r_stub = finetune(m_stub, corpus, fcfg, stub);
  REQUIRE(r_static.losses == r_stub.losses);

  Model m_dyn(trainer_config(), v);
  const auto r_dyn = finetune(m_dyn, corpus, fcfg);
  REQUIRE(r_dyn.losses != r_static.losses);
}

TEST_CASE("finetune validates n against the model", "[trainer]") {
  const auto corpus = tiny_corpus(2, 2);
  const Vocab v = build_training_vocab(corpus, 256);
  Model model(trainer_config(), v);
  FinetuneConfig fcfg;
  fcfg.n = 99;
  REQUIRE_THROWS_AS(finetune(model, corpus, fcfg), std::invalid_argument);
  const auto no_qa = tiny_corpus(2, 0);
  FinetuneConfig ok;
  REQUIRE_THROWS_AS(finetune(model, no_qa, ok), std::invalid_argument);
}

TEST_CASE("evaluation scores every question exactly once", "[trainer]") {
  const auto corpus = tiny_corpus(3, 5);
  const Vocab v = build_training_vocab(corpus, 256);
  Model model(trainer_config(), v);
  for (int n = 1; n <= 3; ++n) {
    EvalConfig ecfg;
    ecfg.n = n;
    const auto outcome = evaluate(model, corpus, ecfg);
    std::set<std::string> ids;
    for (const auto& r : outcome.records) {
      REQUIRE(ids.insert(r.question_id).second);
      REQUIRE(r.anls >= 0.0);
      REQUIRE(r.anls <= 1.0);
      REQUIRE(r.vqa_acc >= 0.0);
      REQUIRE(r.vqa_acc <= 1.0);
    }
    REQUIRE(ids.size() == 15);  // 3 docs x 5 questions
  }
}

TEST_CASE("shuffled question storage still scores each question once", "[trainer]") {
  auto corpus = tiny_corpus(2, 4);
  std::swap(corpus[0].qa[0], corpus[0].qa[3]);
  std::swap(corpus[1].qa[1], corpus[1].qa[2]);
  const Vocab v = build_training_vocab(corpus, 256);
  Model model(trainer_config(), v);
  EvalConfig ecfg;
  ecfg.n = 3;
  const auto outcome = evaluate(model, corpus, ecfg);
  std::set<std::string> ids;
  for (const auto& r : outcome.records) ids.insert(r.question_id);
  REQUIRE(ids.size() == 8);
}

TEST_CASE("a memorizing model evaluates to a perfect score", "[trainer]") {
  // one document, one question: small enough to memorize in a few steps
  auto corpus = tiny_corpus(1, 1, 33);
  const Vocab v = build_training_vocab(corpus, 256);
  auto cfg = trainer_config();
  Model model(cfg, v);
  FinetuneConfig fcfg;
  fcfg.n = 1;
  fcfg.steps = 120;
  fcfg.batch_size = 1;
  fcfg.lr = 1e-2;
  finetune(model, corpus, fcfg);
  EvalConfig ecfg;
  ecfg.n = 1;
  const auto outcome = evaluate(model, corpus, ecfg);
  REQUIRE(outcome.records.size() == 1);
  REQUIRE(outcome.mean_anls == 1.0);
  REQUIRE(outcome.mean_vqa_acc == 1.0);
}

TEST_CASE("loss csv uses the step,loss layout", "[trainer]") {
  TrainResult r;
  r.losses = {2.5, 1.25};
  const auto path = (std::filesystem::temp_directory_path() / "mqma_loss_test.csv").string();
  write_loss_csv(path, r);
  std::ifstream f(path);
  std::string l0, l1, l2;
  std::getline(f, l0);
  std::getline(f, l1);
  std::getline(f, l2);
  REQUIRE(l0 == "step,loss");
  REQUIRE(l1 == "0,2.5");
  REQUIRE(l2 == "1,1.25");
  std::filesystem::remove(path);
}
