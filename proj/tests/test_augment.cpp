#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "mqma/augment.hpp"
#include "mqma/rng.hpp"

using namespace mqma;

namespace {

Document doc_with_groups(const std::vector<std::string>& groups) {
  Document doc;
  doc.id = "aug0";
  doc.page_width = 32;
  doc.page_height = 32;
  doc.tokens = {{"w", {0, 0, 8, 8}}};
  doc.image.assign(32 * 32, 0.5f);
  for (std::size_t i = 0; i < groups.size(); ++i)
    doc.qa.push_back({"q" + std::to_string(i), {"a" + std::to_string(i)}, groups[i]});
  return doc;
}

// All ordered batches of sizes 1..n drawn without replacement from 0..m-1,
// computed by exhaustive enumeration (the oracle for coverage checks).
std::set<std::vector<int>> enumerate_ordered_batches(int m, int n) {
  std::set<std::vector<int>> out;
  std::vector<std::vector<int>> frontier = {{}};
  for (int len = 1; len <= n; ++len) {
    std::vector<std::vector<int>> next;
    for (const auto& prefix : frontier) {
      for (int q = 0; q < m; ++q) {
        if (std::find(prefix.begin(), prefix.end(), q) != prefix.end()) continue;
        auto seq = prefix;
        seq.push_back(q);
        out.insert(seq);
        next.push_back(std::move(seq));
      }
    }
    frontier = std::move(next);
  }
  return out;
}

}  // namespace

TEST_CASE("dynamic sampling covers every admissible ordered batch", "[augment]") {
  const Document doc = doc_with_groups({"g", "g", "g", "g"});
  AugmentConfig cfg;
  cfg.n = 2;
  const auto expected = enumerate_ordered_batches(4, 2);
  REQUIRE(expected.size() == 16);  // 4 singletons + 4*3 ordered pairs

  Rng rng(2024);
  std::set<std::vector<int>> seen;
  for (int draw = 0; draw < 10000; ++draw) {
    const auto batch = sample_training_batch(doc, cfg, rng);
    REQUIRE(batch.size() >= 1);
    REQUIRE(batch.size() <= 2);
    seen.insert(batch.question_indices);
  }
  REQUIRE(seen == expected);
}

TEST_CASE("single question always yields the singleton batch", "[augment]") {
  const Document doc = doc_with_groups({"g"});
  AugmentConfig cfg;
  cfg.n = 3;
  Rng rng(5);
  for (int draw = 0; draw < 50; ++draw) {
    const auto batch = sample_training_batch(doc, cfg, rng);
    REQUIRE(batch.question_indices == std::vector<int>{0});
  }
}

TEST_CASE("dynamic batches never mix leak groups", "[augment]") {
  // Appendix-D-style grouping: {Q1,Q2,Q3} and {Q4,Q5}
  const Document doc = doc_with_groups({"a", "a", "a", "b", "b"});
  AugmentConfig cfg;
  cfg.n = 5;
  Rng rng(7);
  for (int draw = 0; draw < 10000; ++draw) {
    const auto batch = sample_training_batch(doc, cfg, rng);
    const bool in_a = batch.question_indices.front() <= 2;
    for (int q : batch.question_indices) REQUIRE((q <= 2) == in_a);
    REQUIRE(batch.leak_group == (in_a ? "a" : "b"));
    // no duplicates within a batch
    std::set<int> uniq(batch.question_indices.begin(), batch.question_indices.end());
    REQUIRE(uniq.size() == batch.question_indices.size());
  }
}

TEST_CASE("sampling a document without QA items fails", "[augment]") {
  Document doc = doc_with_groups({});
  AugmentConfig cfg;
  Rng rng(1);
  REQUIRE_THROWS_AS(sample_training_batch(doc, cfg, rng), std::invalid_argument);
}

TEST_CASE("static batches chunk the stored order", "[augment]") {
  const Document doc = doc_with_groups({"g", "g", "g", "g", "g"});
  AugmentConfig cfg;
  cfg.n = 2;
  cfg.mode = AugmentConfig::Mode::kStatic;
  const auto batches = static_batches(doc, cfg);
  REQUIRE(batches.size() == 3);
  REQUIRE(batches[0].question_indices == std::vector<int>{0, 1});
  REQUIRE(batches[1].question_indices == std::vector<int>{2, 3});
  REQUIRE(batches[2].question_indices == std::vector<int>{4});

  const auto again = static_batches(doc, cfg);
  for (std::size_t i = 0; i < batches.size(); ++i)
    REQUIRE(batches[i].question_indices == again[i].question_indices);
}

TEST_CASE("static chunking respects leak groups", "[augment]") {
  const Document doc = doc_with_groups({"a", "a", "a", "b", "b"});
  AugmentConfig cfg;
  cfg.n = 2;
  cfg.mode = AugmentConfig::Mode::kStatic;
  const auto batches = static_batches(doc, cfg);
  REQUIRE(batches.size() == 3);
  REQUIRE(batches[0].question_indices == std::vector<int>{0, 1});
  REQUIRE(batches[1].question_indices == std::vector<int>{2});
  REQUIRE(batches[2].question_indices == std::vector<int>{3, 4});
}

TEST_CASE("inference batching follows the fixed-order chunk rule", "[augment]") {
  const Document doc = doc_with_groups({"g", "g", "g", "g", "g"});
  const auto batches = inference_batches(doc, 2);
  REQUIRE(batches.size() == 3);
  REQUIRE(batches[0].question_indices == std::vector<int>{0, 1});
  REQUIRE(batches[2].question_indices == std::vector<int>{4});

  const auto singles = inference_batches(doc, 1);
  REQUIRE(singles.size() == 5);
  for (std::size_t i = 0; i < 5; ++i)
    REQUIRE(singles[i].question_indices == std::vector<int>{static_cast<int>(i)});
}

TEST_CASE("ocr-vqa style grouping at n=5 gives two batches", "[augment]") {
  // {title/author/genre} vs {yes-no pair}
  const std::vector<std::string> labels = {"t", "t", "t", "yn", "yn"};
  const auto batches = inference_batches(labels, 5);
  REQUIRE(batches.size() == 2);
  REQUIRE(batches[0] == std::vector<int>{0, 1, 2});
  REQUIRE(batches[1] == std::vector<int>{3, 4});
}

TEST_CASE("inference batches partition the questions exactly once", "[augment]") {
  for (int m = 1; m <= 7; ++m) {
    for (int n = 1; n <= 5; ++n) {
      std::vector<std::string> groups;
      for (int i = 0; i < m; ++i) groups.push_back(i % 2 == 0 ? "a" : "b");
      const auto batches = inference_batches(groups, n);
      std::map<int, int> counts;
      for (const auto& b : batches) {
        REQUIRE(static_cast<int>(b.size()) <= n);
        REQUIRE_FALSE(b.empty());
        for (int q : b) ++counts[q];
      }
      REQUIRE(static_cast<int>(counts.size()) == m);
      for (const auto& [q, c] : counts) {
        REQUIRE(q >= 0);
        REQUIRE(q < m);
        REQUIRE(c == 1);
      }
    }
  }
  const std::vector<std::string> one = {"a"};
  REQUIRE_THROWS_AS(inference_batches(one, 0), std::invalid_argument);
}

TEST_CASE("n-prime spans the full range up to min(n, group size)", "[augment]") {
  const Document doc = doc_with_groups({"g", "g", "g", "g"});
  AugmentConfig cfg;
  cfg.n = 3;
  Rng rng(77);
  std::set<int> sizes;
  for (int draw = 0; draw < 2000; ++draw)
    sizes.insert(sample_training_batch(doc, cfg, rng).size());
  REQUIRE(sizes == std::set<int>{1, 2, 3});
}
