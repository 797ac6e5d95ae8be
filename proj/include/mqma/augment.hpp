#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mqma/corpus.hpp"
#include "mqma/rng.hpp"

namespace mqma {

struct AugmentConfig {
  int n = 2;  // max questions per sample
  enum class Mode { kDynamic, kStatic } mode = Mode::kDynamic;
};

/// An ordered set of question indices from one document, all sharing one
/// leak group. Indices refer to the document's stored QA order.
struct QuestionBatch {
  const Document* doc = nullptr;
  std::vector<int> question_indices;
  std::string leak_group;

  int size() const { return static_cast<int>(question_indices.size()); }
};

namespace detail {

/// Distinct leak-group labels in first-appearance order, with member indices.
inline std::vector<std::pair<std::string, std::vector<int>>> group_by_leak(
    const std::vector<std::string>& labels) {
  std::vector<std::pair<std::string, std::vector<int>>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    bool found = false;
    for (auto& g : groups) {
      if (g.first == labels[i]) {
        g.second.push_back(static_cast<int>(i));
        found = true;
        break;
      }
    }
    if (!found) groups.push_back({labels[i], {static_cast<int>(i)}});
  }
  return groups;
}

inline std::vector<std::string> leak_labels(const Document& doc) {
  std::vector<std::string> labels;
  labels.reserve(doc.qa.size());
  for (const auto& q : doc.qa) labels.push_back(q.leak_group);
  return labels;
}

}  // namespace detail

/// Fixed-order chunking within each leak group: groups in first-appearance
/// order, chunks of size n, last chunk of a group may be smaller. Every
/// index appears exactly once across the output.
inline std::vector<std::vector<int>> chunk_by_group(const std::vector<std::string>& labels, int n) {
  if (n < 1) throw std::invalid_argument("chunk_by_group: n must be >= 1");
  std::vector<std::vector<int>> out;
  for (const auto& [label, members] : detail::group_by_leak(labels)) {
    (void)label;
    for (std::size_t i = 0; i < members.size(); i += static_cast<std::size_t>(n)) {
      const auto end = std::min(members.size(), i + static_cast<std::size_t>(n));
      out.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(i),
                       members.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  return out;
}

/// Dynamic training sample: draw a leak group uniformly, draw
/// n' ~ U{1..min(n, group size)}, then n' distinct questions from that group
/// in uniform-random order.
inline QuestionBatch sample_training_batch(const Document& doc, const AugmentConfig& cfg, Rng& rng) {
  if (doc.qa.empty()) throw std::invalid_argument("sample_training_batch: document has no QA items");
  if (cfg.n < 1) throw std::invalid_argument("sample_training_batch: n must be >= 1");
  const auto groups = detail::group_by_leak(detail::leak_labels(doc));
  const auto& group = groups[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(groups.size()) - 1))];
  const int m_g = static_cast<int>(group.second.size());
  const int n_prime = static_cast<int>(rng.uniform_int(1, std::min(cfg.n, m_g)));

  const auto order = rng.sample_indices(m_g, n_prime);
  QuestionBatch batch;
  batch.doc = &doc;
  batch.leak_group = group.first;
  for (int k : order) batch.question_indices.push_back(group.second[static_cast<std::size_t>(k)]);
  return batch;
}

/// Static mode: stored order, chunked into groups of n within each leak
/// group. Identical output on every call.
inline std::vector<QuestionBatch> static_batches(const Document& doc, const AugmentConfig& cfg) {
  std::vector<QuestionBatch> out;
  for (auto& chunk : chunk_by_group(detail::leak_labels(doc), cfg.n)) {
    QuestionBatch b;
    b.doc = &doc;
    b.question_indices = std::move(chunk);
    b.leak_group = doc.qa[static_cast<std::size_t>(b.question_indices.front())].leak_group;
    out.push_back(std::move(b));
  }
  return out;
}

/// Inference batching: fixed stored order, every n questions per batch
/// within each leak group; the final chunk of a group may be smaller.
inline std::vector<QuestionBatch> inference_batches(const Document& doc, int n) {
  AugmentConfig cfg;
  cfg.n = n;
  cfg.mode = AugmentConfig::Mode::kStatic;
  return static_batches(doc, cfg);
}

/// Same, over explicit leak labels (index batches, no document needed).
inline std::vector<std::vector<int>> inference_batches(const std::vector<std::string>& leak_groups,
                                                       int n) {
  return chunk_by_group(leak_groups, n);
}

}  // namespace mqma
