#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mqma/rng.hpp"

namespace mqma {

/// One masked span: sentinel i replaced tokens [start, start+length) of the
/// original sequence. Sentinel indices run 1..k left to right.
struct MaskedSpan {
  int sentinel = 0;
  int start = 0;                     // position in the original token sequence
  std::vector<std::string> tokens;   // the masked-out span
  std::vector<std::string> left_context;  // masked-sequence tokens before the sentinel
};

struct DenoiseConfig {
  enum class Style { kUniform, kWhich, kWhat };

  int num_masks = 5;
  int max_span_len = 3;
  double mask_ratio = 0.3;   // caps total masked tokens on short documents
  int ctx_len = 2;           // tokens quoted in MQMA questions
  Style style = Style::kUniform;  // which/what phrasing per question
  bool use_before_style = false;  // quote trailing context instead of leading
};

enum class DenoiseMode { kStandard, kMqma };

/// A generated pre-training example. Standard mode has one sentinel-
/// interleaved target and no questions; MQMA mode has one question and one
/// answer per masked span, in a shuffled order.
struct DenoiseExample {
  DenoiseMode mode = DenoiseMode::kStandard;
  std::vector<std::string> masked_tokens;
  std::vector<MaskedSpan> spans;       // in sentinel order
  std::vector<std::string> questions;  // MQMA only
  std::vector<std::string> targets;    // standard: one string; MQMA: one per question
  std::vector<int> question_span;      // MQMA: sentinel index answered by question i
};

struct MaskResult {
  std::vector<std::string> masked_tokens;
  std::vector<MaskedSpan> spans;
};

/// Replaces explicit (start, length) spans with sentinels, numbering them
/// left to right. Spans must be sorted, disjoint, and in range.
inline MaskResult apply_spans(const std::vector<std::string>& tokens,
                              const std::vector<std::pair<int, int>>& picks) {
  MaskResult res;
  const int n = static_cast<int>(tokens.size());
  int cursor = 0;
  for (std::size_t i = 0; i < picks.size(); ++i) {
    const auto [start, len] = picks[i];
    if (start < cursor || len < 1 || start + len > n)
      throw std::invalid_argument("apply_spans: bad span at index " + std::to_string(i));
    for (; cursor < start; ++cursor) res.masked_tokens.push_back(tokens[static_cast<std::size_t>(cursor)]);
    MaskedSpan span;
    span.sentinel = static_cast<int>(i) + 1;
    span.start = start;
    span.tokens.assign(tokens.begin() + start, tokens.begin() + start + len);
    span.left_context = res.masked_tokens;
    res.masked_tokens.push_back("[MASK_" + std::to_string(span.sentinel) + "]");
    res.spans.push_back(std::move(span));
    cursor = start + len;
  }
  for (; cursor < n; ++cursor) res.masked_tokens.push_back(tokens[static_cast<std::size_t>(cursor)]);
  return res;
}

/// Samples up to num_masks disjoint, non-adjacent spans and replaces each
/// with its sentinel token, numbering sentinels left to right. Fewer spans
/// are placed when the sequence is too short.
inline MaskResult mask_spans(const std::vector<std::string>& tokens, Rng& rng,
                             const DenoiseConfig& cfg = {}) {
  if (tokens.empty()) throw std::invalid_argument("mask_spans: empty token sequence");
  if (cfg.max_span_len < 1) throw std::invalid_argument("mask_spans: max_span_len must be >= 1");
  if (cfg.num_masks == 0) return apply_spans(tokens, {});

  const int n = static_cast<int>(tokens.size());
  const int budget = std::max(1, static_cast<int>(cfg.mask_ratio * n + 0.5));

  // Draw disjoint, non-adjacent [start, start+len) spans by rejection.
  std::vector<std::pair<int, int>> picks;
  int masked_total = 0;
  const int attempts = 20 * std::max(1, cfg.num_masks);
  for (int a = 0; a < attempts && static_cast<int>(picks.size()) < cfg.num_masks; ++a) {
    const int len = static_cast<int>(rng.uniform_int(1, std::min(cfg.max_span_len, n)));
    const int start = static_cast<int>(rng.uniform_int(0, n - len));
    // mask_ratio caps total masked tokens, but the first span always fits
    if (!picks.empty() && masked_total + len > budget) continue;
    bool ok = true;
    for (const auto& [ps, pl] : picks) {
      // non-adjacent: at least one untouched token between spans
      if (start <= ps + pl && ps <= start + len) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    picks.emplace_back(start, len);
    masked_total += len;
  }
  std::sort(picks.begin(), picks.end());
  return apply_spans(tokens, picks);
}

/// Substitutes every span back at its sentinel; inverse of mask_spans.
inline std::vector<std::string> reconstruct_tokens(const std::vector<std::string>& masked,
                                                   const std::vector<MaskedSpan>& spans) {
  std::vector<std::string> out;
  for (const auto& tok : masked) {
    bool replaced = false;
    for (const auto& s : spans) {
      if (tok == "[MASK_" + std::to_string(s.sentinel) + "]") {
        out.insert(out.end(), s.tokens.begin(), s.tokens.end());
        replaced = true;
        break;
      }
    }
    if (!replaced) out.push_back(tok);
  }
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

/// Standard denoising target: "[MASK_1] span1 [MASK_2] span2 ..." in
/// sentinel order.
inline DenoiseExample make_standard_example(const MaskResult& masked) {
  DenoiseExample ex;
  ex.mode = DenoiseMode::kStandard;
  ex.masked_tokens = masked.masked_tokens;
  ex.spans = masked.spans;
  std::vector<std::string> parts;
  for (const auto& s : masked.spans) {
    parts.push_back("[MASK_" + std::to_string(s.sentinel) + "]");
    parts.insert(parts.end(), s.tokens.begin(), s.tokens.end());
  }
  ex.targets.push_back(join_tokens(parts));
  return ex;
}

/// Parses a standard-denoising target back into sentinel -> span tokens.
inline std::vector<MaskedSpan> parse_standard_target(const std::string& target) {
  std::vector<MaskedSpan> spans;
  std::string cur;
  auto flush_word = [&](std::vector<std::string>& into) {
    if (!cur.empty()) {
      into.push_back(cur);
      cur.clear();
    }
  };
  std::vector<std::string> words;
  for (char c : target) {
    if (c == ' ') {
      flush_word(words);
    } else {
      cur.push_back(c);
    }
  }
  flush_word(words);
  for (const auto& w : words) {
    if (w.rfind("[MASK_", 0) == 0 && w.back() == ']') {
      MaskedSpan s;
      s.sentinel = std::stoi(w.substr(6, w.size() - 7));
      spans.push_back(std::move(s));
    } else {
      if (spans.empty()) throw std::runtime_error("parse_standard_target: tokens before first sentinel");
      spans.back().tokens.push_back(w);
    }
  }
  return spans;
}

/// MQMA denoising: one question per span, answers are the original span
/// texts, question order is a uniform-random permutation.
inline DenoiseExample make_mqma_example(const MaskResult& masked, Rng& rng,
                                        const DenoiseConfig& cfg = {}) {
  if (masked.spans.empty()) throw std::invalid_argument("make_mqma_example: no masked spans");
  DenoiseExample ex;
  ex.mode = DenoiseMode::kMqma;
  ex.masked_tokens = masked.masked_tokens;
  ex.spans = masked.spans;

  std::vector<int> order(masked.spans.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);

  for (int idx : order) {
    const auto& span = masked.spans[static_cast<std::size_t>(idx)];
    const std::string mask_tok = "[MASK_" + std::to_string(span.sentinel) + "]";
    std::string ctx;
    if (!cfg.use_before_style) {
      const auto& lc = span.left_context;
      const std::size_t take = std::min<std::size_t>(lc.size(), static_cast<std::size_t>(cfg.ctx_len));
      ctx = join_tokens({lc.end() - static_cast<std::ptrdiff_t>(take), lc.end()});
    } else {
      const std::size_t pos = span.left_context.size() + 1;  // after the sentinel
      const std::size_t take =
          std::min<std::size_t>(masked.masked_tokens.size() - pos, static_cast<std::size_t>(cfg.ctx_len));
      ctx = join_tokens({masked.masked_tokens.begin() + static_cast<std::ptrdiff_t>(pos),
                         masked.masked_tokens.begin() + static_cast<std::ptrdiff_t>(pos + take)});
    }
    const char* side = cfg.use_before_style ? "before" : "after";
    bool which_style = true;
    if (cfg.style == DenoiseConfig::Style::kUniform)
      which_style = rng.uniform() < 0.5;
    else if (cfg.style == DenoiseConfig::Style::kWhat)
      which_style = false;
    std::string q;
    if (which_style)
      q = "Which text tokens are masked by " + mask_tok + " " + side + " \"" + ctx + "\"?";
    else
      q = "What are the masked text tokens of " + mask_tok + " " + side + " \"" + ctx + "\"?";
    ex.questions.push_back(std::move(q));
    ex.targets.push_back(join_tokens(span.tokens));
    ex.question_span.push_back(span.sentinel);
  }
  return ex;
}

}  // namespace mqma
