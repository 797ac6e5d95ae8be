#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mqma {

/// Decodes UTF-8 into Unicode scalar values; invalid bytes pass through as
/// their own code points so the metric stays total on arbitrary input.
inline std::vector<std::uint32_t> utf8_codepoints(std::string_view s) {
  std::vector<std::uint32_t> cps;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    std::uint32_t cp = b0;
    if ((b0 & 0x80u) == 0) {
      len = 1;
    } else if ((b0 & 0xe0u) == 0xc0u) {
      len = 2;
      cp = b0 & 0x1fu;
    } else if ((b0 & 0xf0u) == 0xe0u) {
      len = 3;
      cp = b0 & 0x0fu;
    } else if ((b0 & 0xf8u) == 0xf0u) {
      len = 4;
      cp = b0 & 0x07u;
    } else {
      cps.push_back(b0);
      ++i;
      continue;
    }
    if (i + len > s.size()) {
      cps.push_back(b0);
      ++i;
      continue;
    }
    bool ok = true;
    for (std::size_t k = 1; k < len; ++k) {
      const auto bk = static_cast<unsigned char>(s[i + k]);
      if ((bk & 0xc0u) != 0x80u) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (bk & 0x3fu);
    }
    if (!ok) {
      cps.push_back(b0);
      ++i;
      continue;
    }
    cps.push_back(cp);
    i += len;
  }
  return cps;
}

/// Unit-cost insert/delete/substitute edit distance over Unicode scalars.
inline int levenshtein(std::string_view a, std::string_view b) {
  const auto ca = utf8_codepoints(a);
  const auto cb = utf8_codepoints(b);
  const std::size_t n = ca.size(), m = cb.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (ca[i - 1] == cb[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

/// Lowercases (ASCII) and trims leading/trailing whitespace; shared by ANLS
/// and VQA accuracy so training-time lowercasing matches evaluation.
inline std::string normalize_answer(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Normalized Levenshtein similarity against the closest ground truth,
/// zeroed when the normalized distance reaches tau.
inline double anls_score(std::string_view pred, const std::vector<std::string>& gts,
                         double tau = 0.5) {
  if (gts.empty()) throw std::invalid_argument("anls_score: empty ground-truth set");
  const std::string p = normalize_answer(pred);
  const auto plen = utf8_codepoints(p).size();
  double best = 0.0;
  for (const auto& gt : gts) {
    const std::string g = normalize_answer(gt);
    const auto glen = utf8_codepoints(g).size();
    const std::size_t denom = std::max(plen, glen);
    const double nl = denom == 0 ? 0.0 : static_cast<double>(levenshtein(p, g)) / static_cast<double>(denom);
    const double s = nl < tau ? 1.0 - nl : 0.0;
    best = std::max(best, s);
  }
  return best;
}

/// Consensus accuracy: min(matches / 3, 1) over the ground-truth multiset.
/// A single ground truth degenerates to exact match.
inline double vqa_accuracy(std::string_view pred, const std::vector<std::string>& gts) {
  if (gts.empty()) throw std::invalid_argument("vqa_accuracy: empty ground-truth set");
  const std::string p = normalize_answer(pred);
  int matches = 0;
  for (const auto& gt : gts)
    if (normalize_answer(gt) == p) ++matches;
  if (gts.size() == 1) return matches > 0 ? 1.0 : 0.0;
  return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

/// Ground truth with the smallest edit distance to the prediction (ties: first).
inline std::string best_ground_truth(std::string_view pred, const std::vector<std::string>& gts) {
  if (gts.empty()) throw std::invalid_argument("best_ground_truth: empty ground-truth set");
  const std::string p = normalize_answer(pred);
  std::size_t best_i = 0;
  int best_d = levenshtein(p, normalize_answer(gts[0]));
  for (std::size_t i = 1; i < gts.size(); ++i) {
    const int d = levenshtein(p, normalize_answer(gts[i]));
    if (d < best_d) {
      best_d = d;
      best_i = i;
    }
  }
  return gts[best_i];
}

struct EvalRecord {
  std::string question_id;
  std::string prediction;
  std::string best_gt;
  double anls = 0.0;
  double vqa_acc = 0.0;
};

inline std::string csv_escape(std::string_view field) {
  const bool needs_quotes = field.find_first_of(",\"\n") != std::string_view::npos;
  if (!needs_quotes) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline void write_eval_csv(const std::string& path, const std::vector<EvalRecord>& records) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_eval_csv: cannot open " + path);
  f << "question_id,prediction,best_gt,anls,vqa_acc\n";
  for (const auto& r : records) {
    f << csv_escape(r.question_id) << ',' << csv_escape(r.prediction) << ','
      << csv_escape(r.best_gt) << ',' << format_double(r.anls) << ',' << format_double(r.vqa_acc)
      << '\n';
  }
}

}  // namespace mqma
