#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mqma {

// Word-level vocabulary with a fixed reserved prefix of special tokens:
//   0 [PAD]  1 [START]  2 [EOS]  3 [SEP]  4 [ANS_SEP]  5 [UNK]
//   6.. [MASK_1] .. [MASK_K]
// Regular word ids start at 6 + K. Immutable after build.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;
  static constexpr int kAnsSep = 4;
  static constexpr int kUnk = 5;
  static constexpr int kDefaultMaskCount = 8;

  Vocab() = default;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int mask_count() const { return mask_count_; }
  int reserved() const { return 6 + mask_count_; }

  /// Id of [MASK_i], i in 1..mask_count().
  int mask_id(int i) const {
    if (i < 1 || i > mask_count_) throw std::out_of_range("mask index " + std::to_string(i));
    return 5 + i;
  }

  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

  int id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    if (it == token_to_id_.end()) throw std::out_of_range("token not in vocab: " + token);
    return it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id));
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  /// Rebuild the lookup maps from an explicit token list (checkpoint load).
  static Vocab from_tokens(const std::vector<std::string>& tokens);

 private:
  friend Vocab build_vocab(const std::vector<std::string>&, int, int);

  void push(const std::string& tok) {
    token_to_id_.emplace(tok, size());
    id_to_token_.push_back(tok);
  }

  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
  int mask_count_ = kDefaultMaskCount;
};

namespace detail {

inline std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline bool is_special_form(const std::string& w) {
  return w.size() >= 3 && w.front() == '[' && w.back() == ']';
}

}  // namespace detail

/// Builds a vocabulary from raw text: whitespace-split, lowercased word types
/// ranked by frequency (ties broken lexicographically), capped at max_size
/// including the reserved specials. Deterministic.
inline Vocab build_vocab(const std::vector<std::string>& corpus, int max_size,
                         int mask_count = Vocab::kDefaultMaskCount) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  if (mask_count < 1) throw std::invalid_argument("build_vocab: mask_count must be >= 1");
  Vocab v;
  v.mask_count_ = mask_count;
  if (max_size < v.reserved() + 1)
    throw std::invalid_argument("build_vocab: max_size " + std::to_string(max_size) +
                                " below reserved specials + 1");

  v.push("[PAD]");
  v.push("[START]");
  v.push("[EOS]");
  v.push("[SEP]");
  v.push("[ANS_SEP]");
  v.push("[UNK]");
  for (int i = 1; i <= mask_count; ++i) v.push("[MASK_" + std::to_string(i) + "]");

  std::unordered_map<std::string, long long> freq;
  for (const auto& text : corpus) {
    for (auto& w : detail::split_words(text)) {
      if (detail::is_special_form(w)) continue;
      ++freq[detail::lowercase(w)];
    }
  }
  std::vector<std::pair<std::string, long long>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [word, count] : ranked) {
    (void)count;
    if (v.size() >= max_size) break;
    v.push(word);
  }
  return v;
}

inline Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  int masks = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string expect = "[MASK_" + std::to_string(masks + 1) + "]";
    if (tokens[i] == expect) ++masks;
    v.token_to_id_.emplace(tokens[i], static_cast<int>(i));
    v.id_to_token_.push_back(tokens[i]);
  }
  if (masks < 1) throw std::invalid_argument("vocab token list has no [MASK_i] entries");
  v.mask_count_ = masks;
  return v;
}

/// Whitespace split + lowercase; bracketed specials keep their reserved ids;
/// unknown words map to [UNK]. Total: never throws on any input text.
inline std::vector<int> tokenize(const std::string& text, const Vocab& vocab) {
  std::vector<int> ids;
  for (auto& w : detail::split_words(text)) {
    if (detail::is_special_form(w) && vocab.contains(w)) {
      ids.push_back(vocab.id(w));
      continue;
    }
    const std::string lw = detail::lowercase(w);
    ids.push_back(vocab.contains(lw) ? vocab.id(lw) : Vocab::kUnk);
  }
  return ids;
}

/// Inverse of tokenize for in-vocabulary text: tokens joined by single spaces.
inline std::string detokenize(const std::vector<int>& ids, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += vocab.token(ids[i]);
  }
  return out;
}

/// Newline-delimited UTF-8, one token per line, line number = id.
inline void save_vocab(const std::string& path, const Vocab& vocab) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_vocab: cannot open " + path);
  for (const auto& tok : vocab.tokens()) f << tok << '\n';
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_vocab: cannot open " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(f, line)) tokens.push_back(line);
  return Vocab::from_tokens(tokens);
}

}  // namespace mqma
