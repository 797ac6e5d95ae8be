#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mqma/rng.hpp"

namespace mqma {

struct PixelBox {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  bool operator==(const PixelBox&) const = default;
};

struct OcrToken {
  std::string text;
  PixelBox box;
  bool operator==(const OcrToken&) const = default;
};

struct QAItem {
  std::string question;
  std::vector<std::string> answers;  // non-empty set of acceptable strings
  std::string leak_group;
  bool operator==(const QAItem&) const = default;
};

// A synthetic OCR'd page: tokens in reading order with pixel boxes, plus a
// grayscale raster rendered from the boxes so the visual pathway carries
// real layout signal. qa is empty for pre-training documents.
struct Document {
  std::string id;
  int page_width = 0;
  int page_height = 0;
  std::vector<OcrToken> tokens;
  std::vector<float> image;  // row-major page_height x page_width, values in [0,1]
  std::vector<QAItem> qa;

  bool operator==(const Document&) const = default;

  float pixel(int x, int y) const {
    return image[static_cast<std::size_t>(y) * static_cast<std::size_t>(page_width) +
                 static_cast<std::size_t>(x)];
  }

  void validate() const {
    if (page_width <= 0 || page_height <= 0)
      throw std::runtime_error("invalid page dims in doc " + id);
    if (image.size() != static_cast<std::size_t>(page_width) * static_cast<std::size_t>(page_height))
      throw std::runtime_error("image size mismatch in doc " + id);
    int prev_y = -1, prev_x = -1;
    for (const auto& t : tokens) {
      const auto& b = t.box;
      if (!(0 <= b.x1 && b.x1 <= b.x2 && b.x2 <= page_width && 0 <= b.y1 && b.y1 <= b.y2 &&
            b.y2 <= page_height))
        throw std::runtime_error("invalid box in doc " + id);
      if (b.y1 < prev_y || (b.y1 == prev_y && b.x1 < prev_x))
        throw std::runtime_error("tokens out of reading order in doc " + id);
      prev_y = b.y1;
      prev_x = b.x1;
    }
    for (const auto& q : qa) {
      if (q.question.empty()) throw std::runtime_error("empty question in doc " + id);
      if (q.answers.empty()) throw std::runtime_error("empty answer set in doc " + id);
      for (const auto& a : q.answers)
        if (a.empty()) throw std::runtime_error("empty answer string in doc " + id);
    }
  }
};

struct CorpusGenConfig {
  std::uint64_t seed = 0;
  int num_docs = 1;
  int min_words = 30;
  int max_words = 60;
  std::vector<std::string> vocab_words;
  int qa_per_doc = 0;     // 0 = pre-training corpus, no QA items
  int leak_groups = 1;    // QA items split into this many contiguous groups
  int page_width = 192;
  int page_height = 256;
};

namespace detail {

// Intensities are multiples of 1/255 so the base64 raster round-trips losslessly.
constexpr float kPageBg = 242.0f / 255.0f;
constexpr float kInk = 38.0f / 255.0f;

inline const char* b64_alphabet() {
  return "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

inline std::string base64_encode(const std::vector<std::uint8_t>& data) {
  const char* tab = b64_alphabet();
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < data.size(); i += 3) {
    const std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out.push_back(tab[(v >> 18) & 63]);
    out.push_back(tab[(v >> 12) & 63]);
    out.push_back(tab[(v >> 6) & 63]);
    out.push_back(tab[v & 63]);
  }
  if (i + 1 == data.size()) {
    const std::uint32_t v = data[i] << 16;
    out.push_back(tab[(v >> 18) & 63]);
    out.push_back(tab[(v >> 12) & 63]);
    out += "==";
  } else if (i + 2 == data.size()) {
    const std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
    out.push_back(tab[(v >> 18) & 63]);
    out.push_back(tab[(v >> 12) & 63]);
    out.push_back(tab[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
  int lut[256];
  for (int i = 0; i < 256; ++i) lut[i] = -1;
  const char* tab = b64_alphabet();
  for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(tab[i])] = i;
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=') break;
    const int v = lut[static_cast<unsigned char>(c)];
    if (v < 0) throw std::runtime_error("invalid base64 character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

inline void fill_box(Document& doc, const PixelBox& b, float value) {
  for (int y = b.y1; y < b.y2; ++y)
    for (int x = b.x1; x < b.x2; ++x)
      doc.image[static_cast<std::size_t>(y) * static_cast<std::size_t>(doc.page_width) +
                static_cast<std::size_t>(x)] = value;
}

}  // namespace detail

/// Deterministic synthetic page: words flow left-to-right, top-to-bottom on a
/// line grid with jittered gaps; the raster gets one dark rectangle per token.
inline Document generate_document(const CorpusGenConfig& cfg, int doc_index) {
  if (cfg.vocab_words.empty()) throw std::invalid_argument("generate_corpus: empty vocab_words");
  if (cfg.min_words < 1 || cfg.max_words < cfg.min_words)
    throw std::invalid_argument("generate_corpus: bad words_per_doc range");

  Rng rng(cfg.seed * 1000003ull + static_cast<std::uint64_t>(doc_index));
  Document doc;
  doc.id = "doc" + std::to_string(doc_index);
  doc.page_width = cfg.page_width;
  doc.page_height = cfg.page_height;
  doc.image.assign(static_cast<std::size_t>(cfg.page_width) * static_cast<std::size_t>(cfg.page_height),
                   detail::kPageBg);

  const int n_words = static_cast<int>(rng.uniform_int(cfg.min_words, cfg.max_words));
  constexpr int kMargin = 8;
  constexpr int kLineHeight = 16;
  constexpr int kGlyphHeight = 11;
  int x = kMargin;
  int y = kMargin;
  // Text flows in sequential runs over the word list with occasional jumps,
  // so span denoising has context to learn from, like natural text.
  const auto n_vocab = static_cast<std::int64_t>(cfg.vocab_words.size());
  std::int64_t word_pos = rng.uniform_int(0, n_vocab - 1);
  for (int w = 0; w < n_words; ++w) {
    if (w > 0) {
      if (rng.uniform() < 0.15)
        word_pos = rng.uniform_int(0, n_vocab - 1);
      else
        word_pos = (word_pos + 1) % n_vocab;
    }
    const auto& word = cfg.vocab_words[static_cast<std::size_t>(word_pos)];
    const int width = 4 + 4 * static_cast<int>(word.size());
    if (x + width > cfg.page_width - kMargin) {
      x = kMargin;
      y += kLineHeight;
    }
    if (y + kGlyphHeight > cfg.page_height - kMargin)
      throw std::runtime_error("generate_corpus: page overflow, reduce max_words for doc " + doc.id);
    PixelBox box{x, y, x + width, y + kGlyphHeight};
    doc.tokens.push_back({word, box});
    detail::fill_box(doc, box, detail::kInk);
    x += width + 3 + static_cast<int>(rng.uniform_int(0, 3));  // jittered gap
  }

  if (cfg.qa_per_doc > 0) {
    // Anchor questions on the first occurrence of a word so "the word after
    // <anchor>" is unambiguous; fall back to positional questions when the
    // document has too few unique anchors.
    std::vector<int> anchors;
    for (std::size_t p = 0; p + 1 < doc.tokens.size(); ++p) {
      bool first = true;
      for (std::size_t q = 0; q < p; ++q)
        if (doc.tokens[q].text == doc.tokens[p].text) {
          first = false;
          break;
        }
      if (first) anchors.push_back(static_cast<int>(p));
    }
    rng.shuffle(anchors);
    const int m = std::min(cfg.qa_per_doc, static_cast<int>(doc.tokens.size()));
    const int groups = std::max(1, cfg.leak_groups);
    const int per_group = (m + groups - 1) / groups;
    for (int j = 0; j < m; ++j) {
      QAItem item;
      if (j < static_cast<int>(anchors.size())) {
        const auto p = static_cast<std::size_t>(anchors[static_cast<std::size_t>(j)]);
        item.question = "what is the word after " + doc.tokens[p].text + " ?";
        item.answers = {doc.tokens[p + 1].text};
      } else {
        const auto p = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(doc.tokens.size()) - 1));
        item.question = "what is word number " + std::to_string(p) + " ?";
        item.answers = {doc.tokens[p].text};
      }
      item.leak_group = "g" + std::to_string(j / per_group);
      doc.qa.push_back(std::move(item));
    }
  }
  doc.validate();
  return doc;
}

inline std::vector<Document> generate_corpus(const CorpusGenConfig& cfg) {
  if (cfg.num_docs < 1) throw std::invalid_argument("generate_corpus: num_docs must be >= 1");
  std::vector<Document> docs;
  docs.reserve(static_cast<std::size_t>(cfg.num_docs));
  for (int i = 0; i < cfg.num_docs; ++i) docs.push_back(generate_document(cfg, i));
  return docs;
}

/// JSONL: one document object per line. The raster is stored as "b64:" +
/// base64 of the 8-bit quantized image, which is lossless for generated pages.
inline void save_documents(const std::string& path, const std::vector<Document>& docs) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_documents: cannot open " + path);
  for (const auto& doc : docs) {
    nlohmann::json j;
    j["id"] = doc.id;
    j["page_width"] = doc.page_width;
    j["page_height"] = doc.page_height;
    auto& toks = j["tokens"] = nlohmann::json::array();
    for (const auto& t : doc.tokens)
      toks.push_back({{"text", t.text}, {"box", {t.box.x1, t.box.y1, t.box.x2, t.box.y2}}});
    std::vector<std::uint8_t> bytes(doc.image.size());
    for (std::size_t i = 0; i < doc.image.size(); ++i)
      bytes[i] = static_cast<std::uint8_t>(doc.image[i] * 255.0f + 0.5f);
    j["image"] = "b64:" + detail::base64_encode(bytes);
    auto& qa = j["qa"] = nlohmann::json::array();
    for (const auto& q : doc.qa)
      qa.push_back({{"question", q.question}, {"answers", q.answers}, {"leak_group", q.leak_group}});
    f << j.dump() << '\n';
  }
}

inline std::vector<Document> load_documents(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_documents: cannot open " + path);
  std::vector<Document> docs;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("load_documents: malformed JSON at line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    Document doc;
    try {
      doc.id = j.at("id").get<std::string>();
      doc.page_width = j.at("page_width").get<int>();
      doc.page_height = j.at("page_height").get<int>();
      for (const auto& t : j.at("tokens")) {
        OcrToken tok;
        tok.text = t.at("text").get<std::string>();
        const auto& b = t.at("box");
        tok.box = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
        doc.tokens.push_back(std::move(tok));
      }
      const auto& img = j.at("image");
      if (img.is_string()) {
        const std::string s = img.get<std::string>();
        if (s.rfind("b64:", 0) == 0) {
          const auto bytes = detail::base64_decode(s.substr(4));
          doc.image.resize(bytes.size());
          for (std::size_t i = 0; i < bytes.size(); ++i)
            doc.image[i] = static_cast<float>(bytes[i]) / 255.0f;
        } else {
          std::ifstream raw(s, std::ios::binary);
          if (!raw)
            throw std::runtime_error("external image path not readable: " + s);
          std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(raw)),
                                          std::istreambuf_iterator<char>());
          doc.image.resize(bytes.size());
          for (std::size_t i = 0; i < bytes.size(); ++i)
            doc.image[i] = static_cast<float>(bytes[i]) / 255.0f;
        }
      } else {
        doc.image = img.get<std::vector<float>>();
      }
      if (j.contains("qa")) {
        for (const auto& q : j.at("qa")) {
          QAItem item;
          item.question = q.at("question").get<std::string>();
          item.answers = q.at("answers").get<std::vector<std::string>>();
          item.leak_group = q.at("leak_group").get<std::string>();
          doc.qa.push_back(std::move(item));
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("load_documents: bad document at line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    doc.validate();
    docs.push_back(std::move(doc));
  }
  return docs;
}

/// Built-in word list for corpus generation when the caller supplies none.
inline std::vector<std::string> default_word_list() {
  return {
      "amber",  "anchor", "apple",  "arrow",  "basket", "beacon", "birch",  "bridge",
      "candle", "canyon", "cedar",  "circle", "cloud",  "copper", "coral",  "crane",
      "delta",  "drift",  "ember",  "fable",  "falcon", "fern",   "flint",  "forest",
      "garnet", "glacier", "grove", "harbor", "hazel",  "heron",  "island", "ivory",
      "jasper", "juniper", "kite",  "lantern", "ledger", "linden", "lotus", "maple",
      "marble", "meadow", "mesa",   "mirror", "nectar", "north",  "oasis",  "ocean",
      "olive",  "onyx",   "orchid", "otter",  "pebble", "pine",   "plume",  "prism",
      "quartz", "quill",  "raven",  "reef",   "ridge",  "river",  "saffron", "sage",
      "shadow", "silver", "sparrow", "spruce", "stone",  "summit", "thistle", "tide",
      "timber", "topaz",  "trellis", "tulip", "valley", "violet", "willow", "zephyr",
  };
}

}  // namespace mqma
