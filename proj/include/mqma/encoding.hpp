#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mqma/corpus.hpp"
#include "mqma/graph.hpp"
#include "mqma/tokenizer.hpp"

namespace mqma {

// Box coordinates normalized to [0, 1000]; w/h are scaled from the pixel
// extents and rounded independently, so they may differ from x2-x1 / y2-y1
// by at most one.
struct NormalizedBox {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0, w = 0, h = 0;
  bool operator==(const NormalizedBox&) const = default;
};

/// The pseudo box used for question tokens and [SEP].
inline NormalizedBox pseudo_box() { return {0, 0, 1000, 1000, 1000, 1000}; }

inline int scale_to_1000(int v, int extent) {
  // round half-up
  return static_cast<int>((static_cast<std::int64_t>(v) * 1000 * 2 + extent) / (2 * static_cast<std::int64_t>(extent)));
}

inline NormalizedBox normalize_box(const PixelBox& box, int page_width, int page_height) {
  if (page_width <= 0 || page_height <= 0)
    throw std::invalid_argument("normalize_box: non-positive page dimension");
  NormalizedBox nb;
  nb.x1 = scale_to_1000(box.x1, page_width);
  nb.x2 = scale_to_1000(box.x2, page_width);
  nb.y1 = scale_to_1000(box.y1, page_height);
  nb.y2 = scale_to_1000(box.y2, page_height);
  nb.w = scale_to_1000(box.x2 - box.x1, page_width);
  nb.h = scale_to_1000(box.y2 - box.y1, page_height);
  return nb;
}

// Visual geometry: pages are resampled to 512 x 384 and cut into 32 x 32
// patches, 16 rows x 12 cols = 192. A learned map squeezes those to the
// final 128 visual positions.
constexpr int kPatchTargetHeight = 512;
constexpr int kPatchTargetWidth = 384;
constexpr int kPatchSize = 32;
constexpr int kPatchRows = kPatchTargetHeight / kPatchSize;  // 16
constexpr int kPatchCols = kPatchTargetWidth / kPatchSize;   // 12
constexpr int kNumPatches = kPatchRows * kPatchCols;         // 192
constexpr int kPatchDim = kPatchSize * kPatchSize;           // 1024
constexpr int kVisualLen = 128;

/// Nearest-neighbor resize to 512 x 384 and row-major split into 192 patch
/// vectors of 1024 values each.
inline Mat patchify(const std::vector<float>& image, int width, int height) {
  if (width <= 0 || height <= 0 || image.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    throw std::invalid_argument("patchify: empty or inconsistent image");
  Mat patches(kNumPatches, kPatchDim);
  for (int ty = 0; ty < kPatchTargetHeight; ++ty) {
    const int sy = static_cast<int>(static_cast<std::int64_t>(ty) * height / kPatchTargetHeight);
    for (int tx = 0; tx < kPatchTargetWidth; ++tx) {
      const int sx = static_cast<int>(static_cast<std::int64_t>(tx) * width / kPatchTargetWidth);
      const double v = image[static_cast<std::size_t>(sy) * static_cast<std::size_t>(width) +
                             static_cast<std::size_t>(sx)];
      const int patch = (ty / kPatchSize) * kPatchCols + (tx / kPatchSize);
      const int offset = (ty % kPatchSize) * kPatchSize + (tx % kPatchSize);
      patches(patch, offset) = v;
    }
  }
  return patches;
}

inline Mat patchify(const Document& doc) { return patchify(doc.image, doc.page_width, doc.page_height); }

/// Normalized boxes of the 192 patch cells in the resized page.
inline const std::array<NormalizedBox, kNumPatches>& patch_layout_boxes() {
  static const std::array<NormalizedBox, kNumPatches> boxes = [] {
    std::array<NormalizedBox, kNumPatches> out{};
    for (int r = 0; r < kPatchRows; ++r)
      for (int c = 0; c < kPatchCols; ++c) {
        PixelBox pb{c * kPatchSize, r * kPatchSize, (c + 1) * kPatchSize, (r + 1) * kPatchSize};
        out[static_cast<std::size_t>(r * kPatchCols + c)] =
            normalize_box(pb, kPatchTargetWidth, kPatchTargetHeight);
      }
    return out;
  }();
  return boxes;
}

/// Text block of the encoder input: Q1 .. Qn, [SEP], OCR tokens, [SEP].
struct TextBlock {
  std::vector<int> token_ids;
  std::vector<NormalizedBox> boxes;
  std::vector<int> modality;        // all 0 here
  std::vector<int> question_index;  // 1..n on question tokens, 0 elsewhere
};

/// Lays out question tokens then the OCR block. Questions are never
/// truncated (error instead); OCR tokens are dropped from the tail when the
/// budget is exceeded, keeping the final [SEP].
inline TextBlock assemble_text_block(const std::vector<std::string>& questions, const Document& doc,
                                     const Vocab& vocab, int max_text_len,
                                     bool separate_questions = false) {
  if (questions.empty()) throw std::invalid_argument("assemble_text_block: no questions");
  TextBlock tb;
  auto push = [&tb](int id, const NormalizedBox& box, int qindex) {
    tb.token_ids.push_back(id);
    tb.boxes.push_back(box);
    tb.modality.push_back(0);
    tb.question_index.push_back(qindex);
  };

  for (std::size_t qi = 0; qi < questions.size(); ++qi) {
    if (separate_questions && qi > 0) push(Vocab::kSep, pseudo_box(), 0);
    for (int id : tokenize(questions[qi], vocab)) push(id, pseudo_box(), static_cast<int>(qi) + 1);
  }
  if (static_cast<int>(tb.token_ids.size()) + 2 > max_text_len)
    throw std::runtime_error("assemble_text_block: questions exceed max_text_len " +
                             std::to_string(max_text_len));
  push(Vocab::kSep, pseudo_box(), 0);

  const int budget = max_text_len - static_cast<int>(tb.token_ids.size()) - 1;
  int used = 0;
  for (const auto& tok : doc.tokens) {
    const auto ids = tokenize(tok.text, vocab);
    if (used + static_cast<int>(ids.size()) > budget) break;
    const NormalizedBox nb = normalize_box(tok.box, doc.page_width, doc.page_height);
    for (int id : ids) push(id, nb, 0);
    used += static_cast<int>(ids.size());
  }
  push(Vocab::kSep, pseudo_box(), 0);
  return tb;
}

/// Content-only layout for standard denoising inputs: tokens then [SEP].
inline TextBlock assemble_content_block(const std::vector<OcrToken>& tokens, int page_width,
                                        int page_height, const Vocab& vocab, int max_text_len) {
  TextBlock tb;
  int used = 0;
  for (const auto& tok : tokens) {
    const auto ids = tokenize(tok.text, vocab);
    if (used + static_cast<int>(ids.size()) > max_text_len - 1) break;
    const NormalizedBox nb = normalize_box(tok.box, page_width, page_height);
    for (int id : ids) {
      tb.token_ids.push_back(id);
      tb.boxes.push_back(nb);
      tb.modality.push_back(0);
      tb.question_index.push_back(0);
    }
    used += static_cast<int>(ids.size());
  }
  tb.token_ids.push_back(Vocab::kSep);
  tb.boxes.push_back(pseudo_box());
  tb.modality.push_back(0);
  tb.question_index.push_back(0);
  return tb;
}

/// Fully assembled multi-modal encoder input. The modality and
/// question_index vectors cover the whole sequence (text block then the 128
/// visual positions).
struct EncoderInput {
  std::vector<int> token_ids;        // text block only
  std::vector<NormalizedBox> boxes;  // per text position
  std::vector<int> modality;        // text_len + kVisualLen entries
  std::vector<int> question_index;  // text_len + kVisualLen entries
  Mat patch_grid;                   // kNumPatches x kPatchDim
  int n_questions = 0;
  int max_text_len = 0;

  int text_len() const { return static_cast<int>(token_ids.size()); }
  int total_len() const { return text_len() + kVisualLen; }

  void validate() const {
    if (token_ids.size() != boxes.size()) throw std::runtime_error("EncoderInput: boxes length mismatch");
    if (modality.size() != token_ids.size() + kVisualLen)
      throw std::runtime_error("EncoderInput: modality length mismatch");
    if (question_index.size() != modality.size())
      throw std::runtime_error("EncoderInput: question_index length mismatch");
    if (patch_grid.rows() != kNumPatches || patch_grid.cols() != kPatchDim)
      throw std::runtime_error("EncoderInput: bad patch grid shape");
    for (std::size_t i = 0; i < token_ids.size(); ++i)
      if (modality[i] != 0) throw std::runtime_error("EncoderInput: text position with visual modality");
    for (std::size_t i = token_ids.size(); i < modality.size(); ++i) {
      if (modality[i] != 1) throw std::runtime_error("EncoderInput: visual position with text modality");
      if (question_index[i] != 0) throw std::runtime_error("EncoderInput: visual position with question index");
    }
  }
};

inline EncoderInput make_encoder_input(TextBlock tb, Mat patch_grid, int n_questions,
                                       int max_text_len) {
  EncoderInput in;
  in.token_ids = std::move(tb.token_ids);
  in.boxes = std::move(tb.boxes);
  in.modality = std::move(tb.modality);
  in.question_index = std::move(tb.question_index);
  in.modality.insert(in.modality.end(), kVisualLen, 1);
  in.question_index.insert(in.question_index.end(), kVisualLen, 0);
  in.patch_grid = std::move(patch_grid);
  in.n_questions = n_questions;
  in.max_text_len = max_text_len;
  in.validate();
  return in;
}

inline EncoderInput assemble_encoder_input(const std::vector<std::string>& questions,
                                           const Document& doc, const Vocab& vocab,
                                           int max_text_len, bool separate_questions = false) {
  return make_encoder_input(assemble_text_block(questions, doc, vocab, max_text_len, separate_questions),
                            patchify(doc), static_cast<int>(questions.size()), max_text_len);
}

/// The embedding tables of the multi-modal encoder input. Non-owning; the
/// model registers the params and wires this view up.
struct EmbeddingTables {
  Param* token = nullptr;             // |V| x d
  std::array<Param*, 6> layout{};     // x1,y1,x2,y2,w,h: 1001 x d each
  Param* modality = nullptr;          // 2 x d
  Param* question_index = nullptr;    // (n_max+1) x d
  Param* patch_proj = nullptr;        // 1024 x d
  Param* patch_ln_gain = nullptr;     // 1 x d
  Param* patch_ln_bias = nullptr;     // 1 x d
  Param* visual_squeeze = nullptr;    // 128 x 192, applied across the sequence axis
  Param* layout_squeeze = nullptr;    // 128 x 192
  bool use_question_index = true;
};

namespace detail {

inline std::array<std::vector<int>, 6> box_coordinate_ids(const std::vector<NormalizedBox>& boxes) {
  std::array<std::vector<int>, 6> ids;
  for (auto& v : ids) v.reserve(boxes.size());
  for (const auto& b : boxes) {
    for (int c : {b.x1, b.y1, b.x2, b.y2, b.w, b.h})
      if (c < 0 || c > 1000)
        throw std::out_of_range("embed: box coordinate " + std::to_string(c) + " outside [0,1000]");
    ids[0].push_back(b.x1);
    ids[1].push_back(b.y1);
    ids[2].push_back(b.x2);
    ids[3].push_back(b.y2);
    ids[4].push_back(b.w);
    ids[5].push_back(b.h);
  }
  return ids;
}

inline NodeRef layout_sum(Tape& tape, const EmbeddingTables& t,
                          const std::vector<NormalizedBox>& boxes) {
  const auto ids = box_coordinate_ids(boxes);
  NodeRef sum = tape.gather_rows(*t.layout[0], ids[0]);
  for (int c = 1; c < 6; ++c) sum = tape.add(sum, tape.gather_rows(*t.layout[c], ids[c]));
  return sum;
}

}  // namespace detail

/// Builds the encoder embedding sequence: per text position the sum of token,
/// layout, modality, and question-index lookups; then the 128 visual
/// positions from the patch pipeline. Output length = text_len + 128.
inline NodeRef embed(Tape& tape, const EncoderInput& input, const EmbeddingTables& t) {
  input.validate();
  if (t.question_index) {
    if (input.n_questions + 1 > t.question_index->value.rows())
      throw std::out_of_range("embed: question count exceeds question-index table");
    for (int qi : input.question_index)
      if (qi < 0 || qi >= t.question_index->value.rows())
        throw std::out_of_range("embed: question index out of table range");
  }

  const int text_len = input.text_len();
  const std::vector<int> text_mod(input.modality.begin(), input.modality.begin() + text_len);
  const std::vector<int> text_qidx(input.question_index.begin(),
                                   input.question_index.begin() + text_len);

  NodeRef text = tape.gather_rows(*t.token, input.token_ids);
  text = tape.add(text, detail::layout_sum(tape, t, input.boxes));
  text = tape.add(text, tape.gather_rows(*t.modality, text_mod));
  if (t.use_question_index) text = tape.add(text, tape.gather_rows(*t.question_index, text_qidx));

  // Visual pathway: project patches, layer-norm, squeeze 192 -> 128 across
  // the sequence axis; add squeezed patch-layout embeddings and the shared
  // modality / question-index rows.
  NodeRef patches = tape.constant(input.patch_grid);
  NodeRef vis_tok = tape.matmul(patches, tape.leaf(*t.patch_proj));
  vis_tok = tape.layer_norm(vis_tok, tape.leaf(*t.patch_ln_gain), tape.leaf(*t.patch_ln_bias));
  vis_tok = tape.matmul(tape.leaf(*t.visual_squeeze), vis_tok);

  const auto& pboxes = patch_layout_boxes();
  NodeRef vis_layout = detail::layout_sum(
      tape, t, std::vector<NormalizedBox>(pboxes.begin(), pboxes.end()));
  vis_layout = tape.matmul(tape.leaf(*t.layout_squeeze), vis_layout);

  NodeRef visual = tape.add(vis_tok, vis_layout);
  const std::vector<int> vis_mod(kVisualLen, 1);
  visual = tape.add(visual, tape.gather_rows(*t.modality, vis_mod));
  if (t.use_question_index) {
    const std::vector<int> vis_qidx(kVisualLen, 0);
    visual = tape.add(visual, tape.gather_rows(*t.question_index, vis_qidx));
  }

  return tape.vstack({text, visual});
}

}  // namespace mqma
