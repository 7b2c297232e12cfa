// SPDX-License-Identifier: Apache-2.0
//
// Tokenization, 512-token windows, word embedding averaging and BERTgrid
// rasterization.
#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "vibertgrid/docmodel.hpp"

namespace vbg {

inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;
inline constexpr int kSepId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumSpecialTokens = 4;
inline constexpr int kWindowLength = 512;
inline constexpr int kMaxRealTokens = kWindowLength - 2;

/// Token table. An empty vocab means character-level tokenization with byte
/// fallback: every byte b maps to id 4 + b.
class Vocab {
 public:
  Vocab() = default;

  /// One token per line, line number = id. Lines 0-3 are the reserved
  /// PAD/CLS/SEP/UNK entries.
  static Vocab from_text(std::string_view text);

  bool character_level() const { return pieces_.empty(); }
  int size() const;
  /// Inverse of from_text; empty for character-level vocabularies.
  std::string to_text() const;
  /// Greedy longest-match subword split of one word (vocab mode), or per-byte
  /// ids (character mode).
  std::vector<int> encode_word(std::string_view word) const;

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> ids_;
  std::size_t max_piece_len_ = 0;
};

struct TokenizedDocument {
  std::vector<int> tokens;
  /// Half-open [begin, end) token range per word.
  std::vector<std::pair<int, int>> word_spans;
  int vocab_size = 0;
};

TokenizedDocument tokenize(const std::vector<Word>& words, const Vocab& vocab);
inline TokenizedDocument tokenize(const Document& doc, const Vocab& vocab) {
  return tokenize(doc.words, vocab);
}

struct Window {
  std::vector<int> token_ids;        // always kWindowLength entries
  int real_count = 0;                // real tokens between CLS and SEP
  std::vector<bool> attention_mask;  // true on CLS, real tokens and SEP
  int first_token = 0;               // index into TokenizedDocument::tokens
};

/// Consecutive non-overlapping chunks of at most `max_real` tokens, each wrapped
/// as CLS + chunk + SEP + PAD... to kWindowLength. An empty token sequence still
/// yields one window.
std::vector<Window> slice_windows(const TokenizedDocument& td, int max_real = kMaxRealTokens);

/// Mean of each word's token embeddings. `window_embeddings[i]` holds at least
/// real_count + 1 rows for window i (row 0 is CLS). Returns N x d.
torch::Tensor aggregate_word_embeddings(const std::vector<torch::Tensor>& window_embeddings,
                                        const std::vector<Window>& windows,
                                        const TokenizedDocument& td);

/// Word index owning each grid cell (-1 for background), row-major.
struct CellOwnerMap {
  int rows = 0;
  int cols = 0;
  int stride = 1;
  std::vector<int> owner;

  int at(int y, int x) const { return owner[static_cast<std::size_t>(y) * cols + x]; }
};

/// Cell (x, y) belongs to the last word in `words` whose quad contains the
/// sample point (x*S, y*S), boundary inclusive. Grid is ceil(H/S) x ceil(W/S).
CellOwnerMap rasterize_cells(const std::vector<Word>& words, int height, int width, int stride);

struct BertGrid {
  torch::Tensor values;  // rows x cols x d
  int stride = 1;

  int rows() const { return static_cast<int>(values.size(0)); }
  int cols() const { return static_cast<int>(values.size(1)); }
  int dim() const { return static_cast<int>(values.size(2)); }
  /// 1 x d x rows x cols view for convolution inputs.
  torch::Tensor nchw() const { return values.permute({2, 0, 1}).unsqueeze(0); }
};

/// Differentiable w.r.t. `embeddings` (N x d).
BertGrid rasterize_bertgrid(const std::vector<Word>& words, const torch::Tensor& embeddings,
                            int height, int width, int stride);
BertGrid rasterize_bertgrid(const CellOwnerMap& cells, const torch::Tensor& embeddings);

/// Binary grid dump: magic "VBGG", u32 version, u32 rows, u32 cols, u32 d,
/// u32 stride, then rows*cols*d little-endian float32 values, row-major.
inline constexpr std::uint32_t kGridDumpVersion = 1;
std::string encode_grid_dump(const BertGrid& grid);
BertGrid decode_grid_dump(std::string_view bytes);

/// Deterministic d-dimensional pseudo-embedding of a word's text, used when no
/// encoder checkpoint is available.
torch::Tensor hash_embeddings(const std::vector<Word>& words, int dim);

}  // namespace vbg
