// SPDX-License-Identifier: Apache-2.0
#include "vibertgrid/textgrid.hpp"

#include <cmath>
#include <cstring>

#include "vibertgrid/errors.hpp"
#include "vibertgrid/text_util.hpp"

namespace vbg {

Vocab Vocab::from_text(std::string_view text) {
  Vocab v;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(pos, end - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!(end == text.size() && line.empty())) v.pieces_.push_back(line);
    pos = end + 1;
  }
  if (v.pieces_.size() <= static_cast<std::size_t>(kNumSpecialTokens))
    throw VocabError("vocab file must list the 4 reserved tokens and at least one piece");
  for (std::size_t id = kNumSpecialTokens; id < v.pieces_.size(); ++id) {
    const auto& piece = v.pieces_[id];
    if (piece.empty()) continue;
    v.ids_.emplace(piece, static_cast<int>(id));
    v.max_piece_len_ = std::max(v.max_piece_len_, piece.size());
  }
  return v;
}

std::string Vocab::to_text() const {
  std::string out;
  for (const auto& piece : pieces_) out += piece + "\n";
  return out;
}

int Vocab::size() const {
  return character_level() ? kNumSpecialTokens + 256 : static_cast<int>(pieces_.size());
}

std::vector<int> Vocab::encode_word(std::string_view word) const {
  std::vector<int> out;
  if (character_level()) {
    out.reserve(word.size());
    for (unsigned char c : word) out.push_back(kNumSpecialTokens + c);
    return out;
  }
  std::size_t pos = 0;
  while (pos < word.size()) {
    std::size_t best_len = 0;
    int best_id = kUnkId;
    const std::size_t limit = std::min(max_piece_len_, word.size() - pos);
    for (std::size_t len = limit; len > 0; --len) {
      auto it = ids_.find(std::string(word.substr(pos, len)));
      if (it != ids_.end()) {
        best_len = len;
        best_id = it->second;
        break;
      }
    }
    if (best_len == 0) best_len = utf8_chars(word.substr(pos)).front().size();
    out.push_back(best_id);
    pos += best_len;
  }
  return out;
}

TokenizedDocument tokenize(const std::vector<Word>& words, const Vocab& vocab) {
  TokenizedDocument td;
  td.vocab_size = vocab.size();
  td.word_spans.reserve(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto ids = vocab.encode_word(words[i].text);
    if (ids.empty()) throw TokenizationError("word " + std::to_string(i) + " produced no tokens");
    const int begin = static_cast<int>(td.tokens.size());
    td.tokens.insert(td.tokens.end(), ids.begin(), ids.end());
    td.word_spans.emplace_back(begin, static_cast<int>(td.tokens.size()));
  }
  return td;
}

std::vector<Window> slice_windows(const TokenizedDocument& td, int max_real) {
  if (max_real < 1 || max_real > kMaxRealTokens)
    throw ConfigError("window chunk length must lie in [1, 510]");
  std::vector<Window> windows;
  const int m = static_cast<int>(td.tokens.size());
  int start = 0;
  do {
    const int count = std::min(max_real, m - start);
    Window w;
    w.first_token = start;
    w.real_count = count;
    w.token_ids.assign(kWindowLength, kPadId);
    w.attention_mask.assign(kWindowLength, false);
    w.token_ids[0] = kClsId;
    for (int i = 0; i < count; ++i) w.token_ids[1 + i] = td.tokens[start + i];
    w.token_ids[count + 1] = kSepId;
    for (int i = 0; i < count + 2; ++i) w.attention_mask[i] = true;
    windows.push_back(std::move(w));
    start += count;
  } while (start < m);
  return windows;
}

torch::Tensor aggregate_word_embeddings(const std::vector<torch::Tensor>& window_embeddings,
                                        const std::vector<Window>& windows,
                                        const TokenizedDocument& td) {
  if (window_embeddings.size() != windows.size())
    throw AlignmentError("aggregate: " + std::to_string(window_embeddings.size()) +
                         " embedding arrays for " + std::to_string(windows.size()) + " windows");
  const auto m = static_cast<int>(td.tokens.size());
  const auto n = static_cast<std::int64_t>(td.word_spans.size());
  if (windows.empty()) throw AlignmentError("aggregate: no windows");
  const std::int64_t dim = window_embeddings.front().size(1);

  std::vector<std::int64_t> row_of_token(static_cast<std::size_t>(m), -1);
  std::vector<torch::Tensor> parts;
  std::int64_t offset = 0;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto& emb = window_embeddings[w];
    const auto& win = windows[w];
    if (emb.dim() != 2 || emb.size(1) != dim)
      throw AlignmentError("aggregate: window " + std::to_string(w) + " embedding has wrong shape");
    if (emb.size(0) < win.real_count + 1)
      throw AlignmentError("aggregate: window " + std::to_string(w) + " is missing token embeddings");
    for (int i = 0; i < win.real_count; ++i) {
      const int t = win.first_token + i;
      if (t < 0 || t >= m) throw AlignmentError("aggregate: window token outside document");
      row_of_token[t] = offset + 1 + i;
    }
    parts.push_back(emb);
    offset += emb.size(0);
  }
  std::vector<std::int64_t> word_of_token(static_cast<std::size_t>(m));
  std::vector<double> counts(static_cast<std::size_t>(n));
  for (std::int64_t j = 0; j < n; ++j) {
    const auto [b, e] = td.word_spans[j];
    counts[j] = e - b;
    for (int t = b; t < e; ++t) word_of_token[t] = j;
  }
  for (int t = 0; t < m; ++t)
    if (row_of_token[t] < 0) throw AlignmentError("aggregate: token " + std::to_string(t) + " has no embedding");

  const auto options = window_embeddings.front().options();
  if (n == 0) return torch::zeros({0, dim}, options);
  auto all = torch::cat(parts, 0);
  auto gathered = all.index_select(0, torch::tensor(row_of_token, torch::kLong));
  auto sums = torch::zeros({n, dim}, options).index_add(0, torch::tensor(word_of_token, torch::kLong), gathered);
  auto denom = torch::tensor(counts, torch::kFloat64).to(options.dtype()).unsqueeze(1);
  return sums / denom;
}

CellOwnerMap rasterize_cells(const std::vector<Word>& words, int height, int width, int stride) {
  if (stride < 1) throw ConfigError("grid stride must be positive");
  CellOwnerMap cells;
  cells.stride = stride;
  cells.rows = (height + stride - 1) / stride;
  cells.cols = (width + stride - 1) / stride;
  cells.owner.assign(static_cast<std::size_t>(cells.rows) * cells.cols, -1);
  for (std::size_t i = 0; i < words.size(); ++i) {
    const Rect r = bounding_rect(words[i].quad);
    const int x0 = std::max(0, static_cast<int>(std::ceil(r.left / stride - 1e-9)));
    const int x1 = std::min(cells.cols - 1, static_cast<int>(std::floor(r.right / stride + 1e-9)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(r.top / stride - 1e-9)));
    const int y1 = std::min(cells.rows - 1, static_cast<int>(std::floor(r.bottom / stride + 1e-9)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (point_in_quad(Point{static_cast<double>(x) * stride, static_cast<double>(y) * stride}, words[i].quad))
          cells.owner[static_cast<std::size_t>(y) * cells.cols + x] = static_cast<int>(i);
  }
  return cells;
}

BertGrid rasterize_bertgrid(const CellOwnerMap& cells, const torch::Tensor& embeddings) {
  if (embeddings.dim() != 2) throw ShapeError("rasterize: embeddings must be N x d");
  const std::int64_t d = embeddings.size(1);
  std::vector<std::int64_t> index(cells.owner.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (cells.owner[i] >= embeddings.size(0)) throw ShapeError("rasterize: cell owner without embedding");
    index[i] = cells.owner[i] + 1;
  }
  auto padded = torch::cat({torch::zeros({1, d}, embeddings.options()), embeddings}, 0);
  BertGrid grid;
  grid.stride = cells.stride;
  grid.values = padded.index_select(0, torch::tensor(index, torch::kLong)).view({cells.rows, cells.cols, d});
  return grid;
}

BertGrid rasterize_bertgrid(const std::vector<Word>& words, const torch::Tensor& embeddings, int height,
                            int width, int stride) {
  if (embeddings.dim() != 2 || embeddings.size(0) != static_cast<std::int64_t>(words.size()))
    throw ShapeError("rasterize: expected " + std::to_string(words.size()) + " x d embeddings, got " +
                     c10::str(embeddings.sizes()));
  return rasterize_bertgrid(rasterize_cells(words, height, width, stride), embeddings);
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::string_view in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_grid_dump(const BertGrid& grid) {
  std::string out = "VBGG";
  put_u32(out, kGridDumpVersion);
  put_u32(out, static_cast<std::uint32_t>(grid.rows()));
  put_u32(out, static_cast<std::uint32_t>(grid.cols()));
  put_u32(out, static_cast<std::uint32_t>(grid.dim()));
  put_u32(out, static_cast<std::uint32_t>(grid.stride));
  auto values = grid.values.detach().to(torch::kFloat32).contiguous();
  const float* data = values.data_ptr<float>();
  for (std::int64_t i = 0; i < values.numel(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    put_u32(out, bits);
  }
  return out;
}

BertGrid decode_grid_dump(std::string_view bytes) {
  if (bytes.size() < 24 || bytes.substr(0, 4) != "VBGG") throw ParseError("grid dump: bad magic");
  const auto version = get_u32(bytes, 4);
  if (version != kGridDumpVersion) throw VersionError("grid dump: unsupported version " + std::to_string(version));
  const auto rows = get_u32(bytes, 8);
  const auto cols = get_u32(bytes, 12);
  const auto d = get_u32(bytes, 16);
  const auto stride = get_u32(bytes, 20);
  const std::size_t count = static_cast<std::size_t>(rows) * cols * d;
  if (bytes.size() != 24 + 4 * count) throw ParseError("grid dump: payload size mismatch");
  auto values = torch::empty({rows, cols, d}, torch::kFloat32);
  float* data = values.data_ptr<float>();
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = get_u32(bytes, 24 + 4 * i);
    std::memcpy(&data[i], &bits, 4);
  }
  return BertGrid{values, static_cast<int>(stride)};
}

torch::Tensor hash_embeddings(const std::vector<Word>& words, int dim) {
  auto out = torch::empty({static_cast<std::int64_t>(words.size()), dim}, torch::kFloat32);
  auto acc = out.accessor<float, 2>();
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::uint64_t h = fnv1a64(words[i].text);
    for (int k = 0; k < dim; ++k) {
      const std::uint64_t r = mix64(h + static_cast<std::uint64_t>(k));
      acc[i][k] = static_cast<float>(static_cast<double>(r >> 11) * 0x1.0p-53 * 2.0 - 1.0);
    }
  }
  return out;
}

}  // namespace vbg
