#pragma once

// Embedding corpora on disk. Little-endian container:
//   magic "XGEB" | u32 version=1 | u32 dim | u64 item_count
//   per item: u16 id_len | id bytes | u32 token_count (>=1) | f32 row-major
// Values are f32 on disk and double in memory.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xgrain/core.hpp"
#include "xgrain/error.hpp"

namespace xgrain {

struct TokenSequence {
  std::string id;
  Matrix tokens;  // count x dim, count >= 1
};

struct Corpus {
  std::size_t dim = 0;
  std::vector<TokenSequence> items;

  const TokenSequence& by_id(const std::string& id) const {
    for (const auto& it : items)
      if (it.id == id) return it;
    throw ShapeError("corpus: unknown id '" + id + "'");
  }

  int index_of(const std::string& id) const {
    for (std::size_t i = 0; i < items.size(); ++i)
      if (items[i].id == id) return static_cast<int>(i);
    return -1;
  }
};

struct PairList {
  std::vector<std::pair<std::string, std::string>> pairs;  // (video, text)
};

inline void validate_corpus(const Corpus& c) {
  std::unordered_set<std::string> seen;
  for (const auto& item : c.items) {
    if (item.tokens.rows == 0)
      throw FormatError("corpus item '" + item.id + "': token count 0");
    if (item.tokens.cols != c.dim)
      throw FormatError("corpus item '" + item.id + "': dim " +
                        std::to_string(item.tokens.cols) + " != corpus dim " +
                        std::to_string(c.dim));
    if (!seen.insert(item.id).second)
      throw FormatError("corpus: duplicate id '" + item.id + "'");
    check_finite(item.tokens, "corpus tokens");
  }
}

namespace detail {

constexpr char kCorpusMagic[4] = {'X', 'G', 'E', 'B'};
constexpr std::uint32_t kCorpusVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is)
    throw FormatError(std::string("truncated file reading ") + what +
                      " at byte offset " + std::to_string(is.gcount()));
  return v;
}

}  // namespace detail

inline void write_corpus(const Corpus& c, const std::string& path) {
  if (c.items.empty()) throw FormatError("write_corpus: empty corpus");
  validate_corpus(c);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("write_corpus: cannot open '" + path + "'");
  os.write(detail::kCorpusMagic, 4);
  detail::put<std::uint32_t>(os, detail::kCorpusVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.dim));
  detail::put<std::uint64_t>(os, c.items.size());
  for (const auto& item : c.items) {
    if (item.id.size() > 65535)
      throw FormatError("write_corpus: id longer than 65535 bytes");
    detail::put<std::uint16_t>(os, static_cast<std::uint16_t>(item.id.size()));
    os.write(item.id.data(), static_cast<std::streamsize>(item.id.size()));
    detail::put<std::uint32_t>(os,
                               static_cast<std::uint32_t>(item.tokens.rows));
    for (double v : item.tokens.data)
      detail::put<float>(os, static_cast<float>(v));
  }
  if (!os) throw IoError("write_corpus: write failed on '" + path + "'");
}

inline Corpus read_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("read_corpus: cannot open '" + path + "'");
  is.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(is.tellg());
  is.seekg(0);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kCorpusMagic, 4) != 0)
    throw FormatError("read_corpus: bad magic in '" + path + "'");
  const auto version = detail::get<std::uint32_t>(is, "version");
  if (version != detail::kCorpusVersion)
    throw FormatError("read_corpus: unsupported version " +
                      std::to_string(version));
  Corpus c;
  c.dim = detail::get<std::uint32_t>(is, "dim");
  if (c.dim == 0) throw FormatError("read_corpus: dim 0");
  const auto count = detail::get<std::uint64_t>(is, "item_count");
  if (count == 0) throw FormatError("read_corpus: item count 0");
  for (std::uint64_t k = 0; k < count; ++k) {
    TokenSequence item;
    const auto id_len = detail::get<std::uint16_t>(is, "id_len");
    item.id.resize(id_len);
    is.read(item.id.data(), id_len);
    if (!is)
      throw FormatError("read_corpus: truncated id at byte offset " +
                        std::to_string(is.tellg()));
    const auto tok = detail::get<std::uint32_t>(is, "token_count");
    if (tok == 0)
      throw FormatError("read_corpus: item '" + item.id + "' token count 0");
    // reject sizes the remaining bytes cannot hold before allocating
    const auto pos = static_cast<std::uint64_t>(is.tellg());
    const std::uint64_t needed =
        static_cast<std::uint64_t>(tok) * c.dim * sizeof(float);
    if (pos > file_size || needed > file_size - pos)
      throw FormatError("read_corpus: truncated tokens at byte offset " +
                        std::to_string(pos));
    item.tokens = Matrix(tok, c.dim);
    for (double& v : item.tokens.data) v = detail::get<float>(is, "values");
    c.items.push_back(std::move(item));
  }
  if (static_cast<std::uint64_t>(is.tellg()) != file_size)
    throw FormatError("read_corpus: trailing bytes after last item in '" +
                      path + "'");
  validate_corpus(c);
  return c;
}

/// One pair per line: `video_id \t text_id`; `#` starts a comment line.
inline PairList read_pairs(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("read_pairs: cannot open '" + path + "'");
  PairList out;
  std::unordered_set<std::string> seen;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError("read_pairs: missing tab in line '" + line + "'");
    std::string v = line.substr(0, tab), t = line.substr(tab + 1);
    if (!t.empty() && t.back() == '\r') t.pop_back();
    if (!seen.insert(v + "\t" + t).second)
      throw FormatError("read_pairs: duplicate pair " + v + " / " + t);
    out.pairs.emplace_back(std::move(v), std::move(t));
  }
  return out;
}

inline void write_pairs(const PairList& pl, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("write_pairs: cannot open '" + path + "'");
  for (const auto& [v, t] : pl.pairs) os << v << '\t' << t << '\n';
}

/// Scale each row to unit Euclidean norm. Zero rows stay zero; the return
/// flag reports whether any were seen.
inline Matrix l2_normalize_rows(const Matrix& m, bool* had_zero_row = nullptr) {
  Matrix out = m;
  bool zero = false;
  for (std::size_t i = 0; i < out.rows; ++i) {
    double* r = out.row(i);
    const double norm = std::sqrt(dot(r, r, out.cols));
    if (norm == 0.0) {
      zero = true;
      continue;
    }
    for (std::size_t j = 0; j < out.cols; ++j) r[j] /= norm;
  }
  if (had_zero_row) *had_zero_row = zero;
  return out;
}

inline Vector l2_normalize(const Vector& v, bool* was_zero = nullptr) {
  Vector out = v;
  const double norm = std::sqrt(dot(out.data.data(), out.data.data(), out.len()));
  if (was_zero) *was_zero = (norm == 0.0);
  if (norm > 0.0)
    for (double& x : out.data) x /= norm;
  return out;
}

}  // namespace xgrain
