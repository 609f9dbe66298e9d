#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hdae/rng.hpp"

namespace hdae {

// Dense word <-> index bijection.
class Vocabulary {
 public:
  int add(const std::string& word) {
    auto it = index_.find(word);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(words_.size());
    index_.emplace(word, id);
    words_.push_back(word);
    return id;
  }

  // -1 when absent.
  int lookup(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? -1 : it->second;
  }

  const std::string& word(int id) const { return words_.at(id); }
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// V x d row-major word vectors.
struct EmbeddingTable {
  int dim = 0;
  std::vector<double> data;  // size() == V * dim

  int rows() const {
    return dim == 0 ? 0 : static_cast<int>(data.size()) / dim;
  }
  std::span<const double> row(int i) const {
    return {data.data() + static_cast<std::size_t>(i) * dim,
            static_cast<std::size_t>(dim)};
  }
  std::span<double> row(int i) {
    return {data.data() + static_cast<std::size_t>(i) * dim,
            static_cast<std::size_t>(dim)};
  }
};

// One review segment: word indices plus an optional gold aspect.
struct Segment {
  std::vector<int> words;
  std::optional<int> label;
};

struct SeedLexicon {
  std::vector<std::string> aspect_names;
  std::vector<std::vector<int>> seeds;  // per aspect, word indices
  int general_aspect = -1;

  int num_aspects() const { return static_cast<int>(aspect_names.size()); }
  int aspect_by_name(const std::string& name) const {
    for (int i = 0; i < num_aspects(); ++i) {
      if (aspect_names[i] == name) return i;
    }
    return -1;
  }
};

struct Dataset {
  std::vector<Segment> train;
  std::vector<Segment> validation;
  std::vector<Segment> test;
};

using StopwordSet = std::unordered_set<std::string>;

namespace detail {
inline std::string lowercase_ascii(std::string s) {
  for (char& c : s) {
    c = static_cast<char>(
        std::tolower(static_cast<unsigned char>(c)));
  }
  return s;
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

inline bool parse_nonneg_int(const std::string& s, long& out) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  }
  try {
    out = std::stol(s);
  } catch (...) {
    return false;
  }
  return true;
}
}  // namespace detail

// Text format: one "word v1 ... vd" row per line, optional leading "V d"
// header. Duplicate words keep their first row (with a warning); ragged rows
// are an error naming the line.
inline std::pair<Vocabulary, EmbeddingTable> load_embeddings(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file: " + path);

  Vocabulary vocab;
  EmbeddingTable table;
  long declared_rows = -1;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = detail::split_ws(line);
    if (toks.empty()) continue;
    if (lineno == 1 && toks.size() == 2) {
      long v = 0, d = 0;
      if (detail::parse_nonneg_int(toks[0], v) &&
          detail::parse_nonneg_int(toks[1], d)) {
        declared_rows = v;
        table.dim = static_cast<int>(d);
        continue;
      }
    }
    const int d = static_cast<int>(toks.size()) - 1;
    if (d < 1) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": row has no vector values");
    }
    if (table.dim == 0) table.dim = d;
    if (d != table.dim) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected " + std::to_string(table.dim) +
                               " values, got " + std::to_string(d));
    }
    if (vocab.lookup(toks[0]) >= 0) {
      std::cerr << "warning: " << path << ":" << lineno << ": duplicate word '"
                << toks[0] << "', keeping first occurrence\n";
      continue;
    }
    vocab.add(toks[0]);
    for (int i = 0; i < d; ++i) {
      std::size_t pos = 0;
      const double x = std::stod(toks[i + 1], &pos);
      if (pos != toks[i + 1].size()) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": bad number '" + toks[i + 1] + "'");
      }
      table.data.push_back(x);
    }
  }
  if (vocab.size() == 0) {
    throw std::runtime_error(path + ": no embedding rows");
  }
  if (declared_rows >= 0 && declared_rows != vocab.size()) {
    throw std::runtime_error(path + ": header declares " +
                             std::to_string(declared_rows) + " rows, found " +
                             std::to_string(vocab.size()));
  }
  return {std::move(vocab), std::move(table)};
}

// 9 significant digits; loading our own output and re-saving is byte-stable.
inline void save_embeddings(const std::string& path, const Vocabulary& vocab,
                            const EmbeddingTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write embedding file: " + path);
  out << vocab.size() << ' ' << table.dim << '\n';
  char buf[64];
  for (int i = 0; i < vocab.size(); ++i) {
    out << vocab.word(i);
    for (double x : table.row(i)) {
      std::snprintf(buf, sizeof(buf), " %.9g", x);
      out << buf;
    }
    out << '\n';
  }
}

// Lowercases, whitespace-tokenizes, drops stopwords and out-of-vocabulary
// tokens. A segment with nothing left is an error.
inline Segment encode_segment(const std::string& text, const Vocabulary& vocab,
                              const StopwordSet* stopwords = nullptr) {
  Segment seg;
  for (const auto& tok : detail::split_ws(text)) {
    const std::string w = detail::lowercase_ascii(tok);
    if (stopwords && stopwords->count(w)) continue;
    const int id = vocab.lookup(w);
    if (id >= 0) seg.words.push_back(id);
  }
  if (seg.words.empty()) {
    throw std::runtime_error("segment has no in-vocabulary tokens: '" + text +
                             "'");
  }
  return seg;
}

// Lines of "aspect_name<TAB>seed1,seed2,...". Out-of-vocabulary seeds are
// skipped with a warning; an aspect with nothing left is an error. The aspect
// named "general" (case-insensitive) is flagged as the fallback aspect; if
// none exists the last aspect is flagged with a warning.
inline SeedLexicon load_seed_lexicon(const std::string& path,
                                     const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open seed lexicon: " + path);
  SeedLexicon lex;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 'aspect<TAB>seeds'");
    }
    const std::string name = line.substr(0, tab);
    std::vector<int> ids;
    std::unordered_set<int> seen;
    std::string seed;
    std::istringstream seeds(line.substr(tab + 1));
    while (std::getline(seeds, seed, ',')) {
      // trim surrounding whitespace
      const auto b = seed.find_first_not_of(" \t\r");
      const auto e = seed.find_last_not_of(" \t\r");
      if (b == std::string::npos) continue;
      const std::string w = detail::lowercase_ascii(seed.substr(b, e - b + 1));
      const int id = vocab.lookup(w);
      if (id < 0) {
        std::cerr << "warning: " << path << ":" << lineno << ": seed '" << w
                  << "' not in vocabulary, skipping\n";
        continue;
      }
      if (seen.insert(id).second) ids.push_back(id);
    }
    if (ids.empty()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": aspect '" + name +
                               "' has no in-vocabulary seeds");
    }
    lex.aspect_names.push_back(name);
    lex.seeds.push_back(std::move(ids));
    if (detail::lowercase_ascii(name) == "general") {
      lex.general_aspect = static_cast<int>(lex.aspect_names.size()) - 1;
    }
  }
  if (lex.num_aspects() < 2) {
    throw std::runtime_error(path + ": need at least 2 aspects, got " +
                             std::to_string(lex.num_aspects()));
  }
  if (lex.general_aspect < 0) {
    lex.general_aspect = lex.num_aspects() - 1;
    std::cerr << "warning: " << path << ": no aspect named 'general'; using '"
              << lex.aspect_names.back() << "' as the fallback aspect\n";
  }
  return lex;
}

inline StopwordSet load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open stopword file: " + path);
  StopwordSet set;
  std::string line;
  while (std::getline(in, line)) {
    auto toks = detail::split_ws(line);
    if (toks.size() == 1) set.insert(detail::lowercase_ascii(toks[0]));
  }
  return set;
}

// One segment per line. When a lexicon is given and the line has the
// "label<TAB>text" shape with a known aspect name, the label is attached;
// otherwise the whole line is treated as text.
inline std::vector<Segment> load_segments(const std::string& path,
                                          const Vocabulary& vocab,
                                          const SeedLexicon* lexicon = nullptr,
                                          const StopwordSet* stopwords = nullptr,
                                          bool require_labels = false) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  std::vector<Segment> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::optional<int> label;
    std::string text = line;
    const auto tab = line.find('\t');
    if (tab != std::string::npos && lexicon) {
      const int a = lexicon->aspect_by_name(line.substr(0, tab));
      if (a >= 0) {
        label = a;
        text = line.substr(tab + 1);
      }
    }
    if (require_labels && !label) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 'label<TAB>text' with a known "
                               "aspect name");
    }
    try {
      Segment seg = encode_segment(text, vocab, stopwords);
      seg.label = label;
      out.push_back(std::move(seg));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " +
                               e.what());
    }
  }
  if (out.empty()) throw std::runtime_error(path + ": no segments");
  return out;
}

inline void save_segments(const std::string& path,
                          const std::vector<Segment>& segments,
                          const Vocabulary& vocab, const SeedLexicon& lexicon,
                          bool labeled) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  for (const auto& seg : segments) {
    if (labeled) {
      if (!seg.label) throw std::runtime_error("segment lacks a label");
      out << lexicon.aspect_names[*seg.label] << '\t';
    }
    for (std::size_t i = 0; i < seg.words.size(); ++i) {
      if (i) out << ' ';
      out << vocab.word(seg.words[i]);
    }
    out << '\n';
  }
}

// k_n distinct train segments drawn uniformly, never the anchor.
inline std::vector<int> sample_negatives(const Dataset& data, int current,
                                         int k_n, Rng& rng) {
  const int n = static_cast<int>(data.train.size());
  if (n <= k_n) {
    throw std::runtime_error("negative sampling needs more than " +
                             std::to_string(k_n) + " train segments, have " +
                             std::to_string(n));
  }
  std::vector<int> picked;
  std::unordered_set<int> seen;
  picked.reserve(k_n);
  while (static_cast<int>(picked.size()) < k_n) {
    const int idx = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    if (idx == current || !seen.insert(idx).second) continue;
    picked.push_back(idx);
  }
  return picked;
}

}  // namespace hdae
