#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdae/corpus.hpp"
#include "hdae/rng.hpp"

namespace hdae {

// Recipe for a desk-scale corpus with known structure: every aspect
// (including "general") owns a disjoint topical word pool, a shared pool
// supplies noise tokens, and embeddings cluster around per-pool centroids.
struct SynthSpec {
  int aspects = 5;           // K, last one is named "general"
  int vocab_per_aspect = 30;
  int shared_vocab = 30;
  int segments = 2000;       // split 80/10/10 into train/validation/test
  int len_min = 5;
  int len_max = 10;
  double noise_rate = 0.2;   // fraction of tokens drawn from the shared pool
  int dim = 4;
  double sigma_emb = 0.1;    // within-pool embedding spread
  double centroid_scale = 3.25;
  int seeds_per_aspect = 5;  // lexicon takes the first N words of each pool

  void validate() const {
    if (aspects < 2) throw std::runtime_error("synth: aspects must be >= 2");
    if (vocab_per_aspect < 1 || shared_vocab < 1) {
      throw std::runtime_error("synth: pools must be non-empty");
    }
    if (seeds_per_aspect < 1 || seeds_per_aspect > vocab_per_aspect) {
      throw std::runtime_error("synth: seeds_per_aspect must be in [1, " +
                               std::to_string(vocab_per_aspect) + "]");
    }
    if (segments < 10) throw std::runtime_error("synth: too few segments");
    if (len_min < 1 || len_max < len_min) {
      throw std::runtime_error("synth: bad length range");
    }
    if (noise_rate < 0.0 || noise_rate > 1.0) {
      throw std::runtime_error("synth: noise_rate must be in [0,1]");
    }
    if (dim < 1) throw std::runtime_error("synth: dim must be >= 1");
    if (sigma_emb <= 0.0 || centroid_scale <= 0.0) {
      throw std::runtime_error("synth: scales must be positive");
    }
  }
};

struct SynthCorpus {
  Vocabulary vocab;
  EmbeddingTable embeddings;
  SeedLexicon lexicon;
  Dataset data;
};

namespace detail {
// Well-separated pool centroids: orthonormalized Gaussian directions when the
// dimension allows, plain unit directions otherwise.
inline std::vector<std::vector<double>> make_centroids(int count, int dim,
                                                       double scale, Rng& rng) {
  std::vector<std::vector<double>> c(count, std::vector<double>(dim));
  for (auto& v : c) {
    for (double& x : v) x = rng.normal();
  }
  for (int i = 0; i < count; ++i) {
    if (count <= dim) {
      for (int j = 0; j < i; ++j) {
        double proj = 0.0;
        for (int k = 0; k < dim; ++k) proj += c[i][k] * c[j][k];
        for (int k = 0; k < dim; ++k) c[i][k] -= proj * c[j][k];
      }
    }
    double n = 0.0;
    for (double x : c[i]) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-9) {
      c[i].assign(dim, 0.0);
      c[i][i % dim] = 1.0;
      n = 1.0;
    }
    for (double& x : c[i]) x *= scale / n;
  }
  return c;
}
}  // namespace detail

inline SynthCorpus generate_synthetic_corpus(const SynthSpec& spec,
                                             std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  SynthCorpus out;

  const int k = spec.aspects;
  std::vector<std::vector<int>> pools(k);
  for (int i = 0; i < k; ++i) {
    const std::string aspect =
        (i == k - 1) ? "general" : "aspect" + std::to_string(i);
    out.lexicon.aspect_names.push_back(aspect);
    for (int j = 0; j < spec.vocab_per_aspect; ++j) {
      pools[i].push_back(out.vocab.add(aspect + "_w" + std::to_string(j)));
    }
  }
  out.lexicon.general_aspect = k - 1;
  std::vector<int> shared;
  for (int j = 0; j < spec.shared_vocab; ++j) {
    shared.push_back(out.vocab.add("shared_w" + std::to_string(j)));
  }

  const auto centroids =
      detail::make_centroids(k + 1, spec.dim, spec.centroid_scale, rng);
  out.embeddings.dim = spec.dim;
  out.embeddings.data.assign(
      static_cast<std::size_t>(out.vocab.size()) * spec.dim, 0.0);
  auto fill_pool = [&](const std::vector<int>& pool, int centroid) {
    for (int w : pool) {
      auto row = out.embeddings.row(w);
      for (int d = 0; d < spec.dim; ++d) {
        row[d] = centroids[centroid][d] + spec.sigma_emb * rng.normal();
      }
    }
  };
  for (int i = 0; i < k; ++i) fill_pool(pools[i], i);
  fill_pool(shared, k);

  for (int i = 0; i < k; ++i) {
    out.lexicon.seeds.emplace_back(pools[i].begin(),
                                   pools[i].begin() + spec.seeds_per_aspect);
  }

  std::vector<Segment> all;
  all.reserve(spec.segments);
  for (int s = 0; s < spec.segments; ++s) {
    Segment seg;
    const int aspect = static_cast<int>(rng.below(k));
    seg.label = aspect;
    const int len =
        spec.len_min +
        static_cast<int>(rng.below(spec.len_max - spec.len_min + 1));
    for (int t = 0; t < len; ++t) {
      const bool noisy = rng.uniform() < spec.noise_rate;
      const auto& pool = noisy ? shared : pools[aspect];
      seg.words.push_back(pool[rng.below(pool.size())]);
    }
    all.push_back(std::move(seg));
  }

  const int n_test = spec.segments / 10;
  const int n_valid = spec.segments / 10;
  const int n_train = spec.segments - n_test - n_valid;
  out.data.train.assign(all.begin(), all.begin() + n_train);
  out.data.validation.assign(all.begin() + n_train,
                             all.begin() + n_train + n_valid);
  out.data.test.assign(all.begin() + n_train + n_valid, all.end());
  return out;
}

// Flat key=value file for the synth CLI subcommand.
inline SynthSpec parse_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open synth spec: " + path);
  SynthSpec spec;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "aspects") spec.aspects = std::stoi(val);
      else if (key == "vocab_per_aspect") spec.vocab_per_aspect = std::stoi(val);
      else if (key == "shared_vocab") spec.shared_vocab = std::stoi(val);
      else if (key == "segments") spec.segments = std::stoi(val);
      else if (key == "len_min") spec.len_min = std::stoi(val);
      else if (key == "len_max") spec.len_max = std::stoi(val);
      else if (key == "noise_rate") spec.noise_rate = std::stod(val);
      else if (key == "dim") spec.dim = std::stoi(val);
      else if (key == "sigma_emb") spec.sigma_emb = std::stod(val);
      else if (key == "centroid_scale") spec.centroid_scale = std::stod(val);
      else if (key == "seeds_per_aspect") spec.seeds_per_aspect = std::stoi(val);
      else {
        throw std::runtime_error("unknown key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": bad value for '" + key + "'");
    }
  }
  return spec;
}

}  // namespace hdae
