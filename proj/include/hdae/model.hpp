#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdae/corpus.hpp"
#include "hdae/geometry.hpp"
#include "hdae/rng.hpp"

namespace hdae {

enum class ModelMode {
  kEuclidean,     // softmax(W v_s + b) head, linear reconstruction
  kHyperbolic,    // distance head, Einstein-midpoint reconstruction
  kDisentangled,  // hyperbolic head over refined seed representations
};

inline std::string to_string(ModelMode m) {
  switch (m) {
    case ModelMode::kEuclidean: return "euclidean";
    case ModelMode::kHyperbolic: return "hyperbolic";
    case ModelMode::kDisentangled: return "disentangled";
  }
  return "?";
}

inline ModelMode parse_mode(const std::string& s) {
  if (s == "euclidean") return ModelMode::kEuclidean;
  if (s == "hyperbolic") return ModelMode::kHyperbolic;
  if (s == "disentangled") return ModelMode::kDisentangled;
  throw std::runtime_error("unknown mode '" + s +
                           "' (euclidean|hyperbolic|disentangled)");
}

// Forward-pass knobs that are part of the model itself (they change what a
// checkpointed model predicts, unlike optimizer settings).
struct ModelHyper {
  int components = 4;            // I
  double tau = 0.1;              // refinement temperature
  double beta = 0.01;            // reconstruction weight sharpness
  double recon_shift = 0.0;      // c; cancels in the normalized midpoint
  bool uniform_seed_weights = false;
  bool refine_exp_map = true;    // refinement distance on exp-mapped vectors
};

// Named dense tensors with gradient buffers. Iteration order is insertion
// order, which keeps optimizer updates and checkpoints deterministic.
class ParamStore {
 public:
  struct Tensor {
    std::string name;
    int rows = 0, cols = 0;
    bool trainable = true;
    std::vector<double> value;
    std::vector<double> grad;
  };

  int add(std::string name, int rows, int cols, bool trainable = true) {
    Tensor t;
    t.name = std::move(name);
    t.rows = rows;
    t.cols = cols;
    t.trainable = trainable;
    t.value.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    t.grad.assign(t.value.size(), 0.0);
    tensors_.push_back(std::move(t));
    return static_cast<int>(tensors_.size()) - 1;
  }

  Tensor& at(int id) { return tensors_.at(id); }
  const Tensor& at(int id) const { return tensors_.at(id); }
  int size() const { return static_cast<int>(tensors_.size()); }

  int find(const std::string& name) const {
    for (int i = 0; i < size(); ++i) {
      if (tensors_[i].name == name) return i;
    }
    return -1;
  }

  void zero_grads() {
    for (auto& t : tensors_) std::fill(t.grad.begin(), t.grad.end(), 0.0);
  }

 private:
  std::vector<Tensor> tensors_;
};

// Tensor ids of the per-seed-word vectors and their latent components.
struct SeedBank {
  std::vector<std::vector<int>> base;                // [aspect][seed]
  std::vector<std::vector<std::vector<int>>> comp;   // [aspect][seed][k]
};

struct AspectModel {
  ModelMode mode = ModelMode::kDisentangled;
  ModelHyper hyper;
  int dim = 0;
  Vocabulary vocab;
  SeedLexicon lexicon;
  ParamStore params;
  SeedBank bank;
  bool train_embeddings = false;
  int emb_id = -1;        // V x d
  int attention_id = -1;  // d x d
  int w_id = -1;          // K x d
  int b_id = -1;          // K
  int bias_v_id = -1;     // scalar
  int bias_a_id = -1;     // K

  int num_aspects() const { return lexicon.num_aspects(); }
  std::span<const double> word_vec(int w) const {
    const auto& t = params.at(emb_id);
    return {t.value.data() + static_cast<std::size_t>(w) * dim,
            static_cast<std::size_t>(dim)};
  }
};

namespace detail {
inline std::vector<double> softmax(std::span<const double> x) {
  std::vector<double> out(x.size());
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
}  // namespace detail

// I trainable variants of one seed vector: base + sigma * N(0, I).
inline std::vector<std::vector<double>> disentangle_init(
    std::span<const double> base, int components, double sigma, Rng& rng) {
  if (components < 1) throw std::invalid_argument("components must be >= 1");
  if (sigma < 0.0) throw std::invalid_argument("sigma must be >= 0");
  std::vector<std::vector<double>> out(components);
  for (auto& c : out) {
    c.resize(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      c[i] = base[i] + sigma * rng.normal();
    }
  }
  return out;
}

inline AspectModel init_model(ModelMode mode, const Vocabulary& vocab,
                              const EmbeddingTable& embeddings,
                              const SeedLexicon& lexicon,
                              const ModelHyper& hyper, double sigma,
                              bool train_embeddings, Rng& rng) {
  if (embeddings.rows() != vocab.size()) {
    throw std::runtime_error("embedding rows do not match vocabulary size");
  }
  for (const auto& seeds : lexicon.seeds) {
    for (int w : seeds) {
      if (w < 0 || w >= vocab.size()) {
        throw std::runtime_error("seed word index out of range");
      }
    }
  }

  AspectModel m;
  m.mode = mode;
  m.hyper = hyper;
  m.dim = embeddings.dim;
  m.vocab = vocab;
  m.lexicon = lexicon;
  m.train_embeddings = train_embeddings;
  const int d = m.dim;
  const int k = lexicon.num_aspects();

  m.emb_id = m.params.add("embeddings", vocab.size(), d, train_embeddings);
  m.params.at(m.emb_id).value = embeddings.data;

  m.attention_id = m.params.add("attention", d, d);
  for (int i = 0; i < d; ++i) m.params.at(m.attention_id).value[i * d + i] = 1.0;

  m.w_id = m.params.add("classifier_w", k, d);
  for (double& x : m.params.at(m.w_id).value) x = 0.1 * rng.normal();
  m.b_id = m.params.add("classifier_b", k, 1);
  m.bias_v_id = m.params.add("bias_v", 1, 1);
  m.bias_a_id = m.params.add("bias_a", k, 1);

  for (int i = 0; i < k; ++i) {
    m.bank.base.emplace_back();
    for (std::size_t j = 0; j < lexicon.seeds[i].size(); ++j) {
      const int id = m.params.add(
          "seed_a" + std::to_string(i) + "_s" + std::to_string(j), d, 1);
      auto row = embeddings.row(lexicon.seeds[i][j]);
      std::copy(row.begin(), row.end(), m.params.at(id).value.begin());
      m.bank.base.back().push_back(id);
    }
  }
  if (mode == ModelMode::kDisentangled) {
    for (int i = 0; i < k; ++i) {
      m.bank.comp.emplace_back();
      for (std::size_t j = 0; j < lexicon.seeds[i].size(); ++j) {
        m.bank.comp.back().emplace_back();
        const auto comps = disentangle_init(
            m.params.at(m.bank.base[i][j]).value, hyper.components, sigma, rng);
        for (int c = 0; c < hyper.components; ++c) {
          const int id = m.params.add("comp_a" + std::to_string(i) + "_s" +
                                          std::to_string(j) + "_k" +
                                          std::to_string(c),
                                      d, 1);
          m.params.at(id).value = comps[c];
          m.bank.comp.back().back().push_back(id);
        }
      }
    }
  }
  return m;
}

struct EncodeResult {
  std::vector<double> v_s;        // attention-weighted segment vector
  std::vector<double> attention;  // c_i, positive, sums to 1
};

// v'_s = mean word vector; u_i = v_i^T M v'_s; c = softmax(u); v_s = sum c_i v_i.
inline EncodeResult encode_segment_vector(const AspectModel& m,
                                          const Segment& seg) {
  if (seg.words.empty()) throw std::invalid_argument("empty segment");
  const int d = m.dim;
  const std::size_t t = seg.words.size();
  std::vector<double> mean(d, 0.0);
  for (int w : seg.words) {
    auto row = m.word_vec(w);
    for (int i = 0; i < d; ++i) mean[i] += row[i];
  }
  for (double& x : mean) x /= static_cast<double>(t);

  const auto& attn = m.params.at(m.attention_id).value;
  std::vector<double> projected(d, 0.0);  // M v'_s
  for (int i = 0; i < d; ++i) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += attn[i * d + j] * mean[j];
    projected[i] = s;
  }
  std::vector<double> logits(t);
  for (std::size_t i = 0; i < t; ++i) {
    logits[i] = detail::dot(m.word_vec(seg.words[i]), projected);
  }
  EncodeResult out;
  out.attention = detail::softmax(logits);
  out.v_s.assign(d, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    auto row = m.word_vec(seg.words[i]);
    for (int j = 0; j < d; ++j) out.v_s[j] += out.attention[i] * row[j];
  }
  return out;
}

// Softmax over seed-segment dot products; the per-segment seed weighting.
inline std::vector<double> seed_attention_weights(
    std::span<const double> v_s,
    const std::vector<std::vector<double>>& seed_vectors) {
  if (seed_vectors.empty()) throw std::invalid_argument("no seed vectors");
  std::vector<double> logits(seed_vectors.size());
  for (std::size_t j = 0; j < seed_vectors.size(); ++j) {
    logits[j] = detail::dot(v_s, seed_vectors[j]);
  }
  return detail::softmax(logits);
}

struct RefineResult {
  std::vector<double> refined;  // s^r
  std::vector<double> weights;  // g, sums to 1
};

// Soft selection among a seed word's latent components, sharpened by tau.
// Distances are hyperbolic; with exp_map=false the raw vectors are projected
// into the ball first.
inline RefineResult refine_seed(
    std::span<const double> v_s,
    const std::vector<std::vector<double>>& components, double tau,
    bool exp_map = true) {
  if (components.empty()) throw std::invalid_argument("no components");
  if (tau <= 0.0) throw std::invalid_argument("tau must be > 0");
  auto lift = [&](std::span<const double> v) {
    std::vector<double> raw(v.begin(), v.end());
    return exp_map ? geo::exp_map_0(geo::TangentVec{std::move(raw)})
                   : geo::project_to_ball(raw);
  };
  const geo::BallPoint segment_point = lift(v_s);
  std::vector<double> logits(components.size());
  for (std::size_t k = 0; k < components.size(); ++k) {
    logits[k] =
        -geo::poincare_distance(segment_point, lift(components[k])) / tau;
  }
  RefineResult out;
  out.weights = detail::softmax(logits);
  out.refined.assign(v_s.size(), 0.0);
  for (std::size_t k = 0; k < components.size(); ++k) {
    for (std::size_t i = 0; i < out.refined.size(); ++i) {
      out.refined[i] += out.weights[k] * components[k][i];
    }
  }
  return out;
}

struct AspectMatrix {
  std::vector<std::vector<double>> rows;            // a_i, K of them
  std::vector<std::vector<double>> seed_weights;    // z per aspect
};

// Aspect representations a_i = sum_j z_{i,j} s_{i,j}; in disentangled mode
// the refined per-segment vectors stand in for the base seeds.
inline AspectMatrix build_aspect_matrix(const AspectModel& m,
                                        std::span<const double> v_s) {
  AspectMatrix out;
  const int k = m.num_aspects();
  for (int i = 0; i < k; ++i) {
    std::vector<std::vector<double>> seed_vecs;
    for (std::size_t j = 0; j < m.bank.base[i].size(); ++j) {
      if (m.mode == ModelMode::kDisentangled) {
        std::vector<std::vector<double>> comps;
        for (int id : m.bank.comp[i][j]) comps.push_back(m.params.at(id).value);
        seed_vecs.push_back(
            refine_seed(v_s, comps, m.hyper.tau, m.hyper.refine_exp_map)
                .refined);
      } else {
        seed_vecs.push_back(m.params.at(m.bank.base[i][j]).value);
      }
    }
    std::vector<double> z;
    if (m.hyper.uniform_seed_weights) {
      z.assign(seed_vecs.size(), 1.0 / static_cast<double>(seed_vecs.size()));
    } else {
      z = seed_attention_weights(v_s, seed_vecs);
    }
    std::vector<double> a(m.dim, 0.0);
    for (std::size_t j = 0; j < seed_vecs.size(); ++j) {
      for (int x = 0; x < m.dim; ++x) a[x] += z[j] * seed_vecs[j][x];
    }
    out.rows.push_back(std::move(a));
    out.seed_weights.push_back(std::move(z));
  }
  return out;
}

// Segment-independent aspect anchor: the uniform combination of base seeds.
// Used by the scope regularizer, which has no segment in context.
inline std::vector<double> aspect_anchor(const AspectModel& m, int aspect) {
  const auto& ids = m.bank.base.at(aspect);
  std::vector<double> a(m.dim, 0.0);
  for (int id : ids) {
    const auto& v = m.params.at(id).value;
    for (int x = 0; x < m.dim; ++x) a[x] += v[x];
  }
  for (double& x : a) x /= static_cast<double>(ids.size());
  return a;
}

inline std::vector<double> euclidean_classify(std::span<const double> v_s,
                                              const AspectModel& m) {
  const int k = m.num_aspects();
  const auto& w = m.params.at(m.w_id).value;
  const auto& b = m.params.at(m.b_id).value;
  std::vector<double> logits(k);
  for (int i = 0; i < k; ++i) {
    logits[i] = b[i] + detail::dot({w.data() + static_cast<std::size_t>(i) * m.dim,
                                    static_cast<std::size_t>(m.dim)},
                                   v_s);
  }
  return detail::softmax(logits);
}

// p_i = -d_exp(v_s, a_i)^2 + b_v + b_{a_i}; unnormalized scores.
inline std::vector<double> hyperbolic_scores(
    std::span<const double> v_s, const std::vector<std::vector<double>>& a,
    double bias_v, std::span<const double> bias_a) {
  std::vector<double> scores(a.size());
  const geo::BallPoint seg = geo::exp_map_0(
      geo::TangentVec{std::vector<double>(v_s.begin(), v_s.end())});
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double dist = geo::poincare_distance(
        seg, geo::exp_map_0(geo::TangentVec{a[i]}));
    scores[i] = -dist * dist + bias_v + bias_a[i];
  }
  return scores;
}

inline std::vector<double> score_softmax(std::span<const double> scores) {
  return detail::softmax(scores);
}

// Einstein-midpoint reconstruction. The shift c cancels against the weight
// normalization, so the computation uses softmax(beta * scores) directly and
// the result is bit-identical for any c.
inline std::vector<double> hyperbolic_reconstruct(
    std::span<const double> scores, const std::vector<std::vector<double>>& a,
    double beta, double /*c*/ = 0.0) {
  if (beta <= 0.0) throw std::invalid_argument("beta must be > 0");
  std::vector<double> scaled(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) scaled[i] = beta * scores[i];
  const std::vector<double> weights = detail::softmax(scaled);
  std::vector<geo::KleinPoint> klein;
  klein.reserve(a.size());
  for (const auto& row : a) {
    klein.push_back(
        geo::poincare_to_klein(geo::exp_map_0(geo::TangentVec{row})));
  }
  const geo::KleinPoint mid = geo::einstein_midpoint(klein, weights);
  return geo::log_map_0(geo::klein_to_poincare(mid)).coords;
}

inline std::vector<double> euclidean_reconstruct(
    std::span<const double> probs, const std::vector<std::vector<double>>& a) {
  if (probs.size() != a.size()) {
    throw std::invalid_argument("probability/aspect count mismatch");
  }
  std::vector<double> r(a.empty() ? 0 : a[0].size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t x = 0; x < r.size(); ++x) r[x] += probs[i] * a[i][x];
  }
  return r;
}

// Per-seed-word predictive quality, updated from student agreement.
struct TeacherState {
  std::vector<std::vector<double>> quality;  // mirrors lexicon.seeds

  static TeacherState uniform(const SeedLexicon& lexicon) {
    TeacherState t;
    for (const auto& seeds : lexicon.seeds) {
      t.quality.emplace_back(seeds.size(), 1.0);
    }
    return t;
  }
};

// Bag-of-words teacher: quality-weighted seed hits, renormalized; segments
// with no hits at all go to the general aspect.
inline std::vector<double> teacher_predict(const Segment& seg,
                                           const SeedLexicon& lexicon,
                                           const TeacherState& teacher) {
  if (lexicon.general_aspect < 0) {
    throw std::invalid_argument("lexicon has no general aspect");
  }
  const int k = lexicon.num_aspects();
  std::vector<double> score(k, 0.0);
  for (int w : seg.words) {
    for (int i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < lexicon.seeds[i].size(); ++j) {
        if (lexicon.seeds[i][j] == w) score[i] += teacher.quality[i][j];
      }
    }
  }
  double total = 0.0;
  for (double s : score) total += s;
  if (total <= 0.0) {
    std::vector<double> out(k, 0.0);
    out[lexicon.general_aspect] = 1.0;
    return out;
  }
  for (double& s : score) s /= total;
  return score;
}

struct Prediction {
  int aspect = -1;
  std::vector<double> probs;
};

// Mode-appropriate head; argmax with ties broken toward the lower index.
inline Prediction predict_aspect(const AspectModel& m, const Segment& seg) {
  const EncodeResult enc = encode_segment_vector(m, seg);
  Prediction out;
  if (m.mode == ModelMode::kEuclidean) {
    out.probs = euclidean_classify(enc.v_s, m);
  } else {
    const AspectMatrix a = build_aspect_matrix(m, enc.v_s);
    const auto scores =
        hyperbolic_scores(enc.v_s, a.rows, m.params.at(m.bias_v_id).value[0],
                          m.params.at(m.bias_a_id).value);
    out.probs = score_softmax(scores);
  }
  out.aspect = 0;
  for (int i = 1; i < static_cast<int>(out.probs.size()); ++i) {
    if (out.probs[i] > out.probs[out.aspect]) out.aspect = i;
  }
  return out;
}

}  // namespace hdae
