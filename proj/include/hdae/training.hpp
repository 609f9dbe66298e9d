#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "hdae/ad_geometry.hpp"
#include "hdae/autodiff.hpp"
#include "hdae/corpus.hpp"
#include "hdae/model.hpp"
#include "hdae/rng.hpp"

namespace hdae {

struct TrainConfig {
  ModelMode mode = ModelMode::kDisentangled;
  double learning_rate = 2e-4;
  int epochs = 10;
  int batch_size = 50;
  int k_n = 10;             // negative samples per segment
  double lambda = 5.0;      // distillation ratio; 0 disables the teacher
  double d1 = 8.0;          // inter seed word alignment distance
  double d2 = 64.0;         // latent semantic independence distance
  double d3 = 16.0;         // aspect scope confinement distance
  double tau = 0.1;
  int components = 4;       // I
  double beta = 0.01;
  double c = 0.0;
  double sigma = 1.0;       // component init noise
  double ratio_d1 = 1.0, ratio_d2 = 1.0, ratio_d3 = 1.0;
  std::uint64_t seed = 1;
  bool train_embeddings = false;
  bool uniform_seed_weights = false;
  bool gumbel_noise = false;
  bool refine_exp_map = true;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0)) {
        throw std::runtime_error(std::string("config: ") + name +
                                 " must be > 0");
      }
    };
    positive(learning_rate, "learning_rate");
    positive(tau, "tau");
    positive(beta, "beta");
    if (epochs < 1 || batch_size < 1 || k_n < 1 || components < 1) {
      throw std::runtime_error(
          "config: epochs, batch_size, k_n and components must be >= 1");
    }
    if (lambda < 0 || d1 < 0 || d2 < 0 || d3 < 0 || sigma < 0 ||
        ratio_d1 < 0 || ratio_d2 < 0 || ratio_d3 < 0) {
      throw std::runtime_error("config: negative value where none is allowed");
    }
    if (d1 >= d2) {
      std::cerr << "warning: config has d1 >= d2; alignment and independence "
                   "distances usually satisfy d1 < d2\n";
    }
  }

  ModelHyper hyper() const {
    ModelHyper h;
    h.components = components;
    h.tau = tau;
    h.beta = beta;
    h.recon_shift = c;
    h.uniform_seed_weights = uniform_seed_weights;
    h.refine_exp_map = refine_exp_map;
    return h;
  }
};

inline std::vector<std::pair<std::string, std::string>> config_key_values(
    const TrainConfig& c) {
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  return {
      {"mode", to_string(c.mode)},
      {"learning_rate", num(c.learning_rate)},
      {"epochs", std::to_string(c.epochs)},
      {"batch_size", std::to_string(c.batch_size)},
      {"k_n", std::to_string(c.k_n)},
      {"lambda", num(c.lambda)},
      {"d1", num(c.d1)},
      {"d2", num(c.d2)},
      {"d3", num(c.d3)},
      {"tau", num(c.tau)},
      {"components", std::to_string(c.components)},
      {"beta", num(c.beta)},
      {"c", num(c.c)},
      {"sigma", num(c.sigma)},
      {"ratio_d1", num(c.ratio_d1)},
      {"ratio_d2", num(c.ratio_d2)},
      {"ratio_d3", num(c.ratio_d3)},
      {"seed", std::to_string(c.seed)},
      {"train_embeddings", c.train_embeddings ? "true" : "false"},
      {"uniform_seed_weights", c.uniform_seed_weights ? "true" : "false"},
      {"gumbel_noise", c.gumbel_noise ? "true" : "false"},
      {"refine_exp_map", c.refine_exp_map ? "true" : "false"},
  };
}

inline void apply_config_entry(TrainConfig& c, const std::string& key,
                               const std::string& val) {
  auto as_bool = [&](const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::runtime_error("config: bad boolean for '" + key + "': " + v);
  };
  if (key == "mode") c.mode = parse_mode(val);
  else if (key == "learning_rate") c.learning_rate = std::stod(val);
  else if (key == "epochs") c.epochs = std::stoi(val);
  else if (key == "batch_size") c.batch_size = std::stoi(val);
  else if (key == "k_n") c.k_n = std::stoi(val);
  else if (key == "lambda") c.lambda = std::stod(val);
  else if (key == "d1") c.d1 = std::stod(val);
  else if (key == "d2") c.d2 = std::stod(val);
  else if (key == "d3") c.d3 = std::stod(val);
  else if (key == "tau") c.tau = std::stod(val);
  else if (key == "components") c.components = std::stoi(val);
  else if (key == "beta") c.beta = std::stod(val);
  else if (key == "c") c.c = std::stod(val);
  else if (key == "sigma") c.sigma = std::stod(val);
  else if (key == "ratio_d1") c.ratio_d1 = std::stod(val);
  else if (key == "ratio_d2") c.ratio_d2 = std::stod(val);
  else if (key == "ratio_d3") c.ratio_d3 = std::stod(val);
  else if (key == "seed") c.seed = std::stoull(val);
  else if (key == "train_embeddings") c.train_embeddings = as_bool(val);
  else if (key == "uniform_seed_weights") c.uniform_seed_weights = as_bool(val);
  else if (key == "gumbel_noise") c.gumbel_noise = as_bool(val);
  else if (key == "refine_exp_map") c.refine_exp_map = as_bool(val);
  else throw std::runtime_error("config: unknown key '" + key + "'");
}

inline TrainConfig parse_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  TrainConfig c;
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
    try {
      apply_config_entry(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument&) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": bad value");
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Tape-side forward pass. Mirrors the plain functions in model.hpp through
// autodiff primitives; consistency between the two paths is unit-tested.

struct TapeModel {
  ad::Var attention, w, b, bias_v, bias_a;
  std::vector<std::vector<ad::Var>> seed;
  std::vector<std::vector<std::vector<ad::Var>>> comp;
  std::unordered_map<int, ad::Var> words;
  std::vector<std::pair<int, ad::Var>> bound;  // tensor id -> leaf var
  std::vector<std::pair<int, ad::Var>> bound_words;  // word idx -> leaf var
};

inline TapeModel bind_model(ad::Tape& t, const AspectModel& m) {
  TapeModel tm;
  auto leaf = [&](int id) {
    const auto& tensor = m.params.at(id);
    ad::Var v = t.leaf(tensor.value, tensor.rows, tensor.cols);
    tm.bound.emplace_back(id, v);
    return v;
  };
  tm.attention = leaf(m.attention_id);
  tm.w = leaf(m.w_id);
  tm.b = leaf(m.b_id);
  tm.bias_v = leaf(m.bias_v_id);
  tm.bias_a = leaf(m.bias_a_id);
  for (std::size_t i = 0; i < m.bank.base.size(); ++i) {
    tm.seed.emplace_back();
    for (int id : m.bank.base[i]) tm.seed.back().push_back(leaf(id));
  }
  for (std::size_t i = 0; i < m.bank.comp.size(); ++i) {
    tm.comp.emplace_back();
    for (const auto& per_seed : m.bank.comp[i]) {
      tm.comp.back().emplace_back();
      for (int id : per_seed) tm.comp.back().back().push_back(leaf(id));
    }
  }
  return tm;
}

inline ad::Var word_var(ad::Tape& t, const AspectModel& m, TapeModel& tm,
                        int w) {
  auto it = tm.words.find(w);
  if (it != tm.words.end()) return it->second;
  ad::Var v;
  if (m.train_embeddings) {
    v = t.leaf(m.word_vec(w));
    tm.bound_words.emplace_back(w, v);
  } else {
    v = t.constant(m.word_vec(w));
  }
  tm.words.emplace(w, v);
  return v;
}

// Adds tape gradients back into the parameter store's grad buffers.
inline void read_back_grads(const ad::Tape& t, AspectModel& m,
                            const TapeModel& tm) {
  for (const auto& [id, var] : tm.bound) {
    auto g = t.grad(var);
    auto& dst = m.params.at(id).grad;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
  auto& emb_grad = m.params.at(m.emb_id).grad;
  for (const auto& [w, var] : tm.bound_words) {
    auto g = t.grad(var);
    for (std::size_t i = 0; i < g.size(); ++i) {
      emb_grad[static_cast<std::size_t>(w) * m.dim + i] += g[i];
    }
  }
}

inline ad::Var encode_segment_tape(ad::Tape& t, const AspectModel& m,
                                   TapeModel& tm, const Segment& seg) {
  const std::size_t n = seg.words.size();
  std::vector<ad::Var> words;
  words.reserve(n);
  for (int w : seg.words) words.push_back(word_var(t, m, tm, w));
  const std::vector<double> uniform(n, 1.0 / static_cast<double>(n));
  ad::Var mean = t.blend(t.constant(uniform), words);
  ad::Var projected = t.matvec(tm.attention, mean);
  std::vector<ad::Var> logits;
  logits.reserve(n);
  for (ad::Var w : words) logits.push_back(t.dot(w, projected));
  ad::Var attn = t.softmax(t.pack(logits));
  return t.blend(attn, words);
}

inline ad::Var project_to_ball_tape(ad::Tape& t, ad::Var v,
                                    double eps = geo::kBallEps) {
  ad::Var n = t.norm(v);
  if (t.value(n) <= 1.0 - eps) return t.affine(v, 1.0, 0.0);
  return t.smul(t.divs(t.scalar(1.0 - eps), n), v);
}

// Lifts a tangent-space (or raw) vector into the ball for the refinement
// distance, matching the model's refine_exp_map setting.
inline ad::Var refine_lift(ad::Tape& t, ad::Var v, bool exp_map) {
  return exp_map ? ad::exp_map_0(t, v) : project_to_ball_tape(t, v);
}

inline ad::Var refine_seed_tape(ad::Tape& t, ad::Var segment_point,
                                const std::vector<ad::Var>& comps, double tau,
                                bool exp_map,
                                const double* gumbel /* size I or null */) {
  std::vector<ad::Var> logits;
  logits.reserve(comps.size());
  for (std::size_t k = 0; k < comps.size(); ++k) {
    ad::Var dist = ad::poincare_distance(t, segment_point,
                                         refine_lift(t, comps[k], exp_map));
    ad::Var logit = t.affine(dist, -1.0 / tau, 0.0);
    if (gumbel) logit = t.affine(logit, 1.0, gumbel[k]);
    logits.push_back(logit);
  }
  ad::Var g = t.softmax(t.pack(logits));
  return t.blend(g, comps);
}

struct TapeAspects {
  std::vector<ad::Var> rows;  // a_i
};

inline TapeAspects aspect_matrix_tape(ad::Tape& t, const AspectModel& m,
                                      TapeModel& tm, ad::Var v_s,
                                      Rng* gumbel_rng) {
  TapeAspects out;
  const bool disent = m.mode == ModelMode::kDisentangled;
  ad::Var seg_point;
  if (disent) seg_point = refine_lift(t, v_s, m.hyper.refine_exp_map);
  for (int i = 0; i < m.num_aspects(); ++i) {
    std::vector<ad::Var> seed_vecs;
    const std::size_t n = m.bank.base[i].size();
    for (std::size_t j = 0; j < n; ++j) {
      if (disent) {
        std::vector<double> noise;
        if (gumbel_rng) {
          noise.resize(tm.comp[i][j].size());
          for (double& x : noise) x = gumbel_rng->gumbel();
        }
        seed_vecs.push_back(refine_seed_tape(
            t, seg_point, tm.comp[i][j], m.hyper.tau, m.hyper.refine_exp_map,
            gumbel_rng ? noise.data() : nullptr));
      } else {
        seed_vecs.push_back(tm.seed[i][j]);
      }
    }
    ad::Var z;
    if (m.hyper.uniform_seed_weights) {
      const std::vector<double> u(n, 1.0 / static_cast<double>(n));
      z = t.constant(u);
    } else {
      std::vector<ad::Var> dots;
      dots.reserve(n);
      for (ad::Var s : seed_vecs) dots.push_back(t.dot(s, v_s));
      z = t.softmax(t.pack(dots));
    }
    out.rows.push_back(t.blend(z, seed_vecs));
  }
  return out;
}

inline ad::Var hyperbolic_scores_tape(ad::Tape& t, TapeModel& tm, ad::Var v_s,
                                      const std::vector<ad::Var>& rows) {
  ad::Var seg = ad::exp_map_0(t, v_s);
  std::vector<ad::Var> scores;
  scores.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ad::Var dist = ad::poincare_distance(t, seg, ad::exp_map_0(t, rows[i]));
    ad::Var neg_sq = t.affine(t.mul(dist, dist), -1.0, 0.0);
    scores.push_back(t.add(t.add(neg_sq, tm.bias_v),
                           t.index(tm.bias_a, static_cast<int>(i))));
  }
  return t.pack(scores);
}

inline ad::Var hyperbolic_reconstruct_tape(ad::Tape& t, ad::Var scores,
                                           const std::vector<ad::Var>& rows,
                                           double beta) {
  ad::Var weights = t.softmax(t.affine(scores, beta, 0.0));
  std::vector<ad::Var> klein;
  klein.reserve(rows.size());
  for (ad::Var a : rows) {
    klein.push_back(ad::poincare_to_klein(t, ad::exp_map_0(t, a)));
  }
  ad::Var mid = ad::einstein_midpoint(t, klein, weights);
  return ad::log_map_0(t, ad::klein_to_poincare(t, mid));
}

inline ad::Var euclidean_classify_tape(ad::Tape& t, TapeModel& tm,
                                       ad::Var v_s) {
  return t.softmax(t.add(t.matvec(tm.w, v_s), tm.b));
}

// ---------------------------------------------------------------------------
// Loss terms.

// sum_i max(0, 1 - r.v_s + r.v_{n_i})
inline ad::Var loss_reconstruction_tape(ad::Tape& t, ad::Var r, ad::Var v_s,
                                        const std::vector<ad::Var>& negatives) {
  ad::Var pos = t.dot(r, v_s);
  ad::Var total;
  for (ad::Var vn : negatives) {
    ad::Var margin = t.affine(t.sub(t.dot(r, vn), pos), 1.0, 1.0);
    ad::Var h = t.hinge(margin);
    total = total.valid() ? t.add(total, h) : h;
  }
  return total;
}

// Minimal hyperbolic distance over all component pairs of two seed words.
// The argmin is selected on forward values; gradient flows through the
// winning pair only.
inline ad::Var pairwise_min_semantic_distance_tape(
    ad::Tape& t, const std::vector<ad::Var>& comps_a,
    const std::vector<ad::Var>& comps_b) {
  ad::Var best;
  double best_val = 0.0;
  for (ad::Var a : comps_a) {
    for (ad::Var b : comps_b) {
      ad::Var d = ad::dist_exp(t, a, b);
      if (!best.valid() || t.value(d) < best_val) {
        best = d;
        best_val = t.value(d);
      }
    }
  }
  return best;
}

// J_d1: seed word dependence within each aspect.
inline ad::Var loss_seed_dependence_tape(
    ad::Tape& t, const std::vector<std::vector<std::vector<ad::Var>>>& comp,
    double d1) {
  ad::Var total = t.scalar(0.0);
  for (const auto& aspect : comp) {
    for (std::size_t j = 0; j < aspect.size(); ++j) {
      for (std::size_t j2 = j + 1; j2 < aspect.size(); ++j2) {
        ad::Var min_dist =
            pairwise_min_semantic_distance_tape(t, aspect[j], aspect[j2]);
        total = t.add(total, t.hinge(t.affine(min_dist, 1.0, -d1)));
      }
    }
  }
  return total;
}

// J_d2: latent semantic independence within each seed word.
inline ad::Var loss_semantic_independence_tape(
    ad::Tape& t, const std::vector<std::vector<std::vector<ad::Var>>>& comp,
    double d2) {
  ad::Var total = t.scalar(0.0);
  for (const auto& aspect : comp) {
    for (const auto& comps : aspect) {
      for (std::size_t k = 0; k < comps.size(); ++k) {
        for (std::size_t k2 = k + 1; k2 < comps.size(); ++k2) {
          ad::Var d = ad::dist_exp(t, comps[k], comps[k2]);
          total = t.add(total, t.hinge(t.affine(d, -1.0, d2)));
        }
      }
    }
  }
  return total;
}

// J_d3: every component stays within d3 of its aspect representation.
inline ad::Var loss_aspect_scope_tape(
    ad::Tape& t, const std::vector<std::vector<std::vector<ad::Var>>>& comp,
    const std::vector<ad::Var>& anchors, double d3) {
  ad::Var total = t.scalar(0.0);
  for (std::size_t i = 0; i < comp.size(); ++i) {
    for (const auto& comps : comp[i]) {
      for (ad::Var c : comps) {
        ad::Var d = ad::dist_exp(t, c, anchors[i]);
        total = t.add(total, t.hinge(t.affine(d, 1.0, -d3)));
      }
    }
  }
  return total;
}

// Cross-entropy against the teacher's soft labels.
inline ad::Var loss_distillation_tape(ad::Tape& t, ad::Var student_probs,
                                      std::span<const double> teacher_probs) {
  ad::Var logp = t.log(t.affine(student_probs, 1.0, 1e-12));
  return t.affine(t.dot(t.constant(teacher_probs), logp), -1.0, 0.0);
}

// ---------------------------------------------------------------------------
// Optimizer.

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct Adam {
  AdamConfig cfg;
  long step_count = 0;
  std::vector<std::vector<double>> m1, m2;

  void init(const ParamStore& params) {
    m1.clear();
    m2.clear();
    step_count = 0;
    for (int i = 0; i < params.size(); ++i) {
      m1.emplace_back(params.at(i).value.size(), 0.0);
      m2.emplace_back(params.at(i).value.size(), 0.0);
    }
  }

  // Bias-corrected update from each tensor's grad buffer.
  void step(ParamStore& params, double lr) {
    ++step_count;
    const double c1 = 1.0 - std::pow(cfg.beta1, step_count);
    const double c2 = 1.0 - std::pow(cfg.beta2, step_count);
    for (int i = 0; i < params.size(); ++i) {
      auto& t = params.at(i);
      if (!t.trainable) continue;
      for (std::size_t j = 0; j < t.value.size(); ++j) {
        const double g = t.grad[j];
        m1[i][j] = cfg.beta1 * m1[i][j] + (1.0 - cfg.beta1) * g;
        m2[i][j] = cfg.beta2 * m2[i][j] + (1.0 - cfg.beta2) * g * g;
        const double mhat = m1[i][j] / c1;
        const double vhat = m2[i][j] / c2;
        t.value[j] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Training loop.

struct LossReport {
  int epoch = 0;
  double j_r = 0.0, j_d = 0.0, j_d1 = 0.0, j_d2 = 0.0, j_d3 = 0.0;
  double total = 0.0;
};

inline void write_loss_csv(const std::string& path,
                           const std::vector<LossReport>& reports) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write loss log: " + path);
  out << "epoch,J_r,J_d,J_d1,J_d2,J_d3,total\n";
  char buf[160];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  r.epoch, r.j_r, r.j_d, r.j_d1, r.j_d2, r.j_d3, r.total);
    out << buf;
  }
}

// Precision proxy from student agreement: for each seed word, the fraction of
// train segments containing it whose predicted aspect matches. Seeds with no
// occurrences keep their previous quality; everything is floored at 1e-3.
inline TeacherState update_teacher_quality(const TeacherState& teacher,
                                           const AspectModel& model,
                                           const std::vector<Segment>& train) {
  TeacherState out = teacher;
  std::vector<int> predicted(train.size());
  for (std::size_t s = 0; s < train.size(); ++s) {
    predicted[s] = predict_aspect(model, train[s]).aspect;
  }
  const int k = model.lexicon.num_aspects();
  std::vector<std::vector<long>> occur(k), agree(k);
  for (int i = 0; i < k; ++i) {
    occur[i].assign(model.lexicon.seeds[i].size(), 0);
    agree[i].assign(model.lexicon.seeds[i].size(), 0);
  }
  std::unordered_set<int> present;
  for (std::size_t s = 0; s < train.size(); ++s) {
    present.clear();
    present.insert(train[s].words.begin(), train[s].words.end());
    for (int i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < model.lexicon.seeds[i].size(); ++j) {
        if (present.count(model.lexicon.seeds[i][j])) {
          ++occur[i][j];
          if (predicted[s] == i) ++agree[i][j];
        }
      }
    }
  }
  for (int i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < out.quality[i].size(); ++j) {
      if (occur[i][j] > 0) {
        out.quality[i][j] =
            std::max(1e-3, static_cast<double>(agree[i][j]) / occur[i][j]);
      }
    }
  }
  return out;
}

namespace detail {
inline void require_finite_loss(double v, const char* term) {
  if (!std::isfinite(v)) {
    throw std::runtime_error(std::string("training aborted: loss term ") +
                             term + " is non-finite");
  }
}
}  // namespace detail

// Eq.-21 combination with the per-regularizer ratios.
inline double total_loss(double j_r, double j_d, double j_d1, double j_d2,
                         double j_d3, const TrainConfig& config) {
  return j_r + config.lambda * j_d + config.ratio_d1 * j_d1 +
         config.ratio_d2 * j_d2 + config.ratio_d3 * j_d3;
}

struct BatchLossVars {
  ad::Var total, j_r, j_d, j_d1, j_d2, j_d3;
};

// Builds the full objective for one mini-batch on the tape. J_r and J_d are
// per-segment means; the bank regularizers appear once. `negatives` carries
// the pre-sampled negative indices for each batch element.
inline BatchLossVars build_batch_loss(
    ad::Tape& tape, const AspectModel& model, TapeModel& tm,
    const Dataset& data, std::span<const int> batch,
    const std::vector<std::vector<int>>& negatives,
    const TeacherState& teacher, const TrainConfig& config, Rng* gumbel_rng) {
  const bool disent = model.mode == ModelMode::kDisentangled;
  const bool use_teacher = config.lambda > 0.0;

  ad::Var jr_sum = tape.scalar(0.0);
  ad::Var jd_sum = tape.scalar(0.0);
  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const Segment& seg = data.train[batch[bi]];
    ad::Var v_s = encode_segment_tape(tape, model, tm, seg);
    TapeAspects aspects =
        aspect_matrix_tape(tape, model, tm, v_s, gumbel_rng);

    ad::Var student_probs, recon;
    if (model.mode == ModelMode::kEuclidean) {
      student_probs = euclidean_classify_tape(tape, tm, v_s);
      recon = tape.blend(student_probs, aspects.rows);
    } else {
      ad::Var scores = hyperbolic_scores_tape(tape, tm, v_s, aspects.rows);
      student_probs = tape.softmax(scores);
      recon = hyperbolic_reconstruct_tape(tape, scores, aspects.rows,
                                          model.hyper.beta);
    }

    std::vector<ad::Var> neg_vecs;
    neg_vecs.reserve(negatives[bi].size());
    for (int ni : negatives[bi]) {
      neg_vecs.push_back(encode_segment_tape(tape, model, tm, data.train[ni]));
    }
    jr_sum =
        tape.add(jr_sum, loss_reconstruction_tape(tape, recon, v_s, neg_vecs));

    if (use_teacher) {
      const auto target = teacher_predict(seg, model.lexicon, teacher);
      jd_sum = tape.add(jd_sum,
                        loss_distillation_tape(tape, student_probs, target));
    }
  }

  BatchLossVars out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.j_r = tape.affine(jr_sum, inv, 0.0);
  out.j_d = tape.affine(jd_sum, inv, 0.0);
  out.j_d1 = tape.scalar(0.0);
  out.j_d2 = tape.scalar(0.0);
  out.j_d3 = tape.scalar(0.0);
  if (disent) {
    std::vector<ad::Var> anchors;
    for (int i = 0; i < model.num_aspects(); ++i) {
      const std::size_t cnt = tm.seed[i].size();
      const std::vector<double> u(cnt, 1.0 / static_cast<double>(cnt));
      anchors.push_back(tape.blend(tape.constant(u), tm.seed[i]));
    }
    out.j_d1 = loss_seed_dependence_tape(tape, tm.comp, config.d1);
    out.j_d2 = loss_semantic_independence_tape(tape, tm.comp, config.d2);
    out.j_d3 = loss_aspect_scope_tape(tape, tm.comp, anchors, config.d3);
  }
  out.total = tape.add(
      tape.add(out.j_r, tape.affine(out.j_d, config.lambda, 0.0)),
      tape.add(tape.add(tape.affine(out.j_d1, config.ratio_d1, 0.0),
                        tape.affine(out.j_d2, config.ratio_d2, 0.0)),
               tape.affine(out.j_d3, config.ratio_d3, 0.0)));
  return out;
}

// Runs the full loop: per shuffled mini-batch, encode segments, build the
// (refined) aspect matrix, score, reconstruct, sample negatives, distill
// against the teacher, backpropagate and update with Adam. The teacher's
// seed qualities are refreshed once per epoch. Deterministic given
// config.seed.
inline AspectModel train_model(const TrainConfig& config, const Dataset& data,
                               const Vocabulary& vocab,
                               const EmbeddingTable& embeddings,
                               const SeedLexicon& lexicon,
                               std::vector<LossReport>* reports = nullptr,
                               TeacherState* teacher_out = nullptr) {
  config.validate();
  if (data.train.empty()) throw std::runtime_error("empty training set");
  Rng rng(config.seed);
  AspectModel model =
      init_model(config.mode, vocab, embeddings, lexicon, config.hyper(),
                 config.sigma, config.train_embeddings, rng);
  TeacherState teacher = TeacherState::uniform(lexicon);
  Adam adam;
  adam.init(model.params);

  const int n = static_cast<int>(data.train.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  ad::Tape tape;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double sum_jr = 0.0, sum_jd = 0.0;
    double sum_j1 = 0.0, sum_j2 = 0.0, sum_j3 = 0.0;
    int batches = 0;

    for (int start = 0; start < n; start += config.batch_size) {
      const int stop = std::min(n, start + config.batch_size);
      const int bsize = stop - start;
      const std::span<const int> batch(order.data() + start,
                                       static_cast<std::size_t>(bsize));
      std::vector<std::vector<int>> negatives;
      negatives.reserve(bsize);
      for (int idx : batch) {
        negatives.push_back(sample_negatives(data, idx, config.k_n, rng));
      }

      tape.reset();
      TapeModel tm = bind_model(tape, model);
      const BatchLossVars loss =
          build_batch_loss(tape, model, tm, data, batch, negatives, teacher,
                           config, config.gumbel_noise ? &rng : nullptr);

      detail::require_finite_loss(tape.value(loss.j_r), "J_r");
      detail::require_finite_loss(tape.value(loss.j_d), "J_d");
      detail::require_finite_loss(tape.value(loss.j_d1), "J_d1");
      detail::require_finite_loss(tape.value(loss.j_d2), "J_d2");
      detail::require_finite_loss(tape.value(loss.j_d3), "J_d3");
      detail::require_finite_loss(tape.value(loss.total), "total");

      tape.backward(loss.total);
      model.params.zero_grads();
      read_back_grads(tape, model, tm);
      adam.step(model.params, config.learning_rate);

      sum_jr += tape.value(loss.j_r) * bsize;
      sum_jd += tape.value(loss.j_d) * bsize;
      sum_j1 += tape.value(loss.j_d1);
      sum_j2 += tape.value(loss.j_d2);
      sum_j3 += tape.value(loss.j_d3);
      ++batches;
    }

    teacher = update_teacher_quality(teacher, model, data.train);

    if (reports) {
      LossReport r;
      r.epoch = epoch;
      r.j_r = sum_jr / n;
      r.j_d = sum_jd / n;
      r.j_d1 = sum_j1 / batches;
      r.j_d2 = sum_j2 / batches;
      r.j_d3 = sum_j3 / batches;
      r.total = total_loss(r.j_r, r.j_d, r.j_d1, r.j_d2, r.j_d3, config);
      reports->push_back(r);
    }
  }

  if (teacher_out) *teacher_out = teacher;
  return model;
}

}  // namespace hdae
