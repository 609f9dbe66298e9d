#pragma once

#include <cstdio>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdae/geometry.hpp"
#include "hdae/model.hpp"

namespace hdae {

struct MetricsReport {
  double micro_f1 = 0.0;
  std::vector<double> precision, recall, f1;  // per aspect
  std::vector<long> support;                  // gold counts per aspect
  std::vector<std::vector<long>> confusion;   // [gold][predicted]
};

namespace detail {
inline void require_parallel(std::span<const int> preds,
                             std::span<const int> golds) {
  if (preds.size() != golds.size()) {
    throw std::invalid_argument("prediction/gold length mismatch");
  }
  if (preds.empty()) throw std::invalid_argument("no predictions");
}
}  // namespace detail

inline std::vector<std::vector<long>> confusion_matrix(
    std::span<const int> preds, std::span<const int> golds, int k) {
  detail::require_parallel(preds, golds);
  std::vector<std::vector<long>> m(k, std::vector<long>(k, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (golds[i] < 0 || golds[i] >= k || preds[i] < 0 || preds[i] >= k) {
      throw std::invalid_argument("label out of range");
    }
    ++m[golds[i]][preds[i]];
  }
  return m;
}

// Micro-averaged F1 over pooled decisions. With one label per segment this
// equals the fraction of correct predictions.
inline double micro_f1(std::span<const int> preds, std::span<const int> golds) {
  detail::require_parallel(preds, golds);
  long correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == golds[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

// Micro-F1 pooled over every class except `excluded` (pass -1 to keep all).
// Precision and recall differ once a class is dropped, so this goes through
// the pooled TP/FP/FN form.
inline double micro_f1_excluding(std::span<const int> preds,
                                 std::span<const int> golds, int k,
                                 int excluded) {
  const auto m = confusion_matrix(preds, golds, k);
  long tp = 0, fp = 0, fn = 0;
  for (int i = 0; i < k; ++i) {
    if (i == excluded) continue;
    for (int j = 0; j < k; ++j) {
      if (j == i) tp += m[i][j];
      if (j != i) fn += m[i][j];        // gold i predicted elsewhere
      if (j != i && j != excluded) fp += m[j][i];  // gold j predicted i
    }
  }
  const double p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
  const double r = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

inline MetricsReport compute_metrics(std::span<const int> preds,
                                     std::span<const int> golds, int k) {
  MetricsReport rep;
  rep.confusion = confusion_matrix(preds, golds, k);
  rep.micro_f1 = micro_f1(preds, golds);
  rep.precision.assign(k, 0.0);
  rep.recall.assign(k, 0.0);
  rep.f1.assign(k, 0.0);
  rep.support.assign(k, 0);
  for (int i = 0; i < k; ++i) {
    long tp = rep.confusion[i][i], fp = 0, fn = 0;
    for (int j = 0; j < k; ++j) {
      rep.support[i] += rep.confusion[i][j];
      if (j != i) {
        fn += rep.confusion[i][j];
        fp += rep.confusion[j][i];
      }
    }
    rep.precision[i] = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
    rep.recall[i] = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
    const double pr = rep.precision[i] + rep.recall[i];
    rep.f1[i] = pr == 0.0 ? 0.0 : 2.0 * rep.precision[i] * rep.recall[i] / pr;
  }
  return rep;
}

inline std::vector<double> per_aspect_f1(std::span<const int> preds,
                                         std::span<const int> golds, int k) {
  return compute_metrics(preds, golds, k).f1;
}

// Segment vectors as a CSV of "segment_id,label,v_1..v_d". Hyperbolic modes
// export the exp-mapped vector (inside the unit ball); the Euclidean mode
// exports v_s as-is.
inline void export_vectors(const AspectModel& model,
                           const std::vector<Segment>& segments,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vector export: " + path);
  out << "segment_id,label";
  for (int i = 1; i <= model.dim; ++i) out << ",v_" << i;
  out << '\n';
  char buf[64];
  for (std::size_t s = 0; s < segments.size(); ++s) {
    std::vector<double> v = encode_segment_vector(model, segments[s]).v_s;
    if (model.mode != ModelMode::kEuclidean) {
      v = geo::exp_map_0(geo::TangentVec{std::move(v)}).coords;
    }
    out << s << ','
        << (segments[s].label ? model.lexicon.aspect_names[*segments[s].label]
                              : "-");
    for (double x : v) {
      std::snprintf(buf, sizeof(buf), ",%.9g", x);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace hdae
