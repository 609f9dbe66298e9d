#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "hdae/model.hpp"
#include "hdae/synth.hpp"
#include "hdae/training.hpp"
#include "loss_probe.hpp"

using namespace hdae;
using hdae::ad::Tape;
using hdae::ad::Var;

namespace {

// K=3, N=2, I=2, d=4 instance over a small synthetic corpus, parameters
// perturbed away from init so nothing is symmetric.
probe::LossProbe make_probe(std::uint64_t corpus_seed, std::uint64_t jitter_seed,
                            double jitter, ModelMode mode) {
  SynthSpec spec;
  spec.aspects = 3;
  spec.vocab_per_aspect = 6;
  spec.shared_vocab = 4;
  spec.segments = 60;
  spec.len_min = 3;
  spec.len_max = 6;
  spec.dim = 4;
  spec.sigma_emb = 0.15;
  spec.seeds_per_aspect = 2;
  spec.centroid_scale = 1.2;
  const SynthCorpus corpus = generate_synthetic_corpus(spec, corpus_seed);

  probe::LossProbe p;
  p.config.mode = mode;
  p.config.components = 2;
  p.config.k_n = 3;
  p.config.lambda = 1.0;
  p.config.d1 = 1.0;
  p.config.d2 = 4.0;
  p.config.d3 = 4.0;
  // tau and sigma keep the refinement softmax away from saturation, so no
  // coordinate's gradient vanishes below the finite-difference noise floor
  p.config.tau = 0.5;
  p.config.sigma = 0.5;
  p.config.seed = jitter_seed;
  Rng rng(jitter_seed);
  p.model = init_model(mode, corpus.vocab, corpus.embeddings, corpus.lexicon,
                       p.config.hyper(), p.config.sigma, false, rng);
  p.data = corpus.data;
  p.teacher = TeacherState::uniform(corpus.lexicon);
  p.batch = {0, 1, 2, 3};
  for (std::size_t i = 0; i < p.batch.size(); ++i) {
    p.negatives.push_back(sample_negatives(p.data, p.batch[i], p.config.k_n,
                                           rng));
  }
  if (jitter > 0.0) {
    auto x = p.flatten();
    for (double& v : x) v += jitter * rng.normal();
    p.unflatten(x);
  }
  return p;
}

TrainConfig smoke_config(ModelMode mode, std::uint64_t seed) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = 2;
  c.batch_size = 16;
  c.k_n = 3;
  c.components = 2;
  c.learning_rate = 2e-3;
  c.d1 = 1.0;
  c.d2 = 2.5;
  c.d3 = 2.0;
  c.seed = seed;
  return c;
}

SynthCorpus smoke_corpus(std::uint64_t seed) {
  SynthSpec spec;
  spec.aspects = 3;
  spec.vocab_per_aspect = 8;
  spec.shared_vocab = 6;
  spec.segments = 80;
  spec.len_min = 3;
  spec.len_max = 6;
  spec.dim = 4;
  spec.sigma_emb = 0.15;
  spec.seeds_per_aspect = 2;
  spec.centroid_scale = 1.5;
  return generate_synthetic_corpus(spec, seed);
}

}  // namespace

TEST_CASE("loss_reconstruction values") {
  Tape t;
  auto vec = [&](double a, double b) {
    return t.constant(std::vector<double>{a, b});
  };

  // r.v_s = 1 and r.v_n = 0: all hinges inactive
  Var r = vec(1.0, 0.0);
  Var inactive = loss_reconstruction_tape(
      t, r, vec(1.0, 0.0), {vec(0.0, 1.0), vec(0.0, 2.0)});
  CHECK(t.value(inactive) == 0.0);

  // r orthogonal to everything with two negatives: each term is 1
  Var orth = loss_reconstruction_tape(
      t, r, vec(0.0, 1.0), {vec(0.0, 2.0), vec(0.0, -1.0)});
  CHECK(t.value(orth) == 2.0);

  // r.v_s = 0.5, r.v_n in {0.2, -0.1}: 0.7 + 0.4
  Var mixed = loss_reconstruction_tape(
      t, r, vec(0.5, 0.0), {vec(0.2, 0.0), vec(-0.1, 0.0)});
  CHECK(t.value(mixed) == doctest::Approx(1.1).epsilon(1e-12));
}

TEST_CASE("pairwise_min_semantic_distance picks the brute-force minimum") {
  // collinear tangent vectors: dist_exp(a e1, b e1) = 2|a - b|
  Tape t;
  auto ray = [&](double a) {
    return t.leaf(std::vector<double>{a, 0.0});
  };
  const std::vector<double> pos_a{0.0, 0.9};
  const std::vector<double> pos_b{0.2, 0.55};
  std::vector<Var> comps_a, comps_b;
  for (double a : pos_a) comps_a.push_back(ray(a));
  for (double b : pos_b) comps_b.push_back(ray(b));

  double brute = 1e300;
  for (double a : pos_a) {
    for (double b : pos_b) {
      brute = std::min(
          brute, probe::plain_dist_exp(std::vector<double>{a, 0.0},
                                       std::vector<double>{b, 0.0}));
    }
  }
  Var min_var = pairwise_min_semantic_distance_tape(t, comps_a, comps_b);
  CHECK(t.value(min_var) == doctest::Approx(brute).epsilon(1e-12));
  CHECK(brute == doctest::Approx(0.4).epsilon(1e-9));

  // a shared component makes the minimum zero
  Var shared = ray(0.25);
  Var zero = pairwise_min_semantic_distance_tape(
      t, {comps_a[0], shared}, {shared, comps_b[1]});
  CHECK(t.value(zero) == 0.0);

  // single components on each side: the only pair
  Var only = pairwise_min_semantic_distance_tape(t, {ray(0.1)}, {ray(0.4)});
  CHECK(t.value(only) == doctest::Approx(0.6).epsilon(1e-9));
}

TEST_CASE("loss_seed_dependence values") {
  Tape t;
  auto ray = [&](double a) { return t.leaf(std::vector<double>{a, 0.0}); };
  const double d1 = 0.3;

  // two seed words, one component each, distance d1 + 0.5
  std::vector<std::vector<std::vector<Var>>> comp(2);
  comp[0] = {{ray(0.0)}, {ray((d1 + 0.5) / 2.0)}};
  comp[1] = {{ray(0.1)}};  // single word: no pairs
  Var j1 = loss_seed_dependence_tape(t, comp, d1);
  CHECK(t.value(j1) == doctest::Approx(0.5).epsilon(1e-9));

  // everything within d1: zero
  std::vector<std::vector<std::vector<Var>>> close(1);
  close[0] = {{ray(0.0)}, {ray(0.05)}};
  CHECK(t.value(loss_seed_dependence_tape(t, close, d1)) == 0.0);
}

TEST_CASE("loss_semantic_independence values") {
  Tape t;
  auto ray = [&](double a) { return t.leaf(std::vector<double>{a, 0.0}); };
  const double d2 = 1.25;

  // identical components, one word, I=2: loss is d2
  std::vector<std::vector<std::vector<Var>>> same(1);
  same[0] = {{ray(0.3), ray(0.3)}};
  CHECK(t.value(loss_semantic_independence_tape(t, same, d2)) ==
        doctest::Approx(d2).epsilon(1e-12));

  // I=3 identical components: three pairs
  std::vector<std::vector<std::vector<Var>>> three(1);
  three[0] = {{ray(0.3), ray(0.3), ray(0.3)}};
  CHECK(t.value(loss_semantic_independence_tape(t, three, d2)) ==
        doctest::Approx(3.0 * d2).epsilon(1e-12));

  // components farther apart than d2: zero
  std::vector<std::vector<std::vector<Var>>> far(1);
  far[0] = {{ray(0.0), ray(d2)}};  // distance 2*d2
  CHECK(t.value(loss_semantic_independence_tape(t, far, d2)) == 0.0);
}

TEST_CASE("loss_aspect_scope values") {
  Tape t;
  auto ray = [&](double a) { return t.leaf(std::vector<double>{a, 0.0}); };
  const double d3 = 0.8;

  // aspect 0: component at distance d3 + 1 from its anchor at the origin;
  // aspect 1: component on its anchor
  std::vector<std::vector<std::vector<Var>>> comp(2);
  comp[0] = {{ray((d3 + 1.0) / 2.0)}};
  comp[1] = {{ray(0.5)}};
  std::vector<Var> anchors{ray(0.0), ray(0.5)};
  CHECK(t.value(loss_aspect_scope_tape(t, comp, anchors, d3)) ==
        doctest::Approx(1.0).epsilon(1e-9));

  // huge d3 disables the hinge
  CHECK(t.value(loss_aspect_scope_tape(t, comp, anchors, 1e6)) == 0.0);
}

TEST_CASE("loss_distillation values") {
  Tape t;
  const Var one_hot = t.constant(std::vector<double>{1.0, 0.0, 0.0});
  CHECK(std::abs(t.value(loss_distillation_tape(
            t, one_hot, std::vector<double>{1.0, 0.0, 0.0}))) < 1e-10);

  const Var uniform5 = t.constant(std::vector<double>(5, 0.2));
  CHECK(t.value(loss_distillation_tape(t, uniform5,
                                       std::vector<double>(5, 0.2))) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-9));
  CHECK(std::log(5.0) == doctest::Approx(1.609438).epsilon(1e-6));

  const Var half = t.constant(std::vector<double>{0.5, 0.5});
  CHECK(t.value(loss_distillation_tape(t, half,
                                       std::vector<double>{1.0, 0.0})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("total_loss combination") {
  TrainConfig c;
  c.lambda = 5.0;
  c.ratio_d1 = c.ratio_d2 = c.ratio_d3 = 1.0;
  CHECK(total_loss(1, 1, 1, 1, 1, c) == 9.0);
  CHECK(total_loss(0, 0, 0, 0, 0, c) == 0.0);
  c.lambda = 0.0;
  CHECK(total_loss(1, 7, 1, 1, 1, c) == 4.0);  // distillation excluded
}

TEST_CASE("adam_step") {
  ParamStore params;
  const int id = params.add("p", 2, 1);
  params.at(id).value = {1.0, -2.0};
  Adam adam;
  adam.init(params);

  // zero gradient: parameters unchanged, step counter advances
  adam.step(params, 0.1);
  CHECK(adam.step_count == 1);
  CHECK(params.at(id).value == std::vector<double>{1.0, -2.0});

  // first step with constant gradient: magnitude ~ lr, against the gradient
  ParamStore fresh;
  const int q = fresh.add("q", 2, 1);
  fresh.at(q).value = {0.0, 0.0};
  fresh.at(q).grad = {0.5, -0.25};
  Adam adam2;
  adam2.init(fresh);
  adam2.step(fresh, 0.01);
  CHECK(fresh.at(q).value[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(fresh.at(q).value[1] == doctest::Approx(0.01).epsilon(1e-6));

  // frozen tensors are skipped
  ParamStore frozen;
  const int f = frozen.add("f", 1, 1, false);
  frozen.at(f).value = {3.0};
  frozen.at(f).grad = {1.0};
  Adam adam3;
  adam3.init(frozen);
  adam3.step(frozen, 0.5);
  CHECK(frozen.at(f).value[0] == 3.0);
}

TEST_CASE("tape forward matches the plain-math batch loss") {
  for (auto mode : {ModelMode::kDisentangled, ModelMode::kHyperbolic,
                    ModelMode::kEuclidean}) {
    probe::LossProbe p = make_probe(31, 17, 0.05, mode);
    const auto x = p.flatten();
    const probe::PlainLoss plain = p.plain(x);
    CHECK(p.eval(x, nullptr, probe::LossProbe::kJr) ==
          doctest::Approx(plain.j_r).epsilon(1e-9));
    CHECK(p.eval(x, nullptr, probe::LossProbe::kJd) ==
          doctest::Approx(plain.j_d).epsilon(1e-9));
    CHECK(p.eval(x, nullptr, probe::LossProbe::kJ1) ==
          doctest::Approx(plain.j_d1).epsilon(1e-9));
    CHECK(p.eval(x, nullptr, probe::LossProbe::kJ2) ==
          doctest::Approx(plain.j_d2).epsilon(1e-9));
    CHECK(p.eval(x, nullptr, probe::LossProbe::kJ3) ==
          doctest::Approx(plain.j_d3).epsilon(1e-9));
    CHECK(p.eval(x, nullptr, probe::LossProbe::kTotal) ==
          doctest::Approx(plain.total).epsilon(1e-9));
  }
}

TEST_CASE("every loss term passes a finite-difference check") {
  // h = 3e-4 balances cancellation noise against truncation at O(1) loss
  // magnitudes; the kink margin is held several steps away so no hinge or
  // argmin flips inside the stencil.
  const double h = 3e-4;
  const std::vector<probe::LossProbe::Term> terms{
      probe::LossProbe::kJr, probe::LossProbe::kJd, probe::LossProbe::kJ1,
      probe::LossProbe::kJ2, probe::LossProbe::kJ3, probe::LossProbe::kTotal};
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 20 && checked < 3; ++seed) {
    probe::LossProbe p =
        make_probe(40 + seed, 100 + seed, 0.2, ModelMode::kDisentangled);
    const auto x = p.flatten();
    if (p.kink_distance(x) < 5e-3) continue;  // re-sample near kinks
    ++checked;
    for (auto term : terms) {
      auto fn = [&](const std::vector<double>& v, std::vector<double>* g) {
        return p.eval(v, g, term);
      };
      CHECK(hdae::ad::gradient_check(fn, x, h) < 1e-4);
    }
  }
  CHECK(checked == 3);
}

TEST_CASE("monotone hinge response in d1, d2, d3") {
  probe::LossProbe p = make_probe(55, 77, 0.3, ModelMode::kDisentangled);
  const auto x = p.flatten();
  double prev1 = 1e300, prev3 = 1e300, prev2 = -1.0;
  for (double d : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    p.config.d1 = d;
    p.config.d2 = d;
    p.config.d3 = d;
    const probe::PlainLoss plain = p.plain(x);
    const double j1 = p.eval(x, nullptr, probe::LossProbe::kJ1);
    const double j2 = p.eval(x, nullptr, probe::LossProbe::kJ2);
    const double j3 = p.eval(x, nullptr, probe::LossProbe::kJ3);
    CHECK(j1 == doctest::Approx(plain.j_d1).epsilon(1e-9));
    CHECK(j1 <= prev1 + 1e-12);  // larger d1 never increases J_d1
    CHECK(j2 >= prev2 - 1e-12);  // larger d2 never decreases J_d2
    CHECK(j3 <= prev3 + 1e-12);  // larger d3 never increases J_d3
    prev1 = j1;
    prev2 = j2;
    prev3 = j3;
  }
}

TEST_CASE("train smoke run and determinism") {
  const SynthCorpus corpus = smoke_corpus(3);
  const TrainConfig config = smoke_config(ModelMode::kDisentangled, 9);

  std::vector<LossReport> r1, r2;
  AspectModel m1 = train_model(config, corpus.data, corpus.vocab,
                               corpus.embeddings, corpus.lexicon, &r1);
  AspectModel m2 = train_model(config, corpus.data, corpus.vocab,
                               corpus.embeddings, corpus.lexicon, &r2);

  REQUIRE(r1.size() == 2);
  for (const auto& r : r1) {
    CHECK(std::isfinite(r.total));
    CHECK(r.j_r >= 0.0);
    CHECK(r.j_d >= 0.0);
    CHECK(r.j_d1 >= 0.0);
    CHECK(r.j_d2 >= 0.0);
    CHECK(r.j_d3 >= 0.0);
    // the report total satisfies the combination identity
    CHECK(std::abs(r.total - total_loss(r.j_r, r.j_d, r.j_d1, r.j_d2, r.j_d3,
                                        config)) < 1e-9);
  }

  // bit-identical reports and parameters across reruns
  for (std::size_t i = 0; i < r1.size(); ++i) {
    CHECK(r1[i].total == r2[i].total);
    CHECK(r1[i].j_r == r2[i].j_r);
  }
  for (int i = 0; i < m1.params.size(); ++i) {
    CHECK(m1.params.at(i).value == m2.params.at(i).value);
  }
}

TEST_CASE("training runs without the teacher when lambda is zero") {
  const SynthCorpus corpus = smoke_corpus(4);
  TrainConfig config = smoke_config(ModelMode::kDisentangled, 5);
  config.lambda = 0.0;
  std::vector<LossReport> reports;
  const AspectModel m = train_model(config, corpus.data, corpus.vocab,
                                    corpus.embeddings, corpus.lexicon,
                                    &reports);
  CHECK(reports.back().j_d == 0.0);
  CHECK(std::isfinite(reports.back().total));
  CHECK(m.num_aspects() == 3);
}

TEST_CASE("the reconstruction shift c changes nothing") {
  const SynthCorpus corpus = smoke_corpus(6);
  TrainConfig a = smoke_config(ModelMode::kDisentangled, 11);
  TrainConfig b = a;
  b.c = 17.0;

  std::vector<LossReport> ra, rb;
  AspectModel ma = train_model(a, corpus.data, corpus.vocab, corpus.embeddings,
                               corpus.lexicon, &ra);
  AspectModel mb = train_model(b, corpus.data, corpus.vocab, corpus.embeddings,
                               corpus.lexicon, &rb);
  for (std::size_t i = 0; i < ra.size(); ++i) {
    CHECK(ra[i].total == rb[i].total);
    CHECK(ra[i].j_r == rb[i].j_r);
    CHECK(ra[i].j_d == rb[i].j_d);
  }
  for (const auto& seg : corpus.data.test) {
    const auto pa = predict_aspect(ma, seg);
    const auto pb = predict_aspect(mb, seg);
    CHECK(pa.aspect == pb.aspect);
    for (std::size_t i = 0; i < pa.probs.size(); ++i) {
      CHECK(pa.probs[i] == pb.probs[i]);
    }
  }
}

TEST_CASE("gumbel refinement noise stays deterministic per seed") {
  const SynthCorpus corpus = smoke_corpus(8);
  TrainConfig config = smoke_config(ModelMode::kDisentangled, 13);
  config.gumbel_noise = true;
  std::vector<LossReport> r1, r2;
  train_model(config, corpus.data, corpus.vocab, corpus.embeddings,
              corpus.lexicon, &r1);
  train_model(config, corpus.data, corpus.vocab, corpus.embeddings,
              corpus.lexicon, &r2);
  for (std::size_t i = 0; i < r1.size(); ++i) {
    CHECK(r1[i].total == r2[i].total);
  }
}

TEST_CASE("optional forward variants train") {
  const SynthCorpus corpus = smoke_corpus(14);

  // unfrozen embeddings actually move
  TrainConfig unfreeze = smoke_config(ModelMode::kDisentangled, 21);
  unfreeze.train_embeddings = true;
  const AspectModel moved = train_model(unfreeze, corpus.data, corpus.vocab,
                                        corpus.embeddings, corpus.lexicon);
  CHECK(moved.params.at(moved.emb_id).value != corpus.embeddings.data);

  TrainConfig frozen = smoke_config(ModelMode::kDisentangled, 21);
  const AspectModel fixed = train_model(frozen, corpus.data, corpus.vocab,
                                        corpus.embeddings, corpus.lexicon);
  CHECK(fixed.params.at(fixed.emb_id).value == corpus.embeddings.data);

  // uniform seed weighting and the raw-vector refinement distance
  TrainConfig uniform = smoke_config(ModelMode::kDisentangled, 22);
  uniform.uniform_seed_weights = true;
  std::vector<LossReport> r1;
  train_model(uniform, corpus.data, corpus.vocab, corpus.embeddings,
              corpus.lexicon, &r1);
  CHECK(std::isfinite(r1.back().total));

  TrainConfig raw = smoke_config(ModelMode::kDisentangled, 23);
  raw.refine_exp_map = false;
  std::vector<LossReport> r2;
  train_model(raw, corpus.data, corpus.vocab, corpus.embeddings,
              corpus.lexicon, &r2);
  CHECK(std::isfinite(r2.back().total));
}

TEST_CASE("noise-free corpus is learned almost perfectly") {
  SynthSpec spec;
  spec.noise_rate = 0.0;
  const SynthCorpus corpus = generate_synthetic_corpus(spec, 7);
  const TrainConfig config;  // defaults
  const AspectModel m = train_model(config, corpus.data, corpus.vocab,
                                    corpus.embeddings, corpus.lexicon);
  long correct = 0;
  for (const auto& seg : corpus.data.train) {
    correct += predict_aspect(m, seg).aspect == *seg.label;
  }
  CHECK(static_cast<double>(correct) / corpus.data.train.size() >= 0.99);
}

TEST_CASE("update_teacher_quality") {
  // two aspects along opposite directions; prediction follows the content
  Vocabulary vocab;
  EmbeddingTable table;
  table.dim = 2;
  const std::vector<std::vector<double>> rows{
      {1.0, 0.0}, {-1.0, 0.0}, {0.0, 0.0}};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    vocab.add("w" + std::to_string(i));
    table.data.insert(table.data.end(), rows[i].begin(), rows[i].end());
  }
  SeedLexicon lex;
  lex.aspect_names = {"aspect0", "general"};
  lex.seeds = {{0, 2}, {1}};  // w2 is a seed of aspect0
  lex.general_aspect = 1;
  Rng rng(2);
  AspectModel model = init_model(ModelMode::kHyperbolic, vocab, table, lex,
                                 ModelHyper{}, 0.0, false, rng);

  std::vector<Segment> train{
      {{2, 0, 0, 0}, std::nullopt},  // pulled toward aspect0
      {{2, 0, 0, 0}, std::nullopt},
      {{2, 1, 1, 1}, std::nullopt},  // pulled toward general
      {{2, 1, 1, 1}, std::nullopt},
      {{0, 0}, std::nullopt},
  };
  CHECK(predict_aspect(model, train[0]).aspect == 0);
  CHECK(predict_aspect(model, train[2]).aspect == 1);

  TeacherState teacher = TeacherState::uniform(lex);
  teacher.quality[0][1] = 0.7;  // prior value for w2
  const TeacherState updated = update_teacher_quality(teacher, model, train);

  // w0 occurs in 3 segments, all predicted aspect0
  CHECK(updated.quality[0][0] == 1.0);
  // w2 occurs in 4 segments, student agrees on 2
  CHECK(updated.quality[0][1] == doctest::Approx(0.5).epsilon(1e-12));
  // w1 occurs in 2 segments, both predicted general
  CHECK(updated.quality[1][0] == 1.0);

  // a seed that never occurs keeps its prior value
  TeacherState absent = TeacherState::uniform(lex);
  absent.quality[0][1] = 0.123;
  std::vector<Segment> no_w2{{{0, 0}, std::nullopt}, {{1, 1}, std::nullopt}};
  const TeacherState kept = update_teacher_quality(absent, model, no_w2);
  CHECK(kept.quality[0][1] == 0.123);

  // a student that always disagrees floors at 1e-3
  std::vector<Segment> disagree{{{2, 1, 1, 1}, std::nullopt}};
  TeacherState floored = TeacherState::uniform(lex);
  const TeacherState after = update_teacher_quality(floored, model, disagree);
  CHECK(after.quality[0][1] == 1e-3);
}
