#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hdae/checkpoint.hpp"
#include "hdae/corpus.hpp"
#include "hdae/eval.hpp"
#include "hdae/model.hpp"
#include "hdae/synth.hpp"
#include "hdae/training.hpp"

namespace hdae::cli {

namespace detail {

inline StopwordSet maybe_stopwords(const std::string& path) {
  return path.empty() ? StopwordSet{} : load_stopwords(path);
}

inline std::vector<int> gold_labels(const std::vector<Segment>& segments) {
  std::vector<int> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back(*s.label);
  return out;
}

inline int run_train(const std::string& config_path,
                     const std::string& corpus_path,
                     const std::string& embeddings_path,
                     const std::string& seeds_path,
                     const std::string& stopwords_path,
                     const std::string& out_dir) {
  const TrainConfig config = parse_train_config(config_path);
  auto [vocab, embeddings] = load_embeddings(embeddings_path);
  const SeedLexicon lexicon = load_seed_lexicon(seeds_path, vocab);
  const StopwordSet stop = maybe_stopwords(stopwords_path);
  Dataset data;
  data.train = load_segments(corpus_path, vocab, &lexicon,
                             stopwords_path.empty() ? nullptr : &stop);

  std::vector<LossReport> reports;
  AspectModel model =
      train_model(config, data, vocab, embeddings, lexicon, &reports);

  std::filesystem::create_directories(out_dir);
  save_checkpoint(out_dir + "/model.json", model, config);
  write_loss_csv(out_dir + "/loss.csv", reports);
  for (const auto& r : reports) {
    std::fprintf(stderr, "epoch %d  J_r %.6g  J_d %.6g  J_d1 %.6g  J_d2 %.6g"
                 "  J_d3 %.6g  total %.6g\n",
                 r.epoch, r.j_r, r.j_d, r.j_d1, r.j_d2, r.j_d3, r.total);
  }
  std::fprintf(stderr, "wrote %s/model.json and %s/loss.csv\n",
               out_dir.c_str(), out_dir.c_str());
  return 0;
}

inline int run_eval(const std::string& model_path,
                    const std::string& corpus_path,
                    const std::string& stopwords_path, bool per_aspect,
                    bool confusion, bool exclude_general) {
  const AspectModel model = load_checkpoint(model_path);
  const StopwordSet stop = maybe_stopwords(stopwords_path);
  const auto segments =
      load_segments(corpus_path, model.vocab, &model.lexicon,
                    stopwords_path.empty() ? nullptr : &stop,
                    /*require_labels=*/true);
  std::vector<int> preds;
  preds.reserve(segments.size());
  for (const auto& seg : segments) {
    preds.push_back(predict_aspect(model, seg).aspect);
  }
  const auto golds = gold_labels(segments);
  const int k = model.num_aspects();
  const MetricsReport rep = compute_metrics(preds, golds, k);

  std::printf("micro_f1 %.4f\n", rep.micro_f1);
  if (exclude_general) {
    std::printf("micro_f1_no_general %.4f\n",
                micro_f1_excluding(preds, golds, k,
                                   model.lexicon.general_aspect));
  }
  if (per_aspect) {
    for (int i = 0; i < k; ++i) {
      std::printf("f1_%s %.4f\n", model.lexicon.aspect_names[i].c_str(),
                  rep.f1[i]);
    }
  }
  if (confusion) {
    std::printf("gold\\pred");
    for (int i = 0; i < k; ++i) {
      std::printf(",%s", model.lexicon.aspect_names[i].c_str());
    }
    std::printf("\n");
    for (int i = 0; i < k; ++i) {
      std::printf("%s", model.lexicon.aspect_names[i].c_str());
      for (int j = 0; j < k; ++j) std::printf(",%ld", rep.confusion[i][j]);
      std::printf("\n");
    }
  }
  return 0;
}

inline int run_predict(const std::string& model_path, const std::string& input,
                       const std::string& format,
                       const std::string& stopwords_path) {
  const AspectModel model = load_checkpoint(model_path);
  const StopwordSet stop = maybe_stopwords(stopwords_path);
  const StopwordSet* stop_ptr = stopwords_path.empty() ? nullptr : &stop;

  std::ifstream file;
  std::istream* in = &std::cin;
  if (input != "-") {
    file.open(input);
    if (!file) throw std::runtime_error("cannot open input: " + input);
    in = &file;
  }

  const int k = model.num_aspects();
  if (format == "csv") {
    std::printf("segment_id,aspect");
    for (int i = 0; i < k; ++i) {
      std::printf(",p_%s", model.lexicon.aspect_names[i].c_str());
    }
    std::printf("\n");
  }

  std::string line;
  long id = 0;
  while (std::getline(*in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string text = line;
    const auto tab = line.find('\t');
    if (tab != std::string::npos &&
        model.lexicon.aspect_by_name(line.substr(0, tab)) >= 0) {
      text = line.substr(tab + 1);  // tolerate labeled input
    }
    const Segment seg = encode_segment(text, model.vocab, stop_ptr);
    const Prediction pred = predict_aspect(model, seg);
    if (format == "csv") {
      std::printf("%ld,%s", id, model.lexicon.aspect_names[pred.aspect].c_str());
      for (double p : pred.probs) std::printf(",%.12g", p);
      std::printf("\n");
    } else {
      nlohmann::json j;
      j["id"] = id;
      j["aspect"] = model.lexicon.aspect_names[pred.aspect];
      j["probs"] = pred.probs;
      std::printf("%s\n", j.dump().c_str());
    }
    ++id;
  }
  return 0;
}

inline int run_export(const std::string& model_path,
                      const std::string& corpus_path,
                      const std::string& stopwords_path,
                      const std::string& out_path) {
  const AspectModel model = load_checkpoint(model_path);
  const StopwordSet stop = maybe_stopwords(stopwords_path);
  const auto segments =
      load_segments(corpus_path, model.vocab, &model.lexicon,
                    stopwords_path.empty() ? nullptr : &stop);
  export_vectors(model, segments, out_path);
  std::fprintf(stderr, "wrote %zu vectors to %s\n", segments.size(),
               out_path.c_str());
  return 0;
}

inline int run_synth(const std::string& spec_path, std::uint64_t seed,
                     const std::string& out_dir) {
  const SynthSpec spec =
      spec_path.empty() ? SynthSpec{} : parse_synth_spec(spec_path);
  const SynthCorpus corpus = generate_synthetic_corpus(spec, seed);
  std::filesystem::create_directories(out_dir);
  save_embeddings(out_dir + "/embeddings.txt", corpus.vocab,
                  corpus.embeddings);
  std::ofstream seeds(out_dir + "/seeds.txt");
  if (!seeds) throw std::runtime_error("cannot write " + out_dir + "/seeds.txt");
  for (int i = 0; i < corpus.lexicon.num_aspects(); ++i) {
    seeds << corpus.lexicon.aspect_names[i] << '\t';
    for (std::size_t j = 0; j < corpus.lexicon.seeds[i].size(); ++j) {
      if (j) seeds << ',';
      seeds << corpus.vocab.word(corpus.lexicon.seeds[i][j]);
    }
    seeds << '\n';
  }
  save_segments(out_dir + "/train.txt", corpus.data.train, corpus.vocab,
                corpus.lexicon, /*labeled=*/true);
  save_segments(out_dir + "/valid.txt", corpus.data.validation, corpus.vocab,
                corpus.lexicon, /*labeled=*/true);
  save_segments(out_dir + "/test.txt", corpus.data.test, corpus.vocab,
                corpus.lexicon, /*labeled=*/true);
  std::fprintf(stderr,
               "wrote synthetic corpus (%zu train / %zu valid / %zu test) "
               "to %s\n",
               corpus.data.train.size(), corpus.data.validation.size(),
               corpus.data.test.size(), out_dir.c_str());
  return 0;
}

}  // namespace detail

// Exit codes: 0 success, 1 usage error, 2 data error.
inline int run(const std::vector<std::string>& args) {
  CLI::App app{"weakly supervised aspect extraction with a hyperbolic "
               "disentangled classifier"};
  app.require_subcommand(1);

  std::string config_path, corpus_path, embeddings_path, seeds_path;
  std::string stopwords_path, out_dir, model_path, input_path, out_path;
  std::string format = "csv";
  std::string spec_path;
  std::uint64_t synth_seed = 7;
  bool per_aspect = false, confusion = false, exclude_general = false;

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config_path, "key=value training config")
      ->required();
  train->add_option("--corpus", corpus_path, "training segments, one per line")
      ->required();
  train->add_option("--embeddings", embeddings_path, "word embedding file")
      ->required();
  train->add_option("--seeds", seeds_path, "seed lexicon file")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--stopwords", stopwords_path, "stopword file");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--model", model_path, "checkpoint file")->required();
  eval->add_option("--labeled-corpus", corpus_path,
                   "label<TAB>text segments")->required();
  eval->add_option("--stopwords", stopwords_path, "stopword file");
  eval->add_flag("--per-aspect", per_aspect, "print per-aspect F1");
  eval->add_flag("--confusion", confusion, "print the confusion matrix");
  eval->add_flag("--exclude-general", exclude_general,
                 "also print micro-F1 without the general aspect");

  auto* predict = app.add_subcommand("predict", "predict aspects");
  predict->add_option("--model", model_path, "checkpoint file")->required();
  predict->add_option("--input", input_path, "segment file, or - for stdin")
      ->required();
  predict->add_option("--format", format, "csv or jsonl")
      ->check(CLI::IsMember({"csv", "jsonl"}));
  predict->add_option("--stopwords", stopwords_path, "stopword file");

  auto* exp = app.add_subcommand("export", "export segment vectors");
  exp->add_option("--model", model_path, "checkpoint file")->required();
  exp->add_option("--corpus", corpus_path, "segment file")->required();
  exp->add_option("--out", out_path, "output CSV")->required();
  exp->add_option("--stopwords", stopwords_path, "stopword file");

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--spec", spec_path, "key=value corpus spec (optional)");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", out_dir, "output directory")->required();

  std::vector<const char*> argv;
  argv.push_back("hdae");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 1;
  }

  try {
    if (*train) {
      return detail::run_train(config_path, corpus_path, embeddings_path,
                               seeds_path, stopwords_path, out_dir);
    }
    if (*eval) {
      return detail::run_eval(model_path, corpus_path, stopwords_path,
                              per_aspect, confusion, exclude_general);
    }
    if (*predict) {
      return detail::run_predict(model_path, input_path, format,
                                 stopwords_path);
    }
    if (*exp) {
      return detail::run_export(model_path, corpus_path, stopwords_path,
                                out_path);
    }
    if (*synth) {
      return detail::run_synth(spec_path, synth_seed, out_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace hdae::cli
