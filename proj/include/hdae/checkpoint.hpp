#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "hdae/model.hpp"
#include "hdae/training.hpp"

namespace hdae {

// Single self-describing JSON archive: shapes, mode, every parameter tensor,
// the lexicon, the vocabulary and a config echo. Doubles survive the text
// round trip losslessly (shortest-round-trip serialization), and identical
// models serialize to identical bytes.
inline void save_checkpoint(const std::string& path, const AspectModel& model,
                            const TrainConfig& config) {
  nlohmann::json j;
  j["format"] = "hdae-checkpoint-1";
  j["mode"] = to_string(model.mode);
  j["dim"] = model.dim;
  j["train_embeddings"] = model.train_embeddings;
  j["hyper"] = {
      {"components", model.hyper.components},
      {"tau", model.hyper.tau},
      {"beta", model.hyper.beta},
      {"recon_shift", model.hyper.recon_shift},
      {"uniform_seed_weights", model.hyper.uniform_seed_weights},
      {"refine_exp_map", model.hyper.refine_exp_map},
  };
  j["vocab"] = model.vocab.words();
  nlohmann::json lex;
  lex["aspects"] = model.lexicon.aspect_names;
  lex["general_aspect"] = model.lexicon.general_aspect;
  lex["seeds"] = model.lexicon.seeds;
  j["lexicon"] = lex;

  nlohmann::json tensors = nlohmann::json::object();
  nlohmann::json order = nlohmann::json::array();
  for (int i = 0; i < model.params.size(); ++i) {
    const auto& t = model.params.at(i);
    order.push_back(t.name);
    tensors[t.name] = {{"rows", t.rows},
                       {"cols", t.cols},
                       {"trainable", t.trainable},
                       {"data", t.value}};
  }
  j["tensor_order"] = order;
  j["tensors"] = tensors;

  nlohmann::json echo = nlohmann::json::object();
  for (const auto& [k, v] : config_key_values(config)) echo[k] = v;
  j["config"] = echo;

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump() << '\n';
}

inline AspectModel load_checkpoint(const std::string& path,
                                   TrainConfig* config_out = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": not a valid checkpoint: " + e.what());
  }
  if (j.value("format", "") != "hdae-checkpoint-1") {
    throw std::runtime_error(path + ": unknown checkpoint format");
  }

  AspectModel m;
  m.mode = parse_mode(j.at("mode").get<std::string>());
  m.dim = j.at("dim").get<int>();
  m.train_embeddings = j.at("train_embeddings").get<bool>();
  const auto& h = j.at("hyper");
  m.hyper.components = h.at("components").get<int>();
  m.hyper.tau = h.at("tau").get<double>();
  m.hyper.beta = h.at("beta").get<double>();
  m.hyper.recon_shift = h.at("recon_shift").get<double>();
  m.hyper.uniform_seed_weights = h.at("uniform_seed_weights").get<bool>();
  m.hyper.refine_exp_map = h.at("refine_exp_map").get<bool>();

  for (const auto& w : j.at("vocab")) m.vocab.add(w.get<std::string>());
  const auto& lex = j.at("lexicon");
  m.lexicon.aspect_names = lex.at("aspects").get<std::vector<std::string>>();
  m.lexicon.general_aspect = lex.at("general_aspect").get<int>();
  m.lexicon.seeds = lex.at("seeds").get<std::vector<std::vector<int>>>();

  const auto& tensors = j.at("tensors");
  for (const auto& name : j.at("tensor_order")) {
    const auto& t = tensors.at(name.get<std::string>());
    const int id =
        m.params.add(name.get<std::string>(), t.at("rows").get<int>(),
                     t.at("cols").get<int>(), t.at("trainable").get<bool>());
    auto data = t.at("data").get<std::vector<double>>();
    if (data.size() != m.params.at(id).value.size()) {
      throw std::runtime_error(path + ": tensor '" + name.get<std::string>() +
                               "' has wrong size");
    }
    m.params.at(id).value = std::move(data);
  }

  m.emb_id = m.params.find("embeddings");
  m.attention_id = m.params.find("attention");
  m.w_id = m.params.find("classifier_w");
  m.b_id = m.params.find("classifier_b");
  m.bias_v_id = m.params.find("bias_v");
  m.bias_a_id = m.params.find("bias_a");
  if (m.emb_id < 0 || m.attention_id < 0 || m.w_id < 0 || m.b_id < 0 ||
      m.bias_v_id < 0 || m.bias_a_id < 0) {
    throw std::runtime_error(path + ": checkpoint is missing core tensors");
  }
  const int k = m.lexicon.num_aspects();
  for (int i = 0; i < k; ++i) {
    m.bank.base.emplace_back();
    for (std::size_t s = 0; s < m.lexicon.seeds[i].size(); ++s) {
      const int id = m.params.find("seed_a" + std::to_string(i) + "_s" +
                                   std::to_string(s));
      if (id < 0) throw std::runtime_error(path + ": missing seed tensor");
      m.bank.base.back().push_back(id);
    }
  }
  if (m.mode == ModelMode::kDisentangled) {
    for (int i = 0; i < k; ++i) {
      m.bank.comp.emplace_back();
      for (std::size_t s = 0; s < m.lexicon.seeds[i].size(); ++s) {
        m.bank.comp.back().emplace_back();
        for (int c = 0; c < m.hyper.components; ++c) {
          const int id =
              m.params.find("comp_a" + std::to_string(i) + "_s" +
                            std::to_string(s) + "_k" + std::to_string(c));
          if (id < 0) {
            throw std::runtime_error(path + ": missing component tensor");
          }
          m.bank.comp.back().back().push_back(id);
        }
      }
    }
  }

  if (config_out) {
    TrainConfig c;
    for (const auto& [key, value] : j.at("config").items()) {
      apply_config_entry(c, key, value.get<std::string>());
    }
    *config_out = c;
  }
  return m;
}

}  // namespace hdae
