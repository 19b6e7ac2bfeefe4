#pragma once

#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "etann/datagen.hpp"
#include "etann/train.hpp"

namespace etann {

/// Experiment configuration: oracle choice and parameters, data generation,
/// network widths/activations, training setup and schedule.
struct ExperimentConfig {
  nlohmann::json raw;

  std::string oracle_type;
  ElasticParams elastic;
  PlasticParams plastic;
  std::string lattice_file;  // optional; empty = built-in 24-bar cell

  GenConfig gen;
  TrainConfig train_cfg;
  std::string schedule = "two-stage";

  std::vector<int> energy_hidden{48};
  std::string energy_act = "gelu";
  std::vector<int> evolution_hidden{192, 192, 192, 192, 192};
  std::string evolution_act = "gelu";
  std::vector<int> encoder_hidden{48};
  std::vector<int> decoder_hidden{48};
  int nz_latent = 4;

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.raw = j;
    const auto require = [&](const char* key) {
      if (!j.contains(key))
        throw std::invalid_argument(std::string("config: missing required key '") + key + "'");
    };
    require("oracle");
    const auto& jo = j.at("oracle");
    c.oracle_type = jo.at("type").get<std::string>();
    c.elastic.K = jo.value("K", 0.0);
    c.elastic.G = jo.value("G", 0.0);
    c.plastic.c = jo.value("c", 0.0);
    c.plastic.H = jo.value("H", 0.0);
    c.plastic.mu = jo.value("mu", 0.0);
    if (jo.contains("damage")) {
      DamageParams dp;
      const auto& jd = jo.at("damage");
      dp.k_s = jd.value("k_s", dp.k_s);
      dp.tau_s = jd.value("tau_s", dp.tau_s);
      dp.a = jd.value("a", dp.a);
      dp.z_eq_f = jd.value("z_eq_f", dp.z_eq_f);
      dp.z_d_f = jd.value("z_d_f", dp.z_d_f);
      if (jd.contains("init_table")) {
        dp.init_table.clear();
        for (const auto& row : jd.at("init_table"))
          dp.init_table.emplace_back(row.at(0).get<double>(), row.at(1).get<double>());
      }
      c.plastic.damage = dp;
    }
    c.lattice_file = jo.value("cell_file", std::string{});

    if (j.contains("datagen")) {
      const auto& jg = j.at("datagen");
      c.gen.stddev = jg.value("stddev", c.gen.stddev);
      c.gen.dt = jg.value("dt", c.gen.dt);
      c.gen.steps_per_path = jg.value("steps_per_path", c.gen.steps_per_path);
      c.gen.n_records = jg.value("n_records", c.gen.n_records);
      c.gen.seed = jg.value("seed", c.gen.seed);
      if (jg.contains("family_mix")) {
        const auto mix = jg.at("family_mix").get<std::vector<double>>();
        if (mix.size() != 4)
          throw std::invalid_argument("config: datagen.family_mix needs 4 entries");
        for (int i = 0; i < 4; ++i) c.gen.family_mix[static_cast<std::size_t>(i)] = mix[static_cast<std::size_t>(i)];
      }
    }
    if (j.contains("model")) {
      const auto& jm = j.at("model");
      if (jm.contains("energy_hidden"))
        c.energy_hidden = jm.at("energy_hidden").get<std::vector<int>>();
      if (jm.contains("evolution_hidden"))
        c.evolution_hidden = jm.at("evolution_hidden").get<std::vector<int>>();
      if (jm.contains("encoder_hidden"))
        c.encoder_hidden = jm.at("encoder_hidden").get<std::vector<int>>();
      if (jm.contains("decoder_hidden"))
        c.decoder_hidden = jm.at("decoder_hidden").get<std::vector<int>>();
      c.energy_act = jm.value("energy_act", c.energy_act);
      c.evolution_act = jm.value("evolution_act", c.evolution_act);
      c.nz_latent = jm.value("nz", c.nz_latent);
    }
    if (j.contains("train")) {
      const auto& jt = j.at("train");
      c.train_cfg.lr = jt.value("lr", c.train_cfg.lr);
      c.train_cfg.decay = jt.value("decay", c.train_cfg.decay);
      c.train_cfg.batch_size = jt.value("batch_size", c.train_cfg.batch_size);
      c.train_cfg.huber_delta = jt.value("huber_delta", c.train_cfg.huber_delta);
      c.train_cfg.lambda_reg = jt.value("lambda_reg", c.train_cfg.lambda_reg);
      c.train_cfg.include_value_loss = jt.value("include_value_loss", true);
      c.train_cfg.max_epochs = jt.value("max_epochs", c.train_cfg.max_epochs);
      c.train_cfg.patience = jt.value("patience", c.train_cfg.patience);
      c.train_cfg.seed = jt.value("seed", c.train_cfg.seed);
      c.train_cfg.threads = jt.value("threads", c.train_cfg.threads);
      c.schedule = jt.value("schedule", c.schedule);
    }
    return c;
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot open " + path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::invalid_argument("config: " + path + ": " + e.what());
    }
    try {
      return from_json(j);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config: " + path + ": " + e.what());
    }
  }

  std::unique_ptr<OracleDriver> make_oracle() const {
    if (oracle_type == "elastic")
      return std::make_unique<HomogeneousOracle>(HomogeneousKind::Elastic, elastic, plastic);
    if (oracle_type == "vm-hardening")
      return std::make_unique<HomogeneousOracle>(HomogeneousKind::VmHardening, elastic, plastic);
    if (oracle_type == "perzyna")
      return std::make_unique<HomogeneousOracle>(HomogeneousKind::Perzyna, elastic, plastic);
    if (oracle_type == "damage")
      return std::make_unique<HomogeneousOracle>(HomogeneousKind::Damage, elastic, plastic);
    if (oracle_type == "lattice") {
      LatticeCell cell =
          lattice_file.empty() ? LatticeCell::cube_cell_24() : LatticeCell::load(lattice_file);
      return std::make_unique<LatticeOracle>(std::move(cell));
    }
    throw std::invalid_argument("config: unknown oracle type '" + oracle_type + "'");
  }
};

}  // namespace etann
