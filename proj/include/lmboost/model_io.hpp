#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "lmboost/boosting.hpp"
#include "lmboost/errors.hpp"

namespace lmboost {

/// Self-contained JSON model container: learners, class table, region bank,
/// vocabulary, reference scale, config and seed. Serialization is canonical
/// (sorted keys, shortest round-trip doubles), so identical models produce
/// identical files.

namespace detail {

inline nlohmann::json config_json(const TrainConfig& c) {
  return {{"rounds", c.rounds},
          {"features_per_round", c.features_per_round},
          {"threshold_cap", c.threshold_cap},
          {"negative_ratio", c.negative_ratio},
          {"negative_cap", c.negative_cap},
          {"mining_period", c.mining_period},
          {"mining_growth", c.mining_growth},
          {"landmark_budget", c.landmark_budget},
          {"background_cap", c.background_cap},
          {"holdout_fraction", c.holdout_fraction},
          {"exclusion_radius", c.exclusion_radius},
          {"include_descriptor", c.include_descriptor},
          {"exhaustive_sharing_limit", c.exhaustive_sharing_limit},
          {"seed", c.seed}};
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.rounds = j.at("rounds").get<std::int32_t>();
  c.features_per_round = j.at("features_per_round").get<std::int32_t>();
  c.threshold_cap = j.at("threshold_cap").get<std::int32_t>();
  c.negative_ratio = j.at("negative_ratio").get<double>();
  c.negative_cap = j.at("negative_cap").get<std::int32_t>();
  c.mining_period = j.at("mining_period").get<std::int32_t>();
  c.mining_growth = j.at("mining_growth").get<double>();
  c.landmark_budget = j.at("landmark_budget").get<std::int32_t>();
  c.background_cap = j.at("background_cap").get<std::int32_t>();
  c.holdout_fraction = j.at("holdout_fraction").get<double>();
  c.exclusion_radius = j.at("exclusion_radius").get<double>();
  c.include_descriptor = j.at("include_descriptor").get<bool>();
  c.exhaustive_sharing_limit = j.at("exhaustive_sharing_limit").get<std::int32_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace detail

inline void save_model(const BoostedModel& model, const std::string& path) {
  using nlohmann::json;
  json j;
  j["format"] = "lmboost-model-v1";
  j["descriptor_bits"] = model.descriptor_bits;
  j["reference_scale"] = model.reference_scale;
  j["map_fingerprint"] = model.map_fingerprint;
  j["config"] = detail::config_json(model.config);
  j["class_table"] = model.classes.class_to_landmark;

  json vocab;
  vocab["k"] = model.vocab.k();
  vocab["bits"] = model.vocab.descriptor_bits;
  vocab["seed"] = model.vocab.seed;
  json centroids = json::array();
  for (const auto& c : model.vocab.centroids) centroids.push_back(c.to_hex());
  vocab["centroids"] = std::move(centroids);
  j["vocabulary"] = std::move(vocab);

  std::ostringstream bank_text;
  save_region_bank(model.bank, bank_text);
  j["region_bank"] = bank_text.str();

  json learners = json::array();
  for (const auto& l : model.learners) {
    learners.push_back({{"f", l.feature},
                        {"theta", l.threshold},
                        {"a", l.a},
                        {"b", l.b},
                        {"sharing", l.sharing},
                        {"k", l.class_constants}});
  }
  j["learners"] = std::move(learners);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump() << '\n';
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline BoostedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "lmboost-model-v1")
      throw ParseError(path + ": unknown model format");
    BoostedModel model;
    model.descriptor_bits = j.at("descriptor_bits").get<std::uint32_t>();
    model.reference_scale = j.at("reference_scale").get<double>();
    model.map_fingerprint = j.at("map_fingerprint").get<std::uint64_t>();
    model.config = detail::config_from_json(j.at("config"));

    model.classes.class_to_landmark =
        j.at("class_table").get<std::vector<std::int64_t>>();
    for (std::size_t c = 1; c < model.classes.class_to_landmark.size(); ++c)
      model.classes.landmark_to_class.emplace(model.classes.class_to_landmark[c],
                                              static_cast<std::int32_t>(c));

    const auto& vj = j.at("vocabulary");
    model.vocab.descriptor_bits = vj.at("bits").get<std::uint32_t>();
    model.vocab.seed = vj.at("seed").get<std::uint64_t>();
    for (const auto& hex : vj.at("centroids"))
      model.vocab.centroids.push_back(
          BinaryDescriptor::from_hex(hex.get<std::string>(), model.vocab.descriptor_bits));
    if (model.vocab.k() != vj.at("k").get<std::uint32_t>())
      throw ParseError(path + ": vocabulary centroid count mismatch");

    std::istringstream bank_text(j.at("region_bank").get<std::string>());
    model.bank = load_region_bank(bank_text);

    for (const auto& lj : j.at("learners")) {
      WeakLearner l;
      l.feature = lj.at("f").get<std::uint32_t>();
      l.threshold = lj.at("theta").get<double>();
      l.a = lj.at("a").get<double>();
      l.b = lj.at("b").get<double>();
      l.sharing = lj.at("sharing").get<std::vector<std::int32_t>>();
      l.class_constants = lj.at("k").get<std::vector<double>>();
      if (l.feature >= model.bank.size() * model.vocab.k() + model.descriptor_bits)
        throw ParseError(path + ": learner references feature beyond the model dimension");
      model.learners.push_back(std::move(l));
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace lmboost
