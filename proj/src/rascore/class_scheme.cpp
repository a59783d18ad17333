// SPDX-License-Identifier: Apache-2.0
#include "wetseg/rascore/class_scheme.hpp"

#include <set>

#include "wetseg/error.hpp"

namespace wetseg {

void ClassScheme::validate() const {
  if (classes.empty()) throw DataError("class scheme '" + name + "' has no classes");
  if (classes.size() >= kUnlabeled)
    throw DataError("class scheme '" + name + "' exceeds 254 classes");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].id != i)
      throw DataError("class scheme '" + name + "': ids must be contiguous from 0 (position " +
                      std::to_string(i) + " has id " + std::to_string(classes[i].id) + ")");
    if (!seen.insert(classes[i].label).second)
      throw DataError("class scheme '" + name + "': duplicate label '" + classes[i].label + "'");
  }
}

const ClassScheme& dynamic_world_scheme() {
  static const ClassScheme scheme{"dynamic-world",
                                  {{0, "water", {0x41, 0x9B, 0xDF}},
                                   {1, "trees", {0x39, 0x7D, 0x49}},
                                   {2, "grass", {0x88, 0xB0, 0x53}},
                                   {3, "flooded_vegetation", {0x7A, 0x87, 0xC6}},
                                   {4, "crops", {0xE4, 0x96, 0x35}},
                                   {5, "shrub_and_scrub", {0xDF, 0xC3, 0x5A}},
                                   {6, "built", {0xC4, 0x28, 0x1B}},
                                   {7, "bare", {0xA5, 0x9B, 0x8F}},
                                   {8, "snow_and_ice", {0xB3, 0x9F, 0xE1}}}};
  return scheme;
}

const ClassScheme& biesbosch_manual_scheme() {
  static const ClassScheme scheme{"biesbosch-manual",
                                  {{0, "water", {0x41, 0x9B, 0xDF}},
                                   {1, "grass", {0x88, 0xB0, 0x53}},
                                   {2, "reed", {0xC8, 0xB4, 0x6E}},
                                   {3, "forest", {0x39, 0x7D, 0x49}},
                                   {4, "built", {0xC4, 0x28, 0x1B}}}};
  return scheme;
}

const ClassScheme& builtin_scheme(const std::string& name) {
  if (name == dynamic_world_scheme().name) return dynamic_world_scheme();
  if (name == biesbosch_manual_scheme().name) return biesbosch_manual_scheme();
  throw ConfigError("unknown class scheme '" + name + "'");
}

void to_json(nlohmann::json& j, const ClassScheme& s) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : s.classes)
    classes.push_back({{"id", c.id}, {"label", c.label}, {"rgb", c.color}});
  j = {{"name", s.name}, {"classes", classes}};
}

void from_json(const nlohmann::json& j, ClassScheme& s) {
  if (j.is_string()) {
    s = builtin_scheme(j.get<std::string>());
    return;
  }
  try {
    s.name = j.at("name").get<std::string>();
    s.classes.clear();
    for (const auto& c : j.at("classes"))
      s.classes.push_back({c.at("id").get<std::uint8_t>(), c.at("label").get<std::string>(),
                           c.at("rgb").get<Rgb>()});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("class scheme: ") + e.what());
  }
  s.validate();
}

}  // namespace wetseg
