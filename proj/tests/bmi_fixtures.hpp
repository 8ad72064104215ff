#pragma once

#include "cbmi/corpus.hpp"

#include <string>
#include <utility>
#include <vector>

namespace cbmi::testing {

/// Ten-pair toy corpus and the per-target-token BMI values produced for it by
/// the brute-force counter in tests/oracles/bmi_oracle.py.
inline ParallelCorpus ten_pair_corpus() {
  ParallelCorpus c;
  const std::pair<const char*, const char*> pairs[] = {
      {"das haus ist klein", "the house is small"}, {"das haus ist gross", "the house is big"},
      {"ein kleines haus", "a small house"},        {"das auto ist rot", "the car is red"},
      {"ein rotes auto", "a red car"},              {"das ist gut", "that is good"},
      {"haus und auto", "house and car"},           {"klein und klein", "small and small"},
      {"der hund ist gross", "the dog is big"},     {"ein hund", "a dog"},
  };
  for (const auto& [s, t] : pairs) {
    c.src.emplace_back(s);
    c.tgt.emplace_back(t);
  }
  return c;
}

inline const std::vector<std::pair<std::string, double>>& ten_pair_bmi() {
  static const std::vector<std::pair<std::string, double>> values{
      {"</s>", 11.835826883895525}, {"a", 12.192126739174391},   {"and", 13.490337704572912},
      {"big", 17.247905081231771},  {"car", 14.043285488272476}, {"dog", 13.889591552681798},
      {"good", 14.189696145132137}, {"house", 13.911670669716953}, {"is", 15.049059776966141},
      {"red", 15.382432521532042},  {"small", 12.628084432611383}, {"that", 14.189696145132137},
      {"the", 15.963741153186366},
  };
  return values;
}

}  // namespace cbmi::testing
