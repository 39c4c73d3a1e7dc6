#include "viseme/viseme_map.hpp"

#include <algorithm>

#include "viseme/errors.hpp"
#include "viseme/text_io.hpp"

namespace viseme::align {
namespace {

// Class groupings, class id = position. "sil" is the canonical silence token.
const std::vector<std::vector<std::string>> kStandardGroups = {
    {"sil"},
    {"P", "B", "M"},
    {"F", "V"},
    {"TH", "DH"},
    {"T", "D"},
    {"K", "G", "NG", "HH"},
    {"CH", "JH", "SH", "ZH"},
    {"S", "Z"},
    {"N", "L"},
    {"R", "ER"},
    {"AA", "AH", "AY", "AW"},
    {"EH", "EY", "AE"},
    {"IY", "IH", "Y"},
    {"AO", "OW", "OY"},
    {"UW", "UH", "W"},
};

}  // namespace

const std::vector<std::string>& arpabet_inventory() {
  static const std::vector<std::string> inv = [] {
    std::vector<std::string> v;
    for (const auto& group : kStandardGroups)
      for (const auto& p : group) v.push_back(p);
    return v;
  }();
  return inv;
}

void VisemeMap::finalize() {
  members_.assign(kNumVisemes, {});
  for (const auto& p : arpabet_inventory()) {
    auto it = map_.find(p);
    if (it == map_.end())
      throw validation_error("viseme map does not cover phoneme \"" + p + "\"");
    members_[static_cast<size_t>(it->second)].push_back(p);
  }
  names_.clear();
  for (int c = 0; c < kNumVisemes; ++c) {
    if (members_[static_cast<size_t>(c)].empty())
      throw validation_error("viseme map leaves class " + std::to_string(c) + " empty");
    std::string name;
    for (const auto& p : members_[static_cast<size_t>(c)]) {
      if (!name.empty()) name += "/";
      name += p;
    }
    names_.push_back(std::move(name));
  }
}

VisemeMap VisemeMap::standard() {
  VisemeMap m;
  for (size_t c = 0; c < kStandardGroups.size(); ++c)
    for (const auto& p : kStandardGroups[c]) m.map_[p] = static_cast<int>(c);
  m.finalize();
  return m;
}

VisemeMap VisemeMap::from_json(const nlohmann::json& spec) {
  if (!spec.is_object()) throw validation_error("viseme map must be a JSON object");
  VisemeMap m;
  for (const auto& [key, val] : spec.items()) {
    std::string p = normalize_phoneme(key);
    if (std::find(arpabet_inventory().begin(), arpabet_inventory().end(), p) ==
        arpabet_inventory().end())
      throw validation_error("viseme map has unknown phoneme \"" + key + "\"");
    if (!val.is_number_integer())
      throw validation_error("viseme map entry \"" + key + "\" is not an integer class id");
    int c = val.get<int>();
    if (c < 0 || c >= kNumVisemes)
      throw validation_error("viseme map entry \"" + key + "\" has class " + std::to_string(c) +
                             " outside 0.." + std::to_string(kNumVisemes - 1));
    auto [it, inserted] = m.map_.emplace(p, c);
    if (!inserted && it->second != c)
      throw validation_error("viseme map assigns phoneme \"" + p + "\" to two classes");
  }
  m.finalize();
  return m;
}

VisemeMap VisemeMap::from_file(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error(path.string(), 0, e.what());
  }
  return from_json(j);
}

std::optional<int> VisemeMap::try_viseme_of(std::string_view phoneme) const {
  auto it = map_.find(normalize_phoneme(phoneme));
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

int VisemeMap::viseme_of(std::string_view phoneme) const {
  auto v = try_viseme_of(phoneme);
  if (!v)
    throw validation_error("unknown phoneme \"" + std::string(phoneme) + "\"");
  return *v;
}

const std::string& VisemeMap::class_name(int viseme) const {
  if (viseme < 0 || viseme >= kNumVisemes)
    throw validation_error("viseme class " + std::to_string(viseme) + " out of range");
  return names_[static_cast<size_t>(viseme)];
}

std::vector<VisemeInterval> tier_to_viseme_intervals(const PhonemeTier& tier,
                                                     const VisemeMap& map) {
  std::vector<VisemeInterval> out;
  out.reserve(tier.intervals.size());
  for (const auto& iv : tier.intervals)
    out.push_back({iv.xmin, iv.xmax, map.viseme_of(iv.label)});
  return out;
}

}  // namespace viseme::align
