// Phoneme-to-viseme grouping: the 39 ARPAbet phonemes plus silence collapse
// onto 15 articulation classes (class 0 is silence). The built-in map is
// total over the inventory and hits every class; user-supplied maps loaded
// from JSON are held to the same two constraints.
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "viseme/textgrid.hpp"

namespace viseme::align {

inline constexpr int kNumVisemes = 15;

const std::vector<std::string>& arpabet_inventory();  // 39 phonemes + "sil", sil first

class VisemeMap {
 public:
  static VisemeMap standard();
  // JSON object phoneme -> class id, e.g. {"sil": 0, "P": 1, ...}.
  static VisemeMap from_json(const nlohmann::json& spec);
  static VisemeMap from_file(const std::filesystem::path& path);

  // Normalizes the label first; unknown phonemes are a validation error.
  int viseme_of(std::string_view phoneme) const;
  std::optional<int> try_viseme_of(std::string_view phoneme) const;

  int n_classes() const { return kNumVisemes; }
  // Display name per class: member phonemes joined with '/', e.g. "P/B/M".
  const std::string& class_name(int viseme) const;
  const std::vector<std::vector<std::string>>& members() const { return members_; }

 private:
  VisemeMap() = default;
  void finalize();  // builds names, checks totality and surjectivity

  std::unordered_map<std::string, int> map_;
  std::vector<std::string> names_;
  std::vector<std::vector<std::string>> members_;
};

struct VisemeInterval {
  double xmin = 0.0;
  double xmax = 0.0;
  int viseme = 0;
};

// One output interval per phoneme interval; adjacent same-class intervals
// stay separate so trial counts track the alignment.
std::vector<VisemeInterval> tier_to_viseme_intervals(const PhonemeTier& tier,
                                                     const VisemeMap& map);

}  // namespace viseme::align
