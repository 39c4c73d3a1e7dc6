// Long-form Praat TextGrid reader/writer for forced-alignment phoneme tiers.
// Labels are normalized on parse: uppercased, stress digits stripped, and
// silence spellings ("", "sp", "spn", "sil") collapsed to "sil". Point tiers
// are skipped with a warning; short-form TextGrids are rejected.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace viseme::align {

struct PhonemeInterval {
  double xmin = 0.0;
  double xmax = 0.0;
  std::string label;
};

struct PhonemeTier {
  std::string name;
  double xmin = 0.0;
  double xmax = 0.0;
  std::vector<PhonemeInterval> intervals;

  void validate() const;  // sorted, non-overlapping, contained in the span
};

// Uppercase, strip trailing stress digits, map silence spellings to "sil".
std::string normalize_phoneme(std::string_view raw);

std::vector<PhonemeTier> parse_textgrid(const std::filesystem::path& path,
                                        std::vector<std::string>* warnings = nullptr);

void write_textgrid(const std::vector<PhonemeTier>& tiers, const std::filesystem::path& path);

}  // namespace viseme::align
