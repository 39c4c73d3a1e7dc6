#include <doctest.h>

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "viseme/errors.hpp"
#include "viseme/rng.hpp"
#include "viseme/textgrid.hpp"
#include "viseme/viseme_map.hpp"

using namespace viseme;
using align::PhonemeInterval;
using align::PhonemeTier;

namespace {

void write_text(const std::filesystem::path& p, const std::string& body) {
  std::ofstream out(p);
  out << body;
}

const char* kHandTextGrid = R"(File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0
xmax = 0.40
tiers? <exists>
size = 1
item []:
    item [1]:
        class = "IntervalTier"
        name = "phones"
        xmin = 0
        xmax = 0.40
        intervals: size = 3
        intervals [1]:
            xmin = 0.00
            xmax = 0.10
            text = "sil"
        intervals [2]:
            xmin = 0.10
            xmax = 0.25
            text = "HH"
        intervals [3]:
            xmin = 0.25
            xmax = 0.40
            text = "AH0"
)";

PhonemeTier random_tier(Rng& rng) {
  const auto& inv = align::arpabet_inventory();
  PhonemeTier t;
  t.name = "tier" + std::to_string(rng() % 1000);
  t.xmin = 0.0;
  double cursor = 0.0;
  const int n = static_cast<int>(rng() % 9);
  for (int i = 0; i < n; ++i) {
    if (rng() % 4 == 0) cursor += uniform_real(rng, 0.001, 0.05);  // leave a gap
    PhonemeInterval iv;
    iv.xmin = cursor;
    cursor += uniform_real(rng, 0.01, 0.5);
    iv.xmax = cursor;
    iv.label = inv[rng() % inv.size()];
    t.intervals.push_back(iv);
  }
  t.xmax = cursor + uniform_real(rng, 0.0, 0.2);
  if (t.xmax <= t.xmin) t.xmax = t.xmin + 0.1;
  return t;
}

bool tiers_equal(const PhonemeTier& a, const PhonemeTier& b) {
  if (a.name != b.name || a.xmin != b.xmin || a.xmax != b.xmax) return false;
  if (a.intervals.size() != b.intervals.size()) return false;
  for (size_t i = 0; i < a.intervals.size(); ++i) {
    const auto& x = a.intervals[i];
    const auto& y = b.intervals[i];
    if (x.xmin != y.xmin || x.xmax != y.xmax || x.label != y.label) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("hand-written textgrid parses to normalized labels") {
  testutil::TmpDir tmp;
  const auto path = tmp / "hand.TextGrid";
  write_text(path, kHandTextGrid);

  const auto tiers = align::parse_textgrid(path);
  REQUIRE(tiers.size() == 1);
  const auto& t = tiers[0];
  CHECK(t.name == "phones");
  REQUIRE(t.intervals.size() == 3);
  CHECK(t.intervals[0].label == "sil");
  CHECK(t.intervals[1].label == "HH");
  CHECK(t.intervals[2].label == "AH");  // stress digit stripped
  CHECK(t.intervals[0].xmin == 0.0);
  CHECK(t.intervals[2].xmax == 0.40);
}

TEST_CASE("phoneme normalization") {
  CHECK(align::normalize_phoneme("AH0") == "AH");
  CHECK(align::normalize_phoneme("ah1") == "AH");
  CHECK(align::normalize_phoneme("iy2") == "IY");
  CHECK(align::normalize_phoneme("hh") == "HH");
  CHECK(align::normalize_phoneme("") == "sil");
  CHECK(align::normalize_phoneme("sp") == "sil");
  CHECK(align::normalize_phoneme("spn") == "sil");
  CHECK(align::normalize_phoneme("SIL") == "sil");
}

TEST_CASE("write then parse is the identity on valid tiers") {
  testutil::TmpDir tmp;
  Rng rng(31);
  for (int iter = 0; iter < 700; ++iter) {
    std::vector<PhonemeTier> tiers;
    const int k = 1 + static_cast<int>(rng() % 3);
    for (int i = 0; i < k; ++i) tiers.push_back(random_tier(rng));
    const auto path = tmp / ("rt" + std::to_string(iter) + ".TextGrid");
    align::write_textgrid(tiers, path);
    const auto back = align::parse_textgrid(path);
    REQUIRE(back.size() == tiers.size());
    for (size_t i = 0; i < tiers.size(); ++i) CHECK(tiers_equal(tiers[i], back[i]));
  }
}

TEST_CASE("quotes in tier names survive the escape round trip") {
  testutil::TmpDir tmp;
  PhonemeTier t;
  t.name = "say \"hi\" twice";
  t.xmin = 0.0;
  t.xmax = 1.0;
  t.intervals = {{0.0, 1.0, "AA"}};
  const auto path = tmp / "quoted.TextGrid";
  align::write_textgrid({t}, path);
  const auto back = align::parse_textgrid(path);
  REQUIRE(back.size() == 1);
  CHECK(back[0].name == t.name);
}

TEST_CASE("empty tier list writes a valid empty textgrid") {
  testutil::TmpDir tmp;
  const auto path = tmp / "empty.TextGrid";
  align::write_textgrid({}, path);
  CHECK(align::parse_textgrid(path).empty());
}

TEST_CASE("tier with zero intervals parses to an empty list") {
  testutil::TmpDir tmp;
  PhonemeTier t;
  t.name = "phones";
  t.xmin = 0.0;
  t.xmax = 1.0;
  const auto path = tmp / "zero.TextGrid";
  align::write_textgrid({t}, path);
  const auto back = align::parse_textgrid(path);
  REQUIRE(back.size() == 1);
  CHECK(back[0].intervals.empty());
}

TEST_CASE("point tiers are skipped with a warning") {
  testutil::TmpDir tmp;
  const auto path = tmp / "points.TextGrid";
  write_text(path, R"(File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0
xmax = 1
tiers? <exists>
size = 2
item []:
    item [1]:
        class = "TextTier"
        name = "events"
        xmin = 0
        xmax = 1
        points: size = 1
        points [1]:
            number = 0.5
            mark = "beep"
    item [2]:
        class = "IntervalTier"
        name = "phones"
        xmin = 0
        xmax = 1
        intervals: size = 1
        intervals [1]:
            xmin = 0
            xmax = 1
            text = "AA"
)");
  std::vector<std::string> warnings;
  const auto tiers = align::parse_textgrid(path, &warnings);
  REQUIRE(tiers.size() == 1);
  CHECK(tiers[0].name == "phones");
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("events") != std::string::npos);
}

TEST_CASE("malformed textgrid fails with a parse error naming the line") {
  testutil::TmpDir tmp;
  const auto path = tmp / "bad.TextGrid";
  write_text(path, "File type = \"ooTextFile\"\nObject class = \"TextGrid\"\n\nxmin = oops\n");
  try {
    align::parse_textgrid(path);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Parse);
    CHECK(std::string(e.what()).find(":4") != std::string::npos);
  }
}

TEST_CASE("short-form textgrid is rejected") {
  testutil::TmpDir tmp;
  const auto path = tmp / "short.TextGrid";
  write_text(path, "File type = \"ooTextFile\"\nObject class = \"TextGrid\"\n\n0\n0.4\n<exists>\n1\n");
  CHECK_THROWS_AS(align::parse_textgrid(path), Error);
}

TEST_CASE("interval with xmax below xmin is a validation error") {
  testutil::TmpDir tmp;
  const auto path = tmp / "inverted.TextGrid";
  std::string body = kHandTextGrid;
  const auto pos = body.find("xmax = 0.25");
  REQUIRE(pos != std::string::npos);
  body.replace(pos, 11, "xmax = 0.05");
  write_text(path, body);
  try {
    align::parse_textgrid(path);
    FAIL("expected validation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Validation);
  }
}

TEST_CASE("writing non-monotone intervals is a validation error") {
  testutil::TmpDir tmp;
  PhonemeTier t;
  t.name = "phones";
  t.xmin = 0.0;
  t.xmax = 1.0;
  t.intervals = {{0.4, 0.8, "AA"}, {0.0, 0.3, "IY"}};
  CHECK_THROWS_AS(align::write_textgrid({t}, tmp / "oops.TextGrid"), Error);

  t.intervals = {{0.0, 0.5, "AA"}, {0.4, 0.8, "IY"}};  // overlap
  CHECK_THROWS_AS(align::write_textgrid({t}, tmp / "oops2.TextGrid"), Error);
}

TEST_CASE("standard viseme map is total and surjective") {
  const auto m = align::VisemeMap::standard();
  const auto& inv = align::arpabet_inventory();
  CHECK(inv.size() == 40);  // 39 phonemes + sil
  CHECK(inv[0] == "sil");

  std::set<int> hit;
  for (const auto& p : inv) {
    const int v = m.viseme_of(p);
    CHECK(v >= 0);
    CHECK(v < align::kNumVisemes);
    hit.insert(v);
  }
  CHECK(static_cast<int>(hit.size()) == align::kNumVisemes);
}

TEST_CASE("known viseme groupings") {
  const auto m = align::VisemeMap::standard();
  CHECK(m.viseme_of("sil") == 0);
  CHECK(m.viseme_of("P") == 1);
  CHECK(m.viseme_of("B") == 1);
  CHECK(m.viseme_of("M") == 1);
  CHECK(m.viseme_of("ZH") == m.viseme_of("SH"));
  CHECK(m.viseme_of("F") == m.viseme_of("V"));
  CHECK(m.viseme_of("P") != m.viseme_of("F"));
  CHECK(m.class_name(1) == "P/B/M");
}

TEST_CASE("mapping is case and stress insensitive") {
  const auto m = align::VisemeMap::standard();
  CHECK(m.viseme_of("ah1") == m.viseme_of("AH"));
  CHECK(m.viseme_of("iy0") == m.viseme_of("IY"));
  CHECK(m.viseme_of("") == 0);
  CHECK(m.viseme_of("sp") == 0);
}

TEST_CASE("unknown phoneme errors name the label") {
  const auto m = align::VisemeMap::standard();
  CHECK(!m.try_viseme_of("XX").has_value());
  try {
    m.viseme_of("XX");
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Validation);
    CHECK(std::string(e.what()).find("XX") != std::string::npos);
  }
}

TEST_CASE("tier_to_viseme_intervals maps boundaries through unchanged") {
  const auto m = align::VisemeMap::standard();
  PhonemeTier t;
  t.name = "phones";
  t.xmin = 0.0;
  t.xmax = 0.9;
  t.intervals = {{0.0, 0.3, "P"}, {0.3, 0.6, "IY"}, {0.6, 0.9, "sil"}};
  const auto out = align::tier_to_viseme_intervals(t, m);
  REQUIRE(out.size() == 3);
  CHECK(out[0].viseme == 1);
  CHECK(out[1].viseme == 12);
  CHECK(out[2].viseme == 0);
  CHECK(out[0].xmin == 0.0);
  CHECK(out[2].xmax == 0.9);

  PhonemeTier empty;
  empty.name = "phones";
  empty.xmax = 1.0;
  CHECK(align::tier_to_viseme_intervals(empty, m).empty());
}

TEST_CASE("adjacent same-class phonemes stay separate intervals") {
  const auto m = align::VisemeMap::standard();
  PhonemeTier t;
  t.name = "phones";
  t.xmin = 0.0;
  t.xmax = 0.6;
  t.intervals = {{0.0, 0.2, "P"}, {0.2, 0.4, "B"}, {0.4, 0.6, "M"}};  // all class 1
  const auto out = align::tier_to_viseme_intervals(t, m);
  REQUIRE(out.size() == 3);
  for (const auto& iv : out) CHECK(iv.viseme == 1);
}

TEST_CASE("tier with an unmappable label propagates the error") {
  const auto m = align::VisemeMap::standard();
  PhonemeTier t;
  t.name = "phones";
  t.xmin = 0.0;
  t.xmax = 0.2;
  t.intervals = {{0.0, 0.2, "QQ"}};
  try {
    align::tier_to_viseme_intervals(t, m);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("QQ") != std::string::npos);
  }
}

TEST_CASE("viseme map loads from json and is validated") {
  // A legal override: swap two whole groups relative to the standard table.
  nlohmann::json spec = nlohmann::json::object();
  const auto std_map = align::VisemeMap::standard();
  for (const auto& p : align::arpabet_inventory()) {
    int v = std_map.viseme_of(p);
    if (v == 1)
      v = 2;
    else if (v == 2)
      v = 1;
    spec[p] = v;
  }
  const auto m = align::VisemeMap::from_json(spec);
  CHECK(m.viseme_of("P") == 2);
  CHECK(m.viseme_of("F") == 1);
  CHECK(m.viseme_of("sil") == 0);

  // Missing phoneme: not total.
  nlohmann::json partial = spec;
  partial.erase("AA");
  CHECK_THROWS_AS(align::VisemeMap::from_json(partial), Error);

  // Class 14 never used: not surjective.
  nlohmann::json squashed = spec;
  for (auto& [k, v] : squashed.items())
    if (v.get<int>() == 14) squashed[k] = 13;
  CHECK_THROWS_AS(align::VisemeMap::from_json(squashed), Error);

  // Out-of-range class id.
  nlohmann::json wild = spec;
  wild["AA"] = 15;
  CHECK_THROWS_AS(align::VisemeMap::from_json(wild), Error);
}
