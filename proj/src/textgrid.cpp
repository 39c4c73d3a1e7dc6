#include "viseme/textgrid.hpp"

#include <cctype>
#include <cstdio>
#include <sstream>

#include "viseme/errors.hpp"
#include "viseme/text_io.hpp"

namespace viseme::align {
namespace {

// Collapse whitespace runs so `intervals: size` and `intervals:  size` compare equal.
std::string canon(std::string_view s) {
  std::string out;
  bool pending_ws = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_ws = true;
      continue;
    }
    if (pending_ws && !out.empty()) out.push_back(' ');
    pending_ws = false;
    out.push_back(c);
  }
  return out;
}

struct Cursor {
  std::filesystem::path path;
  std::vector<std::string> lines;
  size_t idx = 0;  // index of the next raw line

  [[noreturn]] void fail(const std::string& msg, size_t line_no) const {
    throw parse_error(path.string(), static_cast<int>(line_no), msg);
  }

  // Peek the next non-blank line without consuming it. Returns empty view at EOF.
  std::string_view peek(size_t* line_no = nullptr) const {
    for (size_t probe = idx; probe < lines.size(); ++probe) {
      std::string_view t = trim(lines[probe]);
      if (!t.empty()) {
        if (line_no) *line_no = probe + 1;
        return t;
      }
    }
    return {};
  }

  std::string take(size_t* line_no = nullptr) {
    while (idx < lines.size()) {
      std::string t{trim(lines[idx])};
      ++idx;
      if (!t.empty()) {
        if (line_no) *line_no = idx;
        return t;
      }
    }
    fail("unexpected end of file", lines.size());
  }
};

struct KeyValue {
  std::string key;
  std::string value;  // raw text right of `=`, trimmed
  size_t line_no = 0;
};

KeyValue expect_kv(Cursor& cur, std::string_view want) {
  size_t ln = 0;
  std::string line = cur.take(&ln);
  size_t eq = line.find('=');
  if (eq == std::string::npos)
    cur.fail("expected `" + std::string(want) + " = ...`, got `" + line + "`", ln);
  KeyValue kv;
  kv.key = canon(std::string_view(line).substr(0, eq));
  kv.value = std::string{trim(std::string_view(line).substr(eq + 1))};
  kv.line_no = ln;
  if (kv.key != canon(want))
    cur.fail("expected key `" + std::string(want) + "`, got `" + kv.key + "`", ln);
  return kv;
}

double parse_number(const Cursor& cur, const KeyValue& kv) {
  try {
    size_t used = 0;
    double v = std::stod(kv.value, &used);
    if (!trim(std::string_view(kv.value).substr(used)).empty()) throw std::invalid_argument("trail");
    return v;
  } catch (const std::exception&) {
    cur.fail("invalid number `" + kv.value + "` for `" + kv.key + "`", kv.line_no);
  }
}

long parse_count(const Cursor& cur, const KeyValue& kv) {
  double v = parse_number(cur, kv);
  long n = static_cast<long>(v);
  if (v != static_cast<double>(n) || n < 0)
    cur.fail("`" + kv.key + "` must be a non-negative integer, got `" + kv.value + "`", kv.line_no);
  return n;
}

// Praat strings are double-quoted with embedded quotes doubled; they may span lines.
std::string parse_string(Cursor& cur, const KeyValue& kv) {
  if (kv.value.empty() || kv.value.front() != '"')
    cur.fail("expected a quoted string for `" + kv.key + "`", kv.line_no);
  std::string out;
  std::string chunk = kv.value;
  size_t line_no = kv.line_no;
  size_t i = 1;
  for (;;) {
    while (i < chunk.size()) {
      char c = chunk[i];
      if (c == '"') {
        if (i + 1 < chunk.size() && chunk[i + 1] == '"') {
          out.push_back('"');
          i += 2;
          continue;
        }
        if (!trim(std::string_view(chunk).substr(i + 1)).empty())
          cur.fail("unexpected text after closing quote", line_no);
        return out;
      }
      out.push_back(c);
      ++i;
    }
    if (cur.idx >= cur.lines.size()) cur.fail("unterminated string", line_no);
    out.push_back('\n');
    chunk = cur.lines[cur.idx];
    ++cur.idx;
    line_no = cur.idx;
    i = 0;
  }
}

// Accepts headers like `item [1]:` / `intervals [3]:`.
void expect_header(Cursor& cur, std::string_view word) {
  size_t ln = 0;
  std::string line = canon(cur.take(&ln));
  if (line.rfind(std::string(word) + " [", 0) != 0 || line.back() != ':')
    cur.fail("expected `" + std::string(word) + " [...]:`, got `" + line + "`", ln);
}

std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    out.push_back(c);
    if (c == '"') out.push_back('"');
  }
  out.push_back('"');
  return out;
}

}  // namespace

std::string normalize_phoneme(std::string_view raw) {
  std::string s{trim(raw)};
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  while (!s.empty() && s.back() >= '0' && s.back() <= '9') s.pop_back();
  if (s.empty() || s == "SIL" || s == "SP" || s == "SPN") return "sil";
  return s;
}

void PhonemeTier::validate() const {
  if (!(xmax >= xmin))
    throw validation_error("tier \"" + name + "\": xmax < xmin");
  for (size_t i = 0; i < intervals.size(); ++i) {
    const auto& iv = intervals[i];
    if (!(iv.xmax > iv.xmin))
      throw validation_error("tier \"" + name + "\": interval " + std::to_string(i + 1) +
                             " has non-positive duration");
    if (iv.xmin < xmin || iv.xmax > xmax)
      throw validation_error("tier \"" + name + "\": interval " + std::to_string(i + 1) +
                             " lies outside the tier span");
    if (i > 0 && intervals[i - 1].xmax > iv.xmin)
      throw validation_error("tier \"" + name + "\": intervals " + std::to_string(i) + " and " +
                             std::to_string(i + 1) + " overlap");
  }
}

std::vector<PhonemeTier> parse_textgrid(const std::filesystem::path& path,
                                        std::vector<std::string>* warnings) {
  Cursor cur{path, split_lines(read_file(path)), 0};

  size_t ln = 0;
  std::string l1 = cur.take(&ln);
  if (l1.find("ooTextFile") == std::string::npos)
    cur.fail("missing `File type = \"ooTextFile\"` header", ln);
  std::string l2 = cur.take(&ln);
  if (l2.find("\"TextGrid\"") == std::string::npos)
    cur.fail("object class is not TextGrid: `" + l2 + "`", ln);

  // Long form writes `key = value` lines; the short form writes bare values.
  {
    size_t pln = 0;
    std::string_view nxt = cur.peek(&pln);
    if (nxt.empty()) cur.fail("unexpected end of file", cur.lines.size());
    if (nxt.find('=') == std::string_view::npos)
      throw parse_error(path.string(), static_cast<int>(pln),
                        "short-form TextGrid is not supported; resave in long text format");
  }

  parse_number(cur, expect_kv(cur, "xmin"));
  parse_number(cur, expect_kv(cur, "xmax"));

  {
    size_t tln = 0;
    std::string tiers_line = canon(cur.take(&tln));
    if (tiers_line.rfind("tiers?", 0) != 0)
      cur.fail("expected `tiers? <exists>`, got `" + tiers_line + "`", tln);
    if (tiers_line.find("<absent>") != std::string::npos) return {};
  }

  long n_tiers = parse_count(cur, expect_kv(cur, "size"));
  if (canon(cur.peek()).rfind("item []", 0) == 0) cur.take();

  std::vector<PhonemeTier> tiers;
  for (long t = 0; t < n_tiers; ++t) {
    expect_header(cur, "item");
    KeyValue cls_kv = expect_kv(cur, "class");
    std::string cls = parse_string(cur, cls_kv);
    std::string name = parse_string(cur, expect_kv(cur, "name"));
    double tx0 = parse_number(cur, expect_kv(cur, "xmin"));
    double tx1 = parse_number(cur, expect_kv(cur, "xmax"));

    if (cls == "IntervalTier") {
      PhonemeTier tier;
      tier.name = name;
      tier.xmin = tx0;
      tier.xmax = tx1;
      long n = parse_count(cur, expect_kv(cur, "intervals: size"));
      tier.intervals.reserve(static_cast<size_t>(n));
      for (long i = 0; i < n; ++i) {
        expect_header(cur, "intervals");
        PhonemeInterval iv;
        iv.xmin = parse_number(cur, expect_kv(cur, "xmin"));
        iv.xmax = parse_number(cur, expect_kv(cur, "xmax"));
        iv.label = normalize_phoneme(parse_string(cur, expect_kv(cur, "text")));
        tier.intervals.push_back(std::move(iv));
      }
      tier.validate();
      tiers.push_back(std::move(tier));
    } else if (cls == "TextTier") {
      long n = parse_count(cur, expect_kv(cur, "points: size"));
      for (long i = 0; i < n; ++i) {
        expect_header(cur, "points");
        size_t pln = 0;
        std::string line = cur.take(&pln);
        size_t eq = line.find('=');
        if (eq == std::string::npos) cur.fail("expected `number = ...`", pln);
        KeyValue num{canon(std::string_view(line).substr(0, eq)),
                     std::string{trim(std::string_view(line).substr(eq + 1))}, pln};
        if (num.key != "number" && num.key != "time")
          cur.fail("expected point time, got `" + num.key + "`", pln);
        parse_number(cur, num);
        parse_string(cur, expect_kv(cur, "mark"));
      }
      if (warnings)
        warnings->push_back("skipped point tier \"" + name + "\" (" + std::to_string(n) +
                            " points)");
    } else {
      cur.fail("unsupported tier class `" + cls + "`", cls_kv.line_no);
    }
  }
  return tiers;
}

void write_textgrid(const std::vector<PhonemeTier>& tiers, const std::filesystem::path& path) {
  double gx0 = 0.0, gx1 = 0.0;
  for (size_t i = 0; i < tiers.size(); ++i) {
    tiers[i].validate();
    gx0 = (i == 0) ? tiers[i].xmin : std::min(gx0, tiers[i].xmin);
    gx1 = (i == 0) ? tiers[i].xmax : std::max(gx1, tiers[i].xmax);
  }

  std::ostringstream os;
  os << "File type = \"ooTextFile\"\n";
  os << "Object class = \"TextGrid\"\n\n";
  os << "xmin = " << fmt_num(gx0) << "\n";
  os << "xmax = " << fmt_num(gx1) << "\n";
  os << "tiers? <exists>\n";
  os << "size = " << tiers.size() << "\n";
  os << "item []:\n";
  for (size_t t = 0; t < tiers.size(); ++t) {
    const auto& tier = tiers[t];
    os << "    item [" << (t + 1) << "]:\n";
    os << "        class = \"IntervalTier\"\n";
    os << "        name = " << quote(tier.name) << "\n";
    os << "        xmin = " << fmt_num(tier.xmin) << "\n";
    os << "        xmax = " << fmt_num(tier.xmax) << "\n";
    os << "        intervals: size = " << tier.intervals.size() << "\n";
    for (size_t i = 0; i < tier.intervals.size(); ++i) {
      const auto& iv = tier.intervals[i];
      os << "        intervals [" << (i + 1) << "]:\n";
      os << "            xmin = " << fmt_num(iv.xmin) << "\n";
      os << "            xmax = " << fmt_num(iv.xmax) << "\n";
      os << "            text = " << quote(iv.label) << "\n";
    }
  }
  write_file(path, os.str());
}

}  // namespace viseme::align
