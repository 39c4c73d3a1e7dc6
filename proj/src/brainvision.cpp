#include "viseme/brainvision.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <set>
#include <sstream>

#include "nlohmann/json.hpp"
#include "viseme/errors.hpp"
#include "viseme/text_io.hpp"

namespace viseme::io {
namespace {

using nlohmann::json;

constexpr const char* kHeaderBanner = "Brain Vision Data Exchange Header File";
constexpr const char* kMarkerBanner = "Brain Vision Data Exchange Marker File";

// BrainVision escapes commas inside values as "\1".
std::string escape_commas(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == ',') out += "\\1";
    else out += c;
  }
  return out;
}

std::string unescape_commas(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size() && s[i + 1] == '1') {
      out += ',';
      ++i;
    } else {
      out += s[i];
    }
  }
  return out;
}

// Splits on unescaped commas.
std::vector<std::string> split_fields(const std::string& s) {
  std::vector<std::string> fields;
  std::string cur;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size() && s[i + 1] == '1') {
      cur += "\\1";
      ++i;
    } else if (s[i] == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += s[i];
    }
  }
  fields.push_back(cur);
  return fields;
}

struct IniFile {
  // section -> ordered key/value pairs; keys may repeat (Ch1, Ch2, ...).
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> sections;

  const std::vector<std::pair<std::string, std::string>>* find(const std::string& name) const {
    for (const auto& [sec, kvs] : sections)
      if (sec == name) return &kvs;
    return nullptr;
  }
};

std::string value_or(const std::vector<std::pair<std::string, std::string>>& kvs,
                     const std::string& key, const std::string& fallback) {
  for (const auto& [k, v] : kvs)
    if (k == key) return v;
  return fallback;
}

IniFile parse_ini(const std::filesystem::path& path, const char* expected_banner) {
  std::string raw = read_file(path);
  if (!is_valid_utf8(raw)) raw = latin1_to_utf8(raw);
  IniFile ini;
  auto lines = split_lines(raw);
  std::string current_section;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    std::string line = trim(lines[li]);
    long lineno = static_cast<long>(li) + 1;
    if (line.empty() || line[0] == ';') continue;
    if (line[0] == '[') {
      auto close = line.find(']');
      if (close == std::string::npos)
        throw parse_error(path.string(), lineno, "unterminated section header");
      std::string rest = trim(line.substr(close + 1));
      if (!rest.empty() && rest[0] != ';')
        throw parse_error(path.string(), lineno, "trailing content after section header");
      ini.sections.push_back({line.substr(1, close - 1), {}});
      current_section = ini.sections.back().first;
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      // The banner line is the only bare line allowed, and only before any section.
      if (current_section.empty() && line.rfind(expected_banner, 0) == 0) continue;
      throw parse_error(path.string(), lineno, "expected `key=value`, got: " + line);
    }
    if (current_section.empty())
      throw parse_error(path.string(), lineno, "key/value pair outside any section");
    ini.sections.back().second.push_back({trim(line.substr(0, eq)), trim(line.substr(eq + 1))});
  }
  return ini;
}

double parse_number(const std::string& s, const std::filesystem::path& file, const std::string& what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw Error(ErrKind::Parse, file.string() + ": cannot parse " + what + " from '" + s + "'");
  }
}

std::vector<ChannelRole> default_roles(Index n) {
  // Paper-style layout: all but the final ten channels are EEG, the last of
  // those is the reference, and the final ten are EMG. Small recordings
  // without a sidecar are treated as all-EEG.
  std::vector<ChannelRole> roles(static_cast<std::size_t>(n), ChannelRole::EEG);
  if (n > 10) {
    roles[static_cast<std::size_t>(n) - 11] = ChannelRole::Reference;
    for (Index i = n - 10; i < n; ++i) roles[static_cast<std::size_t>(i)] = ChannelRole::EMG;
  }
  return roles;
}

void apply_roles_sidecar(const std::filesystem::path& sidecar, Recording& rec) {
  json j;
  try {
    j = json::parse(read_file(sidecar));
  } catch (const json::exception& e) {
    throw Error(ErrKind::Parse, sidecar.string() + ": " + e.what());
  }
  if (!j.is_object()) throw validation_error(sidecar.string() + ": expected a name->role object");
  std::map<std::string, std::string> by_name;
  for (auto& [k, v] : j.items()) {
    if (!v.is_string()) throw validation_error(sidecar.string() + ": role for '" + k + "' must be a string");
    by_name[k] = v.get<std::string>();
  }
  for (auto& ch : rec.channels) {
    auto it = by_name.find(ch.name);
    if (it == by_name.end())
      throw validation_error(sidecar.string() + ": no role for channel '" + ch.name + "'");
    ch.role = role_from_name(it->second);
  }
}

}  // namespace

std::string role_name(ChannelRole r) {
  switch (r) {
    case ChannelRole::EEG: return "EEG";
    case ChannelRole::EMG: return "EMG";
    case ChannelRole::Reference: return "REFERENCE";
  }
  return "EEG";
}

ChannelRole role_from_name(const std::string& s) {
  if (s == "EEG") return ChannelRole::EEG;
  if (s == "EMG") return ChannelRole::EMG;
  if (s == "REFERENCE") return ChannelRole::Reference;
  throw validation_error("unknown channel role '" + s + "' (expected EEG, EMG or REFERENCE)");
}

void Recording::validate() const {
  if (fs <= 0.0) throw validation_error("recording sampling rate must be positive");
  if (static_cast<Index>(channels.size()) != data.rows())
    throw validation_error("channel metadata count does not match data rows");
  if (channels.empty()) throw validation_error("recording has no channels");
  std::set<std::string> names;
  int n_ref = 0;
  for (const auto& ch : channels) {
    if (!names.insert(ch.name).second)
      throw validation_error("duplicate channel name '" + ch.name + "'");
    if (ch.role == ChannelRole::Reference) ++n_ref;
    if (ch.index < 0 || ch.index >= static_cast<int>(channels.size()))
      throw validation_error("channel index out of range for '" + ch.name + "'");
  }
  if (n_ref > 1) throw validation_error("at most one reference channel is permitted");
  if (!data.allFinite()) throw validation_error("recording contains non-finite samples");
}

std::vector<int> Recording::channel_indices(bool include_eeg, bool include_emg,
                                            bool include_reference) const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    switch (channels[i].role) {
      case ChannelRole::EEG: if (include_eeg) idx.push_back(static_cast<int>(i)); break;
      case ChannelRole::EMG: if (include_emg) idx.push_back(static_cast<int>(i)); break;
      case ChannelRole::Reference: if (include_reference) idx.push_back(static_cast<int>(i)); break;
    }
  }
  return idx;
}

BrainVisionData read_brainvision(const std::filesystem::path& header_path) {
  if (!std::filesystem::exists(header_path))
    throw io_error("header file does not exist: " + header_path.string());
  IniFile hdr = parse_ini(header_path, kHeaderBanner);

  const auto* common = hdr.find("Common Infos");
  if (!common) throw Error(ErrKind::Parse, header_path.string() + ": missing [Common Infos] section");
  const auto* binary = hdr.find("Binary Infos");
  if (!binary) throw Error(ErrKind::Parse, header_path.string() + ": missing [Binary Infos] section");
  const auto* chan_infos = hdr.find("Channel Infos");
  if (!chan_infos) throw Error(ErrKind::Parse, header_path.string() + ": missing [Channel Infos] section");

  std::string data_format = value_or(*common, "DataFormat", "BINARY");
  if (data_format != "BINARY")
    throw unsupported_error("unsupported DataFormat '" + data_format + "' (only BINARY)");
  std::string orientation = value_or(*common, "DataOrientation", "MULTIPLEXED");
  if (orientation == "VECTORIZED")
    throw unsupported_error("VECTORIZED data orientation is not supported (multiplexed only)");
  if (orientation != "MULTIPLEXED")
    throw unsupported_error("unsupported DataOrientation '" + orientation + "'");

  std::string fmt_name = value_or(*binary, "BinaryFormat", "");
  BinaryFormat fmt;
  if (fmt_name == "INT_16") fmt = BinaryFormat::Int16;
  else if (fmt_name == "IEEE_FLOAT_32") fmt = BinaryFormat::Float32;
  else throw unsupported_error("unsupported BinaryFormat '" + fmt_name + "' (INT_16 or IEEE_FLOAT_32)");

  std::string n_channels_str = value_or(*common, "NumberOfChannels", "");
  if (n_channels_str.empty())
    throw Error(ErrKind::Parse, header_path.string() + ": missing NumberOfChannels");
  double n_channels_d = parse_number(n_channels_str, header_path, "NumberOfChannels");
  auto n_channels = static_cast<Index>(n_channels_d);
  if (n_channels <= 0 || n_channels_d != static_cast<double>(n_channels))
    throw validation_error(header_path.string() + ": NumberOfChannels must be a positive integer");

  std::string si_str = value_or(*common, "SamplingInterval", "");
  if (si_str.empty()) throw Error(ErrKind::Parse, header_path.string() + ": missing SamplingInterval");
  double sampling_interval_us = parse_number(si_str, header_path, "SamplingInterval");
  if (sampling_interval_us <= 0)
    throw validation_error(header_path.string() + ": SamplingInterval must be positive");

  Recording rec;
  rec.fs = 1e6 / sampling_interval_us;

  // Channel metadata: Ch<i>=Name,Reference,Resolution[,Unit]
  rec.channels.reserve(static_cast<std::size_t>(n_channels));
  for (const auto& [key, value] : *chan_infos) {
    if (key.rfind("Ch", 0) != 0) continue;
    auto fields = split_fields(value);
    ChannelMeta meta;
    meta.name = unescape_commas(fields.empty() ? "" : fields[0]);
    meta.index = static_cast<int>(rec.channels.size());
    if (fields.size() >= 3 && !trim(fields[2]).empty())
      meta.resolution = parse_number(trim(fields[2]), header_path, "resolution of " + key);
    if (fields.size() >= 4) {
      std::string unit = trim(fields[3]);
      if (!unit.empty() && unit != "\xC2\xB5V" && unit != "uV" && unit != "\xB5V")
        throw unsupported_error(header_path.string() + ": unsupported unit '" + unit + "' for " + key);
    }
    if (meta.name.empty())
      throw validation_error(header_path.string() + ": empty channel name for " + key);
    rec.channels.push_back(std::move(meta));
  }
  if (static_cast<Index>(rec.channels.size()) != n_channels)
    throw integrity_error(header_path.string() + ": header declares " + std::to_string(n_channels) +
                          " channels but lists " + std::to_string(rec.channels.size()) +
                          " in [Channel Infos]");

  std::string data_file = value_or(*common, "DataFile", "");
  if (data_file.empty()) throw Error(ErrKind::Parse, header_path.string() + ": missing DataFile");
  std::filesystem::path eeg_path = header_path.parent_path() / data_file;
  if (!std::filesystem::exists(eeg_path))
    throw io_error("data file does not exist: " + eeg_path.string());

  auto bytes = read_binary(eeg_path);
  std::size_t sample_bytes = (fmt == BinaryFormat::Int16) ? 2 : 4;
  std::size_t frame_bytes = sample_bytes * static_cast<std::size_t>(n_channels);
  if (frame_bytes == 0 || bytes.size() % frame_bytes != 0)
    throw integrity_error(eeg_path.string() + ": size " + std::to_string(bytes.size()) +
                          " bytes is not a whole number of " + std::to_string(n_channels) +
                          "-channel frames");
  auto n_samples = static_cast<Index>(bytes.size() / frame_bytes);

  rec.data.resize(n_channels, n_samples);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (fmt == BinaryFormat::Int16) {
    for (Index t = 0; t < n_samples; ++t) {
      for (Index c = 0; c < n_channels; ++c) {
        auto lo = static_cast<std::uint16_t>(p[0]);
        auto hi = static_cast<std::uint16_t>(p[1]);
        auto raw = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
        rec.data(c, t) = static_cast<double>(raw) * rec.channels[static_cast<std::size_t>(c)].resolution;
        p += 2;
      }
    }
  } else {
    for (Index t = 0; t < n_samples; ++t) {
      for (Index c = 0; c < n_channels; ++c) {
        std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                          (static_cast<std::uint32_t>(p[2]) << 16) |
                          (static_cast<std::uint32_t>(p[3]) << 24);
        float f;
        std::memcpy(&f, &u, 4);
        rec.data(c, t) = static_cast<double>(f) * rec.channels[static_cast<std::size_t>(c)].resolution;
        p += 4;
      }
    }
  }
  if (!rec.data.allFinite())
    throw integrity_error(eeg_path.string() + ": data contains non-finite samples");

  // Roles: sidecar wins, fixed layout otherwise.
  std::filesystem::path sidecar = header_path;
  sidecar.replace_extension("");
  sidecar += ".roles.json";
  if (std::filesystem::exists(sidecar)) {
    apply_roles_sidecar(sidecar, rec);
  } else {
    auto roles = default_roles(n_channels);
    for (std::size_t i = 0; i < rec.channels.size(); ++i) rec.channels[i].role = roles[i];
  }

  rec.validate();

  // Markers.
  BrainVisionData out;
  std::string marker_file = value_or(*common, "MarkerFile", "");
  if (!marker_file.empty()) {
    std::filesystem::path vmrk_path = header_path.parent_path() / marker_file;
    if (!std::filesystem::exists(vmrk_path))
      throw io_error("marker file does not exist: " + vmrk_path.string());
    IniFile mrk = parse_ini(vmrk_path, kMarkerBanner);
    if (const auto* infos = mrk.find("Marker Infos")) {
      long prev_pos = -1;
      for (const auto& [key, value] : *infos) {
        if (key.rfind("Mk", 0) != 0) continue;
        auto fields = split_fields(value);
        if (fields.size() < 4)
          throw Error(ErrKind::Parse, vmrk_path.string() + ": marker " + key +
                                          " needs type,description,position,length");
        Marker m;
        m.type = unescape_commas(fields[0]);
        m.description = unescape_commas(fields[1]);
        m.position = static_cast<long>(parse_number(fields[2], vmrk_path, "position of " + key)) - 1;
        m.length = static_cast<long>(parse_number(fields[3], vmrk_path, "length of " + key));
        if (m.position < 0 || m.position >= static_cast<long>(n_samples))
          throw validation_error(vmrk_path.string() + ": marker " + key + " position out of range");
        if (m.position < prev_pos)
          throw validation_error(vmrk_path.string() + ": marker positions must be non-decreasing");
        prev_pos = m.position;
        out.markers.entries.push_back(std::move(m));
      }
    }
  }

  out.recording = std::move(rec);
  return out;
}

void write_brainvision(const Recording& rec, const MarkerList& markers,
                       const std::filesystem::path& base_path, BinaryFormat format,
                       double int16_resolution) {
  rec.validate();
  if (int16_resolution <= 0) throw config_error("int16_resolution must be positive");
  long prev_pos = -1;
  for (const auto& m : markers.entries) {
    if (m.position < 0 || m.position >= rec.n_samples())
      throw validation_error("marker position " + std::to_string(m.position) + " out of range");
    if (m.position < prev_pos) throw validation_error("marker positions must be non-decreasing");
    prev_pos = m.position;
  }

  std::filesystem::path dir = base_path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::string stem = base_path.filename().string();
  std::filesystem::path vhdr = base_path; vhdr += ".vhdr";
  std::filesystem::path vmrk = base_path; vmrk += ".vmrk";
  std::filesystem::path eeg = base_path;  eeg += ".eeg";
  std::filesystem::path roles = base_path; roles += ".roles.json";

  const Index n_channels = rec.n_channels();
  const Index n_samples = rec.n_samples();

  std::ostringstream h;
  h << kHeaderBanner << " Version 1.0\n";
  h << "; generated by viseme-decode\n\n";
  h << "[Common Infos]\n";
  h << "Codepage=UTF-8\n";
  h << "DataFile=" << stem << ".eeg\n";
  h << "MarkerFile=" << stem << ".vmrk\n";
  h << "DataFormat=BINARY\n";
  h << "DataOrientation=MULTIPLEXED\n";
  h << "NumberOfChannels=" << n_channels << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", 1e6 / rec.fs);
  h << "SamplingInterval=" << buf << "\n\n";
  h << "[Binary Infos]\n";
  h << "BinaryFormat=" << (format == BinaryFormat::Int16 ? "INT_16" : "IEEE_FLOAT_32") << "\n\n";
  h << "[Channel Infos]\n";
  for (Index c = 0; c < n_channels; ++c) {
    double res = (format == BinaryFormat::Int16) ? int16_resolution : 1.0;
    std::snprintf(buf, sizeof buf, "%.17g", res);
    h << "Ch" << (c + 1) << "=" << escape_commas(rec.channels[static_cast<std::size_t>(c)].name)
      << ",," << buf << ",\xC2\xB5V\n";
  }
  write_file(vhdr, h.str());

  std::ostringstream mk;
  mk << kMarkerBanner << ", Version 1.0\n\n";
  mk << "[Common Infos]\n";
  mk << "Codepage=UTF-8\n";
  mk << "DataFile=" << stem << ".eeg\n\n";
  mk << "[Marker Infos]\n";
  for (std::size_t i = 0; i < markers.entries.size(); ++i) {
    const Marker& m = markers.entries[i];
    mk << "Mk" << (i + 1) << "=" << escape_commas(m.type) << "," << escape_commas(m.description)
       << "," << (m.position + 1) << "," << m.length << ",0\n";
  }
  write_file(vmrk, mk.str());

  std::vector<unsigned char> bytes;
  if (format == BinaryFormat::Int16) {
    bytes.resize(static_cast<std::size_t>(n_channels) * static_cast<std::size_t>(n_samples) * 2);
    unsigned char* p = bytes.data();
    for (Index t = 0; t < n_samples; ++t) {
      for (Index c = 0; c < n_channels; ++c) {
        double scaled = rec.data(c, t) / int16_resolution;
        double clamped = std::clamp(std::round(scaled), -32768.0, 32767.0);
        auto raw = static_cast<std::int16_t>(clamped);
        auto u = static_cast<std::uint16_t>(raw);
        *p++ = static_cast<unsigned char>(u & 0xFF);
        *p++ = static_cast<unsigned char>(u >> 8);
      }
    }
  } else {
    bytes.resize(static_cast<std::size_t>(n_channels) * static_cast<std::size_t>(n_samples) * 4);
    unsigned char* p = bytes.data();
    for (Index t = 0; t < n_samples; ++t) {
      for (Index c = 0; c < n_channels; ++c) {
        auto f = static_cast<float>(rec.data(c, t));
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        *p++ = static_cast<unsigned char>(u & 0xFF);
        *p++ = static_cast<unsigned char>((u >> 8) & 0xFF);
        *p++ = static_cast<unsigned char>((u >> 16) & 0xFF);
        *p++ = static_cast<unsigned char>((u >> 24) & 0xFF);
      }
    }
  }
  write_binary(eeg, bytes.data(), bytes.size());

  nlohmann::ordered_json j;
  for (const auto& ch : rec.channels) j[ch.name] = role_name(ch.role);
  write_file(roles, j.dump(2) + "\n");
}

}  // namespace viseme::io
