// BrainVision triple (.vhdr/.vmrk/.eeg) reader and writer.
//
// Supported variant: BINARY data, MULTIPLEXED orientation, INT_16 or
// IEEE_FLOAT_32 samples, little-endian. Values are scaled by the per-channel
// resolution to microvolts on load. Channel roles are not part of the format;
// they come from a `<base>.roles.json` sidecar, falling back to a fixed
// layout (all-but-last-ten EEG with the last of those as reference, final ten
// EMG) when the sidecar is absent.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "viseme/types.hpp"

namespace viseme::io {

enum class ChannelRole { EEG, EMG, Reference };

std::string role_name(ChannelRole r);
ChannelRole role_from_name(const std::string& s);

struct ChannelMeta {
  std::string name;
  ChannelRole role = ChannelRole::EEG;
  double resolution = 1.0;  // physical units per count, µV/count
  int index = 0;            // 0-based position in the recording
};

struct Recording {
  std::vector<ChannelMeta> channels;
  double fs = 0.0;  // Hz
  MatD data;        // channels x samples, µV

  Index n_channels() const { return data.rows(); }
  Index n_samples() const { return data.cols(); }
  double duration_s() const { return fs > 0 ? static_cast<double>(n_samples()) / fs : 0.0; }

  // Throws validation_error on any broken invariant (duplicate names, more
  // than one reference, non-finite samples, fs <= 0, meta/data mismatch).
  void validate() const;

  std::vector<int> channel_indices(bool include_eeg, bool include_emg, bool include_reference) const;
};

struct Marker {
  std::string type;
  std::string description;
  long position = 0;  // 0-based sample index (stored 1-based on disk)
  long length = 1;    // samples
};

struct MarkerList {
  std::vector<Marker> entries;
};

enum class BinaryFormat { Int16, Float32 };

struct BrainVisionData {
  Recording recording;
  MarkerList markers;
};

BrainVisionData read_brainvision(const std::filesystem::path& header_path);

// Writes <base>.vhdr/.vmrk/.eeg plus the <base>.roles.json sidecar (roles are
// lossy otherwise). `int16_resolution` is the quantization step used when
// writing Int16 (µV/count).
void write_brainvision(const Recording& rec, const MarkerList& markers,
                       const std::filesystem::path& base_path,
                       BinaryFormat format = BinaryFormat::Float32,
                       double int16_resolution = 0.1);

}  // namespace viseme::io
