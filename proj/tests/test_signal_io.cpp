#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "viseme/brainvision.hpp"
#include "viseme/errors.hpp"
#include "viseme/rng.hpp"
#include "viseme/text_io.hpp"

using namespace viseme;
namespace fs = std::filesystem;

namespace {

io::Recording make_recording(Index n_channels, Index n_samples, double fs, std::uint64_t seed) {
  io::Recording rec;
  rec.fs = fs;
  rec.data.resize(n_channels, n_samples);
  Rng rng(seed);
  for (Index c = 0; c < n_channels; ++c)
    for (Index s = 0; s < n_samples; ++s) rec.data(c, s) = uniform_real(rng, -100.0, 100.0);
  for (Index c = 0; c < n_channels; ++c) {
    io::ChannelMeta m;
    m.name = "Ch" + std::to_string(c + 1);
    m.role = io::ChannelRole::EEG;
    m.resolution = 1.0;
    m.index = static_cast<int>(c);
    rec.channels.push_back(m);
  }
  return rec;
}

}  // namespace

TEST_CASE("float32 eeg payload is exactly channels x samples x 4 bytes") {
  testutil::TmpDir dir;
  io::Recording rec = make_recording(138, 10000, 1000.0, 11);
  io::write_brainvision(rec, {}, dir / "big", io::BinaryFormat::Float32);
  CHECK(fs::file_size(dir / "big.eeg") == 138u * 10000u * 4u);
}

TEST_CASE("paper-style channel layout partitions 138 channels as 127+1+10") {
  testutil::TmpDir dir;
  io::Recording rec = make_recording(138, 40, 1000.0, 12);
  // Leave roles to the reader's layout heuristic: drop the sidecar.
  io::write_brainvision(rec, {}, dir / "rec", io::BinaryFormat::Float32);
  fs::remove(dir / "rec.roles.json");
  const auto back = io::read_brainvision(dir / "rec.vhdr");

  const auto eeg = back.recording.channel_indices(true, false, false);
  const auto emg = back.recording.channel_indices(false, true, false);
  const auto ref = back.recording.channel_indices(false, false, true);
  CHECK(eeg.size() == 127);
  CHECK(emg.size() == 10);
  CHECK(ref.size() == 1);
  CHECK(ref[0] == 127);
}

TEST_CASE("float32 round trip preserves samples, roles and markers exactly") {
  testutil::TmpDir dir;
  io::Recording rec = make_recording(6, 500, 1000.0, 13);
  rec.channels[2].role = io::ChannelRole::Reference;
  rec.channels[4].role = io::ChannelRole::EMG;
  rec.channels[5].role = io::ChannelRole::EMG;

  io::MarkerList markers;
  markers.entries.push_back({"New Segment", "", 0, 1});
  markers.entries.push_back({"Stimulus", "viseme=7", 123, 40});
  io::write_brainvision(rec, markers, dir / "rt", io::BinaryFormat::Float32);
  const auto back = io::read_brainvision(dir / "rt.vhdr");

  REQUIRE(back.recording.n_channels() == rec.n_channels());
  REQUIRE(back.recording.n_samples() == rec.n_samples());
  CHECK(back.recording.fs == rec.fs);
  // float32 storage: compare after the same narrowing.
  CHECK((back.recording.data.cast<float>().array() == rec.data.cast<float>().array()).all());
  for (Index c = 0; c < rec.n_channels(); ++c) {
    CHECK(back.recording.channels[c].name == rec.channels[c].name);
    CHECK(back.recording.channels[c].role == rec.channels[c].role);
  }
  REQUIRE(back.markers.entries.size() == 2);
  CHECK(back.markers.entries[1].type == "Stimulus");
  CHECK(back.markers.entries[1].description == "viseme=7");
  CHECK(back.markers.entries[1].position == 123);
  CHECK(back.markers.entries[1].length == 40);
}

TEST_CASE("int16 round trip stays within half a resolution step") {
  testutil::TmpDir dir;
  io::Recording rec = make_recording(3, 200, 500.0, 14);
  io::write_brainvision(rec, {}, dir / "q", io::BinaryFormat::Int16, 0.1);
  const auto back = io::read_brainvision(dir / "q.vhdr");
  const double max_err = (back.recording.data - rec.data).cwiseAbs().maxCoeff();
  CHECK(max_err <= 0.05 + 1e-12);
}

TEST_CASE("randomized brainvision round trips" * doctest::timeout(120)) {
  Rng rng(99);
  for (int iter = 0; iter < 400; ++iter) {
    testutil::TmpDir dir;
    const Index n_ch = 1 + static_cast<Index>(rng() % 6);
    const Index n_s = 2 + static_cast<Index>(rng() % 300);
    io::Recording rec = make_recording(n_ch, n_s, 250.0 + static_cast<double>(rng() % 4) * 250.0,
                                       1000 + static_cast<std::uint64_t>(iter));
    // Random role assignment with at most one reference.
    bool used_ref = false;
    for (Index c = 0; c < n_ch; ++c) {
      const unsigned r = static_cast<unsigned>(rng() % 4);
      if (r == 0 && !used_ref) {
        rec.channels[c].role = io::ChannelRole::Reference;
        used_ref = true;
      } else if (r == 1) {
        rec.channels[c].role = io::ChannelRole::EMG;
      }
    }
    io::MarkerList markers;
    const int n_mark = static_cast<int>(rng() % 5);
    for (int m = 0; m < n_mark; ++m)
      markers.entries.push_back({"Stimulus", "viseme=" + std::to_string(rng() % 15),
                                 static_cast<long>(rng() % static_cast<std::uint64_t>(n_s)), 1});

    const bool f32 = (rng() % 2) == 0;
    io::write_brainvision(rec, markers, dir / "r",
                          f32 ? io::BinaryFormat::Float32 : io::BinaryFormat::Int16, 0.05);
    const auto back = io::read_brainvision(dir / "r.vhdr");

    REQUIRE(back.recording.n_channels() == n_ch);
    REQUIRE(back.recording.n_samples() == n_s);
    REQUIRE(back.markers.entries.size() == markers.entries.size());
    for (size_t m = 0; m < markers.entries.size(); ++m) {
      CHECK(back.markers.entries[m].position == markers.entries[m].position);
      CHECK(back.markers.entries[m].description == markers.entries[m].description);
    }
    for (Index c = 0; c < n_ch; ++c)
      CHECK(back.recording.channels[c].role == rec.channels[c].role);
    if (f32) {
      CHECK((back.recording.data.cast<float>().array() == rec.data.cast<float>().array()).all());
    } else {
      CHECK((back.recording.data - rec.data).cwiseAbs().maxCoeff() <= 0.025 + 1e-12);
    }
  }
}

TEST_CASE("truncated data file is an integrity error") {
  testutil::TmpDir dir;
  io::Recording rec = make_recording(4, 100, 1000.0, 15);
  io::write_brainvision(rec, {}, dir / "t", io::BinaryFormat::Float32);
  const auto full = read_binary(dir / "t.eeg");
  std::ofstream((dir / "t.eeg").string(), std::ios::binary | std::ios::trunc)
      .write(reinterpret_cast<const char*>(full.data()), static_cast<long>(full.size() - 2));
  try {
    io::read_brainvision(dir / "t.vhdr");
    FAIL("expected an integrity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Integrity);
  }
}

TEST_CASE("vectorized orientation is rejected as unsupported") {
  testutil::TmpDir dir;
  io::Recording rec = make_recording(2, 50, 1000.0, 16);
  io::write_brainvision(rec, {}, dir / "v", io::BinaryFormat::Float32);
  std::string hdr = read_file(dir / "v.vhdr");
  const auto pos = hdr.find("DataOrientation=MULTIPLEXED");
  REQUIRE(pos != std::string::npos);
  hdr.replace(pos, std::string("DataOrientation=MULTIPLEXED").size(),
              "DataOrientation=VECTORIZED");
  write_file(dir / "v.vhdr", hdr);
  try {
    io::read_brainvision(dir / "v.vhdr");
    FAIL("expected an unsupported-format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Unsupported);
  }
}

TEST_CASE("declared but missing marker file is an io error") {
  testutil::TmpDir dir;
  io::Recording rec = make_recording(2, 50, 1000.0, 17);
  io::write_brainvision(rec, {}, dir / "m", io::BinaryFormat::Float32);
  fs::remove(dir / "m.vmrk");
  try {
    io::read_brainvision(dir / "m.vhdr");
    FAIL("expected an io error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Io);
  }
}

TEST_CASE("roles sidecar must cover every channel") {
  testutil::TmpDir dir;
  io::Recording rec = make_recording(3, 50, 1000.0, 18);
  io::write_brainvision(rec, {}, dir / "s", io::BinaryFormat::Float32);
  write_file(dir / "s.roles.json", "{\"Ch1\": \"EEG\"}\n");
  try {
    io::read_brainvision(dir / "s.vhdr");
    FAIL("expected a validation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Validation);
  }
}

TEST_CASE("recording validation rejects duplicate names and extra references") {
  io::Recording rec = make_recording(3, 20, 1000.0, 19);
  rec.channels[1].name = rec.channels[0].name;
  CHECK_THROWS_AS(rec.validate(), Error);

  io::Recording rec2 = make_recording(3, 20, 1000.0, 20);
  rec2.channels[0].role = io::ChannelRole::Reference;
  rec2.channels[1].role = io::ChannelRole::Reference;
  CHECK_THROWS_AS(rec2.validate(), Error);
}
