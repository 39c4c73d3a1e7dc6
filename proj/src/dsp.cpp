#include "viseme/dsp.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include "viseme/errors.hpp"

namespace viseme::dsp {
namespace {

constexpr double kPi = std::numbers::pi;

// Direct form II transposed, section by section over the whole buffer.
// With steady_init each section starts in the steady state it would reach
// under a constant input equal to its first sample, which keeps start-up
// transients out of the padded region during zero-phase runs.
void run_cascade(const SosFilter& f, VecD& buf, bool steady_init) {
  const Index n = buf.size();
  for (const auto& sec : f.sections) {
    double s1 = 0.0, s2 = 0.0;
    if (steady_init && n > 0) {
      const double h1 = (sec.b0 + sec.b1 + sec.b2) / (1.0 + sec.a1 + sec.a2);
      s1 = (h1 - sec.b0) * buf[0];
      s2 = (sec.b2 - sec.a2 * h1) * buf[0];
    }
    for (Index i = 0; i < n; ++i) {
      const double xi = buf[i];
      const double yi = sec.b0 * xi + s1;
      s1 = sec.b1 * xi - sec.a1 * yi + s2;
      s2 = sec.b2 * xi - sec.a2 * yi;
      buf[i] = yi;
    }
  }
  buf *= f.gain;
}

}  // namespace

bool BiquadSection::is_stable() const {
  return a2 < 1.0 && std::abs(a1) < 1.0 + a2;
}

bool SosFilter::is_stable() const {
  for (const auto& s : sections)
    if (!s.is_stable()) return false;
  return true;
}

std::complex<double> SosFilter::response_at(double freq_hz, double fs) const {
  const std::complex<double> z1 = std::exp(std::complex<double>(0.0, -2.0 * kPi * freq_hz / fs));
  const std::complex<double> z2 = z1 * z1;
  std::complex<double> h = gain;
  for (const auto& s : sections)
    h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return h;
}

SosFilter design_butter_bandpass(int order, double lo_hz, double hi_hz, double fs) {
  if (!(fs > 0.0)) throw validation_error("sampling rate must be positive");
  if (order < 1 || order > 20)
    throw validation_error("bandpass order must be in 1..20, got " + std::to_string(order));
  if (!(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < fs / 2.0))
    throw validation_error("bandpass edges must satisfy 0 < lo < hi < fs/2, got lo=" +
                           std::to_string(lo_hz) + " hi=" + std::to_string(hi_hz) +
                           " fs=" + std::to_string(fs));

  const double c = 2.0 * fs;  // bilinear constant; prewarp maps f -> c*tan(pi*f/fs)
  const double wlo = c * std::tan(kPi * lo_hz / fs);
  const double whi = c * std::tan(kPi * hi_hz / fs);
  const double bw = whi - wlo;
  const double w0sq = wlo * whi;

  // Analog quadratics s^2 + a1*s + a0. Each prototype pole on the unit
  // circle maps to two bandpass poles; conjugate prototype pairs are
  // regrouped so every quadratic has real coefficients.
  std::vector<std::array<double, 2>> quads;
  for (int k = 0; k < order; ++k) {
    const double theta = kPi * (2.0 * k + order + 1.0) / (2.0 * order);
    const std::complex<double> p(std::cos(theta), std::sin(theta));
    if (p.imag() > 1e-12) {
      const std::complex<double> bp = bw * p;
      const std::complex<double> root = std::sqrt(bp * bp - 4.0 * w0sq);
      for (const std::complex<double>& s : {0.5 * (bp + root), 0.5 * (bp - root)})
        quads.push_back({-2.0 * s.real(), std::norm(s)});
    } else if (p.imag() > -1e-12) {
      quads.push_back({-bw * p.real(), w0sq});
    }
  }

  SosFilter f;
  f.sections.reserve(quads.size());
  for (const auto& [a1s, a0s] : quads) {
    const double d0 = c * c + a1s * c + a0s;
    BiquadSection sec;
    sec.b0 = 1.0;
    sec.b1 = 0.0;
    sec.b2 = -1.0;
    sec.a1 = (2.0 * a0s - 2.0 * c * c) / d0;
    sec.a2 = (c * c - a1s * c + a0s) / d0;
    f.sections.push_back(sec);
  }

  const double center_hz = fs / kPi * std::atan(std::sqrt(w0sq) / c);
  const double raw = std::abs(f.response_at(center_hz, fs));
  if (!std::isfinite(raw) || raw <= 0.0)
    throw validation_error("bandpass design degenerated at the given edges");
  f.gain = 1.0 / raw;
  if (!f.is_stable())
    throw validation_error("bandpass design produced an unstable section");
  return f;
}

SosFilter design_notch(double freq_hz, double q, double fs) {
  if (!(fs > 0.0)) throw validation_error("sampling rate must be positive");
  if (!(freq_hz > 0.0 && freq_hz < fs / 2.0))
    throw validation_error("notch frequency must lie in (0, fs/2), got " +
                           std::to_string(freq_hz) + " at fs=" + std::to_string(fs));
  if (!(q > 0.0)) throw validation_error("notch Q must be positive");

  const double w0 = 2.0 * kPi * freq_hz / fs;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double cw = std::cos(w0);
  const double a0 = 1.0 + alpha;

  BiquadSection sec;
  sec.b0 = 1.0 / a0;
  sec.b1 = -2.0 * cw / a0;
  sec.b2 = 1.0 / a0;
  sec.a1 = -2.0 * cw / a0;
  sec.a2 = (1.0 - alpha) / a0;
  return SosFilter{{sec}, 1.0};
}

SosFilter chain(const SosFilter& a, const SosFilter& b) {
  SosFilter out = a;
  out.sections.insert(out.sections.end(), b.sections.begin(), b.sections.end());
  out.gain *= b.gain;
  return out;
}

VecD filter_forward(const SosFilter& f, const VecD& x) {
  VecD y = x;
  run_cascade(f, y, /*steady_init=*/false);
  return y;
}

VecD filter_zero_phase(const SosFilter& f, const VecD& x) {
  const Index n = x.size();
  if (n == 0) return x;
  if (f.sections.empty()) return (f.gain * f.gain) * x;
  if (n < 2)
    throw validation_error("zero-phase filtering needs at least 2 samples");

  const Index pad = std::min<Index>(30 * static_cast<Index>(f.sections.size()), n - 1);
  VecD ext(n + 2 * pad);
  for (Index i = 0; i < pad; ++i) ext[i] = 2.0 * x[0] - x[pad - i];
  ext.segment(pad, n) = x;
  for (Index i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];

  run_cascade(f, ext, /*steady_init=*/true);
  ext.reverseInPlace();
  run_cascade(f, ext, /*steady_init=*/true);
  ext.reverseInPlace();
  return ext.segment(pad, n);
}

io::Recording preprocess_recording(const io::Recording& rec, const PreprocessParams& p) {
  rec.validate();
  SosFilter f = design_butter_bandpass(p.order, p.lo_hz, p.hi_hz, rec.fs);
  if (p.notch_base_hz > 0.0) {
    const double limit = std::min(p.hi_hz, rec.fs / 2.0);
    const int max_k = p.notch_harmonics ? static_cast<int>(limit / p.notch_base_hz) + 1 : 1;
    for (int k = 1; k <= max_k; ++k) {
      const double fk = k * p.notch_base_hz;
      if (fk >= limit) break;
      f = chain(f, design_notch(fk, p.notch_q, rec.fs));
    }
  }

  io::Recording out = rec;
  for (Index ch = 0; ch < rec.n_channels(); ++ch) {
    if (rec.channels[static_cast<size_t>(ch)].role == io::ChannelRole::Reference) continue;
    const VecD row = rec.data.row(ch).transpose();
    out.data.row(ch) = filter_zero_phase(f, row).transpose();
  }
  return out;
}

}  // namespace viseme::dsp
