// IIR filtering for EEG/EMG cleanup: Butterworth bandpass designed from the
// analog prototype through the bilinear transform, cookbook notch biquads,
// and zero-phase (forward-backward) application. Coefficients live in
// second-order sections; a 10th-order bandpass in direct form is numerically
// unusable at these sample rates.
#pragma once

#include <complex>
#include <vector>

#include "viseme/brainvision.hpp"
#include "viseme/types.hpp"

namespace viseme::dsp {

struct BiquadSection {
  // H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;

  bool is_stable() const;  // both poles strictly inside the unit circle
};

struct SosFilter {
  std::vector<BiquadSection> sections;
  double gain = 1.0;  // applied once per pass

  std::complex<double> response_at(double freq_hz, double fs) const;
  bool is_stable() const;
};

// Edges must satisfy 0 < lo < hi < fs/2. The returned cascade has `order`
// sections (filter order 2*order), numerators pinned to (1, 0, -1) so the
// response is exactly zero at DC and Nyquist, and unit magnitude at the
// warped center frequency.
SosFilter design_butter_bandpass(int order, double lo_hz, double hi_hz, double fs);

SosFilter design_notch(double freq_hz, double q, double fs);

// Concatenates cascades; gains multiply.
SosFilter chain(const SosFilter& a, const SosFilter& b);

// Single pass, zero initial state.
VecD filter_forward(const SosFilter& f, const VecD& x);

// Forward-backward pass (zero net phase, squared magnitude). Edges are
// extended by odd reflection before filtering so transients decay inside
// the padding, and each pass starts from the step steady state.
VecD filter_zero_phase(const SosFilter& f, const VecD& x);

struct PreprocessParams {
  double lo_hz = 30.0;
  double hi_hz = 499.0;
  int order = 5;
  double notch_base_hz = 60.0;  // 0 disables line-noise notching
  double notch_q = 35.0;
  bool notch_harmonics = true;  // multiples of the base below min(hi, fs/2)
};

// Bandpass plus line-noise notches applied zero-phase to every EEG and EMG
// row. The reference row passes through untouched. Shape and metadata are
// preserved.
io::Recording preprocess_recording(const io::Recording& rec, const PreprocessParams& p);

}  // namespace viseme::dsp
