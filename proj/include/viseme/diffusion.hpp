// Forward diffusion bookkeeping. The beta schedule is linear in the step
// index; cumulative products are kept in double regardless of the network
// scalar so x_t statistics stay exact for small T.
#pragma once

#include <cmath>
#include <vector>

#include "viseme/errors.hpp"
#include "viseme/types.hpp"

namespace viseme::decode {

struct DiffusionSchedule {
  int T = 0;
  std::vector<double> beta;       // index t-1 holds beta_t, t in 1..T
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // running product of alpha

  double alpha_bar_at(int t) const {
    if (t < 1 || t > T) throw validation_error("diffusion step " + std::to_string(t) +
                                               " outside 1.." + std::to_string(T));
    return alpha_bar[static_cast<size_t>(t - 1)];
  }
};

inline DiffusionSchedule make_schedule(int T, double beta_lo, double beta_hi) {
  if (T < 1) throw validation_error("diffusion needs at least one step");
  if (!(beta_lo > 0.0) || !(beta_hi < 1.0) || !(beta_lo <= beta_hi))
    throw validation_error("betas must satisfy 0 < lo <= hi < 1");
  if (T >= 2 && !(beta_lo < beta_hi))
    throw validation_error("beta schedule must be strictly increasing for T >= 2");

  DiffusionSchedule s;
  s.T = T;
  s.beta.resize(static_cast<size_t>(T));
  s.alpha.resize(static_cast<size_t>(T));
  s.alpha_bar.resize(static_cast<size_t>(T));
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    const double b =
        T == 1 ? beta_lo : beta_lo + (beta_hi - beta_lo) * static_cast<double>(t) / (T - 1);
    s.beta[static_cast<size_t>(t)] = b;
    s.alpha[static_cast<size_t>(t)] = 1.0 - b;
    prod *= 1.0 - b;
    s.alpha_bar[static_cast<size_t>(t)] = prod;
  }
  return s;
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, elementwise over any shape.
template <class S>
Mat<S> forward_diffuse(const Mat<S>& x0, const Mat<S>& eps, int t, const DiffusionSchedule& s) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols())
    throw validation_error("diffusion noise shape does not match the signal");
  const double abar = s.alpha_bar_at(t);
  return (std::sqrt(abar) * x0.template cast<double>() +
          std::sqrt(1.0 - abar) * eps.template cast<double>())
      .template cast<S>();
}

}  // namespace viseme::decode
