#pragma once

#include "hklab/spectral.hpp"

namespace hklab {

// sin(sqrt(lambda) t) / sqrt(lambda); equals t at lambda = 0, with a series
// branch below lambda * t^2 = 1e-8 so the value is continuous in lambda.
double sine_kernel(double lambda, double t);

// cos(sqrt(lambda) t), the time derivative of sine_kernel.
double cosine_kernel(double lambda, double t);

// Time profile of one source component on [0, infinity).
struct TimeProfile {
  enum class Kind { PiecewiseLinear, CosineBump };
  Kind kind = Kind::PiecewiseLinear;

  // PiecewiseLinear: nodal values on the uniform grid k * dt, zero outside
  // the covered range. The Duhamel convolution against these is exact.
  Eigen::VectorXd nodal;
  double dt = 0.0;

  // CosineBump: amplitude * cos^power(pi (t - center) / (2 width)) on
  // |t - center| < width, zero outside. power must be even and positive.
  double center = 0.0;
  double width = 0.0;
  int power = 4;
  double amplitude = 1.0;

  double value(double t) const;

  static TimeProfile piecewise_linear(Eigen::VectorXd nodal, double dt);
  static TimeProfile cosine_bump(double center, double width,
                                 double amplitude = 1.0, int power = 4);
};

// f(x, t) = sum over parts of profile_p(t) at vertex_p, zero elsewhere.
struct Source {
  struct Part {
    int vertex = 0;
    TimeProfile profile;
  };
  std::vector<Part> parts;
  bool empty() const { return parts.empty(); }
};

// Duhamel convolution integral_0^t profile(tau) * sine_kernel(lambda, t - tau) dtau
// and its time derivative (cosine kernel in place of the sine kernel).
// Closed forms for both profile kinds; no quadrature.
double duhamel_position(double lambda, const TimeProfile& profile, double t);
double duhamel_velocity(double lambda, const TimeProfile& profile, double t);

struct WaveProblem {
  Eigen::VectorXd psi0;  // initial displacement, per vertex
  Eigen::VectorXd psi1;  // initial velocity, per vertex
  Source f;
  double horizon = 1.0;
};

class WaveSolution {
 public:
  // part_weight is J x parts with entries m_v phi_j(v) for the source parts.
  WaveSolution(const SpectralData* spec, Eigen::VectorXd psi0_modal,
               Eigen::VectorXd psi1_modal, Source f, Eigen::MatrixXd part_weight,
               double horizon);

  Eigen::VectorXd modal_at(double t) const;
  Eigen::VectorXd modal_velocity_at(double t) const;
  Eigen::VectorXd field_at(double t) const;
  Eigen::VectorXd velocity_field_at(double t) const;

  // E(t) = sum_j u_j'(t)^2 + lambda_j u_j(t)^2.
  double energy(double t) const;

  double horizon() const { return horizon_; }
  const SpectralData& spectral() const { return *spec_; }

 private:
  const SpectralData* spec_;
  Eigen::VectorXd psi0_modal_, psi1_modal_;
  Eigen::MatrixXd part_weight_;  // J x parts, entries m_v phi_j(v)
  Source f_;
  double horizon_;
};

// Full-spectrum Galerkin solution. Requires the complete spectrum so no
// undeclared tail is dropped.
WaveSolution solve_wave(const SpectralData& spec, const DiscreteSpace& space,
                        const WaveProblem& problem);

// Wave coefficients u_j^f(t) computed from window data only: eigenvalues,
// eigenfunction values on V, and the measure on V. The source must be
// supported in the window.
Eigen::VectorXd source_to_coefficients(const RestrictedSpectrum& rs,
                                       const Source& f, double t);

// Velocity counterpart of source_to_coefficients.
Eigen::VectorXd source_to_velocity_coefficients(const RestrictedSpectrum& rs,
                                                const Source& f, double t);

struct ConeEnergyReport {
  double cone_energy = 0.0;      // max over the grid of energy inside the cone
  double total_energy = 0.0;
  double fraction = 0.0;
  double at_time = 0.0;
};

// Energy inside the shrinking cone {d(x, x0) < r - t} for a wave with data
// vanishing on B(x0, r) and source vanishing on the cone. The continuum
// limit of the fraction is zero; on a fixed graph it is positive and is
// reported for refinement studies.
ConeEnergyReport cone_energy_fraction(const DiscreteSpace& space,
                                      const WaveSolution& sol, int x0, double r,
                                      int time_samples = 64);

}  // namespace hklab
