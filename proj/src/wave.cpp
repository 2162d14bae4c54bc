#include "hklab/wave.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hklab {
namespace {

double sinc(double x) {
  if (x == 0.0) return 1.0;
  return std::sin(x) / x;
}

// g1(x) = (1 - cos x) / x^2, the value of int_0^s sin(w u)/w du scaled by s^2.
double g1(double x) {
  const double x2 = x * x;
  if (std::abs(x) < 0.5) {
    return 0.5 -
           x2 * (1.0 / 24.0 -
                 x2 * (1.0 / 720.0 -
                       x2 * (1.0 / 40320.0 -
                             x2 * (1.0 / 3628800.0 - x2 / 479001600.0))));
  }
  const double s = std::sin(0.5 * x);
  return 2.0 * s * s / x2;
}

// g2(x) = (sin x - x cos x) / x^3, for int_0^s u sin(w u)/w du = g2 * s^3.
double g2(double x) {
  const double x2 = x * x;
  if (std::abs(x) < 0.5) {
    return 1.0 / 3.0 -
           x2 * (1.0 / 30.0 -
                 x2 * (1.0 / 840.0 -
                       x2 * (1.0 / 45360.0 -
                             x2 * (1.0 / 3991680.0 - x2 / 518918400.0))));
  }
  return (std::sin(x) - x * std::cos(x)) / (x2 * x);
}

// g4(x) = (cos x - 1 + x sin x) / x^2, for int_0^s u cos(w u) du = g4 * s^2.
double g4(double x) {
  const double x2 = x * x;
  if (std::abs(x) < 0.5) {
    return 0.5 -
           x2 * (1.0 / 8.0 -
                 x2 * (1.0 / 144.0 -
                       x2 * (1.0 / 5760.0 -
                             x2 * (1.0 / 403200.0 - x2 / 43545600.0))));
  }
  return (std::cos(x) - 1.0 + x * std::sin(x)) / x2;
}

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * double(n - k + i) / double(i);
  return std::round(r);
}

// Cosine expansion of amplitude * cos^power(pi (tau - center) / (2 width)):
// sum_j coeff[j] * cos(freq[j] * (tau - center)).
void bump_harmonics(const TimeProfile& p, std::vector<double>& freq,
                    std::vector<double>& coeff) {
  const int half = p.power / 2;
  const double scale = p.amplitude / std::ldexp(1.0, p.power);
  freq.clear();
  coeff.clear();
  freq.push_back(0.0);
  coeff.push_back(scale * binomial(p.power, half));
  for (int j = 1; j <= half; ++j) {
    freq.push_back(j * M_PI / p.width);
    coeff.push_back(2.0 * scale * binomial(p.power, half - j));
  }
}

// int_{lo}^{hi} sin(A + B tau) dtau, stable as B -> 0.
double sin_primitive(double A, double B, double lo, double hi) {
  const double L = hi - lo;
  return L * sinc(0.5 * B * L) * std::sin(A + B * 0.5 * (lo + hi));
}

double cos_primitive(double A, double B, double lo, double hi) {
  const double L = hi - lo;
  return L * sinc(0.5 * B * L) * std::cos(A + B * 0.5 * (lo + hi));
}

bool flat_regime(double lambda, double t) { return lambda * t * t < 1e-8; }

double duhamel_linear(double lambda, const TimeProfile& p, double t,
                      bool velocity) {
  const double omega = std::sqrt(std::max(lambda, 0.0));
  const int segments = int(p.nodal.size()) - 1;
  double acc = 0.0;
  for (int k = 0; k < segments; ++k) {
    const double ta = std::max(k * p.dt, 0.0);
    const double tb = std::min((k + 1) * p.dt, t);
    if (tb <= ta) continue;
    const double c = p.nodal[k];
    const double d = (p.nodal[k + 1] - p.nodal[k]) / p.dt;
    const double alpha = c + d * (t - k * p.dt);
    const double s1 = t - tb;
    const double s2 = t - ta;
    const double x1 = omega * s1;
    const double x2 = omega * s2;
    if (velocity) {
      const double H1 = s2 * sinc(x2) - s1 * sinc(x1);
      const double H2 = s2 * s2 * g4(x2) - s1 * s1 * g4(x1);
      acc += alpha * H1 - d * H2;
    } else {
      const double G1 = s2 * s2 * g1(x2) - s1 * s1 * g1(x1);
      const double G2 = s2 * s2 * s2 * g2(x2) - s1 * s1 * s1 * g2(x1);
      acc += alpha * G1 - d * G2;
    }
  }
  return acc;
}

double duhamel_bump(double lambda, const TimeProfile& p, double t,
                    bool velocity) {
  const double lo = std::max(p.center - p.width, 0.0);
  const double hi = std::min(p.center + p.width, t);
  if (hi <= lo) return 0.0;
  std::vector<double> freq, coeff;
  bump_harmonics(p, freq, coeff);
  double acc = 0.0;
  if (flat_regime(lambda, t)) {
    for (size_t j = 0; j < freq.size(); ++j) {
      const double k = freq[j];
      double I;
      if (k == 0.0) {
        I = velocity ? (hi - lo) : (hi - lo) * (t - 0.5 * (lo + hi));
      } else if (velocity) {
        I = (std::sin(k * (hi - p.center)) - std::sin(k * (lo - p.center))) / k;
      } else {
        auto prim = [&](double tau) {
          return (t - tau) * std::sin(k * (tau - p.center)) / k -
                 std::cos(k * (tau - p.center)) / (k * k);
        };
        I = prim(hi) - prim(lo);
      }
      acc += coeff[j] * I;
    }
    return acc;
  }
  const double omega = std::sqrt(lambda);
  for (size_t j = 0; j < freq.size(); ++j) {
    const double k = freq[j];
    const double A1 = omega * t - k * p.center;
    const double B1 = k - omega;
    const double A2 = omega * t + k * p.center;
    const double B2 = -(k + omega);
    double I;
    if (velocity) {
      I = 0.5 * (cos_primitive(A1, B1, lo, hi) + cos_primitive(A2, B2, lo, hi));
    } else {
      I = 0.5 / omega *
          (sin_primitive(A1, B1, lo, hi) + sin_primitive(A2, B2, lo, hi));
    }
    acc += coeff[j] * I;
  }
  return acc;
}

double duhamel(double lambda, const TimeProfile& p, double t, bool velocity) {
  if (t <= 0.0) return 0.0;
  if (p.kind == TimeProfile::Kind::PiecewiseLinear)
    return duhamel_linear(lambda, p, t, velocity);
  return duhamel_bump(lambda, p, t, velocity);
}

Eigen::VectorXd window_coefficients(const RestrictedSpectrum& rs,
                                    const Source& f, double t, bool velocity) {
  const int J = int(rs.eigenvalues.size());
  Eigen::VectorXd u = Eigen::VectorXd::Zero(J);
  for (const auto& part : f.parts) {
    const int idx = rs.window_index(part.vertex);
    const double mv = rs.measure_on_V[idx];
    for (int j = 0; j < J; ++j) {
      const double w = mv * rs.functions_on_V(idx, j);
      u[j] += w * duhamel(rs.eigenvalues[j], part.profile, t, velocity);
    }
  }
  return u;
}

}  // namespace

double sine_kernel(double lambda, double t) {
  if (lambda < 0.0) throw Error("sine_kernel expects lambda >= 0");
  if (flat_regime(lambda, t)) return t * (1.0 - lambda * t * t / 6.0);
  const double omega = std::sqrt(lambda);
  return std::sin(omega * t) / omega;
}

double cosine_kernel(double lambda, double t) {
  if (lambda < 0.0) throw Error("cosine_kernel expects lambda >= 0");
  if (flat_regime(lambda, t)) return 1.0 - 0.5 * lambda * t * t;
  return std::cos(std::sqrt(lambda) * t);
}

double TimeProfile::value(double t) const {
  if (kind == Kind::PiecewiseLinear) {
    const int segments = int(nodal.size()) - 1;
    if (t < 0.0 || t > segments * dt) return 0.0;
    int k = std::min(int(t / dt), segments - 1);
    const double local = t - k * dt;
    return nodal[k] + (nodal[k + 1] - nodal[k]) * local / dt;
  }
  const double u = std::abs(t - center) / width;
  if (u >= 1.0) return 0.0;
  return amplitude * std::pow(std::cos(0.5 * M_PI * u), power);
}

TimeProfile TimeProfile::piecewise_linear(Eigen::VectorXd nodal, double dt) {
  if (dt <= 0.0) throw Error("piecewise_linear needs dt > 0");
  if (nodal.size() < 2) throw Error("piecewise_linear needs at least 2 nodes");
  TimeProfile p;
  p.kind = Kind::PiecewiseLinear;
  p.nodal = std::move(nodal);
  p.dt = dt;
  return p;
}

TimeProfile TimeProfile::cosine_bump(double center, double width,
                                     double amplitude, int power) {
  if (width <= 0.0) throw Error("cosine_bump needs width > 0");
  if (power < 2 || power > 16 || power % 2 != 0)
    throw Error("cosine_bump power must be even and between 2 and 16");
  TimeProfile p;
  p.kind = Kind::CosineBump;
  p.center = center;
  p.width = width;
  p.power = power;
  p.amplitude = amplitude;
  return p;
}

double duhamel_position(double lambda, const TimeProfile& profile, double t) {
  if (lambda < 0.0) throw Error("duhamel_position expects lambda >= 0");
  return duhamel(lambda, profile, t, false);
}

double duhamel_velocity(double lambda, const TimeProfile& profile, double t) {
  if (lambda < 0.0) throw Error("duhamel_velocity expects lambda >= 0");
  return duhamel(lambda, profile, t, true);
}

WaveSolution::WaveSolution(const SpectralData* spec, Eigen::VectorXd psi0_modal,
                           Eigen::VectorXd psi1_modal, Source f,
                           Eigen::MatrixXd part_weight, double horizon)
    : spec_(spec),
      psi0_modal_(std::move(psi0_modal)),
      psi1_modal_(std::move(psi1_modal)),
      part_weight_(std::move(part_weight)),
      f_(std::move(f)),
      horizon_(horizon) {}

Eigen::VectorXd WaveSolution::modal_at(double t) const {
  const int J = int(spec_->eigenvalues.size());
  Eigen::VectorXd u(J);
  for (int j = 0; j < J; ++j) {
    const double lam = spec_->eigenvalues[j];
    u[j] = psi0_modal_[j] * cosine_kernel(lam, t) +
           psi1_modal_[j] * sine_kernel(lam, t);
    for (int p = 0; p < int(f_.parts.size()); ++p)
      u[j] += part_weight_(j, p) * duhamel(lam, f_.parts[p].profile, t, false);
  }
  return u;
}

Eigen::VectorXd WaveSolution::modal_velocity_at(double t) const {
  const int J = int(spec_->eigenvalues.size());
  Eigen::VectorXd v(J);
  for (int j = 0; j < J; ++j) {
    const double lam = spec_->eigenvalues[j];
    v[j] = -lam * psi0_modal_[j] * sine_kernel(lam, t) +
           psi1_modal_[j] * cosine_kernel(lam, t);
    for (int p = 0; p < int(f_.parts.size()); ++p)
      v[j] += part_weight_(j, p) * duhamel(lam, f_.parts[p].profile, t, true);
  }
  return v;
}

Eigen::VectorXd WaveSolution::field_at(double t) const {
  return spec_->eigenfunctions * modal_at(t);
}

Eigen::VectorXd WaveSolution::velocity_field_at(double t) const {
  return spec_->eigenfunctions * modal_velocity_at(t);
}

double WaveSolution::energy(double t) const {
  const Eigen::VectorXd u = modal_at(t);
  const Eigen::VectorXd v = modal_velocity_at(t);
  double e = 0.0;
  for (int j = 0; j < int(u.size()); ++j)
    e += v[j] * v[j] + spec_->eigenvalues[j] * u[j] * u[j];
  return e;
}

WaveSolution solve_wave(const SpectralData& spec, const DiscreteSpace& space,
                        const WaveProblem& problem) {
  const int n = space.vertex_count();
  if (int(spec.eigenvalues.size()) != n || spec.eigenfunctions.cols() != n) {
    std::ostringstream msg;
    msg << "solve_wave needs the complete eigenbasis: got "
        << spec.eigenvalues.size() << " modes on " << n << " vertices";
    throw Error(msg.str());
  }
  if (problem.psi0.size() != n || problem.psi1.size() != n)
    throw Error("solve_wave initial data must have one value per vertex");
  for (const auto& part : problem.f.parts) {
    if (part.vertex < 0 || part.vertex >= n) {
      std::ostringstream msg;
      msg << "solve_wave source vertex " << part.vertex << " is out of range";
      throw Error(msg.str());
    }
  }
  const Eigen::VectorXd weighted0 =
      space.measure().cwiseProduct(problem.psi0);
  const Eigen::VectorXd weighted1 =
      space.measure().cwiseProduct(problem.psi1);
  Eigen::VectorXd m0 = spec.eigenfunctions.transpose() * weighted0;
  Eigen::VectorXd m1 = spec.eigenfunctions.transpose() * weighted1;
  const int P = int(problem.f.parts.size());
  Eigen::MatrixXd part_weight(n, P);
  for (int p = 0; p < P; ++p) {
    const int v = problem.f.parts[p].vertex;
    part_weight.col(p) =
        space.measure()[v] * spec.eigenfunctions.row(v).transpose();
  }
  return WaveSolution(&spec, std::move(m0), std::move(m1), problem.f,
                      std::move(part_weight), problem.horizon);
}

Eigen::VectorXd source_to_coefficients(const RestrictedSpectrum& rs,
                                       const Source& f, double t) {
  return window_coefficients(rs, f, t, false);
}

Eigen::VectorXd source_to_velocity_coefficients(const RestrictedSpectrum& rs,
                                                const Source& f, double t) {
  return window_coefficients(rs, f, t, true);
}

ConeEnergyReport cone_energy_fraction(const DiscreteSpace& space,
                                      const WaveSolution& sol, int x0, double r,
                                      int time_samples) {
  const int n = space.vertex_count();
  if (x0 < 0 || x0 >= n) throw Error("cone_energy_fraction x0 out of range");
  if (r <= 0.0) throw Error("cone_energy_fraction needs r > 0");
  if (time_samples < 2) throw Error("cone_energy_fraction needs >= 2 samples");
  const double T = std::min(sol.horizon(), r);
  ConeEnergyReport report;
  std::vector<char> inside(n);
  for (int s = 0; s < time_samples; ++s) {
    const double t = T * double(s) / double(time_samples - 1);
    const double radius = r - t;
    for (int i = 0; i < n; ++i) inside[i] = space.distance()(x0, i) < radius;
    const Eigen::VectorXd u = sol.field_at(t);
    const Eigen::VectorXd v = sol.velocity_field_at(t);
    double cone = 0.0;
    for (int i = 0; i < n; ++i)
      if (inside[i]) cone += space.measure()[i] * v[i] * v[i];
    for (const auto& e : space.edges()) {
      const double share = 0.5 * (inside[e.i] + inside[e.j]);
      if (share > 0.0) {
        const double du = u[e.i] - u[e.j];
        cone += e.conductance * du * du * share;
      }
    }
    const double total = sol.energy(t);
    const double frac = total > 0.0 ? cone / total : 0.0;
    if (s == 0 || frac > report.fraction) {
      report.fraction = frac;
      report.cone_energy = cone;
      report.total_energy = total;
      report.at_time = t;
    }
  }
  return report;
}

}  // namespace hklab
