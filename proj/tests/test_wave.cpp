#include "doctest.h"
#include "hklab/wave.hpp"

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

namespace {

using hklab::DiscreteSpace;
using hklab::Source;
using hklab::TimeProfile;

double simpson(const std::function<double(double)>& f, double a, double b,
               int panels) {
  const double h = (b - a) / panels;
  double s = f(a) + f(b);
  for (int i = 1; i < panels; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

double duhamel_quadrature(double lambda, const TimeProfile& p, double t,
                          bool velocity) {
  std::vector<double> cuts{0.0, t};
  if (p.kind == TimeProfile::Kind::CosineBump) {
    cuts.push_back(p.center - p.width);
    cuts.push_back(p.center + p.width);
  } else {
    for (int k = 0; k < p.nodal.size(); ++k) cuts.push_back(k * p.dt);
  }
  std::sort(cuts.begin(), cuts.end());
  auto integrand = [&](double tau) {
    const double kernel = velocity ? hklab::cosine_kernel(lambda, t - tau)
                                   : hklab::sine_kernel(lambda, t - tau);
    return p.value(tau) * kernel;
  };
  double acc = 0.0;
  for (size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double lo = std::max(cuts[i], 0.0);
    const double hi = std::min(cuts[i + 1], t);
    if (hi > lo) acc += simpson(integrand, lo, hi, 4096);
  }
  return acc;
}

Eigen::VectorXd leapfrog_wave(const Eigen::MatrixXd& L,
                              const Eigen::VectorXd& u0,
                              const Eigen::VectorXd& v0, const Source& f,
                              double T, double dt) {
  const int steps = int(std::llround(T / dt));
  auto force = [&](double t) {
    Eigen::VectorXd F = Eigen::VectorXd::Zero(u0.size());
    for (const auto& part : f.parts)
      F[part.vertex] += part.profile.value(t);
    return F;
  };
  Eigen::VectorXd prev = u0;
  Eigen::VectorXd cur =
      u0 + dt * v0 + 0.5 * dt * dt * (force(0.0) - L * u0);
  for (int m = 1; m < steps; ++m) {
    Eigen::VectorXd next =
        2.0 * cur - prev - dt * dt * (L * cur - force(m * dt));
    prev = std::move(cur);
    cur = std::move(next);
  }
  return cur;
}

Eigen::VectorXd smooth_ring_bump(const DiscreteSpace& space, int center,
                                 int half_width) {
  const int n = space.vertex_count();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  for (int k = -half_width; k <= half_width; ++k) {
    const int i = ((center + k) % n + n) % n;
    const double u = double(k) / double(half_width + 1);
    const double c = std::cos(0.5 * M_PI * u);
    v[i] = c * c * c * c;
  }
  return v;
}

}  // namespace

TEST_SUITE("wave") {

TEST_CASE("sine and cosine kernels match closed forms") {
  CHECK(hklab::sine_kernel(0.0, 2.5) == 2.5);
  CHECK(hklab::cosine_kernel(0.0, 2.5) == 1.0);
  CHECK(std::abs(hklab::sine_kernel(4.0, M_PI_2)) < 1e-15);
  CHECK(hklab::cosine_kernel(4.0, M_PI_2) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(hklab::sine_kernel(9.0, 0.7) ==
        doctest::Approx(std::sin(2.1) / 3.0).epsilon(1e-14));

  const double lam = 0.9999e-8;
  const double series = hklab::sine_kernel(lam, 1.0);
  const double direct = std::sin(std::sqrt(lam)) / std::sqrt(lam);
  CHECK(series == doctest::Approx(direct).epsilon(1e-14));
  CHECK(hklab::cosine_kernel(lam, 1.0) ==
        doctest::Approx(std::cos(std::sqrt(lam))).epsilon(1e-14));

  const double h = 1e-6;
  for (double lam : {0.3, 2.7, 40.0}) {
    const double numeric =
        (hklab::sine_kernel(lam, 1.1 + h) - hklab::sine_kernel(lam, 1.1 - h)) /
        (2.0 * h);
    CHECK(numeric == doctest::Approx(hklab::cosine_kernel(lam, 1.1)).epsilon(1e-8));
  }
  CHECK_THROWS_AS(hklab::sine_kernel(-1.0, 0.5), hklab::Error);
}

TEST_CASE("time profiles evaluate nodal and bump shapes") {
  Eigen::VectorXd nodes(4);
  nodes << 0.0, 1.0, -0.5, 0.0;
  const auto pw = TimeProfile::piecewise_linear(nodes, 0.5);
  CHECK(pw.value(-0.1) == 0.0);
  CHECK(pw.value(0.0) == 0.0);
  CHECK(pw.value(0.5) == 1.0);
  CHECK(pw.value(0.75) == doctest::Approx(0.25));
  CHECK(pw.value(1.0) == -0.5);
  CHECK(pw.value(1.6) == 0.0);

  const auto bump = TimeProfile::cosine_bump(1.0, 0.4, 2.0);
  CHECK(bump.value(1.0) == 2.0);
  CHECK(bump.value(0.55) == 0.0);
  CHECK(bump.value(1.45) == 0.0);
  CHECK(bump.value(1.2) == doctest::Approx(2.0 * 0.25).epsilon(1e-12));

  CHECK_THROWS_AS(TimeProfile::piecewise_linear(Eigen::VectorXd::Zero(1), 0.5),
                  hklab::Error);
  CHECK_THROWS_AS(TimeProfile::cosine_bump(0.0, -1.0), hklab::Error);
  CHECK_THROWS_AS(TimeProfile::cosine_bump(0.0, 1.0, 1.0, 3), hklab::Error);
}

TEST_CASE("duhamel closed forms match quadrature") {
  Eigen::VectorXd nodes(5);
  nodes << 0.0, 0.6, -0.4, 0.2, 0.0;
  const auto pw = TimeProfile::piecewise_linear(nodes, 0.25);
  const auto bump = TimeProfile::cosine_bump(0.8, 0.5);
  const auto clipped = TimeProfile::cosine_bump(0.15, 0.4, 1.3);
  const auto squared = TimeProfile::cosine_bump(0.8, 0.5, 0.7, 2);
  for (double lam : {0.0, 1e-10, 0.5, 7.3, 150.0}) {
    for (double t : {0.3, 1.0, 2.6}) {
      for (const auto* prof : {&pw, &bump, &clipped, &squared}) {
        const double pos = hklab::duhamel_position(lam, *prof, t);
        const double vel = hklab::duhamel_velocity(lam, *prof, t);
        CHECK(std::abs(pos - duhamel_quadrature(lam, *prof, t, false)) < 1e-9);
        CHECK(std::abs(vel - duhamel_quadrature(lam, *prof, t, true)) < 1e-9);
      }
    }
  }
}

TEST_CASE("single eigenmode evolves by rotation") {
  const auto space = hklab::build_circle(32, 1.0);
  const auto spec = hklab::eigensolve(space);
  const int j = 5;
  const double lam = spec.eigenvalues[j];
  hklab::WaveProblem prob;
  prob.psi0 = spec.eigenfunctions.col(j);
  prob.psi1 = Eigen::VectorXd::Zero(32);
  prob.horizon = 3.0;
  const auto sol = hklab::solve_wave(spec, space, prob);
  for (double t : {0.0, 0.4, 1.7}) {
    const Eigen::VectorXd u = sol.field_at(t);
    const Eigen::VectorXd expect =
        std::cos(std::sqrt(lam) * t) * spec.eigenfunctions.col(j);
    CHECK((u - expect).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::VectorXd modal = sol.modal_at(t);
    for (int i = 0; i < 32; ++i)
      if (i != j) CHECK(std::abs(modal[i]) < 1e-12);
  }

  hklab::WaveProblem vel;
  vel.psi0 = Eigen::VectorXd::Zero(32);
  vel.psi1 = spec.eigenfunctions.col(j);
  vel.horizon = 3.0;
  const auto sol2 = hklab::solve_wave(spec, space, vel);
  const Eigen::VectorXd u = sol2.field_at(0.9);
  const Eigen::VectorXd expect =
      hklab::sine_kernel(lam, 0.9) * spec.eigenfunctions.col(j);
  CHECK((u - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("leapfrog integration confirms the modal solution") {
  const auto space = hklab::build_circle(128, 1.0);
  const auto spec = hklab::eigensolve(space);
  hklab::WaveProblem prob;
  prob.psi0 = smooth_ring_bump(space, 64, 12);
  prob.psi1 = Eigen::VectorXd::Zero(128);
  prob.horizon = 1.0;
  Eigen::VectorXd nodes(5);
  nodes << 0.0, 0.6, -0.4, 0.2, 0.0;
  prob.f.parts.push_back({30, TimeProfile::cosine_bump(0.5, 0.3)});
  prob.f.parts.push_back({77, TimeProfile::piecewise_linear(nodes, 0.25)});
  const auto sol = hklab::solve_wave(spec, space, prob);

  const Eigen::MatrixXd L = space.laplacian();
  const Eigen::VectorXd ref =
      leapfrog_wave(L, prob.psi0, prob.psi1, prob.f, 1.0, 2e-5);
  const Eigen::VectorXd u = sol.field_at(1.0);
  CHECK((u - ref).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("energy is conserved without forcing") {
  const auto space = hklab::build_circle(64, 1.0);
  const auto spec = hklab::eigensolve(space);
  hklab::WaveProblem prob;
  prob.psi0 = smooth_ring_bump(space, 10, 9);
  prob.psi1 = smooth_ring_bump(space, 40, 7);
  prob.horizon = 10.0;
  const auto sol = hklab::solve_wave(spec, space, prob);
  const double e0 = sol.energy(0.0);
  CHECK(e0 > 0.0);
  for (double t = 0.5; t <= 10.0; t += 0.5)
    CHECK(std::abs(sol.energy(t) - e0) <= 1e-10 * e0);
}

TEST_CASE("energy is conserved after the source switches off") {
  const auto space = hklab::build_circle(64, 1.0);
  const auto spec = hklab::eigensolve(space);
  hklab::WaveProblem prob;
  prob.psi0 = Eigen::VectorXd::Zero(64);
  prob.psi1 = Eigen::VectorXd::Zero(64);
  prob.horizon = 8.0;
  prob.f.parts.push_back({12, TimeProfile::cosine_bump(0.5, 0.3)});
  const auto sol = hklab::solve_wave(spec, space, prob);
  const double e1 = sol.energy(1.0);
  CHECK(e1 > 0.0);
  for (double t : {2.0, 4.5, 8.0})
    CHECK(std::abs(sol.energy(t) - e1) <= 1e-10 * e1);
}

TEST_CASE("restart reproduces the direct evolution") {
  const auto space = hklab::build_circle(64, 1.0);
  const auto spec = hklab::eigensolve(space);
  hklab::WaveProblem prob;
  prob.psi0 = smooth_ring_bump(space, 20, 10);
  prob.psi1 = smooth_ring_bump(space, 50, 8);
  prob.horizon = 2.0;
  const auto sol = hklab::solve_wave(spec, space, prob);
  const double t1 = 0.7, t2 = 1.3;

  hklab::WaveProblem again;
  again.psi0 = sol.field_at(t1);
  again.psi1 = sol.velocity_field_at(t1);
  again.horizon = 2.0;
  const auto sol2 = hklab::solve_wave(spec, space, again);
  CHECK((sol2.field_at(t2) - sol.field_at(t1 + t2)).cwiseAbs().maxCoeff() <
        1e-12);
  CHECK((sol2.velocity_field_at(t2) - sol.velocity_field_at(t1 + t2))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("time reversal returns to the initial data") {
  const auto space = hklab::build_circle(64, 1.0);
  const auto spec = hklab::eigensolve(space);
  hklab::WaveProblem prob;
  prob.psi0 = smooth_ring_bump(space, 20, 10);
  prob.psi1 = smooth_ring_bump(space, 50, 8);
  prob.horizon = 1.0;
  const auto sol = hklab::solve_wave(spec, space, prob);
  const double T = 0.9;

  hklab::WaveProblem reversed;
  reversed.psi0 = sol.field_at(T);
  reversed.psi1 = -sol.velocity_field_at(T);
  reversed.horizon = 1.0;
  const auto back = hklab::solve_wave(spec, space, reversed);
  CHECK((back.field_at(T) - prob.psi0).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((back.velocity_field_at(T) + prob.psi1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("window coefficients match the full solution") {
  const auto space = hklab::build_circle(128, 1.0);
  const auto spec = hklab::eigensolve(space);
  std::vector<int> V;
  for (int i = 20; i < 50; ++i) V.push_back(i);
  const auto rs = hklab::restrict_spectrum(spec, space, V);

  Source f;
  f.parts.push_back({30, TimeProfile::cosine_bump(0.4, 0.25)});
  f.parts.push_back({44, TimeProfile::cosine_bump(0.7, 0.3, -0.6)});
  hklab::WaveProblem prob;
  prob.psi0 = Eigen::VectorXd::Zero(128);
  prob.psi1 = Eigen::VectorXd::Zero(128);
  prob.f = f;
  prob.horizon = 1.5;
  const auto sol = hklab::solve_wave(spec, space, prob);

  for (double t : {0.4, 1.1}) {
    const Eigen::VectorXd uw = hklab::source_to_coefficients(rs, f, t);
    const Eigen::VectorXd vw = hklab::source_to_velocity_coefficients(rs, f, t);
    CHECK((uw - sol.modal_at(t)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((vw - sol.modal_velocity_at(t)).cwiseAbs().maxCoeff() < 1e-12);
  }

  Source outside;
  outside.parts.push_back({3, TimeProfile::cosine_bump(0.4, 0.25)});
  CHECK_THROWS_WITH_AS(hklab::source_to_coefficients(rs, outside, 0.5),
                       "vertex 3 is not in the window", hklab::Error);
}

TEST_CASE("energy stays out of a shrinking cone around quiet data") {
  const auto space = hklab::build_circle(256, 1.0);
  const auto spec = hklab::eigensolve(space);
  hklab::WaveProblem prob;
  prob.psi0 = smooth_ring_bump(space, 128, 30);
  prob.psi1 = Eigen::VectorXd::Zero(256);
  prob.horizon = 0.3;
  const auto sol = hklab::solve_wave(spec, space, prob);
  const auto report = hklab::cone_energy_fraction(space, sol, 0, 0.3, 16);
  CHECK(report.total_energy > 0.0);
  CHECK(report.fraction < 1e-10);
}

TEST_CASE("wave solver validates its inputs") {
  const auto space = hklab::build_circle(32, 1.0);
  const auto full = hklab::eigensolve(space);
  const auto truncated = hklab::eigensolve(space, 10);
  hklab::WaveProblem prob;
  prob.psi0 = Eigen::VectorXd::Zero(32);
  prob.psi1 = Eigen::VectorXd::Zero(32);
  CHECK_THROWS_AS(hklab::solve_wave(truncated, space, prob), hklab::Error);

  hklab::WaveProblem bad = prob;
  bad.f.parts.push_back({99, TimeProfile::cosine_bump(0.5, 0.2)});
  CHECK_THROWS_AS(hklab::solve_wave(full, space, bad), hklab::Error);

  hklab::WaveProblem short_data = prob;
  short_data.psi0 = Eigen::VectorXd::Zero(5);
  CHECK_THROWS_AS(hklab::solve_wave(full, space, short_data), hklab::Error);
}

}
