#pragma once

#include "hklab/space.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace hklab {

struct SpectralData {
  Eigen::VectorXd eigenvalues;                  // ascending, lambda_0 = 0
  Eigen::MatrixXd eigenfunctions;               // n x J, m-orthonormal columns
  std::vector<std::pair<int, int>> clusters;    // [begin, end) index ranges
  double gap_tol = 0.0;
  double total_mass = 0.0;
};

// Eigenpairs of the m-weighted Laplacian via its symmetric conjugate.
// j_max < 0 keeps the full spectrum. gap_tol < 0 selects the default
// 1e-6 * (lambda_max + 1).
SpectralData eigensolve(const DiscreteSpace& space, int j_max = -1,
                        double gap_tol = -1.0);

std::vector<std::pair<int, int>> cluster_eigenvalues(const Eigen::VectorXd& lambda,
                                                     double gap_tol);

double heat_kernel(const SpectralData& spec, int x, int y, double t);

Eigen::MatrixXd heat_kernel_matrix(const SpectralData& spec,
                                   const std::vector<int>& V, double t);

struct ObservationWindow {
  std::vector<int> vertices;            // V as global vertex ids
  Eigen::VectorXd measure_on_V;
  std::vector<double> t_grid;
  std::vector<Eigen::MatrixXd> samples; // one |V| x |V| table per grid time
  double noise_rel = 0.0;
  uint64_t seed = 0;
};

ObservationWindow sample_observation(const SpectralData& spec,
                                     const DiscreteSpace& space,
                                     std::vector<int> V,
                                     std::vector<double> t_grid,
                                     double noise_rel = 0.0, uint64_t seed = 0);

// I_0 at one grid time: sum over V of m_x p(x, x, t).
double window_heat_trace(const ObservationWindow& obs, int time_index);

// Where a piece of spectral-on-window data came from. Operations that must
// run on observation-derived data alone accept this type; validation paths
// may fill it from ground truth, and the tag makes the provenance auditable.
enum class Provenance { FromObservation, FromGroundTruth };

struct RestrictedSpectrum {
  std::vector<int> vertices;            // window vertex labels
  Eigen::VectorXd measure_on_V;
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd functions_on_V;       // |V| x J
  std::vector<std::pair<int, int>> clusters;
  double total_mass = 0.0;
  Provenance provenance = Provenance::FromGroundTruth;

  int window_index(int vertex) const;   // position of a vertex in the window
};

RestrictedSpectrum restrict_spectrum(const SpectralData& spec,
                                     const DiscreteSpace& space,
                                     const std::vector<int>& V);

struct EigenBoundsReport {
  double sup_value_ratio = 0.0;     // sup_j ||phi_j||_inf / lambda_j^{N/4}
  double sup_gradient_ratio = 0.0;  // discrete-gradient analogue, exponent (N+2)/4
  double weyl_ratio_max = 0.0;      // max_i lambda_i * i^{-2/N}
  bool finite = false;
};

EigenBoundsReport check_eigen_bounds(const SpectralData& spec,
                                     const DiscreteSpace& space);

// Geometric time grid with points_per_decade samples per decade, inclusive
// of t_min, capped at t_max.
std::vector<double> geometric_grid(double t_min, double t_max,
                                   int points_per_decade);

// Sorted union with relative-tolerance dedup.
std::vector<double> merge_grids(std::vector<double> a,
                                const std::vector<double>& b,
                                double rel_tol = 1e-12);

}  // namespace hklab
