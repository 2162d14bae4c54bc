#pragma once

#include "hklab/spectral.hpp"

#include <string>

namespace hklab {

struct ExtractionOptions {
  // Exponential-rate estimation runs a matrix-pencil realization on uniform
  // sample segments at geometrically spaced scales. Each scale s contributes
  // samples at s/2 + k*(s/8) for k = 0..2*hankel_order+1.
  int hankel_order = 12;
  double svd_floor = 5e-12;    // relative singular-value floor in the pencil
  double scale_top = 3.0;      // largest segment scale
  double scale_ratio = 2.5;    // ratio between consecutive scales
  double trust_lo = 0.12;      // accept a rate when rate*step lies in
  double trust_hi = 1.9;       //   (trust_lo, trust_hi) for that scale
  double quality_center = 0.55;  // preferred rate*step when deduping scales
  double merge_rel = 0.04;     // relative window for cross-scale dedup
  double significance = 1e-8;  // amplitude floor for keeping a rate
  int polish_passes = 3;       // Gauss-Newton refinement sweeps over scales
  double dynamic_range = 36.0; // drop rates with rate * t_min above this
  double rank_rel_tol = 1e-6;  // singular-value threshold for cluster rank
};

struct RateCluster {
  double rate = 0.0;
  double amplitude = 0.0;  // m-weighted trace of the cluster kernel on V
};

struct EigenvalueRecovery {
  std::vector<RateCluster> clusters;  // ascending, clusters[0].rate = 0
  int requested = -1;
  bool complete = true;  // false when the dynamic range truncated the list
  std::string diagnostic;
};

struct ClusterReport {
  double smallest_pivot_singular = 0.0;  // sigma_min of Q on the pivot points
  double factor_residual = 0.0;          // max |phi phi^T - Q| for the cluster
  bool rank_ambiguous = false;
};

struct ExtractionAudit {
  bool used_ground_truth = false;  // this pipeline only reads the observation
  double fit_residual = 0.0;       // weighted exponential-fit residual
  double mass_tail_gap = 0.0;      // relative trace drop over the last decade
  int ambiguous_clusters = 0;
  double min_cluster_mass = 0.0;   // smallest m-trace among kept clusters
};

struct ExtractedSpectrum {
  std::vector<int> vertices;
  Eigen::VectorXd measure_on_V;
  double total_mass = 0.0;  // recovered m(X)
  double phi0 = 0.0;
  Eigen::VectorXd rates;                 // distinct decay rates, rates[0] = 0
  // Cluster kernel on V x V per rate. Where the rank call is trusted this is
  // the factored form (functions block times its transpose); elsewhere the
  // raw least-squares kernel survives and the report carries the residual.
  std::vector<Eigen::MatrixXd> kernels;
  std::vector<int> multiplicities;
  Eigen::VectorXd eigenvalues;           // rates expanded by multiplicity
  Eigen::MatrixXd functions_on_V;        // |V| x J, gauge-fixed per cluster
  std::vector<std::pair<int, int>> clusters;
  std::vector<ClusterReport> reports;
  ExtractionAudit audit;

  RestrictedSpectrum to_restricted() const;
};

// Sampling grid the extraction needs: geometric base grid (16 per decade)
// merged with the uniform pencil segments of every scale with s/2 >= t_min.
std::vector<double> extraction_time_grid(double t_min, double t_max,
                                         const ExtractionOptions& opt = {});

// I_0 on the observation grid: I_0(t) = sum_{x in V} m_x p(x, x, t).
Eigen::VectorXd heat_trace_on_V(const ObservationWindow& obs);

// Long-time limit of I_0 via a pilot decay-rate fit plus Richardson
// extrapolation in e^{-rate * t}. Returns (m(X), phi_0).
std::pair<double, double> recover_mass_and_phi0(const ObservationWindow& obs);

// Distinct decay rates with their m-weighted trace amplitudes. j_target < 0
// keeps everything the dynamic range supports.
EigenvalueRecovery recover_eigenvalues(const ObservationWindow& obs,
                                       double mass_rec, int j_target = -1,
                                       const ExtractionOptions& opt = {});

// Kernel of one recovered cluster on V x V (symmetric; its m-weighted
// operator is positive semidefinite up to extraction error).
Eigen::MatrixXd recover_cluster_kernel(const ObservationWindow& obs,
                                       const std::vector<RateCluster>& clusters,
                                       int j,
                                       const ExtractionOptions& opt = {});

// Factor a cluster kernel Q into eigenfunction values on V, fixed up to an
// orthogonal transformation: rank from the m-weighted singular values,
// greedy max-diagonal pivoting, then Q(:,p) * Q(p,p)^{-1/2}. Multiplicity-1
// output has its max-abs entry made positive. strict mode throws when a
// singular value sits within a decade of the rank threshold.
Eigen::MatrixXd gauge_fix_cluster(const Eigen::MatrixXd& Q,
                                  const Eigen::VectorXd& measure_on_V,
                                  double rank_rel_tol = 1e-6,
                                  bool strict = true);

// Full pipeline: rates, kernels, multiplicities, gauge-fixed functions,
// mass, conditioning reports, audit.
ExtractedSpectrum extract_spectrum(const ObservationWindow& obs,
                                   const ExtractionOptions& opt = {});

}  // namespace hklab
