#include "hklab/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace hklab {

std::vector<std::pair<int, int>> cluster_eigenvalues(const Eigen::VectorXd& lambda,
                                                     double gap_tol) {
  std::vector<std::pair<int, int>> clusters;
  const int J = static_cast<int>(lambda.size());
  int begin = 0;
  for (int i = 1; i <= J; ++i) {
    if (i == J || lambda[i] - lambda[i - 1] >= gap_tol) {
      clusters.emplace_back(begin, i);
      begin = i;
    }
  }
  return clusters;
}

SpectralData eigensolve(const DiscreteSpace& space, int j_max, double gap_tol) {
  const int n = space.vertex_count();
  if (j_max < 0 || j_max > n) j_max = n;
  if (j_max < 1) throw Error("eigensolve needs at least one mode");

  const Eigen::MatrixXd S = space.symmetrized_laplacian();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  if (es.info() != Eigen::Success) {
    std::ostringstream os;
    os << "eigensolver failed to converge; residual of first column "
       << (S * Eigen::MatrixXd::Identity(n, 1)).norm();
    throw Error(os.str());
  }

  Eigen::VectorXd lambda = es.eigenvalues().head(j_max);
  const Eigen::VectorXd inv_sqrt_m = space.measure().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd phi =
      inv_sqrt_m.asDiagonal() * es.eigenvectors().leftCols(j_max);

  if (lambda[0] < -1e-10 * std::max(1.0, std::abs(lambda[j_max - 1]))) {
    std::ostringstream os;
    os << "operator not positive semidefinite: lambda_0 = " << lambda[0];
    throw Error(os.str());
  }
  lambda[0] = std::max(lambda[0], 0.0);

  for (int j = 0; j < j_max; ++j) {
    int arg = 0;
    phi.col(j).cwiseAbs().maxCoeff(&arg);
    if (phi(arg, j) < 0.0) phi.col(j) = -phi.col(j);
  }

  SpectralData spec;
  spec.total_mass = space.total_mass();
  spec.eigenvalues = std::move(lambda);
  spec.eigenfunctions = std::move(phi);
  spec.gap_tol = gap_tol > 0.0
                     ? gap_tol
                     : 1e-6 * (spec.eigenvalues[j_max - 1] + 1.0);
  spec.clusters = cluster_eigenvalues(spec.eigenvalues, spec.gap_tol);
  return spec;
}

double heat_kernel(const SpectralData& spec, int x, int y, double t) {
  if (!(t > 0.0)) throw Error("heat kernel needs t > 0");
  const int J = static_cast<int>(spec.eigenvalues.size());
  double acc = 0.0;
  for (int j = J - 1; j >= 0; --j)
    acc += std::exp(-spec.eigenvalues[j] * t) * spec.eigenfunctions(x, j) *
           spec.eigenfunctions(y, j);
  return acc;
}

Eigen::MatrixXd heat_kernel_matrix(const SpectralData& spec,
                                   const std::vector<int>& V, double t) {
  if (!(t > 0.0)) throw Error("heat kernel needs t > 0");
  const int nv = static_cast<int>(V.size());
  const int J = static_cast<int>(spec.eigenvalues.size());
  Eigen::MatrixXd phi_v(nv, J);
  for (int a = 0; a < nv; ++a) phi_v.row(a) = spec.eigenfunctions.row(V[a]);
  const Eigen::VectorXd w = (-t * spec.eigenvalues.array()).exp().matrix();
  Eigen::MatrixXd out = phi_v * w.asDiagonal() * phi_v.transpose();
  return 0.5 * (out + out.transpose());
}

ObservationWindow sample_observation(const SpectralData& spec,
                                     const DiscreteSpace& space,
                                     std::vector<int> V,
                                     std::vector<double> t_grid,
                                     double noise_rel, uint64_t seed) {
  if (V.empty()) throw Error("observation window needs a nonempty vertex set");
  for (int v : V)
    if (v < 0 || v >= space.vertex_count())
      throw Error("window vertex " + std::to_string(v) + " out of range");
  for (size_t k = 0; k < t_grid.size(); ++k) {
    if (!(t_grid[k] > 0.0)) throw Error("observation times must be positive");
    if (k > 0 && !(t_grid[k] > t_grid[k - 1]))
      throw Error("observation times must be strictly increasing");
  }

  ObservationWindow obs;
  obs.measure_on_V.resize(V.size());
  for (size_t a = 0; a < V.size(); ++a)
    obs.measure_on_V[a] = space.measure()[V[a]];
  obs.vertices = std::move(V);
  obs.noise_rel = noise_rel;
  obs.seed = seed;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int nv = static_cast<int>(obs.vertices.size());
  obs.samples.reserve(t_grid.size());
  for (double t : t_grid) {
    Eigen::MatrixXd table = heat_kernel_matrix(spec, obs.vertices, t);
    if (noise_rel > 0.0) {
      Eigen::MatrixXd draw(nv, nv);
      for (int a = 0; a < nv; ++a)
        for (int b = 0; b < nv; ++b) draw(a, b) = gauss(rng);
      const Eigen::MatrixXd xi = 0.5 * (draw + draw.transpose());
      const Eigen::MatrixXd factor =
          Eigen::MatrixXd::Constant(nv, nv, 1.0) + noise_rel * xi;
      if ((factor.array() <= 0.0).any())
        throw Error("noise drove a heat-kernel sample non-positive");
      table = table.cwiseProduct(factor);
    }
    obs.samples.push_back(std::move(table));
  }
  obs.t_grid = std::move(t_grid);
  return obs;
}

double window_heat_trace(const ObservationWindow& obs, int time_index) {
  const auto& table = obs.samples.at(time_index);
  return (obs.measure_on_V.array() * table.diagonal().array()).sum();
}

int RestrictedSpectrum::window_index(int vertex) const {
  for (size_t a = 0; a < vertices.size(); ++a)
    if (vertices[a] == vertex) return static_cast<int>(a);
  throw Error("vertex " + std::to_string(vertex) + " is not in the window");
}

RestrictedSpectrum restrict_spectrum(const SpectralData& spec,
                                     const DiscreteSpace& space,
                                     const std::vector<int>& V) {
  if (V.empty()) throw Error("window must be nonempty");
  RestrictedSpectrum rs;
  rs.vertices = V;
  rs.measure_on_V.resize(V.size());
  rs.functions_on_V.resize(V.size(), spec.eigenvalues.size());
  for (size_t a = 0; a < V.size(); ++a) {
    if (V[a] < 0 || V[a] >= space.vertex_count())
      throw Error("window vertex " + std::to_string(V[a]) + " out of range");
    rs.measure_on_V[a] = space.measure()[V[a]];
    rs.functions_on_V.row(a) = spec.eigenfunctions.row(V[a]);
  }
  rs.eigenvalues = spec.eigenvalues;
  rs.clusters = spec.clusters;
  rs.total_mass = spec.total_mass;
  rs.provenance = Provenance::FromGroundTruth;
  return rs;
}

EigenBoundsReport check_eigen_bounds(const SpectralData& spec,
                                     const DiscreteSpace& space) {
  EigenBoundsReport rep;
  const int J = static_cast<int>(spec.eigenvalues.size());
  const double N = space.metadata().dimension_N;
  for (int j = 1; j < J; ++j) {
    const double lam = spec.eigenvalues[j];
    const double vinf = spec.eigenfunctions.col(j).cwiseAbs().maxCoeff();
    rep.sup_value_ratio =
        std::max(rep.sup_value_ratio, vinf / std::pow(std::max(lam, 1.0), N / 4.0));
    double ginf = 0.0;
    for (const auto& e : space.edges())
      ginf = std::max(ginf, std::abs(spec.eigenfunctions(e.i, j) -
                                     spec.eigenfunctions(e.j, j)) /
                                e.length);
    rep.sup_gradient_ratio =
        std::max(rep.sup_gradient_ratio,
                 ginf / std::pow(std::max(lam, 1.0), (N + 2.0) / 4.0));
    rep.weyl_ratio_max =
        std::max(rep.weyl_ratio_max, lam * std::pow(double(j), -2.0 / N));
  }
  rep.finite = std::isfinite(rep.sup_value_ratio) &&
               std::isfinite(rep.sup_gradient_ratio) &&
               std::isfinite(rep.weyl_ratio_max);
  return rep;
}

std::vector<double> geometric_grid(double t_min, double t_max,
                                   int points_per_decade) {
  if (!(t_min > 0.0) || !(t_max > t_min) || points_per_decade < 1)
    throw Error("bad geometric grid parameters");
  std::vector<double> grid;
  const double ratio = std::pow(10.0, 1.0 / points_per_decade);
  for (double t = t_min; t < t_max * (1.0 - 1e-12); t *= ratio)
    grid.push_back(t);
  grid.push_back(t_max);
  return grid;
}

std::vector<double> merge_grids(std::vector<double> a,
                                const std::vector<double>& b, double rel_tol) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  std::vector<double> out;
  for (double t : a)
    if (out.empty() || t - out.back() > rel_tol * t) out.push_back(t);
  return out;
}

}  // namespace hklab
