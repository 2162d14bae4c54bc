#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hklab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Edge {
  int i = 0;
  int j = 0;
  double length = 0.0;
  double conductance = 0.0;
};

// Declared by the caller, never inferred. Used by stability bounds and
// density recovery only.
struct SpaceMetadata {
  double curvature_K = 0.0;
  double dimension_N = 1.0;
  int essential_dim = 1;
  double diameter = 0.0;
};

// Weighted graph with a per-vertex measure. The operator is
// (Lu)_i = (1/m_i) * sum_j w_ij (u_i - u_j), self-adjoint in l2(m),
// with Dirichlet form sum_edges w_ij (u_i - u_j)^2.
class DiscreteSpace {
public:
  DiscreteSpace(Eigen::VectorXd measure, std::vector<Edge> edges,
                SpaceMetadata meta = {});

  int vertex_count() const { return static_cast<int>(measure_.size()); }
  const Eigen::VectorXd& measure() const { return measure_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const SpaceMetadata& metadata() const { return meta_; }
  void set_metadata(const SpaceMetadata& meta) { meta_ = meta; }

  double total_mass() const { return measure_.sum(); }
  double diameter() const { return distance_.maxCoeff(); }

  // Exact shortest-path metric: symmetric, zero diagonal, triangle
  // inequality holds exactly in floating point.
  const Eigen::MatrixXd& distance() const { return distance_; }

  Eigen::MatrixXd laplacian() const;

  // M^{1/2} L M^{-1/2}, assembled symmetric entry by entry.
  Eigen::MatrixXd symmetrized_laplacian() const;

  // Mesh width proxy: the shortest edge length.
  double min_edge_length() const;

private:
  Eigen::VectorXd measure_;
  std::vector<Edge> edges_;
  SpaceMetadata meta_;
  Eigen::MatrixXd distance_;
};

// All-pairs shortest paths over edge lengths. Dijkstra per source, then
// exact symmetrization, then triangle repair sweeps to a fixed point.
Eigen::MatrixXd shortest_paths(const Eigen::VectorXd& measure,
                               const std::vector<Edge>& edges);

DiscreteSpace build_circle(int n_vertices, double radius);

DiscreteSpace build_weighted_interval(int n, double length,
                                      const std::function<double(double)>& density);

// Resolves "uniform" or "affine:a,b" into a density profile.
std::function<double(double)> density_profile(const std::string& id);

DiscreteSpace build_torus_mesh(int n1, int n2, double len1, double len2);

// Quotient by a measure- and edge-preserving involution. Orbit measure is
// the sum over members; conductances accumulate over projected edges.
DiscreteSpace quotient_space(const DiscreteSpace& space,
                             const std::vector<int>& involution);

// Orbit labels for each parent vertex, in quotient vertex order.
std::vector<int> quotient_orbit_map(const DiscreteSpace& space,
                                    const std::vector<int>& involution);

}  // namespace hklab
