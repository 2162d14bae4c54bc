#include "hklab/space.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <sstream>

namespace hklab {

namespace {

void check_edges(int n, const std::vector<Edge>& edges) {
  for (const auto& e : edges) {
    if (e.i < 0 || e.i >= n || e.j < 0 || e.j >= n || e.i == e.j) {
      std::ostringstream os;
      os << "bad edge (" << e.i << ", " << e.j << ") for " << n << " vertices";
      throw Error(os.str());
    }
    if (!(e.length > 0.0) || !(e.conductance > 0.0)) {
      std::ostringstream os;
      os << "edge (" << e.i << ", " << e.j << ") needs positive length and conductance";
      throw Error(os.str());
    }
  }
}

}  // namespace

DiscreteSpace::DiscreteSpace(Eigen::VectorXd measure, std::vector<Edge> edges,
                             SpaceMetadata meta)
    : measure_(std::move(measure)), edges_(std::move(edges)), meta_(meta) {
  const int n = vertex_count();
  if (n <= 0) throw Error("space needs at least one vertex");
  for (int i = 0; i < n; ++i) {
    if (!(measure_[i] > 0.0)) {
      std::ostringstream os;
      os << "vertex " << i << " has non-positive measure " << measure_[i];
      throw Error(os.str());
    }
  }
  check_edges(n, edges_);
  distance_ = shortest_paths(measure_, edges_);
  if (meta_.diameter <= 0.0) meta_.diameter = distance_.maxCoeff();
}

Eigen::MatrixXd DiscreteSpace::laplacian() const {
  const int n = vertex_count();
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  for (const auto& e : edges_) {
    L(e.i, e.j) -= e.conductance / measure_[e.i];
    L(e.j, e.i) -= e.conductance / measure_[e.j];
    L(e.i, e.i) += e.conductance / measure_[e.i];
    L(e.j, e.j) += e.conductance / measure_[e.j];
  }
  return L;
}

Eigen::MatrixXd DiscreteSpace::symmetrized_laplacian() const {
  const int n = vertex_count();
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
  for (const auto& e : edges_) {
    const double off = -e.conductance / std::sqrt(measure_[e.i] * measure_[e.j]);
    S(e.i, e.j) += off;
    S(e.j, e.i) += off;
    S(e.i, e.i) += e.conductance / measure_[e.i];
    S(e.j, e.j) += e.conductance / measure_[e.j];
  }
  return S;
}

double DiscreteSpace::min_edge_length() const {
  double h = std::numeric_limits<double>::infinity();
  for (const auto& e : edges_) h = std::min(h, e.length);
  return h;
}

Eigen::MatrixXd shortest_paths(const Eigen::VectorXd& measure,
                               const std::vector<Edge>& edges) {
  const int n = static_cast<int>(measure.size());
  check_edges(n, edges);
  const double inf = std::numeric_limits<double>::infinity();

  std::vector<std::vector<std::pair<int, double>>> adj(n);
  for (const auto& e : edges) {
    adj[e.i].emplace_back(e.j, e.length);
    adj[e.j].emplace_back(e.i, e.length);
  }

  Eigen::MatrixXd d(n, n);
  std::vector<double> dist(n);
  using Item = std::pair<double, int>;
  for (int s = 0; s < n; ++s) {
    std::fill(dist.begin(), dist.end(), inf);
    dist[s] = 0.0;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
    pq.emplace(0.0, s);
    while (!pq.empty()) {
      auto [du, u] = pq.top();
      pq.pop();
      if (du > dist[u]) continue;
      for (auto [v, len] : adj[u]) {
        const double cand = du + len;
        if (cand < dist[v]) {
          dist[v] = cand;
          pq.emplace(cand, v);
        }
      }
    }
    for (int t = 0; t < n; ++t) d(s, t) = dist[t];
  }

  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(d(0, i))) {
      std::vector<int> comp;
      for (int j = 0; j < n && comp.size() < 8; ++j)
        if (!std::isfinite(d(0, j))) comp.push_back(j);
      std::ostringstream os;
      os << "graph is disconnected; vertices unreachable from 0:";
      for (int v : comp) os << " " << v;
      throw Error(os.str());
    }
  }

  for (int i = 0; i < n; ++i)
    for (int j = 0; j < i; ++j) {
      const double v = std::min(d(i, j), d(j, i));
      d(i, j) = v;
      d(j, i) = v;
    }

  // Floyd-Warshall sweeps to a fixed point repair the few-ulp triangle
  // violations left by per-source runs. Entries only decrease, and row k /
  // column k are stationary during pass k, so symmetry is preserved.
  bool changed = true;
  while (changed) {
    changed = false;
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i) {
        const double dik = d(i, k);
        for (int j = 0; j < n; ++j) {
          const double cand = dik + d(k, j);
          if (cand < d(i, j)) {
            d(i, j) = cand;
            changed = true;
          }
        }
      }
  }
  return d;
}

DiscreteSpace build_circle(int n_vertices, double radius) {
  if (n_vertices < 8) throw Error("build_circle needs at least 8 vertices");
  if (!(radius > 0.0)) throw Error("build_circle needs positive radius");
  const int n = n_vertices;
  const double h = 2.0 * M_PI * radius / n;
  Eigen::VectorXd m = Eigen::VectorXd::Constant(n, h);
  std::vector<Edge> edges;
  edges.reserve(n);
  for (int i = 0; i < n; ++i)
    edges.push_back({i, (i + 1) % n, h, 1.0 / h});
  SpaceMetadata meta;
  meta.curvature_K = 0.0;
  meta.dimension_N = 1.0;
  meta.essential_dim = 1;
  return DiscreteSpace(std::move(m), std::move(edges), meta);
}

std::function<double(double)> density_profile(const std::string& id) {
  if (id == "uniform") return [](double) { return 1.0; };
  if (id.rfind("affine:", 0) == 0) {
    double a = 0.0, b = 0.0;
    char comma = 0;
    std::istringstream is(id.substr(7));
    if (is >> a >> comma >> b && comma == ',')
      return [a, b](double x) { return a + b * x; };
  }
  throw Error("unknown density profile '" + id + "'");
}

DiscreteSpace build_weighted_interval(int n, double length,
                                      const std::function<double(double)>& density) {
  if (n < 8) throw Error("build_weighted_interval needs at least 8 vertices");
  if (!(length > 0.0)) throw Error("interval length must be positive");
  const double h = length / (n - 1);
  Eigen::VectorXd m(n);
  for (int i = 0; i < n; ++i) {
    const double x = i * h;
    const double rho = density(x);
    if (!(rho > 0.0)) {
      std::ostringstream os;
      os << "density profile non-positive at x = " << x;
      throw Error(os.str());
    }
    m[i] = rho * h;
  }
  m[0] *= 0.5;
  m[n - 1] *= 0.5;
  std::vector<Edge> edges;
  edges.reserve(n - 1);
  for (int i = 0; i + 1 < n; ++i) {
    const double mid = (i + 0.5) * h;
    edges.push_back({i, i + 1, h, density(mid) / h});
  }
  SpaceMetadata meta;
  meta.dimension_N = 1.0;
  meta.essential_dim = 1;
  return DiscreteSpace(std::move(m), std::move(edges), meta);
}

DiscreteSpace build_torus_mesh(int n1, int n2, double len1, double len2) {
  if (n1 < 8 || n2 < 8) throw Error("build_torus_mesh needs n1, n2 >= 8");
  if (!(len1 > 0.0) || !(len2 > 0.0)) throw Error("torus lengths must be positive");
  const double h1 = len1 / n1;
  const double h2 = len2 / n2;
  const int n = n1 * n2;
  auto id = [n2](int a, int b) { return a * n2 + b; };
  Eigen::VectorXd m = Eigen::VectorXd::Constant(n, h1 * h2);
  std::vector<Edge> edges;
  edges.reserve(2 * n);
  for (int a = 0; a < n1; ++a)
    for (int b = 0; b < n2; ++b) {
      edges.push_back({id(a, b), id((a + 1) % n1, b), h1, h2 / h1});
      edges.push_back({id(a, b), id(a, (b + 1) % n2), h2, h1 / h2});
    }
  SpaceMetadata meta;
  meta.dimension_N = 2.0;
  meta.essential_dim = 2;
  return DiscreteSpace(std::move(m), std::move(edges), meta);
}

std::vector<int> quotient_orbit_map(const DiscreteSpace& space,
                                    const std::vector<int>& involution) {
  const int n = space.vertex_count();
  if (static_cast<int>(involution.size()) != n)
    throw Error("involution size does not match vertex count");
  for (int i = 0; i < n; ++i) {
    const int s = involution[i];
    if (s < 0 || s >= n || involution[s] != i)
      throw Error("map is not an involution at vertex " + std::to_string(i));
  }
  std::vector<int> orbit(n, -1);
  int next = 0;
  for (int i = 0; i < n; ++i) {
    if (orbit[i] >= 0) continue;
    orbit[i] = next;
    orbit[involution[i]] = next;
    ++next;
  }
  return orbit;
}

DiscreteSpace quotient_space(const DiscreteSpace& space,
                             const std::vector<int>& involution) {
  const int n = space.vertex_count();
  const auto orbit = quotient_orbit_map(space, involution);
  const auto& m = space.measure();
  for (int i = 0; i < n; ++i) {
    const int s = involution[i];
    if (m[s] != m[i])
      throw Error("involution does not preserve the measure at vertex " +
                  std::to_string(i));
  }

  // Equivariance: the image of the edge multiset must equal the edge
  // multiset, with lengths and conductances intact.
  struct Key {
    int a, b;
    bool operator<(const Key& o) const {
      return a != o.a ? a < o.a : b < o.b;
    }
    bool operator==(const Key& o) const { return a == o.a && b == o.b; }
  };
  using Bag = std::map<Key, std::multiset<std::pair<double, double>>>;
  Bag original, image;
  for (const auto& e : space.edges()) {
    original[{std::min(e.i, e.j), std::max(e.i, e.j)}].emplace(e.length,
                                                              e.conductance);
    const int si = involution[e.i];
    const int sj = involution[e.j];
    image[{std::min(si, sj), std::max(si, sj)}].emplace(e.length, e.conductance);
  }
  if (original != image) {
    for (const auto& e : space.edges()) {
      const Key k{std::min(involution[e.i], involution[e.j]),
                  std::max(involution[e.i], involution[e.j])};
      auto it = original.find(k);
      if (it == original.end() ||
          !it->second.count({e.length, e.conductance})) {
        std::ostringstream os;
        os << "involution does not preserve edge (" << e.i << ", " << e.j << ")";
        throw Error(os.str());
      }
    }
    throw Error("involution does not preserve the edge multiset");
  }

  int n_orbits = 0;
  for (int i = 0; i < n; ++i) n_orbits = std::max(n_orbits, orbit[i] + 1);

  Eigen::VectorXd mq = Eigen::VectorXd::Zero(n_orbits);
  for (int i = 0; i < n; ++i) mq[orbit[i]] += m[i];

  std::map<Key, std::pair<double, double>> proj;
  for (const auto& e : space.edges()) {
    const int a = orbit[e.i];
    const int b = orbit[e.j];
    if (a == b) continue;
    Key k{std::min(a, b), std::max(a, b)};
    auto [it, fresh] = proj.emplace(k, std::make_pair(e.length, 0.0));
    it->second.first = std::min(it->second.first, e.length);
    it->second.second += e.conductance;
  }
  std::vector<Edge> edges_q;
  edges_q.reserve(proj.size());
  for (const auto& [k, lw] : proj)
    edges_q.push_back({k.a, k.b, lw.first, lw.second});

  SpaceMetadata meta = space.metadata();
  meta.diameter = 0.0;
  return DiscreteSpace(std::move(mq), std::move(edges_q), meta);
}

}  // namespace hklab
