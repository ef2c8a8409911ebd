#include "latentmorph/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace lm {
namespace {

constexpr double kWeightFloor = 1e-10;

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a), b = find(b);
    if (a == b) return false;
    parent[std::max(a, b)] = std::min(a, b);
    return true;
  }
};

double heat_weight(double dist, double sigma) {
  if (sigma <= 0.0) return 1.0;
  return std::max(std::exp(-dist * dist / (2.0 * sigma * sigma)), kWeightFloor);
}

}  // namespace

NeighborGraph knn_graph(const Eigen::MatrixXd& points, std::size_t k, WeightMode mode) {
  const std::size_t n = static_cast<std::size_t>(points.rows());
  if (k < 1 || n <= k) throw EmbeddingError("knn_graph needs n > k >= 1 (n=" + std::to_string(n) + ", k=" + std::to_string(k) + ")");

  Eigen::MatrixXd d2(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d2(i, j) = (points.row(i) - points.row(j)).squaredNorm();

  std::map<std::pair<std::size_t, std::size_t>, double> lengths;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    std::nth_element(order.begin(), order.begin() + (k - 1), order.end(),
                     [&](std::size_t a, std::size_t b) { return d2(i, a) < d2(i, b); });
    const double radius = d2(i, order[k - 1]);
    const double cut = radius * (1.0 + 1e-12);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && d2(i, j) <= cut) lengths[{std::min(i, j), std::max(i, j)}] = std::sqrt(d2(i, j));
    }
  }

  NeighborGraph g;
  g.n = n;
  g.k = k;
  std::vector<double> dists;
  dists.reserve(lengths.size());
  for (const auto& [key, len] : lengths) dists.push_back(len);
  std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
  g.bandwidth = dists[dists.size() / 2];
  if (dists.size() % 2 == 0) {
    const double lower = *std::max_element(dists.begin(), dists.begin() + dists.size() / 2);
    g.bandwidth = 0.5 * (g.bandwidth + lower);
  }

  auto weight = [&](double len, double sigma) { return mode == WeightMode::binary ? 1.0 : heat_weight(len, sigma); };
  DisjointSets sets(n);
  for (const auto& [key, len] : lengths) {
    g.edges.push_back({key.first, key.second, weight(len, g.bandwidth)});
    sets.unite(key.first, key.second);
  }

  // Connectivity repair: shortest inter-component edge, repeated.
  for (;;) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        if (d2(i, j) < best && sets.find(i) != sets.find(j)) best = d2(i, j), bi = i, bj = j;
      }
    if (!std::isfinite(best)) break;
    const double len = std::sqrt(best);
    g.edges.push_back({bi, bj, weight(len, std::max(g.bandwidth, len))});
    sets.unite(bi, bj);
    ++g.repair_edges;
  }
  std::sort(g.edges.begin(), g.edges.end(), [](const Edge& a, const Edge& b) {
    return a.i != b.i ? a.i < b.i : a.j < b.j;
  });
  return g;
}

std::size_t component_count(const NeighborGraph& g) {
  DisjointSets sets(g.n);
  std::size_t components = g.n;
  for (const Edge& e : g.edges) components -= sets.unite(e.i, e.j);
  return components;
}

GraphLaplacian graph_laplacian(const NeighborGraph& g) {
  if (component_count(g) != 1) throw EmbeddingError("graph_laplacian: graph is disconnected");
  GraphLaplacian out{Eigen::MatrixXd::Zero(g.n, g.n), Eigen::VectorXd::Zero(g.n)};
  for (const Edge& e : g.edges) {
    if (!(e.w > 0.0)) throw EmbeddingError("graph_laplacian: non-positive edge weight");
    out.L(e.i, e.j) -= e.w;
    out.L(e.j, e.i) -= e.w;
    out.degree(e.i) += e.w;
    out.degree(e.j) += e.w;
  }
  out.L.diagonal() += out.degree;
  return out;
}

EigenDecomposition jacobi_eigen(Eigen::MatrixXd a, double tol, std::size_t max_sweeps) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw EmbeddingError("jacobi_eigen: matrix is not square");
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double norm = a.norm();

  // Entries below this are roundoff noise and are zeroed instead of rotated.
  const double negligible = tol * norm;
  auto off_norm = [&]() {
    double s = 0.0;
    for (Eigen::Index q = 0; q < n; ++q)
      for (Eigen::Index p = 0; p < q; ++p) s += 2.0 * a(p, q) * a(p, q);
    return std::sqrt(s);
  };

  EigenDecomposition out;
  for (;;) {
    std::size_t rotations = 0;
    for (Eigen::Index p = 0; p < n - 1; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= negligible) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // a <- J^T a J with J the (p, q) rotation [[c, s], [-s, c]].
        const Eigen::VectorXd cp = a.col(p), cq = a.col(q);
        a.col(p) = c * cp - s * cq;
        a.col(q) = s * cp + c * cq;
        const Eigen::RowVectorXd rp = a.row(p), rq = a.row(q);
        a.row(p) = c * rp - s * rq;
        a.row(q) = s * rp + c * rq;
        a(p, q) = a(q, p) = 0.0;
        const Eigen::VectorXd vp = v.col(p), vq = v.col(q);
        v.col(p) = c * vp - s * vq;
        v.col(q) = s * vp + c * vq;
        ++rotations;
      }
    ++out.sweeps;
    if (rotations == 0) break;
    if (out.sweeps == max_sweeps) {
      std::ostringstream msg;
      msg << "jacobi_eigen did not converge: " << max_sweeps << " sweeps, " << rotations
          << " rotations in the last sweep, off-diagonal norm " << off_norm() << " (matrix norm " << norm << ")";
      throw EmbeddingError(msg.str());
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return a(x, x) < a(y, y); });
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = a(order[i], order[i]);
    out.vectors.col(i) = v.col(order[i]);
  }
  return out;
}

Embedding2D smallest_generalized_eigenvectors(const Eigen::MatrixXd& L, const Eigen::VectorXd& degree,
                                              std::size_t count) {
  const Eigen::Index n = L.rows();
  if (count != 2) throw EmbeddingError("only two-dimensional embeddings are supported");
  if (n < 3) throw EmbeddingError("need at least 3 points for a 2D embedding");
  if ((degree.array() <= 0.0).any()) throw EmbeddingError("degree matrix must be positive");

  const Eigen::VectorXd inv_sqrt = degree.array().rsqrt();
  const Eigen::MatrixXd normalized = inv_sqrt.asDiagonal() * L * inv_sqrt.asDiagonal();
  const EigenDecomposition eig = jacobi_eigen(normalized);

  Embedding2D out;
  out.coords.resize(n, 2);
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd v = inv_sqrt.asDiagonal() * eig.vectors.col(c + 1);
    const double scale = v.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(v(i)) > 1e-12 * scale) {
        if (v(i) < 0.0) v = -v;
        break;
      }
    }
    const double lambda = eig.values(c + 1);
    const Eigen::VectorXd Lv = L * v;
    const double residual = (Lv - lambda * degree.cwiseProduct(v)).norm();
    if (residual > 1e-8 * Lv.norm() + 1e-12) {
      std::ostringstream msg;
      msg << "generalized eigenpair " << c + 1 << " residual " << residual << " exceeds tolerance after "
          << eig.sweeps << " Jacobi sweeps";
      throw EmbeddingError(msg.str());
    }
    out.coords.col(c) = v;
    out.eigenvalues[c] = lambda;
    out.residuals[c] = residual;
  }
  out.is_trace.assign(static_cast<std::size_t>(n), false);
  return out;
}

Embedding2D laplacian_eigenmaps(const Eigen::MatrixXd& points, std::size_t k, WeightMode mode) {
  const GraphLaplacian lap = graph_laplacian(knn_graph(points, k, mode));
  return smallest_generalized_eigenvectors(lap.L, lap.degree);
}

Embedding2D embed_with_trace(const Eigen::MatrixXd& train, const Eigen::MatrixXd& trace, std::size_t k,
                             WeightMode mode) {
  if (trace.rows() > 0 && trace.cols() != train.cols()) {
    throw EmbeddingError("trace latents have dimension " + std::to_string(trace.cols()) + ", training latents " +
                         std::to_string(train.cols()));
  }
  Eigen::MatrixXd all(train.rows() + trace.rows(), train.cols());
  all.topRows(train.rows()) = train;
  if (trace.rows() > 0) all.bottomRows(trace.rows()) = trace;
  Embedding2D out = laplacian_eigenmaps(all, k, mode);
  for (Eigen::Index i = train.rows(); i < all.rows(); ++i) out.is_trace[static_cast<std::size_t>(i)] = true;
  return out;
}

}  // namespace lm
