#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace lm {

struct Edge {
  std::size_t i = 0;  // i < j
  std::size_t j = 0;
  double w = 0.0;
};

enum class WeightMode { heat, binary };

/// Symmetric weighted kNN graph. Edges are stored once with i < j, sorted.
struct NeighborGraph {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<Edge> edges;
  double bandwidth = 0.0;        // heat-kernel sigma (median kNN distance)
  std::size_t repair_edges = 0;  // edges added to make the graph connected
};

class EmbeddingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Euclidean kNN over the rows of `points`, symmetrized by union. Points tied
/// with the k-th neighbor distance are all included, so duplicates are treated
/// alike. Heat weights exp(-d^2 / (2 sigma^2)) with sigma the median kNN edge
/// length (w = 1 when sigma is 0), floored at 1e-10. A disconnected graph is
/// repaired by repeatedly adding the shortest edge between two components;
/// repair edges use bandwidth max(sigma, length).
NeighborGraph knn_graph(const Eigen::MatrixXd& points, std::size_t k, WeightMode mode = WeightMode::heat);

std::size_t component_count(const NeighborGraph& g);

struct GraphLaplacian {
  Eigen::MatrixXd L;       // D - W
  Eigen::VectorXd degree;  // diagonal of D
};

/// Throws EmbeddingError on a disconnected graph.
GraphLaplacian graph_laplacian(const NeighborGraph& g);

struct EigenDecomposition {
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // column i pairs with values[i]
  std::size_t sweeps = 0;
};

/// Cyclic Jacobi rotations for a dense symmetric matrix. Off-diagonal entries
/// with |a_pq| <= tol * ||A||_F are zeroed; converged after a sweep with no
/// rotation left to apply.
EigenDecomposition jacobi_eigen(Eigen::MatrixXd a, double tol = 2.220446049250313e-16, std::size_t max_sweeps = 100);

struct Embedding2D {
  Eigen::MatrixXd coords;  // n x 2
  std::array<double, 2> eigenvalues{0.0, 0.0};
  std::array<double, 2> residuals{0.0, 0.0};  // ||L v - lambda D v||_2
  std::vector<bool> is_trace;                 // row tags for joint embeddings
};

/// Eigenvectors of L v = lambda D v for the 2nd and 3rd smallest eigenvalues,
/// D-normalized, sign fixed so the first nonzero coordinate is positive.
/// Throws EmbeddingError if a residual exceeds 1e-8 ||L v|| + 1e-12.
Embedding2D smallest_generalized_eigenvectors(const Eigen::MatrixXd& L, const Eigen::VectorXd& degree,
                                              std::size_t count = 2);

Embedding2D laplacian_eigenmaps(const Eigen::MatrixXd& points, std::size_t k, WeightMode mode = WeightMode::heat);

/// Joint embedding of training latents and navigation-trace latents; rows
/// [0, n) are training points, [n, n + m) the trace.
Embedding2D embed_with_trace(const Eigen::MatrixXd& train, const Eigen::MatrixXd& trace, std::size_t k,
                             WeightMode mode = WeightMode::heat);

}  // namespace lm
