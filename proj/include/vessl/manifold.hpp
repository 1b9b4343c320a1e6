#ifndef VESSL_MANIFOLD_HPP
#define VESSL_MANIFOLD_HPP

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <numeric>
#include <vector>

#include "vessl/common.hpp"

namespace vessl {

struct NeighborGraph {
  int n_points = 0;
  std::vector<std::vector<int>> adjacency;  // sorted, symmetric, no self loops
  std::vector<int> isolated;
};

// Mutual kNN: (i, j) is an edge iff each point is among the other's k nearest
// by Euclidean distance. Distance ties are broken toward the lower index so
// duplicate points behave reproducibly.
inline NeighborGraph symmetric_knn(const Eigen::MatrixXd& points, int k,
                                   unsigned threads = 1) {
  const int n = static_cast<int>(points.rows());
  if (k < 1) throw Error(ErrorCategory::bad_args, "k must be >= 1");
  if (n <= k) throw Error(ErrorCategory::bad_args, "need more points than k");

  const Eigen::VectorXd sq = points.rowwise().squaredNorm();
  std::vector<std::vector<int>> nearest(static_cast<std::size_t>(n));

  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t ui) {
    const int i = static_cast<int>(ui);
    Eigen::VectorXd d2 = sq.array() + sq(i) - 2.0 * (points * points.row(i).transpose()).array();
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    idx.erase(idx.begin() + i);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
      if (d2(a) != d2(b)) return d2(a) < d2(b);
      return a < b;
    });
    nearest[ui].assign(idx.begin(), idx.begin() + k);
  });

  NeighborGraph g;
  g.n_points = n;
  g.adjacency.assign(static_cast<std::size_t>(n), {});
  for (int i = 0; i < n; ++i) {
    for (int j : nearest[static_cast<std::size_t>(i)]) {
      if (j < i) continue;  // handle each unordered pair once
      const auto& back = nearest[static_cast<std::size_t>(j)];
      if (std::find(back.begin(), back.end(), i) != back.end()) {
        g.adjacency[static_cast<std::size_t>(i)].push_back(j);
        g.adjacency[static_cast<std::size_t>(j)].push_back(i);
      }
    }
  }
  for (auto& a : g.adjacency) std::sort(a.begin(), a.end());
  for (int i = 0; i < n; ++i)
    if (g.adjacency[static_cast<std::size_t>(i)].empty()) g.isolated.push_back(i);
  return g;
}

namespace detail {

inline std::vector<int> connected_components(const NeighborGraph& g,
                                             const std::vector<char>& active) {
  std::vector<int> comp(static_cast<std::size_t>(g.n_points), -1);
  int c = 0;
  std::vector<int> stack;
  for (int s = 0; s < g.n_points; ++s) {
    if (!active[static_cast<std::size_t>(s)] || comp[static_cast<std::size_t>(s)] >= 0) continue;
    stack.push_back(s);
    comp[static_cast<std::size_t>(s)] = c;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v : g.adjacency[static_cast<std::size_t>(u)]) {
        if (active[static_cast<std::size_t>(v)] && comp[static_cast<std::size_t>(v)] < 0) {
          comp[static_cast<std::size_t>(v)] = c;
          stack.push_back(v);
        }
      }
    }
    ++c;
  }
  return comp;
}

// largest-magnitude entry made positive
inline void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
  int at = 0;
  v.cwiseAbs().maxCoeff(&at);
  if (v(at) < 0.0) v = -v;
}

}  // namespace detail

struct Embedding {
  Eigen::MatrixXd coords;          // n_kept x out_dim
  Eigen::VectorXd eigvals;         // out_dim
  std::vector<int> kept_indices;   // into the original point set
  std::vector<int> dropped_indices;
  int informative_axes = 0;        // pca: axes with non-negligible variance
};

struct LtsaOptions {
  bool largest_eigenvalues = false;  // alternate selection convention
  unsigned threads = 1;
};

// Local tangent space alignment over the symmetric kNN graph. Points that end
// up isolated or with fewer than L+1 neighbors are dropped, and only the
// largest connected component of the remainder is embedded.
inline Embedding ltsa_embed(const Eigen::MatrixXd& points, int k, int intrinsic_dim,
                            int out_dim = -1, const LtsaOptions& opts = {}) {
  const int n = static_cast<int>(points.rows());
  const int L = intrinsic_dim;
  if (out_dim < 0) out_dim = L + 1;
  if (k < L + 1) throw Error(ErrorCategory::bad_args, "k must be at least L+1");

  const NeighborGraph g = symmetric_knn(points, k, opts.threads);

  // neighborhood of i is {i} plus its graph neighbors
  std::vector<char> active(static_cast<std::size_t>(n), 1);
  for (int i = 0; i < n; ++i)
    if (static_cast<int>(g.adjacency[static_cast<std::size_t>(i)].size()) + 1 < L + 1)
      active[static_cast<std::size_t>(i)] = 0;

  const std::vector<int> comp = detail::connected_components(g, active);
  int n_comp = 0;
  for (int i = 0; i < n; ++i) n_comp = std::max(n_comp, comp[static_cast<std::size_t>(i)] + 1);
  std::vector<int> comp_size(static_cast<std::size_t>(std::max(1, n_comp)), 0);
  for (int i = 0; i < n; ++i)
    if (comp[static_cast<std::size_t>(i)] >= 0) ++comp_size[static_cast<std::size_t>(comp[static_cast<std::size_t>(i)])];
  const int main_comp = static_cast<int>(
      std::max_element(comp_size.begin(), comp_size.end()) - comp_size.begin());

  Embedding emb;
  std::vector<int> local(static_cast<std::size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    if (active[static_cast<std::size_t>(i)] && comp[static_cast<std::size_t>(i)] == main_comp) {
      local[static_cast<std::size_t>(i)] = static_cast<int>(emb.kept_indices.size());
      emb.kept_indices.push_back(i);
    } else {
      emb.dropped_indices.push_back(i);
    }
  }
  const int m = static_cast<int>(emb.kept_indices.size());
  if (m < out_dim + 1)
    throw Error(ErrorCategory::numeric_error, "dominant component too small to embed");

  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(m, m);
  for (int li = 0; li < m; ++li) {
    const int i = emb.kept_indices[static_cast<std::size_t>(li)];
    std::vector<int> nb;
    nb.push_back(li);
    for (int j : g.adjacency[static_cast<std::size_t>(i)])
      if (local[static_cast<std::size_t>(j)] >= 0) nb.push_back(local[static_cast<std::size_t>(j)]);
    const int ni = static_cast<int>(nb.size());
    if (ni < L + 1) continue;

    Eigen::MatrixXd Xi(ni, points.cols());
    for (int r = 0; r < ni; ++r)
      Xi.row(r) = points.row(emb.kept_indices[static_cast<std::size_t>(nb[static_cast<std::size_t>(r)])]);
    Xi.rowwise() -= Xi.colwise().mean();

    // orthonormal basis of [1/sqrt(ni), top-L left singular vectors]
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Xi, Eigen::ComputeThinU);
    Eigen::MatrixXd G(ni, L + 1);
    G.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(ni)));
    G.rightCols(L) = svd.matrixU().leftCols(L);

    // accumulate I - G G^T over the neighborhood
    Eigen::MatrixXd W = Eigen::MatrixXd::Identity(ni, ni) - G * G.transpose();
    for (int r = 0; r < ni; ++r)
      for (int cdx = 0; cdx < ni; ++cdx)
        B(nb[static_cast<std::size_t>(r)], nb[static_cast<std::size_t>(cdx)]) += W(r, cdx);
  }

  // The constant vector spans B's null space by construction. Shift its
  // eigenvalue up so the smallest remaining eigenvectors are well defined
  // even when the null space is degenerate (exactly affine data).
  if (!opts.largest_eigenvalues) {
    const double shift = B.trace() + 1.0;
    B.array() += shift / static_cast<double>(m);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
  if (es.info() != Eigen::Success)
    throw Error(ErrorCategory::numeric_error, "alignment matrix eigensolve failed");

  emb.coords.resize(m, out_dim);
  emb.eigvals.resize(out_dim);
  if (opts.largest_eigenvalues) {
    for (int c = 0; c < out_dim; ++c) {
      const int src = m - 1 - c;
      emb.coords.col(c) = es.eigenvectors().col(src);
      emb.eigvals(c) = es.eigenvalues()(src);
    }
  } else {
    for (int c = 0; c < out_dim; ++c) {
      emb.coords.col(c) = es.eigenvectors().col(c);
      emb.eigvals(c) = es.eigenvalues()(c);
    }
  }
  for (int c = 0; c < out_dim; ++c) detail::fix_sign(emb.coords.col(c));
  return emb;
}

inline Embedding pca_embed(const Eigen::MatrixXd& points, int out_dim) {
  const int n = static_cast<int>(points.rows());
  if (n <= out_dim) throw Error(ErrorCategory::bad_args, "need more points than out_dim");

  Eigen::MatrixXd centered = points.rowwise() - points.colwise().mean();
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success)
    throw Error(ErrorCategory::numeric_error, "covariance eigensolve failed");

  const int D = static_cast<int>(points.cols());
  Embedding emb;
  emb.coords.resize(n, out_dim);
  emb.eigvals.resize(out_dim);
  const double scale = es.eigenvalues().cwiseMax(0.0).maxCoeff();
  for (int c = 0; c < out_dim; ++c) {
    const int src = D - 1 - c;
    Eigen::VectorXd axis = es.eigenvectors().col(src);
    detail::fix_sign(axis);
    emb.coords.col(c) = centered * axis;
    emb.eigvals(c) = es.eigenvalues()(src);
    if (emb.eigvals(c) > 1e-12 * std::max(1.0, scale)) ++emb.informative_axes;
  }
  emb.kept_indices.resize(static_cast<std::size_t>(n));
  std::iota(emb.kept_indices.begin(), emb.kept_indices.end(), 0);
  return emb;
}

}  // namespace vessl

#endif
