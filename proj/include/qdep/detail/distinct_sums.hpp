#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <vector>

namespace qdep::detail {

//! Dense N x N matrix, row-major.
struct SquareMatrix
{
  std::size_t n = 0;
  std::vector<double> data;

  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t size, double fill = 0.0)
    : n(size)
    , data(size * size, fill)
  {
  }

  double operator()(std::size_t i, std::size_t j) const { return data[i * n + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * n + j]; }
};

//! Factor A(idx[u], idx[v]) of a product over index slots.
struct SlotEdge
{
  std::size_t matrix;
  std::size_t u;
  std::size_t v;
};

//! Calls visit(labels) for every set partition of {0, ..., m-1}, encoded as a
//! restricted growth string.
template<class Visit>
void
for_each_set_partition(std::size_t m, Visit&& visit)
{
  if (m == 0)
    return;
  std::vector<std::size_t> labels(m, 0), maxima(m, 0);
  for (;;) {
    visit(static_cast<const std::vector<std::size_t>&>(labels));
    std::size_t i = m - 1;
    while (i > 0 && labels[i] == maxima[i - 1] + 1)
      --i;
    if (i == 0)
      return;
    ++labels[i];
    maxima[i] = std::max(maxima[i - 1], labels[i]);
    for (std::size_t j = i + 1; j < m; ++j) {
      labels[j] = 0;
      maxima[j] = maxima[i];
    }
  }
}

//! Sum over all index assignments (repeats allowed) of a product of pairwise
//! factors, by variable elimination. Nodes are index variables; each factor
//! touches at most two of them. Eliminating a node with more than two
//! distinct neighbours would need a 3-way tensor and is rejected; this never
//! happens with five or fewer factors.
class FactorGraphSum
{
public:
  FactorGraphSum(std::size_t nodes, std::size_t n)
    : n_(n)
    , alive_(nodes, true)
  {
  }

  void add_vector(std::size_t node, std::vector<double> v)
  {
    vectors_.push_back({ node, std::move(v) });
  }

  //! Adds f(idx[u], idx[v]) = m(idx[u], idx[v]).
  void add_matrix(std::size_t u, std::size_t v, SquareMatrix m)
  {
    matrices_.push_back({ u, v, std::move(m) });
  }

  double evaluate()
  {
    double scalar = 1.0;
    for (;;) {
      std::size_t best = alive_.size();
      std::size_t best_degree = 0;
      for (std::size_t v = 0; v < alive_.size(); ++v) {
        if (!alive_[v])
          continue;
        const std::size_t d = neighbours(v).size();
        if (best == alive_.size() || d < best_degree) {
          best = v;
          best_degree = d;
        }
      }
      if (best == alive_.size())
        return scalar;
      scalar *= eliminate(best);
    }
  }

private:
  struct VectorFactor
  {
    std::size_t node;
    std::vector<double> data;
  };
  struct MatrixFactor
  {
    std::size_t u, v;
    SquareMatrix data;
  };

  std::vector<std::size_t> neighbours(std::size_t v) const
  {
    std::vector<std::size_t> out;
    for (const auto& m : matrices_) {
      if (m.u == v && std::find(out.begin(), out.end(), m.v) == out.end())
        out.push_back(m.v);
      if (m.v == v && std::find(out.begin(), out.end(), m.u) == out.end())
        out.push_back(m.u);
    }
    return out;
  }

  //! Sums node v out and returns any scalar that falls out of it.
  double eliminate(std::size_t v)
  {
    std::vector<double> g(n_, 1.0);
    bool touched = false;
    for (auto it = vectors_.begin(); it != vectors_.end();) {
      if (it->node == v) {
        for (std::size_t i = 0; i < n_; ++i)
          g[i] *= it->data[i];
        touched = true;
        it = vectors_.erase(it);
      } else {
        ++it;
      }
    }

    // Element-wise product of all matrices between v and each neighbour,
    // oriented as (v, neighbour).
    std::map<std::size_t, SquareMatrix> joined;
    for (auto it = matrices_.begin(); it != matrices_.end();) {
      if (it->u != v && it->v != v) {
        ++it;
        continue;
      }
      const bool forward = it->u == v;
      const std::size_t other = forward ? it->v : it->u;
      auto [pos, inserted] = joined.try_emplace(other, n_, 1.0);
      auto& acc = pos->second;
      for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = 0; j < n_; ++j)
          acc(i, j) *= forward ? it->data(i, j) : it->data(j, i);
      touched = true;
      it = matrices_.erase(it);
    }
    alive_[v] = false;

    if (!touched)
      return static_cast<double>(n_);
    if (joined.empty()) {
      double s = 0.0;
      for (double x : g)
        s += x;
      return s;
    }
    if (joined.size() == 1) {
      const auto& [x, m] = *joined.begin();
      std::vector<double> f(n_, 0.0);
      for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = 0; j < n_; ++j)
          f[j] += g[i] * m(i, j);
      vectors_.push_back({ x, std::move(f) });
      return 1.0;
    }
    if (joined.size() == 2) {
      auto it = joined.begin();
      const auto& [x, mx] = *it++;
      const auto& [y, my] = *it;
      SquareMatrix f(n_, 0.0);
      for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = 0; j < n_; ++j) {
          const double gx = g[i] * mx(i, j);
          for (std::size_t l = 0; l < n_; ++l)
            f(j, l) += gx * my(i, l);
        }
      matrices_.push_back({ x, y, std::move(f) });
      return 1.0;
    }
    throw std::domain_error("factor graph too dense for pairwise elimination");
  }

  std::size_t n_;
  std::vector<bool> alive_;
  std::vector<VectorFactor> vectors_;
  std::vector<MatrixFactor> matrices_;
};

//! sum over pairwise-distinct (idx[0], ..., idx[slots-1]) in [0, N) of
//! prod_e mats[e.matrix](idx[e.u], idx[e.v]).
//!
//! Uses Moebius inversion on the partition lattice: the distinct-index sum is
//! sum over partitions pi of mu(pi) * (sum over indices constant on the blocks
//! of pi), with mu(pi) = prod_blocks (-1)^(|b|-1) (|b|-1)!. Each inner sum is
//! a factor-graph contraction, O(N^2) when every block has at most two
//! distinct neighbours after leaf elimination.
inline double
distinct_index_sum(const std::vector<SquareMatrix>& mats,
                   const std::vector<SlotEdge>& edges,
                   std::size_t slots)
{
  if (mats.empty())
    throw std::invalid_argument("distinct_index_sum needs at least one matrix");
  const std::size_t n = mats.front().n;
  if (slots > n)
    return 0.0;

  double total = 0.0;
  for_each_set_partition(slots, [&](const std::vector<std::size_t>& labels) {
    const std::size_t blocks = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<std::size_t> sizes(blocks, 0);
    for (auto b : labels)
      ++sizes[b];
    double mu = 1.0;
    for (auto s : sizes) {
      for (std::size_t f = 2; f < s; ++f)
        mu *= static_cast<double>(f);
      if (s % 2 == 0)
        mu = -mu;
    }

    FactorGraphSum graph(blocks, n);
    for (const auto& e : edges) {
      const auto bu = labels[e.u];
      const auto bv = labels[e.v];
      const auto& m = mats[e.matrix];
      if (bu == bv) {
        std::vector<double> diag(n);
        for (std::size_t i = 0; i < n; ++i)
          diag[i] = m(i, i);
        graph.add_vector(bu, std::move(diag));
      } else {
        graph.add_matrix(bu, bv, m);
      }
    }
    total += mu * graph.evaluate();
  });
  return total;
}

//! N (N - 1) ... (N - m + 1).
inline double
falling_factorial(std::size_t n, std::size_t m)
{
  if (m > n)
    return 0.0;
  double out = 1.0;
  for (std::size_t i = 0; i < m; ++i)
    out *= static_cast<double>(n - i);
  return out;
}

} // namespace qdep::detail
