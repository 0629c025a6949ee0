#include "vsgp/kmeans.hpp"

#include <limits>
#include <random>
#include <stdexcept>

namespace vsgp {

namespace {

double row_sqdist(const Locations& A, Eigen::Index i, const Locations& B, Eigen::Index j) {
  return (A.row(i) - B.row(j)).squaredNorm();
}

}  // namespace

KMeansResult kmeans(const Locations& X, Eigen::Index M, std::uint64_t seed, int max_iter, double tol) {
  const Eigen::Index N = X.rows();
  if (M < 1) throw std::invalid_argument("k-means needs M >= 1");
  if (M > N) throw std::invalid_argument("k-means needs M <= N");
  std::mt19937_64 rng(seed);

  // k-means++ seeding.
  KMeansResult out;
  out.centers.resize(M, X.cols());
  out.centers.row(0) = X.row(std::uniform_int_distribution<Eigen::Index>(0, N - 1)(rng));
  std::vector<double> d2(static_cast<std::size_t>(N), std::numeric_limits<double>::infinity());
  for (Eigen::Index m = 1; m < M; ++m) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < N; ++i) {
      auto& d = d2[static_cast<std::size_t>(i)];
      d = std::min(d, row_sqdist(X, i, out.centers, m - 1));
      total += d;
    }
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = N - 1;
      for (Eigen::Index i = 0; i < N; ++i) {
        r -= d2[static_cast<std::size_t>(i)];
        if (r < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::uniform_int_distribution<Eigen::Index>(0, N - 1)(rng);
    }
    out.centers.row(m) = X.row(pick);
  }

  out.assignment.assign(static_cast<std::size_t>(N), 0);
  for (int it = 0; it < max_iter; ++it) {
    for (Eigen::Index i = 0; i < N; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index m = 0; m < M; ++m) {
        const double d = row_sqdist(X, i, out.centers, m);
        if (d < best) {
          best = d;
          out.assignment[static_cast<std::size_t>(i)] = m;
        }
      }
    }
    Locations next = Locations::Zero(M, X.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(M), 0);
    for (Eigen::Index i = 0; i < N; ++i) {
      const Eigen::Index m = out.assignment[static_cast<std::size_t>(i)];
      next.row(m) += X.row(i);
      ++counts[static_cast<std::size_t>(m)];
    }
    double shift = 0.0;
    for (Eigen::Index m = 0; m < M; ++m) {
      const auto c = counts[static_cast<std::size_t>(m)];
      if (c == 0) {
        next.row(m) = out.centers.row(m);  // empty cluster keeps its center
      } else {
        next.row(m) /= static_cast<double>(c);
      }
      shift = std::max(shift, (next.row(m) - out.centers.row(m)).norm());
    }
    out.centers = next;
    // SSE of the assignment against the updated centers.
    double updated = 0.0;
    for (Eigen::Index i = 0; i < N; ++i) {
      updated += row_sqdist(X, i, out.centers, out.assignment[static_cast<std::size_t>(i)]);
    }
    out.sse_trace.push_back(updated);
    out.iterations = it + 1;
    if (shift <= tol) break;
  }
  return out;
}

Locations kmeans_inducing(const Locations& X, Eigen::Index M, std::uint64_t seed) {
  return kmeans(X, M, seed).centers;
}

}  // namespace vsgp
