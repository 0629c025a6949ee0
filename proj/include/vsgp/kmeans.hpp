#pragma once

#include "vsgp/kernels.hpp"

#include <cstdint>
#include <vector>

namespace vsgp {

struct KMeansResult {
  Locations centers;
  std::vector<Eigen::Index> assignment;
  std::vector<double> sse_trace;  // within-cluster SSE after each Lloyd iteration
  int iterations = 0;
};

/// k-means++ seeding followed by Lloyd iterations (at most max_iter, stopping once no
/// center moves by more than tol). Deterministic given the seed.
KMeansResult kmeans(const Locations& X, Eigen::Index M, std::uint64_t seed, int max_iter = 100,
                    double tol = 1e-8);

/// Cluster centers only.
Locations kmeans_inducing(const Locations& X, Eigen::Index M, std::uint64_t seed);

}  // namespace vsgp
