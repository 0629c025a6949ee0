#pragma once

#include "vsgp/model.hpp"

#include <cstdint>

namespace vsgp {

struct SimulationSpec {
  Eigen::Index N = 1000;
  int D = 1;
  double sigma2_eps = 0.02;
  double lambda = 0.1;
  double mu_u = -1.6;    // log length-scale mean, about log 0.2
  double tau2_u = 0.25;
  double tau2_z = 1.0;
  Eigen::Index grid_points = 300;
  std::uint64_t seed = 1;
};

/// Observations plus the true latent processes at the inputs and on a held-out grid.
struct SimulatedData {
  Dataset data;  // raw (unstandardised) responses
  Vector z;      // latent function at the inputs
  Vector u;      // log length-scale at the inputs
  Locations grid;
  Vector z_grid;
  Vector u_grid;
};

/// Inputs uniform on [0, 1]^D (sorted when D = 1). The held-out grid is an even grid on
/// [0, 1] for D = 1 and uniform draws otherwise. u and z are drawn jointly at inputs and grid.
SimulatedData simulate_two_level(const SimulationSpec& spec);

}  // namespace vsgp
