#pragma once

#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "anchored/field.hpp"

namespace anchored {

/// Block-average a field onto a grid coarser by an integer factor per axis.
inline Vector coarsen(const Grid& fine, const Vector& y, const std::vector<int>& factor, Grid* coarse_out = nullptr) {
  if (static_cast<int>(factor.size()) != fine.ndim()) throw InvalidArgument("coarsen: one factor per axis");
  if (y.size() != fine.n_cells()) throw InvalidArgument("coarsen: field size mismatch");
  std::vector<int> dims;
  std::vector<double> spacing;
  for (int a = 0; a < fine.ndim(); ++a) {
    const int f = factor[static_cast<std::size_t>(a)];
    if (f < 1 || fine.dims()[static_cast<std::size_t>(a)] % f != 0)
      throw InvalidArgument("coarsen: factor must divide the axis length");
    dims.push_back(fine.dims()[static_cast<std::size_t>(a)] / f);
    spacing.push_back(fine.spacing()[static_cast<std::size_t>(a)] * f);
  }
  Vector out = Vector::Zero(std::accumulate(dims.begin(), dims.end(), 1, std::multiplies<>()));
  const int fx = factor[0], fy = fine.ndim() == 2 ? factor[1] : 1;
  for (int c = 0; c < fine.n_cells(); ++c) {
    const auto ij = fine.cell_to_index(c);
    const int ci = ij[0] / fx, cj = ij[1] / fy;
    const int cc = fine.ndim() == 2 ? ci + dims[0] * cj : ci;
    out(cc) += y(c);
  }
  out /= static_cast<double>(fx * fy);
  if (coarse_out) {
    bool valid = true;
    for (int d : dims) valid = valid && d >= 2;
    if (!valid) throw InvalidArgument("coarsen: coarse grid needs at least 2 cells per axis");
    *coarse_out = Grid(dims, spacing);
  }
  return out;
}

/// One unconditional draw of the field, fully determined by `seed`.
inline Vector make_synthetic_truth(const Grid& g, const GeostatParams& p, std::uint64_t seed) {
  Rng rng = substream(seed, "synthetic-truth");
  return sample_gaussian(DistanceTable(g).moments(p), rng);
}

}  // namespace anchored
