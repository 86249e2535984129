#pragma once

// Partitioning anchorsets: each support is an axis-aligned block of cells and
// its anchor is the mean of Y over the block.

#include <algorithm>
#include <array>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "anchored/field.hpp"

namespace anchored {

/// Half-open block [lo, hi) per axis; 1-D grids use axis 0 only.
struct Block {
  std::array<int, 2> lo{0, 0};
  std::array<int, 2> hi{1, 1};

  int extent(int axis) const { return hi[axis] - lo[axis]; }
  int size() const { return extent(0) * extent(1); }
  bool operator==(const Block&) const = default;
};

/// Direct observations ℓ = L·y of the field.
struct LinearData {
  Matrix L;
  Vector ell;

  int size() const { return static_cast<int>(ell.size()); }
  bool empty() const { return ell.size() == 0; }

  static LinearData point_values(const Grid& g, const std::vector<int>& cells, const Vector& values) {
    if (static_cast<Eigen::Index>(cells.size()) != values.size())
      throw InvalidArgument("linear data: cell/value count mismatch");
    LinearData d;
    d.L = Matrix::Zero(static_cast<Eigen::Index>(cells.size()), g.n_cells());
    for (std::size_t r = 0; r < cells.size(); ++r) {
      if (cells[r] < 0 || cells[r] >= g.n_cells()) throw InvalidArgument("linear data: cell outside grid");
      d.L(static_cast<Eigen::Index>(r), cells[r]) = 1.0;
    }
    d.ell = values;
    return d;
  }
};

/// One split of a support: `axis` is cut at absolute index `cut`.
struct SplitRecord {
  int parent = 0;
  int axis = 0;
  int cut = 0;
  bool operator==(const SplitRecord&) const = default;
};

/// Split a block along its longest axis (ties go to axis 0) at the median;
/// the lower child receives the extra cell when the count is odd.
inline std::optional<SplitRecord> median_split(const Block& b, int ndim) {
  if (b.size() < 2) return std::nullopt;
  int axis = 0;
  if (ndim == 2 && b.extent(1) > b.extent(0)) axis = 1;
  const int len = b.extent(axis);
  return SplitRecord{-1, axis, b.lo[axis] + (len + 1) / 2};
}

inline std::pair<Block, Block> split_block(const Block& b, int axis, int cut) {
  if (cut <= b.lo[axis] || cut >= b.hi[axis]) throw InvalidArgument("split: cut outside block");
  Block lo = b, hi = b;
  lo.hi[axis] = cut;
  hi.lo[axis] = cut;
  return {lo, hi};
}

class AnchorSet {
 public:
  AnchorSet() = default;
  AnchorSet(Grid grid, std::vector<Block> blocks) : grid_(std::move(grid)), blocks_(std::move(blocks)) {
    rebuild();
  }

  const Grid& grid() const { return grid_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const std::vector<std::vector<int>>& supports() const { return supports_; }
  const std::vector<SplitRecord>& history() const { return history_; }
  int size() const { return static_cast<int>(blocks_.size()); }
  const Matrix& H() const { return h_; }

  /// Replace support `parent` by its two children (lower child keeps the
  /// index, upper child follows it).
  AnchorSet split(int parent, int axis, int cut) const {
    if (parent < 0 || parent >= size()) throw InvalidArgument("split: support index out of range");
    auto [lo, hi] = split_block(blocks_[parent], axis, cut);
    std::vector<Block> blocks = blocks_;
    blocks[parent] = lo;
    blocks.insert(blocks.begin() + parent + 1, hi);
    AnchorSet out(grid_, std::move(blocks));
    out.history_ = history_;
    out.history_.push_back({parent, axis, cut});
    return out;
  }

  AnchorSet replay(const std::vector<SplitRecord>& splits) const {
    AnchorSet a = *this;
    for (const auto& s : splits) a = a.split(s.parent, s.axis, s.cut);
    return a;
  }

  std::string support_spec(int i) const {
    const Block& b = blocks_.at(static_cast<std::size_t>(i));
    std::ostringstream os;
    os << "x" << b.lo[0] << "-" << b.hi[0] - 1;
    if (grid_.ndim() == 2) os << ";y" << b.lo[1] << "-" << b.hi[1] - 1;
    return os.str();
  }

  bool operator==(const AnchorSet& o) const { return grid_ == o.grid_ && blocks_ == o.blocks_; }

 private:
  void rebuild() {
    const int n = grid_.n_cells();
    std::vector<int> owner(static_cast<std::size_t>(n), -1);
    supports_.assign(blocks_.size(), {});
    for (std::size_t s = 0; s < blocks_.size(); ++s) {
      const Block& b = blocks_[s];
      const int y_hi = grid_.ndim() == 2 ? b.hi[1] : 1;
      const int y_lo = grid_.ndim() == 2 ? b.lo[1] : 0;
      if (b.size() < 1) throw InvalidAnchorset("anchorset: empty support");
      for (int a = 0; a < grid_.ndim(); ++a)
        if (b.lo[a] < 0 || b.hi[a] > grid_.dims()[static_cast<std::size_t>(a)])
          throw InvalidAnchorset("anchorset: support outside grid");
      for (int j = y_lo; j < y_hi; ++j)
        for (int i = b.lo[0]; i < b.hi[0]; ++i) {
          const int c = grid_.index_to_cell(i, j);
          if (owner[static_cast<std::size_t>(c)] != -1) throw InvalidAnchorset("anchorset: supports overlap");
          owner[static_cast<std::size_t>(c)] = static_cast<int>(s);
          supports_[s].push_back(c);
        }
    }
    if (std::find(owner.begin(), owner.end(), -1) != owner.end())
      throw InvalidAnchorset("anchorset: supports do not cover the grid");
    h_ = Matrix::Zero(static_cast<Eigen::Index>(blocks_.size()), n);
    for (std::size_t s = 0; s < supports_.size(); ++s) {
      const double w = 1.0 / static_cast<double>(supports_[s].size());
      for (int c : supports_[s]) h_(static_cast<Eigen::Index>(s), c) = w;
    }
  }

  Grid grid_;
  std::vector<Block> blocks_;
  std::vector<std::vector<int>> supports_;
  std::vector<SplitRecord> history_;
  Matrix h_;
};

/// Bisect every axis: 2 supports in 1-D, 4 in 2-D (lower halves take the
/// extra cell on odd axes).
inline AnchorSet initial_anchorset(const Grid& g) {
  const int cx = (g.dims()[0] + 1) / 2;
  if (g.ndim() == 1) {
    return AnchorSet(g, {Block{{0, 0}, {cx, 1}}, Block{{cx, 0}, {g.dims()[0], 1}}});
  }
  const int cy = (g.dims()[1] + 1) / 2;
  const int nx = g.dims()[0], ny = g.dims()[1];
  return AnchorSet(g, {Block{{0, 0}, {cx, cy}}, Block{{cx, 0}, {nx, cy}}, Block{{0, cy}, {cx, ny}},
                       Block{{cx, cy}, {nx, ny}}});
}

inline Vector apply_anchors(const AnchorSet& a, const Vector& y) {
  if (y.size() != a.grid().n_cells()) throw InvalidArgument("apply_anchors: field size mismatch");
  Vector theta(a.size());
  for (int s = 0; s < a.size(); ++s) {
    double sum = 0.0;
    for (int c : a.supports()[static_cast<std::size_t>(s)]) sum += y(c);
    theta(s) = sum / static_cast<double>(a.supports()[static_cast<std::size_t>(s)].size());
  }
  return theta;
}

/// [H; L] and the stacked constraint values [θ; ℓ].
inline Matrix stacked_constraints(const Matrix& h, const LinearData* linear) {
  if (!linear || linear->empty()) return h;
  Matrix a(h.rows() + linear->L.rows(), h.cols());
  a << h, linear->L;
  return a;
}

inline Vector stacked_values(const Vector& theta, const LinearData* linear) {
  if (!linear || linear->empty()) return theta;
  Vector v(theta.size() + linear->ell.size());
  v << theta, linear->ell;
  return v;
}

/// Joint normal moments of (H·y, L·y) under the field moments.
inline GaussianMoments anchor_joint_moments(const Matrix& h, const GaussianMoments& field,
                                            const LinearData* linear) {
  const Matrix a = stacked_constraints(h, linear);
  GaussianMoments out{a * field.mean, a * field.cov * a.transpose()};
  symmetrize(out.cov);
  return out;
}

/// Prior moments of the anchors, conditioned on the linear data if present.
inline GaussianMoments anchor_prior_moments(const AnchorSet& a, const GaussianMoments& field,
                                            const LinearData* linear = nullptr) {
  GaussianMoments joint = anchor_joint_moments(a.H(), field, linear);
  const Eigen::Index k = a.size();
  if (numeric_rank(stacked_constraints(a.H(), linear)) < joint.mean.size())
    throw InvalidAnchorset("anchor prior: [H; L] is rank deficient");
  if (!linear || linear->empty()) return joint;
  const Eigen::Index m = linear->size();
  const Matrix s_ll = joint.cov.bottomRightCorner(m, m);
  const Matrix s_tl = joint.cov.topRightCorner(k, m);
  JitteredCholesky f;
  try {
    f = cholesky_with_jitter(s_ll, s_ll.diagonal().cwiseAbs().maxCoeff());
  } catch (const NumericalError& e) {
    throw InvalidAnchorset(std::string("anchor prior: singular Gram matrix: ") + e.what());
  }
  GaussianMoments out;
  out.mean = joint.mean.head(k) + s_tl * f.llt.solve(linear->ell - joint.mean.tail(m));
  out.cov = joint.cov.topLeftCorner(k, k) - s_tl * f.llt.solve(s_tl.transpose());
  symmetrize(out.cov);
  return out;
}

/// Field draw honouring H·y = θ and L·y = ℓ exactly.
inline Vector sample_field_given_anchors(const AnchorSet& a, const Vector& theta, const GaussianMoments& field,
                                         const LinearData* linear, Rng& rng) {
  if (theta.size() != a.size()) throw InvalidArgument("sample_field_given_anchors: anchor count mismatch");
  LinearConditioner cond(field, stacked_constraints(a.H(), linear));
  return cond.simulate(stacked_values(theta, linear), rng);
}

/// One alternative anchorset: the incumbent with `parents` split.
struct SplitCandidate {
  int parent_index = 0;
  int axis = 0;
  int cut = 0;
  Block lower;
  Block upper;
};

inline std::vector<SplitCandidate> enumerate_split_candidates(const AnchorSet& a) {
  std::vector<SplitCandidate> out;
  for (int s = 0; s < a.size(); ++s) {
    const Block& b = a.blocks()[static_cast<std::size_t>(s)];
    auto split = median_split(b, a.grid().ndim());
    if (!split) continue;
    auto [lo, hi] = split_block(b, split->axis, split->cut);
    out.push_back({s, split->axis, split->cut, lo, hi});
  }
  return out;
}

/// A candidate anchorset expressed through the umbrella: θ_c = B·θ*.
struct CandidateMap {
  std::vector<int> split_parents;  // empty for the incumbent
  AnchorSet anchorset;
  Matrix restriction;
};

struct Umbrella {
  AnchorSet anchorset;
  std::vector<CandidateMap> candidates;  // [0] is always the incumbent
};

/// Umbrella anchorset of all children plus restriction maps for the
/// incumbent and every alternative. With `pairs`, alternatives that split
/// two supports at once are added after the single splits.
inline Umbrella umbrella_anchorset(const AnchorSet& a, const std::vector<SplitCandidate>& candidates,
                                   bool pairs = false) {
  std::vector<int> child_start(static_cast<std::size_t>(a.size()));
  std::vector<const SplitCandidate*> by_parent(static_cast<std::size_t>(a.size()), nullptr);
  for (const auto& c : candidates) by_parent.at(static_cast<std::size_t>(c.parent_index)) = &c;

  std::vector<Block> blocks;
  for (int s = 0; s < a.size(); ++s) {
    child_start[static_cast<std::size_t>(s)] = static_cast<int>(blocks.size());
    if (const auto* c = by_parent[static_cast<std::size_t>(s)]) {
      blocks.push_back(c->lower);
      blocks.push_back(c->upper);
    } else {
      blocks.push_back(a.blocks()[static_cast<std::size_t>(s)]);
    }
  }
  Umbrella u{AnchorSet(a.grid(), blocks), {}};
  const int n_star = u.anchorset.size();

  auto build = [&](const std::vector<int>& split) {
    std::vector<int> sorted = split;
    std::sort(sorted.begin(), sorted.end());
    AnchorSet cand = a;
    for (auto it = sorted.rbegin(); it != sorted.rend(); ++it) {
      const auto* c = by_parent[static_cast<std::size_t>(*it)];
      cand = cand.split(c->parent_index, c->axis, c->cut);
    }
    Matrix b = Matrix::Zero(cand.size(), n_star);
    int row = 0;
    for (int s = 0; s < a.size(); ++s) {
      const int start = child_start[static_cast<std::size_t>(s)];
      const auto* c = by_parent[static_cast<std::size_t>(s)];
      const bool is_split = std::find(sorted.begin(), sorted.end(), s) != sorted.end();
      if (!c) {
        b(row++, start) = 1.0;
      } else if (is_split) {
        b(row++, start) = 1.0;
        b(row++, start + 1) = 1.0;
      } else {
        const double total = a.blocks()[static_cast<std::size_t>(s)].size();
        b(row, start) = c->lower.size() / total;
        b(row, start + 1) = c->upper.size() / total;
        ++row;
      }
    }
    u.candidates.push_back({split, std::move(cand), std::move(b)});
  };

  build({});
  for (const auto& c : candidates) build({c.parent_index});
  if (pairs)
    for (std::size_t i = 0; i < candidates.size(); ++i)
      for (std::size_t j = i + 1; j < candidates.size(); ++j)
        build({candidates[i].parent_index, candidates[j].parent_index});
  return u;
}

}  // namespace anchored
