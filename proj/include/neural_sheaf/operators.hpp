#pragma once

// Coboundary, Laplacian and harmonic-extension operators of the neural sheaf.
//
// Edge values follow the downstream-minus-upstream convention,
//   (delta x)_e = F_{head <| e} x_head - F_{tail <| e} x_tail.
// The dense assemblies below take the output restriction map to be the
// identity; a nonlinear phi enters only through the output potential.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "neural_sheaf/errors.hpp"
#include "neural_sheaf/network.hpp"
#include "neural_sheaf/sheaf.hpp"

namespace neural_sheaf {

namespace detail {

template <typename Scalar>
void check_pattern(const NeuralSheaf<Scalar>& sheaf, const ActivationPattern& pattern, Eigen::Index columns) {
  const auto& spec = sheaf.network();
  if (pattern.layers() != spec.hidden_layers()) {
    throw DimensionError("pattern has " + std::to_string(pattern.layers()) + " layers, network has " +
                         std::to_string(spec.hidden_layers()));
  }
  for (int l = 1; l <= spec.hidden_layers(); ++l) {
    if (pattern.layer(l).rows() != spec.dim(l) || pattern.layer(l).cols() != columns) {
      throw DimensionError("pattern layer " + std::to_string(l) + " has the wrong shape");
    }
  }
}

template <typename Scalar>
void check_cochain(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& values) {
  if (values.rows() != sheaf.dimension()) {
    throw DimensionError("cochain has " + std::to_string(values.rows()) + " rows, sheaf expects " +
                         std::to_string(sheaf.dimension()));
  }
}

template <typename Scalar>
Eigen::Index pin_base(const NeuralSheaf<Scalar>& sheaf, const PinSpec<Scalar>& pin) {
  return pin.site == PinSite::output ? sheaf.output_offset() : sheaf.activation_offset(pin.layer);
}

template <typename Scalar>
const PinSpec<Scalar>& pin_of(const NeuralSheaf<Scalar>& sheaf, const Edge& e) {
  return sheaf.pins().at(static_cast<std::size_t>(e.layer));
}

/// Dense restriction maps (tail, head) of edge `e` for one pattern column.
template <typename Scalar>
std::pair<MatrixX<Scalar>, MatrixX<Scalar>> restriction_maps(const NeuralSheaf<Scalar>& sheaf, const Edge& e,
                                                             const ActivationPattern& pattern, Eigen::Index column) {
  using Matrix = MatrixX<Scalar>;
  const auto& spec = sheaf.network();
  const Eigen::Index tail_dim = sheaf.vertex(e.tail).dim;
  const Eigen::Index head_dim = sheaf.vertex(e.head).dim;
  switch (e.kind) {
    case EdgeKind::weight:
      return {extend_weight<Scalar>(spec.weight(e.layer), spec.bias(e.layer)), Matrix::Identity(e.dim, head_dim)};
    case EdgeKind::activation: {
      Matrix r = Matrix::Zero(e.dim, tail_dim);
      for (Eigen::Index j = 0; j < e.dim; ++j) r(j, j) = pattern.layer(e.layer)(j, column) ? Scalar(1) : Scalar(0);
      return {r, Matrix::Identity(e.dim, head_dim)};
    }
    case EdgeKind::output:
      return {Matrix::Identity(e.dim, tail_dim), Matrix::Identity(e.dim, head_dim)};
    case EdgeKind::pin: {
      const auto& pin = pin_of(sheaf, e);
      using std::sqrt;
      const Scalar root = sqrt(*pin.gamma);
      Matrix p = Matrix::Zero(e.dim, tail_dim);
      for (std::size_t i = 0; i < pin.indices.size(); ++i) p(static_cast<Eigen::Index>(i), pin.indices[i]) = root;
      return {p, root * Matrix::Identity(e.dim, head_dim)};
    }
  }
  throw UnsupportedStructureError("unknown edge kind");
}

}  // namespace detail

/// Per-edge discrepancies under an explicit activation pattern, in edge order.
/// The output edge carries y_hat - phi(z^(k+1)).
template <typename Scalar>
std::vector<MatrixX<Scalar>> coboundary_apply(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& v,
                                              const ActivationPattern& pattern) {
  using Matrix = MatrixX<Scalar>;
  detail::check_cochain(sheaf, v);
  detail::check_pattern(sheaf, pattern, v.cols());
  const auto& spec = sheaf.network();
  const int k = spec.hidden_layers();
  std::vector<Matrix> out;
  out.reserve(sheaf.edges().size());
  for (const Edge& e : sheaf.edges()) {
    switch (e.kind) {
      case EdgeKind::weight: {
        const int l = e.layer;
        const Eigen::Index base = sheaf.activation_offset(l - 1);
        const Matrix upstream = spec.weight(l) * v.middleRows(base, spec.dim(l - 1)) +
                                spec.bias(l).asDiagonal() * v.middleRows(base + spec.dim(l - 1), spec.dim(l));
        out.push_back(v.middleRows(sheaf.pre_offset(l), spec.dim(l)) - upstream);
        break;
      }
      case EdgeKind::activation: {
        const int l = e.layer;
        const Matrix z = v.middleRows(sheaf.pre_offset(l), spec.dim(l));
        out.push_back(v.middleRows(sheaf.activation_offset(l), spec.dim(l)) - apply_mask(pattern.layer(l), z));
        break;
      }
      case EdgeKind::output: {
        const Matrix z = v.middleRows(sheaf.pre_offset(k + 1), spec.output_dim());
        out.push_back(v.middleRows(sheaf.output_offset(), spec.output_dim()) - activate(spec.output_activation, z));
        break;
      }
      case EdgeKind::pin: {
        const auto& pin = detail::pin_of(sheaf, e);
        using std::sqrt;
        const Scalar root = sqrt(*pin.gamma);
        const Eigen::Index base = detail::pin_base(sheaf, pin);
        Matrix selected(e.dim, v.cols());
        for (std::size_t i = 0; i < pin.indices.size(); ++i) {
          selected.row(static_cast<Eigen::Index>(i)) = v.row(base + pin.indices[i]);
        }
        out.push_back(root * (sheaf.block(v, e.head) - selected));
        break;
      }
    }
  }
  return out;
}

template <typename Scalar>
std::vector<MatrixX<Scalar>> coboundary_apply(const NeuralSheaf<Scalar>& sheaf, const Cochain<Scalar>& x,
                                              const ActivationPattern& pattern) {
  return coboundary_apply(sheaf, x.values, pattern);
}

/// Discrepancies with the pattern recomputed from the cochain's own z blocks.
template <typename Scalar>
std::vector<MatrixX<Scalar>> coboundary_apply(const NeuralSheaf<Scalar>& sheaf, const Cochain<Scalar>& x) {
  return coboundary_apply(sheaf, x, current_pattern(sheaf, x.values));
}

template <typename Scalar>
struct DiscordBreakdown {
  Scalar total = 0;
  std::vector<Scalar> per_edge;
  std::vector<std::string> names;
};

/// ||delta x||^2 (not halved), summed over edges and columns, with the
/// pattern taken from the current z blocks.
template <typename Scalar>
DiscordBreakdown<Scalar> total_discord(const NeuralSheaf<Scalar>& sheaf, const Cochain<Scalar>& x) {
  const auto values = coboundary_apply(sheaf, x);
  DiscordBreakdown<Scalar> d;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Scalar s = values[i].squaredNorm();
    d.per_edge.push_back(s);
    d.names.push_back(sheaf.edges()[i].name);
  }
  for (const Scalar s : d.per_edge) d.total += s;
  return d;
}

/// Dense coboundary (sum of edge dims) x (sheaf dimension) for one pattern column.
template <typename Scalar>
MatrixX<Scalar> coboundary_matrix(const NeuralSheaf<Scalar>& sheaf, const ActivationPattern& pattern,
                                  Eigen::Index column = 0) {
  detail::check_pattern(sheaf, pattern, pattern.columns());
  Eigen::Index rows = 0;
  for (const Edge& e : sheaf.edges()) rows += e.dim;
  MatrixX<Scalar> delta = MatrixX<Scalar>::Zero(rows, sheaf.dimension());
  Eigen::Index row = 0;
  for (const Edge& e : sheaf.edges()) {
    const auto [tail, head] = detail::restriction_maps(sheaf, e, pattern, column);
    const Vertex& t = sheaf.vertex(e.tail);
    const Vertex& h = sheaf.vertex(e.head);
    delta.block(row, h.offset, e.dim, h.dim) += head;
    delta.block(row, t.offset, e.dim, t.dim) -= tail;
    row += e.dim;
  }
  return delta;
}

/// Columns of the coboundary on the free coordinates. Square and block
/// lower-unitriangular for unpinned sheaves (edges and free blocks share the
/// path order).
template <typename Scalar>
MatrixX<Scalar> assemble_delta_omega(const NeuralSheaf<Scalar>& sheaf, const ActivationPattern& pattern,
                                     Eigen::Index column = 0) {
  if (sheaf.has_pins()) throw UnsupportedStructureError("restricted coboundary is not square on a pinned sheaf");
  const MatrixX<Scalar> delta = coboundary_matrix(sheaf, pattern, column);
  MatrixX<Scalar> out(delta.rows(), sheaf.free_count());
  Eigen::Index c = 0;
  for (auto idx : sheaf.free_indices()) out.col(c++) = delta.col(idx);
  return out;
}

template <typename Scalar>
MatrixX<Scalar> assemble_delta_boundary(const NeuralSheaf<Scalar>& sheaf, const ActivationPattern& pattern,
                                        Eigen::Index column = 0) {
  const MatrixX<Scalar> delta = coboundary_matrix(sheaf, pattern, column);
  MatrixX<Scalar> out(delta.rows(), sheaf.boundary_size());
  Eigen::Index c = 0;
  for (auto idx : sheaf.fixed_indices()) out.col(c++) = delta.col(idx);
  return out;
}

/// Full sheaf Laplacian over every coordinate, accumulated edge by edge from
/// the local form sum_e F^T (F x_v - F x_w).
template <typename Scalar>
MatrixX<Scalar> sheaf_laplacian(const NeuralSheaf<Scalar>& sheaf, const ActivationPattern& pattern,
                                Eigen::Index column = 0) {
  detail::check_pattern(sheaf, pattern, pattern.columns());
  MatrixX<Scalar> lap = MatrixX<Scalar>::Zero(sheaf.dimension(), sheaf.dimension());
  for (const Edge& e : sheaf.edges()) {
    const auto [ft, fh] = detail::restriction_maps(sheaf, e, pattern, column);
    const Vertex& t = sheaf.vertex(e.tail);
    const Vertex& h = sheaf.vertex(e.head);
    lap.block(t.offset, t.offset, t.dim, t.dim) += ft.transpose() * ft;
    lap.block(h.offset, h.offset, h.dim, h.dim) += fh.transpose() * fh;
    lap.block(t.offset, h.offset, t.dim, h.dim) -= ft.transpose() * fh;
    lap.block(h.offset, t.offset, h.dim, t.dim) -= fh.transpose() * ft;
  }
  return lap;
}

template <typename Scalar>
MatrixX<Scalar> select_block(const MatrixX<Scalar>& m, const std::vector<Eigen::Index>& rows,
                             const std::vector<Eigen::Index>& cols) {
  MatrixX<Scalar> out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(rows[i], cols[j]);
    }
  }
  return out;
}

/// Indices (into the free-coordinate vector) of the y_hat coordinates that are free.
template <typename Scalar>
std::vector<Eigen::Index> free_output_positions(const NeuralSheaf<Scalar>& sheaf) {
  std::vector<Eigen::Index> out;
  const Eigen::Index begin = sheaf.output_offset();
  const Eigen::Index end = begin + sheaf.network().output_dim();
  const auto& free = sheaf.free_indices();
  for (std::size_t i = 0; i < free.size(); ++i) {
    if (free[i] >= begin && free[i] < end) out.push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

/// L[Omega, Omega]. With `reduced`, free y_hat coordinates are eliminated by a
/// Schur complement, leaving (z1, a1, ..., ak, z(k+1)); identity output only.
template <typename Scalar>
MatrixX<Scalar> restricted_laplacian(const NeuralSheaf<Scalar>& sheaf, const ActivationPattern& pattern, bool reduced,
                                     Eigen::Index column = 0) {
  const MatrixX<Scalar> lap = sheaf_laplacian(sheaf, pattern, column);
  const auto& free = sheaf.free_indices();
  MatrixX<Scalar> full = select_block(lap, free, free);
  if (!reduced) return full;
  if (sheaf.network().output_activation != OutputActivation::identity) {
    throw UnsupportedStructureError("reduced Laplacian requires identity output");
  }
  const auto y_pos = free_output_positions(sheaf);
  if (y_pos.empty()) return full;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < full.rows(); ++i) {
    if (std::find(y_pos.begin(), y_pos.end(), i) == y_pos.end()) keep.push_back(i);
  }
  const MatrixX<Scalar> a = select_block(full, keep, keep);
  const MatrixX<Scalar> b = select_block(full, keep, y_pos);
  const MatrixX<Scalar> d = select_block(full, y_pos, y_pos);
  MatrixX<Scalar> schur = a - b * d.ldlt().solve(b.transpose());
  return Scalar(0.5) * (schur + schur.transpose());
}

/// det(delta_Omega) by partial-pivot LU.
template <typename Scalar>
Scalar unitriangular_det(const NeuralSheaf<Scalar>& sheaf, const ActivationPattern& pattern, Eigen::Index column = 0) {
  return assemble_delta_omega(sheaf, pattern, column).partialPivLu().determinant();
}

/// Solves delta_Omega w = -delta_U u by forward substitution for each column
/// of `x` under the frozen pattern. For a nonlinear phi the output vertex is
/// set to phi(z^(k+1)) so the output edge also carries zero discrepancy.
template <typename Scalar>
Cochain<Scalar> harmonic_extension(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& x,
                                   const ActivationPattern& pattern) {
  detail::check_pattern(sheaf, pattern, x.cols());
  Cochain<Scalar> c = boundary_cochain(sheaf, x);
  for (Eigen::Index m = 0; m < x.cols(); ++m) {
    const MatrixX<Scalar> d_free = assemble_delta_omega(sheaf, pattern, m);
    const MatrixX<Scalar> d_fixed = assemble_delta_boundary(sheaf, pattern, m);
    const VectorX<Scalar> rhs = -(d_fixed * fixed_part(sheaf, c.values, m));
    const VectorX<Scalar> w = d_free.template triangularView<Eigen::Lower>().solve(rhs);
    Eigen::Index i = 0;
    for (auto idx : sheaf.free_indices()) c.values(idx, m) = w(i++);
  }
  const auto& spec = sheaf.network();
  if (spec.output_activation != OutputActivation::identity) {
    c.values.middleRows(sheaf.output_offset(), spec.output_dim()) =
        activate(spec.output_activation,
                 MatrixX<Scalar>(c.values.middleRows(sheaf.pre_offset(spec.hidden_layers() + 1), spec.output_dim())));
  }
  return c;
}

}  // namespace neural_sheaf
