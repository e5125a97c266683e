#pragma once

// The path-graph sheaf that encodes a feedforward ReLU network:
//
//   v_x -- v_z1 -- v_a1 -- v_z2 -- ... -- v_ak -- v_z(k+1) -- v_y
//
// A 0-cochain is stored as one flat column per sample. Vertex stalks are laid
// out in path order and, within each stalk, in natural coordinate order.
// Soft-pin target vertices are appended after v_y.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "neural_sheaf/errors.hpp"
#include "neural_sheaf/network.hpp"

namespace neural_sheaf {

enum class VertexKind { input, pre_activation, post_activation, output, pin_target };
enum class EdgeKind { weight, activation, output, pin };

struct Vertex {
  VertexKind kind;
  int layer;  ///< l for v_z(l) / v_a(l); 0 for input; k+1 for output; pin index for pin targets
  Eigen::Index offset;
  Eigen::Index dim;
  std::string name;
};

struct Edge {
  EdgeKind kind;
  int layer;  ///< l for W(l) / R(l); k+1 for the output edge; pin index for pin edges
  std::size_t tail;
  std::size_t head;
  Eigen::Index dim;
  std::string name;
};

enum class PinSite { hidden, output, input };

/// Pulls stalk coordinates of v_a(layer) (or v_y) toward `targets`.
/// `gamma` empty means a hard pin: the coordinates join the boundary set.
template <typename Scalar>
struct PinSpec {
  PinSite site = PinSite::hidden;
  int layer = 1;  ///< post-activation layer for hidden pins (1-based)
  std::vector<Eigen::Index> indices;
  VectorX<Scalar> targets;
  std::optional<Scalar> gamma;

  bool hard() const { return !gamma.has_value(); }

  static PinSpec hard_pin(PinSite site, int layer, std::vector<Eigen::Index> indices, VectorX<Scalar> targets) {
    return PinSpec{site, layer, std::move(indices), std::move(targets), std::nullopt};
  }
  static PinSpec soft_pin(PinSite site, int layer, std::vector<Eigen::Index> indices, VectorX<Scalar> targets,
                          Scalar gamma) {
    return PinSpec{site, layer, std::move(indices), std::move(targets), gamma};
  }
};

/// Vertex data of a sheaf, one column per sample.
template <typename Scalar>
struct Cochain {
  MatrixX<Scalar> values;

  Eigen::Index columns() const { return values.cols(); }
  Eigen::Index dimension() const { return values.rows(); }
};

template <typename Scalar>
class NeuralSheaf {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  explicit NeuralSheaf(NetworkSpec<Scalar> spec, std::vector<PinSpec<Scalar>> pins = {})
      : spec_(std::move(spec)), pins_(std::move(pins)) {
    spec_.validate();
    build();
  }

  const NetworkSpec<Scalar>& network() const { return spec_; }
  /// Mutable access for parameter updates; the layout does not depend on the
  /// parameter values.
  NetworkSpec<Scalar>& network() { return spec_; }

  int hidden_layers() const { return spec_.hidden_layers(); }
  const std::vector<Vertex>& vertices() const { return vertices_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<PinSpec<Scalar>>& pins() const { return pins_; }
  Eigen::Index dimension() const { return dimension_; }

  std::size_t input_vertex() const { return 0; }
  std::size_t pre_vertex(int layer) const { return static_cast<std::size_t>(2 * layer - 1); }
  std::size_t post_vertex(int layer) const {
    if (layer == 0) return input_vertex();
    return static_cast<std::size_t>(2 * layer);
  }
  std::size_t output_vertex() const { return static_cast<std::size_t>(2 * hidden_layers() + 2); }
  std::size_t weight_edge(int layer) const { return static_cast<std::size_t>(2 * (layer - 1)); }
  std::size_t activation_edge(int layer) const { return static_cast<std::size_t>(2 * layer - 1); }
  std::size_t output_edge() const { return static_cast<std::size_t>(2 * hidden_layers() + 1); }

  const Vertex& vertex(std::size_t i) const { return vertices_.at(i); }

  /// Rows of the flat cochain that hold the neural data of v_a(layer) (or x for layer 0).
  Eigen::Index activation_offset(int layer) const { return vertices_[post_vertex(layer)].offset; }
  Eigen::Index pre_offset(int layer) const { return vertices_[pre_vertex(layer)].offset; }
  Eigen::Index output_offset() const { return vertices_[output_vertex()].offset; }

  /// true for coordinates that evolve; false for the boundary set.
  const std::vector<bool>& free_mask() const { return free_; }
  Eigen::Index free_count() const { return static_cast<Eigen::Index>(free_indices_.size()); }
  Eigen::Index boundary_size() const { return dimension_ - free_count(); }
  const std::vector<Eigen::Index>& free_indices() const { return free_indices_; }
  const std::vector<Eigen::Index>& fixed_indices() const { return fixed_indices_; }

  /// Whether the output edge participates in the dynamics. For identity output
  /// without a pin on v_y the edge is redundant and y_hat simply tracks z^(k+1).
  bool output_edge_active() const {
    if (spec_.output_activation != OutputActivation::identity) return true;
    return std::any_of(pins_.begin(), pins_.end(), [](const auto& p) { return p.site == PinSite::output; });
  }

  bool has_pins() const { return !pins_.empty(); }

  /// Stalk block of `vertex` within a cochain matrix.
  template <typename M>
  auto block(M& values, std::size_t vertex) const {
    const Vertex& v = vertices_.at(vertex);
    return values.middleRows(v.offset, v.dim);
  }

 private:
  void build() {
    vertices_.clear();
    edges_.clear();
    const int k = spec_.hidden_layers();
    Eigen::Index offset = 0;
    auto add_vertex = [&](VertexKind kind, int layer, Eigen::Index dim, std::string name) {
      vertices_.push_back(Vertex{kind, layer, offset, dim, std::move(name)});
      offset += dim;
    };
    add_vertex(VertexKind::input, 0, spec_.dim(0) + spec_.dim(1), "x");
    for (int l = 1; l <= k; ++l) {
      add_vertex(VertexKind::pre_activation, l, spec_.dim(l), "z" + std::to_string(l));
      add_vertex(VertexKind::post_activation, l, spec_.dim(l) + spec_.dim(l + 1), "a" + std::to_string(l));
    }
    add_vertex(VertexKind::pre_activation, k + 1, spec_.dim(k + 1), "z" + std::to_string(k + 1));
    add_vertex(VertexKind::output, k + 1, spec_.dim(k + 1), "y");

    for (int l = 1; l <= k + 1; ++l) {
      edges_.push_back(Edge{EdgeKind::weight, l, post_vertex(l - 1), pre_vertex(l), spec_.dim(l),
                            "W" + std::to_string(l)});
      if (l <= k) {
        edges_.push_back(Edge{EdgeKind::activation, l, pre_vertex(l), post_vertex(l), spec_.dim(l),
                              "R" + std::to_string(l)});
      }
    }
    edges_.push_back(Edge{EdgeKind::output, k + 1, pre_vertex(k + 1), output_vertex(), spec_.dim(k + 1), "out"});

    free_.assign(static_cast<std::size_t>(offset), true);
    auto fix = [&](Eigen::Index begin, Eigen::Index count) {
      for (Eigen::Index i = begin; i < begin + count; ++i) free_[static_cast<std::size_t>(i)] = false;
    };
    fix(0, vertices_[0].dim);
    for (int l = 1; l <= k; ++l) fix(vertices_[post_vertex(l)].offset + spec_.dim(l), spec_.dim(l + 1));

    for (std::size_t p = 0; p < pins_.size(); ++p) {
      const PinSpec<Scalar>& pin = pins_[p];
      const auto [site_vertex, neural_dim] = validate_pin(pin);
      const Vertex& sv = vertices_[site_vertex];
      if (pin.hard()) {
        for (auto j : pin.indices) {
          auto slot = free_[static_cast<std::size_t>(sv.offset + j)];
          if (!slot) throw ConfigError("coordinate " + std::to_string(j) + " of " + sv.name + " is already fixed");
          slot = false;
        }
        continue;
      }
      const std::size_t target = vertices_.size();
      const Eigen::Index count = static_cast<Eigen::Index>(pin.indices.size());
      free_.resize(static_cast<std::size_t>(offset + count), false);
      add_vertex(VertexKind::pin_target, static_cast<int>(p), count, "p" + std::to_string(p));
      edges_.push_back(Edge{EdgeKind::pin, static_cast<int>(p), site_vertex, target, count, "pin" + std::to_string(p)});
      (void)neural_dim;
    }
    dimension_ = offset;
    free_.resize(static_cast<std::size_t>(dimension_), false);

    free_indices_.clear();
    fixed_indices_.clear();
    for (Eigen::Index i = 0; i < dimension_; ++i) {
      (free_[static_cast<std::size_t>(i)] ? free_indices_ : fixed_indices_).push_back(i);
    }
  }

  std::pair<std::size_t, Eigen::Index> validate_pin(const PinSpec<Scalar>& pin) const {
    if (pin.site == PinSite::input) throw ConfigError("input coordinates are already fixed and cannot be pinned");
    std::size_t v = 0;
    Eigen::Index neural = 0;
    if (pin.site == PinSite::output) {
      v = output_vertex();
      neural = spec_.output_dim();
    } else {
      if (pin.layer < 1 || pin.layer > spec_.hidden_layers()) {
        throw ConfigError("pin layer " + std::to_string(pin.layer) + " is not a hidden layer");
      }
      v = post_vertex(pin.layer);
      neural = spec_.dim(pin.layer);
    }
    if (pin.indices.empty()) throw ConfigError("pin selects no coordinates");
    if (static_cast<Eigen::Index>(pin.indices.size()) != pin.targets.size()) {
      throw DimensionError("pin has " + std::to_string(pin.indices.size()) + " indices but " +
                           std::to_string(pin.targets.size()) + " targets");
    }
    std::vector<Eigen::Index> sorted = pin.indices;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ConfigError("duplicate pin index");
    for (auto j : pin.indices) {
      if (j < 0 || j >= vertices_[v].dim) {
        throw ConfigError("pin index " + std::to_string(j) + " outside stalk " + vertices_[v].name);
      }
      if (j >= neural) throw ConfigError("pin index " + std::to_string(j) + " is in a ones block (already fixed)");
    }
    if (pin.gamma && !(*pin.gamma >= Scalar(0))) throw ConfigError("pin strength must be nonnegative");
    if (!pin.targets.allFinite()) throw InvalidInputError("pin targets must be finite");
    return {v, neural};
  }

  NetworkSpec<Scalar> spec_;
  std::vector<PinSpec<Scalar>> pins_;
  std::vector<Vertex> vertices_;
  std::vector<Edge> edges_;
  std::vector<bool> free_;
  std::vector<Eigen::Index> free_indices_;
  std::vector<Eigen::Index> fixed_indices_;
  Eigen::Index dimension_ = 0;
};

template <typename Scalar>
NeuralSheaf<Scalar> build_sheaf(const NetworkSpec<Scalar>& spec) {
  return NeuralSheaf<Scalar>(spec);
}

/// New sheaf with `pin` added.
template <typename Scalar>
NeuralSheaf<Scalar> apply_pin(const NeuralSheaf<Scalar>& sheaf, const PinSpec<Scalar>& pin) {
  auto pins = sheaf.pins();
  pins.push_back(pin);
  return NeuralSheaf<Scalar>(sheaf.network(), std::move(pins));
}

template <typename Scalar>
NeuralSheaf<Scalar> remove_pins(const NeuralSheaf<Scalar>& sheaf) {
  return NeuralSheaf<Scalar>(sheaf.network());
}

/// Copies y_hat := z^(k+1) when the output edge is eliminated from the dynamics.
template <typename Scalar>
void sync_eliminated_output(const NeuralSheaf<Scalar>& sheaf, Cochain<Scalar>& x) {
  if (sheaf.output_edge_active()) return;
  const Eigen::Index n = sheaf.network().output_dim();
  x.values.middleRows(sheaf.output_offset(), n) = x.values.middleRows(sheaf.pre_offset(sheaf.hidden_layers() + 1), n);
}

/// Cochain holding the boundary data for inputs `x` (n0 x M): the extended
/// input, all ones blocks, hard-pin targets and soft-pin target vertices.
/// Free coordinates are zero.
template <typename Scalar>
Cochain<Scalar> boundary_cochain(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& x) {
  const auto& spec = sheaf.network();
  if (x.rows() != spec.input_dim()) throw DimensionError("input dimension mismatch");
  const Eigen::Index cols = x.cols();
  Cochain<Scalar> c{MatrixX<Scalar>::Zero(sheaf.dimension(), cols)};
  c.values.topRows(spec.input_dim()) = x;
  c.values.middleRows(spec.input_dim(), spec.dim(1)).setOnes();
  for (int l = 1; l <= spec.hidden_layers(); ++l) {
    c.values.middleRows(sheaf.activation_offset(l) + spec.dim(l), spec.dim(l + 1)).setOnes();
  }
  std::size_t pin_vertex = 2 * static_cast<std::size_t>(spec.hidden_layers()) + 3;
  for (const auto& pin : sheaf.pins()) {
    const Eigen::Index base = pin.site == PinSite::output ? sheaf.output_offset() : sheaf.activation_offset(pin.layer);
    if (pin.hard()) {
      for (std::size_t i = 0; i < pin.indices.size(); ++i) {
        c.values.row(base + pin.indices[i]).setConstant(pin.targets(static_cast<Eigen::Index>(i)));
      }
    } else {
      sheaf.block(c.values, pin_vertex).colwise() = pin.targets;
      ++pin_vertex;
    }
  }
  return c;
}

/// Boundary data plus free coordinates drawn from N(0, 1).
template <typename Scalar>
Cochain<Scalar> random_cochain(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& x, std::mt19937_64& rng) {
  Cochain<Scalar> c = boundary_cochain(sheaf, x);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index m = 0; m < c.values.cols(); ++m) {
    for (auto i : sheaf.free_indices()) c.values(i, m) = static_cast<Scalar>(normal(rng));
  }
  sync_eliminated_output(sheaf, c);
  return c;
}

/// The cochain that stores a forward trace: x-bar, z, a-bar, y_hat.
/// Fixed coordinates (hard pins) keep their boundary values.
template <typename Scalar>
Cochain<Scalar> embed_trace(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& x, const ForwardTrace<Scalar>& t) {
  Cochain<Scalar> c = boundary_cochain(sheaf, x);
  const auto& spec = sheaf.network();
  const int k = spec.hidden_layers();
  const auto& free = sheaf.free_mask();
  auto assign = [&](Eigen::Index offset, const MatrixX<Scalar>& block) {
    for (Eigen::Index i = 0; i < block.rows(); ++i) {
      if (free[static_cast<std::size_t>(offset + i)]) c.values.row(offset + i) = block.row(i);
    }
  };
  for (int l = 1; l <= k + 1; ++l) assign(sheaf.pre_offset(l), t.pre(l));
  for (int l = 1; l <= k; ++l) assign(sheaf.activation_offset(l), t.post(l));
  assign(sheaf.output_offset(), t.y_hat);
  return c;
}

template <typename Scalar>
Cochain<Scalar> forward_cochain(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& x) {
  return embed_trace(sheaf, x, forward_pass(sheaf.network(), x));
}

/// Free coordinates of one column, in layout order.
template <typename Scalar>
VectorX<Scalar> free_part(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& values, Eigen::Index column = 0) {
  VectorX<Scalar> out(sheaf.free_count());
  Eigen::Index i = 0;
  for (auto idx : sheaf.free_indices()) out(i++) = values(idx, column);
  return out;
}

template <typename Scalar>
VectorX<Scalar> fixed_part(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& values, Eigen::Index column = 0) {
  VectorX<Scalar> out(sheaf.boundary_size());
  Eigen::Index i = 0;
  for (auto idx : sheaf.fixed_indices()) out(i++) = values(idx, column);
  return out;
}

/// Pattern read off the current z^(1..k) blocks of a cochain.
template <typename Scalar>
ActivationPattern current_pattern(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& values) {
  ActivationPattern p;
  for (int l = 1; l <= sheaf.hidden_layers(); ++l) {
    p.masks.push_back(relu_pattern(values.middleRows(sheaf.pre_offset(l), sheaf.network().dim(l))));
  }
  return p;
}

}  // namespace neural_sheaf
