#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/SparseCholesky>

#include "softarm/element.hpp"
#include "softarm/mesh.hpp"
#include "softarm/types.hpp"

namespace softarm {

struct Material {
  double young_modulus = 2.0e5;  // Pa
  double poisson_ratio = 0.45;
  double density = 1070.0;  // kg/m^3

  void validate() const;
  double mu() const { return young_modulus / (2.0 * (1.0 + poisson_ratio)); }
  double lambda() const {
    return young_modulus * poisson_ratio / ((1.0 + poisson_ratio) * (1.0 - 2.0 * poisson_ratio));
  }
};

inline Material default_soft_material() { return {2.0e5, 0.45, 1070.0}; }
inline Material default_rigid_material() { return {2.4e6, 0.45, 1070.0}; }

struct ElementCache {
  std::array<int, 4> nodes;
  Mat3 rest_inverse;
  double volume = 0.0;
  int tag = kSoftMaterial;
};

// Rest-state precomputation for a tet mesh plus per-tag materials. Immutable
// apart from the global modulus scale applied by calibration.
class FemModel {
 public:
  FemModel(std::shared_ptr<const TetMesh> mesh, std::vector<Material> materials,
           const Vec3& gravity = Vec3(0.0, 0.0, -9.81));

  const TetMesh& mesh() const { return *mesh_; }
  std::shared_ptr<const TetMesh> shared_mesh() const { return mesh_; }
  int node_count() const { return mesh_->node_count(); }
  int dof_count() const { return 3 * mesh_->node_count(); }
  const std::vector<ElementCache>& elements() const { return elements_; }
  const Material& material(int tag) const { return materials_.at(tag); }
  const std::vector<Material>& materials() const { return materials_; }
  const Vec3& gravity() const { return gravity_; }

  // Young's modulus multiplier applied to every material.
  void set_modulus_scale(double scale);
  double modulus_scale() const { return modulus_scale_; }
  double mu(int tag) const { return modulus_scale_ * materials_[tag].mu(); }
  double lambda(int tag) const { return modulus_scale_ * materials_[tag].lambda(); }

  double total_volume() const;
  // Lumped rho * V * g, a quarter per tet node.
  VecX gravity_load() const;

 private:
  std::shared_ptr<const TetMesh> mesh_;
  std::vector<Material> materials_;
  Vec3 gravity_;
  double modulus_scale_ = 1.0;
  std::vector<ElementCache> elements_;
};

// Mutable configuration of a mesh: current positions and the corotational
// frame of every element (kept for elements that invert).
struct FemState {
  VecX q;
  VecX q_rest;
  std::vector<Mat3> rotations;
  std::vector<char> inverted;
  std::uint64_t version = 0;  // bumped whenever q changes

  static FemState at_rest(const FemModel& model);
  void set_positions(const VecX& positions);
  int inverted_count() const;
};

// Internal elastic forces F(q) (the negative energy gradient). Updates the
// per-element rotations and inversion flags.
VecX internal_forces(const FemModel& model, FemState& state);

double elastic_energy(const FemModel& model, const FemState& state);

// Forces and the tangent stiffness K = -dF/dq as triplets over all dofs.
void assemble_elastic(const FemModel& model, FemState& state, VecX* forces,
                      std::vector<Triplet>* stiffness);

// Map between full dofs and the free (unclamped) ones.
class DofMap {
 public:
  DofMap() = default;
  DofMap(int node_count, const std::vector<int>& fixed_nodes);

  int full_count() const { return static_cast<int>(to_free_.size()); }
  int free_count() const { return static_cast<int>(to_full_.size()); }
  int free_index(int dof) const { return to_free_[dof]; }
  int full_index(int free) const { return to_full_[free]; }

  VecX restrict(const VecX& full) const;
  MatX restrict_rows(const MatX& full) const;
  VecX expand(const VecX& free) const;  // fixed dofs are zero

 private:
  std::vector<int> to_free_;
  std::vector<int> to_full_;
};

// Reduced tangent stiffness with its Cholesky factorization. The stamp is the
// FemState version the matrix was assembled at; solves against a newer state
// are rejected.
//
// Free nodes are grouped into breadth-first levels starting next to the fixed
// nodes. Mesh edges only join equal or adjacent levels, so K is block
// tridiagonal in that order and is factorized with dense blocks. Level sets
// wider than `max_block` dofs fall back to a sparse simplicial LLT.
class TangentSystem {
 public:
  static constexpr int kMaxBlock = 900;

  void assemble(const std::vector<Triplet>& full_triplets, const DofMap& dofs, std::uint64_t stamp);
  // Throws SolverError when the reduced matrix is not positive definite.
  void factorize();

  bool factorized() const { return factorized_; }
  std::uint64_t stamp() const { return stamp_; }
  const SpMat& matrix() const { return matrix_; }
  int size() const { return static_cast<int>(matrix_.rows()); }
  bool block_backend() const { return use_blocks_; }
  int level_count() const { return static_cast<int>(blocks_.size()); }

  VecX solve(const VecX& rhs) const;
  MatX solve(const MatX& rhs) const;

 private:
  void analyze();

  SpMat matrix_;
  std::vector<int> seeds_;  // free dofs coupled to a fixed dof
  std::vector<int> analyzed_outer_;
  std::vector<int> analyzed_inner_;
  std::uint64_t stamp_ = 0;
  bool factorized_ = false;

  bool use_blocks_ = false;
  std::vector<std::vector<int>> blocks_;  // free dofs per level
  std::vector<int> block_of_;
  std::vector<int> slot_;
  std::vector<Eigen::LLT<MatX>> diagonal_;
  std::vector<MatX> coupling_;  // L_{k,k-1}

  Eigen::SimplicialLLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> llt_;
};

// K^-1 * columns (free-dof rows). Throws SolverError if the system is not
// factorized for `current_stamp`.
MatX solve_columns(const TangentSystem& system, const MatX& columns, std::uint64_t current_stamp);

}  // namespace softarm
