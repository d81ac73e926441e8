#include "softarm/fem.hpp"

#include <algorithm>

namespace softarm {

void Material::validate() const {
  if (!(young_modulus > 0.0)) throw InputError("Young's modulus must be positive");
  if (!(poisson_ratio >= 0.0 && poisson_ratio < 0.5)) throw InputError("Poisson ratio must lie in [0, 0.5)");
  if (!(density > 0.0)) throw InputError("density must be positive");
}

FemModel::FemModel(std::shared_ptr<const TetMesh> mesh, std::vector<Material> materials, const Vec3& gravity)
    : mesh_(std::move(mesh)), materials_(std::move(materials)), gravity_(gravity) {
  for (const auto& m : materials_) m.validate();
  const TetMesh& m = *mesh_;
  elements_.reserve(m.tets.size());
  for (int t = 0; t < m.tet_count(); ++t) {
    ElementCache e;
    e.nodes = m.tets[t];
    e.tag = m.tag(t);
    if (e.tag < 0 || e.tag >= static_cast<int>(materials_.size()))
      throw InputError("tet " + std::to_string(t) + " has no material for tag " + std::to_string(e.tag));
    Mat3 dm;
    dm << m.nodes[e.nodes[1]] - m.nodes[e.nodes[0]], m.nodes[e.nodes[2]] - m.nodes[e.nodes[0]],
        m.nodes[e.nodes[3]] - m.nodes[e.nodes[0]];
    e.volume = dm.determinant() / 6.0;
    if (!(e.volume >= 1e-15)) throw InputError("degenerate tet " + std::to_string(t) + " (volume below 1e-15 m^3)");
    e.rest_inverse = dm.inverse();
    elements_.push_back(e);
  }
}

void FemModel::set_modulus_scale(double scale) {
  if (!(scale > 0.0)) throw InputError("modulus scale must be positive");
  modulus_scale_ = scale;
}

double FemModel::total_volume() const {
  double v = 0.0;
  for (const auto& e : elements_) v += e.volume;
  return v;
}

VecX FemModel::gravity_load() const {
  VecX p = VecX::Zero(dof_count());
  for (const auto& e : elements_) {
    const Vec3 share = 0.25 * materials_[e.tag].density * e.volume * gravity_;
    for (int v : e.nodes) p.segment<3>(3 * v) += share;
  }
  return p;
}

FemState FemState::at_rest(const FemModel& model) {
  FemState s;
  s.q_rest = model.mesh().positions();
  s.q = s.q_rest;
  s.rotations.assign(model.elements().size(), Mat3::Identity());
  s.inverted.assign(model.elements().size(), 0);
  return s;
}

void FemState::set_positions(const VecX& positions) {
  if (positions.size() != q_rest.size()) throw InputError("position vector has wrong size");
  q = positions;
  ++version;
}

int FemState::inverted_count() const {
  return static_cast<int>(std::count(inverted.begin(), inverted.end(), 1));
}

namespace {

CorotationalElement<double> element_of(const FemModel& model, const ElementCache& e) {
  return {e.volume, model.mu(e.tag), model.lambda(e.tag), e.rest_inverse};
}

std::array<Vec3, 4> element_positions(const ElementCache& e, const VecX& q) {
  return {node_position(q, e.nodes[0]), node_position(q, e.nodes[1]), node_position(q, e.nodes[2]),
          node_position(q, e.nodes[3])};
}

}  // namespace

void assemble_elastic(const FemModel& model, FemState& state, VecX* forces, std::vector<Triplet>* stiffness) {
  const auto& elements = model.elements();
  if (forces) forces->setZero(model.dof_count());
  if (stiffness) stiffness->reserve(stiffness->size() + 144 * elements.size());
  Eigen::Matrix<double, 12, 1> fe;
  Eigen::Matrix<double, 12, 12> ke;
  for (std::size_t t = 0; t < elements.size(); ++t) {
    const ElementCache& e = elements[t];
    const auto x = element_positions(e, state.q);
    state.inverted[t] = element_of(model, e).evaluate(x, state.rotations[t], forces ? &fe : nullptr,
                                                      stiffness ? &ke : nullptr);
    if (forces)
      for (int a = 0; a < 4; ++a) forces->segment<3>(3 * e.nodes[a]) += fe.segment<3>(3 * a);
    if (stiffness)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
          for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k)
              stiffness->emplace_back(3 * e.nodes[a] + i, 3 * e.nodes[b] + k, ke(3 * a + i, 3 * b + k));
  }
}

VecX internal_forces(const FemModel& model, FemState& state) {
  VecX f;
  assemble_elastic(model, state, &f, nullptr);
  return f;
}

double elastic_energy(const FemModel& model, const FemState& state) {
  double total = 0.0;
  const auto& elements = model.elements();
  for (std::size_t t = 0; t < elements.size(); ++t) {
    Mat3 r = state.rotations[t];
    double energy = 0.0;
    element_of(model, elements[t]).evaluate(element_positions(elements[t], state.q), r, nullptr, nullptr, &energy);
    total += energy;
  }
  return total;
}

// --- dof bookkeeping ------------------------------------------------------

DofMap::DofMap(int node_count, const std::vector<int>& fixed_nodes) : to_free_(3 * node_count, 0) {
  for (int v : fixed_nodes)
    for (int c = 0; c < 3; ++c) to_free_.at(3 * v + c) = -1;
  for (int d = 0; d < 3 * node_count; ++d) {
    if (to_free_[d] < 0) continue;
    to_free_[d] = static_cast<int>(to_full_.size());
    to_full_.push_back(d);
  }
}

VecX DofMap::restrict(const VecX& full) const {
  VecX out(free_count());
  for (int i = 0; i < free_count(); ++i) out(i) = full(to_full_[i]);
  return out;
}

MatX DofMap::restrict_rows(const MatX& full) const {
  MatX out(free_count(), full.cols());
  for (int i = 0; i < free_count(); ++i) out.row(i) = full.row(to_full_[i]);
  return out;
}

VecX DofMap::expand(const VecX& free) const {
  VecX out = VecX::Zero(full_count());
  for (int i = 0; i < free_count(); ++i) out(to_full_[i]) = free(i);
  return out;
}

// --- tangent system -------------------------------------------------------

void TangentSystem::assemble(const std::vector<Triplet>& full_triplets, const DofMap& dofs, std::uint64_t stamp) {
  std::vector<Triplet> reduced;
  reduced.reserve(full_triplets.size());
  std::vector<char> seed(dofs.free_count(), 0);
  for (const auto& t : full_triplets) {
    const int r = dofs.free_index(t.row()), c = dofs.free_index(t.col());
    if (r >= 0 && c >= 0) {
      reduced.emplace_back(r, c, t.value());
    } else if (r >= 0) {
      seed[r] = 1;
    }
  }
  seeds_.clear();
  for (int i = 0; i < dofs.free_count(); ++i)
    if (seed[i]) seeds_.push_back(i);
  matrix_.resize(dofs.free_count(), dofs.free_count());
  matrix_.setFromTriplets(reduced.begin(), reduced.end());
  matrix_.makeCompressed();
  stamp_ = stamp;
  factorized_ = false;
}

void TangentSystem::analyze() {
  const int n = static_cast<int>(matrix_.rows());
  std::vector<int> level(n, -1);
  std::vector<int> frontier = seeds_;
  if (frontier.empty() && n > 0) frontier.push_back(0);
  for (int v : frontier) level[v] = 0;
  blocks_.clear();
  int assigned = static_cast<int>(frontier.size());
  while (!frontier.empty()) {
    // Dofs coupled to the current level (and not yet placed) form the next.
    std::vector<int> next;
    for (int v : frontier)
      for (SpMat::InnerIterator it(matrix_, v); it; ++it)
        if (level[it.row()] < 0) {
          level[it.row()] = level[v] + 1;
          next.push_back(it.row());
        }
    std::sort(frontier.begin(), frontier.end());
    blocks_.push_back(std::move(frontier));
    frontier = std::move(next);
    assigned += static_cast<int>(frontier.size());
    if (frontier.empty() && assigned < n) {
      // Disconnected remainder starts a new chain of levels.
      for (int v = 0; v < n; ++v)
        if (level[v] < 0) {
          level[v] = static_cast<int>(blocks_.size());
          frontier.push_back(v);
          ++assigned;
          break;
        }
    }
  }
  std::size_t widest = 0;
  for (const auto& b : blocks_) widest = std::max(widest, b.size());
  use_blocks_ = widest <= static_cast<std::size_t>(kMaxBlock);
  block_of_.assign(n, 0);
  slot_.assign(n, 0);
  for (std::size_t k = 0; k < blocks_.size(); ++k)
    for (std::size_t j = 0; j < blocks_[k].size(); ++j) {
      block_of_[blocks_[k][j]] = static_cast<int>(k);
      slot_[blocks_[k][j]] = static_cast<int>(j);
    }
  if (!use_blocks_) llt_.analyzePattern(matrix_);
}

void TangentSystem::factorize() {
  const int n = static_cast<int>(matrix_.outerSize());
  const bool same_pattern =
      static_cast<int>(analyzed_outer_.size()) == n + 1 &&
      std::equal(analyzed_outer_.begin(), analyzed_outer_.end(), matrix_.outerIndexPtr()) &&
      static_cast<long>(analyzed_inner_.size()) == matrix_.nonZeros() &&
      std::equal(analyzed_inner_.begin(), analyzed_inner_.end(), matrix_.innerIndexPtr());
  if (!same_pattern) {
    analyze();
    analyzed_outer_.assign(matrix_.outerIndexPtr(), matrix_.outerIndexPtr() + n + 1);
    analyzed_inner_.assign(matrix_.innerIndexPtr(), matrix_.innerIndexPtr() + matrix_.nonZeros());
  }
  factorized_ = false;
  const char* advice = "tangent stiffness is not positive definite; check boundary conditions (fixed nodes)";
  if (!use_blocks_) {
    llt_.factorize(matrix_);
    if (llt_.info() != Eigen::Success) throw SolverError(advice);
    factorized_ = true;
    return;
  }

  const std::size_t levels = blocks_.size();
  std::vector<MatX> diag(levels);
  coupling_.assign(levels, MatX());
  for (std::size_t k = 0; k < levels; ++k) {
    diag[k].setZero(blocks_[k].size(), blocks_[k].size());
    if (k > 0) coupling_[k].setZero(blocks_[k].size(), blocks_[k - 1].size());
  }
  for (int col = 0; col < n; ++col)
    for (SpMat::InnerIterator it(matrix_, col); it; ++it) {
      const int br = block_of_[it.row()], bc = block_of_[col];
      if (br == bc) {
        diag[br](slot_[it.row()], slot_[col]) = it.value();
      } else if (br == bc + 1) {
        coupling_[br](slot_[it.row()], slot_[col]) = it.value();
      }
    }
  diagonal_.resize(levels);
  for (std::size_t k = 0; k < levels; ++k) {
    if (k > 0) {
      // L_{k,k-1} = A_{k,k-1} L_{k-1}^-T, then the Schur complement update.
      MatX t = coupling_[k].transpose();
      diagonal_[k - 1].matrixL().solveInPlace(t);
      coupling_[k] = t.transpose();
      diag[k].selfadjointView<Eigen::Lower>().rankUpdate(coupling_[k], -1.0);
    }
    diagonal_[k].compute(diag[k]);
    if (diagonal_[k].info() != Eigen::Success) throw SolverError(advice);
  }
  factorized_ = true;
}

MatX TangentSystem::solve(const MatX& rhs) const {
  if (!factorized_) throw SolverError("tangent system is not factorized");
  if (rhs.rows() != matrix_.rows()) throw InputError("right-hand side height does not match the tangent system");
  if (!use_blocks_) return llt_.solve(rhs);
  const std::size_t levels = blocks_.size();
  std::vector<MatX> y(levels);
  for (std::size_t k = 0; k < levels; ++k) {
    y[k].resize(blocks_[k].size(), rhs.cols());
    for (std::size_t j = 0; j < blocks_[k].size(); ++j) y[k].row(j) = rhs.row(blocks_[k][j]);
    if (k > 0) y[k].noalias() -= coupling_[k] * y[k - 1];
    diagonal_[k].matrixL().solveInPlace(y[k]);
  }
  for (std::size_t k = levels; k-- > 0;) {
    if (k + 1 < levels) y[k].noalias() -= coupling_[k + 1].transpose() * y[k + 1];
    diagonal_[k].matrixU().solveInPlace(y[k]);
  }
  MatX out(rhs.rows(), rhs.cols());
  for (std::size_t k = 0; k < levels; ++k)
    for (std::size_t j = 0; j < blocks_[k].size(); ++j) out.row(blocks_[k][j]) = y[k].row(j);
  return out;
}

VecX TangentSystem::solve(const VecX& rhs) const { return solve(MatX(rhs)).col(0); }

MatX solve_columns(const TangentSystem& system, const MatX& columns, std::uint64_t current_stamp) {
  if (!system.factorized() || system.stamp() != current_stamp)
    throw SolverError("stale factorization: positions changed since the tangent was assembled");
  if (columns.rows() != system.size()) throw InputError("column height does not match the tangent system");
  return system.solve(columns);
}

}  // namespace softarm
