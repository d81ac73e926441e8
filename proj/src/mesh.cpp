#include "softarm/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

namespace softarm {

VecX TetMesh::positions() const {
  VecX q(3 * nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) q.segment<3>(3 * i) = nodes[i];
  return q;
}

double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  return (b - a).dot((c - a).cross(d - a)) / 6.0;
}

double tet_volume(const TetMesh& mesh, int tet) {
  const auto& t = mesh.tets[tet];
  return signed_volume(mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]], mesh.nodes[t[3]]);
}

void TetMesh::validate() const {
  const int n = node_count();
  if (!tet_tags.empty() && tet_tags.size() != tets.size())
    throw InputError("tet tag count does not match tet count");
  for (int t = 0; t < tet_count(); ++t) {
    for (int v : tets[t])
      if (v < 0 || v >= n) throw InputError("tet " + std::to_string(t) + " references node out of range");
    if (!(tet_volume(*this, t) > 0.0))
      throw InputError("tet " + std::to_string(t) + " has non-positive volume");
  }
  for (int v : fixed_nodes)
    if (v < 0 || v >= n) throw InputError("fixed node out of range");
}

Vec3 node_position(const VecX& q, int node) { return q.segment<3>(3 * node); }

// --- surfaces -------------------------------------------------------------

std::vector<int> SurfaceMesh::vertex_nodes() const {
  std::vector<int> out;
  for (const auto& t : triangles) out.insert(out.end(), t.begin(), t.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool SurfaceMesh::is_closed() const {
  std::map<std::pair<int, int>, int> directed;
  for (const auto& t : triangles)
    for (int e = 0; e < 3; ++e) ++directed[{t[e], t[(e + 1) % 3]}];
  for (const auto& [edge, count] : directed) {
    if (count != 1) return false;
    auto twin = directed.find({edge.second, edge.first});
    if (twin == directed.end() || twin->second != 1) return false;
  }
  return !triangles.empty();
}

Vec3 SurfaceMesh::area_vector(const VecX& q) const {
  Vec3 sum = Vec3::Zero();
  for (const auto& t : triangles) {
    const Vec3 a = node_position(q, t[0]);
    sum += 0.5 * (node_position(q, t[1]) - a).cross(node_position(q, t[2]) - a);
  }
  return sum;
}

double SurfaceMesh::area(const VecX& q) const {
  double sum = 0.0;
  for (const auto& t : triangles) {
    const Vec3 a = node_position(q, t[0]);
    sum += 0.5 * (node_position(q, t[1]) - a).cross(node_position(q, t[2]) - a).norm();
  }
  return sum;
}

double SurfaceMesh::enclosed_volume(const VecX& q) const {
  double sum = 0.0;
  for (const auto& t : triangles)
    sum += node_position(q, t[0]).dot(node_position(q, t[1]).cross(node_position(q, t[2]))) / 6.0;
  return sum;
}

namespace {

// Outward faces of a positively oriented tet.
constexpr int kTetFaces[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};

SurfaceMesh boundary_of(const std::vector<std::array<int, 4>>& tets) {
  std::map<std::array<int, 3>, std::pair<int, std::array<int, 3>>> faces;
  for (const auto& t : tets) {
    for (const auto& f : kTetFaces) {
      std::array<int, 3> tri{t[f[0]], t[f[1]], t[f[2]]};
      std::array<int, 3> key = tri;
      std::sort(key.begin(), key.end());
      auto [it, inserted] = faces.try_emplace(key, 1, tri);
      if (!inserted) ++it->second.first;
    }
  }
  SurfaceMesh out;
  for (const auto& [key, entry] : faces)
    if (entry.first == 1) out.triangles.push_back(entry.second);
  return out;
}

}  // namespace

SurfaceMesh boundary_surface(const TetMesh& mesh) { return boundary_of(mesh.tets); }

// --- barycentric embedding ------------------------------------------------

std::array<double, 4> barycentric_weights(const Vec3& p, const Vec3& a, const Vec3& b,
                                          const Vec3& c, const Vec3& d) {
  Mat3 m;
  m << b - a, c - a, d - a;
  const Vec3 w = m.partialPivLu().solve(p - a);
  return {1.0 - w.sum(), w(0), w(1), w(2)};
}

Vec3 BarycentricEmbedding::position(int i, const TetMesh& mesh, const VecX& q) const {
  const Embedding& e = points[i];
  Vec3 x = Vec3::Zero();
  for (int k = 0; k < 4; ++k) x += e.weights[k] * node_position(q, mesh.tets[e.tet][k]);
  return x;
}

BarycentricEmbedding embed_points(const TetMesh& mesh, const std::vector<Vec3>& points,
                                  double snap_distance) {
  constexpr double kInsideTolerance = 1e-9;
  const int nt = mesh.tet_count();
  std::vector<Mat3> inverse(nt);
  std::vector<Eigen::AlignedBox3d> boxes(nt);
  for (int t = 0; t < nt; ++t) {
    const auto& tet = mesh.tets[t];
    Mat3 m;
    m << mesh.nodes[tet[1]] - mesh.nodes[tet[0]], mesh.nodes[tet[2]] - mesh.nodes[tet[0]],
        mesh.nodes[tet[3]] - mesh.nodes[tet[0]];
    inverse[t] = m.inverse();
    for (int v : tet) boxes[t].extend(mesh.nodes[v]);
  }

  BarycentricEmbedding out;
  out.points.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3& p = points[i];
    Embedding best;
    double best_min_weight = -std::numeric_limits<double>::infinity();
    Embedding nearest;
    double nearest_distance = std::numeric_limits<double>::infinity();
    for (int t = 0; t < nt; ++t) {
      if (boxes[t].exteriorDistance(p) > snap_distance) continue;
      const auto& tet = mesh.tets[t];
      const Vec3 w = inverse[t] * (p - mesh.nodes[tet[0]]);
      const std::array<double, 4> weights{1.0 - w.sum(), w(0), w(1), w(2)};
      const double min_weight = *std::min_element(weights.begin(), weights.end());
      if (min_weight > best_min_weight) {
        best_min_weight = min_weight;
        best = {t, weights};
      }
      if (min_weight < -kInsideTolerance) {
        std::array<double, 4> clamped;
        double sum = 0.0;
        for (int k = 0; k < 4; ++k) sum += clamped[k] = std::max(0.0, weights[k]);
        Vec3 x = Vec3::Zero();
        for (int k = 0; k < 4; ++k) {
          clamped[k] /= sum;
          x += clamped[k] * mesh.nodes[tet[k]];
        }
        const double distance = (x - p).norm();
        if (distance < nearest_distance) {
          nearest_distance = distance;
          nearest = {t, clamped};
        }
      }
    }
    if (best.tet >= 0 && best_min_weight >= -kInsideTolerance) {
      out.points.push_back(best);
    } else if (nearest.tet >= 0 && nearest_distance <= snap_distance) {
      out.points.push_back(nearest);
    } else {
      throw EmbeddingError("farther than snap distance from the mesh", static_cast<int>(i));
    }
  }
  return out;
}

// --- arm parameters -------------------------------------------------------

void ArmParams::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw InputError(std::string("invalid arm parameters: ") + what);
  };
  require(segment_count >= 1, "segment_count must be >= 1");
  require(chambers_per_segment >= 1, "chambers_per_segment must be >= 1");
  require(segment_height > 0 && base_height > 0 && rigid_height > 0, "heights must be positive");
  require(base_radius > 0 && tip_radius > 0, "radii must be positive");
  require(chamber_inner_fraction > 0 && chamber_inner_fraction < chamber_outer_fraction &&
              chamber_outer_fraction < 1,
          "chamber fractions must satisfy 0 < inner < outer < 1");
  require(chamber_span_deg > 0 && chamber_span_deg * chambers_per_segment < 360.0,
          "chamber cross-sections would intersect");
  require(sectors >= 3 && radial_subdivisions >= 1 && layers_per_segment >= 1 && rigid_layers >= 1 &&
              chamber_cap_layers >= 1,
          "resolution controls must be positive");
  require(fiber_loops_per_chamber == 0 || (fiber_loops_per_chamber > 0 && fiber_points_per_loop >= 3),
          "fiber loops need at least 3 points");
  require(fiber_inset > 0 && fiber_inset < 1, "fiber_inset must lie in (0, 1)");
}

double ArmParams::total_height() const {
  return base_height + segment_count * (segment_height + rigid_height);
}

void to_json(nlohmann::json& j, const ArmParams& p) {
  j = nlohmann::json{{"segment_count", p.segment_count},
                     {"chambers_per_segment", p.chambers_per_segment},
                     {"segment_height", p.segment_height},
                     {"base_height", p.base_height},
                     {"rigid_height", p.rigid_height},
                     {"base_radius", p.base_radius},
                     {"tip_radius", p.tip_radius},
                     {"chamber_inner_fraction", p.chamber_inner_fraction},
                     {"chamber_outer_fraction", p.chamber_outer_fraction},
                     {"chamber_span_deg", p.chamber_span_deg},
                     {"sectors", p.sectors},
                     {"radial_subdivisions", p.radial_subdivisions},
                     {"layers_per_segment", p.layers_per_segment},
                     {"chamber_cap_layers", p.chamber_cap_layers},
                     {"rigid_layers", p.rigid_layers},
                     {"fiber_loops_per_chamber", p.fiber_loops_per_chamber},
                     {"fiber_points_per_loop", p.fiber_points_per_loop},
                     {"fiber_inset", p.fiber_inset}};
}

void from_json(const nlohmann::json& j, ArmParams& p) {
  ArmParams d;
  p.segment_count = j.value("segment_count", d.segment_count);
  p.chambers_per_segment = j.value("chambers_per_segment", d.chambers_per_segment);
  p.segment_height = j.value("segment_height", d.segment_height);
  p.base_height = j.value("base_height", d.base_height);
  p.rigid_height = j.value("rigid_height", d.rigid_height);
  p.base_radius = j.value("base_radius", d.base_radius);
  p.tip_radius = j.value("tip_radius", d.tip_radius);
  p.chamber_inner_fraction = j.value("chamber_inner_fraction", d.chamber_inner_fraction);
  p.chamber_outer_fraction = j.value("chamber_outer_fraction", d.chamber_outer_fraction);
  p.chamber_span_deg = j.value("chamber_span_deg", d.chamber_span_deg);
  p.sectors = j.value("sectors", d.sectors);
  p.radial_subdivisions = j.value("radial_subdivisions", d.radial_subdivisions);
  p.layers_per_segment = j.value("layers_per_segment", d.layers_per_segment);
  p.chamber_cap_layers = j.value("chamber_cap_layers", d.chamber_cap_layers);
  p.rigid_layers = j.value("rigid_layers", d.rigid_layers);
  p.fiber_loops_per_chamber = j.value("fiber_loops_per_chamber", d.fiber_loops_per_chamber);
  p.fiber_points_per_loop = j.value("fiber_points_per_loop", d.fiber_points_per_loop);
  p.fiber_inset = j.value("fiber_inset", d.fiber_inset);
}

// --- procedural arm -------------------------------------------------------

namespace {

struct Interval {
  double z_top = 0.0;
  double z_bottom = 0.0;
  int tag = kSoftMaterial;
  int segment = -1;       // owning segment for soft intervals and the rigid section after it
  int soft_index = -1;    // position inside the soft part, -1 for rigid
};

// Splits the prism over 2D triangle (a, b, c) between two layers into three
// tets. The quad faces are cut along the diagonal through their smallest
// global index, which makes neighbouring prisms conform.
void split_prism(std::array<int, 3> tri, int lower_offset, int upper_offset,
                 std::vector<std::array<int, 4>>& out) {
  std::sort(tri.begin(), tri.end());
  const int i = tri[0] + lower_offset, j = tri[1] + lower_offset, k = tri[2] + lower_offset;
  const int I = tri[0] + upper_offset, J = tri[1] + upper_offset, K = tri[2] + upper_offset;
  out.push_back({i, j, k, K});
  out.push_back({i, j, J, K});
  out.push_back({i, I, J, K});
}

void orient_positive(std::array<int, 4>& tet, const std::vector<Vec3>& nodes) {
  if (signed_volume(nodes[tet[0]], nodes[tet[1]], nodes[tet[2]], nodes[tet[3]]) < 0.0)
    std::swap(tet[2], tet[3]);
}

}  // namespace

ArmModel generate_arm(const ArmParams& params) {
  params.validate();
  const int S = params.sectors;
  const int C = params.chambers_per_segment;
  if (S % C != 0) throw GenerationError("sectors must be a multiple of chambers_per_segment");
  const double dtheta = 2.0 * std::numbers::pi / S;
  const int slot = S / C;
  const int chamber_sectors = static_cast<int>(std::lround(params.chamber_span_deg / (360.0 / S)));
  const int wall_sectors = slot - chamber_sectors;
  if (chamber_sectors < 1 || wall_sectors < 1)
    throw GenerationError("resolution too coarse to separate chambers");
  const int chamber_layers = params.layers_per_segment - 2 * params.chamber_cap_layers;
  if (chamber_layers < 1) throw GenerationError("resolution too coarse for chamber caps");

  // Cross-section rings (fractions of the local outer radius).
  const int rs = params.radial_subdivisions;
  std::vector<double> rings;
  for (int k = 1; k <= rs; ++k) rings.push_back(params.chamber_inner_fraction * k / rs);
  for (int k = 1; k <= rs; ++k)
    rings.push_back(params.chamber_inner_fraction +
                    (params.chamber_outer_fraction - params.chamber_inner_fraction) * k / rs);
  for (int k = 1; k <= rs; ++k)
    rings.push_back(params.chamber_outer_fraction + (1.0 - params.chamber_outer_fraction) * k / rs);
  const int M = static_cast<int>(rings.size());
  const int chamber_ring_lo = rs;       // 1-based ring index of the inner chamber wall
  const int chamber_ring_hi = 2 * rs;   // outer chamber wall
  const double theta0 = -0.5 * chamber_sectors * dtheta;

  const int n2d = 1 + M * S;
  auto node2d = [S](int ring, int sector) { return 1 + (ring - 1) * S + ((sector % S) + S) % S; };
  std::vector<Eigen::Vector2d> section(n2d);
  section[0].setZero();
  for (int k = 1; k <= M; ++k)
    for (int j = 0; j < S; ++j) {
      const double th = theta0 + j * dtheta;
      section[node2d(k, j)] = rings[k - 1] * Eigen::Vector2d(std::cos(th), std::sin(th));
    }

  struct Tri2d {
    std::array<int, 3> nodes;
    int ring_interval;  // 0: core fan, k: between ring k and k+1
    int sector;
  };
  std::vector<Tri2d> tris;
  for (int j = 0; j < S; ++j) tris.push_back({{0, node2d(1, j), node2d(1, j + 1)}, 0, j});
  for (int k = 1; k < M; ++k)
    for (int j = 0; j < S; ++j) {
      tris.push_back({{node2d(k, j), node2d(k, j + 1), node2d(k + 1, j + 1)}, k, j});
      tris.push_back({{node2d(k, j), node2d(k + 1, j + 1), node2d(k + 1, j)}, k, j});
    }
  auto chamber_of = [&](const Tri2d& t) {
    if (t.ring_interval < chamber_ring_lo || t.ring_interval >= chamber_ring_hi) return -1;
    const int c = t.sector / slot;
    return (t.sector - c * slot) < chamber_sectors ? c : -1;
  };

  // Axial layout, top (clamped) to bottom (tip).
  std::vector<Interval> intervals;
  double z = 0.0;
  auto push = [&](double height, int count, int tag, int segment, bool soft) {
    for (int i = 0; i < count; ++i) {
      Interval iv;
      iv.z_top = z;
      z -= height / count;
      iv.z_bottom = z;
      iv.tag = tag;
      iv.segment = segment;
      iv.soft_index = soft ? i : -1;
      intervals.push_back(iv);
    }
  };
  push(params.base_height, params.rigid_layers, kRigidMaterial, -1, false);
  for (int s = 0; s < params.segment_count; ++s) {
    push(params.segment_height, params.layers_per_segment, kSoftMaterial, s, true);
    push(params.rigid_height, params.rigid_layers, kRigidMaterial, s, false);
  }
  const double total = params.total_height();
  auto radius_at = [&](double zz) {
    return params.base_radius + (params.tip_radius - params.base_radius) * (-zz / total);
  };
  std::vector<double> layer_z{0.0};
  for (const auto& iv : intervals) layer_z.push_back(iv.z_bottom);
  const int layers = static_cast<int>(layer_z.size());

  ArmModel arm;
  TetMesh& body = arm.body;
  body.nodes.reserve(static_cast<std::size_t>(layers) * n2d);
  for (int l = 0; l < layers; ++l) {
    const double r = radius_at(layer_z[l]);
    for (int i = 0; i < n2d; ++i)
      body.nodes.emplace_back(r * section[i].x(), r * section[i].y(), layer_z[l]);
  }

  const int chamber_count = params.segment_count * C;
  std::vector<std::vector<std::array<int, 4>>> cavity_tets(chamber_count);
  std::vector<std::array<int, 4>> scratch;
  for (int l = 0; l + 1 < layers; ++l) {
    const Interval& iv = intervals[l];
    const bool chambered = iv.soft_index >= params.chamber_cap_layers &&
                           iv.soft_index < params.layers_per_segment - params.chamber_cap_layers;
    for (const Tri2d& t : tris) {
      scratch.clear();
      split_prism(t.nodes, l * n2d, (l + 1) * n2d, scratch);
      for (auto& tet : scratch) orient_positive(tet, body.nodes);
      const int c = chambered ? chamber_of(t) : -1;
      if (c >= 0) {
        auto& dst = cavity_tets[iv.segment * C + c];
        dst.insert(dst.end(), scratch.begin(), scratch.end());
      } else {
        for (const auto& tet : scratch) {
          body.tets.push_back(tet);
          body.tet_tags.push_back(iv.tag);
        }
      }
    }
  }

  std::vector<int> use(body.nodes.size(), 0);
  for (const auto& tet : body.tets)
    for (int v : tet) ++use[v];
  // Finer radial grids leave nodes strictly inside the chambers; they are
  // dropped once all index sets are built.
  const bool compact = std::find(use.begin(), use.end(), 0) != use.end();

  for (int i = 0; i < n2d; ++i) body.fixed_nodes.push_back(i);

  for (int s = 0; s < params.segment_count; ++s)
    for (int c = 0; c < C; ++c) {
      SurfaceMesh cavity = boundary_of(cavity_tets[s * C + c]);
      if (!cavity.is_closed()) throw GenerationError("cavity surface is not closed");
      arm.cavities.push_back(std::move(cavity));
      arm.chamber_labels.push_back("s" + std::to_string(s + 1) + "c" + std::to_string(c + 1));
      arm.chamber_segment.push_back(s);
    }

  // Rigid section after each segment: effector nodes and a point on the axis.
  for (int s = 0; s < params.segment_count; ++s) {
    int first = -1, last = -1;
    for (int l = 0; l + 1 < layers; ++l)
      if (intervals[l].tag == kRigidMaterial && intervals[l].segment == s) {
        if (first < 0) first = l;
        last = l + 1;
      }
    std::vector<int> set;
    for (int l = first; l <= last; ++l)
      for (int i = 0; i < n2d; ++i) set.push_back(l * n2d + i);
    arm.effector_node_sets.push_back(std::move(set));
    const bool tip = s + 1 == params.segment_count;
    const double zz = tip ? layer_z[last] : 0.5 * (layer_z[first] + layer_z[last]);
    arm.effector_points.emplace_back(0.0, 0.0, zz);
  }

  // Fiber loops: closed polygons wrapped around each chamber cross-section,
  // inset into the surrounding walls.
  const double fi = params.chamber_inner_fraction, fo = params.chamber_outer_fraction;
  const double r_in = fi - params.fiber_inset * fi / rs;
  const double r_out = fo + params.fiber_inset * (1.0 - fo) / rs;
  const double dth = 0.5 * params.fiber_inset * wall_sectors * dtheta;
  for (int s = 0; s < params.segment_count; ++s) {
    double z_top = 0.0, z_bottom = 0.0;
    bool found = false;
    for (const auto& iv : intervals)
      if (iv.segment == s && iv.soft_index == params.chamber_cap_layers) {
        z_top = iv.z_top;
        found = true;
      }
    for (const auto& iv : intervals)
      if (iv.segment == s && iv.soft_index == params.layers_per_segment - params.chamber_cap_layers - 1)
        z_bottom = iv.z_bottom;
    if (!found) continue;
    for (int c = 0; c < C; ++c) {
      const double ta = theta0 + c * slot * dtheta - dth;
      const double tb = theta0 + (c * slot + chamber_sectors) * dtheta + dth;
      const double inner_arc = r_in * (tb - ta), outer_arc = r_out * (tb - ta), radial = r_out - r_in;
      const double perimeter = inner_arc + outer_arc + 2.0 * radial;
      for (int loop = 0; loop < params.fiber_loops_per_chamber; ++loop) {
        const double zz = z_top + (loop + 0.5) / params.fiber_loops_per_chamber * (z_bottom - z_top);
        const double rz = radius_at(zz);
        std::vector<Vec3> pts;
        for (int p = 0; p < params.fiber_points_per_loop; ++p) {
          double u = perimeter * p / params.fiber_points_per_loop;
          double rr, th;
          if (u < inner_arc) {
            rr = r_in;
            th = ta + u / r_in;
          } else if ((u -= inner_arc) < radial) {
            rr = r_in + u;
            th = tb;
          } else if ((u -= radial) < outer_arc) {
            rr = r_out;
            th = tb - u / r_out;
          } else {
            u -= outer_arc;
            rr = r_out - u;
            th = ta;
          }
          pts.emplace_back(rz * rr * std::cos(th), rz * rr * std::sin(th), zz);
        }
        arm.fiber_loops.push_back(std::move(pts));
        arm.fiber_loop_chamber.push_back(s * C + c);
      }
    }
  }
  if (compact) {
    std::vector<int> remap(body.nodes.size(), -1);
    std::vector<Vec3> kept;
    for (std::size_t i = 0; i < body.nodes.size(); ++i)
      if (use[i]) {
        remap[i] = static_cast<int>(kept.size());
        kept.push_back(body.nodes[i]);
      }
    body.nodes = std::move(kept);
    for (auto& tet : body.tets)
      for (int& v : tet) v = remap[v];
    for (int& v : body.fixed_nodes) v = remap[v];
    for (auto& cavity : arm.cavities)
      for (auto& tri : cavity.triangles)
        for (int& v : tri) v = remap[v];
    for (auto& set : arm.effector_node_sets)
      for (int& v : set) v = remap[v];
  }
  return arm;
}

TetMesh generate_box(double lx, double ly, double lz, int nx, int ny, int nz) {
  if (nx < 1 || ny < 1 || nz < 1 || !(lx > 0 && ly > 0 && lz > 0))
    throw GenerationError("box dimensions and resolution must be positive");
  TetMesh mesh;
  auto id = [&](int i, int j, int k) { return (k * (ny + 1) + j) * (nx + 1) + i; };
  for (int k = 0; k <= nz; ++k)
    for (int j = 0; j <= ny; ++j)
      for (int i = 0; i <= nx; ++i) mesh.nodes.emplace_back(lx * i / nx, ly * j / ny, lz * k / nz);
  // Kuhn split of each cube along its main diagonal; conforming by construction.
  constexpr int kPerm[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        for (const auto& perm : kPerm) {
          std::array<int, 3> c{i, j, k};
          std::array<int, 4> tet;
          tet[0] = id(c[0], c[1], c[2]);
          for (int step = 0; step < 3; ++step) {
            ++c[perm[step]];
            tet[step + 1] = id(c[0], c[1], c[2]);
          }
          orient_positive(tet, mesh.nodes);
          mesh.tets.push_back(tet);
        }
  for (int k = 0; k <= nz; ++k)
    for (int j = 0; j <= ny; ++j) mesh.fixed_nodes.push_back(id(0, j, k));
  return mesh;
}

// --- legacy VTK -----------------------------------------------------------

namespace {

class Tokenizer {
 public:
  explicit Tokenizer(std::string_view text) : text_(text) {}

  bool next(std::string& token) {
    skip_space();
    if (pos_ >= text_.size()) return false;
    token_line_ = line_;
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    token.assign(text_.substr(start, pos_ - start));
    return true;
  }
  std::string expect(const char* what) {
    std::string t;
    if (!next(t)) throw ParseError(std::string("unexpected end of file, expected ") + what, line_);
    return t;
  }
  long long expect_int(const char* what) {
    const std::string t = expect(what);
    try {
      std::size_t used = 0;
      const long long v = std::stoll(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw ParseError(std::string("expected integer ") + what + ", got '" + t + "'", token_line_);
    }
  }
  double expect_double(const char* what) {
    const std::string t = expect(what);
    try {
      std::size_t used = 0;
      const double v = std::stod(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw ParseError(std::string("expected number ") + what + ", got '" + t + "'", token_line_);
    }
  }
  // Rest of the current physical line (used for the free-form header lines).
  std::string read_line() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
    std::string out(text_.substr(start, pos_ - start));
    if (pos_ < text_.size()) {
      ++pos_;
      ++line_;
    }
    if (!out.empty() && out.back() == '\r') out.pop_back();
    return out;
  }
  int line() const { return line_; }
  int token_line() const { return token_line_; }
  bool at_end() {
    skip_space();
    return pos_ >= text_.size();
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      if (text_[pos_] == '\n') ++line_;
      ++pos_;
    }
  }
  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int token_line_ = 1;
};

void skip_lookup_table(Tokenizer& tok) {
  std::string kw = tok.expect("LOOKUP_TABLE");
  if (kw != "LOOKUP_TABLE" && !kw.empty() && std::isdigit(static_cast<unsigned char>(kw[0]))) {
    if (kw != "1") throw ParseError("only single-component scalars are supported", tok.token_line());
    kw = tok.expect("LOOKUP_TABLE");
  }
  if (kw != "LOOKUP_TABLE") throw ParseError("expected LOOKUP_TABLE", tok.token_line());
  tok.expect("lookup table name");
}

}  // namespace

VtkLoadResult load_tet_mesh(std::string_view text) {
  Tokenizer tok(text);
  if (tok.at_end()) throw ParseError("empty file", 1);
  const std::string magic = tok.read_line();
  if (magic.rfind("# vtk DataFile", 0) != 0) throw ParseError("missing '# vtk DataFile' header", 1);
  tok.read_line();  // title
  const int format_line = tok.line();
  std::string format = tok.read_line();
  while (!format.empty() && std::isspace(static_cast<unsigned char>(format.back()))) format.pop_back();
  if (format != "ASCII") throw ParseError("only ASCII legacy VTK is supported", format_line);
  if (tok.expect("DATASET") != "DATASET") throw ParseError("expected DATASET", tok.token_line());
  if (tok.expect("dataset type") != "UNSTRUCTURED_GRID")
    throw ParseError("dataset must be UNSTRUCTURED_GRID", tok.token_line());

  VtkLoadResult result;
  TetMesh& mesh = result.mesh;
  long long point_count = -1, cell_count = -1;
  std::vector<int> cell_lines;
  std::vector<int> fixed_flags;
  std::string kw;
  while (tok.next(kw)) {
    const int kw_line = tok.token_line();
    if (kw == "POINTS") {
      point_count = tok.expect_int("point count");
      if (point_count < 0) throw ParseError("negative point count", kw_line);
      tok.expect("point data type");
      mesh.nodes.resize(point_count);
      for (auto& p : mesh.nodes)
        for (int c = 0; c < 3; ++c) p[c] = tok.expect_double("coordinate");
    } else if (kw == "CELLS") {
      cell_count = tok.expect_int("cell count");
      tok.expect_int("cell list size");
      if (cell_count < 0) throw ParseError("negative cell count", kw_line);
      mesh.tets.resize(cell_count);
      cell_lines.resize(cell_count);
      for (long long c = 0; c < cell_count; ++c) {
        const long long n = tok.expect_int("cell vertex count");
        cell_lines[c] = tok.token_line();
        if (n != 4) throw ParseError("non-tetrahedral cell with " + std::to_string(n) + " vertices", cell_lines[c]);
        for (int k = 0; k < 4; ++k) {
          const long long v = tok.expect_int("cell vertex index");
          if (v < 0 || v >= point_count)
            throw ParseError("vertex index " + std::to_string(v) + " out of range", tok.token_line());
          mesh.tets[c][k] = static_cast<int>(v);
        }
      }
    } else if (kw == "CELL_TYPES") {
      const long long n = tok.expect_int("cell type count");
      if (n != cell_count) throw ParseError("CELL_TYPES count does not match CELLS", kw_line);
      for (long long c = 0; c < n; ++c)
        if (tok.expect_int("cell type") != 10)
          throw ParseError("non-tetrahedral cell type (only VTK_TETRA = 10 is supported)", tok.token_line());
    } else if (kw == "CELL_DATA" || kw == "POINT_DATA") {
      const bool cells = kw == "CELL_DATA";
      const long long n = tok.expect_int("data count");
      if (n != (cells ? cell_count : point_count)) throw ParseError(kw + " count mismatch", kw_line);
      std::string sub;
      while (tok.next(sub)) {
        if (sub != "SCALARS") throw ParseError("only SCALARS attributes are supported", tok.token_line());
        const std::string name = tok.expect("scalar name");
        tok.expect("scalar type");
        skip_lookup_table(tok);
        std::vector<int> values(n);
        for (auto& v : values) v = static_cast<int>(tok.expect_int("scalar value"));
        if (cells && name == "material") mesh.tet_tags = values;
        if (!cells && name == "fixed") fixed_flags = values;
        if (tok.at_end()) break;
        // peek: another SCALARS block or a new section
        std::string peek;
        Tokenizer save = tok;
        save.next(peek);
        if (peek != "SCALARS") break;
      }
    } else {
      throw ParseError("unknown section '" + kw + "'", kw_line);
    }
  }
  if (point_count < 0) throw ParseError("missing POINTS section", tok.line());
  if (cell_count < 0) throw ParseError("missing CELLS section", tok.line());
  for (std::size_t i = 0; i < fixed_flags.size(); ++i)
    if (fixed_flags[i]) mesh.fixed_nodes.push_back(static_cast<int>(i));

  for (int t = 0; t < mesh.tet_count(); ++t) {
    const double v = tet_volume(mesh, t);
    if (v < 0.0) {
      std::swap(mesh.tets[t][2], mesh.tets[t][3]);
      ++result.orientation_fixes;
    } else if (v == 0.0) {
      throw ParseError("degenerate tet " + std::to_string(t), cell_lines[t]);
    }
  }
  return result;
}

std::string save_tet_mesh(const TetMesh& mesh) {
  std::ostringstream out;
  out.precision(17);
  out << "# vtk DataFile Version 3.0\nsoftarm tet mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << mesh.node_count() << " double\n";
  for (const auto& p : mesh.nodes) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  out << "CELLS " << mesh.tet_count() << ' ' << 5 * mesh.tet_count() << '\n';
  for (const auto& t : mesh.tets) out << "4 " << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << '\n';
  out << "CELL_TYPES " << mesh.tet_count() << '\n';
  for (int t = 0; t < mesh.tet_count(); ++t) out << "10\n";
  out << "CELL_DATA " << mesh.tet_count() << "\nSCALARS material int 1\nLOOKUP_TABLE default\n";
  for (int t = 0; t < mesh.tet_count(); ++t) out << mesh.tag(t) << '\n';
  std::vector<int> fixed(mesh.node_count(), 0);
  for (int v : mesh.fixed_nodes) fixed[v] = 1;
  out << "POINT_DATA " << mesh.node_count() << "\nSCALARS fixed int 1\nLOOKUP_TABLE default\n";
  for (int f : fixed) out << f << '\n';
  return out.str();
}

// --- OBJ ------------------------------------------------------------------

std::string save_surface_obj(const SurfaceMesh& surface, const VecX& q) {
  const std::vector<int> verts = surface.vertex_nodes();
  std::map<int, int> local;
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < verts.size(); ++i) {
    local[verts[i]] = static_cast<int>(i) + 1;
    const Vec3 p = node_position(q, verts[i]);
    out << "v " << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  }
  for (const auto& t : surface.triangles)
    out << "f " << local[t[0]] << ' ' << local[t[1]] << ' ' << local[t[2]] << '\n';
  return out.str();
}

SurfaceMesh load_surface_obj(std::string_view text, const TetMesh& body, double match_tolerance) {
  std::vector<int> bound;
  SurfaceMesh surface;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string kw;
    if (!(ls >> kw) || kw[0] == '#') continue;
    if (kw == "v") {
      Vec3 p;
      if (!(ls >> p.x() >> p.y() >> p.z())) throw ParseError("malformed vertex", line_no);
      int match = -1;
      double best = match_tolerance;
      for (int n = 0; n < body.node_count(); ++n) {
        const double d = (body.nodes[n] - p).norm();
        if (d <= best) {
          best = d;
          match = n;
        }
      }
      if (match < 0) throw ParseError("vertex does not coincide with a body node", line_no);
      bound.push_back(match);
    } else if (kw == "f") {
      std::array<int, 3> tri;
      for (int k = 0; k < 3; ++k) {
        std::string ref;
        if (!(ls >> ref)) throw ParseError("face needs three vertices", line_no);
        int idx = 0;
        try {
          idx = std::stoi(ref.substr(0, ref.find('/')));
        } catch (const std::exception&) {
          throw ParseError("malformed face index '" + ref + "'", line_no);
        }
        if (idx < 1 || idx > static_cast<int>(bound.size())) throw ParseError("face index out of range", line_no);
        tri[k] = bound[idx - 1];
      }
      std::string extra;
      if (ls >> extra) throw ParseError("only triangular faces are supported", line_no);
      surface.triangles.push_back(tri);
    } else {
      throw ParseError("unsupported OBJ record '" + kw + "'", line_no);
    }
  }
  if (surface.triangles.empty()) throw ParseError("no faces", line_no);
  return surface;
}

}  // namespace softarm
