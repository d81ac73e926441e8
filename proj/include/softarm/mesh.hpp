#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "softarm/types.hpp"

namespace softarm {

enum MaterialTag : int { kSoftMaterial = 0, kRigidMaterial = 1 };

struct TetMesh {
  std::vector<Vec3> nodes;
  std::vector<std::array<int, 4>> tets;
  std::vector<int> tet_tags;  // material tag per tet; empty means all soft
  std::vector<int> fixed_nodes;

  int node_count() const { return static_cast<int>(nodes.size()); }
  int tet_count() const { return static_cast<int>(tets.size()); }
  int tag(int tet) const { return tet_tags.empty() ? kSoftMaterial : tet_tags[tet]; }

  // Flattened xyz coordinates, the FEM state layout.
  VecX positions() const;
  // Throws InputError on out-of-range indices, non-positive volumes or
  // mismatched tag counts.
  void validate() const;
};

double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);
double tet_volume(const TetMesh& mesh, int tet);

// Triangulated surface whose vertices are references into body nodes, so a
// load computed on it lands directly on FEM degrees of freedom.
struct SurfaceMesh {
  std::vector<std::array<int, 3>> triangles;  // body node indices
  bool outward = true;  // normals point out of the enclosed region

  std::vector<int> vertex_nodes() const;
  // Every edge shared by exactly two triangles with opposite directions.
  bool is_closed() const;
  // sum_t A_t n_t and sum_t A_t at the given flattened positions.
  Vec3 area_vector(const VecX& q) const;
  double area(const VecX& q) const;
  double enclosed_volume(const VecX& q) const;
};

Vec3 node_position(const VecX& q, int node);

// Boundary triangles of a set of tets (faces used once), oriented outward.
SurfaceMesh boundary_surface(const TetMesh& mesh);

struct Embedding {
  int tet = -1;
  std::array<double, 4> weights{};
};

struct BarycentricEmbedding {
  std::vector<Embedding> points;

  Vec3 position(int i, const TetMesh& mesh, const VecX& q) const;
};

std::array<double, 4> barycentric_weights(const Vec3& p, const Vec3& a, const Vec3& b,
                                          const Vec3& c, const Vec3& d);

// Embeds points into the tets of `mesh` (rest configuration). Points outside
// every tet but within `snap_distance` of the mesh are projected onto the
// nearest tet. Throws EmbeddingError naming the first unplaceable point.
BarycentricEmbedding embed_points(const TetMesh& mesh, const std::vector<Vec3>& points,
                                  double snap_distance = 1e-6);

struct ArmParams {
  int segment_count = 2;
  int chambers_per_segment = 3;
  double segment_height = 0.12;        // soft, chambered part of a segment
  double base_height = 0.01;           // clamped rigid collar
  double rigid_height = 0.02;          // intermediate and tip rigid sections
  double base_radius = 0.032;
  double tip_radius = 0.024;
  double chamber_inner_fraction = 0.3;  // of the local outer radius
  double chamber_outer_fraction = 0.7;
  double chamber_span_deg = 100.0;
  int sectors = 18;
  int radial_subdivisions = 1;
  int layers_per_segment = 9;
  int chamber_cap_layers = 1;  // solid layers above and below each chamber
  int rigid_layers = 1;
  int fiber_loops_per_chamber = 8;
  int fiber_points_per_loop = 16;
  double fiber_inset = 0.4;  // fraction of the surrounding wall thickness

  void validate() const;
  double total_height() const;
};

void to_json(nlohmann::json& j, const ArmParams& p);
void from_json(const nlohmann::json& j, ArmParams& p);

struct ArmModel {
  TetMesh body;
  std::vector<SurfaceMesh> cavities;          // one per chamber
  std::vector<std::string> chamber_labels;    // "s1c1", ...
  std::vector<int> chamber_segment;           // segment index per chamber
  std::vector<std::vector<Vec3>> fiber_loops;  // closed polylines (rest positions)
  std::vector<int> fiber_loop_chamber;
  std::vector<std::vector<int>> effector_node_sets;  // intermediate.., tip
  std::vector<Vec3> effector_points;                 // e1, e2 on the axis
};

ArmModel generate_arm(const ArmParams& params);

// Structured box [0,lx]x[0,ly]x[0,lz] split into tets. Nodes on x == 0 are
// fixed. Used for beam checks and small test bodies.
TetMesh generate_box(double lx, double ly, double lz, int nx, int ny, int nz);

// Legacy VTK unstructured grid (tetra cells only).
struct VtkLoadResult {
  TetMesh mesh;
  int orientation_fixes = 0;
};
VtkLoadResult load_tet_mesh(std::string_view text);
std::string save_tet_mesh(const TetMesh& mesh);

// OBJ with v/f records. Surfaces are written with their referenced node
// positions; loading binds OBJ vertices back to body nodes by position.
std::string save_surface_obj(const SurfaceMesh& surface, const VecX& q);
SurfaceMesh load_surface_obj(std::string_view text, const TetMesh& body,
                             double match_tolerance = 1e-9);

}  // namespace softarm
