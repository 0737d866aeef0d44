#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace hitdvae {

/// Angle at `joint` between the bones towards `parent` and `child`, limited to [min_angle, max_angle].
struct Hinge {
  std::string name;
  std::size_t parent = 0;
  std::size_t joint = 0;
  std::size_t child = 0;
  double min_angle = 0.0;
  double max_angle = 0.0;
  bool operator==(const Hinge&) const = default;
};

struct Edge {
  std::size_t parent = 0;
  std::size_t child = 0;
  double length = 0.0;  // reference length, meters
  bool operator==(const Edge&) const = default;
};

struct Skeleton {
  std::string name;
  std::vector<std::string> joint_names;
  std::vector<Edge> edges;
  std::vector<std::size_t> lower_body;
  std::vector<std::size_t> upper_body;
  std::vector<Hinge> hinges;

  std::size_t joints() const { return joint_names.size(); }
  /// Edges must form a tree rooted at joint 0; the body partition must cover
  /// the non-root joints disjointly.
  void validate() const;
  double mean_limb_length() const;

  nlohmann::ordered_json to_json() const;
  static Skeleton from_json(const nlohmann::json& j, const std::string& path = "skeleton");
  bool operator==(const Skeleton&) const = default;

  /// The 9-joint skeleton used by the synthetic corpus.
  static Skeleton synthetic9();
  /// Three-joint chain for finite-difference checks.
  static Skeleton chain3();
};

}  // namespace hitdvae
