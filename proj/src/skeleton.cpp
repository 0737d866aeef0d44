#include "hitdvae/skeleton.hpp"

#include <numbers>

#include "hitdvae/json_util.hpp"

namespace hitdvae {

void Skeleton::validate() const {
  const std::size_t J = joints();
  if (J < 2) throw ConfigError("skeleton: need at least 2 joints");
  if (edges.size() != J - 1) {
    throw ConfigError("skeleton: " + std::to_string(edges.size()) + " edges cannot form a tree over " +
                      std::to_string(J) + " joints");
  }
  std::vector<int> has_parent(J, 0);
  for (const auto& e : edges) {
    if (e.parent >= J || e.child >= J) throw ConfigError("skeleton: edge references a joint out of range");
    if (e.child == 0) throw ConfigError("skeleton: the root joint 0 cannot be a child");
    if (has_parent[e.child]++) throw ConfigError("skeleton: joint " + std::to_string(e.child) + " has two parents");
    if (!(e.length > 0.0)) throw ConfigError("skeleton: edge lengths must be positive");
  }
  // Every joint must reach the root by following parents.
  std::vector<std::size_t> parent(J, 0);
  for (const auto& e : edges) parent[e.child] = e.parent;
  for (std::size_t j = 1; j < J; ++j) {
    std::size_t cur = j, steps = 0;
    while (cur != 0 && steps++ <= J) cur = parent[cur];
    if (cur != 0) throw ConfigError("skeleton: joint " + std::to_string(j) + " is not connected to the root");
  }
  std::vector<int> seen(J, 0);
  for (auto part : {&lower_body, &upper_body}) {
    for (std::size_t j : *part) {
      if (j == 0 || j >= J) throw ConfigError("skeleton: body partition lists invalid joint " + std::to_string(j));
      if (seen[j]++) throw ConfigError("skeleton: joint " + std::to_string(j) + " is in both body parts");
    }
  }
  for (std::size_t j = 1; j < J; ++j)
    if (!seen[j]) throw ConfigError("skeleton: joint " + std::to_string(j) + " is in no body part");
  if (lower_body.empty() || upper_body.empty()) throw ConfigError("skeleton: both body parts must be non-empty");
  for (const auto& h : hinges) {
    if (h.parent >= J || h.joint >= J || h.child >= J) throw ConfigError("skeleton: hinge " + h.name + " out of range");
    if (!(h.min_angle <= h.max_angle)) throw ConfigError("skeleton: hinge " + h.name + " has min above max");
  }
}

double Skeleton::mean_limb_length() const {
  double s = 0;
  for (const auto& e : edges) s += e.length;
  return s / static_cast<double>(edges.size());
}

nlohmann::ordered_json Skeleton::to_json() const {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["joints"] = joint_names;
  auto& ej = j["edges"] = nlohmann::ordered_json::array();
  for (const auto& e : edges) ej.push_back({{"parent", e.parent}, {"child", e.child}, {"length", e.length}});
  j["lower_body"] = lower_body;
  j["upper_body"] = upper_body;
  auto& hj = j["hinges"] = nlohmann::ordered_json::array();
  for (const auto& h : hinges) {
    hj.push_back({{"name", h.name},
                  {"parent", h.parent},
                  {"joint", h.joint},
                  {"child", h.child},
                  {"min", h.min_angle},
                  {"max", h.max_angle}});
  }
  return j;
}

Skeleton Skeleton::from_json(const nlohmann::json& j, const std::string& path) {
  StrictObject o(j, path);
  Skeleton s;
  s.name = o.get<std::string>("name");
  s.joint_names = o.get<std::vector<std::string>>("joints");
  const auto& edges = o.raw("edges");
  if (!edges.is_array()) throw ConfigError(path + ".edges: expected an array");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    StrictObject e(edges[i], path + ".edges[" + std::to_string(i) + "]");
    Edge edge;
    edge.parent = e.get_count("parent", true);
    edge.child = e.get_count("child", true);
    edge.length = e.get_number("length");
    e.finish();
    s.edges.push_back(edge);
  }
  s.lower_body = o.get<std::vector<std::size_t>>("lower_body");
  s.upper_body = o.get<std::vector<std::size_t>>("upper_body");
  const auto& hinges = o.raw("hinges");
  if (!hinges.is_array()) throw ConfigError(path + ".hinges: expected an array");
  for (std::size_t i = 0; i < hinges.size(); ++i) {
    StrictObject h(hinges[i], path + ".hinges[" + std::to_string(i) + "]");
    Hinge hinge;
    hinge.name = h.get<std::string>("name");
    hinge.parent = h.get_count("parent", true);
    hinge.joint = h.get_count("joint", true);
    hinge.child = h.get_count("child", true);
    hinge.min_angle = h.get_number("min");
    hinge.max_angle = h.get_number("max");
    h.finish();
    s.hinges.push_back(hinge);
  }
  o.finish();
  s.validate();
  return s;
}

Skeleton Skeleton::synthetic9() {
  constexpr double pi = std::numbers::pi;
  Skeleton s;
  s.name = "synthetic9";
  s.joint_names = {"pelvis", "spine", "head", "l_elbow", "l_hand", "r_elbow", "r_hand", "l_foot", "r_foot"};
  s.edges = {{0, 1, 0.50}, {1, 2, 0.25}, {1, 3, 0.30}, {3, 4, 0.25},
             {1, 5, 0.30}, {5, 6, 0.25}, {0, 7, 0.90}, {0, 8, 0.90}};
  s.lower_body = {7, 8};
  s.upper_body = {1, 2, 3, 4, 5, 6};
  s.hinges = {{"neck", 0, 1, 2, 2.0, pi},
              {"l_elbow", 1, 3, 4, 0.35, pi},
              {"r_elbow", 1, 5, 6, 0.35, pi},
              {"l_hip", 1, 0, 7, 1.6, pi},
              {"r_hip", 1, 0, 8, 1.6, pi}};
  return s;
}

Skeleton Skeleton::chain3() {
  Skeleton s;
  s.name = "chain3";
  s.joint_names = {"root", "middle", "tip"};
  s.edges = {{0, 1, 0.5}, {1, 2, 0.5}};
  s.lower_body = {1};
  s.upper_body = {2};
  s.hinges = {{"middle", 0, 1, 2, 1.0, std::numbers::pi}};
  return s;
}

}  // namespace hitdvae
