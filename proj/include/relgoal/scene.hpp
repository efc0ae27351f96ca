#pragma once

#include "relgoal/graph.hpp"
#include "relgoal/rng.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace relgoal::env {

using Vec2 = Eigen::Vector2d;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ObjectKind { actor, puck, fixed };

inline const char* kind_name(ObjectKind k) {
  switch (k) {
    case ObjectKind::actor: return "actor";
    case ObjectKind::puck: return "puck";
    case ObjectKind::fixed: return "static";
  }
  return "?";
}

struct ObjectSpec {
  int index = 0;  // global node id, 1-based; node 0 is the action source
  ObjectKind kind = ObjectKind::puck;
  double radius = 0.06;
  std::optional<Vec2> start;  // mandatory for static objects, optional otherwise
};

struct SpringLink {
  int i = 0, j = 0;        // object node ids
  double rest_length = 0.3;
  double stiffness = 0.2;
};

struct Bounds {
  double xmin = -1.0, xmax = 1.0, ymin = -1.0, ymax = 1.0;
};

struct SceneConfig {
  std::vector<ObjectSpec> objects;
  std::vector<SpringLink> springs;
  Bounds bounds;
  double max_actor_speed = 0.1;
  double goal_min_separation = 0.1;
  double tol_spring = 0.05;
  int identity_dim = 0;  // one-hot width; 0 = max object index
  bool include_contact_edges = false;

  int object_count() const { return int(objects.size()); }

  int one_hot_width() const {
    if (identity_dim > 0) return identity_dim;
    int m = 0;
    for (const auto& o : objects) m = std::max(m, o.index);
    return m;
  }

  int row_of(int node_id) const {
    for (std::size_t r = 0; r < objects.size(); ++r)
      if (objects[r].index == node_id) return int(r);
    return -1;
  }

  int actor_row() const {
    for (std::size_t r = 0; r < objects.size(); ++r)
      if (objects[r].kind == ObjectKind::actor) return int(r);
    return -1;
  }

  bool is_static_row(int r) const { return objects[r].kind == ObjectKind::fixed; }

  std::vector<SpringLink> springs_of(int node_id) const {
    std::vector<SpringLink> out;
    for (const auto& s : springs)
      if (s.i == node_id || s.j == node_id) out.push_back(s);
    return out;
  }

  void validate() const {
    if (objects.empty()) throw ConfigError("scene: needs at least one object");
    int actors = 0;
    std::vector<int> seen;
    for (const auto& o : objects) {
      if (o.index < 1) throw ConfigError("scene: object index must be >= 1");
      if (std::find(seen.begin(), seen.end(), o.index) != seen.end())
        throw ConfigError("scene: duplicate object index " + std::to_string(o.index));
      seen.push_back(o.index);
      if (o.kind == ObjectKind::actor) ++actors;
      if (o.radius <= 0.0) throw ConfigError("scene: radius must be positive");
      if (o.kind == ObjectKind::fixed && !o.start)
        throw ConfigError("scene: static object " + std::to_string(o.index) +
                          " needs a position");
      if (o.start) {
        if (o.start->x() < bounds.xmin + o.radius || o.start->x() > bounds.xmax - o.radius ||
            o.start->y() < bounds.ymin + o.radius || o.start->y() > bounds.ymax - o.radius)
          throw ConfigError("scene: start of object " + std::to_string(o.index) +
                            " does not fit inside the table");
      }
    }
    if (actors != 1) throw ConfigError("scene: exactly one actor required");
    if (identity_dim > 0)
      for (const auto& o : objects)
        if (o.index > identity_dim)
          throw ConfigError("scene: object index exceeds identity width");
    if (bounds.xmin >= bounds.xmax || bounds.ymin >= bounds.ymax)
      throw ConfigError("scene: degenerate table bounds");
    if (max_actor_speed <= 0.0) throw ConfigError("scene: max_actor_speed must be positive");
    if (tol_spring <= 0.0) throw ConfigError("scene: tol_spring must be positive");
    for (const auto& s : springs) {
      if (s.i == s.j) throw ConfigError("scene: spring endpoints must differ");
      int ri = row_of(s.i), rj = row_of(s.j);
      if (ri < 0 || rj < 0) throw ConfigError("scene: spring references unknown object");
      if (is_static_row(ri) || is_static_row(rj))
        throw ConfigError("scene: static objects cannot carry springs");
      if (s.rest_length <= 0.0) throw ConfigError("scene: spring rest length must be positive");
      if (s.stiffness <= 0.0 || s.stiffness >= 1.0)
        throw ConfigError("scene: spring stiffness must be in (0,1)");
      if (goal_min_separation > s.rest_length - tol_spring)
        throw ConfigError("scene: goal_min_separation incompatible with spring rest length");
    }
  }

  // A copy containing only the listed node ids; identity width is inherited
  // so states remain comparable with the parent scene.
  SceneConfig subset(const std::vector<int>& node_ids) const {
    SceneConfig out = *this;
    out.identity_dim = one_hot_width();
    out.objects.clear();
    for (const auto& o : objects)
      if (std::find(node_ids.begin(), node_ids.end(), o.index) != node_ids.end())
        out.objects.push_back(o);
    out.springs.clear();
    for (const auto& s : springs) {
      bool have_i = std::find(node_ids.begin(), node_ids.end(), s.i) != node_ids.end();
      bool have_j = std::find(node_ids.begin(), node_ids.end(), s.j) != node_ids.end();
      if (have_i && have_j) out.springs.push_back(s);
    }
    return out;
  }
};

struct ObjectState {
  Vec2 where = Vec2::Zero();
  int id = 0;  // identity; the one-hot has a single 1 at position id-1

  Eigen::VectorXd one_hot(int width) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(width);
    v(id - 1) = 1.0;
    return v;
  }
};

struct SceneState {
  std::vector<ObjectState> objects;  // row r corresponds to config.objects[r]

  int count() const { return int(objects.size()); }

  Eigen::MatrixXd positions() const {
    Eigen::MatrixXd p(count(), 2);
    for (int r = 0; r < count(); ++r) p.row(r) = objects[r].where.transpose();
    return p;
  }

  // Row features: [where, one-hot identity].
  Eigen::MatrixXd features(int identity_width) const {
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(count(), 2 + identity_width);
    for (int r = 0; r < count(); ++r) {
      f(r, 0) = objects[r].where.x();
      f(r, 1) = objects[r].where.y();
      f(r, 2 + objects[r].id - 1) = 1.0;
    }
    return f;
  }
};

struct Action {
  Vec2 delta = Vec2::Zero();  // components in [-1, 1], scaled by max_actor_speed

  Vec2 clamped() const {
    return Vec2(std::clamp(delta.x(), -1.0, 1.0), std::clamp(delta.y(), -1.0, 1.0));
  }
};

struct CompositionalGoal {
  std::vector<Vec2> targets;  // row-aligned with SceneState
};

namespace detail {

inline Vec2 clamp_to_table(const Vec2& p, const Bounds& b, double radius) {
  return Vec2(std::clamp(p.x(), b.xmin + radius, b.xmax - radius),
              std::clamp(p.y(), b.ymin + radius, b.ymax - radius));
}

inline Vec2 push_out(const Vec2& mover, const Vec2& fixed, double contact_dist) {
  Vec2 d = mover - fixed;
  double dist = d.norm();
  Vec2 dir = dist > 1e-12 ? Vec2(d / dist) : Vec2(1.0, 0.0);
  return fixed + dir * contact_dist;
}

}  // namespace detail

// Uniform non-overlapping placement; spring partners are placed inside the
// rest-length annulus. Deterministic for a fixed seed.
inline SceneState reset(const SceneConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = Rng(seed).derive("scene.reset");
  const int k = config.object_count();
  const auto& b = config.bounds;

  for (int restart = 0; restart < 200; ++restart) {
    SceneState st;
    st.objects.resize(k);
    bool ok = true;
    for (int r = 0; r < k && ok; ++r) {
      const auto& spec = config.objects[r];
      st.objects[r].id = spec.index;
      if (spec.start) {
        st.objects[r].where = *spec.start;
        continue;
      }
      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        Vec2 candidate;
        int partner_row = -1;
        double partner_rest = 0.0;
        for (const auto& s : config.springs_of(spec.index)) {
          int other = s.i == spec.index ? s.j : s.i;
          int orow = config.row_of(other);
          if (orow >= 0 && orow < r) {
            partner_row = orow;
            partner_rest = s.rest_length;
            break;
          }
        }
        if (partner_row >= 0) {
          double ang = rng.uniform(0.0, 6.283185307179586);
          double rad = rng.uniform(std::max(partner_rest - config.tol_spring, 0.0),
                                   partner_rest + config.tol_spring);
          candidate = st.objects[partner_row].where + rad * Vec2(std::cos(ang), std::sin(ang));
        } else {
          candidate = Vec2(rng.uniform(b.xmin + spec.radius, b.xmax - spec.radius),
                           rng.uniform(b.ymin + spec.radius, b.ymax - spec.radius));
        }
        if (candidate.x() < b.xmin + spec.radius || candidate.x() > b.xmax - spec.radius ||
            candidate.y() < b.ymin + spec.radius || candidate.y() > b.ymax - spec.radius)
          continue;
        bool clash = false;
        for (int o = 0; o < r && !clash; ++o) {
          double need = spec.radius + config.objects[o].radius;
          if ((candidate - st.objects[o].where).norm() < need) clash = true;
        }
        for (const auto& s : config.springs_of(spec.index)) {
          int other = s.i == spec.index ? s.j : s.i;
          int orow = config.row_of(other);
          if (orow >= 0 && orow < r) {
            double d = (candidate - st.objects[orow].where).norm();
            if (std::abs(d - s.rest_length) > config.tol_spring) clash = true;
          }
        }
        if (!clash) {
          st.objects[r].where = candidate;
          placed = true;
        }
      }
      if (!placed) ok = false;
    }
    if (ok) return st;
  }
  throw ConfigError("scene: placement failed; table too crowded for the configured objects");
}

// Kinematic step: actor moves by the clamped command, overlaps are resolved
// by displacing pucks along contact normals (actor and static objects are
// never displaced), springs relax toward rest length, everything is clamped
// to the table. Deterministic.
inline SceneState step(const SceneState& state, const Action& action, const SceneConfig& config) {
  SceneState next = state;
  const int k = next.count();
  const auto& b = config.bounds;
  const int arow = config.actor_row();

  // 1. actor motion, blocked by static objects
  next.objects[arow].where += action.clamped() * config.max_actor_speed;
  for (int r = 0; r < k; ++r) {
    if (!config.is_static_row(r)) continue;
    double contact = config.objects[arow].radius + config.objects[r].radius;
    if ((next.objects[arow].where - next.objects[r].where).norm() < contact)
      next.objects[arow].where =
          detail::push_out(next.objects[arow].where, next.objects[r].where, contact);
  }

  // 2. overlap resolution, pucks in ascending row order until stable
  for (int pass = 0; pass < 4 * k + 4; ++pass) {
    bool moved = false;
    for (int p = 0; p < k; ++p) {
      if (p == arow || config.is_static_row(p)) continue;
      for (int o = 0; o < k; ++o) {
        if (o == p) continue;
        double contact = config.objects[p].radius + config.objects[o].radius;
        if ((next.objects[p].where - next.objects[o].where).norm() < contact - 1e-12) {
          next.objects[p].where =
              detail::push_out(next.objects[p].where, next.objects[o].where, contact);
          moved = true;
        }
      }
    }
    if (!moved) break;
  }

  // 3. spring relaxation, simultaneous from the pre-spring positions
  std::vector<Vec2> disp(k, Vec2::Zero());
  for (const auto& s : config.springs) {
    int ri = config.row_of(s.i), rj = config.row_of(s.j);
    if (ri < 0 || rj < 0) continue;
    Vec2 d = next.objects[ri].where - next.objects[rj].where;
    double dist = d.norm();
    Vec2 dir = dist > 1e-12 ? Vec2(d / dist) : Vec2(1.0, 0.0);
    double stretch = dist - s.rest_length;
    disp[ri] -= s.stiffness * stretch * dir;
    disp[rj] += s.stiffness * stretch * dir;
  }
  for (int r = 0; r < k; ++r)
    if (!config.is_static_row(r)) next.objects[r].where += disp[r];

  // 4. table clamp
  for (int r = 0; r < k; ++r)
    if (!config.is_static_row(r))
      next.objects[r].where =
          detail::clamp_to_table(next.objects[r].where, b, config.objects[r].radius);
  return next;
}

// Random arrangement satisfying the scene constraints: static targets pinned
// to current positions, spring pairs inside the rest-length tolerance, all
// pairs separated by goal_min_separation. Deterministic for a fixed seed.
inline CompositionalGoal sample_goal(const SceneConfig& config, const SceneState& state,
                                     std::uint64_t seed) {
  Rng rng = Rng(seed).derive("scene.goal");
  const int k = config.object_count();
  const auto& b = config.bounds;

  for (int restart = 0; restart < 200; ++restart) {
    CompositionalGoal goal;
    goal.targets.assign(k, Vec2::Zero());
    std::vector<bool> assigned(k, false);
    // static targets are pinned up front so sampled targets keep clear of them
    for (int r = 0; r < k; ++r) {
      if (!config.is_static_row(r)) continue;
      goal.targets[r] = state.objects[r].where;
      assigned[r] = true;
    }
    bool ok = true;
    for (int r = 0; r < k && ok; ++r) {
      const auto& spec = config.objects[r];
      if (config.is_static_row(r)) continue;
      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        Vec2 candidate;
        int partner_row = -1;
        double partner_rest = 0.0;
        for (const auto& s : config.springs_of(spec.index)) {
          int other = s.i == spec.index ? s.j : s.i;
          int orow = config.row_of(other);
          if (orow >= 0 && orow < r) {
            partner_row = orow;
            partner_rest = s.rest_length;
            break;
          }
        }
        if (partner_row >= 0) {
          double ang = rng.uniform(0.0, 6.283185307179586);
          double rad = rng.uniform(std::max(partner_rest - config.tol_spring, 0.0),
                                   partner_rest + config.tol_spring);
          candidate = goal.targets[partner_row] + rad * Vec2(std::cos(ang), std::sin(ang));
        } else {
          candidate = Vec2(rng.uniform(b.xmin + spec.radius, b.xmax - spec.radius),
                           rng.uniform(b.ymin + spec.radius, b.ymax - spec.radius));
        }
        if (candidate.x() < b.xmin + spec.radius || candidate.x() > b.xmax - spec.radius ||
            candidate.y() < b.ymin + spec.radius || candidate.y() > b.ymax - spec.radius)
          continue;
        bool clash = false;
        for (int o = 0; o < k && !clash; ++o)
          if (assigned[o] && (candidate - goal.targets[o]).norm() < config.goal_min_separation)
            clash = true;
        for (const auto& s : config.springs_of(spec.index)) {
          int other = s.i == spec.index ? s.j : s.i;
          int orow = config.row_of(other);
          if (orow >= 0 && assigned[orow]) {
            double d = (candidate - goal.targets[orow]).norm();
            if (std::abs(d - s.rest_length) > config.tol_spring) clash = true;
          }
        }
        if (!clash) {
          goal.targets[r] = candidate;
          assigned[r] = true;
          placed = true;
        }
      }
      if (!placed) ok = false;
    }
    if (ok) return goal;
  }
  throw ConfigError("scene: goal sampling failed; constraints too tight");
}

// Reference interaction structure implied by the scene mechanics: the action
// drives the actor, the actor can push every non-static puck, springs couple
// their endpoints both ways. Puck-on-puck contact edges are opt-in.
inline graph::InteractionGraph ground_truth_graph(const SceneConfig& config) {
  config.validate();
  graph::InteractionGraph g(config.one_hot_width());
  const int arow = config.actor_row();
  const int actor_id = config.objects[arow].index;
  g.arm_index = actor_id;
  g.set_edge(0, actor_id, true);
  for (const auto& o : config.objects) {
    if (o.kind != ObjectKind::puck) continue;
    g.set_edge(actor_id, o.index, true);
  }
  for (const auto& s : config.springs) {
    g.set_edge(s.i, s.j, true);
    g.set_edge(s.j, s.i, true);
  }
  if (config.include_contact_edges) {
    for (const auto& a : config.objects) {
      for (const auto& c : config.objects) {
        if (a.index == c.index) continue;
        if (a.kind == ObjectKind::puck && c.kind == ObjectKind::puck)
          g.set_edge(a.index, c.index, true);
      }
    }
  }
  return g;
}

// --- configuration file round-trip ---

inline void to_json(nlohmann::json& j, const SceneConfig& c) {
  j = nlohmann::json::object();
  j["bounds"] = {{"xmin", c.bounds.xmin},
                 {"xmax", c.bounds.xmax},
                 {"ymin", c.bounds.ymin},
                 {"ymax", c.bounds.ymax}};
  j["max_actor_speed"] = c.max_actor_speed;
  j["goal_min_separation"] = c.goal_min_separation;
  j["tol_spring"] = c.tol_spring;
  if (c.identity_dim > 0) j["identity_dim"] = c.identity_dim;
  j["include_contact_edges"] = c.include_contact_edges;
  j["objects"] = nlohmann::json::array();
  for (const auto& o : c.objects) {
    nlohmann::json jo{{"index", o.index}, {"kind", kind_name(o.kind)}, {"radius", o.radius}};
    if (o.start) jo["position"] = {o.start->x(), o.start->y()};
    j["objects"].push_back(jo);
  }
  j["springs"] = nlohmann::json::array();
  for (const auto& s : c.springs)
    j["springs"].push_back({{"i", s.i},
                            {"j", s.j},
                            {"rest_length", s.rest_length},
                            {"stiffness", s.stiffness}});
}

inline void from_json(const nlohmann::json& j, SceneConfig& c) {
  c = SceneConfig{};
  if (j.contains("bounds")) {
    const auto& jb = j.at("bounds");
    c.bounds = {jb.at("xmin").get<double>(), jb.at("xmax").get<double>(),
                jb.at("ymin").get<double>(), jb.at("ymax").get<double>()};
  }
  c.max_actor_speed = j.value("max_actor_speed", 0.1);
  c.goal_min_separation = j.value("goal_min_separation", 0.1);
  c.tol_spring = j.value("tol_spring", 0.05);
  c.identity_dim = j.value("identity_dim", 0);
  c.include_contact_edges = j.value("include_contact_edges", false);
  for (const auto& jo : j.at("objects")) {
    ObjectSpec o;
    o.index = jo.at("index").get<int>();
    std::string kind = jo.at("kind").get<std::string>();
    if (kind == "actor")
      o.kind = ObjectKind::actor;
    else if (kind == "puck")
      o.kind = ObjectKind::puck;
    else if (kind == "static")
      o.kind = ObjectKind::fixed;
    else
      throw ConfigError("scene: unknown object kind '" + kind + "'");
    o.radius = jo.value("radius", 0.06);
    if (jo.contains("position")) {
      auto p = jo.at("position");
      o.start = Vec2(p.at(0).get<double>(), p.at(1).get<double>());
    }
    c.objects.push_back(o);
  }
  if (j.contains("springs")) {
    for (const auto& js : j.at("springs")) {
      SpringLink s;
      s.i = js.at("i").get<int>();
      s.j = js.at("j").get<int>();
      s.rest_length = js.value("rest_length", 0.3);
      s.stiffness = js.value("stiffness", 0.2);
      c.springs.push_back(s);
    }
  }
  c.validate();
}

inline SceneConfig load_scene_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("scene: cannot open config file: " + path);
  nlohmann::json j;
  is >> j;
  return j.get<SceneConfig>();
}

inline void save_scene_config(const std::string& path, const SceneConfig& c) {
  std::ofstream os(path);
  if (!os) throw ConfigError("scene: cannot write config file: " + path);
  nlohmann::json j = c;
  os << j.dump(2) << "\n";
}

}  // namespace relgoal::env
