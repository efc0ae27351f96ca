#include <catch2/catch_amalgamated.hpp>

#include "relgoal/graph.hpp"
#include "relgoal/scene.hpp"
#include "relgoal/trajectory.hpp"

#include <filesystem>
#include <set>

using namespace relgoal;
using env::Action;
using env::ObjectKind;
using env::SceneConfig;
using env::SceneState;
using env::Vec2;

namespace {

SceneConfig two_object_config() {
  SceneConfig c;
  c.objects.push_back({1, ObjectKind::actor, 0.06, std::nullopt});
  c.objects.push_back({2, ObjectKind::puck, 0.06, std::nullopt});
  return c;
}

SceneConfig relational_config() {
  // actor + free puck + spring pair + one static corner block
  SceneConfig c;
  c.objects.push_back({1, ObjectKind::actor, 0.06, std::nullopt});
  c.objects.push_back({2, ObjectKind::puck, 0.06, std::nullopt});
  c.objects.push_back({3, ObjectKind::puck, 0.06, std::nullopt});
  c.objects.push_back({4, ObjectKind::puck, 0.06, std::nullopt});
  c.objects.push_back({5, ObjectKind::fixed, 0.06, Vec2(0.7, 0.7)});
  c.springs.push_back({3, 4, 0.3, 0.2});
  return c;
}

}  // namespace

TEST_CASE("reset is deterministic and overlap-free") {
  auto c = two_object_config();
  auto s1 = env::reset(c, 7);
  auto s2 = env::reset(c, 7);
  REQUIRE(s1.count() == 2);
  CHECK((s1.objects[0].where - s2.objects[0].where).norm() == 0.0);
  CHECK((s1.objects[1].where - s2.objects[1].where).norm() == 0.0);
  CHECK((s1.objects[0].where - s1.objects[1].where).norm() >= 0.12);
  auto s3 = env::reset(c, 8);
  CHECK((s1.objects[0].where - s3.objects[0].where).norm() > 0.0);
}

TEST_CASE("reset pins static objects and honors springs") {
  auto c = relational_config();
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    auto s = env::reset(c, seed);
    CHECK(s.objects[4].where == Vec2(0.7, 0.7));
    double d = (s.objects[2].where - s.objects[3].where).norm();
    CHECK(d >= 0.25);
    CHECK(d <= 0.35);
    for (int a = 0; a < s.count(); ++a)
      for (int b = a + 1; b < s.count(); ++b)
        CHECK((s.objects[a].where - s.objects[b].where).norm() >=
              c.objects[a].radius + c.objects[b].radius - 1e-12);
  }
}

TEST_CASE("reset reports crowded tables") {
  SceneConfig c;
  c.bounds = {-0.1, 0.1, -0.1, 0.1};
  c.objects.push_back({1, ObjectKind::actor, 0.04, std::nullopt});
  for (int i = 2; i <= 8; ++i) c.objects.push_back({i, ObjectKind::puck, 0.04, std::nullopt});
  CHECK_THROWS_AS(env::reset(c, 1), env::ConfigError);
}

TEST_CASE("step moves a free actor exactly by the command") {
  auto c = two_object_config();
  SceneState s;
  s.objects = {{Vec2(-0.5, -0.5), 1}, {Vec2(0.5, 0.5), 2}};
  auto n = env::step(s, Action{Vec2(1.0, 0.0)}, c);
  CHECK((n.objects[0].where - Vec2(-0.4, -0.5)).norm() < 1e-15);
  CHECK((n.objects[1].where - Vec2(0.5, 0.5)).norm() == 0.0);

  // components clamp to [-1, 1]
  auto n2 = env::step(s, Action{Vec2(5.0, 0.0)}, c);
  CHECK((n2.objects[0].where - Vec2(-0.4, -0.5)).norm() < 1e-15);
}

TEST_CASE("actor pushes a puck along the contact normal") {
  auto c = two_object_config();
  SceneState s;
  s.objects = {{Vec2(0.0, 0.0), 1}, {Vec2(0.13, 0.0), 2}};
  auto n = env::step(s, Action{Vec2(1.0, 0.0)}, c);
  CHECK(n.objects[0].where.x() == Catch::Approx(0.1));
  CHECK(n.objects[1].where.x() == Catch::Approx(0.1 + 0.12));
  CHECK(n.objects[1].where.y() == Catch::Approx(0.0));
}

TEST_CASE("static objects block and never move") {
  SceneConfig c;
  c.objects.push_back({1, ObjectKind::actor, 0.06, std::nullopt});
  c.objects.push_back({2, ObjectKind::fixed, 0.06, Vec2(0.2, 0.0)});
  SceneState s;
  s.objects = {{Vec2(0.06, 0.0), 1}, {Vec2(0.2, 0.0), 2}};
  auto n = env::step(s, Action{Vec2(1.0, 0.0)}, c);
  CHECK(n.objects[1].where == Vec2(0.2, 0.0));
  CHECK(n.objects[0].where.x() == Catch::Approx(0.2 - 0.12));
}

TEST_CASE("spring at rest length is a fixed point") {
  SceneConfig c;
  c.objects.push_back({1, ObjectKind::actor, 0.06, std::nullopt});
  c.objects.push_back({2, ObjectKind::puck, 0.06, std::nullopt});
  c.objects.push_back({3, ObjectKind::puck, 0.06, std::nullopt});
  c.springs.push_back({2, 3, 0.3, 0.2});
  SceneState s;
  s.objects = {{Vec2(-0.8, -0.8), 1}, {Vec2(0.0, 0.0), 2}, {Vec2(0.3, 0.0), 3}};
  auto n = env::step(s, Action{Vec2(0.0, 0.0)}, c);
  CHECK((n.objects[1].where - s.objects[1].where).norm() < 1e-15);
  CHECK((n.objects[2].where - s.objects[2].where).norm() < 1e-15);
}

TEST_CASE("springs converge monotonically toward rest length") {
  for (double k : {0.1, 0.2, 0.45, 0.8}) {
    SceneConfig c;
    c.objects.push_back({1, ObjectKind::actor, 0.06, std::nullopt});
    c.objects.push_back({2, ObjectKind::puck, 0.06, std::nullopt});
    c.objects.push_back({3, ObjectKind::puck, 0.06, std::nullopt});
    c.springs.push_back({2, 3, 0.3, k});
    SceneState s;
    s.objects = {{Vec2(-0.8, -0.8), 1}, {Vec2(0.0, 0.0), 2}, {Vec2(0.75, 0.0), 3}};
    double gap = std::abs((s.objects[1].where - s.objects[2].where).norm() - 0.3);
    for (int t = 0; t < 25; ++t) {
      s = env::step(s, Action{Vec2(0.0, 0.0)}, c);
      double g = std::abs((s.objects[1].where - s.objects[2].where).norm() - 0.3);
      CHECK(g <= gap + 1e-12);
      gap = g;
    }
    CHECK(gap < 0.02);
  }
}

TEST_CASE("trajectories stay on the table and statics are constant") {
  auto c = relational_config();
  auto s = env::reset(c, 21);
  Rng rng(99);
  for (int t = 0; t < 120; ++t) {
    s = env::step(s, Action{Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1))}, c);
    for (int r = 0; r < s.count(); ++r) {
      CHECK(s.objects[r].where.x() >= c.bounds.xmin);
      CHECK(s.objects[r].where.x() <= c.bounds.xmax);
      CHECK(s.objects[r].where.y() >= c.bounds.ymin);
      CHECK(s.objects[r].where.y() <= c.bounds.ymax);
    }
    CHECK(s.objects[4].where == Vec2(0.7, 0.7));
  }
}

TEST_CASE("far-away objects do not move in one step") {
  auto c = two_object_config();
  SceneState s;
  s.objects = {{Vec2(-0.9, -0.9), 1}, {Vec2(0.9, 0.9), 2}};
  Rng rng(4);
  for (int t = 0; t < 5; ++t) {
    auto n = env::step(s, Action{Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1))}, c);
    CHECK((n.objects[1].where - s.objects[1].where).norm() == 0.0);
    s.objects[0] = n.objects[0];
  }
}

TEST_CASE("step sequences are bit-deterministic") {
  auto c = relational_config();
  auto run = [&] {
    auto s = env::reset(c, 5);
    Rng rng(17);
    for (int t = 0; t < 60; ++t)
      s = env::step(s, Action{Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1))}, c);
    return s;
  };
  auto a = run(), b = run();
  for (int r = 0; r < a.count(); ++r) CHECK(a.objects[r].where == b.objects[r].where);
}

TEST_CASE("goal sampling respects constraints") {
  auto c = relational_config();
  auto s = env::reset(c, 2);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto g = env::sample_goal(c, s, seed);
    REQUIRE(g.targets.size() == 5);
    CHECK(g.targets[4] == s.objects[4].where);  // static target pinned
    double d = (g.targets[2] - g.targets[3]).norm();
    CHECK(d >= 0.25);
    CHECK(d <= 0.35);
    for (std::size_t a = 0; a < g.targets.size(); ++a) {
      CHECK(g.targets[a].x() >= c.bounds.xmin);
      CHECK(g.targets[a].x() <= c.bounds.xmax);
      for (std::size_t b = a + 1; b < g.targets.size(); ++b)
        CHECK((g.targets[a] - g.targets[b]).norm() >= c.goal_min_separation - 1e-12);
    }
  }
  auto g1 = env::sample_goal(c, s, 5);
  auto g2 = env::sample_goal(c, s, 5);
  for (std::size_t r = 0; r < g1.targets.size(); ++r) CHECK(g1.targets[r] == g2.targets[r]);
}

TEST_CASE("goals for an all-static scene equal current positions") {
  SceneConfig c;
  c.objects.push_back({1, ObjectKind::actor, 0.06, Vec2(0.0, 0.0)});
  c.objects.push_back({2, ObjectKind::fixed, 0.06, Vec2(0.5, 0.5)});
  c.objects.push_back({3, ObjectKind::fixed, 0.06, Vec2(-0.5, 0.5)});
  auto s = env::reset(c, 1);
  auto g = env::sample_goal(c, s, 3);
  CHECK(g.targets[1] == s.objects[1].where);
  CHECK(g.targets[2] == s.objects[2].where);
}

TEST_CASE("ground truth graph follows the scene mechanics") {
  {
    auto c = two_object_config();
    auto g = env::ground_truth_graph(c);
    CHECK(g.arm_index == 1);
    CHECK(g.edge(0, 1));
    CHECK(g.edge(1, 2));
    CHECK(g.edges().size() == 2);
  }
  {
    // actor 1, spring pair (2,3), static 4
    SceneConfig c;
    c.objects.push_back({1, ObjectKind::actor, 0.06, std::nullopt});
    c.objects.push_back({2, ObjectKind::puck, 0.06, std::nullopt});
    c.objects.push_back({3, ObjectKind::puck, 0.06, std::nullopt});
    c.objects.push_back({4, ObjectKind::fixed, 0.06, Vec2(0.5, 0.5)});
    c.springs.push_back({2, 3, 0.3, 0.2});
    auto g = env::ground_truth_graph(c);
    std::set<std::pair<int, int>> want{{0, 1}, {1, 2}, {1, 3}, {2, 3}, {3, 2}};
    auto got = g.edges();
    CHECK(std::set<std::pair<int, int>>(got.begin(), got.end()) == want);
    for (int i = 0; i < g.nodes(); ++i) CHECK(!g.edge(i, 4));
  }
  {
    SceneConfig c;
    c.objects.push_back({1, ObjectKind::actor, 0.06, std::nullopt});
    auto g = env::ground_truth_graph(c);
    CHECK(g.edges() == std::vector<std::pair<int, int>>{{0, 1}});
  }
}

TEST_CASE("graph file round-trips") {
  auto c = relational_config();
  auto g = env::ground_truth_graph(c);
  g.threshold = 0.06;
  g.avg_weights = Eigen::MatrixXd::Random(5, 5).cwiseAbs();
  g.avg_weights(1, 2) = 1.0 / 3.0;
  auto path = std::filesystem::temp_directory_path() / "relgoal_graph_test.txt";
  graph::save_graph(path.string(), g);
  auto h = graph::load_graph(path.string());
  CHECK(h.object_count == g.object_count);
  CHECK(h.arm_index == g.arm_index);
  CHECK(h.threshold == g.threshold);
  CHECK((h.avg_weights - g.avg_weights).cwiseAbs().maxCoeff() == 0.0);
  CHECK(h.adj == g.adj);
  h.validate();
  std::filesystem::remove(path);
}

TEST_CASE("scene config json round-trips") {
  auto c = relational_config();
  auto path = std::filesystem::temp_directory_path() / "relgoal_scene_test.json";
  env::save_scene_config(path.string(), c);
  auto d = env::load_scene_config(path.string());
  CHECK(d.object_count() == c.object_count());
  CHECK(d.springs.size() == 1);
  CHECK(d.objects[4].start.has_value());
  CHECK(d.objects[4].start->x() == 0.7);
  CHECK(d.one_hot_width() == 5);
  std::filesystem::remove(path);
}

TEST_CASE("trajectory file round-trips bit-exactly") {
  auto c = relational_config();
  traj::Dataset ds;
  ds.identity_dim = c.one_hot_width();
  ds.episode_length = 12;
  Rng rng(31);
  for (int e = 0; e < 3; ++e) {
    std::vector<env::SceneState> states{env::reset(c, 100 + e)};
    std::vector<Action> actions;
    for (int t = 0; t < 12; ++t) {
      actions.push_back(Action{Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1))});
      states.push_back(env::step(states.back(), actions.back(), c));
    }
    ds.episodes.push_back(traj::episode_from_states(states, actions));
  }
  auto path = std::filesystem::temp_directory_path() / "relgoal_traj_test.bin";
  traj::save_dataset(path.string(), ds);
  auto rd = traj::load_dataset(path.string());
  REQUIRE(rd.episodes.size() == 3);
  CHECK(rd.identity_dim == ds.identity_dim);
  CHECK(rd.episode_length == 12);
  for (int e = 0; e < 3; ++e) {
    CHECK(rd.episodes[e].ids == ds.episodes[e].ids);
    for (int t = 0; t <= 12; ++t)
      CHECK((rd.episodes[e].positions[t] - ds.episodes[e].positions[t]).cwiseAbs().maxCoeff() ==
            0.0);
    for (int t = 0; t < 12; ++t)
      CHECK((rd.episodes[e].actions[t] - ds.episodes[e].actions[t]).norm() == 0.0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("config validation rejects bad scenes") {
  SceneConfig no_actor;
  no_actor.objects.push_back({1, ObjectKind::puck, 0.06, std::nullopt});
  CHECK_THROWS_AS(no_actor.validate(), env::ConfigError);

  SceneConfig static_spring;
  static_spring.objects.push_back({1, ObjectKind::actor, 0.06, std::nullopt});
  static_spring.objects.push_back({2, ObjectKind::fixed, 0.06, Vec2(0, 0)});
  static_spring.springs.push_back({1, 2, 0.3, 0.2});
  CHECK_THROWS_AS(static_spring.validate(), env::ConfigError);

  SceneConfig bad_radius;
  bad_radius.objects.push_back({1, ObjectKind::actor, -0.1, std::nullopt});
  CHECK_THROWS_AS(bad_radius.validate(), env::ConfigError);
}
