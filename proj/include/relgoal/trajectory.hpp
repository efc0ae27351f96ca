#pragma once

#include "relgoal/scene.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace relgoal::traj {

// One rollout: step_count actions and step_count+1 position snapshots.
// Rows of each snapshot align with `ids` (global object node ids).
struct Episode {
  std::vector<int> ids;
  std::vector<Eigen::MatrixXd> positions;  // each K x 2
  std::vector<env::Vec2> actions;

  int object_count() const { return int(ids.size()); }
  int step_count() const { return int(actions.size()); }
};

struct Dataset {
  int identity_dim = 0;
  int episode_length = 0;
  std::vector<Episode> episodes;

  long total_steps() const { return long(episodes.size()) * episode_length; }
};

inline Episode episode_from_states(const std::vector<env::SceneState>& states,
                                   const std::vector<env::Action>& actions) {
  Episode ep;
  for (const auto& o : states.front().objects) ep.ids.push_back(o.id);
  for (const auto& s : states) ep.positions.push_back(s.positions());
  for (const auto& a : actions) ep.actions.push_back(a.clamped());
  return ep;
}

// Binary record file, little-endian:
//   magic "RGTJ" | u32 version=1 | u32 identity_dim | u32 episode_length | u32 episodes
//   per episode: u32 K | K*u32 ids | (K*2) f64 initial positions (row-major)
//                | per step: 2 f64 action | (K*2) f64 next positions
namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("trajectory: truncated file");
  return v;
}

inline void put_positions(std::ostream& os, const Eigen::MatrixXd& p) {
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    put<double>(os, p(r, 0));
    put<double>(os, p(r, 1));
  }
}

inline Eigen::MatrixXd get_positions(std::istream& is, int k) {
  Eigen::MatrixXd p(k, 2);
  for (int r = 0; r < k; ++r) {
    p(r, 0) = get<double>(is);
    p(r, 1) = get<double>(is);
  }
  return p;
}

}  // namespace detail

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("trajectory: cannot write " + path);
  os.write("RGTJ", 4);
  detail::put<std::uint32_t>(os, 1);
  detail::put<std::uint32_t>(os, std::uint32_t(ds.identity_dim));
  detail::put<std::uint32_t>(os, std::uint32_t(ds.episode_length));
  detail::put<std::uint32_t>(os, std::uint32_t(ds.episodes.size()));
  for (const auto& ep : ds.episodes) {
    if (ep.step_count() != ds.episode_length)
      throw std::runtime_error("trajectory: episode length mismatch");
    if (ep.positions.size() != ep.actions.size() + 1)
      throw std::runtime_error("trajectory: need step_count+1 snapshots");
    detail::put<std::uint32_t>(os, std::uint32_t(ep.ids.size()));
    for (int id : ep.ids) detail::put<std::uint32_t>(os, std::uint32_t(id));
    detail::put_positions(os, ep.positions[0]);
    for (std::size_t t = 0; t < ep.actions.size(); ++t) {
      detail::put<double>(os, ep.actions[t].x());
      detail::put<double>(os, ep.actions[t].y());
      detail::put_positions(os, ep.positions[t + 1]);
    }
  }
  if (!os) throw std::runtime_error("trajectory: write failed " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("trajectory: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "RGTJ", 4) != 0)
    throw std::runtime_error("trajectory: bad magic in " + path);
  auto version = detail::get<std::uint32_t>(is);
  if (version != 1)
    throw std::runtime_error("trajectory: unsupported version " + std::to_string(version));
  Dataset ds;
  ds.identity_dim = int(detail::get<std::uint32_t>(is));
  ds.episode_length = int(detail::get<std::uint32_t>(is));
  auto n = detail::get<std::uint32_t>(is);
  ds.episodes.reserve(n);
  for (std::uint32_t e = 0; e < n; ++e) {
    Episode ep;
    auto k = detail::get<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < k; ++i) ep.ids.push_back(int(detail::get<std::uint32_t>(is)));
    ep.positions.push_back(detail::get_positions(is, int(k)));
    for (int t = 0; t < ds.episode_length; ++t) {
      double ax = detail::get<double>(is), ay = detail::get<double>(is);
      ep.actions.push_back(env::Vec2(ax, ay));
      ep.positions.push_back(detail::get_positions(is, int(k)));
    }
    ds.episodes.push_back(std::move(ep));
  }
  return ds;
}

}  // namespace relgoal::traj
