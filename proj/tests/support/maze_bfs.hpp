#pragma once

// Breadth-first search over (pose x sign-seen) for the shortest action
// sequence that visits the sign and then enters a goal cell. Goal cells end
// the episode, so they are never expanded.

#include <map>
#include <optional>
#include <queue>
#include <tuple>

#include "metarl/environments.hpp"

namespace metarl::testing {

inline std::optional<int> maze_shortest_solution(char scenario) {
  using Maze = Maze2dEnv;
  const auto lay = Maze::layout(scenario);
  auto on_sign = [&](const Maze::Pose& p) { return p.x == lay.sign_x && p.y == lay.sign_y; };
  auto on_goal = [](const Maze::Pose& p) {
    for (double mu : {-1.0, 1.0}) {
      const auto g = Maze::goal(mu);
      if (p.x == g[0] && p.y == g[1]) return true;
    }
    return false;
  };
  using Key = std::tuple<int, int, int, bool>;
  std::map<Key, int> dist;
  std::queue<std::pair<Maze::Pose, bool>> frontier;
  const bool seen0 = on_sign(lay.start);
  dist[{lay.start.x, lay.start.y, lay.start.heading, seen0}] = 0;
  frontier.push({lay.start, seen0});
  while (!frontier.empty()) {
    auto [pose, seen] = frontier.front();
    frontier.pop();
    const int d = dist[{pose.x, pose.y, pose.heading, seen}];
    for (std::size_t a = 0; a < 3; ++a) {
      const auto next = Maze::move(pose, a);
      const bool next_seen = seen || on_sign(next);
      if (on_goal(next)) {
        if (next_seen) return d + 1;
        continue;
      }
      const Key key{next.x, next.y, next.heading, next_seen};
      if (dist.count(key)) continue;
      dist[key] = d + 1;
      frontier.push({next, next_seen});
    }
  }
  return std::nullopt;
}

}  // namespace metarl::testing
