#include "descrl/sim/world.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <random>
#include <string>

namespace descrl::sim {

namespace {

constexpr std::array<std::string_view, kNumActions> kActionNames = {"forward", "left", "right",
                                                                   "stop"};
constexpr std::array<std::string_view, 4> kHeadingNames = {"N", "E", "S", "W"};

// Interior rectangle [r0, r1] x [c0, c1], inclusive.
struct Region {
  int r0, c0, r1, c1;
  int height() const { return r1 - r0 + 1; }
  int width() const { return c1 - c0 + 1; }
};

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace

std::string_view action_name(Action a) { return kActionNames.at(static_cast<std::size_t>(a)); }

Action action_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kActionNames.size(); ++i) {
    if (kActionNames[i] == name) return static_cast<Action>(i);
  }
  throw std::invalid_argument("unknown action '" + std::string(name) + "'");
}

std::string_view heading_name(Heading h) { return kHeadingNames.at(static_cast<std::size_t>(h)); }

Heading heading_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kHeadingNames.size(); ++i) {
    if (kHeadingNames[i] == name) return static_cast<Heading>(i);
  }
  throw std::invalid_argument("unknown heading '" + std::string(name) + "'");
}

World::World(int height, int width, std::vector<std::uint8_t> walls,
             std::vector<std::uint8_t> rooms, std::vector<PlacedObject> objects,
             std::uint64_t seed)
    : height_(height),
      width_(width),
      walls_(std::move(walls)),
      rooms_(std::move(rooms)),
      objects_(std::move(objects)),
      seed_(seed) {
  const auto n = static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  if (height_ <= 0 || width_ <= 0 || walls_.size() != n || rooms_.size() != n) {
    throw WorldError("world grid dimensions do not match its layers");
  }
  object_index_.assign(n, -1);
  for (std::size_t i = 0; i < objects_.size(); ++i) {
    const auto& o = objects_[i];
    if (o.category < 0 || o.category >= kNumObjectCategories) {
      throw WorldError("object category out of range");
    }
    if (is_wall(o.cell)) throw WorldError("object placed on a wall cell");
    if (object_index_[index(o.cell)] != -1) throw WorldError("two objects share a cell");
    object_index_[index(o.cell)] = static_cast<int>(i);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (walls_[i] == 0 && rooms_[i] >= kNumRoomTypes) throw WorldError("room label out of range");
  }
}

int World::semantic_at(Cell c) const {
  const int obj = object_at(c);
  if (obj >= 0) return object_label(objects_[static_cast<std::size_t>(obj)].category);
  return room_label(room_at(c));
}

std::vector<Cell> World::free_cells() const {
  std::vector<Cell> out;
  for (std::size_t i = 0; i < walls_.size(); ++i) {
    if (walls_[i] == 0) out.push_back(cell_at(i));
  }
  return out;
}

World generate_world(std::uint64_t seed, const WorldConfig& cfg) {
  if (cfg.height < 9 || cfg.width < 9) throw WorldError("world must be at least 9x9");
  if (cfg.rooms < 1) throw WorldError("world needs at least one room");
  if (cfg.objects < 1) throw WorldError("world needs at least one object");

  std::mt19937_64 rng(seed);
  const int h = cfg.height;
  const int w = cfg.width;
  const auto n = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  std::vector<std::uint8_t> walls(n, 0);
  std::vector<std::uint8_t> door(n, 0);
  auto at = [w](int r, int c) { return static_cast<std::size_t>(r) * static_cast<std::size_t>(w) +
                                       static_cast<std::size_t>(c); };
  for (int r = 0; r < h; ++r) walls[at(r, 0)] = walls[at(r, w - 1)] = 1;
  for (int c = 0; c < w; ++c) walls[at(0, c)] = walls[at(h - 1, c)] = 1;

  std::vector<Region> regions{{1, 1, h - 2, w - 2}};
  while (static_cast<int>(regions.size()) < cfg.rooms) {
    // Split the largest region that still has room for two sides of >= 2 cells.
    std::vector<std::size_t> order(regions.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return regions[a].height() * regions[a].width() > regions[b].height() * regions[b].width();
    });
    bool split = false;
    for (std::size_t idx : order) {
      const Region reg = regions[idx];
      const bool can_h = reg.height() >= 5;
      const bool can_v = reg.width() >= 5;
      if (!can_h && !can_v) continue;
      bool horizontal = can_h && (!can_v || reg.height() > reg.width() ||
                                  (reg.height() == reg.width() && uniform_int(rng, 0, 1) == 0));
      // Candidate wall lines that do not block a door at either end.
      std::vector<int> lines;
      if (horizontal) {
        for (int r = reg.r0 + 2; r <= reg.r1 - 2; ++r) {
          if (!door[at(r, reg.c0 - 1)] && !door[at(r, reg.c1 + 1)]) lines.push_back(r);
        }
      } else {
        for (int c = reg.c0 + 2; c <= reg.c1 - 2; ++c) {
          if (!door[at(reg.r0 - 1, c)] && !door[at(reg.r1 + 1, c)]) lines.push_back(c);
        }
      }
      if (lines.empty()) continue;
      const int line = lines[static_cast<std::size_t>(uniform_int(rng, 0, int(lines.size()) - 1))];
      Region a = reg;
      Region b = reg;
      if (horizontal) {
        const int gap = uniform_int(rng, reg.c0, reg.c1);
        for (int c = reg.c0; c <= reg.c1; ++c) {
          if (c == gap) {
            door[at(line, c)] = 1;
          } else {
            walls[at(line, c)] = 1;
          }
        }
        a.r1 = line - 1;
        b.r0 = line + 1;
      } else {
        const int gap = uniform_int(rng, reg.r0, reg.r1);
        for (int r = reg.r0; r <= reg.r1; ++r) {
          if (r == gap) {
            door[at(r, line)] = 1;
          } else {
            walls[at(r, line)] = 1;
          }
        }
        a.c1 = line - 1;
        b.c0 = line + 1;
      }
      regions[idx] = a;
      regions.push_back(b);
      split = true;
      break;
    }
    if (!split) break;
  }

  // Room types: a shuffled draw without repeats while types last.
  std::vector<int> types(kNumRoomTypes);
  for (int i = 0; i < kNumRoomTypes; ++i) types[static_cast<std::size_t>(i)] = i;
  std::shuffle(types.begin(), types.end(), rng);
  std::vector<std::uint8_t> rooms(n, 0);
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const auto type = static_cast<std::uint8_t>(types[i % types.size()]);
    const Region& reg = regions[i];
    for (int r = reg.r0; r <= reg.r1; ++r) {
      for (int c = reg.c0; c <= reg.c1; ++c) rooms[at(r, c)] = type;
    }
  }
  // A door takes the label of the room above it or to its left.
  for (int r = 1; r < h - 1; ++r) {
    for (int c = 1; c < w - 1; ++c) {
      if (!door[at(r, c)]) continue;
      if (!walls[at(r - 1, c)] && !door[at(r - 1, c)]) {
        rooms[at(r, c)] = rooms[at(r - 1, c)];
      } else {
        rooms[at(r, c)] = rooms[at(r, c - 1)];
      }
    }
  }

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    if (!walls[i] && !door[i]) candidates.push_back(i);
  }
  if (static_cast<std::size_t>(cfg.objects) * 2 > candidates.size()) {
    throw WorldError("too many objects (" + std::to_string(cfg.objects) + ") for " +
                     std::to_string(candidates.size()) + " free cells");
  }
  std::shuffle(candidates.begin(), candidates.end(), rng);
  std::vector<PlacedObject> objects;
  for (int i = 0; i < cfg.objects; ++i) {
    const std::size_t cell = candidates[static_cast<std::size_t>(i)];
    objects.push_back({uniform_int(rng, 0, kNumObjectCategories - 1),
                       {static_cast<int>(cell / static_cast<std::size_t>(w)),
                        static_cast<int>(cell % static_cast<std::size_t>(w))}});
  }

  World world(h, w, std::move(walls), std::move(rooms), std::move(objects), seed);
  if (!is_connected(world)) throw WorldError("generated world is not connected");
  return world;
}

std::vector<int> distance_field(const World& world, std::span<const Cell> sources) {
  std::vector<int> dist(static_cast<std::size_t>(world.height()) *
                            static_cast<std::size_t>(world.width()),
                        kUnreachable);
  std::deque<Cell> queue;
  for (Cell s : sources) {
    if (world.is_wall(s)) throw WorldError("distance source is a wall cell");
    if (dist[world.index(s)] != 0) {
      dist[world.index(s)] = 0;
      queue.push_back(s);
    }
  }
  static constexpr std::array<Heading, 4> kDirs = {Heading::kNorth, Heading::kEast,
                                                   Heading::kSouth, Heading::kWest};
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    const int d = dist[world.index(c)];
    for (Heading hd : kDirs) {
      const Cell nb = c + forward_offset(hd);
      if (world.is_wall(nb) || dist[world.index(nb)] != kUnreachable) continue;
      dist[world.index(nb)] = d + 1;
      queue.push_back(nb);
    }
  }
  return dist;
}

int geodesic_distance(const World& world, Cell a, Cell b) {
  if (world.is_wall(a) || world.is_wall(b)) throw WorldError("geodesic distance from a wall cell");
  const Cell src[] = {b};
  return distance_field(world, src)[world.index(a)];
}

bool is_connected(const World& world) {
  const auto free = world.free_cells();
  if (free.empty()) return false;
  const Cell src[] = {free.front()};
  const auto dist = distance_field(world, src);
  return std::all_of(free.begin(), free.end(),
                     [&](Cell c) { return dist[world.index(c)] != kUnreachable; });
}

Cell next_cell_towards(const World& world, const std::vector<int>& field, Pose from) {
  const int d = field[world.index(from.cell)];
  if (d == 0 || d == kUnreachable) return from.cell;
  const std::array<Heading, 5> order = {from.heading, Heading::kNorth, Heading::kEast,
                                        Heading::kSouth, Heading::kWest};
  for (Heading hd : order) {
    const Cell nb = from.cell + forward_offset(hd);
    if (world.is_free(nb) && field[world.index(nb)] == d - 1) return nb;
  }
  return from.cell;
}

Pose apply_action(const World& world, Pose pose, Action a) {
  switch (a) {
    case Action::kMoveForward: {
      const Cell nb = pose.cell + forward_offset(pose.heading);
      if (world.is_free(nb)) pose.cell = nb;
      break;
    }
    case Action::kTurnLeft: pose.heading = turn_left(pose.heading); break;
    case Action::kTurnRight: pose.heading = turn_right(pose.heading); break;
    case Action::kStop: break;
  }
  return pose;
}

std::vector<Action> shortest_path_actions_field(const World& world, Pose start,
                                                const std::vector<int>& field, int radius) {
  if (radius < 1) throw WorldError("success radius must be at least 1");
  if (world.is_wall(start.cell)) throw WorldError("start pose is on a wall cell");
  if (field[world.index(start.cell)] == kUnreachable) throw WorldError("goal is unreachable");
  if (field[world.index(start.cell)] <= radius) return {Action::kStop};

  // BFS over poses; forward moves are restricted to cells one step closer so
  // every plan has the minimum number of forward moves, and BFS minimizes the
  // number of turns on top of that.
  const std::size_t cells = world.index({world.height() - 1, world.width() - 1}) + 1;
  auto key = [&](Pose p) { return world.index(p.cell) * 4 + static_cast<std::size_t>(p.heading); };
  std::vector<int> parent(cells * 4, -1);
  std::vector<std::int8_t> via(cells * 4, -1);
  std::deque<Pose> queue{start};
  parent[key(start)] = static_cast<int>(key(start));
  static constexpr std::array<Action, 3> kMoves = {Action::kMoveForward, Action::kTurnLeft,
                                                   Action::kTurnRight};
  while (!queue.empty()) {
    const Pose p = queue.front();
    queue.pop_front();
    if (field[world.index(p.cell)] <= radius) {
      std::vector<Action> plan{Action::kStop};
      for (std::size_t k = key(p); static_cast<int>(k) != parent[k];
           k = static_cast<std::size_t>(parent[k])) {
        plan.push_back(static_cast<Action>(via[k]));
      }
      std::reverse(plan.begin(), plan.end());
      return plan;
    }
    for (Action a : kMoves) {
      const Pose q = apply_action(world, p, a);
      if (a == Action::kMoveForward &&
          (q.cell == p.cell || field[world.index(q.cell)] != field[world.index(p.cell)] - 1)) {
        continue;
      }
      if (parent[key(q)] != -1) continue;
      parent[key(q)] = static_cast<int>(key(p));
      via[key(q)] = static_cast<std::int8_t>(a);
      queue.push_back(q);
    }
  }
  throw WorldError("goal is unreachable");
}

std::vector<Action> shortest_path_actions(const World& world, Pose start, Cell goal, int radius) {
  if (world.is_wall(goal)) throw WorldError("goal is a wall cell");
  const Cell src[] = {goal};
  return shortest_path_actions_field(world, start, distance_field(world, src), radius);
}

}  // namespace descrl::sim
