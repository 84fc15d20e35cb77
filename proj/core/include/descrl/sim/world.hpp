#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "descrl/sim/types.hpp"

namespace descrl::sim {

inline constexpr int kUnreachable = std::numeric_limits<int>::max();

class WorldError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct WorldConfig {
  int height = 11;
  int width = 11;
  int rooms = 3;
  int objects = 5;
};

struct PlacedObject {
  int category = 0;  // index into kObjectNames
  Cell cell;
  friend bool operator==(const PlacedObject&, const PlacedObject&) = default;
};

/// Grid scene: every cell is a wall or free; free cells carry a room-type
/// label; objects sit on free cells. Immutable once generated.
class World {
 public:
  World() = default;
  World(int height, int width, std::vector<std::uint8_t> walls, std::vector<std::uint8_t> rooms,
        std::vector<PlacedObject> objects, std::uint64_t seed);

  int height() const { return height_; }
  int width() const { return width_; }
  std::uint64_t seed() const { return seed_; }

  bool in_bounds(Cell c) const {
    return c.row >= 0 && c.row < height_ && c.col >= 0 && c.col < width_;
  }
  bool is_wall(Cell c) const { return !in_bounds(c) || walls_[index(c)] != 0; }
  bool is_free(Cell c) const { return !is_wall(c); }
  /// Room-type label of a free cell.
  int room_at(Cell c) const { return rooms_[index(c)]; }
  /// Object index at a cell, or -1.
  int object_at(Cell c) const { return in_bounds(c) ? object_index_[index(c)] : -1; }
  /// Semantic label seen at a free cell: the object category if one is
  /// present, otherwise the room type.
  int semantic_at(Cell c) const;

  const std::vector<PlacedObject>& objects() const { return objects_; }
  std::vector<Cell> free_cells() const;
  std::size_t index(Cell c) const {
    return static_cast<std::size_t>(c.row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(c.col);
  }
  Cell cell_at(std::size_t i) const {
    return {static_cast<int>(i / static_cast<std::size_t>(width_)),
            static_cast<int>(i % static_cast<std::size_t>(width_))};
  }

  const std::vector<std::uint8_t>& wall_mask() const { return walls_; }
  const std::vector<std::uint8_t>& room_labels() const { return rooms_; }

  friend bool operator==(const World& a, const World& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.walls_ == b.walls_ &&
           a.rooms_ == b.rooms_ && a.objects_ == b.objects_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> walls_;
  std::vector<std::uint8_t> rooms_;
  std::vector<PlacedObject> objects_;
  std::vector<int> object_index_;
  std::uint64_t seed_ = 0;
};

/// Procedural scene: border walls, recursive room division with one door per
/// dividing wall, random room types, objects on free non-door cells.
/// Deterministic in (seed, cfg). Throws WorldError for infeasible configs.
World generate_world(std::uint64_t seed, const WorldConfig& cfg);

/// 4-connected BFS distances from the nearest source to every cell
/// (kUnreachable for walls and disconnected cells).
std::vector<int> distance_field(const World& world, std::span<const Cell> sources);

/// Geodesic distance in cells; throws WorldError if either cell is a wall.
int geodesic_distance(const World& world, Cell a, Cell b);

/// True if every free cell is reachable from every other.
bool is_connected(const World& world);

/// Next cell towards the sources: a neighbour with distance one less,
/// preferring the current heading, then N, E, S, W. Returns `from` when
/// already at a source.
Cell next_cell_towards(const World& world, const std::vector<int>& field, Pose from);

/// Optimal action sequence from `start` to any cell within `radius` of the
/// goal, ending with Stop. Throws WorldError if the goal is unreachable.
std::vector<Action> shortest_path_actions(const World& world, Pose start, Cell goal,
                                          int radius = 1);
/// Same, towards the sources of a precomputed distance field.
std::vector<Action> shortest_path_actions_field(const World& world, Pose start,
                                                const std::vector<int>& field, int radius);

/// Pose after executing an action (walls block forward moves).
Pose apply_action(const World& world, Pose pose, Action a);

}  // namespace descrl::sim
