#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string_view>

namespace descrl::sim {

enum class Heading : std::uint8_t { kNorth = 0, kEast = 1, kSouth = 2, kWest = 3 };

enum class Action : std::uint8_t { kMoveForward = 0, kTurnLeft = 1, kTurnRight = 2, kStop = 3 };

inline constexpr int kNumActions = 4;

struct Cell {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

struct Pose {
  Cell cell;
  Heading heading = Heading::kNorth;
  friend bool operator==(const Pose&, const Pose&) = default;
};

/// Unit step (drow, dcol) when facing `h`.
constexpr Cell forward_offset(Heading h) {
  switch (h) {
    case Heading::kNorth: return {-1, 0};
    case Heading::kEast: return {0, 1};
    case Heading::kSouth: return {1, 0};
    case Heading::kWest: return {0, -1};
  }
  return {0, 0};
}

/// Unit step to the agent's right when facing `h`.
constexpr Cell right_offset(Heading h) { return forward_offset(Heading((int(h) + 1) % 4)); }

constexpr Heading turn_left(Heading h) { return Heading((int(h) + 3) % 4); }
constexpr Heading turn_right(Heading h) { return Heading((int(h) + 1) % 4); }

constexpr Cell operator+(Cell a, Cell b) { return {a.row + b.row, a.col + b.col}; }

std::string_view action_name(Action a);
Action action_from_name(std::string_view name);
std::string_view heading_name(Heading h);
Heading heading_from_name(std::string_view name);

// Semantic labels: room types first, then object categories.
inline constexpr std::array<std::string_view, 12> kRoomNames = {
    "bedroom", "kitchen", "bathroom", "hallway", "office", "lounge",
    "dining",  "laundry", "garage",   "study",   "nursery", "closet"};

inline constexpr std::array<std::string_view, 21> kObjectNames = {
    "chair", "table",  "picture", "cabinet", "cushion", "sofa",      "bed",
    "drawers", "plant", "sink",   "toilet",  "stool",   "towel",     "tv",
    "shower", "bathtub", "counter", "fireplace", "lamp", "shelf", "clothes"};

inline constexpr int kNumRoomTypes = static_cast<int>(kRoomNames.size());
inline constexpr int kNumObjectCategories = static_cast<int>(kObjectNames.size());
/// N_sem: number of semantic labels.
inline constexpr int kNumSemantic = kNumRoomTypes + kNumObjectCategories;

constexpr int room_label(int room_type) { return room_type; }
constexpr int object_label(int category) { return kNumRoomTypes + category; }
constexpr bool is_room_label(int label) { return label >= 0 && label < kNumRoomTypes; }
constexpr bool is_object_label(int label) {
  return label >= kNumRoomTypes && label < kNumSemantic;
}

inline std::string_view label_name(int label) {
  if (is_room_label(label)) return kRoomNames[static_cast<std::size_t>(label)];
  if (is_object_label(label)) {
    return kObjectNames[static_cast<std::size_t>(label - kNumRoomTypes)];
  }
  throw std::out_of_range("semantic label out of range");
}

}  // namespace descrl::sim
