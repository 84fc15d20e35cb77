#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace descrl::describe {

inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kPad = 2;
/// Longest description, EOS included.
inline constexpr int kMaxDescriptionLength = 24;

/// Closed token set: BOS, EOS, PAD, verbs, directions, spatial words, then
/// one noun per semantic label in label order.
class Vocabulary {
 public:
  Vocabulary();

  static const Vocabulary& instance();

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  /// Throws std::out_of_range for words outside the vocabulary.
  int id(std::string_view word) const;
  bool contains(std::string_view word) const;
  int noun(int semantic_label) const;

  /// Space-separated words; special tokens are skipped.
  std::string decode(std::span<const int> ids) const;
  /// Words to ids without adding EOS.
  std::vector<int> encode(std::string_view text) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int first_noun_ = 0;
};

}  // namespace descrl::describe
