#include "descrl/describe/vocabulary.hpp"

#include <sstream>
#include <stdexcept>

#include "descrl/sim/types.hpp"

namespace descrl::describe {

Vocabulary::Vocabulary() {
  tokens_ = {"<bos>", "<eos>", "<pad>", "go",   "turn",   "pass", "enter", "stop",
             "wait",  "left",  "right", "forward", "near", "toward", "into", "past", "the"};
  first_noun_ = static_cast<int>(tokens_.size());
  for (int label = 0; label < sim::kNumSemantic; ++label) {
    tokens_.emplace_back(sim::label_name(label));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw std::logic_error("duplicate vocabulary token " + tokens_[i]);
    }
  }
}

const Vocabulary& Vocabulary::instance() {
  static const Vocabulary vocab;
  return vocab;
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) throw std::out_of_range("word '" + std::string(word) + "' not in vocabulary");
  return it->second;
}

bool Vocabulary::contains(std::string_view word) const {
  return index_.contains(std::string(word));
}

int Vocabulary::noun(int semantic_label) const {
  if (semantic_label < 0 || semantic_label >= sim::kNumSemantic) {
    throw std::out_of_range("semantic label out of range");
  }
  return first_noun_ + semantic_label;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kBos || id == kEos || id == kPad) continue;
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::istringstream in{std::string(text)};
  std::vector<int> ids;
  for (std::string word; in >> word;) ids.push_back(id(word));
  return ids;
}

}  // namespace descrl::describe
