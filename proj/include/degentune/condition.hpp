#pragma once

#include <string>

#include "degentune/errors.hpp"

namespace dgt {

/// Conditioning input: a registered concept id or the None condition (the
/// " " prompt analog). Concept ids index the model's embedding table.
class Condition {
 public:
  static Condition none() { return Condition(); }
  static Condition for_concept(int id) {
    if (id < 0) throw ValidationError("concept id must be >= 0");
    Condition c;
    c.id_ = id;
    return c;
  }

  bool is_none() const { return id_ < 0; }
  int concept_id() const {
    if (is_none()) throw ValidationError("Condition: None has no concept id");
    return id_;
  }

  std::string str() const {
    return is_none() ? "none" : std::to_string(id_);
  }

  bool operator==(const Condition&) const = default;

 private:
  int id_ = -1;
};

/// Parses "none" or a non-negative integer id.
inline Condition parse_condition(const std::string& s) {
  if (s == "none" || s == "None" || s.empty()) return Condition::none();
  try {
    return Condition::for_concept(std::stoi(s));
  } catch (const std::exception&) {
    throw ValidationError("condition must be 'none' or a concept id, got '" + s + "'");
  }
}

}  // namespace dgt
