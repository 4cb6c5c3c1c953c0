#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "einv/model.hpp"

namespace einv {

// The attacked models plus, per member, the map canonical class -> output index.
struct Ensemble {
  std::vector<ModelPtr> members;
  std::vector<std::vector<std::int64_t>> class_maps;
  std::int64_t shared_class_count = 0;
  // Class index in the reference model's label space for each canonical class.
  std::vector<std::int64_t> canonical_labels;

  std::size_t size() const { return members.size(); }
  std::vector<std::string> member_ids() const;
  bool contains(const std::string& model_id) const;
  // Throws ValidationError when an invariant does not hold.
  void validate() const;
  json to_json() const;  // ids, hashes and maps; members themselves live in model artifacts
};

// Members that share one label order: identity maps over `shared_class_count` classes.
Ensemble identity_ensemble(std::vector<ModelPtr> members, std::int64_t shared_class_count = -1);

}  // namespace einv
