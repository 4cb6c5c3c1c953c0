#include "einv/ensemble.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "einv/error.hpp"

namespace einv {

std::vector<std::string> Ensemble::member_ids() const {
  std::vector<std::string> ids;
  for (const auto& m : members) ids.push_back(m->id());
  return ids;
}

bool Ensemble::contains(const std::string& model_id) const {
  return std::any_of(members.begin(), members.end(), [&](const ModelPtr& m) { return m->id() == model_id; });
}

void Ensemble::validate() const {
  if (members.empty()) throw ValidationError("ensemble is empty");
  if (class_maps.size() != members.size()) throw ValidationError("one class map per member is required");
  if (shared_class_count <= 0) throw ValidationError("shared_class_count must be positive");
  if (static_cast<std::int64_t>(canonical_labels.size()) != shared_class_count) {
    throw ValidationError("canonical_labels must have shared_class_count entries");
  }
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto nc = members[i]->num_classes();
    if (shared_class_count > nc) throw ValidationError("shared_class_count exceeds a member's class count");
    if (static_cast<std::int64_t>(class_maps[i].size()) != shared_class_count) {
      throw ValidationError("class map of " + members[i]->id() + " has the wrong length");
    }
    std::set<std::int64_t> seen;
    for (const auto v : class_maps[i]) {
      if (v < 0 || v >= nc || !seen.insert(v).second) {
        throw ValidationError("class map of " + members[i]->id() + " is not injective into its outputs");
      }
    }
  }
}

json Ensemble::to_json() const {
  json members_json = json::array();
  for (std::size_t i = 0; i < members.size(); ++i) {
    members_json.push_back({{"model_id", members[i]->id()},
                            {"weights_sha256", members[i]->weights_hash()},
                            {"class_map", class_maps[i]}});
  }
  return {{"members", members_json}, {"shared_class_count", shared_class_count}, {"canonical_labels", canonical_labels}};
}

Ensemble identity_ensemble(std::vector<ModelPtr> members, std::int64_t shared_class_count) {
  if (members.empty()) throw ValidationError("ensemble is empty");
  if (shared_class_count < 0) {
    shared_class_count = members.front()->num_classes();
    for (const auto& m : members) shared_class_count = std::min(shared_class_count, m->num_classes());
  }
  Ensemble e;
  e.shared_class_count = shared_class_count;
  e.canonical_labels.resize(static_cast<std::size_t>(shared_class_count));
  std::iota(e.canonical_labels.begin(), e.canonical_labels.end(), 0);
  e.class_maps.assign(members.size(), e.canonical_labels);
  e.members = std::move(members);
  e.validate();
  return e;
}

}  // namespace einv
