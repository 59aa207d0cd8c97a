#pragma once

#include <string>
#include <vector>

#include "macg/matrix.hpp"

namespace macg {

using ad::Matrix;

inline constexpr const char* kDummyPersonId = "__dummy__";

/// One group member: P part-feature vectors of equal dimension.
struct PersonParts {
  std::string person_id;
  std::vector<std::vector<double>> parts;
};

/// Per-group stack of part features for one camera view.
struct PartFeatureSet {
  std::string group_id;
  std::string view_id;
  std::vector<PersonParts> persons;
};

/// Part features of all nodes at one layer. Stored as one width x N matrix
/// per part; columns are nodes.
struct NodeStates {
  int layer = 0;
  std::vector<Matrix> parts;

  int part_count() const { return static_cast<int>(parts.size()); }
  int node_count() const { return parts.empty() ? 0 : parts[0].cols(); }
  int width() const { return parts.empty() ? 0 : parts[0].rows(); }
};

/// Fully connected context graph over group members, with dummy-node padding
/// handled through real_mask (edges are never removed).
struct ContextGraph {
  std::string group_id;
  std::string view_id;
  int node_count = 0;
  int part_count = 0;
  int feature_dim = 0;
  NodeStates states;              // layer-0 features
  Matrix adjacency;               // N x N, all ones including the diagonal
  std::vector<bool> real_mask;    // false on dummy slots
  std::vector<std::string> person_ids;  // dummy slots carry kDummyPersonId

  int real_count() const;
};

ContextGraph build_context_graph(const PartFeatureSet& features);

/// Appends zero-feature dummy nodes up to node_count; original nodes are
/// untouched and adjacency stays all-ones.
ContextGraph pad_to_size(const ContextGraph& g, int node_count);

}  // namespace macg
