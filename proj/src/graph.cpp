#include "macg/graph.hpp"

#include "macg/errors.hpp"

namespace macg {

int ContextGraph::real_count() const {
  int n = 0;
  for (bool b : real_mask) n += b ? 1 : 0;
  return n;
}

ContextGraph build_context_graph(const PartFeatureSet& features) {
  if (features.persons.empty()) {
    throw DataError("build_context_graph: empty person list in group '" +
                    features.group_id + "'");
  }
  const int n = static_cast<int>(features.persons.size());
  const int p = static_cast<int>(features.persons[0].parts.size());
  if (p < 1) throw DataError("build_context_graph: person with no parts");
  const int d = static_cast<int>(features.persons[0].parts[0].size());

  ContextGraph g;
  g.group_id = features.group_id;
  g.view_id = features.view_id;
  g.node_count = n;
  g.part_count = p;
  g.feature_dim = d;
  g.adjacency = Matrix::filled(n, n, 1.0);
  g.real_mask.assign(static_cast<size_t>(n), true);

  g.states.layer = 0;
  g.states.parts.assign(static_cast<size_t>(p), Matrix(d, n));
  for (int i = 0; i < n; ++i) {
    const PersonParts& person = features.persons[static_cast<size_t>(i)];
    if (static_cast<int>(person.parts.size()) != p) {
      throw DataError("build_context_graph: person '" + person.person_id + "' has " +
                      std::to_string(person.parts.size()) + " parts, expected " +
                      std::to_string(p));
    }
    for (int q = 0; q < p; ++q) {
      const auto& vec = person.parts[static_cast<size_t>(q)];
      if (static_cast<int>(vec.size()) != d) {
        throw DataError("build_context_graph: part dimension " +
                        std::to_string(vec.size()) + " vs " + std::to_string(d) +
                        " for person '" + person.person_id + "'");
      }
      for (int k = 0; k < d; ++k) g.states.parts[static_cast<size_t>(q)](k, i) = vec[static_cast<size_t>(k)];
    }
    g.person_ids.push_back(person.person_id);
  }
  return g;
}

ContextGraph pad_to_size(const ContextGraph& g, int node_count) {
  if (node_count < g.node_count) {
    throw ContractError("pad_to_size: target " + std::to_string(node_count) +
                        " smaller than node count " + std::to_string(g.node_count));
  }
  if (node_count == g.node_count) return g;

  ContextGraph out = g;
  out.node_count = node_count;
  out.adjacency = Matrix::filled(node_count, node_count, 1.0);
  out.real_mask.resize(static_cast<size_t>(node_count), false);
  out.person_ids.resize(static_cast<size_t>(node_count), kDummyPersonId);
  for (auto& part : out.states.parts) {
    Matrix widened(part.rows(), node_count);
    for (int i = 0; i < part.rows(); ++i)
      for (int j = 0; j < part.cols(); ++j) widened(i, j) = part(i, j);
    part = std::move(widened);
  }
  return out;
}

}  // namespace macg
