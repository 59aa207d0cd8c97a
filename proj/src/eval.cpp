#include "macg/eval.hpp"

#include <algorithm>
#include <cmath>

#include "macg/errors.hpp"

namespace macg {

namespace {

// Stable sort by descending score keeps gallery insertion order on ties.
void rank_items(ProbeRanking& probe) {
  std::stable_sort(probe.items.begin(), probe.items.end(),
                   [](const RankedItem& a, const RankedItem& b) { return a.score > b.score; });
  probe.first_correct_rank = 0;
  for (size_t k = 0; k < probe.items.size(); ++k) {
    if (probe.items[k].correct) {
      probe.first_correct_rank = static_cast<int>(k) + 1;
      break;
    }
  }
}

}  // namespace

CMCCurve cmc(const RankTable& table, int max_rank) {
  if (table.probes.empty()) throw ContractError("cmc: empty rank table");
  if (max_rank < 1) throw ContractError("cmc: max rank must be >= 1");
  CMCCurve curve;
  curve.accuracy.assign(static_cast<size_t>(max_rank), 0.0);
  for (const auto& probe : table.probes) {
    if (probe.first_correct_rank < 1) {
      throw ContractError("cmc: probe '" + probe.probe_id + "' has no correct gallery match");
    }
    for (int k = probe.first_correct_rank; k <= max_rank; ++k) {
      curve.accuracy[static_cast<size_t>(k - 1)] += 1.0;
    }
  }
  for (auto& v : curve.accuracy) v /= static_cast<double>(table.probes.size());
  return curve;
}

double mean_average_precision(const RankTable& table) {
  if (table.probes.empty()) throw ContractError("mean_average_precision: empty rank table");
  double total = 0.0;
  for (const auto& probe : table.probes) {
    if (probe.first_correct_rank < 1) {
      throw ContractError("mean_average_precision: probe '" + probe.probe_id +
                          "' has no correct gallery match");
    }
    int hits = 0;
    double ap = 0.0;
    for (size_t k = 0; k < probe.items.size(); ++k) {
      if (probe.items[k].correct) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(k + 1);
      }
    }
    total += ap / static_cast<double>(hits);
  }
  return total / static_cast<double>(table.probes.size());
}

RankTable run_group_reid(const EvalProtocol& protocol, const GroupScorer& scorer) {
  if (protocol.gallery.size() < 2) throw ContractError("run_group_reid: empty gallery");
  RankTable table;
  for (int probe_index : protocol.probe_indices) {
    const DatasetRecord& probe = protocol.gallery[static_cast<size_t>(probe_index)];
    ProbeRanking ranking;
    ranking.probe_id = probe.group_id + "/" + probe.view_id;
    for (size_t g = 0; g < protocol.gallery.size(); ++g) {
      if (static_cast<int>(g) == probe_index) continue;
      const DatasetRecord& candidate = protocol.gallery[g];
      RankedItem item;
      item.gallery_index = static_cast<int>(g);
      item.score = scorer(probe, candidate);
      item.correct = candidate.group_id == probe.group_id;
      ranking.items.push_back(item);
    }
    rank_items(ranking);
    table.probes.push_back(std::move(ranking));
  }
  return table;
}

RankTable run_person_reid(const EvalProtocol& protocol, const PersonScorer& scorer) {
  if (protocol.gallery.size() < 2) throw ContractError("run_person_reid: empty gallery");
  RankTable table;
  for (int probe_index : protocol.probe_indices) {
    const DatasetRecord& probe = protocol.gallery[static_cast<size_t>(probe_index)];
    const int probe_persons = static_cast<int>(probe.persons.size());
    std::vector<ProbeRanking> rankings(static_cast<size_t>(probe_persons));
    for (int i = 0; i < probe_persons; ++i) {
      rankings[static_cast<size_t>(i)].probe_id =
          probe.group_id + "/" + probe.view_id + "/" + probe.persons[static_cast<size_t>(i)].person_id;
    }
    int flat_index = 0;
    for (size_t g = 0; g < protocol.gallery.size(); ++g) {
      if (static_cast<int>(g) == probe_index) continue;  // own view excluded
      const DatasetRecord& candidate = protocol.gallery[g];
      Matrix scores = scorer(probe, candidate);
      if (scores.rows() != probe_persons ||
          scores.cols() != static_cast<int>(candidate.persons.size())) {
        throw DimensionError("run_person_reid: scorer shape mismatch");
      }
      for (int j = 0; j < scores.cols(); ++j) {
        const std::string& gallery_person = candidate.persons[static_cast<size_t>(j)].person_id;
        for (int i = 0; i < probe_persons; ++i) {
          RankedItem item;
          item.gallery_index = flat_index + j;
          item.score = scores(i, j);
          item.correct = gallery_person == probe.persons[static_cast<size_t>(i)].person_id;
          rankings[static_cast<size_t>(i)].items.push_back(item);
        }
      }
      flat_index += scores.cols();
    }
    for (auto& ranking : rankings) {
      rank_items(ranking);
      // probe persons that never re-appear carry no retrieval episode
      if (ranking.first_correct_rank >= 1) table.probes.push_back(std::move(ranking));
    }
  }
  if (table.probes.empty()) {
    throw DataError("run_person_reid: no probe person has a gallery match");
  }
  return table;
}

GroupScorer macg_group_scorer(const ParameterSet& params, const ModelConfig& cfg) {
  return [&params, cfg](const DatasetRecord& a, const DatasetRecord& b) {
    PreparedPair pair = prepare_pair(a, b, cfg);
    return score_group_pair(pair.s, pair.r, params, cfg);
  };
}

PersonScorer macg_person_scorer(const ParameterSet& params, const ModelConfig& cfg) {
  return [&params, cfg](const DatasetRecord& a, const DatasetRecord& b) {
    PreparedPair pair = prepare_pair(a, b, cfg);
    PersonScores scores = score_person_pairs(pair.s, pair.r, params, cfg);
    // strip padding back to the real person counts
    Matrix out(static_cast<int>(a.persons.size()), static_cast<int>(b.persons.size()));
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) out(i, j) = scores.similarity(i, j);
    return out;
  };
}

GroupScorer mean_pool_group_scorer() {
  return [](const DatasetRecord& a, const DatasetRecord& b) {
    auto pool = [](const DatasetRecord& rec) {
      std::vector<double> mean;
      int count = 0;
      for (const auto& person : rec.persons) {
        for (const auto& part : person.parts) {
          if (mean.empty()) mean.assign(part.size(), 0.0);
          for (size_t k = 0; k < part.size(); ++k) mean[k] += part[k];
          ++count;
        }
      }
      for (auto& v : mean) v /= static_cast<double>(count);
      return mean;
    };
    std::vector<double> pa = pool(a), pb = pool(b);
    if (pa.size() != pb.size()) throw DimensionError("mean_pool_group_scorer: dim mismatch");
    double dist2 = 0.0;
    for (size_t k = 0; k < pa.size(); ++k) {
      double d = pa[k] - pb[k];
      dist2 += d * d;
    }
    return -dist2;
  };
}

PersonScorer part_distance_person_scorer() {
  return [](const DatasetRecord& a, const DatasetRecord& b) {
    Matrix out(static_cast<int>(a.persons.size()), static_cast<int>(b.persons.size()));
    for (int i = 0; i < out.rows(); ++i) {
      const auto& pa = a.persons[static_cast<size_t>(i)];
      for (int j = 0; j < out.cols(); ++j) {
        const auto& pb = b.persons[static_cast<size_t>(j)];
        if (pa.parts.size() != pb.parts.size()) {
          throw DimensionError("part_distance_person_scorer: part count mismatch");
        }
        double dist2 = 0.0;
        for (size_t q = 0; q < pa.parts.size(); ++q) {
          for (size_t k = 0; k < pa.parts[q].size(); ++k) {
            double d = pa.parts[q][k] - pb.parts[q][k];
            dist2 += d * d;
          }
        }
        out(i, j) = -dist2;
      }
    }
    return out;
  };
}

}  // namespace macg
