#pragma once

#include <functional>
#include <string>
#include <vector>

#include "macg/data.hpp"
#include "macg/model.hpp"

namespace macg {

struct RankedItem {
  int gallery_index = -1;  // into the flattened gallery for the episode
  double score = 0.0;
  bool correct = false;
};

struct ProbeRanking {
  std::string probe_id;
  std::vector<RankedItem> items;   // scores non-increasing, ties in gallery order
  int first_correct_rank = 0;      // 1-based
};

struct RankTable {
  std::vector<ProbeRanking> probes;
};

struct CMCCurve {
  std::vector<double> accuracy;  // accuracy[k-1] = rank-(k) accuracy
  double at(int k) const { return accuracy.at(static_cast<size_t>(k - 1)); }
};

/// Rank-k accuracy = fraction of probes whose first correct match has rank <= k.
CMCCurve cmc(const RankTable& table, int max_rank);

/// Mean over probes of average precision across that probe's correct matches.
double mean_average_precision(const RankTable& table);

using GroupScorer = std::function<double(const DatasetRecord&, const DatasetRecord&)>;
/// Scores for all (probe person, gallery person) pairs of two records;
/// rows index probe persons, columns gallery persons.
using PersonScorer = std::function<Matrix(const DatasetRecord&, const DatasetRecord&)>;

/// Group re-id: every probe record ranked against all remaining gallery
/// records; correctness by group_id.
RankTable run_group_reid(const EvalProtocol& protocol, const GroupScorer& scorer);

/// Group-aware person re-id: every person of every probe record is ranked
/// against all persons of the other gallery records; the probe's own view is
/// excluded; correctness by person_id. Probe persons without any correct
/// gallery entry are skipped.
RankTable run_person_reid(const EvalProtocol& protocol, const PersonScorer& scorer);

// Trained-model scorers (pairwise forward passes).
GroupScorer macg_group_scorer(const ParameterSet& params, const ModelConfig& cfg);
PersonScorer macg_person_scorer(const ParameterSet& params, const ModelConfig& cfg);

// Context-free baselines over raw part features.
GroupScorer mean_pool_group_scorer();
PersonScorer part_distance_person_scorer();

}  // namespace macg
