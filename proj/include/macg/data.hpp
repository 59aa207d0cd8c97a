#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "macg/graph.hpp"

namespace macg {

/// One group-view worth of part features plus its identity labels. Records
/// with the same group_id across views share at least 60% of person_ids.
using DatasetRecord = PartFeatureSet;

struct SynthConfig {
  int identities = 50;
  int groups = 20;
  int members_min = 2;
  int members_max = 8;
  int views = 2;
  int feature_dim = 16;  // D
  int parts = 4;         // P
  double noise_sigma = 0.1;
  double occlusion_prob = 0.1;    // zero out a random part
  double replacement_prob = 0.1;  // swap a member for a different identity
  uint64_t seed = 0;

  void validate() const;
};

/// Deterministic synthetic stand-in for CNN part features: unit-normalized
/// per-part identity latents plus view noise, occlusion, and member churn.
std::vector<DatasetRecord> generate_synthetic(const SynthConfig& cfg);

/// Gallery-only records with fresh identities; never used as probes.
std::vector<DatasetRecord> generate_distractors(int count, int parts, int feature_dim,
                                                int members_min, int members_max,
                                                uint64_t seed);

/// Line-delimited records, one JSON object per line, floats at 17 significant
/// digits so write -> read is bit-exact.
void save_dataset(const std::string& path, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> load_dataset(const std::string& path);

/// Probe/gallery protocol: every record with a cross-view match serves once
/// as a probe against all remaining records; distractors join the gallery
/// only.
struct EvalProtocol {
  std::vector<DatasetRecord> gallery;
  std::vector<int> probe_indices;  // into gallery
};

EvalProtocol split_probe_gallery(const std::vector<DatasetRecord>& records,
                                 const std::vector<DatasetRecord>& distractors = {});

}  // namespace macg
