#include "macg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "macg/errors.hpp"
#include "macg/rng.hpp"

namespace macg {

namespace {

using nlohmann::json;

std::string format_id(const char* prefix, int value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%04d", prefix, value);
  return buf;
}

std::string escape_json(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

std::vector<int> sample_distinct(Rng& rng, int pool, int count) {
  std::vector<int> idx(static_cast<size_t>(pool));
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < count; ++i) {
    int j = rng.uniform_int(i, pool - 1);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(count));
  return idx;
}

double shared_fraction(const std::vector<int>& a, const std::vector<int>& b) {
  std::set<int> sa(a.begin(), a.end());
  int shared = 0;
  for (int v : b) shared += sa.count(v) ? 1 : 0;
  return static_cast<double>(shared) / static_cast<double>(std::max(a.size(), b.size()));
}

}  // namespace

void SynthConfig::validate() const {
  if (identities < 1 || groups < 1 || views < 1 || parts < 1 || feature_dim < 1) {
    throw ContractError("SynthConfig: counts must be >= 1");
  }
  if (members_min < 1 || members_max < members_min) {
    throw ContractError("SynthConfig: invalid member range");
  }
  if (members_max > identities) {
    throw ContractError("SynthConfig: members_max exceeds identity pool");
  }
  for (double p : {occlusion_prob, replacement_prob}) {
    if (p < 0.0 || p > 1.0) throw ContractError("SynthConfig: probabilities must be in [0, 1]");
  }
  if (noise_sigma < 0.0) throw ContractError("SynthConfig: noise sigma must be >= 0");
}

std::vector<DatasetRecord> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  // One unit-normalized latent per identity and part, drawn once.
  std::vector<std::vector<std::vector<double>>> latents(static_cast<size_t>(cfg.identities));
  for (auto& person : latents) {
    person.resize(static_cast<size_t>(cfg.parts));
    for (auto& part : person) {
      part.resize(static_cast<size_t>(cfg.feature_dim));
      double norm2 = 0.0;
      for (auto& v : part) {
        v = rng.gaussian();
        norm2 += v * v;
      }
      double inv = 1.0 / std::sqrt(std::max(norm2, 1e-300));
      for (auto& v : part) v *= inv;
    }
  }

  // Rosters; distinct groups are kept below the 60% shared-member threshold so
  // group labels stay consistent with the annotation rule.
  std::vector<std::vector<int>> rosters;
  for (int g = 0; g < cfg.groups; ++g) {
    int size = rng.uniform_int(cfg.members_min, cfg.members_max);
    std::vector<int> roster = sample_distinct(rng, cfg.identities, size);
    for (int attempt = 0; attempt < 100; ++attempt) {
      bool clash = false;
      for (const auto& other : rosters) {
        if (shared_fraction(roster, other) >= 0.6) {
          clash = true;
          break;
        }
      }
      if (!clash) break;
      roster = sample_distinct(rng, cfg.identities, size);
    }
    rosters.push_back(std::move(roster));
  }

  // Replacements per view are capped so that any two views of a group still
  // share >= 60% of members: each view may deviate from the base roster by at
  // most 0.2n (0.4n when only the second view mutates).
  const bool single_mutating_view = cfg.views <= 2;

  std::vector<DatasetRecord> records;
  for (int g = 0; g < cfg.groups; ++g) {
    const std::vector<int>& base = rosters[static_cast<size_t>(g)];
    const int n = static_cast<int>(base.size());
    const int cap = static_cast<int>((single_mutating_view ? 0.4 : 0.2) * n);
    for (int v = 0; v < cfg.views; ++v) {
      std::vector<int> members = base;
      if (v > 0 && cfg.replacement_prob > 0.0 && cap > 0) {
        int replaced = 0;
        for (int i = 0; i < n && replaced < cap; ++i) {
          if (!rng.bernoulli(cfg.replacement_prob)) continue;
          // replacement identity outside the current member set
          for (int attempt = 0; attempt < 100; ++attempt) {
            int candidate = rng.uniform_int(0, cfg.identities - 1);
            if (std::find(members.begin(), members.end(), candidate) == members.end()) {
              members[static_cast<size_t>(i)] = candidate;
              ++replaced;
              break;
            }
          }
        }
      }

      DatasetRecord rec;
      rec.group_id = format_id("g", g);
      rec.view_id = format_id("v", v);
      for (int id : members) {
        PersonParts person;
        person.person_id = format_id("p", id);
        for (int q = 0; q < cfg.parts; ++q) {
          std::vector<double> feat(static_cast<size_t>(cfg.feature_dim), 0.0);
          bool occluded = rng.bernoulli(cfg.occlusion_prob);
          if (!occluded) {
            const auto& latent = latents[static_cast<size_t>(id)][static_cast<size_t>(q)];
            for (int k = 0; k < cfg.feature_dim; ++k) {
              feat[static_cast<size_t>(k)] =
                  latent[static_cast<size_t>(k)] + cfg.noise_sigma * rng.gaussian();
            }
          } else {
            // burn the noise draws so occlusion does not shift later streams
            for (int k = 0; k < cfg.feature_dim; ++k) rng.gaussian();
          }
          person.parts.push_back(std::move(feat));
        }
        rec.persons.push_back(std::move(person));
      }
      records.push_back(std::move(rec));
    }
  }
  return records;
}

std::vector<DatasetRecord> generate_distractors(int count, int parts, int feature_dim,
                                                int members_min, int members_max,
                                                uint64_t seed) {
  if (count <= 0) return {};
  SynthConfig cfg;
  cfg.identities = count * members_max;
  cfg.groups = count;
  cfg.members_min = members_min;
  cfg.members_max = members_max;
  cfg.views = 1;
  cfg.parts = parts;
  cfg.feature_dim = feature_dim;
  cfg.replacement_prob = 0.0;
  cfg.seed = seed;
  auto records = generate_synthetic(cfg);
  for (auto& rec : records) {
    rec.group_id = "x" + rec.group_id;
    for (auto& person : rec.persons) person.person_id = "x" + person.person_id;
  }
  return records;
}

void save_dataset(const std::string& path, const std::vector<DatasetRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("save_dataset: cannot open '" + path + "' for writing");
  char num[64];
  for (const auto& rec : records) {
    out << "{\"group_id\":\"" << escape_json(rec.group_id) << "\",\"view_id\":\""
        << escape_json(rec.view_id) << "\",\"persons\":[";
    for (size_t i = 0; i < rec.persons.size(); ++i) {
      const auto& person = rec.persons[i];
      if (i) out << ',';
      out << "{\"person_id\":\"" << escape_json(person.person_id) << "\",\"parts\":[";
      for (size_t q = 0; q < person.parts.size(); ++q) {
        if (q) out << ',';
        out << '[';
        for (size_t k = 0; k < person.parts[q].size(); ++k) {
          if (k) out << ',';
          std::snprintf(num, sizeof(num), "%.17g", person.parts[q][k]);
          out << num;
        }
        out << ']';
      }
      out << "]}";
    }
    out << "]}\n";
  }
  if (!out) throw DataError("save_dataset: write failure on '" + path + "'");
}

std::vector<DatasetRecord> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_dataset: cannot open '" + path + "'");
  std::vector<DatasetRecord> records;
  std::string line;
  int line_no = 0;
  int expected_parts = -1;
  int expected_dim = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("load_dataset: " + where + ": " + e.what());
    }
    try {
      DatasetRecord rec;
      rec.group_id = j.at("group_id").get<std::string>();
      rec.view_id = j.at("view_id").get<std::string>();
      std::set<std::string> seen_ids;
      for (const auto& pj : j.at("persons")) {
        PersonParts person;
        person.person_id = pj.at("person_id").get<std::string>();
        if (!seen_ids.insert(person.person_id).second) {
          throw DataError("load_dataset: " + where + ": duplicate person_id '" +
                          person.person_id + "'");
        }
        for (const auto& part : pj.at("parts")) {
          std::vector<double> feat = part.get<std::vector<double>>();
          for (double v : feat) {
            if (!std::isfinite(v)) {
              throw DataError("load_dataset: " + where + ": non-finite feature value");
            }
          }
          person.parts.push_back(std::move(feat));
        }
        if (person.parts.empty()) {
          throw DataError("load_dataset: " + where + ": person with no parts");
        }
        int p = static_cast<int>(person.parts.size());
        int d = static_cast<int>(person.parts[0].size());
        for (const auto& f : person.parts) {
          if (static_cast<int>(f.size()) != d) {
            throw DataError("load_dataset: " + where + ": ragged part dimensions");
          }
        }
        if (expected_parts < 0) {
          expected_parts = p;
          expected_dim = d;
        } else if (p != expected_parts || d != expected_dim) {
          throw DataError("load_dataset: " + where + ": person '" + person.person_id +
                          "' has " + std::to_string(p) + " parts of dim " + std::to_string(d) +
                          ", expected " + std::to_string(expected_parts) + " parts of dim " +
                          std::to_string(expected_dim));
        }
        rec.persons.push_back(std::move(person));
      }
      if (rec.persons.empty()) {
        throw DataError("load_dataset: " + where + ": record with no persons");
      }
      records.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw DataError("load_dataset: " + where + ": " + e.what());
    }
  }
  return records;
}

EvalProtocol split_probe_gallery(const std::vector<DatasetRecord>& records,
                                 const std::vector<DatasetRecord>& distractors) {
  EvalProtocol protocol;
  protocol.gallery = records;
  protocol.gallery.insert(protocol.gallery.end(), distractors.begin(), distractors.end());
  for (size_t i = 0; i < records.size(); ++i) {
    bool has_match = false;
    for (size_t j = 0; j < records.size() && !has_match; ++j) {
      has_match = i != j && records[i].group_id == records[j].group_id;
    }
    if (has_match) protocol.probe_indices.push_back(static_cast<int>(i));
  }
  if (protocol.probe_indices.empty()) {
    throw DataError("split_probe_gallery: no group appears in more than one view");
  }
  return protocol;
}

}  // namespace macg
