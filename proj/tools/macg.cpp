// macg: synthesize data, train, evaluate, and gradient-check the
// multi-attention context-graph re-identification model.

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "macg/data.hpp"
#include "macg/errors.hpp"
#include "macg/eval.hpp"
#include "macg/gradcheck.hpp"
#include "macg/matching.hpp"
#include "macg/model.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonFlags {
  uint64_t seed = 0;
  std::string data;
  std::string out;
  std::string ckpt;
};

struct ModelFlags {
  int parts = 4;
  int hidden = 16;
  int embed = 16;
  int layers = 2;
  int heads = 1;
  double tau = 1.0;
  double margin = 1.0;
  int sinkhorn_iters = 20;
  bool normalize = false;
  std::string ablate;  // comma-separated switch names
};

macg::AblationSwitches parse_ablation(const std::string& spec) {
  macg::AblationSwitches switches;
  std::stringstream ss(spec);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (token.empty()) continue;
    if (token == "intra_part") {
      switches.intra_part = false;
    } else if (token == "inter_part") {
      switches.inter_part = false;
    } else if (token == "inter_graph") {
      switches.inter_graph = false;
    } else if (token == "readout_attention" || token == "readout") {
      switches.readout_attention = false;
    } else if (token == "all") {
      switches = {false, false, false, false};
    } else {
      throw macg::ContractError("unknown ablation switch '" + token + "'");
    }
  }
  return switches;
}

macg::ModelConfig build_config(const ModelFlags& flags, int input_dim) {
  macg::ModelConfig cfg;
  cfg.parts = flags.parts;
  cfg.input_dim = input_dim;
  cfg.hidden_dim = flags.hidden;
  cfg.embed_dim = flags.embed;
  cfg.layers = flags.layers;
  cfg.heads = flags.heads;
  cfg.tau = flags.tau;
  cfg.margin = flags.margin;
  cfg.sinkhorn_train_iters = flags.sinkhorn_iters;
  cfg.normalize_embeddings = flags.normalize;
  cfg.ablation = parse_ablation(flags.ablate);
  cfg.validate();
  return cfg;
}

void echo_config(const std::string& command, const json& resolved) {
  json echo = resolved;
  echo["command"] = command;
  std::cout << "config: " << echo.dump() << "\n";
}

json dataset_summary(const std::vector<macg::DatasetRecord>& records) {
  std::set<std::string> groups, identities;
  int persons = 0;
  for (const auto& rec : records) {
    groups.insert(rec.group_id);
    for (const auto& person : rec.persons) {
      identities.insert(person.person_id);
      ++persons;
    }
  }
  return json{{"records", records.size()},
              {"groups", groups.size()},
              {"identities", identities.size()},
              {"person_boxes", persons}};
}

int shape_of(const std::vector<macg::DatasetRecord>& records, int& parts, int& dim) {
  if (records.empty()) throw macg::DataError("dataset is empty");
  parts = static_cast<int>(records[0].persons[0].parts.size());
  dim = static_cast<int>(records[0].persons[0].parts[0].size());
  return 0;
}

json cmc_report(const macg::RankTable& table, int max_rank) {
  macg::CMCCurve curve = macg::cmc(table, max_rank);
  json ranks = json::array();
  for (double v : curve.accuracy) ranks.push_back(v);
  json out{{"probes", table.probes.size()},
           {"cmc", ranks},
           {"map", macg::mean_average_precision(table)}};
  for (int k : {1, 5, 10, 20}) {
    if (k <= max_rank) out["r" + std::to_string(k)] = curve.at(k);
  }
  return out;
}

int cmd_synth(const CommonFlags& common, const macg::SynthConfig& synth) {
  auto records = macg::generate_synthetic(synth);
  macg::save_dataset(common.out, records);
  json echo{{"out", common.out},
            {"seed", synth.seed},
            {"identities", synth.identities},
            {"groups", synth.groups},
            {"views", synth.views},
            {"members_min", synth.members_min},
            {"members_max", synth.members_max},
            {"parts", synth.parts},
            {"dim", synth.feature_dim},
            {"sigma", synth.noise_sigma},
            {"occlusion", synth.occlusion_prob},
            {"replacement", synth.replacement_prob}};
  echo_config("synth", echo);
  std::cout << "summary: " << dataset_summary(records).dump() << "\n";
  return kExitOk;
}

int cmd_train(const CommonFlags& common, ModelFlags model, int epochs, double lr,
              const std::string& milestones_flag) {
  auto records = macg::load_dataset(common.data);
  int data_parts = 0, data_dim = 0;
  shape_of(records, data_parts, data_dim);
  if (model.parts != data_parts) {
    throw macg::DataError("dataset has " + std::to_string(data_parts) +
                          " parts per person; pass --parts " + std::to_string(data_parts));
  }
  macg::ModelConfig cfg = build_config(model, data_dim);

  macg::TrainSchedule schedule;
  schedule.epochs = epochs;
  schedule.initial_lr = lr;
  if (!milestones_flag.empty()) {
    schedule.milestones.clear();
    std::stringstream ss(milestones_flag);
    std::string token;
    while (std::getline(ss, token, ',')) {
      if (!token.empty()) schedule.milestones.push_back(std::stoi(token));
    }
  }

  json echo{{"data", common.data},
            {"ckpt", common.ckpt},
            {"seed", common.seed},
            {"epochs", schedule.epochs},
            {"lr", schedule.initial_lr},
            {"milestones", schedule.milestones},
            {"model", json::parse(macg::config_to_json_string(cfg))}};
  echo_config("train", echo);

  macg::Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.seed = common.seed;
  try {
    macg::TrainResult result = macg::train_model(
        records, cfg, schedule, common.seed, [](const macg::EpochStats& stats) {
          std::cout << "epoch " << stats.epoch << " steps " << stats.steps << " lr " << stats.lr
                    << " total " << stats.mean.total << " group " << stats.mean.group
                    << " person " << stats.mean.person << " pce " << stats.mean.pce << "\n";
          if (!std::isfinite(stats.mean.total)) {
            throw macg::NumericError("train: non-finite epoch loss");
          }
        });
    ckpt.params = std::move(result.params);
  } catch (const macg::NumericError& e) {
    // keep the last finite state on disk before propagating the failure
    ckpt.params = macg::init_params(cfg, common.seed);
    macg::save_checkpoint(common.ckpt, ckpt);
    std::cerr << "train aborted: " << e.what() << " (initial checkpoint retained at "
              << common.ckpt << ")\n";
    return kExitNumeric;
  }
  macg::save_checkpoint(common.ckpt, ckpt);
  std::cout << "checkpoint: " << common.ckpt << "\n";
  return kExitOk;
}

int cmd_eval(const CommonFlags& common, const std::string& task, int distractors,
             int max_rank) {
  macg::Checkpoint ckpt = macg::load_checkpoint(common.ckpt);
  auto records = macg::load_dataset(common.data);
  int data_parts = 0, data_dim = 0;
  shape_of(records, data_parts, data_dim);
  if (data_parts != ckpt.config.parts || data_dim != ckpt.config.input_dim) {
    throw macg::DataError("checkpoint expects P=" + std::to_string(ckpt.config.parts) +
                          " D=" + std::to_string(ckpt.config.input_dim) + ", dataset has P=" +
                          std::to_string(data_parts) + " D=" + std::to_string(data_dim));
  }

  std::vector<macg::DatasetRecord> extra;
  if (distractors > 0) {
    extra = macg::generate_distractors(distractors, data_parts, data_dim, 2, 8,
                                       common.seed + 0x5eed);
  }
  macg::EvalProtocol protocol = macg::split_probe_gallery(records, extra);

  json echo{{"ckpt", common.ckpt},
            {"data", common.data},
            {"seed", common.seed},
            {"task", task},
            {"distractors", distractors},
            {"model", json::parse(macg::config_to_json_string(ckpt.config))}};
  echo_config("eval", echo);

  json report{{"seed", common.seed}, {"task", task}};
  if (task == "group" || task == "both") {
    macg::RankTable table =
        macg::run_group_reid(protocol, macg::macg_group_scorer(ckpt.params, ckpt.config));
    report["group"] = cmc_report(table, max_rank);
  }
  if (task == "person" || task == "both") {
    macg::RankTable table =
        macg::run_person_reid(protocol, macg::macg_person_scorer(ckpt.params, ckpt.config));
    report["person"] = cmc_report(table, max_rank);
  }
  std::cout << "report: " << report.dump() << "\n";
  if (!common.out.empty()) {
    std::ofstream out(common.out);
    if (!out) throw macg::DataError("cannot write report to '" + common.out + "'");
    out << report.dump(2) << "\n";
  }
  return kExitOk;
}

int cmd_gradcheck(uint64_t seed, double tol, int nodes, int parts, int dim, int hidden) {
  macg::ModelConfig cfg;
  cfg.parts = parts;
  cfg.input_dim = dim;
  cfg.hidden_dim = hidden;
  cfg.embed_dim = hidden;
  json echo{{"seed", seed}, {"tol", tol},    {"nodes", nodes},
            {"parts", parts}, {"dim", dim}, {"hidden", hidden}};
  echo_config("gradcheck", echo);

  // random positive pair with identical rosters, padded by one dummy
  macg::SynthConfig synth;
  synth.identities = nodes + 2;
  synth.groups = 1;
  synth.members_min = nodes;
  synth.members_max = nodes;
  synth.views = 2;
  synth.parts = parts;
  synth.feature_dim = dim;
  synth.noise_sigma = 0.25;
  synth.occlusion_prob = 0.0;
  synth.replacement_prob = 0.0;
  synth.seed = seed;
  auto records = macg::generate_synthetic(synth);
  macg::PreparedPair pair = macg::prepare_pair(records[0], records[1], cfg);
  pair.s = macg::pad_to_size(pair.s, pair.s.node_count + 1);
  pair.r = macg::pad_to_size(pair.r, pair.r.node_count + 1);
  pair.labels = macg::make_pair_labels(pair.s, pair.r, cfg.margin);

  macg::ParameterSet params = macg::init_params(cfg, seed);
  auto fn = [&](macg::Tape& t, const macg::ad::ParamVars& vars) {
    macg::ParamVarSet pv = macg::param_vars_from_map(cfg, vars);
    macg::PairTrace trace = macg::forward_pair_traced(t, pair.s, pair.r, pv, cfg);
    macg::Var loss = macg::group_pair_loss(t, trace.h_s, trace.h_r, pair.labels.group_label,
                                           pair.labels.margin);
    loss = t.add(loss, macg::person_pair_loss(t, trace.final_s, trace.final_r,
                                              pair.s.real_mask, pair.r.real_mask, pair.labels));
    loss = t.add(loss, macg::permutation_ce(t, trace.sinkhorn, pair.labels.gt_permutation,
                                            pair.s.real_mask, pair.r.real_mask));
    return loss;
  };
  macg::ad::GradCheckReport report = macg::ad::grad_check(fn, params.named(), tol);
  for (const auto& entry : report.entries) {
    std::cout << (entry.max_rel_err < tol ? "ok   " : "FAIL ") << entry.param
              << " max_rel_err " << entry.max_rel_err << "\n";
  }
  std::cout << (report.pass ? "gradcheck: PASS" : "gradcheck: FAIL") << " worst "
            << report.worst << " (" << report.worst_param << ") tol " << tol << "\n";
  return report.pass ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-attention context graph engine for group re-identification"};
  app.require_subcommand(1);
  app.set_config("--config");

  CommonFlags common;
  ModelFlags model;

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset file");
  macg::SynthConfig synth;
  synth_cmd->add_option("--out", common.out, "output dataset path")->required();
  synth_cmd->add_option("--seed", synth.seed, "generator seed");
  synth_cmd->add_option("--identities", synth.identities, "identity pool size");
  synth_cmd->add_option("--groups", synth.groups, "number of groups");
  synth_cmd->add_option("--views", synth.views, "views per group");
  synth_cmd->add_option("--members-min", synth.members_min, "min members per group");
  synth_cmd->add_option("--members-max", synth.members_max, "max members per group");
  synth_cmd->add_option("--parts", synth.parts, "parts per person");
  synth_cmd->add_option("--dim", synth.feature_dim, "part feature dimension");
  synth_cmd->add_option("--sigma", synth.noise_sigma, "view noise sigma");
  synth_cmd->add_option("--occlusion", synth.occlusion_prob, "part occlusion probability");
  synth_cmd->add_option("--replacement", synth.replacement_prob,
                        "member replacement probability");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  int epochs = 200;
  double lr = 3e-4;
  std::string milestones;
  train_cmd->add_option("--data", common.data, "dataset path")->required();
  train_cmd->add_option("--ckpt", common.ckpt, "checkpoint output path")->required();
  train_cmd->add_option("--seed", common.seed, "training seed");
  train_cmd->add_option("--epochs", epochs, "training epochs");
  train_cmd->add_option("--lr", lr, "initial learning rate");
  train_cmd->add_option("--milestones", milestones, "comma-separated lr-drop epochs");
  train_cmd->add_option("--parts", model.parts, "parts per person");
  train_cmd->add_option("--layers", model.layers, "message-passing layers T");
  train_cmd->add_option("--heads", model.heads, "attention heads");
  train_cmd->add_option("--tau", model.tau, "affinity temperature");
  train_cmd->add_option("--margin", model.margin, "pair-loss margin");
  train_cmd->add_option("--sinkhorn-iters", model.sinkhorn_iters, "training sinkhorn unroll");
  train_cmd->add_option("--hidden", model.hidden, "hidden width d");
  train_cmd->add_option("--embed", model.embed, "group embedding width");
  train_cmd->add_flag("--normalize", model.normalize, "unit-normalize group embeddings");
  train_cmd->add_option("--ablate", model.ablate,
                        "disable attention mechanisms (comma list: intra_part, inter_part, "
                        "inter_graph, readout_attention, all)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string task = "both";
  int distractors = 0;
  int max_rank = 20;
  eval_cmd->add_option("--ckpt", common.ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--data", common.data, "dataset path")->required();
  eval_cmd->add_option("--out", common.out, "optional report output path");
  eval_cmd->add_option("--seed", common.seed, "seed for distractor generation");
  eval_cmd->add_option("--task", task, "group | person | both")
      ->check(CLI::IsMember({"group", "person", "both"}));
  eval_cmd->add_option("--distractors", distractors, "synthetic distractor gallery records");
  eval_cmd->add_option("--max-rank", max_rank, "CMC curve length K");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the pair loss");
  uint64_t grad_seed = 1;
  double tol = 1e-4;
  int grad_nodes = 3, grad_parts = 3, grad_dim = 6, grad_hidden = 6;
  grad_cmd->add_option("--seed", grad_seed, "instance seed");
  grad_cmd->add_option("--tol", tol, "relative tolerance");
  grad_cmd->add_option("--nodes", grad_nodes, "real nodes per graph");
  grad_cmd->add_option("--parts", grad_parts, "parts per person");
  grad_cmd->add_option("--dim", grad_dim, "input feature dimension");
  grad_cmd->add_option("--hidden", grad_hidden, "hidden width");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(common, synth);
    if (train_cmd->parsed()) return cmd_train(common, model, epochs, lr, milestones);
    if (eval_cmd->parsed()) return cmd_eval(common, task, distractors, max_rank);
    if (grad_cmd->parsed()) {
      return cmd_gradcheck(grad_seed, tol, grad_nodes, grad_parts, grad_dim, grad_hidden);
    }
  } catch (const macg::ContractError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const macg::DimensionError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const macg::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const macg::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}
