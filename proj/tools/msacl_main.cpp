#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <CLI11.hpp>

#include "msacl/dataset.hpp"
#include "msacl/evaluate.hpp"
#include "msacl/featurize.hpp"
#include "msacl/neighbors.hpp"
#include "msacl/objective.hpp"
#include "msacl/synthgen.hpp"
#include "msacl/tower.hpp"
#include "msacl/util.hpp"

namespace {

using namespace msacl;

const std::vector<std::string> kVariants = {"tt", "tt-fd", "msacl-content",
                                            "msacl-kg", "msacl-kg-fd"};

AugmentationSource source_for(const std::string& variant, Scalar p, int k) {
  if (variant == "tt") return AugmentationSource::make_dropout(0.0);
  if (variant == "tt-fd") return AugmentationSource::make_dropout(p);
  if (variant == "msacl-content") {
    return AugmentationSource::content_neighbors(k, p);
  }
  if (variant == "msacl-kg") return AugmentationSource::kg_neighbors(k, p);
  if (variant == "msacl-kg-fd") {
    return AugmentationSource::composite(
        {AugmentationSource::kg_neighbors(k, p),
         AugmentationSource::make_dropout(p)},
        CompositeRule::chain);
  }
  throw ArgumentError("unknown variant \"" + variant + "\"");
}

std::vector<int> dims_for_layers(int layers) {
  std::vector<int> dims;
  for (int l = 1; l < layers; ++l) dims.push_back(64);
  dims.push_back(32);
  return dims;
}

struct GenArgs {
  std::string out;
  SynthConfig config;
  std::vector<double> split = {0.8, 0.1, 0.1};
};

struct TrainArgs {
  std::string data;
  std::string out;
  std::string log_path;
  std::string variant = "tt";
  std::vector<int> layers = {2};
  std::vector<int> hidden;
  std::vector<double> dropouts = {0.5};
  bool approximate_neighbors = false;
  TrainConfig config;
};

struct EvalArgs {
  std::string data;
  std::string out;
  std::vector<std::string> checkpoints;
  std::vector<std::string> baselines;
  std::string split = "test";
  bool no_mask = false;
  int threads = 1;
};

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

void print_dataset_stats(const DatasetBundle& bundle) {
  long split_users[3] = {0, 0, 0};
  for (int u = 0; u < static_cast<int>(bundle.users.size()); ++u) {
    ++split_users[static_cast<int>(bundle.split_of(u))];
  }
  long split_inter[3] = {0, 0, 0};
  for (const auto& pr : bundle.interactions.positives) {
    ++split_inter[static_cast<int>(bundle.interactions.split.at(pr.first))];
  }
  std::unordered_set<std::string> shows;
  for (const auto& e : bundle.episodes) shows.insert(e.show_id);
  const long total = static_cast<long>(bundle.interactions.positives.size());
  std::cout << "users: " << bundle.users.size() << " (train " << split_users[0]
            << " / valid " << split_users[1] << " / test " << split_users[2]
            << ")\n";
  std::cout << "shows: " << shows.size()
            << "  episodes: " << bundle.episodes.size() << "\n";
  std::cout << "interactions: " << total << " (train " << split_inter[0]
            << " / valid " << split_inter[1] << " / test " << split_inter[2]
            << ")\n";
  if (!bundle.users.empty()) {
    std::cout << "interactions per user: "
              << static_cast<double>(total) /
                     static_cast<double>(bundle.users.size())
              << "\n";
  }
}

int cmd_gen_data(GenArgs& args) {
  if (args.split.size() != 3) {
    std::cerr << "error: --split needs exactly three ratios\n";
    return 2;
  }
  args.config.split_ratios = {args.split[0], args.split[1], args.split[2]};
  const DatasetBundle bundle = generate(args.config);
  std::filesystem::create_directories(args.out);
  save_dataset(bundle, args.out);
  std::cout << "dataset written to " << args.out << "\n";
  print_dataset_stats(bundle);
  return 0;
}

int cmd_train(TrainArgs& args) {
  if (args.variant == "tt") {
    args.config.lambda = 0.0;
    args.dropouts = {0.0};
  }
  DatasetBundle bundle = load_dataset(args.data);
  const EncodedDataset enc = encode_dataset(bundle);

  std::vector<std::vector<int>> hidden_grid;
  std::vector<int> layer_tags;
  if (!args.hidden.empty()) {
    hidden_grid.push_back(args.hidden);
    layer_tags.push_back(static_cast<int>(args.hidden.size()));
  } else {
    for (int layers : args.layers) {
      if (layers <= 0) {
        std::cerr << "error: --layers entries must be positive\n";
        return 2;
      }
      hidden_grid.push_back(dims_for_layers(layers));
      layer_tags.push_back(layers);
    }
  }

  // Neighbor caches depend only on the space and K, so one build serves
  // every grid cell.
  const AugmentationSource probe =
      source_for(args.variant, 0.0, args.config.neighbor_k);
  const IndexMode mode = args.approximate_neighbors ? IndexMode::approximate
                                                    : IndexMode::exact;
  NeighborTable content_table, kg_table;
  NeighborCaches caches;
  if (probe.uses_content()) {
    const auto index = build_index(bundle, SpaceTag::content, mode, {},
                                   args.config.seed);
    content_table = build_neighbor_table(index, args.config.neighbor_k,
                                         args.config.threads);
    caches.content = &content_table;
  }
  if (probe.uses_kg()) {
    const auto index =
        build_index(bundle, SpaceTag::kg, mode, {}, args.config.seed);
    kg_table = build_neighbor_table(index, args.config.neighbor_k,
                                    args.config.threads);
    caches.kg = &kg_table;
  }

  struct Cell {
    TrainConfig config;
    TrainResult result;
    int layers = 0;
    double dropout = 0.0;
  };
  Cell best;
  bool have_best = false;
  const bool grid = hidden_grid.size() * args.dropouts.size() > 1;
  for (std::size_t h = 0; h < hidden_grid.size(); ++h) {
    for (double p : args.dropouts) {
      TrainConfig config = args.config;
      config.hidden_dims = hidden_grid[h];
      config.dropout_p = p;
      config.source = source_for(args.variant, p, config.neighbor_k);
      TrainResult result = train(bundle, enc, caches, config);
      if (grid) {
        std::cout << "cell layers=" << layer_tags[h] << " dropout=" << p
                  << ": val_ndcg20=" << result.best_val_ndcg20
                  << " (epoch " << result.best_epoch << ")\n";
      }
      if (!have_best || result.best_val_ndcg20 > best.result.best_val_ndcg20) {
        best = Cell{std::move(config), std::move(result), layer_tags[h], p};
        have_best = true;
      }
    }
  }

  if (!args.log_path.empty()) {
    std::ofstream log(args.log_path);
    if (!log) {
      throw IoError("cannot open " + args.log_path + " for writing");
    }
    for (const auto& entry : best.result.log) {
      log << entry.to_json() << "\n";
    }
  }

  Checkpoint ckpt;
  ckpt.user_schema_id = enc.user_schema.id;
  ckpt.episode_schema_id = enc.episode_schema.id;
  ckpt.config_hash = best.result.config_hash;
  ckpt.seed = best.config.seed;
  ckpt.variant = args.variant;
  ckpt.params = best.result.params;
  save_checkpoint(ckpt, args.out);

  if (grid) {
    std::cout << "best cell: layers=" << best.layers
              << " dropout=" << best.dropout << "\n";
  }
  std::cout << "variant " << args.variant << ": best val_ndcg20="
            << best.result.best_val_ndcg20 << " at epoch "
            << best.result.best_epoch << " (config "
            << to_hex(best.result.config_hash) << ")\n";
  if (best.result.augmentation_fallbacks > 0) {
    std::cout << "augmentation fallbacks: "
              << best.result.augmentation_fallbacks << "\n";
  }
  std::cout << "checkpoint written to " << args.out << "\n";
  return 0;
}

int cmd_eval(EvalArgs& args) {
  if (args.checkpoints.empty() && args.baselines.empty()) {
    std::cerr << "error: nothing to evaluate; pass --checkpoint and/or "
                 "--baselines\n";
    return 2;
  }
  for (const auto& b : args.baselines) {
    if (b != "pop" && b != "pop-country" && b != "pop-age-country") {
      std::cerr << "error: unknown baseline \"" << b
                << "\" (valid: pop, pop-country, pop-age-country)\n";
      return 2;
    }
  }
  DatasetBundle bundle = load_dataset(args.data);
  const EncodedDataset enc = encode_dataset(bundle);
  const SplitId split = split_from_string(args.split);
  EvalOptions opts;
  opts.mask_familiar_shows = !args.no_mask;
  opts.threads = args.threads;

  std::vector<RankingReport> reports;
  std::vector<Checkpoint> checkpoints;
  checkpoints.reserve(args.checkpoints.size());
  std::unordered_map<std::string, int> name_uses;
  for (const auto& path : args.checkpoints) {
    checkpoints.push_back(load_checkpoint(path));
    Checkpoint& ckpt = checkpoints.back();
    check_schema_compatibility(ckpt, enc.user_schema.id, enc.episode_schema.id);
    std::string name = ckpt.variant.empty()
                           ? std::filesystem::path(path).stem().string()
                           : ckpt.variant;
    const int n = name_uses[name]++;
    if (n > 0) name += "#" + std::to_string(n + 1);
    TowerScorer scorer(bundle, enc, ckpt.params, name);
    RankingReport report = evaluate_model(scorer, bundle, split, opts);
    report.config_hash = ckpt.config_hash;
    report.seed = ckpt.seed;
    reports.push_back(std::move(report));
  }
  for (const auto& b : args.baselines) {
    const PopKind kind = b == "pop" ? PopKind::global
                         : b == "pop-country" ? PopKind::country
                                              : PopKind::age_country;
    PopScorer scorer(bundle, kind);
    reports.push_back(evaluate_model(scorer, bundle, split, opts));
  }

  {
    std::ofstream out(args.out + ".json");
    if (!out) throw IoError("cannot open " + args.out + ".json for writing");
    out << report_json(reports);
  }
  const std::string table = report_table(reports);
  {
    std::ofstream out(args.out + ".txt");
    if (!out) throw IoError("cannot open " + args.out + ".txt for writing");
    out << table;
  }
  {
    std::ofstream out(args.out + "_buckets.csv");
    if (!out) {
      throw IoError("cannot open " + args.out + "_buckets.csv for writing");
    }
    out << bucket_csv(reports);
  }
  std::cout << table;
  std::cout << "reports written to " << args.out << ".{json,txt} and "
            << args.out << "_buckets.csv\n";
  return 0;
}

int cmd_report(ReportArgs& args) {
  std::vector<RankingReport> merged;
  for (const auto& path : args.inputs) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    auto reports = parse_report_json(buffer.str());
    for (auto& r : reports) merged.push_back(std::move(r));
  }
  const std::string table = report_table(merged);
  {
    std::ofstream out(args.out + ".txt");
    if (!out) throw IoError("cannot open " + args.out + ".txt for writing");
    out << table;
  }
  {
    std::ofstream out(args.out + "_buckets.csv");
    if (!out) {
      throw IoError("cannot open " + args.out + "_buckets.csv for writing");
    }
    out << bucket_csv(merged);
  }
  std::cout << table;
  std::cout << "comparison written to " << args.out << ".txt and " << args.out
            << "_buckets.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "msacl: two-tower episode retrieval with multi-source contrastive "
      "augmentation"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "Key-value config file with [section] blocks per subcommand; "
                 "command-line flags take precedence");

  const int default_threads = msacl::default_thread_count("MSACL_THREADS");

  GenArgs gen;
  auto* gen_cmd =
      app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_cmd->add_option("--out", gen.out, "Output dataset directory")
      ->required();
  gen_cmd->add_option("--seed", gen.config.seed, "Generator seed");
  gen_cmd->add_option("--users", gen.config.users, "User count");
  gen_cmd->add_option("--shows", gen.config.shows, "Show count");
  gen_cmd->add_option("--episodes-min", gen.config.episodes_per_show_min,
                      "Minimum episodes per show");
  gen_cmd->add_option("--episodes-max", gen.config.episodes_per_show_max,
                      "Maximum episodes per show");
  gen_cmd->add_option("--topics", gen.config.topics, "Latent topic count");
  gen_cmd->add_option("--cf-dim", gen.config.cf_dim, "CF embedding dim");
  gen_cmd->add_option("--podcast-dim", gen.config.podcast_dim,
                      "User podcast embedding dim");
  gen_cmd->add_option("--content-dim", gen.config.content_dim,
                      "Content embedding dim");
  gen_cmd->add_option("--kg-dim", gen.config.kg_dim, "KG embedding dim");
  gen_cmd->add_option("--interactions-per-user",
                      gen.config.interactions_per_user,
                      "Mean positives per user (at least 1)");
  gen_cmd->add_option("--affinity", gen.config.affinity_sharpness,
                      "User topic-preference concentration");
  gen_cmd->add_option("--kg-strength", gen.config.kg_signal_strength,
                      "KG embedding signal strength in [0,1]");
  gen_cmd->add_option("--content-strength", gen.config.content_signal_strength,
                      "Content embedding signal strength in [0,1]");
  gen_cmd->add_option("--noise", gen.config.noise_level,
                      "Episode mixture noise level");
  gen_cmd->add_option("--split", gen.split,
                      "Train/valid/test user ratios")
      ->delimiter(',')
      ->expected(3);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a retrieval model");
  train_cmd->add_option("--data", train_args.data, "Dataset directory")
      ->required();
  train_cmd->add_option("--out", train_args.out, "Checkpoint output path")
      ->required();
  train_cmd
      ->add_option("--variant", train_args.variant,
                   "Model variant: tt, tt-fd, msacl-content, msacl-kg, "
                   "msacl-kg-fd")
      ->check(CLI::IsMember(kVariants));
  train_cmd->add_option("--lambda", train_args.config.lambda,
                        "Contrastive weight (tt forces 0)");
  train_cmd->add_option("--k-neg", train_args.config.k_negatives,
                        "Sampled negatives per interaction");
  train_cmd->add_option("--batch", train_args.config.batch_size, "Batch size");
  train_cmd->add_option("--tau", train_args.config.temperature,
                        "Contrastive temperature");
  train_cmd->add_option("--epochs", train_args.config.epochs, "Epochs");
  train_cmd->add_option("--lr", train_args.config.learning_rate,
                        "Adam learning rate");
  train_cmd
      ->add_option("--dropout", train_args.dropouts,
                   "Feature dropout probability; a comma list runs a grid")
      ->delimiter(',');
  train_cmd
      ->add_option("--layers", train_args.layers,
                   "Tower depth; a comma list runs a grid")
      ->delimiter(',');
  train_cmd
      ->add_option("--hidden", train_args.hidden,
                   "Explicit hidden widths, overrides --layers")
      ->delimiter(',');
  train_cmd->add_option("--neighbor-k", train_args.config.neighbor_k,
                        "Neighbor list length for augmentation");
  train_cmd->add_option("--seed", train_args.config.seed, "Training seed");
  train_cmd->add_flag("--linear-head", train_args.config.linear_head,
                      "Drop the ReLU on the final tower layer");
  train_cmd->add_flag("--symmetric", train_args.config.symmetric,
                      "Two-direction contrastive loss");
  train_cmd->add_flag("--in-batch-negatives",
                      train_args.config.in_batch_negatives,
                      "Use other batch positives as negatives");
  train_cmd->add_flag("--ann", train_args.approximate_neighbors,
                      "Approximate neighbor index instead of exact");
  train_args.config.threads = default_threads;
  train_cmd->add_option("--threads", train_args.config.threads,
                        "Worker thread cap");
  train_cmd->add_option("--log", train_args.log_path,
                        "Training log output (JSON lines)");

  EvalArgs eval_args;
  eval_args.threads = default_threads;
  auto* eval_cmd =
      app.add_subcommand("eval", "Evaluate checkpoints and baselines");
  eval_cmd->add_option("--data", eval_args.data, "Dataset directory")
      ->required();
  eval_cmd->add_option("--out", eval_args.out, "Report path prefix")
      ->required();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoints,
                       "Checkpoint file (repeatable)");
  eval_cmd
      ->add_option("--baselines", eval_args.baselines,
                   "Comma list of pop, pop-country, pop-age-country")
      ->delimiter(',');
  eval_cmd->add_option("--split", eval_args.split, "Split: train, valid, test");
  eval_cmd->add_flag("--no-mask", eval_args.no_mask,
                     "Rank the full catalog instead of discovery candidates");
  eval_cmd->add_option("--threads", eval_args.threads, "Worker thread cap");

  ReportArgs report_args;
  auto* report_cmd =
      app.add_subcommand("report", "Merge evaluation reports");
  report_cmd
      ->add_option("--in", report_args.inputs, "Report JSON files (repeatable)")
      ->required();
  report_cmd->add_option("--out", report_args.out, "Output path prefix")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(gen_cmd)) return cmd_gen_data(gen);
    if (app.got_subcommand(train_cmd)) return cmd_train(train_args);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(eval_args);
    if (app.got_subcommand(report_cmd)) return cmd_report(report_args);
  } catch (const msacl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
