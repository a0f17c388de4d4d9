#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dogerm/errors.hpp"
#include "dogerm/eval.hpp"
#include "dogerm/log.hpp"
#include "dogerm/merge.hpp"
#include "dogerm/rmodel.hpp"
#include "dogerm/tensorstore.hpp"
#include "dogerm/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Invocation problems discovered after flag parsing; exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// All outputs go through a temp file + rename so failures never leave a
// partial file behind.
void atomic_write_text(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw dogerm::IoError("cannot open " + tmp.string() + " for writing");
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      throw dogerm::IoError("write failure on " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw dogerm::IoError("cannot rename " + tmp.string() + " to " + path.string());
  }
}

void atomic_save_checkpoint(const dogerm::NamedTensorMap& map, const fs::path& path) {
  fs::path tmp = path;
  tmp += ".tmp";
  dogerm::save_checkpoint(map, tmp);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw dogerm::IoError("cannot rename " + tmp.string() + " to " + path.string());
  }
}

void emit_report(const std::string& content, const std::string& report_path) {
  if (report_path.empty()) {
    std::cout << content;
  } else {
    atomic_write_text(report_path, content);
  }
}

struct MergeArgs {
  std::string sft, rm, out, rules, vocab_sft, vocab_rm;
  double lambda = 0.35;
  int threads = 1;
  bool allow_nonfinite = false;
};

struct EvalArgs {
  std::string model, config, vocab_rm, dataset, report;
  double bin_width = 0.0;
  bool has_bin_width = false;
  bool allow_nonfinite = false;
};

struct BestOfNArgs {
  std::string model, config, vocab_rm, candidates, report;
  int64_t n = 1;
  bool allow_nonfinite = false;
};

struct SweepArgs {
  std::string sft, rm, config, vocab_sft, vocab_rm, dataset, candidates, rules, report;
  std::string grid = "0.35";
  int64_t n = 1;
  bool has_candidates = false;
  int threads = 1;
  bool allow_nonfinite = false;
};

struct TrainArgs {
  std::string config, dataset, vocab_rm, out;
  int64_t steps = 300;
  double lr = 1e-2;
  uint64_t seed = 0;
  bool has_seed = false;
};

struct InspectArgs {
  std::string model, report;
  bool allow_nonfinite = false;
};

struct AlignArgs {
  std::string vocab_sft, vocab_rm, out;
};

dogerm::PartitionRules rules_or_default(const std::string& path) {
  if (path.empty()) {
    dogerm::log_debug("using built-in toy partition rules");
    return dogerm::PartitionRules::toy_defaults();
  }
  return dogerm::load_rules(path);
}

std::optional<dogerm::VocabAlignment> alignment_from_flags(const std::string& vocab_sft,
                                                           const std::string& vocab_rm) {
  if (vocab_sft.empty()) {
    return std::nullopt;
  }
  if (vocab_rm.empty()) {
    throw UsageError("--vocab-sft requires --vocab-rm");
  }
  return dogerm::align(dogerm::load_vocab(vocab_sft), dogerm::load_vocab(vocab_rm));
}

void stamp_config_metadata(dogerm::NamedTensorMap& map, const dogerm::ToyRMConfig& c) {
  map.set_metadata("d_ff", std::to_string(c.d_ff));
  map.set_metadata("d_model", std::to_string(c.d_model));
  map.set_metadata("max_seq_len", std::to_string(c.max_seq_len));
  map.set_metadata("n_heads", std::to_string(c.n_heads));
  map.set_metadata("n_layers", std::to_string(c.n_layers));
  map.set_metadata("seed", std::to_string(c.seed));
  map.set_metadata("vocab_size", std::to_string(c.vocab_size));
}

int run_merge(const MergeArgs& a) {
  const dogerm::LoadOptions load_opts{a.allow_nonfinite};
  const dogerm::NamedTensorMap sft = dogerm::load_checkpoint(a.sft, load_opts);
  const dogerm::NamedTensorMap rm = dogerm::load_checkpoint(a.rm, load_opts);

  dogerm::MergeSpec spec;
  spec.lambda = a.lambda;
  spec.rules = rules_or_default(a.rules);
  spec.alignment = alignment_from_flags(a.vocab_sft, a.vocab_rm);

  const dogerm::NamedTensorMap merged = dogerm::merge(sft, rm, spec, a.threads);
  atomic_save_checkpoint(merged, a.out);
  dogerm::log_info("merged " + std::to_string(merged.size()) + " tensors at lambda=" +
                   std::to_string(a.lambda) + " -> " + a.out);
  return 0;
}

int run_eval(const EvalArgs& a) {
  const dogerm::ToyRMConfig config = dogerm::load_config(a.config);
  const dogerm::ToyRM model = dogerm::ToyRM::from_params(
      config, dogerm::load_checkpoint(a.model, {a.allow_nonfinite}));
  const dogerm::Vocabulary vocab = dogerm::load_vocab(a.vocab_rm);
  const auto dataset = dogerm::load_preference_dataset(a.dataset, vocab);

  const dogerm::EvalReport report = dogerm::pairwise_accuracy(model, dataset);
  std::map<std::string, dogerm::GapStats> stats;
  const bool with_stats = a.has_bin_width;
  if (with_stats) {
    stats = dogerm::reward_gap_stats(model, dataset, a.bin_width);
  }
  emit_report(dogerm::eval_report_to_json(report, with_stats ? &stats : nullptr),
              a.report);
  return 0;
}

int run_bestofn(const BestOfNArgs& a) {
  const dogerm::ToyRMConfig config = dogerm::load_config(a.config);
  const dogerm::ToyRM model = dogerm::ToyRM::from_params(
      config, dogerm::load_checkpoint(a.model, {a.allow_nonfinite}));
  const dogerm::Vocabulary vocab = dogerm::load_vocab(a.vocab_rm);
  const auto sets = dogerm::load_candidate_sets(a.candidates);

  json selections = json::array();
  for (const dogerm::CandidateSet& set : sets) {
    selections.push_back(dogerm::best_of_n_select(model, vocab, set, a.n));
  }
  json j;
  j["n"] = a.n;
  j["best_of_n_accuracy"] = dogerm::best_of_n_accuracy(model, vocab, sets, a.n);
  j["pass_at_n"] = dogerm::pass_at_n(sets, a.n);
  j["selections"] = std::move(selections);
  emit_report(j.dump(2) + "\n", a.report);
  return 0;
}

int run_sweep(const SweepArgs& a) {
  const dogerm::LoadOptions load_opts{a.allow_nonfinite};
  const dogerm::NamedTensorMap sft = dogerm::load_checkpoint(a.sft, load_opts);
  const dogerm::NamedTensorMap rm = dogerm::load_checkpoint(a.rm, load_opts);
  const dogerm::ToyRMConfig config = dogerm::load_config(a.config);
  const dogerm::Vocabulary vocab = dogerm::load_vocab(a.vocab_rm);
  const auto dataset = dogerm::load_preference_dataset(a.dataset, vocab);
  const auto alignment = alignment_from_flags(a.vocab_sft, a.vocab_rm);
  const std::vector<double> grid = dogerm::parse_grid(a.grid);

  std::optional<dogerm::BestOfNJob> bon;
  if (a.has_candidates) {
    bon = dogerm::BestOfNJob{dogerm::load_candidate_sets(a.candidates), a.n};
  }

  dogerm::log_info("sweeping " + std::to_string(grid.size()) + " lambda values");
  const dogerm::SweepReport report =
      dogerm::lambda_sweep(sft, rm, rules_or_default(a.rules), alignment, grid, config,
                           vocab, dataset, bon, a.threads);

  emit_report(dogerm::sweep_report_to_json(report), a.report);
  if (!a.report.empty()) {
    fs::path csv = a.report;
    csv.replace_extension(".csv");
    atomic_write_text(csv, dogerm::sweep_report_to_csv(report));
    dogerm::log_info("wrote " + a.report + " and " + csv.string());
  }
  return 0;
}

int run_train_toy(const TrainArgs& a) {
  dogerm::ToyRMConfig config = dogerm::load_config(a.config);
  if (a.has_seed) {
    config.seed = a.seed;
  }
  const dogerm::Vocabulary vocab = dogerm::load_vocab(a.vocab_rm);
  const auto dataset = dogerm::load_preference_dataset(a.dataset, vocab);

  const dogerm::ToyRM model = dogerm::train_toy(config, dataset, a.steps, a.lr);
  dogerm::NamedTensorMap out = model.params();
  stamp_config_metadata(out, config);
  atomic_save_checkpoint(out, a.out);
  dogerm::log_info("trained " + std::to_string(a.steps) + " steps on " +
                   std::to_string(dataset.size()) + " examples -> " + a.out);
  return 0;
}

int run_inspect(const InspectArgs& a) {
  const dogerm::NamedTensorMap map =
      dogerm::load_checkpoint(a.model, {a.allow_nonfinite});
  const auto summaries = dogerm::inspect(map);

  if (!a.report.empty()) {
    json tensors = json::array();
    for (const auto& s : summaries) {
      tensors.push_back({{"name", s.name},
                         {"shape", s.shape},
                         {"dtype", s.dtype},
                         {"numel", s.numel},
                         {"min", s.min},
                         {"max", s.max},
                         {"mean", s.mean}});
    }
    json j;
    j["tensors"] = std::move(tensors);
    j["metadata"] = map.metadata();
    atomic_write_text(a.report, j.dump(2) + "\n");
    return 0;
  }

  for (const auto& s : summaries) {
    std::string shape = "[";
    for (size_t i = 0; i < s.shape.size(); ++i) {
      if (i > 0) shape += ",";
      shape += std::to_string(s.shape[i]);
    }
    shape += "]";
    char line[256];
    std::snprintf(line, sizeof(line), "%-40s %-14s %s numel=%lld min=%g max=%g mean=%g",
                  s.name.c_str(), shape.c_str(), s.dtype.c_str(),
                  static_cast<long long>(s.numel), s.min, s.max, s.mean);
    std::cout << line << "\n";
  }
  if (!map.metadata().empty()) {
    std::cout << "metadata:\n";
    for (const auto& [k, v] : map.metadata()) {
      std::cout << "  " << k << " = " << v << "\n";
    }
  }
  return 0;
}

int run_align(const AlignArgs& a) {
  const dogerm::Vocabulary sft = dogerm::load_vocab(a.vocab_sft);
  const dogerm::Vocabulary rm = dogerm::load_vocab(a.vocab_rm);
  const dogerm::VocabAlignment alignment = dogerm::align(sft, rm);
  atomic_write_text(a.out, dogerm::alignment_to_json(alignment));
  dogerm::log_info("aligned: " + std::to_string(alignment.shared.size()) + " shared, " +
                   std::to_string(alignment.unique_sft.size()) + " unique-sft, " +
                   std::to_string(alignment.unique_rm.size()) + " unique-rm");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DogeRM: domain-knowledge merged reward models"};
  app.require_subcommand(1);

  MergeArgs merge_args;
  CLI::App* cmd_merge =
      app.add_subcommand("merge", "Merge an SFT checkpoint into a reward model");
  cmd_merge->add_option("--sft", merge_args.sft, "SFT checkpoint")->required();
  cmd_merge->add_option("--rm", merge_args.rm, "reward-model checkpoint")->required();
  cmd_merge->add_option("--out", merge_args.out, "output checkpoint")->required();
  cmd_merge->add_option("--lambda", merge_args.lambda, "weight on SFT parameters")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cmd_merge->add_option("--rules", merge_args.rules,
                        "partition rules JSON (default: toy rules)");
  cmd_merge->add_option("--vocab-sft", merge_args.vocab_sft, "SFT vocabulary JSON");
  cmd_merge->add_option("--vocab-rm", merge_args.vocab_rm, "RM vocabulary JSON");
  cmd_merge->add_option("--threads", merge_args.threads, "merge worker threads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd_merge->add_flag("--allow-nonfinite", merge_args.allow_nonfinite,
                      "accept NaN/Inf values when loading");

  EvalArgs eval_args;
  CLI::App* cmd_eval =
      app.add_subcommand("eval", "Pairwise preference accuracy of a checkpoint");
  cmd_eval->add_option("--model", eval_args.model, "model checkpoint")->required();
  cmd_eval->add_option("--config", eval_args.config, "model config JSON")->required();
  cmd_eval->add_option("--vocab-rm", eval_args.vocab_rm, "vocabulary JSON")->required();
  cmd_eval->add_option("--dataset", eval_args.dataset, "preference JSONL")->required();
  cmd_eval->add_option("--report", eval_args.report, "report JSON path (default: stdout)");
  CLI::Option* bw = cmd_eval->add_option("--bin-width", eval_args.bin_width,
                                         "reward-gap histogram bin width")
                        ->check(CLI::PositiveNumber);
  cmd_eval->add_flag("--allow-nonfinite", eval_args.allow_nonfinite,
                     "accept NaN/Inf values when loading");
  cmd_eval->callback([&eval_args, bw] { eval_args.has_bin_width = bw->count() > 0; });

  BestOfNArgs bon_args;
  CLI::App* cmd_bon =
      app.add_subcommand("bestofn", "Best-of-N reranking accuracy with pass@N topline");
  cmd_bon->add_option("--model", bon_args.model, "model checkpoint")->required();
  cmd_bon->add_option("--config", bon_args.config, "model config JSON")->required();
  cmd_bon->add_option("--vocab-rm", bon_args.vocab_rm, "vocabulary JSON")->required();
  cmd_bon->add_option("--candidates", bon_args.candidates, "candidate-set JSONL")
      ->required();
  cmd_bon->add_option("--n", bon_args.n, "candidates considered per prompt")
      ->required()
      ->check(CLI::PositiveNumber);
  cmd_bon->add_option("--report", bon_args.report, "report JSON path (default: stdout)");
  cmd_bon->add_flag("--allow-nonfinite", bon_args.allow_nonfinite,
                    "accept NaN/Inf values when loading");

  SweepArgs sweep_args;
  CLI::App* cmd_sweep =
      app.add_subcommand("sweep", "Merge and evaluate across a lambda grid");
  cmd_sweep->add_option("--sft", sweep_args.sft, "SFT checkpoint")->required();
  cmd_sweep->add_option("--rm", sweep_args.rm, "reward-model checkpoint")->required();
  cmd_sweep->add_option("--config", sweep_args.config, "model config JSON")->required();
  cmd_sweep->add_option("--vocab-rm", sweep_args.vocab_rm, "vocabulary JSON")->required();
  cmd_sweep->add_option("--dataset", sweep_args.dataset, "preference JSONL")->required();
  cmd_sweep->add_option("--grid", sweep_args.grid,
                        "lambda grid: start:end:step or comma list")
      ->capture_default_str();
  cmd_sweep->add_option("--rules", sweep_args.rules,
                        "partition rules JSON (default: toy rules)");
  cmd_sweep->add_option("--vocab-sft", sweep_args.vocab_sft,
                        "SFT vocabulary JSON (enables alignment)");
  CLI::Option* cand = cmd_sweep->add_option("--candidates", sweep_args.candidates,
                                            "candidate-set JSONL for best-of-N");
  cmd_sweep->add_option("--n", sweep_args.n, "candidates considered per prompt")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd_sweep->add_option("--report", sweep_args.report,
                        "report JSON path; a sibling .csv is written too");
  cmd_sweep->add_option("--threads", sweep_args.threads, "merge worker threads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd_sweep->add_flag("--allow-nonfinite", sweep_args.allow_nonfinite,
                      "accept NaN/Inf values when loading");
  cmd_sweep->callback(
      [&sweep_args, cand] { sweep_args.has_candidates = cand->count() > 0; });

  TrainArgs train_args;
  CLI::App* cmd_train =
      app.add_subcommand("train-toy", "Train a toy reward model from scratch");
  cmd_train->add_option("--config", train_args.config, "model config JSON")->required();
  cmd_train->add_option("--dataset", train_args.dataset, "preference JSONL")->required();
  cmd_train->add_option("--vocab-rm", train_args.vocab_rm, "vocabulary JSON")->required();
  cmd_train->add_option("--out", train_args.out, "output checkpoint")->required();
  cmd_train->add_option("--steps", train_args.steps, "gradient-descent steps")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmd_train->add_option("--lr", train_args.lr, "learning rate")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  CLI::Option* seed = cmd_train->add_option("--seed", train_args.seed,
                                            "overrides the config's seed");
  cmd_train->callback([&train_args, seed] { train_args.has_seed = seed->count() > 0; });

  InspectArgs inspect_args;
  CLI::App* cmd_inspect = app.add_subcommand("inspect", "Summarize a checkpoint");
  cmd_inspect->add_option("--model", inspect_args.model, "checkpoint path")->required();
  cmd_inspect->add_option("--report", inspect_args.report,
                          "report JSON path (default: table on stdout)");
  cmd_inspect->add_flag("--allow-nonfinite", inspect_args.allow_nonfinite,
                        "accept NaN/Inf values when loading");

  AlignArgs align_args;
  CLI::App* cmd_align =
      app.add_subcommand("align", "Compute the shared/unique vocabulary partition");
  cmd_align->add_option("--vocab-sft", align_args.vocab_sft, "SFT vocabulary JSON")
      ->required();
  cmd_align->add_option("--vocab-rm", align_args.vocab_rm, "RM vocabulary JSON")
      ->required();
  cmd_align->add_option("--out", align_args.out, "alignment JSON path")->required();

  try {
    app.parse(argc, argv);
    if (app.got_subcommand(cmd_merge)) return run_merge(merge_args);
    if (app.got_subcommand(cmd_eval)) return run_eval(eval_args);
    if (app.got_subcommand(cmd_bon)) return run_bestofn(bon_args);
    if (app.got_subcommand(cmd_sweep)) return run_sweep(sweep_args);
    if (app.got_subcommand(cmd_train)) return run_train_toy(train_args);
    if (app.got_subcommand(cmd_inspect)) return run_inspect(inspect_args);
    if (app.got_subcommand(cmd_align)) return run_align(align_args);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << std::endl;
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << std::endl;
    return 2;
  } catch (const dogerm::Error& e) {
    std::cerr << "error: " << e.name() << ": " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
}
