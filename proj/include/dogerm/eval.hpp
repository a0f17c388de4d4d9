#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dogerm/merge.hpp"
#include "dogerm/rmodel.hpp"
#include "dogerm/tensor.hpp"
#include "dogerm/vocab.hpp"

namespace dogerm {

struct Candidate {
  std::string text;
  bool correct = false;
};

// Best-of-N input: correctness flags come from the dataset, never inferred.
struct CandidateSet {
  std::string prompt;
  std::vector<Candidate> candidates;
};

// JSONL loaders. Preference lines are
//   {"prompt":str, "chosen":str, "rejected":str, "category":str}
// and candidate lines are
//   {"prompt":str, "candidates":[{"text":str, "correct":bool}, ...]}
std::vector<PreferenceExample> load_preference_dataset(
    const std::filesystem::path& path, const Vocabulary& vocab);
std::vector<CandidateSet> load_candidate_sets(const std::filesystem::path& path);

double score_text_pair(const ToyRM& model, const Vocabulary& vocab,
                       const std::string& prompt, const std::string& response);

// Per-example chosen/rejected rewards. Examples whose combined length
// exceeds the model's max_seq_len are flagged skipped, not dropped.
struct PairScore {
  double chosen = 0.0;
  double rejected = 0.0;
  bool skipped = false;
};
std::vector<PairScore> score_preferences(const ToyRM& model,
                                         const std::vector<PreferenceExample>& dataset);

struct CategoryCount {
  int64_t correct = 0;
  int64_t total = 0;
  bool operator==(const CategoryCount&) const = default;
};

// An example counts correct iff the chosen reward is strictly greater than
// the rejected one; ties carry no preference signal and count incorrect.
// Categories with no evaluated examples are absent from the maps.
struct EvalReport {
  std::map<std::string, double> accuracy;
  std::map<std::string, CategoryCount> counts;
  std::map<std::string, double> mean_reward_gap;
  std::map<std::string, int64_t> skipped;
  int64_t total_skipped = 0;
  bool operator==(const EvalReport&) const = default;
};

EvalReport pairwise_accuracy(const ToyRM& model,
                             const std::vector<PreferenceExample>& dataset);

struct GapHistogram {
  double bin_width = 0.0;
  double lo = 0.0;                // left edge of the first bin
  std::vector<int64_t> counts;    // bins partition [lo, lo + bins*width]
};

struct GapStats {
  int64_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;            // population
  GapHistogram histogram;
};

// Pure stats core, exposed for direct testing.
GapStats gap_stats_from(const std::vector<double>& gaps, double bin_width);

std::map<std::string, GapStats> reward_gap_stats(
    const ToyRM& model, const std::vector<PreferenceExample>& dataset,
    double bin_width);

// Argmax over the first n rewards; ties break to the lowest index.
int64_t select_from_rewards(std::span<const double> rewards, int64_t n);

int64_t best_of_n_select(const ToyRM& model, const Vocabulary& vocab,
                         const CandidateSet& set, int64_t n);
double best_of_n_accuracy(const ToyRM& model, const Vocabulary& vocab,
                          const std::vector<CandidateSet>& sets, int64_t n);

// Fraction of sets whose first n candidates include at least one correct
// flag; the ceiling for best-of-n accuracy.
double pass_at_n(const std::vector<CandidateSet>& sets, int64_t n);

struct BestOfNJob {
  std::vector<CandidateSet> sets;
  int64_t n = 1;
};

struct SweepRecord {
  double lambda = 0.0;
  EvalReport report;
  std::optional<double> best_of_n;
};

struct SweepReport {
  std::vector<double> grid;
  std::vector<SweepRecord> records;  // ordered by lambda
};

// Merges at every grid point and evaluates pairwise accuracy (plus optional
// best-of-N). Merge failures are reported with the failing lambda attached.
SweepReport lambda_sweep(const NamedTensorMap& sft, const NamedTensorMap& rm,
                         const PartitionRules& rules,
                         const std::optional<VocabAlignment>& alignment,
                         const std::vector<double>& grid, const ToyRMConfig& config,
                         const Vocabulary& vocab,
                         const std::vector<PreferenceExample>& dataset,
                         const std::optional<BestOfNJob>& best_of_n, int threads = 1);

// Grid syntax: "start:end:step" (endpoints included when the step divides
// the span), or a comma-separated list of values, or one value.
std::vector<double> parse_grid(const std::string& text);

// Report serialization: JSON carries everything, CSV one row per
// (lambda, category) with columns lambda,category,accuracy,mean_gap.
std::string eval_report_to_json(const EvalReport& report,
                                const std::map<std::string, GapStats>* gap_stats = nullptr);
std::string sweep_report_to_json(const SweepReport& report);
std::string sweep_report_to_csv(const SweepReport& report);

}  // namespace dogerm
