#include "dogerm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dogerm/errors.hpp"

namespace dogerm {

using nlohmann::json;

namespace {

json parse_jsonl_line(const std::filesystem::path& path, const std::string& line,
                      size_t lineno) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
  }
}

std::string require_string(const std::filesystem::path& path, const json& j,
                           const char* key, size_t lineno) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw FormatError(path.string() + ":" + std::to_string(lineno) +
                      ": missing string field \"" + key + "\"");
  }
  return j[key].get<std::string>();
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

std::vector<PreferenceExample> load_preference_dataset(
    const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::vector<PreferenceExample> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = parse_jsonl_line(path, line, lineno);
    const std::string prompt = require_string(path, j, "prompt", lineno);
    const std::string chosen = require_string(path, j, "chosen", lineno);
    const std::string rejected = require_string(path, j, "rejected", lineno);
    if (chosen == rejected) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": chosen and rejected responses are identical");
    }
    PreferenceExample ex;
    ex.prompt = tokenize(prompt, vocab);
    ex.chosen = tokenize(chosen, vocab);
    ex.rejected = tokenize(rejected, vocab);
    ex.category = require_string(path, j, "category", lineno);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<CandidateSet> load_candidate_sets(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::vector<CandidateSet> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = parse_jsonl_line(path, line, lineno);
    CandidateSet set;
    set.prompt = require_string(path, j, "prompt", lineno);
    if (!j.contains("candidates") || !j["candidates"].is_array() ||
        j["candidates"].empty()) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": \"candidates\" must be a non-empty array");
    }
    for (const json& c : j["candidates"]) {
      if (!c.is_object() || !c.contains("text") || !c.contains("correct") ||
          !c["text"].is_string() || !c["correct"].is_boolean()) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) +
                          ": candidate entries need \"text\" and \"correct\"");
      }
      set.candidates.push_back({c["text"].get<std::string>(), c["correct"].get<bool>()});
    }
    out.push_back(std::move(set));
  }
  return out;
}

double score_text_pair(const ToyRM& model, const Vocabulary& vocab,
                       const std::string& prompt, const std::string& response) {
  const std::vector<int32_t> p = tokenize(prompt, vocab);
  const std::vector<int32_t> r = tokenize(response, vocab);
  return model.score(concat_ids(p, r));
}

std::vector<PairScore> score_preferences(const ToyRM& model,
                                         const std::vector<PreferenceExample>& dataset) {
  const int64_t max_len = model.config().max_seq_len;
  std::vector<PairScore> out;
  out.reserve(dataset.size());
  for (const PreferenceExample& ex : dataset) {
    const std::vector<int32_t> seq_c = concat_ids(ex.prompt, ex.chosen);
    const std::vector<int32_t> seq_r = concat_ids(ex.prompt, ex.rejected);
    PairScore ps;
    if (static_cast<int64_t>(seq_c.size()) > max_len ||
        static_cast<int64_t>(seq_r.size()) > max_len) {
      ps.skipped = true;
    } else {
      ps.chosen = model.score(seq_c);
      ps.rejected = model.score(seq_r);
    }
    out.push_back(ps);
  }
  return out;
}

EvalReport pairwise_accuracy(const ToyRM& model,
                             const std::vector<PreferenceExample>& dataset) {
  if (dataset.empty()) {
    throw EmptyBatchError("evaluation dataset is empty");
  }
  const std::vector<PairScore> scores = score_preferences(model, dataset);

  EvalReport report;
  std::map<std::string, double> gap_sum;
  for (size_t i = 0; i < dataset.size(); ++i) {
    const std::string& cat = dataset[i].category;
    if (scores[i].skipped) {
      report.skipped[cat] += 1;
      report.total_skipped += 1;
      continue;
    }
    CategoryCount& count = report.counts[cat];
    count.total += 1;
    if (scores[i].chosen > scores[i].rejected) {
      count.correct += 1;
    }
    gap_sum[cat] += scores[i].chosen - scores[i].rejected;
  }
  for (const auto& [cat, count] : report.counts) {
    report.accuracy[cat] =
        static_cast<double>(count.correct) / static_cast<double>(count.total);
    report.mean_reward_gap[cat] = gap_sum[cat] / static_cast<double>(count.total);
  }
  return report;
}

GapStats gap_stats_from(const std::vector<double>& gaps, double bin_width) {
  if (bin_width <= 0.0) {
    throw RangeError("histogram bin width must be positive");
  }
  GapStats stats;
  stats.count = static_cast<int64_t>(gaps.size());
  stats.histogram.bin_width = bin_width;
  if (gaps.empty()) {
    return stats;
  }
  double sum = 0.0;
  double lo = gaps[0], hi = gaps[0];
  for (double g : gaps) {
    sum += g;
    lo = std::min(lo, g);
    hi = std::max(hi, g);
  }
  stats.mean = sum / static_cast<double>(gaps.size());
  double sq = 0.0;
  for (double g : gaps) {
    const double c = g - stats.mean;
    sq += c * c;
  }
  stats.stddev = std::sqrt(sq / static_cast<double>(gaps.size()));

  const int64_t n_bins =
      std::max<int64_t>(1, static_cast<int64_t>(std::ceil((hi - lo) / bin_width)));
  stats.histogram.lo = lo;
  stats.histogram.counts.assign(static_cast<size_t>(n_bins), 0);
  for (double g : gaps) {
    int64_t idx = static_cast<int64_t>(std::floor((g - lo) / bin_width));
    idx = std::clamp<int64_t>(idx, 0, n_bins - 1);
    stats.histogram.counts[static_cast<size_t>(idx)] += 1;
  }
  return stats;
}

std::map<std::string, GapStats> reward_gap_stats(
    const ToyRM& model, const std::vector<PreferenceExample>& dataset,
    double bin_width) {
  if (dataset.empty()) {
    throw EmptyBatchError("evaluation dataset is empty");
  }
  if (bin_width <= 0.0) {
    throw RangeError("histogram bin width must be positive");
  }
  const std::vector<PairScore> scores = score_preferences(model, dataset);
  std::map<std::string, std::vector<double>> gaps;
  for (size_t i = 0; i < dataset.size(); ++i) {
    if (scores[i].skipped) continue;
    gaps[dataset[i].category].push_back(scores[i].chosen - scores[i].rejected);
  }
  std::map<std::string, GapStats> out;
  for (const auto& [cat, values] : gaps) {
    out[cat] = gap_stats_from(values, bin_width);
  }
  return out;
}

int64_t select_from_rewards(std::span<const double> rewards, int64_t n) {
  if (n < 1 || n > static_cast<int64_t>(rewards.size())) {
    throw RangeError("n=" + std::to_string(n) + " outside [1, " +
                     std::to_string(rewards.size()) + "]");
  }
  int64_t best = 0;
  for (int64_t i = 1; i < n; ++i) {
    if (rewards[static_cast<size_t>(i)] > rewards[static_cast<size_t>(best)]) {
      best = i;
    }
  }
  return best;
}

int64_t best_of_n_select(const ToyRM& model, const Vocabulary& vocab,
                         const CandidateSet& set, int64_t n) {
  if (n < 1 || n > static_cast<int64_t>(set.candidates.size())) {
    throw RangeError("n=" + std::to_string(n) + " outside [1, " +
                     std::to_string(set.candidates.size()) + "]");
  }
  std::vector<double> rewards;
  rewards.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    rewards.push_back(score_text_pair(model, vocab, set.prompt,
                                      set.candidates[static_cast<size_t>(i)].text));
  }
  return select_from_rewards(rewards, n);
}

double best_of_n_accuracy(const ToyRM& model, const Vocabulary& vocab,
                          const std::vector<CandidateSet>& sets, int64_t n) {
  if (sets.empty()) {
    throw RangeError("no candidate sets");
  }
  int64_t correct = 0;
  for (const CandidateSet& set : sets) {
    const int64_t pick = best_of_n_select(model, vocab, set, n);
    if (set.candidates[static_cast<size_t>(pick)].correct) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(sets.size());
}

double pass_at_n(const std::vector<CandidateSet>& sets, int64_t n) {
  if (sets.empty()) {
    throw RangeError("no candidate sets");
  }
  int64_t hits = 0;
  for (const CandidateSet& set : sets) {
    if (n < 1 || n > static_cast<int64_t>(set.candidates.size())) {
      throw RangeError("n=" + std::to_string(n) + " outside [1, " +
                       std::to_string(set.candidates.size()) + "]");
    }
    for (int64_t i = 0; i < n; ++i) {
      if (set.candidates[static_cast<size_t>(i)].correct) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(sets.size());
}

SweepReport lambda_sweep(const NamedTensorMap& sft, const NamedTensorMap& rm,
                         const PartitionRules& rules,
                         const std::optional<VocabAlignment>& alignment,
                         const std::vector<double>& grid, const ToyRMConfig& config,
                         const Vocabulary& vocab,
                         const std::vector<PreferenceExample>& dataset,
                         const std::optional<BestOfNJob>& best_of_n, int threads) {
  if (grid.empty()) {
    throw RangeError("sweep grid is empty");
  }
  for (size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 0.0 || grid[i] > 1.0) {
      throw RangeError("grid value " + format_double(grid[i]) + " outside [0, 1]");
    }
    if (i > 0 && grid[i] <= grid[i - 1]) {
      throw RangeError("grid values must be strictly increasing");
    }
  }

  SweepReport report;
  report.grid = grid;
  for (double lambda : grid) {
    MergeSpec spec;
    spec.lambda = lambda;
    spec.rules = rules;
    spec.alignment = alignment;
    SweepRecord record;
    record.lambda = lambda;
    try {
      const NamedTensorMap merged = merge(sft, rm, spec, threads);
      const ToyRM model = ToyRM::from_params(config, merged);
      record.report = pairwise_accuracy(model, dataset);
      if (best_of_n.has_value()) {
        record.best_of_n =
            best_of_n_accuracy(model, vocab, best_of_n->sets, best_of_n->n);
      }
    } catch (const Error& e) {
      throw Error(e.name(),
                  "lambda=" + format_double(lambda) + ": " + e.what());
    }
    report.records.push_back(std::move(record));
  }
  return report;
}

std::vector<double> parse_grid(const std::string& text) {
  auto parse_value = [&text](const std::string& tok) {
    size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &pos);
    } catch (const std::exception&) {
      throw RangeError("bad grid value \"" + tok + "\" in \"" + text + "\"");
    }
    if (pos != tok.size()) {
      throw RangeError("bad grid value \"" + tok + "\" in \"" + text + "\"");
    }
    return v;
  };

  std::vector<double> grid;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ':')) parts.push_back(tok);
    if (parts.size() != 3) {
      throw RangeError("grid range must be start:end:step, got \"" + text + "\"");
    }
    const double start = parse_value(parts[0]);
    const double end = parse_value(parts[1]);
    const double step = parse_value(parts[2]);
    if (step <= 0.0 || end < start) {
      throw RangeError("grid range must have positive step and start <= end");
    }
    const long divisions = std::lround((end - start) / step);
    if (std::fabs(start + static_cast<double>(divisions) * step - end) <= 1e-9) {
      for (long k = 0; k <= divisions; ++k) {
        grid.push_back(k == divisions ? end : start + static_cast<double>(k) * step);
      }
    } else {
      for (long k = 0;; ++k) {
        const double v = start + static_cast<double>(k) * step;
        if (v > end + 1e-12) break;
        grid.push_back(v);
      }
    }
  } else {
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      grid.push_back(parse_value(tok));
    }
  }
  if (grid.empty()) {
    throw RangeError("grid \"" + text + "\" is empty");
  }
  for (size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 0.0 || grid[i] > 1.0) {
      throw RangeError("grid value " + format_double(grid[i]) + " outside [0, 1]");
    }
    if (i > 0 && grid[i] <= grid[i - 1]) {
      throw RangeError("grid values must be strictly increasing");
    }
  }
  return grid;
}

namespace {

json report_to_json_obj(const EvalReport& report) {
  json j;
  j["accuracy"] = report.accuracy;
  json counts = json::object();
  int64_t correct_sum = 0, total_sum = 0;
  for (const auto& [cat, count] : report.counts) {
    counts[cat] = {{"correct", count.correct}, {"total", count.total}};
    correct_sum += count.correct;
    total_sum += count.total;
  }
  j["counts"] = std::move(counts);
  j["mean_reward_gap"] = report.mean_reward_gap;
  j["skipped"] = report.skipped;
  j["total_skipped"] = report.total_skipped;
  json overall;
  overall["correct"] = correct_sum;
  overall["total"] = total_sum;
  overall["accuracy"] = total_sum > 0
      ? static_cast<double>(correct_sum) / static_cast<double>(total_sum)
      : 0.0;
  j["overall"] = std::move(overall);
  return j;
}

}  // namespace

std::string eval_report_to_json(const EvalReport& report,
                                const std::map<std::string, GapStats>* gap_stats) {
  json j = report_to_json_obj(report);
  if (gap_stats != nullptr) {
    json stats = json::object();
    for (const auto& [cat, s] : *gap_stats) {
      stats[cat] = {{"count", s.count},
                    {"mean", s.mean},
                    {"stddev", s.stddev},
                    {"histogram",
                     {{"bin_width", s.histogram.bin_width},
                      {"lo", s.histogram.lo},
                      {"counts", s.histogram.counts}}}};
    }
    j["reward_gap_stats"] = std::move(stats);
  }
  return j.dump(2) + "\n";
}

std::string sweep_report_to_json(const SweepReport& report) {
  json j;
  j["grid"] = report.grid;
  json records = json::array();
  for (const SweepRecord& r : report.records) {
    json rec;
    rec["lambda"] = r.lambda;
    rec["report"] = report_to_json_obj(r.report);
    if (r.best_of_n.has_value()) {
      rec["best_of_n_accuracy"] = *r.best_of_n;
    }
    records.push_back(std::move(rec));
  }
  j["records"] = std::move(records);
  return j.dump(2) + "\n";
}

std::string sweep_report_to_csv(const SweepReport& report) {
  std::string out = "lambda,category,accuracy,mean_gap\n";
  for (const SweepRecord& r : report.records) {
    for (const auto& [cat, acc] : r.report.accuracy) {
      out += format_double(r.lambda);
      out += ',';
      out += cat;
      out += ',';
      out += format_double(acc);
      out += ',';
      out += format_double(r.report.mean_reward_gap.at(cat));
      out += '\n';
    }
  }
  return out;
}

}  // namespace dogerm
