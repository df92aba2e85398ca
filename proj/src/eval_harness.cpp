#include "hubguard/eval_harness.hpp"

#include "hubguard/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace hubguard {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::optional<MeanStd> mean_std(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double sum = 0.0;
  for (double x : v) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return MeanStd{mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

json mean_std_json(const std::optional<MeanStd>& v) {
  if (!v) return nullptr;
  return {{"mean", v->mean}, {"std", v->std}};
}

std::string fixed1(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string with_commas(int v) {
  std::string digits = std::to_string(std::abs(v));
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return v < 0 ? "-" + out : out;
}

}  // namespace

std::string format_count(int count, int total) {
  const double pct = total == 0 ? 0.0 : 100.0 * count / total;
  return with_commas(count) + " (" + fixed1(pct) + "%)";
}

std::string format_mean_std(const std::optional<MeanStd>& v) {
  if (!v) return "n/a";
  return fixed1(v->mean) + " ± " + fixed1(v->std);
}

json ExperimentReport::to_json() const {
  return {{"variant", to_string(variant)},
          {"n", n},
          {"initial_hubs", n_initial_hubs},
          {"adversarial_hubs", n_adversarial_hubs},
          {"non_hubs", n_non_hubs},
          {"initial_hubs_pct", fixed1(n == 0 ? 0.0 : 100.0 * n_initial_hubs / n)},
          {"adversarial_hubs_pct", fixed1(n == 0 ? 0.0 : 100.0 * n_adversarial_hubs / n)},
          {"non_hubs_pct", fixed1(n == 0 ? 0.0 : 100.0 * n_non_hubs / n)},
          {"snr", mean_std_json(snr)},
          {"occurrence", mean_std_json(occurrence)},
          {"mean_epochs", mean_epochs}};
}

std::string render_table(std::span<const ExperimentReport> reports) {
  const std::vector<std::string> header{"Adaptation", "# Initial Hubs", "# Adversarial Hubs", "# Non-hubs", "SNR", "O^k"};
  std::vector<std::vector<std::string>> rows{header};
  for (const auto& r : reports)
    rows.push_back({to_string(r.variant), format_count(r.n_initial_hubs, r.n), format_count(r.n_adversarial_hubs, r.n),
                    format_count(r.n_non_hubs, r.n), format_mean_std(r.snr), format_mean_std(r.occurrence)});
  // Column widths in code points ("±" is two bytes in UTF-8).
  const auto width = [](const std::string& s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char ch) { return (ch & 0xC0) != 0x80; }));
  };
  std::vector<std::size_t> w(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i) w[i] = std::max(w[i], width(row[i]));
  std::ostringstream out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t i = 0; i < rows[r].size(); ++i) {
      out << (i ? " | " : "") << rows[r][i];
      if (i + 1 < rows[r].size()) out << std::string(w[i] - width(rows[r][i]), ' ');
    }
    out << '\n';
    if (r == 0) {
      for (std::size_t i = 0; i < w.size(); ++i) out << (i ? "-+-" : "") << std::string(w[i], '-');
      out << '\n';
    }
  }
  return out.str();
}

ExperimentReport summarize(AttackVariant variant, int n, int n_initial_hubs, std::span<const AttackOutcome> outcomes) {
  ExperimentReport r;
  r.variant = variant;
  r.n = n;
  r.n_initial_hubs = n_initial_hubs;
  std::vector<double> snrs, occs;
  double epochs = 0.0;
  for (const auto& o : outcomes) {
    epochs += o.epochs_used;
    if (!o.success) continue;
    ++r.n_adversarial_hubs;
    occs.push_back(o.final_occurrence);
    if (std::isfinite(o.snr_db)) snrs.push_back(o.snr_db);
  }
  r.n_non_hubs = n - n_initial_hubs - r.n_adversarial_hubs;
  r.snr = mean_std(snrs);
  r.occurrence = mean_std(occs);
  r.mean_epochs = outcomes.empty() ? 0.0 : epochs / static_cast<double>(outcomes.size());
  return r;
}

OutcomeStream read_outcome_stream(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DomainError("cannot open outcome stream " + path.string());
  OutcomeStream s;
  bool have_header = false;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "header") {
        s.variant = parse_variant(j.at("variant").get<std::string>());
        s.n = j.at("n").get<int>();
        s.config = j.at("config");
        have_header = true;
      } else if (type == "initial_hub") {
        const auto id = j.at("clip_id").get<std::string>();
        if (seen.insert(id).second) s.initial_hubs.push_back(id);
      } else if (type == "outcome") {
        auto o = AttackOutcome::from_json(j);
        if (seen.insert(o.clip_id).second) s.outcomes.push_back(std::move(o));
      } else {
        throw DomainError("unknown record type '" + type + "'");
      }
    } catch (const json::exception& ex) {
      // A torn final line from an interrupted run is tolerated; anything else is corruption.
      if (f.peek() == std::char_traits<char>::eof()) break;
      throw DomainError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  if (!have_header) throw DomainError(path.string() + ": missing header record");
  return s;
}

ExperimentReport report_from_stream(const OutcomeStream& s) {
  return summarize(s.variant, s.n, static_cast<int>(s.initial_hubs.size()), s.outcomes);
}

ExperimentResult run_experiment(const Catalogue& c, const AttackConfig& cfg, const ExperimentOptions& opts) {
  cfg.validate();
  const auto space = criterion_space(cfg.variant);
  if (space == DistanceKind::MP && !c.has_mp())
    throw DomainError("run_experiment: variant " + to_string(cfg.variant) + " needs the MP distance matrix");
  const auto start = std::chrono::steady_clock::now();

  const auto occ = k_occurrence(c.distances(space), cfg.k);
  c.mp_index();  // build once before worker threads share the catalogue

  std::vector<std::size_t> selected;
  if (opts.ids) {
    std::set<std::size_t> idx;
    for (const auto& id : *opts.ids) idx.insert(c.index_of(id));
    selected.assign(idx.begin(), idx.end());
  } else {
    for (std::size_t i = 0; i < c.size(); ++i) selected.push_back(i);
  }

  const int n = static_cast<int>(selected.size());
  ExperimentResult result;
  std::vector<std::size_t> to_attack;
  for (auto i : selected) {
    if (occ[i] >= cfg.hub_threshold)
      result.initial_hubs.push_back(c.entries()[i].id);
    else
      to_attack.push_back(i);
  }

  // Resume: reuse outcomes already in the stream for this variant and config.
  std::map<std::string, AttackOutcome> done;
  std::ofstream stream;
  if (opts.outcome_stream) {
    const auto& path = *opts.outcome_stream;
    bool fresh = true;
    if (fs::exists(path) && fs::file_size(path) > 0) {
      const auto prior = read_outcome_stream(path);
      if (prior.variant != cfg.variant || prior.config != cfg.to_json() || prior.n != n)
        throw DomainError("outcome stream " + path.string() + " was written for a different experiment");
      for (const auto& o : prior.outcomes) done.emplace(o.clip_id, o);
      fresh = false;
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    stream.open(path, std::ios::app);
    if (!stream) throw DomainError("cannot open outcome stream " + path.string());
    if (fresh) {
      stream << json{{"type", "header"}, {"variant", to_string(cfg.variant)}, {"n", n}, {"config", cfg.to_json()}}.dump()
             << '\n';
      for (const auto& id : result.initial_hubs) stream << json{{"type", "initial_hub"}, {"clip_id", id}}.dump() << '\n';
      stream.flush();
    }
  }

  std::vector<std::size_t> pending;
  for (auto i : to_attack)
    if (!done.count(c.entries()[i].id) || opts.keep_adversaries) pending.push_back(i);

  std::map<std::size_t, AttackRun> runs;
  const unsigned workers = resolve_workers(opts.workers);
  // Attack in fixed-size chunks and append each chunk in catalogue order, so the stream is identical
  // for any worker count and an interrupted run resumes at a chunk boundary.
  const std::size_t chunk = std::max<std::size_t>(workers, 4);
  for (std::size_t base = 0; base < pending.size(); base += chunk) {
    const std::size_t len = std::min(chunk, pending.size() - base);
    std::vector<AttackRun> part(len);
    parallel_for(len, workers, [&](std::size_t j) { part[j] = run_attack_detailed(c, pending[base + j], cfg); });
    for (std::size_t j = 0; j < len; ++j) {
      const auto& id = c.entries()[pending[base + j]].id;
      if (stream.is_open() && !done.count(id)) {
        json record = part[j].outcome.to_json();
        record["type"] = "outcome";
        stream << record.dump() << '\n';
      }
      done.insert_or_assign(id, part[j].outcome);
      if (opts.keep_adversaries) runs.emplace(pending[base + j], std::move(part[j]));
    }
    if (stream.is_open()) stream.flush();
  }

  for (auto i : to_attack) result.outcomes.push_back(done.at(c.entries()[i].id));
  if (opts.keep_adversaries) {
    for (auto& [i, run] : runs) {
      if (!run.outcome.success) continue;
      AudioClip audio = run.segment;
      for (std::size_t s = 0; s < audio.samples.size(); ++s) audio.samples[s] += run.delta[s];
      result.adversaries.push_back(AdversarialClip{c.entries()[i].id, std::move(audio)});
    }
  }

  result.report = summarize(cfg.variant, n, static_cast<int>(result.initial_hubs.size()), result.outcomes);
  result.report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

json PosthocReport::to_json() const {
  json entries_json = json::array();
  for (const auto& e : entries)
    entries_json.push_back({{"clip_id", e.original_id},
                            {"raw_occurrence", e.raw_occurrence},
                            {"mp_occurrence", e.mp_occurrence},
                            {"reverted", e.reverted}});
  return {{"n", entries.size()},
          {"reverted", n_reverted},
          {"reverted_fraction", reverted_fraction},
          {"reverted_pct", fixed1(100.0 * reverted_fraction)},
          {"clips", entries_json}};
}

PosthocReport posthoc_defence(const Catalogue& c, std::span<const AdversarialClip> clips, unsigned workers) {
  if (clips.empty()) throw DomainError("posthoc_defence: no adversarial clips given");
  const int k = c.k();
  const MpIndex& full = c.mp_index();
  const MfccExtractor extractor(c.config(), kAnalysisRate);

  PosthocReport report;
  report.entries.resize(clips.size());
  parallel_for(clips.size(), workers, [&](std::size_t i) {
    const auto& clip = clips[i];
    const AudioClip seg = central_segment(resample(clip.audio, kAnalysisRate), kAnalysisSeconds);
    const PreparedGaussian g(fit_gaussian(MfccMatrix{extractor.forward(seg.samples), clip.original_id}, c.ridge()));
    const auto row = c.distances_to(g);
    const auto original = c.find(clip.original_id);

    std::vector<double> reduced_row;
    for (std::size_t j = 0; j < c.size(); ++j)
      if (!original || j != *original) reduced_row.push_back(row[j]);

    DistanceMatrix raw = c.d_skl();
    std::optional<MpIndex> reduced_index;
    if (original) {
      reduced_index.emplace(full.without(*original));
      raw = DistanceMatrix{reduced_index->distances(), {}, DistanceKind::SKL};
      for (std::size_t j = 0; j < c.size(); ++j)
        if (j != *original) raw.ids.push_back(c.entries()[j].id);
    }
    const MpIndex& base = reduced_index ? *reduced_index : full;
    const auto mp = base.appended(reduced_row, clip.original_id + "+adv").matrix();

    PosthocEntry& e = report.entries[i];
    e.original_id = clip.original_id;
    e.raw_occurrence = single_song_occurrence(raw, reduced_row, k);
    e.mp_occurrence = occurrence_of(mp, mp.size() - 1, k);
    e.reverted = e.mp_occurrence > 0 && e.mp_occurrence < hub_threshold(k);
  });
  for (const auto& e : report.entries) report.n_reverted += e.reverted;
  report.reverted_fraction = static_cast<double>(report.n_reverted) / static_cast<double>(clips.size());
  return report;
}

json GridResult::to_json() const {
  json cells_json = json::array();
  for (const auto& cell : cells)
    cells_json.push_back({{"epsilon", cell.config.epsilon},
                          {"eta", cell.config.eta},
                          {"alpha", cell.config.alpha},
                          {"successes", cell.successes},
                          {"mean_snr", cell.mean_snr ? json(*cell.mean_snr) : json(nullptr)}});
  return {{"best", best.to_json()}, {"cells", cells_json}, {"subset", subset}};
}

GridResult grid_search(const Catalogue& c, AttackVariant variant, const ParameterGrid& grid, std::size_t subset_size,
                       std::uint64_t seed, unsigned workers, int max_epochs) {
  if (grid.epsilons.empty() || grid.etas.empty() || grid.alphas.empty())
    throw DomainError("grid_search: every parameter list needs at least one value");
  const AttackConfig base = [&] {
    auto b = AttackConfig::defaults(variant);
    b.max_epochs = max_epochs;
    b.k = c.k();
    b.hub_threshold = hub_threshold(c.k());
    return b;
  }();
  const auto space = criterion_space(variant);
  const auto occ = k_occurrence(c.distances(space), base.k);
  c.mp_index();

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (occ[i] < base.hub_threshold) candidates.push_back(i);
  std::mt19937_64 rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(std::min(subset_size, candidates.size()));
  std::sort(candidates.begin(), candidates.end());

  GridResult result;
  for (auto i : candidates) result.subset.push_back(c.entries()[i].id);
  for (double eps : grid.epsilons)
    for (double eta : grid.etas)
      for (double alpha : grid.alphas) {
        GridCell cell;
        cell.config = base;
        cell.config.epsilon = eps;
        cell.config.eta = eta;
        cell.config.alpha = alpha;
        cell.config.validate();
        std::vector<AttackOutcome> outs(candidates.size());
        parallel_for(candidates.size(), workers,
                     [&](std::size_t j) { outs[j] = run_attack_detailed(c, candidates[j], cell.config).outcome; });
        std::vector<double> snrs;
        for (const auto& o : outs)
          if (o.success) {
            ++cell.successes;
            if (std::isfinite(o.snr_db)) snrs.push_back(o.snr_db);
          }
        if (auto ms = mean_std(snrs)) cell.mean_snr = ms->mean;
        result.cells.push_back(cell);
      }

  const auto better = [](const GridCell& a, const GridCell& b) {
    if (a.successes != b.successes) return a.successes > b.successes;
    const double sa = a.mean_snr.value_or(-INFINITY), sb = b.mean_snr.value_or(-INFINITY);
    if (sa != sb) return sa > sb;
    return std::tie(a.config.epsilon, a.config.eta, a.config.alpha) <
           std::tie(b.config.epsilon, b.config.eta, b.config.alpha);
  };
  result.best = std::min_element(result.cells.begin(), result.cells.end(), better)->config;
  return result;
}

std::pair<HubnessReport, HubnessReport> hubness_before_after(const Catalogue& c) {
  auto before = classify(k_occurrence(c.d_skl(), c.k()), c.k());
  auto after = classify(k_occurrence(c.d_mp(), c.k()), c.k());
  if (c.has_labels()) {
    const auto labels = c.labels();
    before.retrieval_accuracy = retrieval_accuracy(c.d_skl(), labels, c.k());
    after.retrieval_accuracy = retrieval_accuracy(c.d_mp(), labels, c.k());
  }
  return {std::move(before), std::move(after)};
}

json DefenceEvaluation::to_json() const {
  json reports = json::array();
  for (const auto& e : experiments) reports.push_back(e.report.to_json());
  return {{"hubness", {{"skl", before.to_json()}, {"mp", after.to_json()}}},
          {"experiments", reports},
          {"posthoc", posthoc.entries.empty() ? json(nullptr) : posthoc.to_json()}};
}

DefenceEvaluation run_defence_evaluation(const Catalogue& c, const DefenceOptions& opts) {
  std::vector<AttackConfig> configs = opts.configs;
  if (configs.empty())
    for (auto v : {AttackVariant::Original, AttackVariant::ModKl, AttackVariant::ModMp, AttackVariant::ModMpNoNorm})
      configs.push_back(AttackConfig::defaults(v));

  DefenceEvaluation ev;
  std::tie(ev.before, ev.after) = hubness_before_after(c);
  for (const auto& cfg : configs) {
    ExperimentOptions eo;
    eo.workers = opts.workers;
    eo.keep_adversaries = cfg.variant == AttackVariant::Original;
    if (opts.out_dir) eo.outcome_stream = *opts.out_dir / ("outcomes_" + to_string(cfg.variant) + ".jsonl");
    ev.experiments.push_back(run_experiment(c, cfg, eo));
  }
  for (const auto& e : ev.experiments)
    if (e.report.variant == AttackVariant::Original && !e.adversaries.empty())
      ev.posthoc = posthoc_defence(c, e.adversaries, opts.workers);
  return ev;
}

}  // namespace hubguard
