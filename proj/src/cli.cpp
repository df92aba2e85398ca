#include "hubguard/cli.hpp"

#include "hubguard/catalogue.hpp"
#include "hubguard/eval_harness.hpp"
#include "hubguard/parallel.hpp"
#include "hubguard/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace hubguard::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::uint64_t seed = 1;
  unsigned workers = 0;
};

struct AttackOverrides {
  std::optional<double> epsilon, eta, alpha;
  std::optional<int> max_epochs;
};

json read_json_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DomainError("cannot open " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw DomainError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw DomainError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

json load_config(const Common& common) {
  if (common.config_path.empty()) return json::object();
  auto j = read_json_file(common.config_path);
  if (!j.is_object()) throw DomainError("config file must hold a JSON object");
  return j;
}

MfccConfig mfcc_config(const json& file) {
  MfccConfig cfg;
  if (file.contains("mfcc")) {
    try {
      from_json(file.at("mfcc"), cfg);
    } catch (const json::exception& e) {
      throw DomainError(std::string("invalid mfcc config: ") + e.what());
    }
  }
  cfg.validate(kAnalysisRate);
  return cfg;
}

AttackConfig attack_config(const json& file, const std::optional<std::string>& variant, const AttackOverrides& ov,
                           const Catalogue& c) {
  json section = file.value("attack", json::object());
  if (variant) section["variant"] = *variant;
  AttackConfig cfg;
  try {
    cfg = AttackConfig::from_json(section);
  } catch (const json::exception& e) {
    throw DomainError(std::string("invalid attack config: ") + e.what());
  }
  if (ov.epsilon) cfg.epsilon = *ov.epsilon;
  if (ov.eta) cfg.eta = *ov.eta;
  if (ov.alpha) cfg.alpha = *ov.alpha;
  if (ov.max_epochs) cfg.max_epochs = *ov.max_epochs;
  cfg.k = c.k();
  cfg.hub_threshold = hub_threshold(c.k());
  cfg.validate();
  return cfg;
}

Catalogue open_catalogue(const std::string& dir, const json& file, unsigned workers) {
  if (dir.empty()) throw UsageError("--catalogue is required");
  if (!fs::is_directory(dir)) throw DomainError("missing catalogue: " + dir);
  std::optional<MfccConfig> expected;
  if (file.contains("mfcc")) expected = mfcc_config(file);
  return Catalogue::load(dir, expected, workers);
}

std::vector<std::string> read_ids(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DomainError("cannot open ids file " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(f, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

std::string file_id(const fs::path& p) { return p.stem().string(); }

std::vector<AdversarialClip> read_adversaries(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DomainError("missing adversaries directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<AdversarialClip> clips;
  for (const auto& p : files) clips.push_back({file_id(p), load_wav(p, file_id(p))});
  return clips;
}

json effective(const Common& common, const std::string& command, json extra) {
  extra["command"] = command;
  extra["seed"] = common.seed;
  extra["workers"] = resolve_workers(common.workers);
  return extra;
}

void add_common(CLI::App* app, Common& common) {
  app->add_option("--config", common.config_path, "JSON config file (sections: mfcc, attack)");
  app->add_option("--seed", common.seed, "Random seed");
  app->add_option("--workers", common.workers, "Worker threads (0 = all cores)");
}

void add_attack_overrides(CLI::App* app, AttackOverrides& ov) {
  app->add_option("--epsilon", ov.epsilon, "Perturbation bound");
  app->add_option("--eta", ov.eta, "Step size");
  app->add_option("--alpha", ov.alpha, "Perturbation size weight");
  app->add_option("--max-epochs", ov.max_epochs, "Epoch budget");
}

}  // namespace

int dispatch(int argc, char** argv) {
  CLI::App app{"Hubness analysis, adversarial hub attacks and the mutual proximity defence"};
  app.require_subcommand(1, 1);
  Common common;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Build a catalogue from a manifest");
  std::string manifest;
  int ingest_k = kDefaultK;
  ingest->add_option("--manifest", manifest, "manifest.jsonl (the catalogue is written next to it)")->required();
  ingest->add_option("-k", ingest_k, "Neighbourhood size");
  add_common(ingest, common);

  // hubness
  auto* hubness = app.add_subcommand("hubness", "Print the hubness report of a catalogue");
  std::string cat_dir;
  bool defended = false;
  std::optional<int> query_k;
  hubness->add_option("--catalogue", cat_dir)->required();
  hubness->add_flag("--defended", defended, "Use the MP-rescaled space");
  hubness->add_option("-k", query_k);
  add_common(hubness, common);

  // recommend
  auto* recommend = app.add_subcommand("recommend", "Print the k nearest songs, one id per line");
  std::string query_id;
  recommend->add_option("--catalogue", cat_dir)->required();
  recommend->add_option("--id", query_id)->required();
  recommend->add_option("-k", query_k);
  recommend->add_flag("--defended", defended);
  add_common(recommend, common);

  // attack
  auto* attack = app.add_subcommand("attack", "Run one attack variant over the catalogue");
  std::optional<std::string> variant;
  std::string ids_file, out_dir, adv_dir;
  AttackOverrides ov;
  attack->add_option("--catalogue", cat_dir)->required();
  attack->add_option("--variant", variant, "original | mod-kl | mod-mp | mod-mp-no-norm");
  attack->add_option("--ids-file", ids_file, "Attack only these ids (one per line)");
  attack->add_option("--out", out_dir, "Output directory")->required();
  attack->add_option("--adversaries", adv_dir, "Write successful adversarial clips here");
  add_attack_overrides(attack, ov);
  add_common(attack, common);

  // defend-eval
  auto* defend = app.add_subcommand("defend-eval", "Hubness before/after MP, all attack variants and the post-hoc check");
  defend->add_option("--catalogue", cat_dir)->required();
  defend->add_option("--out", out_dir)->required();
  add_common(defend, common);

  // posthoc
  auto* posthoc = app.add_subcommand("posthoc", "Rescale with MP after adversarial clips were added");
  posthoc->add_option("--catalogue", cat_dir)->required();
  posthoc->add_option("--adversaries", adv_dir, "Directory of <original id>.wav files")->required();
  posthoc->add_option("--out", out_dir);
  add_common(posthoc, common);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Grid search over attack parameters");
  std::vector<double> epsilons, etas, alphas;
  std::size_t subset = 20;
  sweep->add_option("--catalogue", cat_dir)->required();
  sweep->add_option("--variant", variant)->required();
  sweep->add_option("--epsilons", epsilons)->required()->delimiter(',');
  sweep->add_option("--etas", etas)->required()->delimiter(',');
  sweep->add_option("--alphas", alphas)->required()->delimiter(',');
  sweep->add_option("--subset", subset, "Number of songs attacked per cell");
  sweep->add_option("--max-epochs", ov.max_epochs);
  sweep->add_option("--out", out_dir);
  add_common(sweep, common);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic clustered corpus and its manifest");
  SynthConfig synth_cfg;
  bool synth_ingest = false;
  synth->add_option("--out", out_dir)->required();
  synth->add_option("--songs", synth_cfg.n_songs);
  synth->add_option("--clusters", synth_cfg.n_clusters);
  synth->add_option("--seconds", synth_cfg.seconds);
  synth->add_flag("--ingest", synth_ingest, "Also build the catalogue");
  add_common(synth, common);

  // report
  auto* report = app.add_subcommand("report", "Summarize outcome streams as a table");
  std::vector<std::string> streams;
  bool as_json = false;
  report->add_option("streams", streams, "outcome .jsonl files or directories holding them")->required();
  report->add_flag("--json", as_json, "Print JSON instead of the table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const json file = load_config(common);

    if (ingest->parsed()) {
      const MfccConfig cfg = mfcc_config(file);
      CatalogueOptions opts;
      opts.k = file.value("k", ingest_k);
      if (ingest->count("-k")) opts.k = ingest_k;
      opts.ridge = file.value("ridge", kDefaultRidge);
      opts.workers = common.workers;
      std::cerr << "ingesting " << manifest << '\n';
      const auto c = Catalogue::build(manifest, cfg, opts);
      const fs::path dir = fs::path(manifest).parent_path();
      write_json_file(dir / "effective_config.json",
                      effective(common, "ingest", {{"mfcc", cfg}, {"k", opts.k}, {"ridge", opts.ridge}}));
      std::cout << json{{"songs", c.size()}, {"k", c.k()}, {"fingerprint", c.fingerprint()}}.dump() << '\n';
      return 0;
    }

    if (hubness->parsed()) {
      const auto c = open_catalogue(cat_dir, file, common.workers);
      const int k = query_k.value_or(c.k());
      const auto& d = c.distances(defended ? DistanceKind::MP : DistanceKind::SKL);
      auto rep = classify(k_occurrence(d, k), k);
      if (c.has_labels()) rep.retrieval_accuracy = retrieval_accuracy(d, c.labels(), k);
      std::cout << rep.to_json().dump(2) << '\n';
      return 0;
    }

    if (recommend->parsed()) {
      const auto c = open_catalogue(cat_dir, file, common.workers);
      const int k = query_k.value_or(c.k());
      const auto i = c.index_of(query_id);
      const auto& d = c.distances(defended ? DistanceKind::MP : DistanceKind::SKL);
      for (auto j : nearest_neighbors(d.row(i), i, k)) std::cout << c.entries()[j].id << '\n';
      return 0;
    }

    if (attack->parsed()) {
      const auto c = open_catalogue(cat_dir, file, common.workers);
      const auto cfg = attack_config(file, variant, ov, c);
      ExperimentOptions opts;
      opts.workers = common.workers;
      if (!ids_file.empty()) opts.ids = read_ids(ids_file);
      opts.outcome_stream = fs::path(out_dir) / ("outcomes_" + to_string(cfg.variant) + ".jsonl");
      opts.keep_adversaries = !adv_dir.empty();
      write_json_file(fs::path(out_dir) / "effective_config.json",
                      effective(common, "attack", {{"catalogue", cat_dir}, {"attack", cfg.to_json()},
                                                   {"ids_file", ids_file}}));
      std::cerr << "attacking with " << to_string(cfg.variant) << '\n';
      const auto res = run_experiment(c, cfg, opts);
      if (!adv_dir.empty()) {
        fs::create_directories(adv_dir);
        for (const auto& a : res.adversaries) write_wav(fs::path(adv_dir) / (a.original_id + ".wav"), a.audio);
      }
      std::cerr << "done in " << res.report.runtime_seconds << " s\n";
      std::cout << res.report.to_json().dump(2) << '\n';
      return 0;
    }

    if (defend->parsed()) {
      const auto c = open_catalogue(cat_dir, file, common.workers);
      DefenceOptions opts;
      opts.workers = common.workers;
      opts.out_dir = out_dir;
      for (auto v : {AttackVariant::Original, AttackVariant::ModKl, AttackVariant::ModMp, AttackVariant::ModMpNoNorm}) {
        json f = file;
        if (f.contains("attack") && f["attack"].value("variant", to_string(v)) != to_string(v)) f.erase("attack");
        opts.configs.push_back(attack_config(f, to_string(v), {}, c));
      }
      json cfgs = json::array();
      for (const auto& cfg : opts.configs) cfgs.push_back(cfg.to_json());
      write_json_file(fs::path(out_dir) / "effective_config.json",
                      effective(common, "defend-eval", {{"catalogue", cat_dir}, {"attacks", cfgs}}));
      const auto ev = run_defence_evaluation(c, opts);
      write_json_file(fs::path(out_dir) / "defence.json", ev.to_json());
      std::vector<ExperimentReport> reports;
      for (const auto& e : ev.experiments) reports.push_back(e.report);
      std::cout << render_table(reports);
      if (!ev.posthoc.entries.empty())
        std::cout << "post-hoc reverted: " << format_count(ev.posthoc.n_reverted, static_cast<int>(ev.posthoc.entries.size()))
                  << '\n';
      return 0;
    }

    if (posthoc->parsed()) {
      const auto c = open_catalogue(cat_dir, file, common.workers);
      const auto clips = read_adversaries(adv_dir);
      const auto rep = posthoc_defence(c, clips, common.workers);
      if (!out_dir.empty()) {
        write_json_file(fs::path(out_dir) / "posthoc.json", rep.to_json());
        write_json_file(fs::path(out_dir) / "effective_config.json",
                        effective(common, "posthoc", {{"catalogue", cat_dir}, {"adversaries", adv_dir}}));
      }
      std::cout << rep.to_json().dump(2) << '\n';
      return 0;
    }

    if (sweep->parsed()) {
      const auto c = open_catalogue(cat_dir, file, common.workers);
      const auto v = parse_variant(*variant);
      const int max_epochs = ov.max_epochs.value_or(AttackConfig::defaults(v).max_epochs);
      const auto res = grid_search(c, v, ParameterGrid{epsilons, etas, alphas}, subset, common.seed, common.workers, max_epochs);
      if (!out_dir.empty()) {
        write_json_file(fs::path(out_dir) / "sweep.json", res.to_json());
        write_json_file(fs::path(out_dir) / "effective_config.json",
                        effective(common, "sweep", {{"catalogue", cat_dir}, {"variant", to_string(v)},
                                                    {"epsilons", epsilons}, {"etas", etas}, {"alphas", alphas},
                                                    {"subset", subset}, {"max_epochs", max_epochs}}));
      }
      std::cout << res.to_json().dump(2) << '\n';
      return 0;
    }

    if (synth->parsed()) {
      synth_cfg.seed = common.seed;
      std::cerr << "generating " << synth_cfg.n_songs << " songs\n";
      const auto songs = generate_corpus(synth_cfg);
      const auto manifest_path = write_corpus(out_dir, songs);
      write_json_file(fs::path(out_dir) / "effective_config.json",
                      effective(common, "synth", {{"songs", synth_cfg.n_songs}, {"clusters", synth_cfg.n_clusters},
                                                  {"seconds", synth_cfg.seconds}}));
      if (synth_ingest) {
        CatalogueOptions opts;
        opts.workers = common.workers;
        Catalogue::build(manifest_path, mfcc_config(file), opts);
      }
      std::cout << manifest_path.string() << '\n';
      return 0;
    }

    if (report->parsed()) {
      std::vector<fs::path> files;
      for (const auto& s : streams) {
        if (fs::is_directory(s)) {
          std::vector<fs::path> found;
          for (const auto& e : fs::directory_iterator(s))
            if (e.path().extension() == ".jsonl" && e.path().filename().string().rfind("outcomes_", 0) == 0)
              found.push_back(e.path());
          std::sort(found.begin(), found.end());
          files.insert(files.end(), found.begin(), found.end());
        } else {
          files.emplace_back(s);
        }
      }
      if (files.empty()) throw DomainError("no outcome streams found");
      std::vector<ExperimentReport> reports;
      for (const auto& f : files) reports.push_back(report_from_stream(read_outcome_stream(f)));
      if (as_json) {
        json arr = json::array();
        for (const auto& r : reports) arr.push_back(r.to_json());
        std::cout << arr.dump(2) << '\n';
      } else {
        std::cout << render_table(reports);
      }
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace hubguard::cli
