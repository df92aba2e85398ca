#include "hubguard/catalogue.hpp"

#include "hubguard/binary_io.hpp"
#include "hubguard/hubness_metrics.hpp"
#include "hubguard/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>

namespace hubguard {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

// Ids may contain characters unsafe in file names; those are hex-escaped.
std::string cache_name(const std::string& id) {
  std::string out;
  for (unsigned char c : id) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.') {
      out.push_back(static_cast<char>(c));
    } else {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02x", c);
      out += buf;
    }
  }
  return out + ".mfcc";
}

fs::path feature_dir_for(const fs::path& catalogue_dir, const CatalogueOptions& opts) {
  if (opts.feature_dir) return *opts.feature_dir;
  if (const char* env = std::getenv(kCacheDirEnv); env && *env) return fs::path(env);
  return catalogue_dir / "features";
}

void check_unique(const std::vector<CatalogueEntry>& entries) {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (e.id.empty()) throw DomainError("catalogue: empty song id");
    if (!seen.insert(e.id).second) throw DomainError("catalogue: duplicate id '" + e.id + "'");
  }
}

}  // namespace

std::vector<CatalogueEntry> read_manifest(const fs::path& manifest) {
  std::ifstream f(manifest);
  if (!f) throw DomainError("cannot open manifest " + manifest.string());
  std::vector<CatalogueEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      CatalogueEntry e;
      e.id = j.at("id").get<std::string>();
      fs::path p = j.at("path").get<std::string>();
      e.audio_path = p.is_absolute() ? p : manifest.parent_path() / p;
      if (j.contains("label") && !j["label"].is_null()) e.label = j["label"].get<std::string>();
      entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw DomainError(manifest.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  check_unique(entries);
  return entries;
}

void write_manifest(const fs::path& manifest, const std::vector<CatalogueEntry>& entries) {
  if (manifest.has_parent_path()) fs::create_directories(manifest.parent_path());
  std::ofstream f(manifest, std::ios::trunc);
  if (!f) throw DomainError("cannot write manifest " + manifest.string());
  for (const auto& e : entries) {
    json j{{"id", e.id}, {"path", e.audio_path.lexically_relative(manifest.parent_path()).generic_string()}};
    if (e.audio_path.is_relative()) j["path"] = e.audio_path.generic_string();
    j["label"] = e.label.empty() ? json(nullptr) : json(e.label);
    f << j.dump() << '\n';
  }
}

std::uint32_t config_fingerprint(const MfccConfig& cfg, double ridge) {
  json j = cfg;
  j["ridge"] = ridge;
  j["pipeline_version"] = kPipelineVersion;
  j["analysis_rate"] = kAnalysisRate;
  j["analysis_seconds"] = kAnalysisSeconds;
  return binio::crc32(j.dump());
}

DistanceMatrix skl_matrix(const std::vector<PreparedGaussian>& models, unsigned workers) {
  const std::size_t n = models.size();
  DistanceMatrix d;
  d.kind = DistanceKind::SKL;
  d.values = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (const auto& m : models) d.ids.push_back(m.model().clip_id);
  parallel_for(n, workers, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = skl(models[i], models[j]);
      d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      d.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  });
  return d;
}

Catalogue Catalogue::assemble(std::vector<CatalogueEntry> entries, std::vector<GaussianModel> models,
                              std::vector<std::shared_ptr<const AudioClip>> segments, const MfccConfig& cfg,
                              const CatalogueOptions& opts) {
  check_unique(entries);
  if (entries.size() < static_cast<std::size_t>(opts.k) + 1)
    throw DomainError("catalogue: need at least k+1=" + std::to_string(opts.k + 1) + " songs, got " +
                      std::to_string(entries.size()));
  Catalogue c;
  c.entries_ = std::move(entries);
  c.segments_ = std::move(segments);
  c.segments_.resize(c.entries_.size());
  c.cfg_ = cfg;
  c.ridge_ = opts.ridge;
  c.k_ = opts.k;
  c.workers_ = opts.workers;
  c.prepared_.resize(models.size());
  parallel_for(models.size(), opts.workers, [&](std::size_t i) { c.prepared_[i] = PreparedGaussian(models[i]); });
  c.d_skl_ = skl_matrix(c.prepared_, opts.workers);
  if (opts.with_mp && c.size() >= 3) {
    c.mp_index_ = std::make_shared<const MpIndex>(c.d_skl_);
    c.d_mp_ = c.mp_index_->matrix();
  }
  return c;
}

Catalogue Catalogue::build(const fs::path& manifest, const MfccConfig& cfg, const CatalogueOptions& opts) {
  cfg.validate(kAnalysisRate);
  auto entries = read_manifest(manifest);
  if (entries.size() < static_cast<std::size_t>(opts.k) + 1)
    throw DomainError("catalogue: manifest lists " + std::to_string(entries.size()) + " songs, need at least k+1=" +
                      std::to_string(opts.k + 1));
  const fs::path dir = manifest.parent_path();
  const fs::path feat_dir = feature_dir_for(dir, opts);
  const auto fp = config_fingerprint(cfg, opts.ridge);
  const MfccExtractor extractor(cfg, kAnalysisRate);

  std::vector<GaussianModel> models(entries.size());
  parallel_for(entries.size(), opts.workers, [&](std::size_t i) {
    const auto& e = entries[i];
    const fs::path cache = feat_dir / cache_name(e.id);
    MfccMatrix feats;
    bool cached = false;
    if (fs::exists(cache)) {
      try {
        feats = read_feature_cache(cache, fp);
        cached = feats.clip_id == e.id;
      } catch (const CacheError&) {
        cached = false;  // stale or corrupt: recompute and overwrite
      }
    }
    if (!cached) {
      const AudioClip clip = ingest_audio(e.audio_path, e.id);
      feats = MfccMatrix{extractor.forward(clip.samples), e.id};
      write_feature_cache(cache, feats, fp);
    }
    models[i] = fit_gaussian(feats, opts.ridge);
  });

  Catalogue c = assemble(std::move(entries), std::move(models), {}, cfg, opts);
  c.save(dir);
  return c;
}

Catalogue Catalogue::from_clips(std::vector<AudioClip> clips, std::vector<std::string> labels, const MfccConfig& cfg,
                                const CatalogueOptions& opts) {
  if (!labels.empty() && labels.size() != clips.size()) throw ShapeError("from_clips: one label per clip required");
  labels.resize(clips.size());
  const MfccExtractor extractor(cfg, kAnalysisRate);
  std::vector<CatalogueEntry> entries(clips.size());
  std::vector<std::shared_ptr<const AudioClip>> segments(clips.size());
  std::vector<GaussianModel> models(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) entries[i] = CatalogueEntry{clips[i].source_id, {}, labels[i]};
  check_unique(entries);
  parallel_for(clips.size(), opts.workers, [&](std::size_t i) {
    AudioClip seg = central_segment(resample(clips[i], kAnalysisRate), kAnalysisSeconds);
    models[i] = fit_gaussian(MfccMatrix{extractor.forward(seg.samples), seg.source_id}, opts.ridge);
    segments[i] = std::make_shared<const AudioClip>(std::move(seg));
  });
  return assemble(std::move(entries), std::move(models), std::move(segments), cfg, opts);
}

void Catalogue::save(const fs::path& dir) const {
  fs::create_directories(dir);
  const auto fp = fingerprint();
  std::vector<GaussianModel> models;
  models.reserve(size());
  for (const auto& p : prepared_) models.push_back(p.model());
  write_models(dir / "models.bin", models, fp);
  write_distance_matrix(dir / "dist_skl.bin", d_skl_, fp);
  if (d_mp_)
    write_distance_matrix(dir / "dist_mp.bin", *d_mp_, fp);
  else
    fs::remove(dir / "dist_mp.bin");
  if (!fs::exists(dir / "manifest.jsonl")) write_manifest(dir / "manifest.jsonl", entries_);

  json meta{{"pipeline_version", kPipelineVersion},
            {"fingerprint", hex32(fp)},
            {"config", cfg_},
            {"ridge", ridge_},
            {"k", k_},
            {"n", size()},
            {"has_mp", has_mp()}};
  std::ofstream f(dir / "meta.json", std::ios::trunc);
  if (!f) throw DomainError("cannot write " + (dir / "meta.json").string());
  f << meta.dump(2) << '\n';
}

Catalogue Catalogue::load(const fs::path& dir, const std::optional<MfccConfig>& expected, unsigned workers) {
  const fs::path meta_path = dir / "meta.json";
  std::ifstream f(meta_path);
  if (!f) throw DomainError("no catalogue at " + dir.string() + " (missing meta.json; run ingest first)");
  json meta;
  try {
    meta = json::parse(f);
  } catch (const json::exception& ex) {
    throw CacheError("corrupt " + meta_path.string() + ": " + ex.what());
  }
  if (meta.value("pipeline_version", -1) != kPipelineVersion)
    throw CacheError("catalogue built by a different pipeline version; re-run ingest");
  const MfccConfig cfg = meta.at("config").get<MfccConfig>();
  const double ridge = meta.at("ridge").get<double>();
  if (expected && !(*expected == cfg)) throw CacheError("catalogue was built with a different feature config");
  const auto fp = config_fingerprint(cfg, ridge);
  if (meta.at("fingerprint").get<std::string>() != hex32(fp)) throw CacheError("catalogue fingerprint mismatch");

  Catalogue c;
  c.cfg_ = cfg;
  c.ridge_ = ridge;
  c.k_ = meta.at("k").get<int>();
  c.workers_ = workers;
  c.entries_ = read_manifest(dir / "manifest.jsonl");
  check_unique(c.entries_);
  auto models = read_models(dir / "models.bin", fp);
  c.d_skl_ = read_distance_matrix(dir / "dist_skl.bin", fp);
  if (models.size() != c.entries_.size() || c.d_skl_.size() != c.entries_.size())
    throw CacheError("catalogue caches disagree with manifest size");
  for (std::size_t i = 0; i < models.size(); ++i)
    if (models[i].clip_id != c.entries_[i].id || c.d_skl_.ids[i] != c.entries_[i].id)
      throw CacheError("catalogue caches disagree with manifest order");
  c.segments_.resize(c.entries_.size());
  c.prepared_.resize(models.size());
  parallel_for(models.size(), workers, [&](std::size_t i) { c.prepared_[i] = PreparedGaussian(models[i]); });
  if (fs::exists(dir / "dist_mp.bin")) {
    c.d_mp_ = read_distance_matrix(dir / "dist_mp.bin", fp);
    if (c.d_mp_->kind != DistanceKind::MP || c.d_mp_->ids != c.d_skl_.ids)
      throw CacheError("dist_mp.bin does not match dist_skl.bin");
  }
  return c;
}

std::vector<std::string> Catalogue::labels() const {
  std::vector<std::string> out;
  out.reserve(size());
  for (const auto& e : entries_) out.push_back(e.label);
  return out;
}

bool Catalogue::has_labels() const {
  return !entries_.empty() &&
         std::all_of(entries_.begin(), entries_.end(), [](const CatalogueEntry& e) { return !e.label.empty(); });
}

const DistanceMatrix& Catalogue::d_mp() const {
  if (!d_mp_) throw DomainError("catalogue has no MP distance matrix (defended mode unavailable)");
  return *d_mp_;
}

const MpIndex& Catalogue::mp_index() const {
  // Not synchronized: call once before sharing across threads (the attack harness does).
  if (!mp_index_) const_cast<Catalogue*>(this)->mp_index_ = std::make_shared<const MpIndex>(d_skl_);
  return *mp_index_;
}

std::optional<std::size_t> Catalogue::find(const std::string& id) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].id == id) return i;
  return std::nullopt;
}

std::size_t Catalogue::index_of(const std::string& id) const {
  if (auto i = find(id)) return *i;
  throw DomainError("unknown song id '" + id + "'");
}

AudioClip Catalogue::segment(std::size_t i) const {
  if (i >= size()) throw DomainError("segment: index out of range");
  if (segments_[i]) return *segments_[i];
  return ingest_audio(entries_[i].audio_path, entries_[i].id);
}

std::vector<double> Catalogue::distances_to(const PreparedGaussian& g) const {
  std::vector<double> row(size());
  for (std::size_t i = 0; i < size(); ++i) row[i] = skl(g, prepared_[i]);
  return row;
}

std::vector<std::string> Catalogue::recommend(const std::string& query_id, bool defended) const {
  const auto q = index_of(query_id);
  const DistanceMatrix& d = defended ? d_mp() : d_skl_;
  std::vector<std::string> out;
  for (auto j : nearest_neighbors(d.row(q), q, k_)) out.push_back(entries_[j].id);
  return out;
}

Catalogue Catalogue::add_song(const AudioClip& clip, std::string label) const {
  if (clip.source_id.empty()) throw DomainError("add_song: clip has no id");
  if (find(clip.source_id)) throw DomainError("add_song: duplicate id '" + clip.source_id + "'");
  AudioClip seg = central_segment(resample(clip, kAnalysisRate), kAnalysisSeconds);
  const MfccExtractor extractor(cfg_, kAnalysisRate);
  PreparedGaussian g(fit_gaussian(MfccMatrix{extractor.forward(seg.samples), seg.source_id}, ridge_));
  const auto row = distances_to(g);

  const std::size_t n = size();
  Catalogue c = *this;
  c.entries_.push_back(CatalogueEntry{seg.source_id, {}, std::move(label)});
  c.segments_.push_back(std::make_shared<const AudioClip>(std::move(seg)));
  c.prepared_.push_back(std::move(g));
  RowMatrix grown = RowMatrix::Zero(static_cast<Eigen::Index>(n + 1), static_cast<Eigen::Index>(n + 1));
  grown.topLeftCorner(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)) = d_skl_.values;
  for (std::size_t i = 0; i < n; ++i) {
    grown(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(i)) = row[i];
    grown(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)) = row[i];
  }
  c.d_skl_.values = std::move(grown);
  c.d_skl_.ids.push_back(c.entries_.back().id);
  if (d_mp_) {
    c.mp_index_ = std::make_shared<const MpIndex>(mp_index().appended(row, c.entries_.back().id));
    c.d_mp_ = c.mp_index_->matrix();
  } else {
    c.mp_index_.reset();
  }
  return c;
}

Catalogue Catalogue::remove_song(const std::string& id) const {
  const auto idx = index_of(id);
  if (size() - 1 < static_cast<std::size_t>(k_) + 1) throw DomainError("remove_song: catalogue would drop below k+1 songs");
  Catalogue c = *this;
  const auto pos = static_cast<std::ptrdiff_t>(idx);
  c.entries_.erase(c.entries_.begin() + pos);
  c.segments_.erase(c.segments_.begin() + pos);
  c.prepared_.erase(c.prepared_.begin() + pos);
  const auto n = static_cast<Eigen::Index>(size());
  const auto r = static_cast<Eigen::Index>(idx);
  RowMatrix shrunk(n - 1, n - 1);
  for (Eigen::Index i = 0, a = 0; i < n; ++i) {
    if (i == r) continue;
    for (Eigen::Index j = 0, b = 0; j < n; ++j) {
      if (j == r) continue;
      shrunk(a, b++) = d_skl_.values(i, j);
    }
    ++a;
  }
  c.d_skl_.values = std::move(shrunk);
  c.d_skl_.ids.erase(c.d_skl_.ids.begin() + pos);
  if (d_mp_) {
    c.mp_index_ = std::make_shared<const MpIndex>(mp_index().without(idx));
    c.d_mp_ = c.mp_index_->matrix();
  } else {
    c.mp_index_.reset();
  }
  return c;
}

}  // namespace hubguard
