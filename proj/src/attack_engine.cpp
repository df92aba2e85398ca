#include "hubguard/attack_engine.hpp"

#include "hubguard/hubness_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hubguard {

std::string to_string(AttackVariant v) {
  switch (v) {
    case AttackVariant::Original:
      return "original";
    case AttackVariant::ModKl:
      return "mod-kl";
    case AttackVariant::ModMp:
      return "mod-mp";
    case AttackVariant::ModMpNoNorm:
      return "mod-mp-no-norm";
  }
  return "?";
}

AttackVariant parse_variant(const std::string& name) {
  std::string s = name;
  std::replace(s.begin(), s.end(), '_', '-');
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (auto v : {AttackVariant::Original, AttackVariant::ModKl, AttackVariant::ModMp, AttackVariant::ModMpNoNorm})
    if (s == to_string(v)) return v;
  throw DomainError("unknown attack variant '" + name + "' (expected original, mod-kl, mod-mp or mod-mp-no-norm)");
}

DistanceKind criterion_space(AttackVariant v) {
  return v == AttackVariant::Original ? DistanceKind::SKL : DistanceKind::MP;
}

AttackConfig AttackConfig::defaults(AttackVariant v) {
  AttackConfig c;
  c.variant = v;
  switch (v) {
    case AttackVariant::Original:
      c.epsilon = 0.1, c.eta = 0.001, c.alpha = 25.0;
      break;
    case AttackVariant::ModKl:
      c.epsilon = 1.0, c.eta = 0.001, c.alpha = 25.0;
      break;
    case AttackVariant::ModMp:
    case AttackVariant::ModMpNoNorm:
      c.epsilon = 1.0, c.eta = 0.0005, c.alpha = 100.0;
      break;
  }
  return c;
}

void AttackConfig::validate() const {
  if (!(epsilon > 0.0)) throw DomainError("attack: epsilon must be positive");
  if (!(eta >= 0.0)) throw DomainError("attack: eta must be non-negative");
  if (!(alpha >= 0.0)) throw DomainError("attack: alpha must be non-negative");
  if (max_epochs < 1) throw DomainError("attack: max_epochs must be at least 1");
  if (k < 1) throw DomainError("attack: k must be at least 1");
  if (hub_threshold < 1) throw DomainError("attack: hub_threshold must be at least 1");
}

nlohmann::json AttackConfig::to_json() const {
  return {{"variant", to_string(variant)}, {"epsilon", epsilon}, {"eta", eta},
          {"alpha", alpha},                {"max_epochs", max_epochs}, {"k", k},
          {"hub_threshold", hub_threshold}};
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
  AttackConfig c = defaults(parse_variant(j.value("variant", std::string("original"))));
  c.epsilon = j.value("epsilon", c.epsilon);
  c.eta = j.value("eta", c.eta);
  c.alpha = j.value("alpha", c.alpha);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.k = j.value("k", c.k);
  c.hub_threshold = j.value("hub_threshold", c.hub_threshold);
  return c;
}

nlohmann::json AttackOutcome::to_json() const {
  nlohmann::json j{{"clip_id", clip_id},
                   {"target_id", target_id},
                   {"success", success},
                   {"epochs_used", epochs_used},
                   {"final_occurrence", final_occurrence},
                   {"final_loss", final_loss},
                   {"delta_norm", delta_norm}};
  j["snr_db"] = std::isinf(snr_db) ? nlohmann::json(nullptr) : nlohmann::json(snr_db);
  return j;
}

AttackOutcome AttackOutcome::from_json(const nlohmann::json& j) {
  AttackOutcome o;
  o.clip_id = j.at("clip_id").get<std::string>();
  o.target_id = j.at("target_id").get<std::string>();
  o.success = j.at("success").get<bool>();
  o.epochs_used = j.at("epochs_used").get<int>();
  o.final_occurrence = j.at("final_occurrence").get<int>();
  o.final_loss = j.at("final_loss").get<double>();
  o.delta_norm = j.at("delta_norm").get<double>();
  o.snr_db = j.at("snr_db").is_null() ? std::numeric_limits<double>::infinity() : j.at("snr_db").get<double>();
  return o;
}

std::size_t select_target(const Catalogue& c, std::size_t x, DistanceKind space, std::span<const int> occurrences) {
  if (c.size() < static_cast<std::size_t>(c.k()) + 1) throw DomainError("select_target: catalogue smaller than k+1");
  if (x >= c.size()) throw DomainError("select_target: index out of range");
  if (occurrences.size() != c.size()) throw ShapeError("select_target: one occurrence count per song required");
  const auto row = c.distances(space).row(x);
  const int hub = hub_threshold(c.k());
  std::optional<std::size_t> best;
  for (std::size_t j = 0; j < c.size(); ++j) {
    if (j == x || occurrences[j] < hub) continue;
    if (!best || row[j] < row[*best]) best = j;
  }
  if (best) return *best;
  std::size_t top = x == 0 ? 1 : 0;
  for (std::size_t j = 0; j < c.size(); ++j)
    if (j != x && occurrences[j] > occurrences[top]) top = j;
  return top;
}

std::string select_target(const Catalogue& c, const std::string& x_id, DistanceKind space) {
  const auto x = c.index_of(x_id);
  const auto occ = k_occurrence(c.distances(space), c.k());
  return c.entries()[select_target(c, x, space, occ)].id;
}

AttackProblem::AttackProblem(const Catalogue& c, std::size_t x, std::size_t target, const AttackConfig& cfg)
    : AttackProblem(c, x, target, cfg, c.segment(x)) {}

AttackProblem::AttackProblem(const Catalogue& c, std::size_t x, std::size_t target, const AttackConfig& cfg,
                             AudioClip segment)
    : c_(c), x_(x), target_(target), cfg_(cfg), segment_(std::move(segment)) {
  cfg_.validate();
  if (x >= c.size() || target >= c.size()) throw DomainError("attack: song index out of range");
  if (x == target) throw DomainError("attack: a song cannot be its own target");
  if (c.size() < static_cast<std::size_t>(cfg_.k) + 2)
    throw DomainError("attack: catalogue needs at least k+2 songs so that k+1 remain when the song is replaced");
  extractor_ = std::make_unique<MfccExtractor>(c.config(), segment_.sample_rate);

  if (criterion_space(cfg_.variant) == DistanceKind::SKL) {
    // Raw criterion: k-th neighbour distances among the other songs.
    const auto& d = c.d_skl();
    const std::size_t n = c.size();
    kth_.reserve(n - 1);
    std::vector<double> buf;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == x) continue;
      buf.clear();
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && j != x) buf.push_back(d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      std::nth_element(buf.begin(), buf.begin() + (cfg_.k - 1), buf.end());
      kth_.push_back(buf[static_cast<std::size_t>(cfg_.k - 1)]);
    }
  } else {
    mp_base_.emplace(c.mp_index().without(x));
  }
}

AttackProblem::Evaluation AttackProblem::evaluate(std::span<const double> delta) const {
  if (delta.size() != segment_.samples.size())
    throw ShapeError("attack: perturbation has " + std::to_string(delta.size()) + " samples, segment has " +
                     std::to_string(segment_.samples.size()));
  std::vector<double> perturbed(segment_.samples.size());
  for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] = segment_.samples[i] + delta[i];

  Evaluation e;
  e.features.clip_id = segment_.source_id;
  e.features.frames = extractor_->forward(perturbed, &e.tape);
  e.model = PreparedGaussian(fit_gaussian(e.features, c_.ridge()));
  e.others.reserve(c_.size() - 1);
  for (std::size_t i = 0; i < c_.size(); ++i)
    if (i != x_) e.others.push_back(skl(e.model, c_.prepared(i)));

  double norm2 = 0.0;
  for (double v : delta) norm2 += v * v;

  if (cfg_.variant == AttackVariant::Original || cfg_.variant == AttackVariant::ModKl) {
    e.objective_term = e.others[target_ < x_ ? target_ : target_ - 1];
    e.loss = norm2 + cfg_.alpha * e.objective_term;
  } else {
    const auto row_x = full_row(e);
    std::vector<double> row_t(c_.d_skl().row(target_).begin(), c_.d_skl().row(target_).end());
    row_t[x_] = row_x[target_];
    e.objective_term = mp_surrogate(row_x, row_t, x_, target_);
    e.loss = cfg_.variant == AttackVariant::ModMp ? norm2 + cfg_.alpha * e.objective_term : e.objective_term;
  }
  return e;
}

std::vector<double> AttackProblem::full_row(const Evaluation& e) const {
  std::vector<double> row(c_.size(), 0.0);
  for (std::size_t i = 0, o = 0; i < c_.size(); ++i)
    if (i != x_) row[i] = e.others[o++];
  return row;
}

std::vector<double> AttackProblem::gradient(const Evaluation& e, std::span<const double> delta) const {
  const auto dim = e.model.model().dim();
  Eigen::VectorXd mean_grad = Eigen::VectorXd::Zero(dim);
  Eigen::MatrixXd cov_grad = Eigen::MatrixXd::Zero(dim, dim);
  double weight = 0.0;
  bool with_norm = true;

  if (cfg_.variant == AttackVariant::Original || cfg_.variant == AttackVariant::ModKl) {
    const auto g = skl_grad(e.model, c_.prepared(target_));
    mean_grad = g.mean;
    cov_grad = g.cov;
    weight = cfg_.alpha;
  } else {
    const auto row_x = full_row(e);
    std::vector<double> row_t(c_.d_skl().row(target_).begin(), c_.d_skl().row(target_).end());
    row_t[x_] = row_x[target_];
    const auto g_row = mp_surrogate_grad(row_x, row_t, x_, target_);
    for (std::size_t i = 0; i < c_.size(); ++i) {
      if (i == x_ || g_row[i] == 0.0) continue;
      const auto g = skl_grad(e.model, c_.prepared(i));
      mean_grad += g_row[i] * g.mean;
      cov_grad += g_row[i] * g.cov;
    }
    with_norm = cfg_.variant == AttackVariant::ModMp;
    weight = with_norm ? cfg_.alpha : 1.0;
  }

  std::vector<double> grad(delta.size(), 0.0);
  if (weight != 0.0) {
    const RowMatrix frame_grad = gaussian_vjp(e.features, c_.ridge(), weight * mean_grad, weight * cov_grad);
    grad = extractor_->backward(e.tape, frame_grad);
  }
  if (with_norm)
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += 2.0 * delta[i];
  return grad;
}

int AttackProblem::occurrence(const Evaluation& e) const {
  if (!mp_base_) return single_song_occurrence(kth_, e.others);
  const auto augmented = mp_base_->appended(e.others, segment_.source_id + "+delta").matrix();
  return occurrence_of(augmented, augmented.size() - 1, cfg_.k);
}

LossAndGrad loss_and_grad(const AudioClip& clip, std::span<const double> delta, const GaussianModel& target,
                          const Catalogue& c, const AttackConfig& cfg) {
  const auto x = c.index_of(clip.source_id);
  const auto t = c.index_of(target.clip_id);
  const AttackProblem problem(c, x, t, cfg, clip);
  const auto e = problem.evaluate(delta);
  return {e.loss, problem.gradient(e, delta)};
}

std::vector<double> attack_step(std::span<const double> delta, std::span<const double> grad, const AttackConfig& cfg) {
  if (delta.size() != grad.size()) throw ShapeError("attack_step: delta and gradient differ in length");
  std::vector<double> out(delta.size());
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
    out[i] = std::clamp(delta[i] - cfg.eta * s, -cfg.epsilon, cfg.epsilon);
  }
  return out;
}

AttackRun run_attack_detailed(const Catalogue& c, std::size_t x, const AttackConfig& cfg,
                              std::optional<std::size_t> target) {
  cfg.validate();
  const auto space = criterion_space(cfg.variant);
  const std::size_t t = target ? *target : select_target(c, x, space, k_occurrence(c.distances(space), cfg.k));
  const AttackProblem problem(c, x, t, cfg);

  AttackRun run;
  run.segment = problem.segment();
  run.delta.assign(problem.length(), 0.0);
  auto eval = problem.evaluate(run.delta);
  int occ = problem.occurrence(eval);
  int epoch = 0;
  while (occ < cfg.hub_threshold && epoch < cfg.max_epochs) {
    const auto grad = problem.gradient(eval, run.delta);
    run.delta = attack_step(run.delta, grad, cfg);
    ++epoch;
    eval = problem.evaluate(run.delta);
    occ = problem.occurrence(eval);
  }

  auto& o = run.outcome;
  o.clip_id = c.entries()[x].id;
  o.target_id = c.entries()[t].id;
  o.success = occ >= cfg.hub_threshold;
  o.epochs_used = epoch;
  o.final_occurrence = occ;
  o.final_loss = eval.loss;
  double norm2 = 0.0;
  for (double v : run.delta) norm2 += v * v;
  o.delta_norm = std::sqrt(norm2);
  o.snr_db = snr_db(run.segment.samples, run.delta);
  return run;
}

AttackOutcome run_attack(const Catalogue& c, const std::string& x_id, const AttackConfig& cfg) {
  return run_attack_detailed(c, c.index_of(x_id), cfg).outcome;
}

}  // namespace hubguard
