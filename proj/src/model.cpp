#include "ciss/model.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace ciss {

using nlohmann::json;

int BinnedCov::valid_count() const {
  return static_cast<int>(std::count(valid.begin(), valid.end(), true));
}

Eigen::VectorXd uniform_edges(double width, double max_distance) {
  if (!(width > 0.0) || !(max_distance > 0.0))
    throw Error(ErrorCode::InvalidArgument, "bin width and range must be positive");
  const auto n = static_cast<Eigen::Index>(std::llround(max_distance / width));
  Eigen::VectorXd edges(n + 1);
  for (Eigen::Index i = 0; i <= n; ++i) edges(i) = static_cast<double>(i) * width;
  return edges;
}

Eigen::Index bin_index(const Eigen::VectorXd& edges, double d) {
  const Eigen::Index n = edges.size() - 1;
  if (n < 1 || !(d >= edges(0)) || d > edges(n)) return -1;
  if (d == edges(n)) return n - 1;
  const auto it = std::upper_bound(edges.data(), edges.data() + edges.size(), d);
  return static_cast<Eigen::Index>(it - edges.data()) - 1;
}

namespace {

void check_edges(const Eigen::VectorXd& edges) {
  if (edges.size() < 2) throw Error(ErrorCode::InvalidArgument, "need at least two bin edges");
  for (Eigen::Index i = 1; i < edges.size(); ++i)
    if (!(edges(i) > edges(i - 1)))
      throw Error(ErrorCode::InvalidArgument, "bin edges must be strictly increasing");
}

}  // namespace

BinnedCov bin_covariances(std::span<const PairSample> pairs, const Eigen::VectorXd& edges,
                          long min_count) {
  check_edges(edges);
  if (pairs.empty()) throw Error(ErrorCode::NoValidBins, "no valid bins: empty pair list");
  const Eigen::Index nb = edges.size() - 1;

  // Moment sums of values shifted by the first sample of each bin; the
  // shift leaves covariances unchanged and keeps constant bins exactly 0.
  Eigen::ArrayXd s1(nb), s2(nb), s12(nb), l(nb), s(nb), ls(nb), k1(nb), k2(nb), kl(nb), ks(nb);
  s1.setZero(); s2.setZero(); s12.setZero(); l.setZero(); s.setZero(); ls.setZero();
  std::vector<long> counts(static_cast<std::size_t>(nb), 0);
  for (const auto& p : pairs) {
    const Eigen::Index k = bin_index(edges, p.distance);
    if (k < 0) continue;
    if (counts[static_cast<std::size_t>(k)]++ == 0) {
      k1(k) = p.s1;
      k2(k) = p.s2;
      kl(k) = p.l1;
      ks(k) = p.s2;
    }
    const double a1 = p.s1 - k1(k), a2 = p.s2 - k2(k);
    s1(k) += a1;
    s2(k) += a2;
    s12(k) += a1 * a2;
    const double la = p.l1 - kl(k), sa = p.s2 - ks(k), lb = p.l2 - kl(k), sb = p.s1 - ks(k);
    l(k) += la + lb;
    s(k) += sa + sb;
    ls(k) += la * sa + lb * sb;
  }

  BinnedCov bc;
  bc.edges = edges;
  bc.counts = counts;
  bc.cov_ss = Eigen::VectorXd::Zero(nb);
  bc.cov_ls = Eigen::VectorXd::Zero(nb);
  bc.valid.assign(static_cast<std::size_t>(nb), false);
  for (Eigen::Index k = 0; k < nb; ++k) {
    const long n = counts[static_cast<std::size_t>(k)];
    if (n == 0) continue;
    const double inv = 1.0 / static_cast<double>(n);
    bc.cov_ss(k) = s12(k) * inv - (s1(k) * inv) * (s2(k) * inv);
    const double inv2 = 0.5 * inv;
    bc.cov_ls(k) = ls(k) * inv2 - (l(k) * inv2) * (s(k) * inv2);
    bc.valid[static_cast<std::size_t>(k)] = n >= min_count;
  }
  if (bc.valid_count() == 0) throw Error(ErrorCode::NoValidBins, "no valid bins");
  return bc;
}

Eigen::VectorXd decay_grid() {
  constexpr int kPoints = 200;
  constexpr double kLo = 0.1, kHi = 50.0;
  Eigen::VectorXd grid(kPoints);
  const double step = std::log(kHi / kLo) / (kPoints - 1);
  for (int i = 0; i < kPoints; ++i) grid(i) = kLo * std::exp(step * i);
  grid(kPoints - 1) = kHi;
  return grid;
}

AmplitudeFit fit_amplitude(const BinnedCov& bc, const Eigen::VectorXd& cov, double b) {
  double num = 0.0, den = 0.0;
  for (Eigen::Index k = 0; k < bc.bins(); ++k) {
    if (!bc.valid[static_cast<std::size_t>(k)]) continue;
    const double n = static_cast<double>(bc.counts[static_cast<std::size_t>(k)]);
    const double e = std::exp(-b * bc.midpoint(k));
    num += n * cov(k) * e;
    den += n * e * e;
  }
  AmplitudeFit fit;
  fit.a = den > 0.0 ? std::max(0.0, num / den) : 0.0;
  for (Eigen::Index k = 0; k < bc.bins(); ++k) {
    if (!bc.valid[static_cast<std::size_t>(k)]) continue;
    const double n = static_cast<double>(bc.counts[static_cast<std::size_t>(k)]);
    const double r = cov(k) - fit.a * std::exp(-b * bc.midpoint(k));
    fit.residual += n * r * r;
  }
  return fit;
}

namespace {

ExpCurve fit_curve(const BinnedCov& bc, const Eigen::VectorXd& cov, double& residual, bool& degenerate) {
  degenerate = true;
  for (Eigen::Index k = 0; k < bc.bins(); ++k)
    if (bc.valid[static_cast<std::size_t>(k)] && cov(k) > 0.0) degenerate = false;

  const Eigen::VectorXd grid = decay_grid();
  ExpCurve best{0.0, grid(0)};
  residual = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const AmplitudeFit f = fit_amplitude(bc, cov, grid(i));
    if (f.residual < residual) {
      residual = f.residual;
      best = {f.a, grid(i)};
    }
  }
  if (degenerate) best.a = 0.0;
  return best;
}

}  // namespace

FitResult fit_exponential(const BinnedCov& bc) {
  if (bc.valid_count() < 2)
    throw Error(ErrorCode::InsufficientBins,
                "insufficient valid bins: " + std::to_string(bc.valid_count()) + " < 2");
  FitResult r;
  r.gamma.ss = fit_curve(bc, bc.cov_ss, r.residual_ss, r.degenerate_ss);
  r.gamma.ls = fit_curve(bc, bc.cov_ls, r.residual_ls, r.degenerate_ls);
  return r;
}

CategoryPriors estimate_priors(std::span<const PatchSample> patches) {
  std::map<std::string, std::pair<double, double>> sums;  // label count, score sum
  for (const auto& p : patches) {
    for (const auto& c : p.categories) sums[c];
    for (const auto& [c, s] : p.scores) sums[c];
  }
  for (const auto& p : patches) {
    for (const auto& c : p.categories) sums[c].first += 1.0;
    for (const auto& [c, s] : p.scores) sums[c].second += s;
  }
  CategoryPriors priors;
  if (patches.empty()) return priors;
  const double n = static_cast<double>(patches.size());
  double fl = 0.0, fs = 0.0;
  for (const auto& [c, acc] : sums) {
    CategoryPrior cp{acc.first / n, acc.second / n};
    priors.per_category.emplace(c, cp);
    fl += cp.e_l;
    fs += cp.e_s;
  }
  if (!sums.empty()) priors.fallback = {fl / static_cast<double>(sums.size()), fs / static_cast<double>(sums.size())};
  return priors;
}

double DistanceHistograms::same_mass_below(double d) const {
  double m = 0.0;
  for (Eigen::Index k = 0; k < same.size(); ++k)
    if (edges(k + 1) <= d + 1e-12) m += same(k);
  return m;
}

double DistanceHistograms::not_same_mass_below(double d) const {
  double m = 0.0;
  for (Eigen::Index k = 0; k < not_same.size(); ++k)
    if (edges(k + 1) <= d + 1e-12) m += not_same(k);
  return m;
}

DistanceHistograms pair_distance_stats(std::span<const PairSample> pairs, const Eigen::VectorXd& edges) {
  check_edges(edges);
  const Eigen::Index nb = edges.size() - 1;
  DistanceHistograms h;
  h.edges = edges;
  h.same = Eigen::VectorXd::Zero(nb);
  h.not_same = Eigen::VectorXd::Zero(nb);
  for (const auto& p : pairs) {
    const Eigen::Index k = bin_index(edges, p.distance);
    if (k < 0) continue;
    if (p.same_label) {
      h.same(k) += 1.0;
      ++h.n_same;
    } else {
      h.not_same(k) += 1.0;
      ++h.n_not_same;
    }
  }
  auto normalize = [nb](Eigen::VectorXd& v) {
    const double total = v.sum();
    if (total > 0.0)
      v /= total;
    else
      v.setConstant(1.0 / static_cast<double>(nb));
  };
  normalize(h.same);
  normalize(h.not_same);
  return h;
}

void DependencyModel::validate() const {
  if (version != kModelVersion)
    throw Error(ErrorCode::VersionMismatch, "unsupported model version " + std::to_string(version));
  for (const ExpCurve* c : {&gamma.ss, &gamma.ls})
    if (!std::isfinite(c->a) || !std::isfinite(c->b) || c->a < 0.0 || c->b < 0.0)
      throw Error(ErrorCode::InvariantViolation, "gamma parameters must be finite and non-negative");
  if (!(gamma.ss(0.0) > 0.0)) throw Error(ErrorCode::InvariantViolation, "gamma_ss(0) must be positive");
  if (!std::isfinite(ridge) || ridge < 0.0) throw Error(ErrorCode::InvariantViolation, "ridge must be >= 0");
  auto check_prior = [](const CategoryPrior& p) {
    if (!(p.e_l >= 0.0 && p.e_l <= 1.0 && p.e_s >= 0.0 && p.e_s <= 1.0))
      throw Error(ErrorCode::InvariantViolation, "priors must lie in [0,1]");
  };
  for (const auto& [c, p] : priors.per_category) check_prior(p);
  check_prior(priors.fallback);
  try {
    distance.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvariantViolation, e.what());
  }
}

std::string model_to_json(const DependencyModel& m) {
  json priors = json::object();
  for (const auto& [c, p] : m.priors.per_category) priors[c] = {{"e_l", p.e_l}, {"e_s", p.e_s}};
  json j = {
      {"version", m.version},
      {"gamma_ss", {{"a", m.gamma.ss.a}, {"b", m.gamma.ss.b}}},
      {"gamma_ls", {{"a", m.gamma.ls.a}, {"b", m.gamma.ls.b}}},
      {"priors", priors},
      {"fallback", {{"e_l", m.priors.fallback.e_l}, {"e_s", m.priors.fallback.e_s}}},
      {"distance",
       {{"alpha", m.distance.alpha},
        {"beta", m.distance.beta},
        {"pyramid",
         {{"enabled", m.distance.pyramid},
          {"w_whole", m.distance.pyramid_weight_whole},
          {"w_cells", m.distance.pyramid_weight_cells}}}}},
      {"ridge", m.ridge},
  };
  return j.dump(2) + "\n";
}

DependencyModel model_from_json(const std::string& text) {
  DependencyModel m;
  try {
    const json j = json::parse(text);
    m.version = j.at("version").get<int>();
    if (m.version != kModelVersion)
      throw Error(ErrorCode::VersionMismatch, "unsupported model version " + std::to_string(m.version));
    m.gamma.ss = {j.at("gamma_ss").at("a").get<double>(), j.at("gamma_ss").at("b").get<double>()};
    m.gamma.ls = {j.at("gamma_ls").at("a").get<double>(), j.at("gamma_ls").at("b").get<double>()};
    if (j.contains("priors"))
      for (const auto& [c, p] : j.at("priors").items())
        m.priors.per_category[c] = {p.at("e_l").get<double>(), p.at("e_s").get<double>()};
    if (j.contains("fallback")) {
      m.priors.fallback = {j["fallback"].at("e_l").get<double>(), j["fallback"].at("e_s").get<double>()};
    } else if (!m.priors.per_category.empty()) {
      double fl = 0.0, fs = 0.0;
      for (const auto& [c, p] : m.priors.per_category) {
        fl += p.e_l;
        fs += p.e_s;
      }
      const double n = static_cast<double>(m.priors.per_category.size());
      m.priors.fallback = {fl / n, fs / n};
    }
    if (j.contains("distance")) {
      const json& d = j["distance"];
      m.distance.alpha = d.value("alpha", m.distance.alpha);
      m.distance.beta = d.value("beta", m.distance.beta);
      if (d.contains("pyramid")) {
        const json& p = d["pyramid"];
        m.distance.pyramid = p.value("enabled", m.distance.pyramid);
        m.distance.pyramid_weight_whole = p.value("w_whole", m.distance.pyramid_weight_whole);
        m.distance.pyramid_weight_cells = p.value("w_cells", m.distance.pyramid_weight_cells);
      }
    }
    m.ridge = j.value("ridge", kDefaultRidge);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedFile, std::string("malformed model: ") + e.what());
  }
  m.validate();
  return m;
}

void save_model(const DependencyModel& m, const std::filesystem::path& path) {
  m.validate();
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << model_to_json(m);
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

DependencyModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open model " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace ciss
