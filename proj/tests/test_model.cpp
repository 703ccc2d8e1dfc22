#include <doctest.h>

#include <algorithm>
#include <random>

#include "ciss/model.hpp"
#include "support/fixtures.hpp"

using namespace ciss;

namespace {

std::vector<PairSample> random_pairs(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<PairSample> pairs;
  for (int i = 0; i < n; ++i) {
    PairSample p;
    p.distance = u(rng) * 0.6;
    p.l1 = u(rng) < 0.4;
    // Closer pairs share labels more often.
    p.l2 = u(rng) < 1.0 - p.distance ? p.l1 : !p.l1;
    p.s1 = std::clamp(0.2 + 0.6 * p.l1 + 0.15 * (u(rng) - 0.5), 0.0, 1.0);
    p.s2 = std::clamp(0.2 + 0.6 * p.l2 + 0.15 * (u(rng) - 0.5), 0.0, 1.0);
    p.same_label = p.l1 == p.l2;
    pairs.push_back(p);
  }
  return pairs;
}

BinnedCov synthetic_bins(double a, double b, double noise, std::uint64_t seed, double width = 0.05) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, noise);
  BinnedCov bc;
  bc.edges = uniform_edges(width);
  const Eigen::Index n = bc.edges.size() - 1;
  bc.counts.assign(static_cast<std::size_t>(n), 500);
  bc.valid.assign(static_cast<std::size_t>(n), true);
  bc.cov_ss.resize(n);
  bc.cov_ls.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    bc.cov_ss(k) = a * std::exp(-b * bc.midpoint(k)) + g(rng);
    bc.cov_ls(k) = a * std::exp(-b * bc.midpoint(k)) + g(rng);
  }
  return bc;
}

DependencyModel sample_model() {
  DependencyModel m;
  m.gamma = {{0.07, 12.5}, {0.05, 8.25}};
  m.priors.per_category = {{"car", {0.1, 0.2}}, {"bird", {0.3, 0.15}}};
  m.priors.fallback = {0.2, 0.175};
  m.distance = {0.25, 0.75, true, 0.4, 0.6};
  m.ridge = 2e-6;
  return m;
}

ErrorCode load_code(const std::string& text) {
  try {
    model_from_json(text);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("uniform edges and bin lookup") {
  const Eigen::VectorXd e = uniform_edges();
  CHECK(e.size() == 21);
  CHECK(e(0) == 0.0);
  CHECK(e(20) == 1.0);
  CHECK(bin_index(e, 0.0) == 0);
  CHECK(bin_index(e, 0.05) == 1);
  CHECK(bin_index(e, 0.0499) == 0);
  CHECK(bin_index(e, 1.0) == 19);
  CHECK(bin_index(e, 1.01) == -1);
  CHECK(bin_index(e, -0.01) == -1);
}

TEST_CASE("constant scores have zero covariance") {
  std::vector<PairSample> pairs;
  for (int i = 0; i < 2000; ++i) pairs.push_back({0.01 * (i % 40), 0.4, 0.4, i % 2, 0, false});
  const BinnedCov bc = bin_covariances(pairs, uniform_edges());
  for (Eigen::Index k = 0; k < bc.bins(); ++k) CHECK(bc.cov_ss(k) == 0.0);
}

TEST_CASE("identical variables give the label variance") {
  std::vector<PairSample> pairs;
  for (int i = 0; i < 100; ++i) {
    const int l = i % 4 == 0;
    pairs.push_back({0.02, double(l), double(l), l, l, true});
  }
  const BinnedCov bc = bin_covariances(pairs, uniform_edges());
  CHECK(bc.valid[0]);
  CHECK(bc.cov_ss(0) == doctest::Approx(0.25 * 0.75).epsilon(1e-12));
  CHECK(bc.cov_ls(0) == doctest::Approx(0.25 * 0.75).epsilon(1e-12));
  CHECK(bc.valid_count() == 1);
}

TEST_CASE("bin covariances match a two-pass oracle") {
  std::mt19937_64 rng(53);
  const auto pairs = random_pairs(rng, 10000);
  const Eigen::VectorXd edges = uniform_edges();
  const BinnedCov bc = bin_covariances(pairs, edges);
  for (Eigen::Index k = 0; k < bc.bins(); ++k) {
    std::vector<PairSample> in;
    for (const auto& p : pairs)
      if (p.distance >= edges(k) && (p.distance < edges(k + 1) || (k + 1 == bc.bins() && p.distance == edges(k + 1))))
        in.push_back(p);
    CHECK(bc.counts[static_cast<std::size_t>(k)] == static_cast<long>(in.size()));
    CHECK(bc.valid[static_cast<std::size_t>(k)] == (in.size() >= 50));
    if (in.empty()) continue;
    const double n = static_cast<double>(in.size());
    double m1 = 0, m2 = 0, ml = 0, ms = 0;
    for (const auto& p : in) {
      m1 += p.s1 / n;
      m2 += p.s2 / n;
      ml += (p.l1 + p.l2) / (2 * n);
      ms += (p.s1 + p.s2) / (2 * n);
    }
    double css = 0, cls = 0;
    for (const auto& p : in) {
      css += (p.s1 - m1) * (p.s2 - m2) / n;
      cls += ((p.l1 - ml) * (p.s2 - ms) + (p.l2 - ml) * (p.s1 - ms)) / (2 * n);
    }
    CHECK(std::abs(bc.cov_ss(k) - css) <= 1e-9);
    CHECK(std::abs(bc.cov_ls(k) - cls) <= 1e-9);
  }
}

TEST_CASE("bin covariances ignore pair order") {
  std::mt19937_64 rng(59);
  auto pairs = random_pairs(rng, 3000);
  const BinnedCov a = bin_covariances(pairs, uniform_edges());
  std::shuffle(pairs.begin(), pairs.end(), rng);
  const BinnedCov b = bin_covariances(pairs, uniform_edges());
  CHECK(a.counts == b.counts);
  CHECK(a.valid == b.valid);
  CHECK((a.cov_ss - b.cov_ss).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((a.cov_ls - b.cov_ls).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("bin covariance errors") {
  try {
    bin_covariances(std::vector<PairSample>{}, uniform_edges());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoValidBins);
    CHECK(std::string(e.what()).find("no valid bins") != std::string::npos);
  }
  std::vector<PairSample> few(10, PairSample{0.1, 0.5, 0.5, 0, 0, true});
  CHECK_THROWS_AS(bin_covariances(few, uniform_edges()), Error);
}

TEST_CASE("exact exponential bins are recovered") {
  const BinnedCov bc = synthetic_bins(0.04, 6.0, 0.0, 1);
  const FitResult fit = fit_exponential(bc);
  CHECK(fit.gamma.ss.a == doctest::Approx(0.04).epsilon(0.05));
  CHECK(fit.gamma.ss.b == doctest::Approx(6.0).epsilon(0.10));
  CHECK(!fit.degenerate_ss);
}

TEST_CASE("noisy exponential bins are recovered over 20 seeds") {
  // 200 bins: with 20 bins the spread of the fitted amplitude alone exceeds 5%.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const FitResult fit = fit_exponential(synthetic_bins(0.04, 6.0, 0.002, seed, 0.005));
    CHECK(std::abs(fit.gamma.ss.a - 0.04) <= 0.05 * 0.04);
    CHECK(std::abs(fit.gamma.ss.b - 6.0) <= 0.10 * 6.0);
    CHECK(std::abs(fit.gamma.ls.a - 0.04) <= 0.05 * 0.04);
    CHECK(std::abs(fit.gamma.ls.b - 6.0) <= 0.10 * 6.0);
  }
}

TEST_CASE("fit is optimal over the decay grid") {
  const BinnedCov bc = synthetic_bins(0.05, 3.0, 0.004, 77);
  const FitResult fit = fit_exponential(bc);
  const Eigen::VectorXd grid = decay_grid();
  CHECK(grid.size() == 200);
  CHECK(grid(0) == doctest::Approx(0.1));
  CHECK(grid(199) == 50.0);
  for (Eigen::Index i = 0; i < grid.size(); ++i) CHECK(fit.residual_ss <= fit_amplitude(bc, bc.cov_ss, grid(i)).residual);
  // Fitted curves are non-negative and non-increasing.
  for (double d = 0.0; d < 2.0; d += 0.05) {
    CHECK(fit.gamma.ss(d) >= 0.0);
    CHECK(fit.gamma.ss(d + 0.05) <= fit.gamma.ss(d));
  }
}

TEST_CASE("degenerate and insufficient fits") {
  BinnedCov zero = synthetic_bins(0.0, 1.0, 0.0, 0);
  const FitResult fit = fit_exponential(zero);
  CHECK(fit.gamma.ss.a == 0.0);
  CHECK(fit.gamma.ls.a == 0.0);
  CHECK(fit.degenerate_ss);

  BinnedCov negative = synthetic_bins(0.0, 1.0, 0.0, 0);
  negative.cov_ss.setConstant(-0.01);
  CHECK(fit_exponential(negative).gamma.ss.a == 0.0);

  BinnedCov single = synthetic_bins(0.04, 6.0, 0.0, 0);
  std::fill(single.valid.begin(), single.valid.end(), false);
  single.valid[0] = true;
  try {
    fit_exponential(single);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientBins);
  }
}

TEST_CASE("priors") {
  std::vector<PatchSample> all_c(5, PatchSample{{"c"}, {{"c", 1.0}}});
  const CategoryPriors p = estimate_priors(all_c);
  CHECK(p.lookup("c") == CategoryPrior{1.0, 1.0});

  std::vector<PatchSample> unlabeled = {{{}, {{"c", 0.2}}}, {{}, {{"c", 0.6}}}, {{}, {}}};
  const CategoryPriors q = estimate_priors(unlabeled);
  CHECK(q.lookup("c").e_l == 0.0);
  CHECK(q.lookup("c").e_s == doctest::Approx(0.8 / 3.0).epsilon(1e-15));
  CHECK(q.lookup("unknown") == q.fallback);
}

TEST_CASE("priors match a counting oracle") {
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::vector<std::string> cats = {"a", "b", "c", "d"};
  std::vector<PatchSample> patches;
  for (int i = 0; i < 1000; ++i) {
    PatchSample s;
    for (const auto& c : cats) {
      if (u(rng) < 0.2) s.categories.push_back(c);
      if (u(rng) < 0.7) s.scores[c] = std::round(u(rng) * 64) / 64;  // dyadic, sums exactly
    }
    patches.push_back(s);
  }
  const CategoryPriors p = estimate_priors(patches);
  double fl = 0, fs = 0;
  for (const auto& c : cats) {
    long labeled = 0;
    double score = 0;
    for (const auto& s : patches) {
      labeled += std::count(s.categories.begin(), s.categories.end(), c);
      if (s.scores.count(c)) score += s.scores.at(c);
    }
    CHECK(p.lookup(c).e_l == static_cast<double>(labeled) / 1000.0);
    CHECK(p.lookup(c).e_s == score / 1000.0);
    fl += p.lookup(c).e_l;
    fs += p.lookup(c).e_s;
  }
  CHECK(p.fallback.e_l == doctest::Approx(fl / 4).epsilon(1e-14));
  CHECK(p.fallback.e_s == doctest::Approx(fs / 4).epsilon(1e-14));
}

TEST_CASE("pair distance histograms") {
  std::vector<PairSample> same(10, PairSample{0.0, 0, 0, 1, 1, true});
  const DistanceHistograms h = pair_distance_stats(same, uniform_edges());
  CHECK(h.same(0) == 1.0);
  CHECK(h.same.sum() == 1.0);
  CHECK(h.not_same == Eigen::VectorXd::Constant(20, 0.05));
  CHECK(h.n_not_same == 0);

  std::mt19937_64 rng(67);
  const auto pairs = random_pairs(rng, 2000);
  const DistanceHistograms m = pair_distance_stats(pairs, uniform_edges());
  const Eigen::VectorXd edges = uniform_edges();
  long n_same = 0, n_not = 0, same_below = 0, not_below = 0;
  for (const auto& p : pairs) {
    (p.same_label ? n_same : n_not)++;
    if (p.distance < 0.25) (p.same_label ? same_below : not_below)++;
  }
  CHECK(m.n_same == n_same);
  CHECK(m.n_not_same == n_not);
  CHECK(m.same_mass_below(0.25) == doctest::Approx(double(same_below) / n_same).epsilon(1e-12));
  CHECK(m.not_same_mass_below(0.25) == doctest::Approx(double(not_below) / n_not).epsilon(1e-12));
  CHECK(m.same_mass_below(0.25) > m.not_same_mass_below(0.25));
}

TEST_CASE("model round-trip") {
  ciss::testing::TempDir dir("model");
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    DependencyModel m = sample_model();
    m.gamma = {{0.01 + u(rng), 50 * u(rng)}, {u(rng), 50 * u(rng)}};
    m.priors.per_category["x" + std::to_string(t)] = {u(rng), u(rng)};
    m.priors.fallback = {u(rng), u(rng)};
    m.ridge = 1e-3 * u(rng);
    save_model(m, dir / "m.json");
    CHECK(load_model(dir / "m.json") == m);
  }
}

TEST_CASE("model load errors") {
  std::string good = model_to_json(sample_model());
  CHECK(model_from_json(good) == sample_model());

  std::string neg = good;
  neg.replace(neg.find("0.07"), 4, "-1");
  CHECK(load_code(neg) == ErrorCode::InvariantViolation);
  CHECK(load_code(R"({"version":1,"gamma_ss":{"a":0,"b":1},"gamma_ls":{"a":0,"b":1}})") ==
        ErrorCode::InvariantViolation);
  CHECK(load_code(R"({"version":2,"gamma_ss":{"a":1,"b":1},"gamma_ls":{"a":0,"b":1}})") ==
        ErrorCode::VersionMismatch);
  CHECK(load_code("{not json") == ErrorCode::MalformedFile);
  CHECK(load_code(R"({"version":1,"gamma_ss":{"a":1}})") == ErrorCode::MalformedFile);
  try {
    load_model("/nonexistent/model.json");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingFile);
  }
}

TEST_CASE("minimal model applies fallback priors and defaults") {
  const DependencyModel m = model_from_json(R"({
    "version": 1,
    "gamma_ss": {"a": 0.06, "b": 10},
    "gamma_ls": {"a": 0.05, "b": 8},
    "priors": {"car": {"e_l": 0.1, "e_s": 0.3}, "dog": {"e_l": 0.3, "e_s": 0.1}}
  })");
  CHECK(m.priors.fallback.e_l == doctest::Approx(0.2));
  CHECK(m.priors.fallback.e_s == doctest::Approx(0.2));
  CHECK(m.priors.lookup("cat") == m.priors.fallback);
  CHECK(m.distance == DistanceParams{});
  CHECK(m.ridge == kDefaultRidge);

  const DependencyModel bare = model_from_json(R"({"version":1,"gamma_ss":{"a":1,"b":1},"gamma_ls":{"a":0.5,"b":1}})");
  CHECK(bare.priors.per_category.empty());
  CHECK(bare.priors.fallback == CategoryPrior{});
}
