#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "nodulebench/stats/inference.hpp"
#include "nodulebench/stats/metrics.hpp"
#include "nodulebench/stats/regression.hpp"
#include "nodulebench/stats/report.hpp"

using namespace nb;

namespace {

ScoredCase sc(bool malignant, double score, bool call = false, std::string patient = "") {
  return {"c", std::move(patient), malignant, score, call};
}

std::vector<ScoredCase> random_cases(Rng& rng, std::size_t n, int levels) {
  std::vector<ScoredCase> out;
  for (std::size_t i = 0; i < n; ++i) {
    const bool m = rng.bernoulli(0.45);
    // Few levels force ties.
    const double s = static_cast<double>(rng.integer(0, levels - 1)) + (m ? 0.8 * rng.uniform() : 0.0);
    out.push_back({"n" + std::to_string(i), "p" + std::to_string(i / 2), m, std::floor(s), rng.bernoulli(0.5)});
  }
  return out;
}

// Independent AUC oracle: explicit pair enumeration.
double pair_auc(const std::vector<ScoredCase>& cs) {
  double num = 0, den = 0;
  for (const auto& p : cs)
    for (const auto& q : cs)
      if (p.malignant && !q.malignant) {
        den += 1;
        num += p.score > q.score ? 1 : p.score == q.score ? 0.5 : 0;
      }
  return num / den;
}

double oracle_f1(const std::vector<ScoredCase>& cs, double t) {
  double tp = 0, fp = 0, fn = 0;
  for (const auto& c : cs) {
    if (c.score > t && c.malignant) tp++;
    if (c.score > t && !c.malignant) fp++;
    if (c.score <= t && c.malignant) fn++;
  }
  return tp == 0 ? 0 : 2 * tp / (2 * tp + fp + fn);
}

}  // namespace

TEST(Metrics, WorkedExample) {
  std::vector<ScoredCase> cs;
  for (int i = 0; i < 3; ++i) cs.push_back(sc(true, 1, true));
  cs.push_back(sc(true, 0, false));
  for (int i = 0; i < 4; ++i) cs.push_back(sc(false, 0, false));
  for (int i = 0; i < 2; ++i) cs.push_back(sc(false, 1, true));
  const auto m = compute_metrics(cs);
  EXPECT_EQ(m.counts.total(), 10u);
  EXPECT_DOUBLE_EQ(*m.sensitivity, 0.75);
  EXPECT_DOUBLE_EQ(*m.specificity, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(*m.accuracy, 0.7);
  EXPECT_DOUBLE_EQ(*m.ppv, 0.6);
  EXPECT_DOUBLE_EQ(*m.npv, 0.8);
  EXPECT_DOUBLE_EQ(*m.f1, 2.0 / 3.0);
}

TEST(Metrics, PerfectClassifier) {
  std::vector<ScoredCase> cs{sc(true, 1, true), sc(false, 0, false), sc(true, 1, true)};
  const auto m = compute_metrics(cs);
  EXPECT_EQ(*m.sensitivity, 1.0);
  EXPECT_EQ(*m.specificity, 1.0);
  EXPECT_EQ(*m.accuracy, 1.0);
  EXPECT_EQ(*m.fpr, 0.0);
  EXPECT_EQ(*m.fnr, 0.0);
}

TEST(Metrics, NoPositivesLeavesSensitivityUndefined) {
  std::vector<ScoredCase> cs{sc(false, 0, false), sc(false, 1, true)};
  const auto m = compute_metrics(cs);
  EXPECT_FALSE(m.sensitivity.has_value());
  EXPECT_FALSE(m.fnr.has_value());
  EXPECT_DOUBLE_EQ(*m.specificity, 0.5);
  EXPECT_THROW(compute_metrics(std::vector<ScoredCase>{}), std::invalid_argument);
}

TEST(Metrics, ComplementsAreExact) {
  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto cs = random_cases(rng, 1 + static_cast<std::size_t>(rng.integer(0, 60)), 5);
    const auto m = compute_metrics(cs);
    if (m.sensitivity) EXPECT_EQ(*m.sensitivity + *m.fnr, 1.0);
    if (m.specificity) EXPECT_EQ(*m.specificity + *m.fpr, 1.0);
  }
}

TEST(Metrics, ReaderScoreBands) {
  EXPECT_NO_THROW(check_reader_case(sc(true, 6, true)));
  EXPECT_NO_THROW(check_reader_case(sc(true, 5, false)));
  EXPECT_THROW(check_reader_case(sc(true, 5, true)), std::invalid_argument);
  EXPECT_THROW(check_reader_case(sc(true, 11, true)), std::invalid_argument);
  EXPECT_THROW(check_reader_case(sc(true, 6.5, true)), std::invalid_argument);
}

TEST(Roc, WorkedExample) {
  std::vector<ScoredCase> cs{sc(false, 0.1), sc(false, 0.4), sc(true, 0.35), sc(true, 0.8)};
  EXPECT_DOUBLE_EQ(roc_auc(cs).auc, 0.75);
}

TEST(Roc, SeparatedAndTied) {
  std::vector<ScoredCase> sep{sc(false, 0.1), sc(false, 0.2), sc(true, 0.7)};
  EXPECT_EQ(roc_auc(sep).auc, 1.0);
  std::vector<ScoredCase> tied{sc(false, 0.5), sc(true, 0.5), sc(true, 0.5)};
  EXPECT_EQ(roc_auc(tied).auc, 0.5);
  std::vector<ScoredCase> one{sc(true, 0.5), sc(true, 0.1)};
  EXPECT_THROW(roc_auc(one), UndefinedStatistic);
}

TEST(Roc, ReaderScoresGiveTenPointsPlusOrigin) {
  std::vector<ScoredCase> cs;
  for (int s = 1; s <= 10; ++s) {
    cs.push_back(sc(s > 4, s, s >= 6));
    cs.push_back(sc(s > 7, s, s >= 6));
  }
  const auto roc = roc_auc(cs);
  EXPECT_EQ(roc.points.size(), 11u);
  EXPECT_EQ(roc.points.back().fpr, 1.0);
  EXPECT_EQ(roc.points.back().tpr, 1.0);
}

TEST(Roc, TrapezoidMatchesPairCounting) {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    auto cs = random_cases(rng, 2 + static_cast<std::size_t>(rng.integer(0, 198)), 1 + static_cast<int>(rng.integer(1, 12)));
    cs[0].malignant = true;
    cs[1].malignant = false;
    EXPECT_NEAR(roc_auc(cs).auc, pair_auc(cs), 1e-12);
    std::vector<double> s;
    std::vector<bool> m;
    for (const auto& c : cs) {
      s.push_back(c.score);
      m.push_back(c.malignant);
    }
    EXPECT_NEAR(mann_whitney_auc(s, m), pair_auc(cs), 1e-12);
  }
}

TEST(Threshold, WorkedExample) {
  std::vector<ScoredCase> cs{sc(false, 0.2), sc(false, 0.3), sc(true, 0.7), sc(true, 0.9)};
  EXPECT_DOUBLE_EQ(select_threshold_max_f1(cs), 0.5);
}

TEST(Threshold, SeparableSingleton) {
  std::vector<ScoredCase> cs{sc(false, 0.2), sc(false, 0.3), sc(true, 0.95)};
  const double t = select_threshold_max_f1(cs);
  EXPECT_LT(t, 0.95);
  EXPECT_EQ(f1_at(cs, t), 1.0);
  EXPECT_THROW(select_threshold_max_f1(std::vector<ScoredCase>{sc(false, 0.1)}), UndefinedStatistic);
}

TEST(Threshold, MatchesExhaustiveScan) {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    auto cs = random_cases(rng, trial % 10 == 0 ? 100 : 2 + static_cast<std::size_t>(rng.integer(0, 40)), 8);
    for (auto& c : cs) c.score += rng.uniform() < 0.5 ? 0.0 : rng.uniform();
    cs[0].malignant = true;
    cs[1].malignant = false;
    // Oracle: every distinct call set is "score >= s" for a distinct s, or none.
    std::set<double> distinct;
    for (const auto& c : cs) distinct.insert(c.score);
    double best = oracle_f1(cs, std::numeric_limits<double>::infinity());
    double lowest_cut = std::numeric_limits<double>::infinity();
    for (double s : distinct) {
      const double f = oracle_f1(cs, std::nextafter(s, -INFINITY));
      if (f > best || (f == best && s < lowest_cut)) {
        if (f > best) best = f;
        lowest_cut = s;
      }
    }
    const double t = select_threshold_max_f1(cs);
    ASSERT_EQ(oracle_f1(cs, t), best) << "trial " << trial;
    // Lowest maximizer: the smallest score above t is the lowest cut achieving the max.
    double above = std::numeric_limits<double>::infinity();
    for (double s : distinct)
      if (s > t) above = std::min(above, s);
    if (std::isfinite(lowest_cut)) {
      for (double s : distinct)
        if (s < lowest_cut) EXPECT_LT(oracle_f1(cs, std::nextafter(s, -INFINITY)), best);
    }
    EXPECT_EQ(above, lowest_cut);
  }
}

TEST(Bootstrap, ConstantStatisticIsDegenerate) {
  Rng rng(1);
  Rng data_rng(2);
  const auto cs = random_cases(data_rng, 50, 4);
  const auto ci = bootstrap_ci([](std::span<const ScoredCase>) { return std::optional<double>(0.42); }, cs, rng);
  EXPECT_EQ(ci.lo, 0.42);
  EXPECT_EQ(ci.hi, 0.42);
}

TEST(Bootstrap, SeedDeterminism) {
  Rng data_rng(2);
  const auto cs = random_cases(data_rng, 80, 6);
  const CaseStatistic auc = [](std::span<const ScoredCase> s) { return std::optional<double>(roc_auc(s).auc); };
  Rng a(9), b(9);
  const auto x = bootstrap_ci(auc, cs, a), y = bootstrap_ci(auc, cs, b);
  EXPECT_EQ(x.lo, y.lo);
  EXPECT_EQ(x.hi, y.hi);
}

TEST(Bootstrap, RedrawCapIsEnforced) {
  Rng rng(1);
  std::vector<ScoredCase> cs{sc(true, 0.1)};
  const CaseStatistic never = [](std::span<const ScoredCase>) { return std::optional<double>(); };
  EXPECT_THROW(bootstrap_ci(never, cs, rng, {100, 0.95, 50}), std::runtime_error);
}

TEST(Bootstrap, AccuracyCoverage) {
  Rng rng(2024);
  int covered = 0;
  for (int d = 0; d < 200; ++d) {
    std::vector<ScoredCase> cs;
    for (int i = 0; i < 200; ++i) {
      const bool correct = rng.bernoulli(0.7);
      cs.push_back(sc(true, 0, correct));
    }
    const auto ci = bootstrap_ci([](std::span<const ScoredCase> s) { return compute_metrics(s).accuracy; }, cs, rng);
    covered += ci.lo <= 0.7 && 0.7 <= ci.hi;
  }
  EXPECT_GE(covered, 180);
}

TEST(Delong, IdenticalScoresGivePOne) {
  std::vector<double> s{0.1, 0.4, 0.35, 0.8, 0.2};
  std::vector<bool> t{false, false, true, true, true};
  const auto r = delong_paired(s, s, t);
  EXPECT_EQ(r.z, 0.0);
  EXPECT_EQ(r.p, 1.0);
}

TEST(Delong, AucsMatchRoc) {
  Rng rng(8);
  std::vector<double> a, b;
  std::vector<bool> t;
  std::vector<ScoredCase> ca, cb;
  for (int i = 0; i < 60; ++i) {
    const bool m = rng.bernoulli(0.5);
    a.push_back(rng.normal(m ? 1.0 : 0.0, 1.0));
    b.push_back(std::round(rng.normal(m ? 0.5 : 0.0, 1.0) * 2) / 2);
    t.push_back(m);
    ca.push_back(sc(m, a.back()));
    cb.push_back(sc(m, b.back()));
  }
  const auto r = delong_paired(a, b, t);
  EXPECT_EQ(r.auc_a, roc_auc(ca).auc);
  EXPECT_EQ(r.auc_b, roc_auc(cb).auc);
  EXPECT_THROW(delong_paired(a, std::vector<double>(3), t), std::invalid_argument);
}

TEST(Delong, VarianceMatchesPairedBootstrap) {
  Rng rng(77);
  std::vector<double> a, b;
  std::vector<bool> t;
  for (int i = 0; i < 100; ++i) {
    const bool m = i % 2 == 0;
    const double latent = rng.normal();
    a.push_back((m ? 1.2 : 0.0) + latent + 0.6 * rng.normal());
    b.push_back((m ? 0.8 : 0.0) + latent + 0.9 * rng.normal());
    t.push_back(m);
  }
  const auto r = delong_paired(a, b, t);
  // Oracle: class-stratified paired bootstrap of AUC_A - AUC_B.
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < t.size(); ++i) (t[i] ? pos : neg).push_back(i);
  auto auc = [&](const std::vector<double>& s, const std::vector<std::size_t>& P, const std::vector<std::size_t>& N) {
    double w = 0;
    for (auto i : P)
      for (auto j : N) w += s[i] > s[j] ? 1 : s[i] == s[j] ? 0.5 : 0;
    return w / static_cast<double>(P.size() * N.size());
  };
  Rng boot(5);
  std::vector<double> diffs;
  for (int rep = 0; rep < 2000; ++rep) {
    std::vector<std::size_t> P, N;
    for (std::size_t k = 0; k < pos.size(); ++k) P.push_back(pos[static_cast<std::size_t>(boot.integer(0, pos.size() - 1))]);
    for (std::size_t k = 0; k < neg.size(); ++k) N.push_back(neg[static_cast<std::size_t>(boot.integer(0, neg.size() - 1))]);
    diffs.push_back(auc(a, P, N) - auc(b, P, N));
  }
  double mean = 0, var = 0;
  for (double d : diffs) mean += d;
  mean /= diffs.size();
  for (double d : diffs) var += (d - mean) * (d - mean);
  var /= diffs.size() - 1;
  EXPECT_NEAR(r.variance / var, 1.0, 0.15) << "delong " << r.variance << " bootstrap " << var;
}

TEST(McNemar, SymmetricDiscordanceGivesPOne) {
  std::vector<bool> truth(20, true), a(20, true), b(20, true);
  for (int i = 0; i < 4; ++i) b[i] = false;
  for (int i = 4; i < 8; ++i) a[i] = false;
  const auto r = mcnemar(a, b, truth);
  EXPECT_EQ(r.b, 4u);
  EXPECT_EQ(r.c, 4u);
  EXPECT_EQ(r.p, 1.0);
}

TEST(McNemar, ExactTail) {
  std::vector<bool> truth(12, false), a(12, false), b(12, false);
  for (int i = 0; i < 10; ++i) b[i] = true;
  const auto r = mcnemar(a, b, truth);
  EXPECT_EQ(r.b, 10u);
  EXPECT_EQ(r.c, 0u);
  EXPECT_TRUE(r.exact);
  EXPECT_NEAR(r.p, 2.0 * std::pow(0.5, 10), 1e-15);
}

TEST(McNemar, NoDiscordance) {
  std::vector<bool> v{true, false, true};
  const auto r = mcnemar(v, v, v);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_EQ(r.p, 1.0);
}

TEST(McNemar, LargeSampleChiSquare) {
  std::vector<bool> truth(40, true), a(40, true), b(40, true);
  for (int i = 0; i < 30; ++i) b[i] = false;
  for (int i = 30; i < 40; ++i) a[i] = false;
  const auto r = mcnemar(a, b, truth);
  EXPECT_FALSE(r.exact);
  EXPECT_DOUBLE_EQ(r.statistic, 19.0 * 19.0 / 40.0);
  // Chi-square(1) survival = 2 * (1 - Phi(sqrt(x))).
  const double z = std::sqrt(r.statistic);
  EXPECT_NEAR(r.p, 2.0 * (1.0 - 0.5 * (1.0 + std::erf(z / std::sqrt(2.0)))), 1e-12);
}

TEST(Kappa, PerfectAgreement) {
  std::vector<bool> x{true, false, true, true, false};
  EXPECT_DOUBLE_EQ(*cohens_kappa(x, x), 1.0);
}

TEST(Kappa, ChanceTable) {
  std::vector<bool> a, b;
  for (int cell = 0; cell < 4; ++cell)
    for (int i = 0; i < 25; ++i) {
      a.push_back(cell & 1);
      b.push_back(cell & 2);
    }
  EXPECT_NEAR(*cohens_kappa(a, b), 0.0, 1e-15);
}

TEST(Kappa, ConstantRatersUndefined) {
  std::vector<bool> x(10, true);
  EXPECT_FALSE(cohens_kappa(x, x).has_value());
}

TEST(Kappa, SymmetricInArguments) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<bool> a, b;
    for (int i = 0; i < 30; ++i) {
      a.push_back(rng.bernoulli(0.4));
      b.push_back(rng.bernoulli(0.6));
    }
    const auto x = cohens_kappa(a, b), y = cohens_kappa(b, a);
    ASSERT_EQ(x.has_value(), y.has_value());
    if (x) EXPECT_EQ(*x, *y);
  }
}

TEST(Kappa, TwelveReaderMatrix) {
  Rng rng(12);
  std::vector<bool> truth;
  for (int i = 0; i < 80; ++i) truth.push_back(rng.bernoulli(0.5));
  std::vector<std::vector<bool>> calls(12);
  for (auto& r : calls)
    for (bool t : truth) r.push_back(rng.bernoulli(0.8) ? t : !t);
  const auto km = kappa_matrix(calls);
  ASSERT_EQ(km.values.size(), 12u);
  double sum = 0;
  for (std::size_t i = 0; i < 12; ++i) {
    ASSERT_EQ(km.values[i].size(), 12u);
    EXPECT_EQ(*km.values[i][i], 1.0);
    for (std::size_t j = 0; j < 12; ++j) EXPECT_EQ(*km.values[i][j], *km.values[j][i]);
    for (std::size_t j = i + 1; j < 12; ++j) sum += *km.values[i][j];
  }
  EXPECT_EQ(km.defined_pairs, 66u);
  EXPECT_NEAR(km.overall, sum / 66.0, 1e-15);
  EXPECT_EQ(km.band, kappa_band(km.overall));
}

TEST(Kappa, Bands) {
  EXPECT_EQ(kappa_band(-0.1), "poor");
  EXPECT_EQ(kappa_band(0.2), "poor");
  EXPECT_EQ(kappa_band(0.313), "fair");
  EXPECT_EQ(kappa_band(0.421), "moderate");
  EXPECT_EQ(kappa_band(0.7), "substantial");
  EXPECT_EQ(kappa_band(0.95), "almost perfect");
}

TEST(Patient, MaxScore) {
  std::vector<ScoredCase> n{sc(false, 3, false, "P1"), sc(true, 8, true, "P1")};
  const auto p = patient_aggregate(n);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].score, 8.0);
  EXPECT_TRUE(p[0].malignant);
  EXPECT_TRUE(p[0].call);
}

TEST(Patient, AllBenign) {
  std::vector<ScoredCase> n{sc(false, 3, false, "P1"), sc(false, 2, false, "P1")};
  const auto p = patient_aggregate(n);
  EXPECT_FALSE(p[0].malignant);
  EXPECT_FALSE(p[0].call);
}

TEST(Patient, SingletonIsIdentity) {
  std::vector<ScoredCase> n{sc(true, 0.37, false, "P9")};
  const auto p = patient_aggregate(n)[0];
  EXPECT_EQ(p.score, 0.37);
  EXPECT_EQ(p.malignant, true);
  EXPECT_EQ(p.call, false);
  EXPECT_THROW(aggregate_patient("P0", std::vector<ScoredCase>{}), std::invalid_argument);
}

TEST(Patient, AucInvariantUnderIncreasingTransform) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    auto n = random_cases(rng, 60, 20);
    n[0].malignant = true;
    n[2].malignant = false;
    n[3].malignant = false;
    auto m = n;
    for (auto& c : m) c.score = std::exp(c.score / 3.0) - 7.0;
    EXPECT_EQ(roc_auc(patient_aggregate(n)).auc, roc_auc(patient_aggregate(m)).auc);
  }
}

TEST(Logistic, InterceptOnlyBalanced) {
  std::vector<std::vector<double>> X(10, std::vector<double>{});
  std::vector<bool> y{true, false, true, false, true, false, true, false, true, false};
  const auto fit = logistic_fit(X, y);
  ASSERT_EQ(fit.terms.size(), 1u);
  EXPECT_NEAR(fit.terms[0].coefficient, 0.0, 1e-12);
  EXPECT_NEAR(fit.terms[0].odds_ratio, 1.0, 1e-12);
  EXPECT_FALSE(fit.separated);
}

TEST(Logistic, MatchesGridSearch) {
  Rng rng(30);
  std::vector<std::vector<double>> X;
  std::vector<bool> y;
  for (int i = 0; i < 30; ++i) {
    const double a = rng.normal(), b = rng.uniform(-1, 1);
    X.push_back({a, b});
    y.push_back(rng.uniform() < 1.0 / (1.0 + std::exp(-(0.3 + 0.9 * a - 1.1 * b))));
  }
  const auto fit = logistic_fit(X, y, {"a", "b"});
  ASSERT_TRUE(fit.converged);
  // Oracle: coarse-to-fine grid search of the log-likelihood.
  std::vector<double> center{0, 0, 0};
  double step = 0.5;
  for (int level = 0; level < 5; ++level, step /= 10) {
    std::vector<double> best = center;
    double best_ll = -INFINITY;
    for (int i = -20; i <= 20; ++i)
      for (int j = -20; j <= 20; ++j)
        for (int k = -20; k <= 20; ++k) {
          const std::vector<double> c{center[0] + i * step, center[1] + j * step, center[2] + k * step};
          const double ll = logistic_log_likelihood(X, y, c);
          if (ll > best_ll) {
            best_ll = ll;
            best = c;
          }
        }
    center = best;
  }
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(fit.terms[j].coefficient, center[j], 1e-3) << fit.terms[j].name;
  EXPECT_EQ(fit.terms[1].name, "a");
  EXPECT_NEAR(fit.terms[1].odds_ratio, std::exp(fit.terms[1].coefficient), 1e-12);
  EXPECT_LT(fit.terms[1].or_lo, fit.terms[1].odds_ratio);
  EXPECT_GT(fit.terms[1].or_hi, fit.terms[1].odds_ratio);
}

TEST(Logistic, SeparationFlagged) {
  std::vector<std::vector<double>> X;
  std::vector<bool> y;
  for (int i = 0; i < 20; ++i) {
    X.push_back({static_cast<double>(i)});
    y.push_back(i >= 10);
  }
  EXPECT_TRUE(logistic_fit(X, y).separated);
}

TEST(Logistic, SingularDesignRejected) {
  std::vector<std::vector<double>> X;
  std::vector<bool> y;
  for (int i = 0; i < 20; ++i) {
    X.push_back({static_cast<double>(i % 3), 2.0 * (i % 3)});
    y.push_back(i % 2);
  }
  EXPECT_THROW(logistic_fit(X, y), std::invalid_argument);
  EXPECT_THROW(logistic_fit({{1.0}, {2.0}}, {true, false}), std::invalid_argument);
}

TEST(Strata, DifficultyBoundaries) {
  EXPECT_EQ(difficulty_band(8, 12), "intermediate");
  EXPECT_EQ(difficulty_band(9, 12), "low");
  EXPECT_EQ(difficulty_band(4, 12), "intermediate");
  EXPECT_EQ(difficulty_band(3, 12), "high");
  EXPECT_THROW(difficulty_band(1, 0), std::invalid_argument);
}

TEST(Strata, DiameterBands) {
  EXPECT_EQ(*diameter_band(4), "4-10");
  EXPECT_EQ(*diameter_band(10), "10-20");
  EXPECT_EQ(*diameter_band(30), "20-30");
  EXPECT_FALSE(diameter_band(31).has_value());
}

TEST(Strata, SingleStratumEqualsUnstratified) {
  Rng data(3);
  std::vector<StratifiedCase> cs;
  for (auto& c : random_cases(data, 60, 10)) cs.push_back({c, {}});
  std::vector<ScoredCase> plain;
  for (const auto& c : cs) plain.push_back(c.scored);
  Rng a(1), b(1);
  const auto strat = stratified_report(cs, single_stratum(), Level::nodule, a, {200});
  const auto whole = metric_report(plain, Level::nodule, b, {200});
  ASSERT_EQ(strat.size(), 1u);
  EXPECT_EQ(nlohmann::json(*strat[0].report), nlohmann::json(whole));
}

TEST(Strata, EmptyStratumReported) {
  std::vector<StratifiedCase> cs;
  for (int i = 0; i < 10; ++i) cs.push_back({sc(i % 2, i, i % 2), {5.0 + i, "solid", "RUL", 10, 12}});
  Rng rng(1);
  const auto rep = stratified_report(cs, diameter_strata(), Level::nodule, rng, {100});
  ASSERT_EQ(rep.size(), 3u);
  EXPECT_EQ(rep[0].n, 5u);
  EXPECT_EQ(rep[1].n, 5u);
  EXPECT_EQ(rep[2].n, 0u);
  EXPECT_FALSE(rep[2].report.has_value());
}

TEST(Report, IntervalsContainPointEstimates) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    auto cs = random_cases(rng, 40, 6);
    cs[0].malignant = true;
    cs[1].malignant = false;
    const auto r = metric_report(cs, Level::nodule, rng, {300});
    for (const auto& name : kReportMetrics) {
      const auto& m = r.at(name);
      if (!m.value) continue;
      EXPECT_LE(m.lo, *m.value) << name;
      EXPECT_GE(m.hi, *m.value) << name;
    }
    EXPECT_EQ(*r.at("sensitivity").value + *r.at("fnr").value, 1.0);
    EXPECT_EQ(*r.at("specificity").value + *r.at("fpr").value, 1.0);
  }
}
