#include <doctest.h>

#include <cmath>
#include <random>

#include "paudit/voting.hpp"

using namespace paudit;

namespace {

// Plain counting majority with ties to the smallest code.
std::pair<int, bool> oracle_majority(const std::vector<int>& labels, int alphabet) {
  std::vector<int> counts(static_cast<std::size_t>(alphabet), 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  int best = 0;
  for (int c = 1; c < alphabet; ++c)
    if (counts[c] > counts[best]) best = c;
  int holders = 0;
  for (int c = 0; c < alphabet; ++c) holders += counts[c] == counts[best];
  return {best, holders > 1};
}

void exhaustive(int coders, int alphabet) {
  std::vector<int> labels(static_cast<std::size_t>(coders), 0);
  const auto w = equal_weights(static_cast<std::size_t>(coders));
  std::size_t checked = 0;
  while (true) {
    const auto [want, tie] = oracle_majority(labels, alphabet);
    const auto got = weighted_vote(labels, w);
    CHECK(got.label == want);
    CHECK(got.tie == tie);
    ++checked;
    int i = 0;
    while (i < coders && ++labels[static_cast<std::size_t>(i)] == alphabet) labels[static_cast<std::size_t>(i++)] = 0;
    if (i == coders) break;
  }
  CHECK(checked == static_cast<std::size_t>(std::pow(alphabet, coders)));
}

}  // namespace

TEST_CASE("equal weights reproduce plain majority exhaustively") {
  exhaustive(3, 2);
  exhaustive(3, 7);
  exhaustive(5, 2);
  exhaustive(5, 7);
}

TEST_CASE("worked voting examples") {
  const std::vector<int> ffm{0, 0, 1};
  const auto a = weighted_vote(ffm, equal_weights(3));
  CHECK(a.label == 0);
  CHECK(a.agreement() == doctest::Approx(2.0 / 3.0));
  CHECK_FALSE(a.tie);

  const std::vector<int> mff{1, 0, 0};
  const std::vector<double> w{0.6, 0.2, 0.2};
  const auto b = weighted_vote(mff, w);
  CHECK(b.label == 1);
  CHECK(b.agreement() == doctest::Approx(0.6));

  const std::vector<int> fm{0, 1};
  const auto c = weighted_vote(fm, equal_weights(2));
  CHECK(c.label == 0);
  CHECK(c.tie);
  CHECK(c.agreement() == doctest::Approx(0.5));
}

TEST_CASE("rescaling weights never changes the verdict") {
  std::mt19937 rng(11);
  std::uniform_int_distribution<int> lab(0, 6), n_dist(1, 9);
  std::uniform_real_distribution<double> wd(0.0, 1.0), scale(0.001, 1000.0);
  for (int t = 0; t < 2000; ++t) {
    const int n = n_dist(rng);
    std::vector<int> labels;
    std::vector<double> w;
    for (int i = 0; i < n; ++i) {
      labels.push_back(lab(rng));
      // quantised weights make exact ties common
      w.push_back(std::round(wd(rng) * 4) / 4 + 0.25);
    }
    const double k = scale(rng);
    std::vector<double> scaled;
    for (double x : w) scaled.push_back(x * k);
    const auto a = weighted_vote(labels, w);
    const auto b = weighted_vote(labels, scaled);
    CHECK(a.label == b.label);
    CHECK(a.tie == b.tie);
    CHECK(a.agreement() == doctest::Approx(b.agreement()));
  }
}

TEST_CASE("weight formulas") {
  const std::vector<double> years{0, 10};
  const auto e = experience_weights(years);
  CHECK(e[0] == doctest::Approx(1.0 / 12.0));
  CHECK(e[1] == doctest::Approx(11.0 / 12.0));

  const std::vector<double> f1{1.0, 0.5};
  const auto p = performance_weights_from_scores(f1, 0.01);
  CHECK(p[0] == doctest::Approx(2.0 / 3.0));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0));

  const std::vector<double> f1z{0.8, 0.0};
  const auto pz = performance_weights_from_scores(f1z, 0.01);
  CHECK(pz[0] == doctest::Approx(0.8 / 0.81));
  CHECK(pz[1] == doctest::Approx(0.01 / 0.81));

  CHECK(hybrid_weights(e, p, 1.0) == e);
  const auto h0 = hybrid_weights(e, p, 0.0);
  CHECK(h0[0] == doctest::Approx(p[0]));
  CHECK(h0[1] == doctest::Approx(p[1]));
  const auto h = hybrid_weights(e, p, 0.5);
  CHECK(h[0] + h[1] == doctest::Approx(1.0));
}

TEST_CASE("performance weights from calibration histories") {
  ConfusionMatrix perfect(gender_classes());
  perfect.add(0, 0);
  perfect.add(1, 1);
  ConfusionMatrix half(gender_classes());
  // macro F1 of truth [F,F,M,M] pred [F,M,M,M] = (2/3 + 0.8) / 2
  half.add(0, 0);
  half.add(0, 1);
  half.add(1, 1);
  half.add(1, 1);
  const std::vector<CoderHistory> hs{{"a", perfect}, {"b", half}};
  const auto w = performance_weights(hs, 0.01);
  const double mf = (2.0 / 3.0 + 0.8) / 2.0;
  CHECK(w[0] == doctest::Approx(1.0 / (1.0 + mf)));

  const std::vector<CoderHistory> empty{{"c", ConfusionMatrix(gender_classes())}};
  CHECK_THROWS_AS(performance_weights(empty, 0.01), MissingWeights);
}

TEST_CASE("bad inputs") {
  const std::vector<int> labels{0, 1};
  const std::vector<double> one{1.0};
  const std::vector<double> neg{1.0, -0.5};
  const std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS_AS(weighted_vote(labels, one), InvalidInput);
  CHECK_THROWS_AS(weighted_vote(labels, neg), InvalidInput);
  CHECK_THROWS_AS(weighted_vote(labels, zero), InvalidInput);
  WeightPolicy p;
  p.alpha = 1.5;
  CHECK_THROWS(p.validate());
  p.alpha = 0.5;
  p.epsilon = 0.0;
  CHECK_THROWS(p.validate());
  CHECK(weight_scheme_from_string("hybrid") == WeightScheme::hybrid);
  CHECK_THROWS(weight_scheme_from_string("plurality"));
}

TEST_CASE("abstentions drop out of the vote") {
  const std::vector<std::optional<int>> labels{std::nullopt, 1, 1, 0};
  const auto r = weighted_vote(labels, equal_weights(4));
  CHECK(r.label == 1);
  CHECK(r.agreement() == doctest::Approx(2.0 / 3.0));
  const std::vector<std::optional<int>> none{std::nullopt, std::nullopt};
  CHECK_THROWS_AS(weighted_vote(none, equal_weights(2)), InvalidInput);
}
