#include <doctest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "paudit/metrics.hpp"

using namespace paudit;

namespace {

Outcome G(GenderLabel g) { return GenderOutcome{g}; }
const Outcome kF = G(GenderLabel::female);
const Outcome kM = G(GenderLabel::male);
const Outcome kRefused = RefusalOutcome{"Sorry I could not assist."};

ConfusionMatrix gender_matrix(const std::vector<std::string>& truth, const std::vector<Outcome>& preds,
                              ExclusionPolicy policy = ExclusionPolicy::exclude) {
  std::map<std::string, std::string> t;
  std::vector<Prediction> p;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto id = "i" + std::to_string(i);
    t[id] = truth[i];
    p.push_back({id, preds[i]});
  }
  return build_confusion(p, t, gender_classes(), policy);
}

}  // namespace

TEST_CASE("round_half_up and rendering") {
  CHECK(format_fixed(56.031746, 2) == "56.03");
  CHECK(format_fixed(0.125, 2) == "0.13");
  CHECK(format_fixed(2.675, 2) == "2.68");
  CHECK(format_fixed(17.936507, 2) == "17.94");
  CHECK(render_metric(std::nullopt) == "/");
  CHECK(render_metric(2.0 / 3.0) == "0.67");
}

TEST_CASE("perfect predictions give a pure diagonal") {
  std::vector<std::string> truth;
  std::vector<Outcome> preds;
  for (int i = 0; i < 10; ++i) {
    truth.push_back(i % 2 ? "male" : "female");
    preds.push_back(i % 2 ? kM : kF);
  }
  const auto m = gender_matrix(truth, preds);
  CHECK(m.at(0, 0) == 5);
  CHECK(m.at(1, 1) == 5);
  CHECK(m.at(0, 1) == 0);
  CHECK(m.at(1, 0) == 0);
  CHECK(m.excluded.total() == 0);
  for (const auto& cm : class_metrics(m)) {
    CHECK(*cm.precision == 1.0);
    CHECK(*cm.recall == 1.0);
    CHECK(*cm.f1 == 1.0);
  }
}

TEST_CASE("hand-computed two-class example") {
  // truth [F,F,M,M], pred [F,M,M,M]
  const auto m = gender_matrix({"female", "female", "male", "male"}, {kF, kM, kM, kM});
  const auto cms = class_metrics(m);
  CHECK(*cms[0].precision == doctest::Approx(1.0));
  CHECK(*cms[0].recall == doctest::Approx(0.5));
  CHECK(*cms[0].f1 == doctest::Approx(2.0 / 3.0));
  CHECK(*cms[1].precision == doctest::Approx(2.0 / 3.0));
  CHECK(*cms[1].recall == doctest::Approx(1.0));
  CHECK(*cms[1].f1 == doctest::Approx(0.8));
}

TEST_CASE("refusals leave the matrix but are co-reported") {
  const auto m = gender_matrix({"female", "male"}, {kRefused, kM});
  CHECK(m.total_counted() == 1);
  CHECK(m.at(1, 1) == 1);
  CHECK(m.excluded.refused == 1);
  CHECK(m.total_counted() + m.excluded.total() == 2);
  const auto cms = class_metrics(m);
  CHECK_FALSE(cms[0].precision);  // no female predictions
  CHECK_FALSE(cms[0].recall);     // refused female is not in the matrix
  CHECK(*cms[1].recall == 1.0);
}

TEST_CASE("count_as_miss charges unanswered cells to recall only") {
  const auto m = gender_matrix({"female", "male", "male"}, {kRefused, kM, MalformedOutcome{"x"}},
                               ExclusionPolicy::count_as_miss);
  const auto cms = class_metrics(m);
  CHECK(m.excluded.refused == 1);
  CHECK(m.excluded.malformed == 1);
  CHECK(*cms[0].recall == 0.0);
  CHECK_FALSE(cms[0].precision);
  CHECK(*cms[1].precision == 1.0);
  CHECK(*cms[1].recall == 0.5);
}

TEST_CASE("benchmark cannot_determine and missing truth") {
  std::map<std::string, std::string> truth{{"a", "female"}, {"b", "cannot_determine"}};
  std::vector<Prediction> preds{{"a", kF}, {"b", kM}, {"c", kM}};
  const auto m = build_confusion(preds, truth, gender_classes());
  CHECK(m.excluded.benchmark_undetermined == 1);
  CHECK(m.missing_truth == std::vector<std::string>{"c"});
  CHECK(m.total_counted() + m.excluded.total() == 2);
  CHECK(m.evaluated_ids == std::vector<std::string>{"a", "b"});
}

TEST_CASE("zero-score class renders slash for undefined cells") {
  // truth has an angry face the model calls happy; the model never says angry.
  std::map<std::string, std::string> truth{{"a", "angry"}, {"b", "happy"}};
  std::vector<Prediction> preds{{"a", EmotionOutcome{EmotionLabel::happy}},
                                {"b", EmotionOutcome{EmotionLabel::happy}}};
  const auto cms = class_metrics(build_confusion(preds, truth, emotion_classes()));
  const auto& angry = cms[0];
  CHECK_FALSE(angry.precision);
  CHECK(*angry.recall == 0.0);
  CHECK_FALSE(angry.f1);
  CHECK(render_metric(angry.precision) == "/");
  CHECK(render_metric(angry.recall) == "0.00");
  CHECK(render_metric(angry.f1) == "/");
}

TEST_CASE("P/R/F1 agree with a brute-force oracle on random 6-class matrices") {
  std::mt19937 rng(20241121);
  for (int trial = 0; trial < 200; ++trial) {
    const int n_classes = 6;
    std::uniform_int_distribution<int> n_dist(1, 50), cls(0, n_classes - 1), miss(0, 9);
    const int n = n_dist(rng);
    std::vector<int> truth, pred;
    std::map<std::string, std::string> t;
    std::vector<Prediction> preds;
    std::vector<std::string> classes;
    for (int c = 0; c < n_classes; ++c) classes.push_back("c" + std::to_string(c));
    // Outcomes here need a label name; map class k onto emotion codes 1..6.
    classes = {"angry", "disgust", "fear", "happy", "sad", "surprise"};
    for (int i = 0; i < n; ++i) {
      truth.push_back(cls(rng));
      pred.push_back(miss(rng) == 0 ? -1 : cls(rng));
      const auto id = "x" + std::to_string(i);
      t[id] = classes[static_cast<std::size_t>(truth.back())];
      preds.push_back({id, pred.back() < 0 ? kRefused
                                           : Outcome{EmotionOutcome{*emotion_from_code(pred.back() + 1)}}});
    }
    for (bool count_misses : {false, true}) {
      const auto m = build_confusion(preds, t, classes,
                                     count_misses ? ExclusionPolicy::count_as_miss : ExclusionPolicy::exclude);
      const auto got = class_metrics(m);
      const auto want = oracle::brute_force_prf(truth, pred, n_classes, count_misses);
      std::uint64_t tp_sum = 0, diag = 0;
      for (int c = 0; c < n_classes; ++c) {
        const auto& g = got[static_cast<std::size_t>(c)];
        const auto& w = want[static_cast<std::size_t>(c)];
        REQUIRE(g.precision.has_value() == w.precision.has_value());
        REQUIRE(g.recall.has_value() == w.recall.has_value());
        REQUIRE(g.f1.has_value() == w.f1.has_value());
        if (w.precision) CHECK(std::fabs(*g.precision - *w.precision) <= 1e-12);
        if (w.recall) CHECK(std::fabs(*g.recall - *w.recall) <= 1e-12);
        if (w.f1) CHECK(std::fabs(*g.f1 - *w.f1) <= 1e-12);
        tp_sum += g.tp;
        diag += m.at(static_cast<std::size_t>(c), static_cast<std::size_t>(c));
      }
      CHECK(tp_sum == diag);
      CHECK(m.total_counted() + m.excluded.total() == static_cast<std::uint64_t>(n));
    }
  }
}

TEST_CASE("refusal rates under a fixed denominator") {
  const auto cells = oracle::refusal_fixture_cells();
  const std::vector<TaskKind> tasks{TaskKind::gender_detection};
  const auto report = refusal_rates(cells, enumerate_personas(), tasks, Denominator::parse("630"));
  for (const auto& row : report.rows) {
    CHECK(row.denominator == 630);
    CHECK(row.refusals == static_cast<std::size_t>(oracle::fixture_refusals_for(row.persona)));
    if (row.persona.id() == "white_transgender") CHECK(format_fixed(100 * row.refusal_rate, 2) == "56.03");
    if (row.persona.id() == "native_american_alaska_native_nonbinary")
      CHECK(format_fixed(100 * row.refusal_rate, 2) == "17.94");
    if (row.persona.is_control()) CHECK(format_fixed(100 * row.refusal_rate, 2) == "0.00");
  }
  CHECK_FALSE(report.notes.empty());
}

TEST_CASE("refusal rate is invariant under response order") {
  auto cells = oracle::refusal_fixture_cells(60);
  const std::vector<TaskKind> tasks{TaskKind::gender_detection};
  const auto before = refusal_rates(cells, enumerate_personas(), tasks);
  std::mt19937 rng(7);
  std::shuffle(cells.begin(), cells.end(), rng);
  const auto after = refusal_rates(cells, enumerate_personas(), tasks);
  for (std::size_t i = 0; i < before.rows.size(); ++i) {
    CHECK(before.rows[i].refusal_rate == after.rows[i].refusal_rate);
  }
}

TEST_CASE("transport errors are not refusals; excluding_transport denominator") {
  std::vector<CellOutcome> cells{
      {"a", Persona::control(), TaskKind::gender_detection, kRefused},
      {"b", Persona::control(), TaskKind::gender_detection, TransportErrorOutcome{"503"}},
      {"c", Persona::control(), TaskKind::gender_detection, kF},
      {"d", Persona::control(), TaskKind::gender_detection, MalformedOutcome{"?"}},
  };
  const std::vector<Persona> personas{Persona::control()};
  const std::vector<TaskKind> tasks{TaskKind::gender_detection};
  const auto all = refusal_rates(cells, personas, tasks);
  CHECK(all.rows[0].refusals == 1);
  CHECK(all.rows[0].transport_errors == 1);
  CHECK(all.rows[0].malformed == 1);
  CHECK(all.rows[0].refusal_rate == doctest::Approx(0.25));
  const auto ex = refusal_rates(cells, personas, tasks, Denominator::parse("excluding_transport"));
  CHECK(ex.rows[0].refusal_rate == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(Denominator::parse("zero"), InvalidInput);
  CHECK_THROWS_AS(Denominator::parse("0"), InvalidInput);
}

TEST_CASE("emotion distribution: control female fixture under all_items") {
  std::vector<CellOutcome> cells;
  oracle::append_emotion_fixture(cells, oracle::kControlFemale, GenderLabel::female, "f");
  const auto d = emotion_distribution(cells, GenderSource::model_classified, GenderLabel::female,
                                      Persona::control(), SharePolicy::all_items);
  CHECK(d.subset_size == 374);
  CHECK(format_fixed(d.share_pct[code(EmotionLabel::happy) - 1], 2) == "13.10");
  CHECK(format_fixed(d.share_pct[code(EmotionLabel::neutral) - 1], 2) == "29.41");
  CHECK(format_fixed(d.share_pct[code(EmotionLabel::sad) - 1], 2) == "0.27");
  double sum = d.residual_pct;
  for (double s : d.share_pct) sum += s;
  CHECK(std::fabs(sum - 100.0) <= 0.01);
}

TEST_CASE("emotion distribution: answered_only and empty subsets") {
  std::vector<CellOutcome> cells;
  for (int i = 0; i < 100; ++i) {
    const auto id = "p" + std::to_string(i);
    cells.push_back({id, Persona::control(), TaskKind::gender_detection, kF});
    cells.push_back({id, Persona::control(), TaskKind::emotion_classification,
                     EmotionOutcome{i < 13 ? EmotionLabel::happy : EmotionLabel::neutral}});
  }
  const auto d = emotion_distribution(cells, GenderSource::model_classified, GenderLabel::female,
                                      Persona::control(), SharePolicy::answered_only);
  CHECK(d.share_pct[code(EmotionLabel::happy) - 1] == doctest::Approx(13.0));
  CHECK(d.residual_pct == 0.0);

  std::vector<CellOutcome> refused;
  for (int i = 0; i < 5; ++i) {
    refused.push_back({"r" + std::to_string(i), Persona::control(), TaskKind::gender_detection, kRefused});
  }
  CHECK_THROWS_AS(emotion_distribution(refused, GenderSource::model_classified, GenderLabel::female,
                                       Persona::control(), SharePolicy::all_items),
                  EmptySubset);
}

TEST_CASE("emotion distribution with jury-benchmark gender source") {
  std::vector<CellOutcome> cells;
  // Model calls everything male, jury says the first half is female.
  std::map<std::string, std::string> jury;
  for (int i = 0; i < 10; ++i) {
    const auto id = "j" + std::to_string(i);
    jury[id] = i < 5 ? "female" : "male";
    cells.push_back({id, Persona::control(), TaskKind::gender_detection, kM});
    cells.push_back({id, Persona::control(), TaskKind::emotion_classification,
                     EmotionOutcome{EmotionLabel::happy}});
  }
  const auto d = emotion_distribution(cells, GenderSource::jury_benchmark, GenderLabel::female,
                                      Persona::control(), SharePolicy::all_items, &jury);
  CHECK(d.subset_size == 5);
  CHECK(d.share_pct[code(EmotionLabel::happy) - 1] == doctest::Approx(100.0));
  CHECK_THROWS_AS(emotion_distribution(cells, GenderSource::model_classified, GenderLabel::female,
                                       Persona::control(), SharePolicy::all_items),
                  EmptySubset);
  CHECK_THROWS_AS(emotion_distribution(cells, GenderSource::jury_benchmark, GenderLabel::female,
                                       Persona::control(), SharePolicy::all_items),
                  InvalidInput);
}

TEST_CASE("compare_models: identical reports have no winners") {
  const auto fx = oracle::gender_fixture();
  const auto m = build_confusion(fx.gpt, fx.truth, gender_classes(), ExclusionPolicy::count_as_miss);
  const std::vector<ModelReport> reports{make_model_report("a", m), make_model_report("b", m)};
  const auto table = compare_models(reports);
  CHECK(table.rows.size() == 6);
  for (const auto& row : table.rows) {
    CHECK(row.values[0] == row.values[1]);
    CHECK_FALSE(row.winner);
  }
}

TEST_CASE("compare_models flags the best model on each row, independent of column order") {
  const auto fx = oracle::gender_fixture();
  const auto gpt = make_model_report(
      "gpt", build_confusion(fx.gpt, fx.truth, gender_classes(), ExclusionPolicy::count_as_miss));
  const auto df = make_model_report(
      "deepface", build_confusion(fx.deepface, fx.truth, gender_classes(), ExclusionPolicy::count_as_miss));
  const std::vector<ModelReport> ab{gpt, df}, ba{df, gpt};
  const auto t1 = compare_models(ab);
  const auto t2 = compare_models(ba);
  REQUIRE(t1.rows.size() == t2.rows.size());
  for (std::size_t i = 0; i < t1.rows.size(); ++i) {
    CHECK(t1.rows[i].winner == std::optional<std::string>("gpt"));
    CHECK(t1.rows[i].winner == t2.rows[i].winner);
  }
}

TEST_CASE("compare_models rejects misaligned verdict sets") {
  std::map<std::string, std::string> t1{{"a", "female"}}, t2{{"b", "female"}};
  std::vector<Prediction> p1{{"a", kF}}, p2{{"b", kF}};
  const std::vector<ModelReport> reports{
      make_model_report("x", build_confusion(p1, t1, gender_classes())),
      make_model_report("y", build_confusion(p2, t2, gender_classes()))};
  CHECK_THROWS_AS(compare_models(reports), AlignmentError);
}

TEST_CASE("reference notes flag F1 values inconsistent with P and R") {
  ComparisonTable table;
  const std::vector<ReferenceRow> refs{{"gpt", "female", 1.00, 0.96, 1.00},
                                       {"deepface", "female", 0.56, 0.44, 0.49}};
  add_reference_notes(table, refs);
  REQUIRE(table.notes.size() == 1);
  CHECK(table.notes[0].find("gpt / female") != std::string::npos);
  CHECK(table.notes[0].find("harmonic mean 0.98") != std::string::npos);
}
