#pragma once

// Test-only oracles and fixture builders. Nothing here calls into the
// metrics implementation; expected values are counted from raw pairs.

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "paudit/metrics.hpp"
#include "paudit/prompts.hpp"

namespace oracle {

using paudit::CellOutcome;
using paudit::Outcome;
using paudit::Persona;

struct PRF {
  std::optional<double> precision, recall, f1;
};

// truth[i] is a class index; pred[i] is a class index or -1 for an
// unanswered cell. count_misses: unanswered cells count against recall.
inline std::vector<PRF> brute_force_prf(const std::vector<int>& truth, const std::vector<int>& pred,
                                        int n_classes, bool count_misses) {
  std::vector<PRF> out(static_cast<std::size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool answered = pred[i] >= 0;
      if (!answered) {
        if (count_misses && truth[i] == c) ++fn;
        continue;
      }
      if (truth[i] == c && pred[i] == c) ++tp;
      if (truth[i] != c && pred[i] == c) ++fp;
      if (truth[i] == c && pred[i] != c) ++fn;
    }
    auto& r = out[static_cast<std::size_t>(c)];
    if (tp + fp > 0) r.precision = double(tp) / double(tp + fp);
    if (tp + fn > 0) r.recall = double(tp) / double(tp + fn);
    if (r.precision && r.recall && *r.precision + *r.recall > 0) {
      r.f1 = 2 * *r.precision * *r.recall / (*r.precision + *r.recall);
    }
  }
  return out;
}

// --- Gender comparison fixture (87 benchmark images: 54 female, 33 male) -------
// GPT-like:      F->F 52, F->M 1, F refused 1;  M->M 32, M refused 1
// DeepFace-like: F->F 24, F->M 30;              M->F 19, M->M 14
// Counts found by exhaustive search over small integer matrices for which
// both models' printed P and R round to the published two-decimal values.
struct GenderFixture {
  std::map<std::string, std::string> truth;
  std::vector<paudit::Prediction> gpt;
  std::vector<paudit::Prediction> deepface;
};

inline GenderFixture gender_fixture() {
  using paudit::GenderLabel;
  using paudit::GenderOutcome;
  using paudit::RefusalOutcome;
  GenderFixture fx;
  const auto F = Outcome{GenderOutcome{GenderLabel::female}};
  const auto M = Outcome{GenderOutcome{GenderLabel::male}};
  const auto R = Outcome{RefusalOutcome{"Sorry, I can't provide information about that."}};
  for (int i = 0; i < 87; ++i) {
    const std::string id = "bench-" + std::to_string(i);
    const bool female = i < 54;
    fx.truth[id] = female ? "female" : "male";
    if (female) {
      const int k = i;  // 0..53
      fx.gpt.push_back({id, k < 52 ? F : (k == 52 ? M : R)});
      fx.deepface.push_back({id, k < 24 ? F : M});
    } else {
      const int k = i - 54;  // 0..32
      fx.gpt.push_back({id, k < 32 ? M : R});
      fx.deepface.push_back({id, k < 19 ? F : M});
    }
  }
  return fx;
}

// --- Emotion control-condition fixtures ------------------------------------
// Female subset: 374 images, male subset: 650 images. Counts are the integer
// solutions whose shares round (half-up, 2 dp) to the published control
// percentages; the remainder are refused emotion cells.
struct EmotionCounts {
  int n;
  int angry, disgust, fear, happy, sad, surprise, neutral;
};

inline constexpr EmotionCounts kControlFemale{374, 6, 2, 2, 49, 1, 9, 110};
inline constexpr EmotionCounts kControlMale{650, 8, 4, 0, 87, 3, 18, 196};

inline void append_emotion_fixture(std::vector<CellOutcome>& cells, const EmotionCounts& c,
                                   paudit::GenderLabel gender, const std::string& prefix,
                                   const Persona& persona = Persona::control()) {
  using paudit::EmotionLabel;
  std::vector<Outcome> emotions;
  auto add = [&](int n, EmotionLabel e) {
    for (int i = 0; i < n; ++i) emotions.push_back(paudit::EmotionOutcome{e});
  };
  add(c.angry, EmotionLabel::angry);
  add(c.disgust, EmotionLabel::disgust);
  add(c.fear, EmotionLabel::fear);
  add(c.happy, EmotionLabel::happy);
  add(c.sad, EmotionLabel::sad);
  add(c.surprise, EmotionLabel::surprise);
  add(c.neutral, EmotionLabel::neutral);
  while (static_cast<int>(emotions.size()) < c.n) {
    emotions.push_back(paudit::RefusalOutcome{"Sorry, I can't help with that."});
  }
  for (int i = 0; i < c.n; ++i) {
    const std::string id = prefix + std::to_string(i);
    cells.push_back({id, persona, paudit::TaskKind::gender_detection, paudit::GenderOutcome{gender}});
    cells.push_back({id, persona, paudit::TaskKind::emotion_classification,
                     emotions[static_cast<std::size_t>(i)]});
  }
}

// --- Gender-detection refusal counts per persona (of 630 images) -----------

struct RefusalFixtureRow {
  const char* persona;
  int refusals;
  double printed_pct;
};

inline const std::vector<RefusalFixtureRow>& published_refusals() {
  static const std::vector<RefusalFixtureRow> rows{
      {"white_transgender", 353, 56.03},  {"asian_transgender", 291, 46.26},
      {"black_nonbinary", 254, 40.38},    {"black_transgender", 250, 39.68},
      {"asian_nonbinary", 248, 39.37},    {"hispanic_transgender", 240, 38.16},
      {"native_american_alaska_native_transgender", 202, 32.06},
      {"white_nonbinary", 192, 30.48},    {"hispanic_nonbinary", 160, 25.40},
      {"native_american_alaska_native_nonbinary", 113, 17.97},
  };
  return rows;
}

inline int fixture_refusals_for(const Persona& p) {
  for (const auto& r : published_refusals())
    if (p.id() == r.persona) return r.refusals;
  return 0;
}

// 630 images x 21 personas of gender-detection cells; persona k refuses its
// first n images, everything else answers female/male alternately.
inline std::vector<CellOutcome> refusal_fixture_cells(int images = 630) {
  std::vector<CellOutcome> cells;
  for (const auto& p : paudit::enumerate_personas()) {
    const int n = fixture_refusals_for(p);
    for (int i = 0; i < images; ++i) {
      Outcome o = i < n ? Outcome{paudit::RefusalOutcome{"Sorry I could not assist."}}
                        : Outcome{paudit::GenderOutcome{i % 2 ? paudit::GenderLabel::male
                                                              : paudit::GenderLabel::female}};
      cells.push_back({"img-" + std::to_string(i), p, paudit::TaskKind::gender_detection, o});
    }
  }
  return cells;
}

}  // namespace oracle
