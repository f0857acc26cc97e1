#include "paudit/benchmark.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "paudit/csv.hpp"
#include "paudit/metrics.hpp"

namespace paudit {

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines_of(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

bool blank(std::string_view s) { return s.find_first_not_of(" \t") == std::string_view::npos; }

std::size_t label_rank(BenchmarkTask task, const std::string& label) {
  const auto& domain = label_domain(task);
  return static_cast<std::size_t>(std::find(domain.begin(), domain.end(), label) - domain.begin());
}

double parse_double(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(std::string("bad ") + what + " '" + s + "'");
  }
}

}  // namespace

std::string_view to_string(BenchmarkTask t) {
  switch (t) {
    case BenchmarkTask::gender: return "gender";
    case BenchmarkTask::emotion: return "emotion";
    case BenchmarkTask::dominant_emotion: return "dominant_emotion";
    case BenchmarkTask::single_face: return "single_face";
  }
  return "?";
}

std::optional<BenchmarkTask> benchmark_task_from_string(std::string_view s) {
  for (auto t : {BenchmarkTask::gender, BenchmarkTask::emotion, BenchmarkTask::dominant_emotion,
                 BenchmarkTask::single_face}) {
    if (to_string(t) == s) return t;
  }
  return std::nullopt;
}

const std::vector<std::string>& label_domain(BenchmarkTask t) {
  static const std::vector<std::string> gender{"female", "male", std::string(kCannotDetermine)};
  static const std::vector<std::string> emotion = emotion_classes();
  static const std::vector<std::string> single_face{"yes", "no"};
  switch (t) {
    case BenchmarkTask::gender: return gender;
    case BenchmarkTask::emotion:
    case BenchmarkTask::dominant_emotion: return emotion;
    case BenchmarkTask::single_face: return single_face;
  }
  return gender;
}

// --- Profiles -------------------------------------------------------------------

std::vector<AnnotatorProfile> load_profiles(const std::filesystem::path& path) {
  const auto lines = lines_of(read_text(path));
  if (lines.empty() || lines[0] != "annotator_id,gender,race,experience_years,trained") {
    throw FormatError(path.string() + ": expected header annotator_id,gender,race,experience_years,trained");
  }
  std::vector<AnnotatorProfile> out;
  std::set<std::string> ids;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    const auto f = csv::split_line(lines[i]);
    const auto where = path.string() + ":" + std::to_string(i + 1) + ": ";
    if (f.size() != 5) throw FormatError(where + "expected 5 fields");
    AnnotatorProfile p{f[0], f[1], f[2], parse_double(f[3], "experience_years"), false};
    if (p.annotator_id.empty()) throw FormatError(where + "empty annotator_id");
    if (p.experience_years < 0.0) throw FormatError(where + "negative experience_years");
    if (f[4] == "true" || f[4] == "1" || f[4] == "yes") {
      p.trained = true;
    } else if (!(f[4] == "false" || f[4] == "0" || f[4] == "no")) {
      throw FormatError(where + "bad trained flag '" + f[4] + "'");
    }
    if (!ids.insert(p.annotator_id).second) {
      throw FormatError(where + "duplicate annotator_id '" + p.annotator_id + "'");
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string profiles_to_csv(std::span<const AnnotatorProfile> profiles) {
  std::string out = "annotator_id,gender,race,experience_years,trained\n";
  for (const auto& p : profiles) {
    std::ostringstream years;
    years << p.experience_years;
    out += csv::join({p.annotator_id, p.gender, p.race, years.str(), p.trained ? "true" : "false"});
    out += '\n';
  }
  return out;
}

// --- Annotations -------------------------------------------------------------------

void to_json(json& j, const AnnotationRecord& r) {
  j = json{{"annotator_id", r.annotator_id},
           {"image_id", r.image_id},
           {"task", to_string(r.task)},
           {"label", r.label},
           {"timestamp", r.timestamp}};
}

void from_json(const json& j, AnnotationRecord& r) {
  r = validate_annotation(j.at("annotator_id").get<std::string>(), j.at("image_id").get<std::string>(),
                          j.at("task").get<std::string>(), j.at("label").get<std::string>(),
                          j.at("timestamp").get<std::string>());
}

AnnotationRecord validate_annotation(std::string_view annotator_id, std::string_view image_id,
                                     std::string_view task, std::string_view label,
                                     std::string_view timestamp) {
  if (blank(annotator_id)) throw RowError("annotator_id is empty");
  if (blank(image_id)) throw RowError("image_id is empty");
  if (blank(timestamp)) throw RowError("timestamp is empty");
  const auto t = benchmark_task_from_string(task);
  if (!t) throw RowError("unknown task '" + std::string(task) + "'");
  const auto& domain = label_domain(*t);
  if (std::find(domain.begin(), domain.end(), label) == domain.end()) {
    throw RowError("label '" + std::string(label) + "' is not valid for task " +
                   std::string(task));
  }
  return AnnotationRecord{std::string(annotator_id), std::string(image_id), *t,
                          std::string(label), std::string(timestamp)};
}

std::vector<AnnotationRecord> supersede(std::span<const AnnotationRecord> records) {
  using Key = std::tuple<std::string, std::string, BenchmarkTask>;
  std::map<Key, AnnotationRecord> latest;
  for (const auto& r : records) {
    Key key{r.annotator_id, r.image_id, r.task};
    auto it = latest.find(key);
    if (it == latest.end()) {
      latest.emplace(std::move(key), r);
    } else if (r.timestamp >= it->second.timestamp) {
      it->second = r;
    }
  }
  std::vector<AnnotationRecord> out;
  out.reserve(latest.size());
  for (auto& [k, r] : latest) out.push_back(std::move(r));
  std::sort(out.begin(), out.end(), [](const AnnotationRecord& a, const AnnotationRecord& b) {
    return std::tie(a.image_id, a.task, a.annotator_id) < std::tie(b.image_id, b.task, b.annotator_id);
  });
  return out;
}

ImportResult import_annotations_csv(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.empty() || lines[0] != kAnnotationHeader) {
    throw FormatError("missing header '" + std::string(kAnnotationHeader) + "'");
  }
  ImportResult result;
  std::vector<AnnotationRecord> raw;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    const int lineno = static_cast<int>(i + 1);
    try {
      const auto f = csv::split_line(lines[i]);
      if (f.size() != 5) throw RowError("expected 5 fields, got " + std::to_string(f.size()));
      raw.push_back(validate_annotation(f[0], f[1], f[2], f[3], f[4]));
    } catch (const Error& e) {
      result.errors.push_back({lineno, e.what()});
    }
  }
  result.records = supersede(raw);
  return result;
}

ImportResult import_annotations(const std::filesystem::path& path) {
  try {
    return import_annotations_csv(read_text(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string annotations_to_csv(std::span<const AnnotationRecord> records) {
  std::string out(kAnnotationHeader);
  out += '\n';
  for (const auto& r : records) {
    out += csv::join({r.annotator_id, r.image_id, std::string(to_string(r.task)), r.label, r.timestamp});
    out += '\n';
  }
  return out;
}

AnnotationStore::AnnotationStore(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
}

void AnnotationStore::append(const AnnotationRecord& record) {
  append(std::span<const AnnotationRecord>(&record, 1));
}

void AnnotationStore::append(std::span<const AnnotationRecord> records) {
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::app);
  if (!out) throw Error("cannot append to annotation store " + path_.string());
  for (const auto& r : records) out << json(r).dump() << '\n';
  out.flush();
  if (!out) throw Error("write to annotation store " + path_.string() + " failed");
}

std::vector<AnnotationRecord> AnnotationStore::read_all() const {
  std::vector<AnnotationRecord> out;
  std::ifstream in(path_);
  if (!in) return out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    try {
      out.push_back(json::parse(line).get<AnnotationRecord>());
    } catch (const std::exception& e) {
      throw FormatError(path_.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<AnnotationRecord> AnnotationStore::records() const {
  std::lock_guard lock(mutex_);
  return supersede(read_all());
}

void AnnotationStore::compact() {
  std::lock_guard lock(mutex_);
  const auto view = supersede(read_all());
  const auto tmp = path_.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    for (const auto& r : view) out << json(r).dump() << '\n';
    if (!out) throw Error("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path_);
}

// --- Single-face review --------------------------------------------------------------

std::vector<ImageItem> review_queue(std::span<const ImageItem> items) {
  std::vector<ImageItem> out;
  for (const auto& i : items) {
    if (i.face_count == 1 && i.single_face_validated == SingleFaceState::unreviewed) out.push_back(i);
  }
  return out;
}

FaceFunnel face_funnel(std::span<const ImageItem> items) {
  FaceFunnel f;
  f.sampled = items.size();
  for (const auto& i : items) {
    if (i.face_count == 1) ++f.auto_flagged;
    switch (i.single_face_validated) {
      case SingleFaceState::confirmed: ++f.confirmed; break;
      case SingleFaceState::rejected: ++f.rejected; break;
      case SingleFaceState::unreviewed: ++f.unreviewed; break;
    }
  }
  return f;
}

ReviewResult single_face_review(std::span<const ImageItem> items,
                                std::span<const FaceDecision> decisions) {
  ReviewResult result;
  result.items.assign(items.begin(), items.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < result.items.size(); ++i) index[result.items[i].id] = i;

  for (const auto& d : decisions) {
    const auto it = index.find(d.image_id);
    if (it == index.end()) throw UnknownImage("review decision for unknown image '" + d.image_id + "'");
    auto& item = result.items[it->second];
    if (!item.face_count) {
      throw InvalidInput("image '" + item.id + "' has no face_count evidence to review");
    }
    if (d.confirm) {
      item.single_face_validated = SingleFaceState::confirmed;
      item.human_override = *item.face_count != 1;
    } else {
      item.single_face_validated = SingleFaceState::rejected;
      item.human_override = false;
    }
  }
  result.funnel = face_funnel(result.items);
  return result;
}

std::vector<FaceDecision> load_face_decisions(const std::filesystem::path& path) {
  const auto lines = lines_of(read_text(path));
  if (lines.empty() || lines[0] != "image_id,decision") {
    throw FormatError(path.string() + ": expected header image_id,decision");
  }
  std::vector<FaceDecision> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    const auto f = csv::split_line(lines[i]);
    const auto where = path.string() + ":" + std::to_string(i + 1) + ": ";
    if (f.size() != 2) throw FormatError(where + "expected 2 fields");
    if (f[1] != "confirm" && f[1] != "reject") {
      throw FormatError(where + "decision must be confirm or reject");
    }
    out.push_back({f[0], f[1] == "confirm"});
  }
  return out;
}

// --- Jury -------------------------------------------------------------------------------

std::map<std::string, double> jury_weights(std::span<const std::string> annotator_ids,
                                           const WeightPolicy& policy, const JuryInputs& inputs) {
  policy.validate();
  std::vector<double> weights;
  auto experience = [&] {
    std::vector<double> years;
    for (const auto& id : annotator_ids) {
      const auto it = std::find_if(inputs.profiles.begin(), inputs.profiles.end(),
                                   [&](const AnnotatorProfile& p) { return p.annotator_id == id; });
      if (it == inputs.profiles.end()) throw MissingWeights("no profile for annotator '" + id + "'");
      years.push_back(it->experience_years);
    }
    return experience_weights(years);
  };
  auto performance = [&] {
    std::vector<CoderHistory> histories;
    for (const auto& id : annotator_ids) {
      const auto it = std::find_if(inputs.histories.begin(), inputs.histories.end(),
                                   [&](const CoderHistory& h) { return h.coder_id == id; });
      if (it == inputs.histories.end()) {
        throw MissingWeights("no performance history for annotator '" + id + "'");
      }
      histories.push_back(*it);
    }
    return performance_weights(histories, policy.epsilon);
  };

  switch (policy.kind) {
    case WeightScheme::majority: weights = equal_weights(annotator_ids.size()); break;
    case WeightScheme::experience_weighted: weights = experience(); break;
    case WeightScheme::performance_weighted: weights = performance(); break;
    case WeightScheme::hybrid: weights = hybrid_weights(experience(), performance(), policy.alpha); break;
  }
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < annotator_ids.size(); ++i) out[annotator_ids[i]] = weights[i];
  return out;
}

std::vector<JuryVerdict> aggregate_jury(std::span<const AnnotationRecord> records,
                                        const WeightPolicy& policy, const JuryInputs& inputs) {
  const auto current = supersede(records);
  if (current.empty()) return {};

  std::set<std::string> id_set;
  for (const auto& r : current) id_set.insert(r.annotator_id);
  const std::vector<std::string> ids(id_set.begin(), id_set.end());
  const auto weights = jury_weights(ids, policy, inputs);

  std::vector<JuryVerdict> verdicts;
  // `current` is sorted by (image, task, annotator): cells are contiguous.
  for (std::size_t begin = 0; begin < current.size();) {
    std::size_t end = begin;
    while (end < current.size() && current[end].image_id == current[begin].image_id &&
           current[end].task == current[begin].task) {
      ++end;
    }
    const auto task = current[begin].task;
    std::vector<int> labels;
    std::vector<double> w;
    JuryVerdict v;
    v.image_id = current[begin].image_id;
    v.task = task;
    v.method = std::string(to_string(policy.kind));
    for (std::size_t i = begin; i < end; ++i) {
      labels.push_back(static_cast<int>(label_rank(task, current[i].label)));
      w.push_back(weights.at(current[i].annotator_id));
      v.contributors.push_back(current[i].annotator_id);
    }
    const auto vote = weighted_vote(labels, w);
    v.label = label_domain(task)[static_cast<std::size_t>(vote.label)];
    v.agreement = vote.agreement();
    v.tie = vote.tie;
    verdicts.push_back(std::move(v));
    begin = end;
  }
  return verdicts;
}

std::string verdicts_to_csv(std::span<const JuryVerdict> verdicts) {
  std::string out = "image_id,task,label,agreement,tie_flag,method\n";
  for (const auto& v : verdicts) {
    out += csv::join({v.image_id, std::string(to_string(v.task)), v.label,
                      format_fixed(v.agreement, 6), v.tie ? "true" : "false", v.method});
    out += '\n';
  }
  return out;
}

std::vector<JuryVerdict> load_verdicts(const std::filesystem::path& path) {
  const auto lines = lines_of(read_text(path));
  if (lines.empty() || lines[0] != "image_id,task,label,agreement,tie_flag,method") {
    throw FormatError(path.string() + ": expected header image_id,task,label,agreement,tie_flag,method");
  }
  std::vector<JuryVerdict> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    const auto f = csv::split_line(lines[i]);
    const auto where = path.string() + ":" + std::to_string(i + 1) + ": ";
    if (f.size() != 6) throw FormatError(where + "expected 6 fields");
    const auto task = benchmark_task_from_string(f[1]);
    if (!task) throw FormatError(where + "unknown task '" + f[1] + "'");
    const auto& domain = label_domain(*task);
    if (std::find(domain.begin(), domain.end(), f[2]) == domain.end()) {
      throw FormatError(where + "label '" + f[2] + "' invalid for task " + f[1]);
    }
    JuryVerdict v;
    v.image_id = f[0];
    v.task = *task;
    v.label = f[2];
    v.agreement = parse_double(f[3], "agreement");
    v.tie = f[4] == "true";
    v.method = f[5];
    out.push_back(std::move(v));
  }
  return out;
}

std::map<std::string, std::string> verdict_map(std::span<const JuryVerdict> verdicts,
                                               BenchmarkTask task) {
  std::map<std::string, std::string> out;
  for (const auto& v : verdicts)
    if (v.task == task) out[v.image_id] = v.label;
  return out;
}

}  // namespace paudit
