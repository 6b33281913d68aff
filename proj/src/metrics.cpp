#include "hccnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace hccnet {

using nlohmann::json;

std::vector<double> PredictionSet::scores() const {
  std::vector<double> s;
  for (const auto& p : items) s.push_back(p.score);
  return s;
}

std::vector<int> PredictionSet::labels() const {
  std::vector<int> l;
  for (const auto& p : items) l.push_back(p.label);
  return l;
}

void PredictionSet::validate() const {
  std::set<std::string> ids;
  for (const auto& p : items) {
    if (!(p.score >= 0.0 && p.score <= 1.0)) throw std::invalid_argument("score outside [0,1] for " + p.patient_id);
    if (p.label != 0 && p.label != 1) throw std::invalid_argument("label must be 0 or 1");
    if (!ids.insert(p.patient_id).second) throw std::invalid_argument("duplicate patient id " + p.patient_id);
  }
}

namespace {

void check_inputs(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.empty()) throw std::invalid_argument("empty prediction set");
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
}

std::size_t count_positive(const std::vector<int>& labels) {
  return std::size_t(std::count(labels.begin(), labels.end(), 1));
}

}  // namespace

ThresholdMetrics threshold_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                                   double threshold) {
  check_inputs(scores, labels);
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i]) ++tp;
    else if (pred) ++fp;
    else if (labels[i]) ++fn;
    else ++tn;
  }
  ThresholdMetrics m;
  m.accuracy = double(tp + tn) / double(scores.size());
  m.precision_undefined = tp + fp == 0;
  m.recall_undefined = tp + fn == 0;
  m.precision = m.precision_undefined ? 0.0 : double(tp) / double(tp + fp);
  m.recall = m.recall_undefined ? 0.0 : double(tp) / double(tp + fn);
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels);
  const std::size_t n = scores.size(), pos = count_positive(labels), neg = n - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("AUROC needs both classes");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Counts are kept in half-units so tied pairs stay exact integers.
  std::uint64_t twice_correct = 0;
  std::size_t negatives_below = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i, tied_pos = 0, tied_neg = 0;
    while (j < n && scores[idx[j]] == scores[idx[i]]) {
      labels[idx[j]] ? ++tied_pos : ++tied_neg;
      ++j;
    }
    twice_correct += 2 * std::uint64_t(tied_pos) * negatives_below + std::uint64_t(tied_pos) * tied_neg;
    negatives_below += tied_neg;
    i = j;
  }
  return double(twice_correct) / (2.0 * double(pos) * double(neg));
}

double auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels);
  const std::size_t n = scores.size(), pos = count_positive(labels);
  if (pos == 0) throw std::invalid_argument("AUPRC needs at least one positive");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double area = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) {
      tp += std::size_t(labels[idx[j]]);
      ++j;
    }
    seen = j;
    const double recall = double(tp) / double(pos);
    const double precision = double(tp) / double(seen);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return area;
}

BinnedCalibration reliability(const std::vector<double>& scores, const std::vector<int>& labels, std::size_t n_bins) {
  check_inputs(scores, labels);
  if (n_bins == 0) throw std::invalid_argument("need at least one bin");
  BinnedCalibration out;
  out.bins.resize(n_bins);
  std::vector<double> conf_sum(n_bins, 0.0), pos_sum(n_bins, 0.0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto b = std::size_t(std::floor(scores[i] * double(n_bins)));
    b = std::min(b, n_bins - 1);
    ++out.bins[b].count;
    conf_sum[b] += scores[i];
    pos_sum[b] += labels[i];
  }
  const double total = double(scores.size());
  for (std::size_t b = 0; b < n_bins; ++b) {
    auto& bin = out.bins[b];
    if (bin.count == 0) continue;
    bin.confidence = conf_sum[b] / double(bin.count);
    bin.accuracy = pos_sum[b] / double(bin.count);
    const double gap = std::abs(bin.accuracy - bin.confidence);
    out.ece += double(bin.count) / total * gap;
    out.mce = std::max(out.mce, gap);
  }
  return out;
}

double brier(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels);
  double s = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) s += (scores[i] - labels[i]) * (scores[i] - labels[i]);
  return s / double(scores.size());
}

GainCurve cumulative_gain(std::vector<double> values, GainNormalization mode) {
  if (values.empty()) throw std::invalid_argument("need at least one run");
  for (double v : values)
    if (!(v >= 0.0)) throw std::invalid_argument("gain curves need non-negative metric values");
  std::sort(values.begin(), values.end());
  GainCurve g;
  const std::size_t n = values.size();
  const double total = std::accumulate(values.begin(), values.end(), 0.0);
  g.values = values;
  g.degenerate = total == 0.0;
  // Equal runs sit on the diagonal exactly; summation would leave rounding residue.
  const bool flat = values.front() == values.back();
  double running = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    running += values[i];
    const double expected = double(i + 1) / double(n);
    double gain = expected;
    if (!g.degenerate && !flat) gain = mode == GainNormalization::Total ? running / total : running / double(i + 1);
    g.gains.push_back(gain);
    g.expected.push_back(expected);
    g.mae += std::abs(gain - expected);
  }
  g.mae /= double(n);
  return g;
}

RunMetrics score_run(const PredictionSet& preds, std::size_t n_bins) {
  preds.validate();
  const auto s = preds.scores();
  const auto l = preds.labels();
  RunMetrics r;
  r.seed = preds.seed;
  const auto t = threshold_metrics(s, l);
  r.values["accuracy"] = t.accuracy;
  r.values["precision"] = t.precision;
  r.values["recall"] = t.recall;
  r.values["f1"] = t.f1;
  if (t.precision_undefined) r.flags.push_back("precision_undefined");
  if (t.recall_undefined) r.flags.push_back("recall_undefined");
  const std::size_t pos = count_positive(l);
  if (pos > 0 && pos < l.size()) {
    r.values["auroc"] = auroc(s, l);
  } else {
    r.values["auroc"] = 0.0;
    r.flags.push_back("auroc_undefined");
  }
  if (pos > 0) {
    r.values["auprc"] = auprc(s, l);
  } else {
    r.values["auprc"] = 0.0;
    r.flags.push_back("auprc_undefined");
  }
  const auto cal = reliability(s, l, n_bins);
  r.values["ece"] = cal.ece;
  r.values["mce"] = cal.mce;
  r.values["brier"] = brier(s, l);
  return r;
}

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("cannot summarize zero runs");
  Summary s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / double(values.size() - 1));
  }
  return s;
}

std::map<std::string, Summary> aggregate_runs(const std::vector<RunMetrics>& runs) {
  std::map<std::string, Summary> out;
  for (const auto& name : metric_names()) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.values.at(name));
    out[name] = summarize(v);
  }
  return out;
}

MetricsReport build_report(const std::string& label, const std::vector<PredictionSet>& runs, std::size_t n_bins,
                           GainNormalization gain_mode) {
  if (runs.empty()) throw std::invalid_argument("report needs at least one run");
  MetricsReport rep;
  rep.label = label;
  rep.predictions = runs;
  std::vector<double> pooled_scores;
  std::vector<int> pooled_labels;
  for (const auto& run : runs) {
    rep.runs.push_back(score_run(run, n_bins));
    for (const auto& p : run.items) {
      pooled_scores.push_back(p.score);
      pooled_labels.push_back(p.label);
    }
  }
  rep.aggregate = aggregate_runs(rep.runs);
  for (const auto& name : metric_names()) {
    std::vector<double> v;
    for (const auto& r : rep.runs) v.push_back(r.values.at(name));
    rep.gains[name] = cumulative_gain(v, gain_mode);
  }
  rep.calibration = reliability(pooled_scores, pooled_labels, n_bins);
  return rep;
}

// ---- JSON -------------------------------------------------------------------

void to_json(json& j, const MetricsReport& r) {
  json runs = json::array();
  for (const auto& run : r.runs) runs.push_back({{"seed", run.seed}, {"metrics", run.values}, {"flags", run.flags}});
  json agg = json::object();
  for (const auto& [k, s] : r.aggregate) agg[k] = {{"mean", s.mean}, {"std", s.std}};
  json gains = json::object();
  for (const auto& [k, g] : r.gains)
    gains[k] = {{"values", g.values},
                {"gains", g.gains},
                {"expected", g.expected},
                {"mae", g.mae},
                {"degenerate", g.degenerate}};
  json bins = json::array();
  for (const auto& b : r.calibration.bins)
    bins.push_back({{"count", b.count}, {"confidence", b.confidence}, {"accuracy", b.accuracy}});
  json preds = json::array();
  for (const auto& set : r.predictions) {
    json items = json::array();
    for (const auto& p : set.items) items.push_back({{"patient_id", p.patient_id}, {"score", p.score}, {"label", p.label}});
    preds.push_back({{"seed", set.seed}, {"items", std::move(items)}});
  }
  j = json{{"schema_version", r.schema_version},
           {"label", r.label},
           {"runs", std::move(runs)},
           {"aggregate", std::move(agg)},
           {"gain", std::move(gains)},
           {"calibration", {{"bins", std::move(bins)}, {"ece", r.calibration.ece}, {"mce", r.calibration.mce}}},
           {"predictions", std::move(preds)}};
}

void from_json(const json& j, MetricsReport& r) {
  r.schema_version = j.at("schema_version").get<int>();
  r.label = j.value("label", std::string());
  r.runs.clear();
  for (const auto& run : j.at("runs")) {
    RunMetrics m;
    m.seed = run.at("seed").get<std::uint64_t>();
    m.values = run.at("metrics").get<std::map<std::string, double>>();
    m.flags = run.value("flags", std::vector<std::string>{});
    r.runs.push_back(std::move(m));
  }
  r.aggregate.clear();
  for (const auto& [k, v] : j.at("aggregate").items()) r.aggregate[k] = {v.at("mean").get<double>(), v.at("std").get<double>()};
  r.gains.clear();
  if (j.contains("gain"))
    for (const auto& [k, v] : j.at("gain").items()) {
      GainCurve g;
      g.values = v.at("values").get<std::vector<double>>();
      g.gains = v.at("gains").get<std::vector<double>>();
      g.expected = v.at("expected").get<std::vector<double>>();
      g.mae = v.at("mae").get<double>();
      g.degenerate = v.value("degenerate", false);
      r.gains[k] = std::move(g);
    }
  r.calibration = {};
  if (j.contains("calibration")) {
    const auto& c = j.at("calibration");
    for (const auto& b : c.at("bins"))
      r.calibration.bins.push_back(
          {b.at("count").get<std::size_t>(), b.at("confidence").get<double>(), b.at("accuracy").get<double>()});
    r.calibration.ece = c.at("ece").get<double>();
    r.calibration.mce = c.at("mce").get<double>();
  }
  r.predictions.clear();
  if (j.contains("predictions"))
    for (const auto& set : j.at("predictions")) {
      PredictionSet ps;
      ps.seed = set.at("seed").get<std::uint64_t>();
      for (const auto& p : set.at("items"))
        ps.items.push_back({p.at("patient_id").get<std::string>(), p.at("score").get<double>(), p.at("label").get<int>()});
      r.predictions.push_back(std::move(ps));
    }
}

}  // namespace hccnet
