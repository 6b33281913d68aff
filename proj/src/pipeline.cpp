#include "hccnet/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>

namespace hccnet {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

Rng stream(std::uint64_t seed, std::uint64_t purpose) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(purpose)};
  return Rng(seq);
}

/// Cycles through a shuffled index order, reshuffling at each epoch.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, Rng rng) : order_(n), rng_(std::move(rng)) {
    if (n == 0) throw std::invalid_argument("nothing to sample from");
    std::iota(order_.begin(), order_.end(), std::size_t(0));
    pos_ = n;
  }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    while (out.size() < count) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

class CsvLog {
 public:
  CsvLog(const fs::path& path, const std::string& header) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    os_.open(path, std::ios::trunc);
    if (!os_) throw std::runtime_error("cannot write log " + path.string());
    os_ << header << '\n';
    os_ << std::setprecision(9);
  }
  template <typename... T>
  void row(const T&... values) {
    std::size_t i = 0;
    ((os_ << (i++ ? "," : "") << values), ...);
    os_ << '\n';
  }

 private:
  std::ofstream os_;
};

Index progress_every(Index total) { return std::max<Index>(1, total / 10); }

CheckpointManifest manifest_for(const RunConfig& cfg, const std::string& stage, Index step, std::uint64_t seed) {
  CheckpointManifest m;
  m.variant = cfg.variant;
  m.stage = stage;
  m.step = step;
  m.seed = seed;
  m.config = to_json(cfg);
  return m;
}

std::vector<double> timestamps(const std::vector<const StudyVisit*>& visits) {
  std::vector<double> ts;
  for (const auto* v : visits) ts.push_back(v->timestamp);
  return ts;
}

Index series_count(const RunConfig& cfg) { return Index(cfg.data.series_labels.size()); }

}  // namespace

ModelConfig resolve_model(const RunConfig& cfg) {
  ModelConfig m = model_config(parse_variant(cfg.variant), series_count(cfg), cfg.base_channels);
  m.encoder.dropout = cfg.dropout;
  m.encoder.max_length = cfg.max_sequence_length;
  return m;
}

// ---- backbone self-distillation ---------------------------------------------

DinoState make_dino_state(const BackboneConfig& backbone, const DinoHeadConfig& head, std::uint64_t seed) {
  head.validate();
  DinoState st;
  st.backbone = backbone;
  st.head = head;
  st.net = DinoNetwork(backbone, head, st.student);
  st.student.initialize(seed);
  st.teacher = st.student;
  st.optimizer = AdamW<float>(st.student);
  st.grads.resize_like(st.student);
  st.center = Eigen::VectorXd::Zero(head.prototypes);
  return st;
}

StepStats pretrain_backbone_step(DinoState& st, const std::vector<MultiCropViews>& batch, double lr, double wd,
                                 double clip, double ema_m) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  st.grads.zero();
  const double inv_b = 1.0 / double(batch.size());
  Eigen::MatrixXd teacher_all(st.head.prototypes, Index(2 * batch.size()));
  StepStats stats;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& views = batch[i];
    const std::array<const Volume*, 4> student_views{&views.global[0], &views.global[1], &views.local[0],
                                                     &views.local[1]};
    std::array<DinoNetwork::Cache<float>, 4> caches;
    std::vector<Eigen::VectorXd> student_logits, teacher_logits;
    for (std::size_t v = 0; v < 4; ++v)
      student_logits.push_back(st.net.forward(st.student, *student_views[v], &caches[v]).cast<double>());
    for (std::size_t g = 0; g < 2; ++g) {
      teacher_logits.push_back(st.net.forward(st.teacher, views.global[g]).cast<double>());
      teacher_all.col(Index(2 * i + g)) = teacher_logits.back();
    }
    const DinoLoss dl = dino_loss(student_logits, teacher_logits, st.center, st.head.student_temperature,
                                  st.head.teacher_temperature);
    stats.loss += dl.loss * inv_b;
    for (std::size_t v = 0; v < 4; ++v)
      st.net.backward(st.student, caches[v], Vec<float>((dl.dstudent[v] * inv_b).cast<float>()), st.grads);
  }
  stats.grad_norm = st.optimizer.step(st.student, st.grads, lr, wd, clip);
  teacher_ema_update(st.teacher, st.student, ema_m);
  update_center(st.center, teacher_all, st.head.center_momentum);
  return stats;
}

// ---- sequence model ---------------------------------------------------------

SequenceState make_sequence_state(const ModelConfig& cfg, std::uint64_t seed) {
  SequenceState st;
  st.config = cfg;
  st.model = SequenceModel(cfg, st.store);
  st.store.initialize(seed);
  st.optimizer = AdamW<float>(st.store);
  st.grads.resize_like(st.store);
  st.trainable.assign(st.store.size(), true);
  return st;
}

void set_trainable(SequenceState& st, const std::vector<std::string>& prefixes) {
  st.trainable = select_prefixes(st.store, prefixes);
  st.optimizer = AdamW<float>(st.store);
}

StepStats pretrain_encoder_step(SequenceState& st, const std::vector<SopBatch>& batch, double lr, double wd,
                                double clip, Rng& dropout_rng) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  st.grads.zero();
  std::vector<SequenceCache<float>> caches(batch.size());
  std::vector<double> logits;
  std::vector<int> labels;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& b = batch[i];
    logits.push_back(st.model.forward_embeddings(st.store, Mat<float>(b.embeddings), b.deltas, &dropout_rng,
                                                 &caches[i], &b.example.permutation));
    labels.push_back(b.example.label);
  }
  std::vector<double> dlogits;
  StepStats stats;
  stats.loss = sop_loss(logits, labels, &dlogits);
  for (std::size_t i = 0; i < batch.size(); ++i)
    st.model.backward_embeddings(st.store, caches[i], float(dlogits[i]), st.grads);
  stats.grad_norm = st.optimizer.step(st.store, st.grads, lr, wd, clip, &st.trainable);
  return stats;
}

StepStats finetune_step(SequenceState& st, const std::vector<TrainingSequence>& batch, double omega, double smoothing,
                        double lr, double wd, double clip, Rng& dropout_rng) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  st.grads.zero();
  std::vector<double> logits;
  std::vector<int> labels;
  std::vector<SequenceCache<float>> caches(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    logits.push_back(st.model.forward(st.store, batch[i].visits, batch[i].deltas, &dropout_rng, &caches[i]));
    labels.push_back(batch[i].label);
  }
  const LossAndGrad lg = class_balanced_bce_logits(logits, labels, omega, smoothing);
  for (std::size_t i = 0; i < batch.size(); ++i) st.model.backward(st.store, caches[i], float(lg.dlogits[i]), st.grads);
  StepStats stats;
  stats.loss = lg.loss;
  stats.grad_norm = st.optimizer.step(st.store, st.grads, lr, wd, clip, &st.trainable);
  return stats;
}

double predict(const SequenceState& st, const std::vector<Volume>& visits, const Eigen::VectorXd& deltas) {
  return ops::probability(double(st.model.forward(st.store, visits, deltas, nullptr)));
}

// ---- checkpoint plumbing ----------------------------------------------------

void inflate_stem(Checkpoint& ck, Index channels, const std::string& name) {
  if (!ck.store.contains(name)) throw MissingTensorError("checkpoint has no tensor '" + name + "'");
  const auto h = ck.store.handle(name);
  const auto& info = ck.store.info(h);
  if (info.shape.size() != 5) throw ShapeConflictError("stem weight must have five dimensions");
  const Index in = info.shape.back();
  if (in == channels) return;
  if (in != 1) throw ShapeConflictError("can only inflate a single-channel stem");
  Checkpoint out;
  out.manifest = ck.manifest;
  for (std::size_t t = 0; t < ck.store.size(); ++t) {
    TensorInfo ti = ck.store.info(t);
    if (t != h) {
      out.store.add(ti);
      out.store.value(t) = ck.store.value(t);
      continue;
    }
    ti.shape.back() = channels;
    out.store.add(ti);
    const auto& src = ck.store.value(t);
    auto& dst = out.store.value(t);
    const float scale = 1.0f / float(channels);
    for (Index k = 0; k < src.size(); ++k)
      for (Index c = 0; c < channels; ++c) dst[k * channels + c] = src[k] * scale;
  }
  ck = std::move(out);
}

Checkpoint load_stage_checkpoint(const fs::path& path, const std::string& stage, const RunConfig& cfg) {
  if (!fs::exists(path)) throw MissingDependencyError("missing " + stage + " checkpoint at " + path.string());
  Checkpoint ck = load_checkpoint(path);
  if (ck.manifest.stage != stage)
    throw CheckpointError(path.string() + " holds a " + ck.manifest.stage + " checkpoint, expected " + stage);
  if (ck.manifest.variant != cfg.variant)
    throw VariantMismatchError("checkpoint " + path.string() + " was trained as variant " + ck.manifest.variant +
                               " but the run is configured for variant " + cfg.variant);
  const json& mc = ck.manifest.config;
  if (mc.is_object() && mc.contains("base_channels")) {
    const json want = cfg.base_channels ? json(*cfg.base_channels) : json(nullptr);
    if (mc["base_channels"] != want)
      throw VariantMismatchError("checkpoint " + path.string() + " uses base_channels " + mc["base_channels"].dump() +
                                 ", run uses " + want.dump());
  }
  return ck;
}

// ---- cohort helpers ---------------------------------------------------------

CohortSummary summarize_cohort(const std::vector<PatientRecord>& records) {
  CohortSummary s;
  s.patients = records.size();
  for (const auto& r : records) {
    s.positives += r.diagnosis_date.has_value();
    ++s.visit_histogram[r.visits.size()];
  }
  return s;
}

CohortSplit load_split(const RunConfig& cfg) {
  const fs::path dir = cfg.cohort_path();
  if (!fs::exists(dir / "manifest.json"))
    throw MissingDependencyError("no cohort at " + dir.string() + " (run gen-data first)");
  auto records = load_cohort(dir);
  auto [dev, test] = split_dataset(records, cfg.dev_fraction, cfg.split_seed);
  return {std::move(dev), std::move(test)};
}

std::vector<LabeledSequence> finetune_sequences(const std::vector<PatientRecord>& records, Index max_len) {
  std::vector<LabeledSequence> out;
  for (const auto& r : records)
    if (auto seq = subset_for_finetune(r)) out.push_back(truncate_sequence(std::move(*seq), std::size_t(max_len)));
  return out;
}

// ---- stage runners ----------------------------------------------------------

CohortSummary run_gen_data(const RunConfig& cfg) {
  cfg.data.validate();
  const auto records = generate_cohort(cfg.data);
  save_cohort(records, cfg.cohort_path(), {{"config", to_json(cfg)}});
  return summarize_cohort(records);
}

void run_pretrain_backbone(const RunConfig& cfg, std::ostream& log) {
  const auto split = load_split(cfg);
  std::vector<const StudyVisit*> visits;
  for (const auto& r : split.dev)
    for (const auto& v : r.visits) visits.push_back(&v);

  BackboneConfig bc = resolve_model(cfg).backbone;
  bc.input_channels = 1;  // views are single series
  const auto& opt = cfg.backbone.optim;
  DinoState st = make_dino_state(bc, cfg.backbone.head, cfg.seed);
  EpochSampler sampler(visits.size(), stream(cfg.seed, 1));
  Rng aug_rng = stream(cfg.seed, 2);
  CsvLog csv(cfg.log_path() / "pretrain_backbone.csv", "step,loss,lr,wd,ema_m");
  log << "[pretrain-backbone] " << visits.size() << " dev visits, " << opt.total_steps << " steps, batch "
      << opt.batch_size << ", " << st.student.parameter_count() << " parameters\n";

  for (Index step = 0; step < opt.total_steps; ++step) {
    const double lr = lr_at_step(step, opt);
    const double wd = wd_at_step(step, opt);
    const double m = ema_momentum_at_step(step, opt.total_steps, cfg.backbone.ema_momentum);
    std::vector<MultiCropViews> batch;
    for (std::size_t i : sampler.next(std::size_t(opt.batch_size)))
      batch.push_back(multi_crop(*visits[i], cfg.augment, aug_rng, ViewSpec::global(cfg.backbone.global_crop),
                                 ViewSpec::local(cfg.backbone.local_crop)));
    const StepStats s = pretrain_backbone_step(st, batch, lr, wd, opt.clip_norm, m);
    csv.row(step, s.loss, lr, wd, m);
    if ((step + 1) % progress_every(opt.total_steps) == 0)
      log << "[pretrain-backbone] step " << step + 1 << "/" << opt.total_steps << " loss " << s.loss << "\n";
  }
  const fs::path out = cfg.checkpoint_path() / "backbone.lsck";
  save_checkpoint(st.student, manifest_for(cfg, "backbone-pretrain", opt.total_steps, cfg.seed), out);
  log << "[pretrain-backbone] wrote " << out.string() << "\n";
}

namespace {

/// Backbone weights from the backbone stage, stem widened to the series count.
Checkpoint backbone_checkpoint(const RunConfig& cfg) {
  Checkpoint ck = load_stage_checkpoint(cfg.checkpoint_path() / "backbone.lsck", "backbone-pretrain", cfg);
  inflate_stem(ck, series_count(cfg));
  return ck;
}

}  // namespace

void run_pretrain_encoder(const RunConfig& cfg, std::ostream& log) {
  const auto split = load_split(cfg);
  const Checkpoint bb = backbone_checkpoint(cfg);
  SequenceState st = make_sequence_state(resolve_model(cfg), cfg.seed);
  load_into(st.store, bb, {"backbone."});
  set_trainable(st, {"encoder.", "pooler."});

  // Every dev record in full (no label rule), capped at the sequence length.
  std::vector<LabeledSequence> seqs;
  for (const auto& r : split.dev) {
    LabeledSequence s;
    s.patient_id = r.patient_id;
    for (const auto& v : r.visits) s.visits.push_back(&v);
    s.anchor = r.visits.back().timestamp;
    seqs.push_back(truncate_sequence(std::move(s), std::size_t(cfg.max_sequence_length)));
  }

  const auto& opt = cfg.encoder.optim;
  EpochSampler sampler(seqs.size(), stream(cfg.seed, 1));
  Rng aug_rng = stream(cfg.seed, 2), drop_rng = stream(cfg.seed, 3), shuffle_rng = stream(cfg.seed, 4);
  CsvLog csv(cfg.log_path() / "pretrain_encoder.csv", "step,loss,lr,wd");
  log << "[pretrain-encoder] " << seqs.size() << " dev sequences, " << opt.total_steps << " steps, batch "
      << opt.batch_size << "\n";

  const Backbone& backbone = st.model.backbone();
  for (Index step = 0; step < opt.total_steps; ++step) {
    const double lr = lr_at_step(step, opt);
    const double wd = wd_at_step(step, opt);
    std::vector<std::pair<Eigen::MatrixXf, Eigen::VectorXd>> raw;
    for (std::size_t i : sampler.next(std::size_t(opt.batch_size))) {
      const auto& s = seqs[i];
      Eigen::MatrixXf emb(backbone.embedding_dim(), Index(s.visits.size()));
      for (std::size_t v = 0; v < s.visits.size(); ++v)
        emb.col(Index(v)) = backbone.embed(st.store, sequence_view(*s.visits[v], cfg.encoder.crop, cfg.augment, aug_rng));
      raw.emplace_back(std::move(emb), compute_time_deltas(timestamps(s.visits), s.anchor));
    }
    const auto batch = make_sop_batch(std::move(raw), shuffle_rng, cfg.encoder.shuffle_probability);
    const StepStats s = pretrain_encoder_step(st, batch, lr, wd, opt.clip_norm, drop_rng);
    csv.row(step, s.loss, lr, wd);
    if ((step + 1) % progress_every(opt.total_steps) == 0)
      log << "[pretrain-encoder] step " << step + 1 << "/" << opt.total_steps << " loss " << s.loss << "\n";
  }
  const fs::path out = cfg.checkpoint_path() / "encoder.lsck";
  save_checkpoint(st.store, manifest_for(cfg, "encoder-pretrain", opt.total_steps, cfg.seed), out);
  log << "[pretrain-encoder] wrote " << out.string() << "\n";
}

std::string stage_tag(bool baseline) { return baseline ? "baseline" : "finetune"; }

fs::path seed_checkpoint(const RunConfig& cfg, const std::string& stage, std::uint64_t seed) {
  return cfg.checkpoint_path() / stage / ("seed_" + std::to_string(seed) + ".lsck");
}

void run_finetune(const RunConfig& cfg, bool baseline, std::ostream& log) {
  const std::string tag = stage_tag(baseline);
  const auto split = load_split(cfg);
  const auto seqs = finetune_sequences(split.dev, cfg.max_sequence_length);
  if (seqs.empty()) throw std::runtime_error("fine-tuning split is empty");
  std::vector<int> labels;
  for (const auto& s : seqs) labels.push_back(s.label);

  double omega = 1.0;
  if (cfg.finetune.positive_weight) {
    omega = *cfg.finetune.positive_weight;
  } else if (auto w = resolve_positive_weight(labels)) {
    omega = *w;
  } else {
    log << "[" << tag << "] no positive sequences; positive-class weight falls back to 1\n";
  }

  std::optional<Checkpoint> bb, enc;
  if (!baseline) {
    bb = backbone_checkpoint(cfg);
    const fs::path enc_path = cfg.checkpoint_path() / "encoder.lsck";
    if (!fs::exists(enc_path))
      throw MissingDependencyError("missing encoder-pretrain checkpoint at " + enc_path.string() +
                                   " (run pretrain-encoder first)");
    enc = load_stage_checkpoint(enc_path, "encoder-pretrain", cfg);
  }

  OptimizerConfig opt = cfg.finetune.optim;
  if (baseline) opt.warmup_steps = cfg.finetune.baseline_warmup_steps;
  const ModelConfig mc = resolve_model(cfg);
  log << "[" << tag << "] " << seqs.size() << " sequences (" << std::count(labels.begin(), labels.end(), 1)
      << " positive), omega " << omega << ", " << cfg.finetune.seeds.size() << " seeds x " << opt.total_steps
      << " steps, batch " << opt.batch_size << "\n";

  for (std::uint64_t seed : cfg.finetune.seeds) {
    SequenceState st = make_sequence_state(mc, seed);
    if (!baseline) {
      load_into(st.store, *bb, {"backbone."});
      load_into(st.store, *enc, {"encoder.", "pooler."});
      // The order-prediction classifier is replaced by a freshly drawn one.
      Rng init_rng = stream(seed, 5);
      for (const char* name : {"pooler.classifier.weight", "pooler.classifier.bias"})
        st.store.initialize_tensor(st.store.handle(name), init_rng);
    }
    EpochSampler sampler(seqs.size(), stream(seed, 1));
    Rng aug_rng = stream(seed, 2), drop_rng = stream(seed, 3);
    CsvLog csv(cfg.log_path() / tag / ("seed_" + std::to_string(seed) + ".csv"), "step,loss,lr,wd");
    for (Index step = 0; step < opt.total_steps; ++step) {
      const double lr = lr_at_step(step, opt);
      const double wd = wd_at_step(step, opt);
      std::vector<TrainingSequence> batch;
      for (std::size_t i : sampler.next(std::size_t(opt.batch_size))) {
        const auto& s = seqs[i];
        TrainingSequence ts;
        for (const auto* v : s.visits) ts.visits.push_back(sequence_view(*v, cfg.finetune.crop, cfg.augment, aug_rng));
        ts.deltas = compute_time_deltas(s);
        ts.label = s.label;
        batch.push_back(std::move(ts));
      }
      const StepStats s = finetune_step(st, batch, omega, opt.label_smoothing, lr, wd, opt.clip_norm, drop_rng);
      csv.row(step, s.loss, lr, wd);
    }
    const fs::path out = seed_checkpoint(cfg, tag, seed);
    save_checkpoint(st.store, manifest_for(cfg, tag, opt.total_steps, seed), out);
    log << "[" << tag << "] seed " << seed << " done, wrote " << out.string() << "\n";
  }
}

MetricsReport run_evaluate(const RunConfig& cfg, const std::string& stage, std::ostream& log) {
  if (stage != "finetune" && stage != "baseline") throw ConfigError("evaluate stage must be finetune or baseline");
  const auto split = load_split(cfg);
  const auto seqs = finetune_sequences(split.test, cfg.max_sequence_length);
  if (seqs.empty()) throw std::runtime_error("test split is empty");

  struct Prepared {
    std::string id;
    std::vector<Volume> visits;
    Eigen::VectorXd deltas;
    int label;
  };
  std::vector<Prepared> inputs;
  for (const auto& s : seqs) {
    Prepared p{s.patient_id, {}, compute_time_deltas(s), s.label};
    for (const auto* v : s.visits) p.visits.push_back(central_crop(stack_series(*v), cfg.evaluate.crop));
    inputs.push_back(std::move(p));
  }

  const ModelConfig mc = resolve_model(cfg);
  std::vector<PredictionSet> runs;
  for (std::uint64_t seed : cfg.finetune.seeds) {
    const fs::path path = seed_checkpoint(cfg, stage, seed);
    if (!fs::exists(path))
      throw MissingDependencyError("missing " + stage + " checkpoint for seed " + std::to_string(seed) + " at " +
                                   path.string());
    const Checkpoint ck = load_stage_checkpoint(path, stage, cfg);
    SequenceState st = make_sequence_state(mc, 0);
    load_into(st.store, ck, {""});
    PredictionSet ps;
    ps.seed = seed;
    for (const auto& in : inputs) ps.items.push_back({in.id, predict(st, in.visits, in.deltas), in.label});
    runs.push_back(std::move(ps));
  }
  MetricsReport rep = build_report(stage, runs, cfg.evaluate.calibration_bins, cfg.evaluate.gain_mode);
  const fs::path dir = cfg.report_path() / stage;
  emit_report(rep, dir);
  log << "[evaluate] " << stage << ": " << runs.size() << " runs on " << inputs.size() << " test patients, AUROC "
      << rep.aggregate.at("auroc").mean << " +/- " << rep.aggregate.at("auroc").std << ", wrote " << dir.string()
      << "\n";
  return rep;
}

std::vector<ComparisonRow> run_report(const RunConfig& cfg, const fs::path& baseline, const fs::path& finetuned,
                                      std::ostream& log) {
  const MetricsReport b = load_report(baseline);
  const MetricsReport f = load_report(finetuned);
  const auto rows = compare_reports(b, f);
  const std::string table = render_comparison(rows, b.label.empty() ? "baseline" : b.label,
                                              f.label.empty() ? "finetuned" : f.label);
  const fs::path dir = cfg.report_path();
  fs::create_directories(dir);
  std::ofstream(dir / "comparison.md") << table;
  std::ofstream(dir / "comparison.json") << comparison_json(rows).dump(2) << "\n";
  log << table;
  return rows;
}

}  // namespace hccnet
