// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include "hccnet/pipeline.hpp"
#include "../support.hpp"

#include <sys/wait.h>

#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace hccnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void criterion(int id, const std::string& name, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << " [exception: " << e.what() << "]";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << name << ":" << o.detail.str() << " (" << std::fixed
            << std::setprecision(1) << secs << "s)" << std::endl;
  failures += !o.pass;
}

Eigen::MatrixXd gaussian(Index rows, Index cols, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// ---- 1 ----------------------------------------------------------------------

void architecture(Outcome& o) {
  const std::map<Variant, double> reported{
      {Variant::F, 12.4e6}, {Variant::P, 22.0e6}, {Variant::N, 45.9e6}, {Variant::T, 72.4e6}};
  for (const auto& [v, target] : reported) {
    const ModelConfig m = model_config(v, 4);
    o.require(m.encoder.hidden == 8 * m.backbone.base_channels, "H = 8C");
    o.require(m.encoder.heads * 128 == m.encoder.hidden, "A = H/128");
    ParameterStore<float> s;
    SequenceModel model(m, s);
    const double n = double(count_params(s));
    const double rel = n / target - 1.0;
    o.detail << " " << variant_name(v) << "=" << std::setprecision(2) << std::fixed << n / 1e6 << "M(" << std::showpos
             << 100.0 * rel << "%)" << std::noshowpos;
    o.require(std::abs(rel) <= 0.15, std::string(variant_name(v)) + " parameter count");
  }
}

// ---- 2 ----------------------------------------------------------------------

void gradients(Outcome& o) {
  Rng rng(1);
  {
    ParameterStore<double> s;
    const auto block = ConvNextBlock::add(s, "b", 4);
    s.initialize(2, 0.3);
    FeatureMap<double> x;
    x.dims = {9, 9, 9};
    x.values = gaussian(4, 729, rng);
    const Eigen::MatrixXd w = gaussian(4, 729, rng);
    ConvNextBlock::Cache<double> cache;
    block.forward(s, x, &cache);
    Gradients<double> g(s);
    const Eigen::MatrixXd dx = block.backward(s, cache, w, g);
    auto loss = [&] { return (w.array() * block.forward<double>(s, x, nullptr).values.array()).sum(); };
    testing::GradCheck c;
    testing::check_parameters(s, g, loss, c);
    testing::check_input(x.values, dx, loss, c, "input");
    o.detail << " block=" << std::scientific << std::setprecision(1) << c.worst;
    o.require(c.worst < 1e-4, "convnext block");
  }
  {
    EncoderConfig ec;
    ec.hidden = 128;
    ec.heads = 1;
    ec.layers = 1;
    ec.ff_dim = 512;
    ec.dropout = 0.0;
    ParameterStore<double> s;
    Encoder enc(ec, s);
    PoolerHead head(s, 128);
    s.initialize(3, 0.05);
    Eigen::MatrixXd emb = gaussian(128, 3, rng, 0.5);
    Eigen::MatrixXd cls = gaussian(128, 1, rng, 0.5);
    const Eigen::VectorXd deltas = compute_time_deltas({0.0, 7.0, 13.0}, 20.0);
    const Eigen::MatrixXd pe = sinusoidal_pe<double>(deltas, 128);
    auto loss = [&] {
      const Eigen::MatrixXd out = enc.forward<double>(s, assemble_sequence<double>(emb, cls.col(0), pe), 4, nullptr);
      return head.forward<double>(s, Eigen::VectorXd(out.col(0)));
    };
    EncoderCache<double> ecache;
    PoolerCache<double> pcache;
    const Eigen::MatrixXd out = enc.forward<double>(s, assemble_sequence<double>(emb, cls.col(0), pe), 4, nullptr, &ecache);
    head.forward<double>(s, Eigen::VectorXd(out.col(0)), &pcache);
    Gradients<double> g(s);
    Eigen::MatrixXd dout = Eigen::MatrixXd::Zero(128, 4);
    dout.col(0) = head.backward<double>(s, pcache, 1.0, g);
    const Eigen::MatrixXd dtokens = enc.backward(s, ecache, dout, g);
    testing::GradCheck c;
    testing::check_parameters(s, g, loss, c, 40);
    Eigen::MatrixXd demb = dtokens.rightCols(3);
    Eigen::MatrixXd dcls = dtokens.col(0);
    testing::check_input(emb, demb, loss, c, "embeddings");
    testing::check_input(cls, dcls, loss, c, "cls");
    o.detail << " encoder+pooler=" << c.worst;
    o.require(c.worst < 1e-4, "encoder with time-aware encodings");
  }
  {
    ParameterStore<double> s;
    PoolerHead head(s, 128);
    s.initialize(4, 0.1);
    Eigen::MatrixXd e = gaussian(128, 1, rng);
    PoolerCache<double> pc;
    head.forward<double>(s, Eigen::VectorXd(e.col(0)), &pc);
    Gradients<double> g(s);
    const Eigen::MatrixXd de = head.backward<double>(s, pc, 1.0, g);
    auto loss = [&] { return head.forward<double>(s, Eigen::VectorXd(e.col(0))); };
    testing::GradCheck c;
    testing::check_parameters(s, g, loss, c);
    testing::check_input(e, de, loss, c, "cls state");
    o.detail << " pooler=" << c.worst;
    o.require(c.worst < 1e-4, "pooling head");
  }
}

// ---- 3 ----------------------------------------------------------------------

void metric_oracles(Outcome& o) {
  Rng rng(3);
  int mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> s;
    std::vector<int> y;
    testing::random_prediction_set(rng, s, y);
    mismatches += auroc(s, y) != testing::auroc_oracle(s, y);
    mismatches += auprc(s, y) != testing::auprc_oracle(s, y);
  }
  o.detail << " oracle mismatches=" << mismatches;
  o.require(mismatches == 0, "oracle agreement");

  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 100000; ++i) {
    s.push_back(u(rng));
    y.push_back(std::bernoulli_distribution(s.back())(rng));
  }
  const double ece = reliability(s, y).ece;
  o.detail << " ece=" << std::setprecision(4) << std::fixed << ece;
  o.require(ece <= 0.02, "calibrated ECE");

  const std::vector<double> ws{0.9, 0.8, 0.3, 0.1};
  const std::vector<int> wl{1, 0, 1, 0};
  o.require(auroc(ws, wl) == 0.75, "auroc 0.75");
  o.require(std::abs(auprc(ws, wl) - 0.8333333333333333) < 1e-12, "auprc 0.8333");
  o.require(std::abs(reliability({0.8, 0.8}, {1, 0}).ece - 0.3) < 1e-12, "ece 0.3");
  o.require(std::abs(brier({0.8, 0.4}, {1, 0}) - 0.10) < 1e-12, "brier 0.10");
  o.require(brier({0.5, 0.5}, {1, 0}) == 0.25, "brier 0.25");
}

// ---- 4 ----------------------------------------------------------------------

void schedules(Outcome& o) {
  const RunConfig c = default_config("P");
  const auto& b = c.backbone.optim;
  const double eta = scaled_base_lr(b.base_lr, b.batch_size);
  o.require(lr_at_step(b.warmup_steps, b) == eta, "peak lr at end of warmup");
  o.require(lr_at_step(b.total_steps, b) == 1e-6, "final lr 1e-6");
  o.require(wd_at_step(0, b) == 5e-2, "initial wd");
  o.require(wd_at_step(b.total_steps, b) == 5e-1, "final wd");
  const auto& f = c.finetune.optim;
  bool constant = true;
  for (Index s = 0; s <= f.total_steps; ++s) constant &= wd_at_step(s, f) == 1e-5;
  o.require(constant, "fine-tune wd constant 1e-5");
  o.require(std::abs(scaled_base_lr(4e-4, 32) - 2e-4) <= 1e-19, "scaled lr");
  o.detail << " eta=" << eta << " lr_end=" << lr_at_step(b.total_steps, b);
}

// ---- 5 ----------------------------------------------------------------------

void pretraining(Outcome& o) {
  const std::vector<Eigen::VectorXd> s4(4, Eigen::VectorXd::Zero(1024)), t2(2, Eigen::VectorXd::Zero(1024));
  const double l = dino_loss(s4, t2, Eigen::VectorXd::Zero(1024), 0.1, 0.04).loss;
  o.detail << " uniform loss-ln1024=" << std::scientific << std::setprecision(1) << l - std::log(1024.0);
  o.require(std::abs(l - std::log(1024.0)) <= 1e-6, "uniform dino loss");

  DinoHeadConfig head;
  head.hidden = 16;
  head.bottleneck = 8;
  head.prototypes = 16;
  DinoState st = make_dino_state(BackboneConfig{4, {1, 1, 1, 1}, 1}, head, 1);
  Rng rng(5);
  std::vector<MultiCropViews> batch(2);
  for (auto& v : batch) {
    for (auto& g : v.global) g = testing::random_volume(1, {9, 9, 9}, rng);
    for (auto& lv : v.local) lv = testing::random_volume(1, {6, 6, 6}, rng);
  }
  const ParameterStore<float> before = st.teacher;
  pretrain_backbone_step(st, batch, 1e-3, 0.05, 1.0, 1.0);
  bool frozen = true;
  for (std::size_t h = 0; h < before.size(); ++h) frozen &= st.teacher.value(h) == before.value(h);
  o.require(frozen, "teacher immutable at m = 1");
  pretrain_backbone_step(st, batch, 1e-3, 0.05, 1.0, 0.0);
  bool copied = true;
  for (std::size_t h = 0; h < before.size(); ++h) copied &= st.teacher.value(h) == st.student.value(h);
  o.require(copied, "teacher equals student at m = 0");

  ModelConfig m;
  m.backbone = BackboneConfig{16, {1, 1, 1, 1}, 4};
  m.encoder.hidden = 128;
  m.encoder.heads = 1;
  m.encoder.layers = 2;
  m.encoder.ff_dim = 512;
  ParameterStore<float> s;
  SequenceModel model(m, s);
  s.initialize(6);
  const Eigen::MatrixXf emb = gaussian(128, 5, rng).cast<float>();
  const Eigen::VectorXd deltas = compute_time_deltas({0.0, 3.0, 8.0, 14.0, 20.0}, 26.0);
  const Eigen::MatrixXf tokens = assemble_sequence<float>(emb, s.value(model.cls_handle()), sinusoidal_pe<float>(deltas, 128));
  const Eigen::VectorXf cls = model.encoder().forward<float>(s, tokens, 6, nullptr).col(0);
  const float logit = model.forward_embeddings<float>(s, emb, deltas, nullptr);
  int identical = 0, changed = 0;
  std::vector<std::size_t> perm{0, 1, 2, 3, 4};
  for (int t = 0; t < 20; ++t) {
    do std::shuffle(perm.begin(), perm.end(), rng);
    while (std::is_sorted(perm.begin(), perm.end()));
    Eigen::MatrixXf joint = tokens;
    for (Index i = 0; i < 5; ++i) joint.col(i + 1) = tokens.col(Index(perm[std::size_t(i)]) + 1);
    identical += Eigen::VectorXf(model.encoder().forward<float>(s, joint, 6, nullptr).col(0)) == cls;
    changed += model.forward_embeddings<float>(s, emb, deltas, nullptr, nullptr, &perm) != logit;
  }
  o.detail << " joint-permutation identical=" << identical << "/20 embedding-only changed=" << changed << "/20";
  o.require(identical == 20, "joint permutation bit-identical");
  o.require(changed == 20, "embedding-only shuffle visible");
}

// ---- 6 ----------------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(HCCNET_CLI_PATH) + " " + args + " >> " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const std::vector<std::string> kStages{"gen-data", "pretrain-backbone", "pretrain-encoder", "finetune",
                                       "baseline", "evaluate",          "report"};

bool run_all(const fs::path& config, const fs::path& out, std::map<std::string, double>* seconds, Outcome& o) {
  fs::remove_all(out);
  fs::create_directories(out);
  for (const auto& stage : kStages) {
    const auto start = std::chrono::steady_clock::now();
    const int code = run_cli("--config " + config.string() + " --out " + out.string() + " " + stage, out / "run.log");
    if (seconds) (*seconds)[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (code != 0) {
      o.require(false, stage + " exited with " + std::to_string(code));
      return false;
    }
  }
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Every checkpoint, cohort and report file, keyed by relative path.
std::map<std::string, std::string> artifacts(const fs::path& out) {
  std::map<std::string, std::string> files;
  for (const char* sub : {"cohort", "checkpoints", "reports"})
    for (const auto& e : fs::recursive_directory_iterator(out / sub))
      if (e.is_regular_file()) files[fs::relative(e.path(), out).string()] = slurp(e.path());
  return files;
}

void synthetic_study(Outcome& o) {
  const fs::path root = fs::temp_directory_path() / "hccnet_acceptance";
  const fs::path data = HCCNET_ACCEPTANCE_DIR;

  // (a) determinism: a reduced copy of the pipeline run twice into the same directory
  // (the output path is embedded in every manifest), every artifact compared.
  std::map<std::string, std::string> a;
  if (run_all(data / "determinism.json", root / "det", nullptr, o) && (a = artifacts(root / "det"), true) &&
      run_all(data / "determinism.json", root / "det", nullptr, o)) {
    const auto b = artifacts(root / "det");
    std::size_t differing = 0;
    for (const auto& [name, bytes] : a) differing += !b.count(name) || b.at(name) != bytes;
    differing += a.size() != b.size();
    o.detail << " determinism: " << a.size() << " artifacts, " << differing << " differ;";
    o.require(differing == 0 && !a.empty(), "deterministic reruns");
  }

  // (b) and (c): the full desk-scale study.
  std::map<std::string, double> seconds;
  const fs::path out = root / "study";
  if (!run_all(data / "synthetic_study.json", out, &seconds, o)) return;
  double total = 0.0;
  for (const auto& stage : kStages) {
    total += seconds[stage];
    o.detail << " " << stage << "=" << std::fixed << std::setprecision(0) << seconds[stage] << "s";
  }
  o.detail << " total=" << total / 60.0 << "min";
  o.require(total < 45.0 * 60.0, "under 45 minutes");

  const MetricsReport ft = load_report(out / "reports" / "finetune");
  const MetricsReport base = load_report(out / "reports" / "baseline");
  o.require(ft.runs.size() == 10 && base.runs.size() == 10, "10 seeds per arm");
  const double auc = ft.aggregate.at("auroc").mean;
  o.detail << std::setprecision(3) << "; finetuned AUROC " << auc << " +/- " << ft.aggregate.at("auroc").std
           << ", baseline " << base.aggregate.at("auroc").mean << " +/- " << base.aggregate.at("auroc").std;
  o.require(auc >= 0.80, "fine-tuned mean AUROC >= 0.80");

  for (const char* arm : {"finetune", "baseline"})
    for (const char* f : {"metrics.json", "metrics.csv", "reliability.svg", "gain.svg"})
      o.require(fs::exists(out / "reports" / arm / f), std::string(arm) + "/" + f);
  o.require(fs::exists(out / "reports" / "comparison.md"), "comparison table");
  o.require(slurp(out / "reports" / "comparison.md").find("auroc") != std::string::npos, "comparison rows");
}

// ---- 7 ----------------------------------------------------------------------

void data_contract(Outcome& o) {
  Rng rng(7);
  std::uniform_int_distribution<int> visits(1, 10);
  std::uniform_real_distribution<double> gap(0.5, 24.0), u(0.0, 1.0);
  std::vector<PatientRecord> records;
  std::size_t violations = 0, skipped = 0;
  for (int p = 0; p < 1000; ++p) {
    PatientRecord r;
    r.patient_id = "patient_" + std::to_string(p);
    double t = u(rng) * 12.0;
    const int n = visits(rng);
    for (int v = 0; v < n; ++v) {
      StudyVisit sv;
      sv.timestamp = t;
      sv.series.emplace_back(1, Dims3{3, 3, 3});
      sv.series_labels.push_back("b0");
      r.visits.push_back(std::move(sv));
      t += gap(rng);
    }
    if (u(rng) < 0.3) {
      // Diagnosis at a visit, between visits or after the last one.
      const double span = r.visits.back().timestamp - r.visits.front().timestamp;
      r.diagnosis_date = u(rng) < 0.5 ? r.visits[std::size_t(visits(rng) % n)].timestamp
                                      : r.visits.front().timestamp + u(rng) * (span + 12.0);
    }
    r.validate();
    const auto seq = subset_for_finetune(r);
    if (!seq) {
      // Only legal when nothing precedes the diagnosis.
      violations += !(r.diagnosis_date && r.visits.front().timestamp >= *r.diagnosis_date);
      ++skipped;
    } else {
      violations += (seq->label == 1) != r.diagnosis_date.has_value();
      for (const auto* v : seq->visits) violations += seq->label == 1 && !(v->timestamp < seq->anchor);
      if (seq->label == 1) {
        std::size_t expected = 0;
        for (const auto& v : r.visits) expected += v.timestamp < *r.diagnosis_date;
        violations += seq->visits.size() != expected;
      } else {
        violations += seq->visits.size() != r.visits.size();
      }
    }
    records.push_back(std::move(r));
  }
  auto [dev, test] = split_dataset(records, 0.75, 11);
  std::set<std::string> dev_ids, test_ids;
  for (const auto& r : dev) dev_ids.insert(r.patient_id);
  for (const auto& r : test) test_ids.insert(r.patient_id);
  std::size_t overlap = 0;
  for (const auto& id : test_ids) overlap += dev_ids.count(id);
  o.detail << " label/truncation violations=" << violations << " (" << skipped
           << " records with no pre-diagnosis visit) split overlap=" << overlap << " dev=" << dev.size()
           << " test=" << test.size();
  o.require(violations == 0, "label rule");
  o.require(overlap == 0, "patient-level split");
  o.require(dev_ids.size() + test_ids.size() == records.size(), "split covers every patient");
}

// ---- 8 ----------------------------------------------------------------------

void gain_robustness(Outcome& o) {
  o.require(cumulative_gain_mae({0.8, 0.8, 0.8, 0.8, 0.8}) == 0.0, "equal runs");
  o.require(cumulative_gain_mae({0.0, 1.0}) == 0.25, "n=2 {0,1}");
  Rng rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0), k(0.01, 100.0);
  std::uniform_int_distribution<int> len(2, 20);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(std::size_t(len(rng)));
    for (auto& x : v) x = u(rng);
    const double c = k(rng);
    std::vector<double> scaled;
    for (double x : v) scaled.push_back(c * x);
    worst = std::max(worst, std::abs(cumulative_gain_mae(scaled) - cumulative_gain_mae(v)));
  }
  o.detail << " rescale max deviation=" << std::scientific << std::setprecision(1) << worst;
  o.require(worst <= 1e-12, "rescale invariance");
}

}  // namespace

int main(int argc, char** argv) {
  // `--quick` skips the end-to-end study.
  const bool quick = argc > 1 && std::string(argv[1]) == "--quick";
  criterion(1, "architecture fidelity", architecture);
  criterion(2, "gradient correctness", gradients);
  criterion(3, "metric oracles", metric_oracles);
  criterion(4, "schedule fidelity", schedules);
  criterion(5, "pre-training invariants", pretraining);
  if (!quick) criterion(6, "end-to-end synthetic study", synthetic_study);
  criterion(7, "data and label contract", data_contract);
  criterion(8, "robustness metric", gain_robustness);
  std::cout << (failures ? "acceptance: FAILED (" + std::to_string(failures) + ")" : std::string("acceptance: all passed"))
            << std::endl;
  return failures ? 1 : 0;
}
