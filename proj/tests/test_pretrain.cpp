#include "hccnet/pipeline.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace hccnet;

namespace {

Eigen::VectorXd gaussian(Index n, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

DinoHeadConfig tiny_head() {
  DinoHeadConfig h;
  h.hidden = 16;
  h.bottleneck = 8;
  h.prototypes = 12;
  return h;
}

MultiCropViews random_views(Rng& rng) {
  MultiCropViews v;
  for (auto& g : v.global) g = testing::random_volume(1, {9, 9, 9}, rng);
  for (auto& l : v.local) l = testing::random_volume(1, {6, 6, 6}, rng);
  return v;
}

bool stores_equal(const ParameterStore<float>& a, const ParameterStore<float>& b, const std::string& prefix = "") {
  for (std::size_t h = 0; h < a.size(); ++h) {
    if (a.info(h).name.rfind(prefix, 0) != 0) continue;
    if (std::memcmp(a.value(h).data(), b.value(h).data(), sizeof(float) * std::size_t(a.value(h).size())) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("pretrain") {

TEST_CASE("dino head produces distributions") {
  ParameterStore<double> s;
  DinoHead head(s, 6, tiny_head());
  s.initialize(1, 0.5);
  Rng rng(1);
  for (int i = 0; i < 5; ++i) {
    const Eigen::VectorXd x = gaussian(6, rng);
    const Eigen::VectorXd ps = dino_head_forward<double>(s, head, x, 0.1);
    const Eigen::VectorXd pt = dino_head_forward<double>(s, head, x, 0.04);
    CHECK(std::abs(ps.sum() - 1.0) < 1e-6);
    CHECK(std::abs(pt.sum() - 1.0) < 1e-6);
    CHECK(pt.maxCoeff() > ps.maxCoeff());
    const Eigen::VectorXd flat = dino_head_forward<double>(s, head, x, 1000.0);
    CHECK(flat.maxCoeff() - flat.minCoeff() < 1e-3);
  }
}

TEST_CASE("dino head gradients") {
  ParameterStore<double> s;
  DinoHead head(s, 6, tiny_head());
  s.initialize(2, 0.5);
  Rng rng(2);
  Eigen::MatrixXd x = gaussian(6, rng);
  const Eigen::VectorXd w = gaussian(12, rng);
  DinoHeadCache<double> cache;
  head.forward<double>(s, x.col(0), &cache);
  Gradients<double> g(s);
  const Eigen::VectorXd dx = head.backward<double>(s, cache, w, g);
  auto loss = [&] { return w.dot(head.forward<double>(s, x.col(0))); };
  testing::GradCheck check;
  testing::check_parameters(s, g, loss, check);
  testing::check_input(x, dx, loss, check, "input");
  INFO("worst: " << check.worst_group);
  CHECK(check.worst < 1e-4);
}

TEST_CASE("dino loss closed forms") {
  const Index K = 1024;
  std::vector<Eigen::VectorXd> student(4, Eigen::VectorXd::Zero(K)), teacher(2, Eigen::VectorXd::Zero(K));
  const DinoLoss uniform = dino_loss(student, teacher, Eigen::VectorXd::Zero(K), 0.1, 0.04);
  CHECK(std::abs(uniform.loss - std::log(1024.0)) < 1e-9);

  // One-hot teacher, student gives the target prototype probability q.
  const double q = 0.3;
  std::vector<Eigen::VectorXd> sp(4, Eigen::VectorXd::Constant(4, (1.0 - q) / 3.0));
  for (auto& p : sp) p[2] = q;
  std::vector<Eigen::VectorXd> tp(2, Eigen::VectorXd::Zero(4));
  for (auto& p : tp) p[2] = 1.0;
  CHECK(dino_cross_entropy(sp, tp) == doctest::Approx(-std::log(q)).epsilon(1e-12));

  Rng rng(3);
  std::vector<Eigen::VectorXd> s4, t2;
  for (int i = 0; i < 4; ++i) s4.push_back(gaussian(16, rng));
  for (int i = 0; i < 2; ++i) t2.push_back(gaussian(16, rng));
  const Eigen::VectorXd c = gaussian(16, rng, 0.1);
  const double base = dino_loss(s4, t2, c, 0.1, 0.04).loss;
  std::swap(s4[0], s4[1]);
  std::swap(t2[0], t2[1]);
  CHECK(dino_loss(s4, t2, c, 0.1, 0.04).loss == doctest::Approx(base).epsilon(1e-12));
  CHECK(base >= 0.0);
}

TEST_CASE("dino loss gradient with respect to student logits") {
  Rng rng(4);
  std::vector<Eigen::VectorXd> s4, t2;
  for (int i = 0; i < 4; ++i) s4.push_back(gaussian(10, rng));
  for (int i = 0; i < 2; ++i) t2.push_back(gaussian(10, rng));
  const Eigen::VectorXd c = gaussian(10, rng, 0.1);
  const DinoLoss dl = dino_loss(s4, t2, c, 0.1, 0.04);
  double worst = 0.0;
  for (std::size_t v = 0; v < 4; ++v) {
    Eigen::VectorXd numeric(10);
    for (Index k = 0; k < 10; ++k) {
      auto up = s4, down = s4;
      up[v][k] += 1e-6;
      down[v][k] -= 1e-6;
      numeric[k] = (dino_loss(up, t2, c, 0.1, 0.04).loss - dino_loss(down, t2, c, 0.1, 0.04).loss) / 2e-6;
    }
    worst = std::max(worst, testing::relative_error(dl.dstudent[v], numeric));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("teacher ema") {
  ParameterStore<float> student, teacher;
  student.add_weight("w", {3});
  teacher.add_weight("w", {3});
  student.value(0).setOnes();
  teacher.value(0).setZero();
  teacher_ema_update(teacher, student, 1.0);
  CHECK(teacher.value(0).isZero());
  teacher_ema_update(teacher, student, 0.9995);
  CHECK(teacher.value(0)[0] == doctest::Approx(0.0005).epsilon(1e-4));
  const float before = teacher.value(0)[0];
  teacher_ema_update(teacher, student, 0.5);
  CHECK(teacher.value(0)[0] > before);
  CHECK(teacher.value(0)[0] < 1.f);
  teacher_ema_update(teacher, student, 0.0);
  CHECK(teacher.value(0) == student.value(0));

  CHECK(ema_momentum_at_step(0, 100, 0.9995) == 0.9995);
  CHECK(ema_momentum_at_step(100, 100, 0.9995) == 1.0);
  CHECK(ema_momentum_at_step(50, 100, 0.9995) == doctest::Approx(0.99975));
}

TEST_CASE("center update") {
  Eigen::VectorXd c = Eigen::VectorXd::Constant(3, 2.0);
  update_center(c, Eigen::MatrixXd::Constant(3, 4, 2.0), 0.9);
  CHECK(c == Eigen::VectorXd::Constant(3, 2.0));
  Eigen::MatrixXd batch(3, 2);
  batch << 1, 3, 2, 4, 0, 0;
  update_center(c, batch, 0.0);
  CHECK(c == Eigen::Vector3d(2, 3, 0));

  // Geometric convergence: after n steps the gap is ρ^n of the start.
  Eigen::VectorXd d = Eigen::VectorXd::Zero(1);
  for (int n = 1; n <= 30; ++n) {
    update_center(d, Eigen::MatrixXd::Constant(1, 2, 5.0), 0.9);
    CHECK(std::abs((5.0 - d[0]) - 5.0 * std::pow(0.9, n)) < 1e-12);
  }
}

TEST_CASE("sequence order examples") {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) CHECK(make_sop_example(1, rng).label == 0);
  int shuffled = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto ex = make_sop_example(4, rng);
    std::vector<std::size_t> sorted = ex.permutation;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(sorted == std::vector<std::size_t>{0, 1, 2, 3});
    const bool identity = std::is_sorted(ex.permutation.begin(), ex.permutation.end());
    CHECK(ex.label == int(!identity));
    shuffled += ex.label;
  }
  CHECK(std::abs(shuffled / 10000.0 - 2.0 / 3.0) <= 0.02);
  for (int i = 0; i < 50; ++i) {
    const auto ex = make_sop_example(2, rng);
    if (ex.label) CHECK(ex.permutation == std::vector<std::size_t>{1, 0});
  }
}

TEST_CASE("sequence order batch keeps deltas chronological") {
  Rng rng(6);
  std::vector<std::pair<Eigen::MatrixXf, Eigen::VectorXd>> seqs;
  for (int i = 0; i < 20; ++i) {
    Eigen::MatrixXf e = Eigen::MatrixXf::Random(8, 3);
    seqs.emplace_back(e, compute_time_deltas({0.0, 2.0, 7.0}, 7.0));
  }
  const auto batch = make_sop_batch(seqs, rng);
  REQUIRE(batch.size() == 20);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(batch[i].embeddings == seqs[i].first);
    CHECK(batch[i].deltas == seqs[i].second);
  }
}

TEST_CASE("sop loss") {
  CHECK(sop_loss({20.0, -20.0}, {1, 0}) < 1e-6);
  CHECK(sop_loss({0.0, 0.0}, {1, 0}) == doctest::Approx(std::log(2.0)));
  const double l8 = std::log(0.8 / 0.2), l4 = std::log(0.4 / 0.6);
  CHECK(sop_loss({l8, l4}, {1, 0}) == doctest::Approx(-(std::log(0.8) + std::log(0.6)) / 2.0).epsilon(1e-12));
  std::vector<double> d;
  sop_loss({l8, l4}, {1, 0}, &d);
  CHECK(d[0] == doctest::Approx((0.8 - 1.0) / 2.0));
  CHECK(d[1] == doctest::Approx(0.4 / 2.0));
}

TEST_CASE("backbone step: teacher moves only through ema") {
  DinoState st = make_dino_state(BackboneConfig{4, {1, 1, 1, 1}, 1}, tiny_head(), 1);
  Rng rng(7);
  std::vector<MultiCropViews> batch{random_views(rng), random_views(rng)};
  const ParameterStore<float> teacher_before = st.teacher;
  const ParameterStore<float> student_before = st.student;
  const StepStats stats = pretrain_backbone_step(st, batch, 1e-3, 0.05, 1.0, 1.0);
  CHECK(std::isfinite(stats.loss));
  CHECK(stats.grad_norm > 0.0);
  CHECK(stores_equal(st.teacher, teacher_before));
  CHECK_FALSE(stores_equal(st.student, student_before));
  CHECK(st.center.cwiseAbs().sum() > 0.0);

  pretrain_backbone_step(st, batch, 1e-3, 0.05, 1.0, 0.0);
  CHECK(stores_equal(st.teacher, st.student));
}

TEST_CASE("encoder step leaves the backbone frozen") {
  ModelConfig m;
  m.backbone = BackboneConfig{16, {1, 1, 1, 1}, 4};
  m.encoder.hidden = 128;
  m.encoder.heads = 1;
  m.encoder.layers = 1;
  m.encoder.ff_dim = 256;
  SequenceState st = make_sequence_state(m, 2);
  set_trainable(st, {"encoder.", "pooler."});
  Rng rng(8);
  std::vector<std::pair<Eigen::MatrixXf, Eigen::VectorXd>> seqs;
  for (int i = 0; i < 6; ++i) {
    std::vector<Volume> visits{testing::random_volume(4, {9, 9, 9}, rng), testing::random_volume(4, {9, 9, 9}, rng),
                               testing::random_volume(4, {9, 9, 9}, rng)};
    Eigen::MatrixXf e(128, 3);
    for (Index v = 0; v < 3; ++v) e.col(v) = st.model.backbone().embed(st.store, visits[std::size_t(v)]);
    seqs.emplace_back(e, compute_time_deltas({0.0, 4.0, 9.0}, 9.0));
  }
  auto batch = make_sop_batch(seqs, rng);
  batch[0].example = SopExample{{2, 0, 1}, 1};
  const ParameterStore<float> before = st.store;
  Rng dropout(1);
  const StepStats stats = pretrain_encoder_step(st, batch, 1e-3, 0.05, 1.0, dropout);
  CHECK(std::isfinite(stats.loss));
  CHECK(stats.grad_norm > 0.0);
  CHECK(stores_equal(st.store, before, "backbone."));
  CHECK_FALSE(stores_equal(st.store, before, "encoder."));
  CHECK_FALSE(stores_equal(st.store, before, "pooler."));
  CHECK(st.store.info(st.store.handle("backbone.stem.conv.weight")).shape.back() == 4);
}

}  // TEST_SUITE
