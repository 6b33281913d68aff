#pragma once

// Self-distillation of the backbone and sequence-order prediction for the
// encoder.

#include "hccnet/model.hpp"

#include <json.hpp>

namespace hccnet {

struct DinoHeadConfig {
  Index hidden = 2048;
  Index bottleneck = 256;
  Index prototypes = 1024;  // K
  double student_temperature = 0.1;
  double teacher_temperature = 0.04;
  double center_momentum = 0.9;

  void validate() const;
};

void to_json(nlohmann::json& j, const DinoHeadConfig& c);
void from_json(const nlohmann::json& j, DinoHeadConfig& c);

template <typename Scalar>
struct DinoHeadCache {
  Mat<Scalar> input, h1, a1, h2, a2, projected, unit;
  Scalar projected_norm = 0;
  Mat<Scalar> prototypes;  // row-normalized last-layer weights
  Vec<Scalar> prototype_norms;
};

/// MLP (in→hidden→hidden→bottleneck, GELU between) → L2 normalize →
/// weight-normalized linear to K prototypes. Produces logits.
struct DinoHead {
  LinearHandles l1, l2, l3;
  std::size_t last = 0;  // [K, bottleneck], rows normalized on use

  DinoHead() = default;
  template <typename Scalar>
  DinoHead(ParameterStore<Scalar>& s, Index in, const DinoHeadConfig& c, const std::string& p = "dino_head") {
    l1 = LinearHandles::add(s, p + ".mlp.0", in, c.hidden);
    l2 = LinearHandles::add(s, p + ".mlp.1", c.hidden, c.hidden);
    l3 = LinearHandles::add(s, p + ".mlp.2", c.hidden, c.bottleneck);
    last = s.add_weight(p + ".last_layer.weight_v", {c.prototypes, c.bottleneck});
  }

  template <typename Scalar>
  Vec<Scalar> forward(const ParameterStore<Scalar>& s, const Vec<Scalar>& x, DinoHeadCache<Scalar>* c = nullptr) const {
    Mat<Scalar> in = x;
    Mat<Scalar> h1 = apply_linear(s, l1, in);
    Mat<Scalar> a1 = ops::gelu(h1);
    Mat<Scalar> h2 = apply_linear(s, l2, a1);
    Mat<Scalar> a2 = ops::gelu(h2);
    Mat<Scalar> pr = apply_linear(s, l3, a2);
    const Scalar norm = std::max(pr.norm(), Scalar(1e-12));
    Mat<Scalar> unit = pr / norm;
    auto v = s.matrix(last);
    Vec<Scalar> row_norms = v.rowwise().norm().cwiseMax(Scalar(1e-12));
    Mat<Scalar> w = v.array().colwise() / row_norms.array();
    Vec<Scalar> logits = w * unit;
    if (c) {
      c->input = std::move(in);
      c->h1 = std::move(h1);
      c->a1 = std::move(a1);
      c->h2 = std::move(h2);
      c->a2 = std::move(a2);
      c->projected = std::move(pr);
      c->unit = std::move(unit);
      c->projected_norm = norm;
      c->prototypes = std::move(w);
      c->prototype_norms = std::move(row_norms);
    }
    return logits;
  }

  /// dL/dinput from dL/dlogits.
  template <typename Scalar>
  Vec<Scalar> backward(const ParameterStore<Scalar>& s, const DinoHeadCache<Scalar>& c, const Vec<Scalar>& dlogits,
                       Gradients<Scalar>& g) const {
    Mat<Scalar> dw = dlogits * c.unit.transpose();  // K × bottleneck
    // Through the row normalization: dv = (dw − w (w·dw)) / ||v||.
    Vec<Scalar> proj = c.prototypes.cwiseProduct(dw).rowwise().sum();
    Mat<Scalar> dv = (dw - c.prototypes.cwiseProduct(proj.replicate(1, dw.cols())));
    dv = dv.array().colwise() / c.prototype_norms.array();
    g.matrix(last) += dv;
    Vec<Scalar> dunit = c.prototypes.transpose() * dlogits;
    const Scalar along = c.unit.col(0).dot(dunit);
    Mat<Scalar> dpr = (dunit - c.unit.col(0) * along) / c.projected_norm;
    Mat<Scalar> da2 = apply_linear_backward(s, l3, dpr, c.a2, g);
    Mat<Scalar> dh2 = ops::gelu_backward(da2, c.h2);
    Mat<Scalar> da1 = apply_linear_backward(s, l2, dh2, c.a1, g);
    Mat<Scalar> dh1 = ops::gelu_backward(da1, c.h1);
    return apply_linear_backward(s, l1, dh1, c.input, g).col(0);
  }
};

/// Softmax over prototypes at a temperature.
template <typename Scalar>
Vec<Scalar> dino_head_forward(const ParameterStore<Scalar>& s, const DinoHead& head, const Vec<Scalar>& embedding,
                              double temperature) {
  Vec<Scalar> logits = head.forward(s, embedding);
  return ops::softmax<Scalar>(logits / Scalar(temperature));
}

/// Backbone + projection head sharing one store.
class DinoNetwork {
 public:
  DinoNetwork() = default;
  template <typename Scalar>
  DinoNetwork(const BackboneConfig& b, const DinoHeadConfig& h, ParameterStore<Scalar>& s)
      : backbone_(b, s), head_(s, b.embedding_dim(), h) {}

  const Backbone& backbone() const { return backbone_; }
  const DinoHead& head() const { return head_; }

  template <typename Scalar>
  struct Cache {
    BackboneCache<Scalar> backbone;
    DinoHeadCache<Scalar> head;
  };

  template <typename Scalar>
  Vec<Scalar> forward(const ParameterStore<Scalar>& s, const Volume& view, Cache<Scalar>* c = nullptr) const {
    Vec<Scalar> e = backbone_.forward(s, to_feature_map<Scalar>(view), c ? &c->backbone : nullptr);
    return head_.forward(s, e, c ? &c->head : nullptr);
  }

  template <typename Scalar>
  void backward(const ParameterStore<Scalar>& s, const Cache<Scalar>& c, const Vec<Scalar>& dlogits,
                Gradients<Scalar>& g) const {
    backbone_.backward(s, c.backbone, head_.backward(s, c.head, dlogits, g), g);
  }

 private:
  Backbone backbone_;
  DinoHead head_;
};

// ---- DINO objective --------------------------------------------------------

struct DinoLoss {
  double loss = 0.0;
  std::vector<Eigen::VectorXd> dstudent;  // dL/dlogits per student view
};

/// Mean cross-entropy H(p_t(g), p_s(v)) over ordered pairs of a teacher
/// global view g and a different student view v. Student views list the
/// global views first, in the same order as the teacher views.
DinoLoss dino_loss(const std::vector<Eigen::VectorXd>& student_logits, const std::vector<Eigen::VectorXd>& teacher_logits,
                   const Eigen::VectorXd& center, double student_temperature, double teacher_temperature);

/// Same objective on probability vectors directly (no temperatures/centering).
double dino_cross_entropy(const std::vector<Eigen::VectorXd>& student_probs,
                          const std::vector<Eigen::VectorXd>& teacher_probs);

/// θ_t ← m·θ_t + (1−m)·θ_s for every mirrored tensor.
template <typename Scalar>
void teacher_ema_update(ParameterStore<Scalar>& teacher, const ParameterStore<Scalar>& student, double m) {
  if (teacher.size() != student.size()) throw ShapeError("teacher and student stores differ");
  for (std::size_t h = 0; h < teacher.size(); ++h) {
    if (!teacher.info(h).ema_mirrored) continue;
    if (teacher.value(h).size() != student.value(h).size()) throw ShapeError("teacher/student shape mismatch");
    if (m == 1.0) continue;
    if (m == 0.0) {
      teacher.value(h) = student.value(h);
      continue;
    }
    teacher.value(h) = Scalar(m) * teacher.value(h) + Scalar(1.0 - m) * student.value(h);
  }
}

/// c ← ρ·c + (1−ρ)·mean of the batch columns.
void update_center(Eigen::VectorXd& center, const Eigen::MatrixXd& teacher_logits, double momentum);

// ---- sequence-order prediction ----------------------------------------------

struct SopExample {
  std::vector<std::size_t> permutation;  // embedding index placed in each slot
  int label = 0;                         // 1 = shuffled
};

/// Multi-visit sequences are shuffled with probability `p_shuffle` by a
/// uniformly drawn non-identity permutation; single visits stay label 0.
SopExample make_sop_example(std::size_t visits, Rng& rng, double p_shuffle = 2.0 / 3.0);

struct SopBatch {
  Eigen::MatrixXf embeddings;   // hidden × visits, chronological
  Eigen::VectorXd deltas;       // chronological, cls first
  SopExample example;
};

std::vector<SopBatch> make_sop_batch(std::vector<std::pair<Eigen::MatrixXf, Eigen::VectorXd>> sequences, Rng& rng,
                                     double p_shuffle = 2.0 / 3.0);

/// Mean binary cross-entropy of sigmoid(logit); fills dL/dlogit when asked.
double sop_loss(const std::vector<double>& logits, const std::vector<int>& labels,
                std::vector<double>* dlogits = nullptr);

}  // namespace hccnet
