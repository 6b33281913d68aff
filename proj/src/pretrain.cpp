#include "hccnet/pretrain.hpp"

#include <algorithm>
#include <numeric>

namespace hccnet {

using nlohmann::json;

void DinoHeadConfig::validate() const {
  if (prototypes < 2) throw std::invalid_argument("need at least two prototypes");
  if (!(teacher_temperature > 0.0 && teacher_temperature < student_temperature))
    throw std::invalid_argument("need 0 < teacher temperature < student temperature");
  if (hidden < 1 || bottleneck < 1) throw std::invalid_argument("head dims must be positive");
  if (!(center_momentum >= 0.0 && center_momentum <= 1.0)) throw std::invalid_argument("center momentum in [0,1]");
}

void to_json(json& j, const DinoHeadConfig& c) {
  j = json{{"hidden", c.hidden},
           {"bottleneck", c.bottleneck},
           {"prototypes", c.prototypes},
           {"student_temperature", c.student_temperature},
           {"teacher_temperature", c.teacher_temperature},
           {"center_momentum", c.center_momentum}};
}

void from_json(const json& j, DinoHeadConfig& c) {
  const DinoHeadConfig d = c;
  c.hidden = j.value("hidden", d.hidden);
  c.bottleneck = j.value("bottleneck", d.bottleneck);
  c.prototypes = j.value("prototypes", d.prototypes);
  c.student_temperature = j.value("student_temperature", d.student_temperature);
  c.teacher_temperature = j.value("teacher_temperature", d.teacher_temperature);
  c.center_momentum = j.value("center_momentum", d.center_momentum);
}

DinoLoss dino_loss(const std::vector<Eigen::VectorXd>& student_logits, const std::vector<Eigen::VectorXd>& teacher_logits,
                   const Eigen::VectorXd& center, double student_temperature, double teacher_temperature) {
  if (teacher_logits.empty() || student_logits.size() < teacher_logits.size())
    throw std::invalid_argument("view-count mismatch: teacher views must be a prefix of the student views");
  std::vector<Eigen::VectorXd> teacher_probs;
  for (const auto& t : teacher_logits) {
    if (t.size() != center.size()) throw ShapeError("teacher logits and center differ in size");
    teacher_probs.push_back(ops::softmax<double>((t - center) / teacher_temperature));
  }
  std::vector<Eigen::VectorXd> student_logp, student_probs;
  for (const auto& s : student_logits) {
    student_logp.push_back(ops::log_softmax<double>(s / student_temperature));
    student_probs.push_back(student_logp.back().array().exp());
  }
  DinoLoss out;
  out.dstudent.assign(student_logits.size(), Eigen::VectorXd::Zero(center.size()));
  std::size_t pairs = 0;
  for (std::size_t g = 0; g < teacher_probs.size(); ++g)
    for (std::size_t v = 0; v < student_logits.size(); ++v) {
      if (v == g) continue;
      ++pairs;
      out.loss -= teacher_probs[g].dot(student_logp[v]);
      out.dstudent[v] += (student_probs[v] - teacher_probs[g]) / student_temperature;
    }
  out.loss /= double(pairs);
  for (auto& d : out.dstudent) d /= double(pairs);
  return out;
}

double dino_cross_entropy(const std::vector<Eigen::VectorXd>& student_probs,
                          const std::vector<Eigen::VectorXd>& teacher_probs) {
  double loss = 0.0;
  std::size_t pairs = 0;
  for (std::size_t g = 0; g < teacher_probs.size(); ++g)
    for (std::size_t v = 0; v < student_probs.size(); ++v) {
      if (v == g) continue;
      ++pairs;
      loss -= teacher_probs[g].dot(student_probs[v].array().log().matrix());
    }
  return loss / double(pairs);
}

void update_center(Eigen::VectorXd& center, const Eigen::MatrixXd& teacher_logits, double momentum) {
  if (teacher_logits.rows() != center.size()) throw ShapeError("center and logits differ in size");
  center = momentum * center + (1.0 - momentum) * teacher_logits.rowwise().mean();
}

SopExample make_sop_example(std::size_t visits, Rng& rng, double p_shuffle) {
  SopExample ex;
  ex.permutation.resize(visits);
  std::iota(ex.permutation.begin(), ex.permutation.end(), std::size_t(0));
  if (visits < 2) return ex;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) >= p_shuffle) return ex;
  // Rejection keeps the draw uniform over the n! − 1 non-identity orders.
  const auto identity = ex.permutation;
  do {
    std::shuffle(ex.permutation.begin(), ex.permutation.end(), rng);
  } while (ex.permutation == identity);
  ex.label = 1;
  return ex;
}

std::vector<SopBatch> make_sop_batch(std::vector<std::pair<Eigen::MatrixXf, Eigen::VectorXd>> sequences, Rng& rng,
                                     double p_shuffle) {
  std::vector<SopBatch> out;
  for (auto& [emb, deltas] : sequences) {
    SopBatch b;
    b.example = make_sop_example(std::size_t(emb.cols()), rng, p_shuffle);
    b.embeddings = std::move(emb);
    b.deltas = std::move(deltas);
    out.push_back(std::move(b));
  }
  return out;
}

double sop_loss(const std::vector<double>& logits, const std::vector<int>& labels, std::vector<double>* dlogits) {
  if (logits.empty() || logits.size() != labels.size()) throw std::invalid_argument("empty or misaligned batch");
  double loss = 0.0;
  const double n = double(logits.size());
  if (dlogits) dlogits->resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    loss += labels[i] ? ops::softplus(-z) : ops::softplus(z);
    if (dlogits) (*dlogits)[i] = (ops::sigmoid(z) - labels[i]) / n;
  }
  return loss / n;
}

}  // namespace hccnet
