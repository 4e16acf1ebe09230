#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "crl/rng.hpp"
#include "crl/tensor.hpp"

namespace crl {

enum class SslMethod { simclr, moco, barlow };

std::string to_string(SslMethod m);
SslMethod parse_ssl_method(const std::string& s);

struct SSLConfig {
  SslMethod method = SslMethod::simclr;
  double temperature = 0.5;  // 0.07 is the usual MoCo choice
  double barlow_lambda = 5e-3;
  std::size_t moco_queue_size = 1024;
  double moco_momentum = 0.99;

  void validate() const;
};

struct JointLossWeights {
  double alpha = 1.0;
  double beta = 0.0;

  void validate() const;
};

// Loss value with gradients for both inputs.
struct PairLoss {
  double value = 0.0;
  Matrix grad_a;
  Matrix grad_b;
};

// Loss value with the gradient of the trainable input only; the other
// argument is a stop-gradient target.
struct TargetLoss {
  double value = 0.0;
  Matrix grad;
};

struct BarlowLoss : PairLoss {
  // Dimensions whose batch variance fell below the numeric guard.
  std::size_t zero_variance_dims = 0;
};

// FIFO of unit-norm keys, at most `capacity` entries.
class NegativeQueue {
 public:
  explicit NegativeQueue(std::size_t capacity);

  // Rows are L2-normalized before insertion; oldest entries are evicted first.
  void enqueue(const Matrix& keys);
  // Fills the queue with random unit vectors of dimension `dim`.
  void fill_random(std::size_t dim, Rng& rng);
  void clear() { entries_.clear(); }

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  const std::vector<double>& entry(std::size_t i) const { return entries_[i]; }
  Matrix as_matrix() const;

 private:
  std::size_t capacity_;
  std::deque<std::vector<double>> entries_;
};

// NT-Xent over the 2B stacked views with cosine similarity; positives are
// (a_i, b_i), every other row is a negative; averaged over all 2B anchors.
PairLoss nt_xent(const Matrix& z_a, const Matrix& z_b, double temperature);

// InfoNCE with one positive key per query and the queue as negatives.
// Gradient flows to q only.
TargetLoss moco_loss(const Matrix& q, const Matrix& k_pos, const NegativeQueue& queue, double temperature);

// sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2 with C the cross-correlation
// of per-dimension batch-standardized embeddings.
BarlowLoss barlow_twins(const Matrix& z_a, const Matrix& z_b, double lambda);

// Mean negative log-softmax of the true class.
TargetLoss cross_entropy(const Matrix& logits, std::span<const int> labels);

TargetLoss distill_mse(const Matrix& student, const Matrix& teacher);

// NT-Xent with (student_i, teacher_i) as positives; the teacher side is a
// stop-gradient target.
TargetLoss distill_sim(const Matrix& student, const Matrix& teacher, double temperature);

// temperature^2 * mean_b KL(softmax(teacher/T) || softmax(student/T)).
TargetLoss distill_kld(const Matrix& student_logits, const Matrix& teacher_logits, double temperature);

double joint_loss(double sup, double ssl, const JointLossWeights& w);

}  // namespace crl
