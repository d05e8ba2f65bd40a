#pragma once

// Style-vector alignment, cross-entropy and soft Dice losses, each with its
// analytic gradient.

#include <vector>

#include "s3d/imagery.hpp"
#include "s3d/style.hpp"

namespace s3d {

struct LossConfig {
  double epsilon = 1e-6;
  double lambda_sv = 1.0;
  double lambda_ce = 1.0;
  double lambda_dice = 1.0;

  void validate() const;
};

struct LossReport {
  double l_sv = 0.0;
  double l_ce = 0.0;
  double l_dice = 0.0;
  double l_total = 0.0;
};

inline constexpr double kLogClamp = 1e-12;

// Squared L2 distance summed over all L x D entries (no averaging).
double style_vector_loss(const StyleVector& w_plus, const BottleneckEmbedding& w_e);
// d/dw_e; the gradient w.r.t. w_plus is its negation.
std::vector<double> style_vector_loss_grad(const StyleVector& w_plus,
                                           const BottleneckEmbedding& w_e);

// Mean over pixels of -log(max(yhat_true, 1e-12)).
double cross_entropy_loss(const OneHotMask& y, const ProbMap& yhat);
// d/dyhat, (pixel, class) layout; zero where the clamp is active.
std::vector<double> cross_entropy_loss_grad(const OneHotMask& y, const ProbMap& yhat);

// 1 - mean over all C classes of 2*sum(yhat*y) / (sum(yhat) + sum(y) + eps).
double dice_loss(const OneHotMask& y, const ProbMap& yhat, double epsilon);
std::vector<double> dice_loss_grad(const OneHotMask& y, const ProbMap& yhat,
                                   double epsilon);

LossReport total_loss(double l_sv, double l_ce, double l_dice, const LossConfig& cfg);

// Chain rule through the per-pixel softmax: dL/dz = p * (g - <g, p>).
std::vector<double> softmax_backward(const ProbMap& probs,
                                     const std::vector<double>& dprobs);

}  // namespace s3d
