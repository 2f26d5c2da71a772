#pragma once

#include <span>

#include "mocnn/model.hpp"
#include "mocnn/tensor.hpp"

namespace mocnn {

struct LossWeights {
  double mask = 1.0;
  double jcoords = 1.5;
  double bcoords = 1.5;
  double type = 0.3;
};

struct LossBreakdown {
  double mask = 0;
  double jcoords = 0;
  double bcoords = 0;
  double type = 0;
  double final = 0;
};

struct ClassWeights {
  double fg = 1;
  double bg = 1;
};

/// Inverse class frequencies of a binary ground-truth mask.
ClassWeights fg_bg_weights(std::span<const double> gt_mask);

/// Weighted binary cross-entropy averaged over all pixels:
///   l = -w_fg * g * log(p) - w_bg * (1 - g) * log(1 - p)
/// with g the ground truth and p the (clamped) estimate inside the logarithm.
/// The class weights come from `gt` itself.
double mask_loss(const Tensord& est_probs, const Tensord& gt_mask);
double mask_loss(const Tensord& est_probs, const Tensord& gt_mask, ClassWeights weights);

/// Batch mean of the per-sample mean Euclidean joint distance. Rows hold
/// 3 * n_joints coordinates.
double joint_loss(const Tensord& est, const Tensord& gt);
/// Batch mean of the Euclidean base distance; rows hold 3 coordinates.
double base_loss(const Tensord& est, const Tensord& gt);
/// Batch mean of -log(pred[label]), the probability clamped at 1e-7.
double type_loss(const Tensord& pred_probs, std::span<const int> labels);

/// Weighted sum of the four objective losses.
LossBreakdown combined_loss(double mask, double jcoords, double bcoords, double type, const LossWeights& w);

struct LossTargets {
  const Tensord& masks;   // B x H x W
  const Tensord& joints;  // B x 3*n_joints
  const Tensord& bases;   // B x 3
  std::span<const int> types;
};

/// Loss breakdown of a forward pass and, optionally, its gradient with
/// respect to every network output.
LossBreakdown evaluate_loss(const NetOutputs& outputs, const LossTargets& targets, const LossWeights& weights,
                            OutputGrads* grads = nullptr);

}  // namespace mocnn
