#include "mocnn/loss.hpp"

#include <algorithm>
#include <cmath>

namespace mocnn {

namespace {

void require_same_shape(const Tensord& a, const Tensord& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(Errc::ShapeMismatch, std::string(what) + ": " + shape_string(a.shape()) + " vs " +
                                         shape_string(b.shape()));
  }
}

void require_rows(const Tensord& t, std::size_t multiple, const char* what) {
  if (t.rank() != 2 || t.dim(0) == 0 || t.dim(1) == 0 || t.dim(1) % multiple) {
    throw Error(Errc::ShapeMismatch, std::string(what) + " expects B x 3k, got " + shape_string(t.shape()));
  }
}

double clamp_probability(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

double point_distance(const double* a, const double* b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Adds scale * d|a - b|/da to out[0..3]; zero at coincidence.
void add_distance_grad(const double* a, const double* b, double scale, double* out) {
  const double d = point_distance(a, b);
  if (d == 0) return;
  for (int k = 0; k < 3; ++k) out[k] += scale * (a[k] - b[k]) / d;
}

}  // namespace

ClassWeights fg_bg_weights(std::span<const double> gt_mask) {
  std::size_t fg = 0;
  for (double g : gt_mask) fg += g > 0.5 ? 1 : 0;
  const std::size_t n = gt_mask.size();
  if (fg == 0 || fg == n) throw Error(Errc::DegenerateMask, "mask needs both foreground and background");
  const double p_fg = double(fg) / double(n);
  const double p_bg = double(n - fg) / double(n);
  return {1.0 / p_fg, 1.0 / p_bg};
}

double mask_loss(const Tensord& est_probs, const Tensord& gt_mask) {
  require_same_shape(est_probs, gt_mask, "mask_loss");
  return mask_loss(est_probs, gt_mask, fg_bg_weights(gt_mask.values()));
}

double mask_loss(const Tensord& est_probs, const Tensord& gt_mask, ClassWeights w) {
  require_same_shape(est_probs, gt_mask, "mask_loss");
  if (gt_mask.empty()) throw Error(Errc::ShapeMismatch, "empty mask");
  // The printed per-pixel formula swaps estimate and ground truth around the
  // logarithm, which is undefined for a binary ground truth. Cross-entropy
  // takes the ground truth outside and the estimate inside the log.
  double total = 0;
  for (std::size_t i = 0; i < gt_mask.size(); ++i) {
    const double g = gt_mask[i];
    const double p = clamp_probability(est_probs[i]);
    total += -w.fg * g * std::log(p) - w.bg * (1.0 - g) * std::log(1.0 - p);
  }
  return total / double(gt_mask.size());
}

double joint_loss(const Tensord& est, const Tensord& gt) {
  require_same_shape(est, gt, "joint_loss");
  require_rows(est, 3, "joint_loss");
  const std::size_t batch = est.dim(0), joints = est.dim(1) / 3;
  double total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    double sample = 0;
    for (std::size_t j = 0; j < joints; ++j) {
      sample += point_distance(gt.data() + b * 3 * joints + 3 * j, est.data() + b * 3 * joints + 3 * j);
    }
    total += sample / double(joints);
  }
  return total / double(batch);
}

double base_loss(const Tensord& est, const Tensord& gt) {
  require_same_shape(est, gt, "base_loss");
  if (est.rank() != 2 || est.dim(1) != 3 || est.dim(0) == 0) {
    throw Error(Errc::ShapeMismatch, "base_loss expects B x 3");
  }
  double total = 0;
  for (std::size_t b = 0; b < est.dim(0); ++b) total += point_distance(gt.data() + 3 * b, est.data() + 3 * b);
  return total / double(est.dim(0));
}

double type_loss(const Tensord& pred_probs, std::span<const int> labels) {
  if (pred_probs.rank() != 2 || pred_probs.dim(0) != labels.size() || labels.empty()) {
    throw Error(Errc::ShapeMismatch, "type_loss expects B x C probabilities and B labels");
  }
  const std::size_t classes = pred_probs.dim(1);
  double total = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    double row = 0;
    for (std::size_t c = 0; c < classes; ++c) row += pred_probs[b * classes + c];
    if (std::abs(row - 1.0) > 1e-6) throw Error(Errc::InvalidArgument, "probability row does not sum to 1");
    if (labels[b] < 0 || std::size_t(labels[b]) >= classes) {
      throw Error(Errc::BadLabel, "label " + std::to_string(labels[b]) + " with " + std::to_string(classes) +
                                      " classes");
    }
    total += -std::log(std::max(pred_probs[b * classes + std::size_t(labels[b])], kProbabilityClamp));
  }
  return total / double(labels.size());
}

LossBreakdown combined_loss(double mask, double jcoords, double bcoords, double type, const LossWeights& w) {
  LossBreakdown out{mask, jcoords, bcoords, type, 0};
  out.final = w.mask * mask + w.jcoords * jcoords + w.bcoords * bcoords + w.type * type;
  return out;
}

LossBreakdown evaluate_loss(const NetOutputs& outputs, const LossTargets& targets, const LossWeights& weights,
                            OutputGrads* grads) {
  const auto class_weights = fg_bg_weights(targets.masks.values());
  const LossBreakdown loss = combined_loss(mask_loss(outputs.mask_probs, targets.masks, class_weights),
                                           joint_loss(outputs.joints, targets.joints),
                                           base_loss(outputs.bases, targets.bases),
                                           type_loss(outputs.type_probs, targets.types), weights);
  if (!std::isfinite(loss.final)) throw Error(Errc::NonFinite, "loss");
  if (!grads) return loss;

  grads->mask_probs = Tensord(outputs.mask_probs.shape());
  const double pixels = double(targets.masks.size());
  for (std::size_t i = 0; i < targets.masks.size(); ++i) {
    const double g = targets.masks[i];
    const double p = clamp_probability(outputs.mask_probs[i]);
    grads->mask_probs[i] =
        weights.mask * (-class_weights.fg * g / p + class_weights.bg * (1.0 - g) / (1.0 - p)) / pixels;
  }

  const std::size_t batch = outputs.joints.dim(0);
  const std::size_t joints = outputs.joints.dim(1) / 3;
  grads->joints = Tensord(outputs.joints.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < joints; ++j) {
      const std::size_t off = b * 3 * joints + 3 * j;
      add_distance_grad(outputs.joints.data() + off, targets.joints.data() + off,
                        weights.jcoords / double(joints * batch), grads->joints.data() + off);
    }
  }
  grads->bases = Tensord(outputs.bases.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    add_distance_grad(outputs.bases.data() + 3 * b, targets.bases.data() + 3 * b, weights.bcoords / double(batch),
                      grads->bases.data() + 3 * b);
  }
  grads->type_probs = Tensord(outputs.type_probs.shape());
  const std::size_t classes = outputs.type_probs.dim(1);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t k = b * classes + std::size_t(targets.types[b]);
    const double p = outputs.type_probs[k];
    if (p > kProbabilityClamp) grads->type_probs[k] = -weights.type / (p * double(batch));
  }
  return loss;
}

}  // namespace mocnn
