#include "mocnn/model.hpp"

#include <algorithm>
#include <cmath>

#include "mocnn/layers.hpp"
#include "mocnn/random.hpp"

namespace mocnn {

namespace {

constexpr std::size_t kTrunkBlocks = 4;

std::string trunk_layer(std::size_t block) { return "trunk_conv" + std::to_string(block + 1); }

const std::array<const char*, 3> kMaskLayers = {"mask_conv_first", "mask_conv_secondlast", "mask_conv_last"};
const std::array<const char*, 6> kFcLayers = {"joint_fc1", "joint_fc2", "base_fc1", "base_fc2", "type_fc1", "type_fc2"};

std::uint64_t layer_stream(const std::string& layer) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : layer) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  return h;
}

// He-uniform: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
Tensord uniform_init(Shape shape, std::size_t fan_in, std::uint64_t seed) {
  Tensord t(std::move(shape));
  const double limit = std::sqrt(6.0 / double(fan_in));
  Rng rng(seed);
  for (auto& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

std::string weight_name(const std::string& layer) { return layer + ".weight"; }
std::string bias_name(const std::string& layer) { return layer + ".bias"; }

std::string layer_of(const std::string& param) { return param.substr(0, param.rfind('.')); }

Tensord clamp_probabilities(Tensord t) {
  for (auto& v : t.values()) v = std::clamp(v, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return t;
}

}  // namespace

ArchitectureSpec ArchitectureSpec::reduced() {
  ArchitectureSpec s;
  s.input_height = 16;
  s.input_width = 16;
  s.trunk_widths = {2, 2, 3, 3};
  s.mask_tap_block = 2;
  s.mask_widths = {2, 2};
  s.joint_hidden = 4;
  s.base_hidden = 3;
  s.type_hidden = 3;
  return s;
}

std::size_t ArchitectureSpec::trunk_height(std::size_t block) const {
  std::size_t h = input_height;
  for (std::size_t b = 0; b < block; ++b) h /= 2;
  return h;
}

std::size_t ArchitectureSpec::trunk_width(std::size_t block) const {
  std::size_t w = input_width;
  for (std::size_t b = 0; b < block; ++b) w /= 2;
  return w;
}

std::size_t ArchitectureSpec::flat_size() const {
  return trunk_widths[kTrunkBlocks - 1] * trunk_height(kTrunkBlocks) * trunk_width(kTrunkBlocks);
}

void ArchitectureSpec::validate() const {
  if (mask_tap_block < 1 || mask_tap_block > kTrunkBlocks) {
    throw Error(Errc::InvalidArgument, "mask tap block out of range");
  }
  const std::size_t scale = std::size_t{1} << mask_tap_block;
  if (input_height % scale || input_width % scale) {
    throw Error(Errc::InvalidArgument, "input size must be divisible by 2^mask_tap_block");
  }
  if (flat_size() == 0) throw Error(Errc::InvalidArgument, "input too small for the trunk");
}

MultiObjectiveNet MultiObjectiveNet::build(std::size_t n_joints, std::size_t n_types, std::uint64_t seed,
                                           const ArchitectureSpec& spec) {
  if (n_joints != 6 && n_joints != 7) throw Error(Errc::InvalidArgument, "n_joints must be 6 or 7");
  if (n_types < 1) throw Error(Errc::InvalidArgument, "n_types must be >= 1");
  spec.validate();
  MultiObjectiveNet net;
  net.spec_ = spec;
  net.n_joints_ = n_joints;
  net.n_types_ = n_types;

  const auto add_conv = [&](const std::string& layer, std::size_t in, std::size_t out) {
    const std::size_t fan_in = in * 9;
    net.params_.emplace_back(weight_name(layer),
                             uniform_init({out, in, 3, 3}, fan_in, derive_seed(seed, layer_stream(layer))));
    net.params_.emplace_back(bias_name(layer), Tensord({out}));
  };
  const auto add_fc = [&](const std::string& layer, std::size_t in, std::size_t out) {
    net.params_.emplace_back(weight_name(layer),
                             uniform_init({out, in}, in, derive_seed(seed, layer_stream(layer))));
    net.params_.emplace_back(bias_name(layer), Tensord({out}));
  };

  std::size_t channels = spec.input_channels;
  for (std::size_t b = 0; b < kTrunkBlocks; ++b) {
    add_conv(trunk_layer(b), channels, spec.trunk_widths[b]);
    channels = spec.trunk_widths[b];
  }
  const std::size_t tap_channels = spec.trunk_widths[spec.mask_tap_block - 1];
  add_conv(kMaskLayers[0], tap_channels, spec.mask_widths[0]);
  add_conv(kMaskLayers[1], spec.mask_widths[0], spec.mask_widths[1]);
  add_conv(kMaskLayers[2], spec.mask_widths[1], 1);
  const std::size_t flat = spec.flat_size();
  add_fc("joint_fc1", flat, spec.joint_hidden);
  add_fc("joint_fc2", spec.joint_hidden, 3 * n_joints);
  add_fc("base_fc1", flat, spec.base_hidden);
  add_fc("base_fc2", spec.base_hidden, 3);
  add_fc("type_fc1", flat, spec.type_hidden);
  add_fc("type_fc2", spec.type_hidden, n_types);
  return net;
}

std::vector<Parameterd*> MultiObjectiveNet::parameter_ptrs() {
  std::vector<Parameterd*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::size_t MultiObjectiveNet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw Error(Errc::InvalidArgument, "no parameter named " + name);
}

Parameterd& MultiObjectiveNet::parameter(const std::string& name) { return params_[index_of(name)]; }
const Parameterd& MultiObjectiveNet::parameter(const std::string& name) const {
  return params_[index_of(name)];
}

std::size_t MultiObjectiveNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<std::string> MultiObjectiveNet::layer_names() const {
  std::vector<std::string> names;
  for (const auto& p : params_) {
    const auto layer = layer_of(p.name);
    if (names.empty() || names.back() != layer) names.push_back(layer);
  }
  return names;
}

std::set<std::string> MultiObjectiveNet::trainable_layers() const {
  std::set<std::string> out;
  for (const auto& p : params_) {
    if (p.trainable) out.insert(layer_of(p.name));
  }
  return out;
}

void MultiObjectiveNet::set_layer_trainable(const std::string& layer, bool trainable) {
  bool found = false;
  for (auto& p : params_) {
    if (layer_of(p.name) == layer) {
      p.trainable = trainable;
      found = true;
    }
  }
  if (!found) throw Error(Errc::InvalidArgument, "no layer named " + layer);
}

void MultiObjectiveNet::set_all_trainable(bool trainable) {
  for (auto& p : params_) p.trainable = trainable;
}

bool MultiObjectiveNet::encoder_trainable() const {
  for (const auto& p : params_) {
    const auto layer = layer_of(p.name);
    if (p.trainable && (layer.starts_with("trunk_conv") || layer == kMaskLayers[0])) return true;
  }
  return false;
}

void MultiObjectiveNet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

EncodedFeatures MultiObjectiveNet::encode(const Tensord& image, EncoderTrace* trace) const {
  if (image.shape() != Shape{spec_.input_channels, spec_.input_height, spec_.input_width}) {
    throw Error(Errc::ShapeMismatch, "encode expects " +
                                         shape_string({spec_.input_channels, spec_.input_height,
                                                       spec_.input_width}) +
                                         ", got " + shape_string(image.shape()));
  }
  EncodedFeatures features;
  Tensord x = image;
  Tensord tap;
  if (trace) {
    trace->input = image;
    trace->block_relu.clear();
    trace->block_pooled.clear();
  }
  for (std::size_t b = 0; b < kTrunkBlocks; ++b) {
    const auto layer = trunk_layer(b);
    Tensord a = relu_forward(conv2d_forward(x, value(weight_name(layer)), value(bias_name(layer)), 1, 1));
    Tensord pooled = maxpool2_forward(a);
    if (trace) trace->block_relu.push_back(std::move(a));
    if (b + 1 == spec_.mask_tap_block) tap = pooled;
    x = std::move(pooled);
    if (trace) trace->block_pooled.push_back(x);
  }
  features.flat = x;
  features.flat.reshape({x.size()});
  features.mask_features =
      relu_forward(conv2d_forward(tap, value(weight_name(kMaskLayers[0])), value(bias_name(kMaskLayers[0])), 1, 1));
  return features;
}

NetOutputs MultiObjectiveNet::decode(std::span<const EncodedFeatures> features, DecoderTrace* trace) const {
  const std::size_t batch = features.size();
  if (batch == 0) throw Error(Errc::ShapeMismatch, "decode needs at least one sample");
  NetOutputs out;
  out.mask_probs = Tensord({batch, spec_.input_height, spec_.input_width});
  const std::size_t pixels = spec_.input_height * spec_.input_width;
  const std::size_t flat_size = spec_.flat_size();
  Tensord flat({batch, flat_size});
  if (trace) {
    trace->mask_hidden.clear();
    trace->mask_upsampled.clear();
  }
  for (std::size_t i = 0; i < batch; ++i) {
    if (features[i].flat.size() != flat_size) throw Error(Errc::ShapeMismatch, "feature size");
    std::copy_n(features[i].flat.data(), flat_size, flat.data() + i * flat_size);

    Tensord hidden = relu_forward(conv2d_forward(features[i].mask_features, value(weight_name(kMaskLayers[1])),
                                                 value(bias_name(kMaskLayers[1])), 1, 1));
    Tensord up = hidden;
    for (std::size_t k = 1; k < spec_.mask_tap_block; ++k) up = upsample2_forward(up);
    Tensord logits = upsample2_forward(
        conv2d_forward(up, value(weight_name(kMaskLayers[2])), value(bias_name(kMaskLayers[2])), 1, 1));
    const Tensord probs = clamp_probabilities(sigmoid_forward(logits));
    std::copy_n(probs.data(), pixels, out.mask_probs.data() + i * pixels);
    if (trace) {
      trace->mask_hidden.push_back(std::move(hidden));
      trace->mask_upsampled.push_back(std::move(up));
    }
  }

  const auto head = [&](const char* l1, const char* l2, Tensord* hidden_out) {
    Tensord hidden = relu_forward(fully_connected_forward(flat, value(weight_name(l1)), value(bias_name(l1))));
    Tensord y = fully_connected_forward(hidden, value(weight_name(l2)), value(bias_name(l2)));
    if (hidden_out) *hidden_out = std::move(hidden);
    return y;
  };
  out.joints = head("joint_fc1", "joint_fc2", trace ? &trace->joint_hidden : nullptr);
  out.bases = head("base_fc1", "base_fc2", trace ? &trace->base_hidden : nullptr);
  out.type_probs = softmax_forward(head("type_fc1", "type_fc2", trace ? &trace->type_hidden : nullptr));

  ensure_finite(out.mask_probs, "mask output");
  ensure_finite(out.joints, "joint output");
  ensure_finite(out.bases, "base output");
  ensure_finite(out.type_probs, "type output");
  if (trace) {
    trace->flat = std::move(flat);
    trace->outputs = out;
  }
  return out;
}

NetOutputs MultiObjectiveNet::forward(const Tensord& images) const {
  if (images.rank() != 4) throw Error(Errc::ShapeMismatch, "forward expects B x C x H x W");
  std::vector<EncodedFeatures> features;
  features.reserve(images.dim(0));
  for (std::size_t i = 0; i < images.dim(0); ++i) features.push_back(encode(images.slice(i)));
  return decode(features);
}

void MultiObjectiveNet::backward(std::span<const EncodedFeatures> features,
                                 std::span<const EncoderTrace> encoder_traces, const DecoderTrace& trace,
                                 const OutputGrads& grads) {
  const std::size_t batch = features.size();
  const bool need_encoder = encoder_trainable();
  if (need_encoder && encoder_traces.size() != batch) {
    throw Error(Errc::InvalidArgument, "encoder traces required while the encoder is trainable");
  }
  const auto& outs = trace.outputs;
  if (grads.mask_probs.shape() != outs.mask_probs.shape() || grads.joints.shape() != outs.joints.shape() ||
      grads.bases.shape() != outs.bases.shape() || grads.type_probs.shape() != outs.type_probs.shape()) {
    throw Error(Errc::ShapeMismatch, "output gradient shapes");
  }
  auto& P = params_;
  const auto W = [&](const std::string& l) -> Parameterd& { return P[index_of(weight_name(l))]; };
  const auto B = [&](const std::string& l) -> Parameterd& { return P[index_of(bias_name(l))]; };

  // Fully connected heads, batched.
  Tensord dflat({batch, spec_.flat_size()});
  const auto head_backward = [&](const char* l1, const char* l2, const Tensord& hidden, const Tensord& dy) {
    Tensord dhidden;
    fully_connected_backward(hidden, W(l2).value, dy, W(l2).grad, B(l2).grad, &dhidden);
    Tensord dpre = relu_backward(hidden, dhidden);
    Tensord dx;
    fully_connected_backward(trace.flat, W(l1).value, dpre, W(l1).grad, B(l1).grad, need_encoder ? &dx : nullptr);
    if (need_encoder) dflat.matrix() += dx.matrix();
  };
  head_backward("joint_fc1", "joint_fc2", trace.joint_hidden, grads.joints);
  head_backward("base_fc1", "base_fc2", trace.base_hidden, grads.bases);
  head_backward("type_fc1", "type_fc2", trace.type_hidden, softmax_backward(outs.type_probs, grads.type_probs));

  const std::size_t pixels = spec_.input_height * spec_.input_width;
  const std::size_t half_h = spec_.input_height / 2, half_w = spec_.input_width / 2;
  for (std::size_t i = 0; i < batch; ++i) {
    // Mask branch. The clamp passes no gradient where it is active.
    Tensord dlogits({1, spec_.input_height, spec_.input_width});
    for (std::size_t k = 0; k < pixels; ++k) {
      const double p = outs.mask_probs[i * pixels + k];
      const bool clamped = p <= kProbabilityClamp || p >= 1.0 - kProbabilityClamp;
      dlogits[k] = clamped ? 0.0 : grads.mask_probs[i * pixels + k] * p * (1.0 - p);
    }
    Tensord dlast = upsample2_backward(dlogits);
    dlast.reshape({1, half_h, half_w});
    Tensord dup;
    conv2d_backward(trace.mask_upsampled[i], W(kMaskLayers[2]).value, dlast, W(kMaskLayers[2]).grad,
                    B(kMaskLayers[2]).grad, &dup, 1, 1);
    for (std::size_t k = 1; k < spec_.mask_tap_block; ++k) dup = upsample2_backward(dup);
    Tensord dhidden = relu_backward(trace.mask_hidden[i], dup);
    Tensord dmask_features;
    conv2d_backward(features[i].mask_features, W(kMaskLayers[1]).value, dhidden, W(kMaskLayers[1]).grad,
                    B(kMaskLayers[1]).grad, need_encoder ? &dmask_features : nullptr, 1, 1);
    if (!need_encoder) continue;

    // Shared encoder.
    const auto& et = encoder_traces[i];
    Tensord dfirst = relu_backward(features[i].mask_features, dmask_features);
    const Tensord& tap = et.block_pooled[spec_.mask_tap_block - 1];
    Tensord dtap;
    conv2d_backward(tap, W(kMaskLayers[0]).value, dfirst, W(kMaskLayers[0]).grad, B(kMaskLayers[0]).grad,
                    &dtap, 1, 1);

    Tensord dx = Tensord(et.block_pooled.back().shape(),
                         std::vector<double>(dflat.row(i).begin(), dflat.row(i).end()));
    for (std::size_t b = kTrunkBlocks; b-- > 0;) {
      if (b + 1 == spec_.mask_tap_block) {
        for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += dtap[k];
      }
      Tensord da = relu_backward(et.block_relu[b], maxpool2_backward(et.block_relu[b], dx));
      const Tensord& in = b == 0 ? et.input : et.block_pooled[b - 1];
      const auto layer = trunk_layer(b);
      Tensord din;
      conv2d_backward(in, W(layer).value, da, W(layer).grad, B(layer).grad, b == 0 ? nullptr : &din, 1, 1);
      dx = std::move(din);
    }
  }
}

std::vector<NamedTensor> MultiObjectiveNet::to_tensors() const {
  std::vector<NamedTensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back({p.name, p.value, p.trainable});
  return out;
}

MultiObjectiveNet MultiObjectiveNet::from_tensors(const std::vector<NamedTensor>& tensors,
                                                  const ArchitectureSpec& spec) {
  const auto find = [&](const std::string& name) -> const NamedTensor& {
    for (const auto& t : tensors) {
      if (t.name == name) return t;
    }
    throw Error(Errc::CheckpointMismatch, "checkpoint lacks " + name);
  };
  const auto& joint_bias = find("joint_fc2.bias");
  const auto& type_bias = find("type_fc2.bias");
  if (joint_bias.value.size() % 3 != 0) throw Error(Errc::CheckpointMismatch, "joint head size");
  const std::size_t n_joints = joint_bias.value.size() / 3;
  const std::size_t n_types = type_bias.value.size();
  if ((n_joints != 6 && n_joints != 7) || n_types < 1) {
    throw Error(Errc::CheckpointMismatch, "unsupported head sizes in checkpoint");
  }
  MultiObjectiveNet net = build(n_joints, n_types, 0, spec);
  if (tensors.size() != net.params_.size()) {
    throw Error(Errc::CheckpointMismatch, "checkpoint has " + std::to_string(tensors.size()) +
                                              " tensors, architecture expects " +
                                              std::to_string(net.params_.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& p = net.params_[i];
    if (tensors[i].name != p.name || tensors[i].value.shape() != p.value.shape()) {
      throw Error(Errc::CheckpointMismatch, "tensor " + tensors[i].name + " " +
                                                shape_string(tensors[i].value.shape()) + " does not match " +
                                                p.name + " " + shape_string(p.value.shape()));
    }
    p.value = tensors[i].value;
    p.trainable = tensors[i].trainable;
  }
  return net;
}

void MultiObjectiveNet::reinitialize_fc(const std::string& layer, std::size_t outputs, std::uint64_t seed) {
  auto& w = parameter(weight_name(layer));
  auto& b = parameter(bias_name(layer));
  const std::size_t in = w.value.dim(1);
  w = Parameterd(w.name, uniform_init({outputs, in}, in, derive_seed(seed, layer_stream(layer) ^ outputs)), w.trainable);
  b = Parameterd(b.name, Tensord({outputs}), b.trainable);
  if (layer == "joint_fc2") n_joints_ = outputs / 3;
  if (layer == "type_fc2") n_types_ = outputs;
}

void freeze_for_transfer(MultiObjectiveNet& net) {
  for (const auto& layer : net.layer_names()) {
    const bool train = layer == kMaskLayers[1] || layer == kMaskLayers[2] ||
                       std::find(kFcLayers.begin(), kFcLayers.end(), layer) != kFcLayers.end();
    net.set_layer_trainable(layer, train);
  }
}

void adapt_joint_head(MultiObjectiveNet& net, std::size_t n_joints, std::uint64_t seed) {
  if (n_joints != 6 && n_joints != 7) throw Error(Errc::InvalidArgument, "n_joints must be 6 or 7");
  net.reinitialize_fc("joint_fc2", 3 * n_joints, seed);
}

void adapt_type_head(MultiObjectiveNet& net, std::size_t n_types, std::uint64_t seed) {
  if (n_types < 1) throw Error(Errc::InvalidArgument, "n_types must be >= 1");
  net.reinitialize_fc("type_fc2", n_types, seed);
}

void save(const MultiObjectiveNet& net, const std::filesystem::path& path) {
  save_checkpoint(path, net.to_tensors());
}

MultiObjectiveNet load(const std::filesystem::path& path, const ArchitectureSpec& spec) {
  return MultiObjectiveNet::from_tensors(load_checkpoint(path), spec);
}

}  // namespace mocnn
