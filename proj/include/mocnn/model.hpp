#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mocnn/checkpoint.hpp"
#include "mocnn/tensor.hpp"

namespace mocnn {

/// Layer sizes of the multi-objective network.
///
/// The trunk is four blocks of 3x3 conv (pad 1) + relu + 2x2 max-pool. The
/// mask branch reads the output of trunk block `mask_tap_block`, applies two
/// 3x3 convs at that resolution, upsamples back towards input resolution and
/// ends in a single-channel 3x3 conv, one more upsample and a sigmoid. The
/// three coordinate/type branches flatten the last trunk block and use two
/// fully connected layers each.
struct ArchitectureSpec {
  std::size_t input_channels = 3;
  std::size_t input_height = 212;
  std::size_t input_width = 256;
  std::array<std::size_t, 4> trunk_widths{8, 16, 32, 64};
  std::size_t mask_tap_block = 2;
  std::array<std::size_t, 2> mask_widths{32, 16};
  std::size_t joint_hidden = 256;
  std::size_t base_hidden = 64;
  std::size_t type_hidden = 32;

  /// Tiny variant (16x16 input, < 1e3 parameters) for gradient checks.
  static ArchitectureSpec reduced();

  std::size_t trunk_height(std::size_t block) const;
  std::size_t trunk_width(std::size_t block) const;
  std::size_t flat_size() const;
  void validate() const;

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

inline constexpr double kProbabilityClamp = 1e-7;

/// Shared activations a sample contributes to the branch layers: the mask
/// branch's first conv output and the flattened trunk output.
struct EncodedFeatures {
  Tensord mask_features;  // mask_widths[0] x tap_h x tap_w
  Tensord flat;           // flat_size
};

struct NetOutputs {
  Tensord mask_probs;  // B x H x W, clamped to [1e-7, 1 - 1e-7]
  Tensord joints;      // B x 3*n_joints
  Tensord bases;       // B x 3
  Tensord type_probs;  // B x n_types
};

/// Loss gradients with respect to each output of NetOutputs.
struct OutputGrads {
  Tensord mask_probs;
  Tensord joints;
  Tensord bases;
  Tensord type_probs;
};

class MultiObjectiveNet {
 public:
  /// Per-sample activations kept by encode() for the backward pass.
  struct EncoderTrace {
    Tensord input;
    std::vector<Tensord> block_relu;    // relu(conv) per trunk block
    std::vector<Tensord> block_pooled;  // max-pooled per trunk block
  };

  /// Activations kept by decode() for the backward pass.
  struct DecoderTrace {
    std::vector<Tensord> mask_hidden;     // relu(mask_conv_secondlast) per sample
    std::vector<Tensord> mask_upsampled;  // input of mask_conv_last per sample
    Tensord flat;                         // B x flat_size
    Tensord joint_hidden, base_hidden, type_hidden;
    NetOutputs outputs;
  };

  static MultiObjectiveNet build(std::size_t n_joints, std::size_t n_types, std::uint64_t seed,
                                 const ArchitectureSpec& spec = {});

  const ArchitectureSpec& spec() const { return spec_; }
  std::size_t n_joints() const { return n_joints_; }
  std::size_t n_types() const { return n_types_; }

  std::vector<Parameterd>& parameters() { return params_; }
  const std::vector<Parameterd>& parameters() const { return params_; }
  std::vector<Parameterd*> parameter_ptrs();
  Parameterd& parameter(const std::string& name);
  const Parameterd& parameter(const std::string& name) const;
  std::size_t parameter_count() const;

  /// Layer names in network order (each layer owns "<name>.weight" and "<name>.bias").
  std::vector<std::string> layer_names() const;
  std::set<std::string> trainable_layers() const;
  void set_layer_trainable(const std::string& layer, bool trainable);
  void set_all_trainable(bool trainable);
  /// True when any trunk or first mask conv parameter is trainable.
  bool encoder_trainable() const;

  EncodedFeatures encode(const Tensord& image, EncoderTrace* trace = nullptr) const;
  NetOutputs decode(std::span<const EncodedFeatures> features, DecoderTrace* trace = nullptr) const;
  /// images: B x C x H x W normalized to [0, 1].
  NetOutputs forward(const Tensord& images) const;

  /// Accumulates parameter gradients from output gradients. `encoder_traces`
  /// may be empty when the encoder is frozen.
  void backward(std::span<const EncodedFeatures> features, std::span<const EncoderTrace> encoder_traces,
                const DecoderTrace& trace, const OutputGrads& grads);

  void zero_grad();

  std::vector<NamedTensor> to_tensors() const;
  /// Rebuilds a network from checkpoint tensors; the topology must match `spec`.
  static MultiObjectiveNet from_tensors(const std::vector<NamedTensor>& tensors,
                                        const ArchitectureSpec& spec = {});

  // Internal: replaces a fully connected layer with freshly initialized weights.
  void reinitialize_fc(const std::string& layer, std::size_t outputs, std::uint64_t seed);

 private:
  MultiObjectiveNet() = default;
  std::size_t index_of(const std::string& name) const;
  const Tensord& value(const std::string& name) const { return params_[index_of(name)].value; }

  ArchitectureSpec spec_;
  std::size_t n_joints_ = 0;
  std::size_t n_types_ = 0;
  std::vector<Parameterd> params_;
};

/// Freezes the trunk and the first mask conv; leaves the two final mask convs
/// and every fully connected layer trainable.
void freeze_for_transfer(MultiObjectiveNet& net);

/// Replaces the final joint layer with a freshly seeded one sized for
/// `n_joints` joints. Every other parameter is untouched.
void adapt_joint_head(MultiObjectiveNet& net, std::size_t n_joints, std::uint64_t seed);
void adapt_type_head(MultiObjectiveNet& net, std::size_t n_types, std::uint64_t seed);

void save(const MultiObjectiveNet& net, const std::filesystem::path& path);
MultiObjectiveNet load(const std::filesystem::path& path, const ArchitectureSpec& spec = {});

}  // namespace mocnn
