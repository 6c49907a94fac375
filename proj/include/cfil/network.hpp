#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cfil/serialize.hpp"
#include "cfil/tensor.hpp"
#include "cfil/weighted_ops.hpp"

/// The kinship verification network: a non-local branch over the stacked
/// parent/child image, a local branch over a frozen backbone's pooled
/// features, and a fusion head with a two-way softmax.
namespace cfil::net {

/// Five conv3x3 (stride 1, padding 1) + relu + maxpool 2x2 (stride 2) stages.
/// The non-local weighted op follows stages 3 and 5.
struct NonLocalBranchSpec {
  std::array<Index, 5> base_widths{16, 64, 128, 256, 512};
  std::array<bool, 5> nonlocal_after{false, false, true, false, true};
  double width_scale = 1.0;

  Index width(std::size_t stage) const;
  /// Flattened output width for square inputs of the given side.
  Index output_width(Index image_size) const;
};

enum class BackboneKind { TinyConv, ExternalWeights };

struct BackboneSpec {
  BackboneKind kind = BackboneKind::TinyConv;
  /// Tiny-conv stage widths; the last entry is C'.
  std::vector<Index> widths{16, 32, 32};
  /// Named-tensor container with conv<k>.weight / conv<k>.bias entries.
  std::filesystem::path weights_path;
};

struct NetworkConfig {
  NonLocalBranchSpec nonlocal;
  BackboneSpec backbone;
  weighted::DistanceKernel kernel;
  Index image_size = 64;
  /// Head widths at width_scale 1; scaled together with the branch.
  Index base_projection_width = 256;
  Index base_hidden_width = 64;
  /// Zero the final classifier layer so the initial prediction is (0.5, 0.5).
  bool zero_head = true;
  Index nonlocal_budget = weighted::kDefaultBudget;

  double width_scale() const { return nonlocal.width_scale; }
  Index projection_width() const;
  Index hidden_width() const;
};

/// Frozen feature extractor: conv3x3 + relu + maxpool 2x2 per stage. Its
/// tensors never require gradients and are never handed to an optimizer.
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  static Backbone tiny_conv(const std::vector<Index>& widths, std::uint64_t seed);
  /// Loads conv<k>.weight / conv<k>.bias for k = 1, 2, ... from `tensors`,
  /// optionally under a name prefix.
  static Backbone from_named(const io::NamedTensors& tensors, const std::string& prefix = "");

  /// images [N x 3 x h x w] -> [N x C' x h' x w']
  Tensor<T> features(const Tensor<T>& images) const;
  /// Global average and global max of the feature map, concatenated: [N x 2C'].
  Tensor<T> pooled(const Tensor<T>& images) const;

  Index out_channels() const;
  std::size_t stages() const { return weights_.size(); }
  /// conv1.weight, conv1.bias, conv2.weight, ...
  std::vector<std::pair<std::string, Tensor<T>>> named_tensors() const;

  template <typename U>
  Backbone<U> cast() const;

 private:
  template <typename>
  friend class Backbone;
  std::vector<Tensor<T>> weights_;
  std::vector<Tensor<T>> biases_;
};

/// Ordered trainable tensors. Order: nl.conv1..5 (weight, bias),
/// head.proj, head.fc1, head.fc2 (weight, bias).
template <typename T>
class ModelParams {
 public:
  void add(std::string name, Tensor<T> t);
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor<T>>>& entries() { return entries_; }
  const Tensor<T>& get(const std::string& name) const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

template <typename T>
class Model {
 public:
  Model() = default;
  /// Fan-in scaled uniform initialisation from `seed`; the tiny backbone is
  /// drawn from a separate stream of the same seed.
  static Model create(const NetworkConfig& config, std::uint64_t seed);
  static Model assemble(const NetworkConfig& config, ModelParams<T> params, Backbone<T> backbone);

  /// pair [N x 6 x S x S], parent channels first -> [N x D_nl]
  Tensor<T> forward_nonlocal(const Tensor<T>& pair) const;
  /// parent, child [N x 3 x S x S] -> (f_x, f_y), each [N x 2C']
  std::pair<Tensor<T>, Tensor<T>> forward_local(const Tensor<T>& parent, const Tensor<T>& child) const;
  /// Same as forward_local with the backbone pooling already done.
  std::pair<Tensor<T>, Tensor<T>> forward_local_pooled(const Tensor<T>& parent_pooled,
                                                       const Tensor<T>& child_pooled) const;
  /// Pre-softmax scores [N x 2].
  Tensor<T> head_logits(const Tensor<T>& nl, const Tensor<T>& fx, const Tensor<T>& fy) const;
  /// concat -> projection -> fc -> fc -> softmax: [N x 2] probabilities.
  Tensor<T> fuse_and_classify(const Tensor<T>& nl, const Tensor<T>& fx, const Tensor<T>& fy) const;

  struct Output {
    Tensor<T> logits;
    Tensor<T> probs;
  };
  Output forward(const Tensor<T>& parent, const Tensor<T>& child) const;
  Output forward_pooled(const Tensor<T>& parent, const Tensor<T>& child, const Tensor<T>& parent_pooled,
                        const Tensor<T>& child_pooled) const;

  const NetworkConfig& config() const { return config_; }
  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }
  const Backbone<T>& backbone() const { return backbone_; }

  Index nonlocal_width() const;
  Index local_width() const { return 2 * backbone_.out_channels(); }

  template <typename U>
  Model<U> cast() const;
  /// Deep copy: copies share no tensor storage with the original.
  Model clone() const { return cast<T>(); }

 private:
  template <typename>
  friend class Model;
  NetworkConfig config_;
  ModelParams<T> params_;
  Backbone<T> backbone_;
};

/// Stacks parent and child images along channels, parent first.
template <typename T>
Tensor<T> stack_pair(const Tensor<T>& parent, const Tensor<T>& child);

/// Mean over the batch of -log P_i(r_i), the probability clamped at 1e-12.
/// Labels must be 0 or 1.
template <typename T>
Tensor<T> loss(const Tensor<T>& probs, const std::vector<int>& labels);

/// Per-sample gradient of -log P(r_i) w.r.t. the logits: P(l) for l != r_i
/// and P(l) - 1 for l == r_i.
template <typename T>
Tensor<T> loss_logit_grad_closed_form(const Tensor<T>& probs, const std::vector<int>& labels);

}  // namespace cfil::net
