#include "cfil/network.hpp"

#include <cmath>

#include "cfil/error.hpp"
#include "cfil/ops.hpp"
#include "cfil/rng.hpp"

namespace cfil::net {

namespace {

Index scaled(Index base, double scale) {
  return std::max<Index>(1, static_cast<Index>(std::llround(static_cast<double>(base) * scale)));
}

Index pooled_extent(Index extent) { return (extent - 2) / 2 + 1; }

/// Uniform(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
template <typename T>
Tensor<T> fan_in_uniform(const Shape& shape, Index fan_in, SeededRng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<T> values(static_cast<std::size_t>(shape.numel()));
  for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from(shape, std::move(values));
}

template <typename T>
Tensor<T> conv_block(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return ops::maxpool2d(ops::relu(ops::conv2d(x, w, b, 1, 1)), 2, 2);
}

template <typename T>
void require_images(const Tensor<T>& t, Index channels, const char* what) {
  if (t.shape().rank() != 4 || t.dim(1) != channels) {
    throw InputError(std::string(what) + " must be [N x " + std::to_string(channels) + " x H x W], got " +
                     t.shape().to_string());
  }
}

}  // namespace

Index NonLocalBranchSpec::width(std::size_t stage) const { return scaled(base_widths.at(stage), width_scale); }

Index NonLocalBranchSpec::output_width(Index image_size) const {
  Index side = image_size;
  for (std::size_t s = 0; s < base_widths.size(); ++s) side = pooled_extent(side);
  return width(base_widths.size() - 1) * side * side;
}

Index NetworkConfig::projection_width() const { return std::max<Index>(2, scaled(base_projection_width, width_scale())); }
Index NetworkConfig::hidden_width() const { return std::max<Index>(2, scaled(base_hidden_width, width_scale())); }

// Backbone -------------------------------------------------------------------

template <typename T>
Backbone<T> Backbone<T>::tiny_conv(const std::vector<Index>& widths, std::uint64_t seed) {
  if (widths.empty()) throw ConfigError("tiny-conv backbone needs at least one stage");
  Backbone b;
  SeededRng rng(seed);
  Index in = 3;
  for (Index out : widths) {
    b.weights_.push_back(fan_in_uniform<T>(Shape{out, in, 3, 3}, in * 9, rng));
    b.biases_.push_back(Tensor<T>::zeros(Shape{out}));
    in = out;
  }
  return b;
}

template <typename T>
Backbone<T> Backbone<T>::from_named(const io::NamedTensors& tensors, const std::string& prefix) {
  Backbone b;
  Index in = 3;
  for (std::size_t k = 1;; ++k) {
    const std::string stem = prefix + "conv" + std::to_string(k);
    auto w = tensors.find(stem + ".weight");
    if (!w) break;
    const Tensor<float> bias = tensors.get(stem + ".bias");
    const Shape& s = w->shape();
    if (s.rank() != 4 || s[1] != in || s[2] != s[3] || bias.numel() != s[0]) {
      throw IncompatibleError("backbone tensor " + stem + " has shape " + s.to_string() + " (bias " +
                              bias.shape().to_string() + "), expected [C x " + std::to_string(in) + " x k x k]");
    }
    b.weights_.push_back(w->detach().template cast<T>());
    b.biases_.push_back(bias.detach().template cast<T>());
    in = s[0];
  }
  if (b.weights_.empty()) throw IncompatibleError("no backbone tensors named " + prefix + "conv1.weight");
  return b;
}

template <typename T>
Tensor<T> Backbone<T>::features(const Tensor<T>& images) const {
  require_images(images, 3, "backbone input");
  Tensor<T> x = images;
  for (std::size_t s = 0; s < weights_.size(); ++s) {
    const Index k = weights_[s].dim(2);
    x = ops::maxpool2d(ops::relu(ops::conv2d(x, weights_[s], biases_[s], 1, k / 2)), 2, 2);
  }
  return x;
}

template <typename T>
Tensor<T> Backbone<T>::pooled(const Tensor<T>& images) const {
  const Tensor<T> map = features(images);
  return ops::concat<T>({ops::global_avg_pool(map), ops::global_max_pool(map)}, 1);
}

template <typename T>
Index Backbone<T>::out_channels() const {
  if (weights_.empty()) throw ContractError("empty backbone");
  return weights_.back().dim(0);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Backbone<T>::named_tensors() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (std::size_t s = 0; s < weights_.size(); ++s) {
    const std::string stem = "conv" + std::to_string(s + 1);
    out.emplace_back(stem + ".weight", weights_[s]);
    out.emplace_back(stem + ".bias", biases_[s]);
  }
  return out;
}

template <typename T>
template <typename U>
Backbone<U> Backbone<T>::cast() const {
  Backbone<U> out;
  for (const auto& w : weights_) out.weights_.push_back(w.detach().template cast<U>());
  for (const auto& b : biases_) out.biases_.push_back(b.detach().template cast<U>());
  return out;
}

// ModelParams ----------------------------------------------------------------

template <typename T>
void ModelParams<T>::add(std::string name, Tensor<T> t) {
  t.set_requires_grad(true);
  entries_.emplace_back(std::move(name), std::move(t));
}

template <typename T>
const Tensor<T>& ModelParams<T>::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ContractError("no parameter named " + name);
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& [n, t] : entries_) t.zero_grad();
}

// Model ----------------------------------------------------------------------

template <typename T>
Model<T> Model<T>::create(const NetworkConfig& config, std::uint64_t seed) {
  if (!(config.width_scale() > 0.0)) throw ConfigError("width_scale must be positive");
  SeededRng root(seed);
  SeededRng rng = root.derive(1);

  Backbone<T> backbone;
  if (config.backbone.kind == BackboneKind::TinyConv) {
    backbone = Backbone<T>::tiny_conv(config.backbone.widths, root.derive(2).next_u64());
  } else {
    backbone = Backbone<T>::from_named(io::load_named(config.backbone.weights_path));
  }

  ModelParams<T> params;
  Index in = 6;
  for (std::size_t s = 0; s < config.nonlocal.base_widths.size(); ++s) {
    const Index out = config.nonlocal.width(s);
    const std::string stem = "nl.conv" + std::to_string(s + 1);
    params.add(stem + ".weight", fan_in_uniform<T>(Shape{out, in, 3, 3}, in * 9, rng));
    params.add(stem + ".bias", Tensor<T>::zeros(Shape{out}));
    in = out;
  }
  const Index fused = config.nonlocal.output_width(config.image_size) + 4 * backbone.out_channels();
  const Index proj = config.projection_width(), hidden = config.hidden_width();
  params.add("head.proj.weight", fan_in_uniform<T>(Shape{proj, fused}, fused, rng));
  params.add("head.proj.bias", Tensor<T>::zeros(Shape{proj}));
  params.add("head.fc1.weight", fan_in_uniform<T>(Shape{hidden, proj}, proj, rng));
  params.add("head.fc1.bias", Tensor<T>::zeros(Shape{hidden}));
  params.add("head.fc2.weight", config.zero_head ? Tensor<T>::zeros(Shape{2, hidden})
                                                 : fan_in_uniform<T>(Shape{2, hidden}, hidden, rng));
  params.add("head.fc2.bias", Tensor<T>::zeros(Shape{2}));
  return assemble(config, std::move(params), std::move(backbone));
}

template <typename T>
Model<T> Model<T>::assemble(const NetworkConfig& config, ModelParams<T> params, Backbone<T> backbone) {
  Model m;
  m.config_ = config;
  m.params_ = std::move(params);
  m.backbone_ = std::move(backbone);
  const Index fused = m.nonlocal_width() + 2 * m.local_width();
  const Tensor<T>& proj = m.params_.get("head.proj.weight");
  if (proj.shape().rank() != 2 || proj.dim(1) != fused) {
    throw IncompatibleError("head.proj.weight is " + proj.shape().to_string() + " but the branches produce " +
                            std::to_string(fused) + " features");
  }
  return m;
}

template <typename T>
Index Model<T>::nonlocal_width() const {
  return config_.nonlocal.output_width(config_.image_size);
}

template <typename T>
Tensor<T> Model<T>::forward_nonlocal(const Tensor<T>& pair) const {
  require_images(pair, 6, "non-local branch input");
  if (pair.dim(2) != config_.image_size || pair.dim(3) != config_.image_size) {
    throw InputError("non-local branch expects " + std::to_string(config_.image_size) + "x" +
                     std::to_string(config_.image_size) + " images, got " + pair.shape().to_string());
  }
  Tensor<T> x = pair;
  for (std::size_t s = 0; s < config_.nonlocal.base_widths.size(); ++s) {
    const std::string stem = "nl.conv" + std::to_string(s + 1);
    x = conv_block(x, params_.get(stem + ".weight"), params_.get(stem + ".bias"));
    if (config_.nonlocal.nonlocal_after[s]) {
      x = weighted::nonlocal_apply_batched(x, config_.kernel, config_.nonlocal_budget);
    }
  }
  return ops::reshape(x, Shape{x.dim(0), x.numel() / x.dim(0)});
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> Model<T>::forward_local(const Tensor<T>& parent, const Tensor<T>& child) const {
  require_images(parent, 3, "parent images");
  require_images(child, 3, "child images");
  if (parent.dim(0) != child.dim(0)) {
    throw InputError("batch mismatch: " + std::to_string(parent.dim(0)) + " parents vs " +
                     std::to_string(child.dim(0)) + " children");
  }
  return forward_local_pooled(backbone_.pooled(parent), backbone_.pooled(child));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> Model<T>::forward_local_pooled(const Tensor<T>& parent_pooled,
                                                               const Tensor<T>& child_pooled) const {
  if (parent_pooled.shape() != child_pooled.shape()) {
    throw InputError("pooled feature shapes differ: " + parent_pooled.shape().to_string() + " vs " +
                     child_pooled.shape().to_string());
  }
  return weighted::local_apply_batched(parent_pooled, child_pooled, config_.kernel, config_.nonlocal_budget);
}

template <typename T>
Tensor<T> Model<T>::head_logits(const Tensor<T>& nl, const Tensor<T>& fx, const Tensor<T>& fy) const {
  if (nl.shape().rank() != 2 || fx.shape().rank() != 2 || fy.shape().rank() != 2 || nl.dim(0) != fx.dim(0) ||
      fx.shape() != fy.shape()) {
    throw InputError("fusion inputs disagree: " + nl.shape().to_string() + ", " + fx.shape().to_string() + ", " +
                     fy.shape().to_string());
  }
  const Tensor<T>& proj_w = params_.get("head.proj.weight");
  const Index width = nl.dim(1) + fx.dim(1) + fy.dim(1);
  if (width != proj_w.dim(1)) {
    throw ConfigError("fusion head expects " + std::to_string(proj_w.dim(1)) + " features, got " +
                      std::to_string(nl.dim(1)) + " + " + std::to_string(fx.dim(1)) + " + " +
                      std::to_string(fy.dim(1)));
  }
  Tensor<T> h = ops::concat<T>({nl, fx, fy}, 1);
  h = ops::relu(ops::linear(h, proj_w, params_.get("head.proj.bias")));
  h = ops::relu(ops::linear(h, params_.get("head.fc1.weight"), params_.get("head.fc1.bias")));
  return ops::linear(h, params_.get("head.fc2.weight"), params_.get("head.fc2.bias"));
}

template <typename T>
Tensor<T> Model<T>::fuse_and_classify(const Tensor<T>& nl, const Tensor<T>& fx, const Tensor<T>& fy) const {
  return ops::softmax_rows(head_logits(nl, fx, fy));
}

template <typename T>
typename Model<T>::Output Model<T>::forward(const Tensor<T>& parent, const Tensor<T>& child) const {
  const Tensor<T> nl = forward_nonlocal(stack_pair(parent, child));
  auto [fx, fy] = forward_local(parent, child);
  Tensor<T> logits = head_logits(nl, fx, fy);
  return {logits, ops::softmax_rows(logits)};
}

template <typename T>
typename Model<T>::Output Model<T>::forward_pooled(const Tensor<T>& parent, const Tensor<T>& child,
                                                   const Tensor<T>& parent_pooled,
                                                   const Tensor<T>& child_pooled) const {
  const Tensor<T> nl = forward_nonlocal(stack_pair(parent, child));
  auto [fx, fy] = forward_local_pooled(parent_pooled, child_pooled);
  Tensor<T> logits = head_logits(nl, fx, fy);
  return {logits, ops::softmax_rows(logits)};
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> out;
  out.config_ = config_;
  for (const auto& [name, t] : params_.entries()) out.params_.add(name, t.detach().template cast<U>());
  out.backbone_ = backbone_.template cast<U>();
  return out;
}

// Free functions -------------------------------------------------------------

template <typename T>
Tensor<T> stack_pair(const Tensor<T>& parent, const Tensor<T>& child) {
  require_images(parent, 3, "parent images");
  require_images(child, 3, "child images");
  if (parent.shape() != child.shape()) {
    throw InputError("parent " + parent.shape().to_string() + " and child " + child.shape().to_string() +
                     " images differ in shape");
  }
  return ops::concat<T>({parent, child}, 1);
}

namespace {

template <typename T>
void check_loss_inputs(const Tensor<T>& probs, const std::vector<int>& labels) {
  if (probs.shape().rank() != 2 || probs.dim(1) != 2) {
    throw InputError("loss expects [N x 2] probabilities, got " + probs.shape().to_string());
  }
  if (static_cast<Index>(labels.size()) != probs.dim(0)) {
    throw InputError("loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(probs.dim(0)) +
                     " samples");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw InputError("loss: label " + std::to_string(l) + " is not binary");
  }
}

}  // namespace

template <typename T>
Tensor<T> loss(const Tensor<T>& probs, const std::vector<int>& labels) {
  check_loss_inputs(probs, labels);
  return ops::nll_mean(probs, labels);
}

template <typename T>
Tensor<T> loss_logit_grad_closed_form(const Tensor<T>& probs, const std::vector<int>& labels) {
  check_loss_inputs(probs, labels);
  std::vector<T> grad(probs.values().begin(), probs.values().end());
  for (std::size_t i = 0; i < labels.size(); ++i) grad[2 * i + static_cast<std::size_t>(labels[i])] -= T(1);
  return Tensor<T>::from(probs.shape(), std::move(grad));
}

template class Backbone<float>;
template class Backbone<double>;
template Backbone<double> Backbone<float>::cast<double>() const;
template Backbone<float> Backbone<double>::cast<float>() const;
template Backbone<float> Backbone<float>::cast<float>() const;
template Backbone<double> Backbone<double>::cast<double>() const;
template class ModelParams<float>;
template class ModelParams<double>;
template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;
template Tensor<float> stack_pair(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> stack_pair(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> loss(const Tensor<float>&, const std::vector<int>&);
template Tensor<double> loss(const Tensor<double>&, const std::vector<int>&);
template Tensor<float> loss_logit_grad_closed_form(const Tensor<float>&, const std::vector<int>&);
template Tensor<double> loss_logit_grad_closed_form(const Tensor<double>&, const std::vector<int>&);

}  // namespace cfil::net
