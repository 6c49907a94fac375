#include "cfil/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "cfil/autodiff.hpp"
#include "cfil/error.hpp"
#include "cfil/rng.hpp"
#include "cfil/serialize.hpp"

namespace cfil::train {

namespace {

constexpr char kMagic[4] = {'C', 'F', 'C', 'K'};
constexpr std::uint64_t kInitStream = 10;
constexpr std::uint64_t kEpochStreamBase = 100;

std::size_t sz(Index i) { return static_cast<std::size_t>(i); }

/// Stacks the chosen images into one [B x 3 x S x S] batch.
Tensor<float> gather(const std::vector<Tensor<float>>& images, const std::vector<std::size_t>& idx) {
  const Shape& one = images.at(idx.front()).shape();
  const Index per = one.numel();
  std::vector<float> out;
  out.reserve(sz(per) * idx.size());
  for (std::size_t i : idx) {
    const auto& img = images[i];
    if (!(img.shape() == one)) {
      throw InputError("images in one batch differ in shape: " + one.to_string() + " vs " + img.shape().to_string());
    }
    out.insert(out.end(), img.values().begin(), img.values().end());
  }
  return Tensor<float>::from(Shape{static_cast<Index>(idx.size()), one[0], one[1], one[2]}, std::move(out));
}

/// Rows of the cached pooled features for the chosen samples.
Tensor<float> gather_rows(const std::vector<std::vector<float>>& rows, const std::vector<std::size_t>& idx) {
  const auto width = static_cast<Index>(rows.at(idx.front()).size());
  std::vector<float> out;
  out.reserve(sz(width) * idx.size());
  for (std::size_t i : idx) out.insert(out.end(), rows[i].begin(), rows[i].end());
  return Tensor<float>::from(Shape{static_cast<Index>(idx.size()), width}, std::move(out));
}

struct Images {
  std::vector<Tensor<float>> parents, children;
  std::vector<int> labels;
};

Images unpack(const std::vector<data::PairSample>& samples) {
  Images im;
  for (const auto& s : samples) {
    if (!s.parent_image.defined() || !s.child_image.defined()) {
      throw InputError("pair " + std::to_string(s.pair_id) + " has no pixel data");
    }
    im.parents.push_back(s.parent_image);
    im.children.push_back(s.child_image);
    im.labels.push_back(s.positive ? 1 : 0);
  }
  return im;
}

/// The backbone is frozen, so each image's pooled features are computed once
/// per run. Images shared between pairs are pooled once.
std::vector<std::vector<float>> pool_all(const net::Model<float>& model, const std::vector<Tensor<float>>& images,
                                         int batch_size) {
  std::map<const void*, std::size_t> first_seen;
  std::vector<std::size_t> unique;
  std::vector<std::size_t> slot(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto [it, inserted] = first_seen.emplace(images[i].node().get(), unique.size());
    if (inserted) unique.push_back(i);
    slot[i] = it->second;
  }
  std::vector<std::vector<float>> pooled(unique.size());
  for (std::size_t start = 0; start < unique.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(unique.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(unique.begin() + static_cast<std::ptrdiff_t>(start),
                                 unique.begin() + static_cast<std::ptrdiff_t>(end));
    const auto p = model.backbone().pooled(gather(images, idx));
    const auto width = sz(p.dim(1));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto begin = p.values().begin() + static_cast<std::ptrdiff_t>(r * width);
      pooled[start + r].assign(begin, begin + static_cast<std::ptrdiff_t>(width));
    }
  }
  std::vector<std::vector<float>> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out[i] = pooled[slot[i]];
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::map<std::string, std::string> parse_header(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("checkpoint header line '" + line + "' has no '='");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const std::string& header_value(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ParseError("checkpoint header lacks '" + key + "'");
  return it->second;
}

template <typename Num>
Num header_number(const std::map<std::string, std::string>& kv, const std::string& key) {
  const std::string& text = header_value(kv, key);
  std::istringstream is(text);
  Num v{};
  is >> v;
  if (!is || !is.eof()) throw ParseError("checkpoint header '" + key + "' has malformed value '" + text + "'");
  return v;
}

std::string backbone_widths_text(const std::vector<Index>& widths) {
  std::string s;
  for (std::size_t i = 0; i < widths.size(); ++i) s += (i ? ":" : "") + std::to_string(widths[i]);
  return s;
}

std::vector<Index> parse_widths(const std::string& text) {
  std::vector<Index> out;
  std::istringstream is(text);
  std::string part;
  while (std::getline(is, part, ':')) {
    try {
      out.push_back(std::stoll(part));
    } catch (const std::exception&) {
      throw ParseError("checkpoint header has malformed backbone widths '" + text + "'");
    }
  }
  return out;
}

}  // namespace

AdamState AdamState::for_params(const net::ModelParams<float>& params) {
  AdamState s;
  for (const auto& [name, t] : params.entries()) {
    s.m.emplace_back(name, Tensor<float>::zeros(t.shape()));
    s.v.emplace_back(name, Tensor<float>::zeros(t.shape()));
  }
  return s;
}

void adam_step(net::ModelParams<float>& params, AdamState& state, double lr) {
  auto& entries = params.entries();
  if (state.m.size() != entries.size() || state.v.size() != entries.size()) {
    throw ContractError("Adam state tracks " + std::to_string(state.m.size()) + " tensors, model has " +
                        std::to_string(entries.size()));
  }
  for (const auto& [name, p] : entries) {
    if (!p.has_grad()) throw ContractError("no gradient for trainable tensor " + name);
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& p = entries[i].second;
    if (state.m[i].first != entries[i].first || !(state.m[i].second.shape() == p.shape())) {
      throw ContractError("Adam state does not match parameter " + entries[i].first);
    }
    auto values = p.mutable_values();
    auto grad = p.grad();
    auto m = state.m[i].second.mutable_values();
    auto v = state.v[i].second.mutable_values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad[k];
      const double mk = AdamState::kBeta1 * m[k] + (1.0 - AdamState::kBeta1) * g;
      const double vk = AdamState::kBeta2 * v[k] + (1.0 - AdamState::kBeta2) * g * g;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double step = lr * (mk / c1) / (std::sqrt(vk / c2) + AdamState::kEpsilon);
      values[k] = static_cast<float>(values[k] - step);
    }
  }
}

Checkpoint Checkpoint::clone() const {
  Checkpoint c = *this;
  c.model = model.clone();
  for (auto& [name, t] : c.adam.m) t = t.clone();
  for (auto& [name, t] : c.adam.v) t = t.clone();
  return c;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(width_scale > 0.0) || !std::isfinite(width_scale)) throw ConfigError("width_scale must be positive");
  if (image_size < 32) throw ConfigError("image size must be at least 32 for five 2x2 poolings");
}

net::NetworkConfig TrainConfig::network() const {
  net::NetworkConfig c;
  c.nonlocal.width_scale = width_scale;
  c.kernel.sign_mode = sign_mode;
  c.zero_head = zero_head;
  c.image_size = image_size;
  return c;
}

double learning_rate(int epoch) { return epoch <= 2 ? 0.001 : 0.0005; }

Checkpoint initial_checkpoint(const TrainConfig& config, int fold) {
  config.validate();
  Checkpoint c;
  c.config = config;
  c.fold = fold;
  c.model = net::Model<float>::create(config.network(), SeededRng(config.seed).derive(kInitStream).next_u64());
  c.adam = AdamState::for_params(c.model.params());
  return c;
}

Checkpoint train(const std::vector<data::PairSample>& samples, const Checkpoint& start,
                 const std::function<void(const EpochLog&)>& on_epoch) {
  Checkpoint state = start.clone();
  state.config.validate();
  if (samples.empty()) throw ConfigError("the training split is empty");
  if (state.epochs_done >= state.config.epochs) return state;
  const Images im = unpack(samples);
  const int batch = state.config.batch_size;
  const auto parent_pooled = pool_all(state.model, im.parents, batch);
  const auto child_pooled = pool_all(state.model, im.children, batch);
  const SeededRng root(state.config.seed);
  std::vector<std::size_t> order(samples.size());

  for (int epoch = state.epochs_done + 1; epoch <= state.config.epochs; ++epoch) {
    const double lr = learning_rate(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    SeededRng rng = root.derive(kEpochStreamBase + static_cast<std::uint64_t>(epoch));
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch));
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(im.labels[i]);

      auto out = state.model.forward_pooled(gather(im.parents, idx), gather(im.children, idx),
                                            gather_rows(parent_pooled, idx), gather_rows(child_pooled, idx));
      const auto loss = net::loss(out.probs, labels);
      state.model.params().zero_grad();
      backward(loss);
      adam_step(state.model.params(), state.adam, lr);

      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const bool says_kin = out.probs.at(static_cast<Index>(2 * r + 1)) >= 0.5f;
        correct += says_kin == (labels[r] == 1) ? 1 : 0;
      }
    }
    state.epochs_done = epoch;
    if (on_epoch) {
      const double n = static_cast<double>(samples.size());
      on_epoch({epoch, lr, loss_sum / n, static_cast<double>(correct) / n});
    }
  }
  return state;
}

std::vector<double> predict(const net::Model<float>& model, const std::vector<data::PairSample>& samples,
                            int batch_size) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  std::vector<double> scores;
  if (samples.empty()) return scores;
  const Images im = unpack(samples);
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto out = model.forward(gather(im.parents, idx), gather(im.children, idx));
    for (std::size_t r = 0; r < idx.size(); ++r) scores.push_back(out.probs.at(static_cast<Index>(2 * r + 1)));
  }
  return scores;
}

double evaluate_loss(const net::Model<float>& model, const std::vector<data::PairSample>& samples, int batch_size) {
  if (samples.empty()) throw ConfigError("cannot evaluate a loss over no samples");
  const auto scores = predict(model, samples, batch_size);
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double p = samples[i].positive ? scores[i] : 1.0 - scores[i];
    total -= std::log(std::max(p, 1e-12));
  }
  return total / static_cast<double>(samples.size());
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::ostringstream header;
  header << "format=cfil-checkpoint\n"
         << "batch_size=" << c.config.batch_size << '\n'
         << "epochs=" << c.config.epochs << '\n'
         << "seed=" << c.config.seed << '\n'
         << "width_scale=" << format_double(c.config.width_scale) << '\n'
         << "sign_mode=" << weighted::to_string(c.config.sign_mode) << '\n'
         << "zero_head=" << (c.config.zero_head ? 1 : 0) << '\n'
         << "image_size=" << c.config.image_size << '\n'
         << "backbone_widths=" << backbone_widths_text(c.model.config().backbone.widths) << '\n'
         << "fold=" << c.fold << '\n'
         << "epochs_done=" << c.epochs_done << '\n'
         << "adam_t=" << c.adam.t << '\n'
         << "adam_beta1=" << format_double(AdamState::kBeta1) << '\n'
         << "adam_beta2=" << format_double(AdamState::kBeta2) << '\n'
         << "adam_epsilon=" << format_double(AdamState::kEpsilon) << '\n';
  const std::string text = header.str();

  io::NamedTensors named;
  for (const auto& [name, t] : c.model.params().entries()) named.add(name, t.detach());
  for (const auto& [name, t] : c.adam.m) named.add("adam.m." + name, t);
  for (const auto& [name, t] : c.adam.v) named.add("adam.v." + name, t);
  for (const auto& [name, t] : c.model.backbone().named_tensors()) named.add("backbone." + name, t);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  io::write_u8(os, kCheckpointVersion);
  io::write_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  io::write_named(os, named);
  if (!os) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  try {
    char magic[4];
    io::read_exact(is, magic, 4);
    if (!std::equal(magic, magic + 4, kMagic)) throw ParseError("not a checkpoint (bad magic)");
    const auto version = io::read_u8(is);
    if (version != kCheckpointVersion) {
      throw IncompatibleError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    const auto header_len = io::read_u32(is);
    if (header_len > (1u << 20)) throw ParseError("checkpoint header length " + std::to_string(header_len) + " is implausible");
    std::string text(header_len, '\0');
    io::read_exact(is, text.data(), header_len);
    const auto kv = parse_header(text);
    if (header_value(kv, "format") != "cfil-checkpoint") throw ParseError("checkpoint header has the wrong format tag");

    Checkpoint c;
    c.config.batch_size = header_number<int>(kv, "batch_size");
    c.config.epochs = header_number<int>(kv, "epochs");
    c.config.seed = header_number<std::uint64_t>(kv, "seed");
    c.config.width_scale = header_number<double>(kv, "width_scale");
    try {
      c.config.sign_mode = weighted::parse_sign_mode(header_value(kv, "sign_mode"));
    } catch (const ConfigError& e) {
      throw ParseError(std::string("checkpoint header: ") + e.what());
    }
    c.config.zero_head = header_number<int>(kv, "zero_head") != 0;
    c.config.image_size = header_number<Index>(kv, "image_size");
    c.fold = header_number<int>(kv, "fold");
    c.epochs_done = header_number<int>(kv, "epochs_done");
    c.adam.t = header_number<std::int64_t>(kv, "adam_t");
    try {
      c.config.validate();
    } catch (const ConfigError& e) {
      throw ParseError(std::string("checkpoint header: ") + e.what());
    }

    const auto named = io::read_named(is);
    net::NetworkConfig net_config = c.config.network();
    net_config.backbone.widths = parse_widths(header_value(kv, "backbone_widths"));
    // A throwaway model fixes the expected parameter names and shapes.
    const auto layout = net::Model<float>::create(net_config, 0);
    net::ModelParams<float> params;
    for (const auto& [name, t] : layout.params().entries()) {
      const auto stored = named.find(name);
      if (!stored) throw IncompatibleError("checkpoint lacks parameter " + name);
      if (!(stored->shape() == t.shape())) {
        throw IncompatibleError("checkpoint parameter " + name + " has shape " + stored->shape().to_string() +
                                ", model expects " + t.shape().to_string());
      }
      params.add(name, stored->clone());
      c.adam.m.emplace_back(name, named.get("adam.m." + name));
      c.adam.v.emplace_back(name, named.get("adam.v." + name));
      if (!(c.adam.m.back().second.shape() == t.shape()) || !(c.adam.v.back().second.shape() == t.shape())) {
        throw IncompatibleError("optimizer state for " + name + " does not match the parameter shape");
      }
    }
    auto backbone = net::Backbone<float>::from_named(named, "backbone.");
    c.model = net::Model<float>::assemble(net_config, std::move(params), std::move(backbone));
    return c;
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "epoch,lr,mean_loss,train_acc\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%g,%.17g,%.17g\n", e.epoch, e.lr, e.mean_loss, e.train_acc);
    os << buf;
  }
  if (!os) throw IoError("write failed for " + path.string());
}

std::vector<EpochLog> read_log(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open log " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "epoch,lr,mean_loss,train_acc") {
    throw ParseError(path.string() + " line 1: unexpected log header");
  }
  std::vector<EpochLog> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    EpochLog e;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf%c", &e.epoch, &e.lr, &e.mean_loss, &e.train_acc, &tail) != 4) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": malformed log row");
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace cfil::train
