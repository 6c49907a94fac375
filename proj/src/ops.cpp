#include "cfil/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cfil/error.hpp"
#include "gemm.hpp"
#include "graph.hpp"

namespace cfil::ops {

using detail::make_output;

namespace {

template <typename T>
void require_rank(const Tensor<T>& t, Index rank, const char* op) {
  if (t.shape().rank() != rank) {
    throw DimensionError(std::string(op) + " expects a rank-" + std::to_string(rank) + " tensor, got " +
                         t.shape().to_string());
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().to_string() + " vs " +
                         b.shape().to_string());
  }
}

inline std::size_t sz(Index i) { return static_cast<std::size_t>(i); }

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Index p = a.dim(0), q = a.dim(1), r = b.dim(1);
  if (b.dim(0) != q) {
    throw DimensionError("matmul: inner extents differ, " + a.shape().to_string() + " * " + b.shape().to_string());
  }
  std::vector<T> out(sz(p * r), T(0));
  detail::gemm_nn(p, r, q, a.values().data(), b.values().data(), out.data());
  return make_output<T>(Shape{p, r}, std::move(out), {a.node(), b.node()}, [p, q, r](detail::Node<T>& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    if (an.requires_grad) detail::gemm_nt(p, q, r, self.grad.data(), bn.values.data(), an.grad.data());
    if (bn.requires_grad) detail::gemm_tn(q, r, p, an.values.data(), self.grad.data(), bn.grad.data());
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const Index n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in || bias.numel() != out_dim) {
    throw DimensionError("linear: input " + x.shape().to_string() + " incompatible with weight " +
                         weight.shape().to_string() + " and bias " + bias.shape().to_string());
  }
  std::vector<T> out(sz(n * out_dim));
  for (Index i = 0; i < n; ++i) std::copy(bias.values().begin(), bias.values().end(), out.begin() + i * out_dim);
  detail::gemm_nt(n, out_dim, in, x.values().data(), weight.values().data(), out.data());
  return make_output<T>(Shape{n, out_dim}, std::move(out), {x.node(), weight.node(), bias.node()},
                        [n, in, out_dim](detail::Node<T>& self) {
                          auto& xn = *self.inputs[0];
                          auto& wn = *self.inputs[1];
                          auto& bn = *self.inputs[2];
                          const T* g = self.grad.data();
                          if (xn.requires_grad) detail::gemm_nn(n, in, out_dim, g, wn.values.data(), xn.grad.data());
                          if (wn.requires_grad) detail::gemm_tn(out_dim, in, n, g, xn.values.data(), wn.grad.data());
                          if (bn.requires_grad) {
                            for (Index i = 0; i < n; ++i)
                              for (Index o = 0; o < out_dim; ++o) bn.grad[sz(o)] += g[i * out_dim + o];
                          }
                        });
}

namespace {

struct ConvGeometry {
  Index channels, height, width, kernel, stride, padding, out_h, out_w;
  Index col_rows() const { return channels * kernel * kernel; }
  Index col_cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* col) {
  for (Index c = 0; c < g.channels; ++c) {
    for (Index kh = 0; kh < g.kernel; ++kh) {
      for (Index kw = 0; kw < g.kernel; ++kw) {
        T* row = col + ((c * g.kernel + kh) * g.kernel + kw) * g.col_cols();
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.stride - g.padding + kh;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.stride - g.padding + kw;
            const bool inside = ih >= 0 && ih < g.height && iw >= 0 && iw < g.width;
            row[oh * g.out_w + ow] = inside ? image[(c * g.height + ih) * g.width + iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* image) {
  for (Index c = 0; c < g.channels; ++c) {
    for (Index kh = 0; kh < g.kernel; ++kh) {
      for (Index kw = 0; kw < g.kernel; ++kw) {
        const T* row = col + ((c * g.kernel + kh) * g.kernel + kw) * g.col_cols();
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.stride - g.padding + kh;
          if (ih < 0 || ih >= g.height) continue;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.stride - g.padding + kw;
            if (iw < 0 || iw >= g.width) continue;
            image[(c * g.height + ih) * g.width + iw] += row[oh * g.out_w + ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, Index stride,
                 Index padding) {
  require_rank(input, 4, "conv2d");
  require_rank(kernel, 4, "conv2d kernel");
  if (stride < 1 || padding < 0) {
    throw DimensionError("conv2d: stride must be >= 1 and padding >= 0");
  }
  const Index batch = input.dim(0), channels = input.dim(1), height = input.dim(2), width = input.dim(3);
  const Index filters = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != channels || kernel.dim(3) != k) {
    throw DimensionError("conv2d: kernel " + kernel.shape().to_string() + " does not match input " +
                         input.shape().to_string());
  }
  if (bias.numel() != filters) {
    throw DimensionError("conv2d: bias " + bias.shape().to_string() + " does not match " + std::to_string(filters) +
                         " filters");
  }
  if (k > height + 2 * padding || k > width + 2 * padding) {
    throw DimensionError("conv2d: kernel " + kernel.shape().to_string() + " larger than padded input " +
                         input.shape().to_string() + " with padding " + std::to_string(padding));
  }
  const ConvGeometry g{channels, height, width, k, stride, padding,
                       (height + 2 * padding - k) / stride + 1, (width + 2 * padding - k) / stride + 1};
  const Index rows = g.col_rows(), cols = g.col_cols();
  const Index in_plane = channels * height * width, out_plane = filters * cols;

  std::vector<T> out(sz(batch * out_plane));
  std::vector<T> col(sz(rows * cols));
  const T* w = kernel.values().data();
  const T* b = bias.values().data();
  for (Index n = 0; n < batch; ++n) {
    im2col(g, input.values().data() + n * in_plane, col.data());
    T* o = out.data() + n * out_plane;
    for (Index f = 0; f < filters; ++f) std::fill(o + f * cols, o + (f + 1) * cols, b[f]);
    detail::gemm_nn(filters, cols, rows, w, col.data(), o);
  }
  return make_output<T>(
      Shape{batch, filters, g.out_h, g.out_w}, std::move(out), {input.node(), kernel.node(), bias.node()},
      [g, batch, filters, rows, cols, in_plane, out_plane](detail::Node<T>& self) {
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        std::vector<T> col(sz(rows * cols));
        std::vector<T> dcol(xn.requires_grad ? sz(rows * cols) : 0);
        for (Index n = 0; n < batch; ++n) {
          const T* gout = self.grad.data() + n * out_plane;
          if (bn.requires_grad) {
            for (Index f = 0; f < filters; ++f) {
              T acc = T(0);
              for (Index p = 0; p < cols; ++p) acc += gout[f * cols + p];
              bn.grad[sz(f)] += acc;
            }
          }
          if (wn.requires_grad) {
            im2col(g, xn.values.data() + n * in_plane, col.data());
            detail::gemm_nt(filters, rows, cols, gout, col.data(), wn.grad.data());
          }
          if (xn.requires_grad) {
            std::fill(dcol.begin(), dcol.end(), T(0));
            detail::gemm_tn(rows, cols, filters, wn.values.data(), gout, dcol.data());
            col2im_add(g, dcol.data(), xn.grad.data() + n * in_plane);
          }
        }
      });
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, Index window, Index stride) {
  require_rank(input, 4, "maxpool2d");
  const Index batch = input.dim(0), channels = input.dim(1), height = input.dim(2), width = input.dim(3);
  if (window < 1 || stride < 1) throw DimensionError("maxpool2d: window and stride must be >= 1");
  if (window > height || window > width) {
    throw DimensionError("maxpool2d: window " + std::to_string(window) + " exceeds input " + input.shape().to_string());
  }
  const Index out_h = (height - window) / stride + 1, out_w = (width - window) / stride + 1;
  const Index planes = batch * channels;
  std::vector<T> out(sz(planes * out_h * out_w));
  std::vector<Index> argmax(out.size());
  const T* x = input.values().data();
  for (Index pl = 0; pl < planes; ++pl) {
    const T* plane = x + pl * height * width;
    for (Index oh = 0; oh < out_h; ++oh) {
      for (Index ow = 0; ow < out_w; ++ow) {
        Index best = (oh * stride) * width + ow * stride;
        for (Index dh = 0; dh < window; ++dh) {
          for (Index dw = 0; dw < window; ++dw) {
            const Index idx = (oh * stride + dh) * width + ow * stride + dw;
            if (plane[idx] > plane[best]) best = idx;
          }
        }
        const Index o = (pl * out_h + oh) * out_w + ow;
        out[sz(o)] = plane[best];
        argmax[sz(o)] = pl * height * width + best;
      }
    }
  }
  return make_output<T>(Shape{batch, channels, out_h, out_w}, std::move(out), {input.node()},
                        [argmax = std::move(argmax)](detail::Node<T>& self) {
                          auto& xn = *self.inputs[0];
                          for (std::size_t o = 0; o < argmax.size(); ++o) xn.grad[sz(argmax[o])] += self.grad[o];
                        });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  require_rank(input, 4, "global_avg_pool");
  const Index batch = input.dim(0), channels = input.dim(1), spatial = input.dim(2) * input.dim(3);
  std::vector<T> out(sz(batch * channels));
  const T* x = input.values().data();
  for (Index pl = 0; pl < batch * channels; ++pl) {
    T acc = T(0);
    for (Index s = 0; s < spatial; ++s) acc += x[pl * spatial + s];
    out[sz(pl)] = acc / static_cast<T>(spatial);
  }
  return make_output<T>(Shape{batch, channels}, std::move(out), {input.node()}, [spatial](detail::Node<T>& self) {
    auto& xn = *self.inputs[0];
    const T inv = T(1) / static_cast<T>(spatial);
    for (std::size_t pl = 0; pl < self.grad.size(); ++pl) {
      const T g = self.grad[pl] * inv;
      for (Index s = 0; s < spatial; ++s) xn.grad[pl * sz(spatial) + sz(s)] += g;
    }
  });
}

template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& input) {
  require_rank(input, 4, "global_max_pool");
  const Index batch = input.dim(0), channels = input.dim(1), spatial = input.dim(2) * input.dim(3);
  std::vector<T> out(sz(batch * channels));
  std::vector<Index> argmax(out.size());
  const T* x = input.values().data();
  for (Index pl = 0; pl < batch * channels; ++pl) {
    Index best = pl * spatial;
    for (Index s = 1; s < spatial; ++s) {
      if (x[pl * spatial + s] > x[best]) best = pl * spatial + s;
    }
    out[sz(pl)] = x[best];
    argmax[sz(pl)] = best;
  }
  return make_output<T>(Shape{batch, channels}, std::move(out), {input.node()},
                        [argmax = std::move(argmax)](detail::Node<T>& self) {
                          auto& xn = *self.inputs[0];
                          for (std::size_t o = 0; o < argmax.size(); ++o) xn.grad[sz(argmax[o])] += self.grad[o];
                        });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  require_rank(logits, 2, "softmax_rows");
  const Index rows = logits.dim(0), cols = logits.dim(1);
  const T* x = logits.values().data();
  std::vector<T> out(sz(rows * cols));
  for (Index r = 0; r < rows; ++r) {
    const T* row = x + r * cols;
    T peak = -std::numeric_limits<T>::infinity();
    for (Index c = 0; c < cols; ++c) {
      if (!std::isfinite(row[c])) {
        throw NumericError("softmax_rows: non-finite logit at row " + std::to_string(r) + ", column " +
                           std::to_string(c));
      }
      peak = std::max(peak, row[c]);
    }
    T total = T(0);
    T* o = out.data() + r * cols;
    for (Index c = 0; c < cols; ++c) {
      o[c] = std::exp(row[c] - peak);
      total += o[c];
    }
    for (Index c = 0; c < cols; ++c) o[c] /= total;
  }
  return make_output<T>(logits.shape(), std::move(out), {logits.node()}, [rows, cols](detail::Node<T>& self) {
    auto& xn = *self.inputs[0];
    for (Index r = 0; r < rows; ++r) {
      const T* y = self.values.data() + r * cols;
      const T* g = self.grad.data() + r * cols;
      T dot = T(0);
      for (Index c = 0; c < cols; ++c) dot += g[c] * y[c];
      T* dx = xn.grad.data() + r * cols;
      for (Index c = 0; c < cols; ++c) dx[c] += y[c] * (g[c] - dot);
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& t, const Shape& shape) {
  if (shape.numel() != t.numel()) {
    throw DimensionError("reshape: cannot view " + t.shape().to_string() + " as " + shape.to_string());
  }
  std::vector<T> out(t.values().begin(), t.values().end());
  return make_output<T>(shape, std::move(out), {t.node()}, [](detail::Node<T>& self) {
    auto& xn = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn.grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, Index axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis < 0 || axis >= first.rank()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + first.to_string());
  }
  Index outer = 1, inner = 1, total_axis = 0;
  for (Index d = 0; d < axis; ++d) outer *= first[d];
  for (Index d = axis + 1; d < first.rank(); ++d) inner *= first[d];
  std::vector<Index> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.rank() == first.rank();
    for (Index d = 0; ok && d < s.rank(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw DimensionError("concat: " + s.to_string() + " incompatible with " + first.to_string() + " along axis " +
                           std::to_string(axis));
    }
    extents.push_back(s[axis]);
    total_axis += s[axis];
  }
  std::vector<Index> dims = first.dims();
  dims[sz(axis)] = total_axis;
  std::vector<T> out(sz(outer * total_axis * inner));
  Index offset = 0;
  std::vector<std::shared_ptr<detail::Node<T>>> inputs;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Index chunk = extents[i] * inner;
    const T* src = parts[i].values().data();
    for (Index o = 0; o < outer; ++o) {
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.begin() + o * total_axis * inner + offset);
    }
    offset += chunk;
    inputs.push_back(parts[i].node());
  }
  return make_output<T>(Shape(dims), std::move(out), std::move(inputs),
                        [extents, outer, inner, total_axis](detail::Node<T>& self) {
                          Index offset = 0;
                          for (std::size_t i = 0; i < extents.size(); ++i) {
                            const Index chunk = extents[i] * inner;
                            auto& in = *self.inputs[i];
                            if (in.requires_grad) {
                              for (Index o = 0; o < outer; ++o) {
                                const T* g = self.grad.data() + o * total_axis * inner + offset;
                                T* dst = in.grad.data() + o * chunk;
                                for (Index j = 0; j < chunk; ++j) dst[j] += g[j];
                              }
                            }
                            offset += chunk;
                          }
                        });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& t) {
  std::vector<T> out(t.values().begin(), t.values().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return make_output<T>(t.shape(), std::move(out), {t.node()}, [](detail::Node<T>& self) {
    auto& xn = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (xn.values[i] > T(0)) xn.grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(sz(a.numel()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_output<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(sz(a.numel()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_output<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node<T>& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (an.requires_grad) an.grad[i] += self.grad[i] * bn.values[i];
      if (bn.requires_grad) bn.grad[i] += self.grad[i] * an.values[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& t, T factor) {
  std::vector<T> out(t.values().begin(), t.values().end());
  for (auto& v : out) v *= factor;
  return make_output<T>(t.shape(), std::move(out), {t.node()}, [factor](detail::Node<T>& self) {
    auto& xn = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn.grad[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& t) {
  T acc = T(0);
  for (T v : t.values()) acc += v;
  return make_output<T>(Shape{1}, {acc}, {t.node()}, [](detail::Node<T>& self) {
    auto& xn = *self.inputs[0];
    for (auto& g : xn.grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> log(const Tensor<T>& t) {
  std::vector<T> out(t.values().begin(), t.values().end());
  for (auto& v : out) {
    if (!(v > T(0))) throw NumericError("log: non-positive input " + std::to_string(v));
    v = std::log(v);
  }
  return make_output<T>(t.shape(), std::move(out), {t.node()}, [](detail::Node<T>& self) {
    auto& xn = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn.grad[i] += self.grad[i] / xn.values[i];
  });
}

template <typename T>
Tensor<T> nll_mean(const Tensor<T>& probs, const std::vector<int>& labels) {
  require_rank(probs, 2, "nll_mean");
  const Index n = probs.dim(0), classes = probs.dim(1);
  if (static_cast<Index>(labels.size()) != n) {
    throw InputError("nll_mean: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  constexpr T floor = T(1e-12);
  T acc = T(0);
  for (Index i = 0; i < n; ++i) {
    const int l = labels[sz(i)];
    if (l < 0 || l >= classes) throw InputError("nll_mean: label " + std::to_string(l) + " out of range");
    acc += -std::log(std::max(probs.values()[sz(i * classes + l)], floor));
  }
  return make_output<T>(Shape{1}, {acc / static_cast<T>(n)}, {probs.node()},
                        [labels, n, classes](detail::Node<T>& self) {
                          auto& pn = *self.inputs[0];
                          for (Index i = 0; i < n; ++i) {
                            const std::size_t idx = sz(i * classes + labels[sz(i)]);
                            const T p = pn.values[idx];
                            if (p > floor) pn.grad[idx] += -self.grad[0] / (static_cast<T>(n) * p);
                          }
                        });
}

#define CFIL_INSTANTIATE_OPS(T)                                                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Index, Index);      \
  template Tensor<T> maxpool2d(const Tensor<T>&, Index, Index);                                       \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                               \
  template Tensor<T> global_max_pool(const Tensor<T>&);                                               \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                  \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                         \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, Index);                                    \
  template Tensor<T> relu(const Tensor<T>&);                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> scale(const Tensor<T>&, T);                                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                           \
  template Tensor<T> log(const Tensor<T>&);                                                           \
  template Tensor<T> nll_mean(const Tensor<T>&, const std::vector<int>&);

CFIL_INSTANTIATE_OPS(float)
CFIL_INSTANTIATE_OPS(double)

}  // namespace cfil::ops
