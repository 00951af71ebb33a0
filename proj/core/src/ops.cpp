#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "fetrack/tensor.hpp"

namespace fetrack {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(TensorNode&)> backprop) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const Tensor& t : inputs) needs_grad = needs_grad || t.requires_grad();
  }
  node->requires_grad = needs_grad;
  if (needs_grad) {
    node->ensure_grad();
    for (const Tensor& t : inputs) node->parents.push_back(t.node_);
    node->backprop = std::move(backprop);
  }
  return Tensor(std::move(node));
}

// ---- broadcasting ----------------------------------------------------------

enum class Bcast { Same, Scalar, ChannelVec, SpatialMap };

struct BcastPlan {
  Bcast kind = Bcast::Same;
  std::int64_t n = 1, c = 1, hw = 1;  // dims of the full-shaped side
  bool b_has_batch = false;           // small side carries a matching batch dim
};

BcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* who) {
  BcastPlan plan;
  if (a == b) return plan;
  if (shape_numel(b) == 1) {
    plan.kind = Bcast::Scalar;
    return plan;
  }
  if (a.size() == 4) {
    plan.n = a[0];
    plan.c = a[1];
    plan.hw = a[2] * a[3];
    if (b.size() == 1 && b[0] == a[1]) {
      plan.kind = Bcast::ChannelVec;
      return plan;
    }
    if (b.size() == 4 && b[1] == a[1] && b[2] == 1 && b[3] == 1 && (b[0] == 1 || b[0] == a[0])) {
      plan.kind = Bcast::ChannelVec;
      plan.b_has_batch = b[0] == a[0] && a[0] != 1;
      return plan;
    }
    if (b.size() == 4 && b[1] == 1 && b[2] == a[2] && b[3] == a[3] &&
        (b[0] == 1 || b[0] == a[0])) {
      plan.kind = Bcast::SpatialMap;
      plan.b_has_batch = b[0] == a[0] && a[0] != 1;
      return plan;
    }
  }
  if (a.size() == 2 && b.size() == 2 && b[0] == 1 && b[1] == a[1]) {
    // (N,F) op (1,F): treat features as channels.
    plan.kind = Bcast::ChannelVec;
    plan.n = a[0];
    plan.c = a[1];
    plan.hw = 1;
    return plan;
  }
  throw ShapeError(std::string(who) + ": incompatible shapes " + shape_str(a) + " vs " +
                   shape_str(b));
}

inline std::int64_t bcast_index(const BcastPlan& p, std::int64_t i) {
  switch (p.kind) {
    case Bcast::Same:
      return i;
    case Bcast::Scalar:
      return 0;
    case Bcast::ChannelVec: {
      const std::int64_t n = i / (p.c * p.hw);
      const std::int64_t c = (i / p.hw) % p.c;
      return p.b_has_batch ? n * p.c + c : c;
    }
    case Bcast::SpatialMap: {
      const std::int64_t n = i / (p.c * p.hw);
      const std::int64_t s = i % p.hw;
      return p.b_has_batch ? n * p.hw + s : s;
    }
  }
  return 0;
}

// Picks the full-shaped operand first for commutative ops.
bool prefer_swap(const Shape& a, const Shape& b) {
  return shape_numel(a) < shape_numel(b);
}

Tensor binary_elementwise(const Tensor& a, const Tensor& b, bool is_mul, const char* who) {
  const Tensor& big = prefer_swap(a.shape(), b.shape()) ? b : a;
  const Tensor& small = prefer_swap(a.shape(), b.shape()) ? a : b;
  const BcastPlan plan = plan_broadcast(big.shape(), small.shape(), who);

  const auto& bv = big.data();
  const auto& sv = small.data();
  std::vector<double> out(bv.size());
  if (plan.kind == Bcast::Same) {
    if (is_mul) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = bv[i] * sv[i];
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = bv[i] + sv[i];
    }
  } else {
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(out.size()); ++i) {
      const double s = sv[static_cast<std::size_t>(bcast_index(plan, i))];
      out[static_cast<std::size_t>(i)] = is_mul ? bv[static_cast<std::size_t>(i)] * s
                                                : bv[static_cast<std::size_t>(i)] + s;
    }
  }

  NodePtr big_node = big.node_;
  NodePtr small_node = small.node_;
  return make_result(big.shape(), std::move(out), {big, small},
                     [big_node, small_node, plan, is_mul](TensorNode& self) {
                       const auto& g = self.grad;
                       if (big_node->requires_grad) {
                         big_node->ensure_grad();
                         if (is_mul) {
                           for (std::int64_t i = 0; i < static_cast<std::int64_t>(g.size()); ++i) {
                             big_node->grad[static_cast<std::size_t>(i)] +=
                                 g[static_cast<std::size_t>(i)] *
                                 small_node->value[static_cast<std::size_t>(bcast_index(plan, i))];
                           }
                         } else {
                           for (std::size_t i = 0; i < g.size(); ++i) big_node->grad[i] += g[i];
                         }
                       }
                       if (small_node->requires_grad) {
                         small_node->ensure_grad();
                         if (is_mul) {
                           for (std::int64_t i = 0; i < static_cast<std::int64_t>(g.size()); ++i) {
                             small_node->grad[static_cast<std::size_t>(bcast_index(plan, i))] +=
                                 g[static_cast<std::size_t>(i)] *
                                 big_node->value[static_cast<std::size_t>(i)];
                           }
                         } else {
                           for (std::int64_t i = 0; i < static_cast<std::int64_t>(g.size()); ++i) {
                             small_node->grad[static_cast<std::size_t>(bcast_index(plan, i))] +=
                                 g[static_cast<std::size_t>(i)];
                           }
                         }
                       }
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, false, "add"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, true, "mul"); }

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= s;
  NodePtr an = a.node_;
  return make_result(a.shape(), std::move(out), {a}, [an, s](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += s * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v += s;
  NodePtr an = a.node_;
  return make_result(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto& av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-av[i]));
  NodePtr an = a.node_;
  return make_result(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      an->grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto& av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  NodePtr an = a.node_;
  return make_result(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (an->value[i] > 0.0) an->grad[i] += self.grad[i];
    }
  });
}

Tensor square(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto& av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * av[i];
  NodePtr an = a.node_;
  return make_result(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      an->grad[i] += self.grad[i] * 2.0 * an->value[i];
    }
  });
}

// ---- conv2d ----------------------------------------------------------------

namespace {

struct ConvDims {
  std::int64_t n, ci, h, w, co, kh, kw, ho, wo;
  int stride, pad;
};

ConvDims conv_dims(const Shape& x, const Shape& k, const Tensor& bias, int stride, int padding) {
  if (x.size() != 4 || k.size() != 4) {
    throw ShapeError("conv2d: input " + shape_str(x) + ", kernel " + shape_str(k));
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  if (x[1] != k[1]) {
    throw ShapeError("conv2d: channel mismatch, input " + shape_str(x) + " vs kernel " +
                     shape_str(k));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != k[0])) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));
  }
  ConvDims d{};
  d.n = x[0];
  d.ci = x[1];
  d.h = x[2];
  d.w = x[3];
  d.co = k[0];
  d.kh = k[2];
  d.kw = k[3];
  d.stride = stride;
  d.pad = padding;
  d.ho = (d.h + 2 * padding - d.kh) / stride + 1;
  d.wo = (d.w + 2 * padding - d.kw) / stride + 1;
  if (d.ho < 1 || d.wo < 1) {
    throw ShapeError("conv2d: kernel larger than padded input (" + shape_str(x) + " vs " +
                     shape_str(k) + ")");
  }
  return d;
}

// Valid output-column range for a kernel column kx: ix = ox*s + kx - pad in [0, w).
inline void ox_range(const ConvDims& d, std::int64_t kx, std::int64_t& lo, std::int64_t& hi) {
  const std::int64_t off = kx - d.pad;
  lo = off >= 0 ? 0 : (-off + d.stride - 1) / d.stride;
  const std::int64_t limit = d.w - 1 - off;
  hi = limit < 0 ? -1 : limit / d.stride;  // inclusive
  if (hi > d.wo - 1) hi = d.wo - 1;
}

void conv_forward(const ConvDims& d, const double* x, const double* k, const double* bias,
                  double* out) {
  const std::int64_t in_plane = d.h * d.w;
  const std::int64_t out_plane = d.ho * d.wo;
  for (std::int64_t n = 0; n < d.n; ++n) {
    for (std::int64_t co = 0; co < d.co; ++co) {
      double* oplane = out + (n * d.co + co) * out_plane;
      const double fill = bias ? bias[co] : 0.0;
      std::fill(oplane, oplane + out_plane, fill);
      for (std::int64_t ci = 0; ci < d.ci; ++ci) {
        const double* iplane = x + (n * d.ci + ci) * in_plane;
        const double* kplane = k + ((co * d.ci + ci) * d.kh) * d.kw;
        for (std::int64_t ky = 0; ky < d.kh; ++ky) {
          for (std::int64_t kx = 0; kx < d.kw; ++kx) {
            const double wv = kplane[ky * d.kw + kx];
            if (wv == 0.0) continue;
            std::int64_t lo, hi;
            ox_range(d, kx, lo, hi);
            for (std::int64_t oy = 0; oy < d.ho; ++oy) {
              const std::int64_t iy = oy * d.stride + ky - d.pad;
              if (iy < 0 || iy >= d.h) continue;
              const double* irow = iplane + iy * d.w + (kx - d.pad);
              double* orow = oplane + oy * d.wo;
              if (d.stride == 1) {
                for (std::int64_t ox = lo; ox <= hi; ++ox) orow[ox] += wv * irow[ox];
              } else {
                for (std::int64_t ox = lo; ox <= hi; ++ox) orow[ox] += wv * irow[ox * d.stride];
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward_input(const ConvDims& d, const double* k, const double* gout, double* gx) {
  const std::int64_t in_plane = d.h * d.w;
  const std::int64_t out_plane = d.ho * d.wo;
  for (std::int64_t n = 0; n < d.n; ++n) {
    for (std::int64_t co = 0; co < d.co; ++co) {
      const double* gplane = gout + (n * d.co + co) * out_plane;
      for (std::int64_t ci = 0; ci < d.ci; ++ci) {
        double* gxplane = gx + (n * d.ci + ci) * in_plane;
        const double* kplane = k + ((co * d.ci + ci) * d.kh) * d.kw;
        for (std::int64_t ky = 0; ky < d.kh; ++ky) {
          for (std::int64_t kx = 0; kx < d.kw; ++kx) {
            const double wv = kplane[ky * d.kw + kx];
            if (wv == 0.0) continue;
            std::int64_t lo, hi;
            ox_range(d, kx, lo, hi);
            for (std::int64_t oy = 0; oy < d.ho; ++oy) {
              const std::int64_t iy = oy * d.stride + ky - d.pad;
              if (iy < 0 || iy >= d.h) continue;
              double* gxrow = gxplane + iy * d.w + (kx - d.pad);
              const double* grow = gplane + oy * d.wo;
              if (d.stride == 1) {
                for (std::int64_t ox = lo; ox <= hi; ++ox) gxrow[ox] += wv * grow[ox];
              } else {
                for (std::int64_t ox = lo; ox <= hi; ++ox) gxrow[ox * d.stride] += wv * grow[ox];
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward_kernel(const ConvDims& d, const double* x, const double* gout, double* gk) {
  const std::int64_t in_plane = d.h * d.w;
  const std::int64_t out_plane = d.ho * d.wo;
  for (std::int64_t n = 0; n < d.n; ++n) {
    for (std::int64_t co = 0; co < d.co; ++co) {
      const double* gplane = gout + (n * d.co + co) * out_plane;
      for (std::int64_t ci = 0; ci < d.ci; ++ci) {
        const double* iplane = x + (n * d.ci + ci) * in_plane;
        double* gkplane = gk + ((co * d.ci + ci) * d.kh) * d.kw;
        for (std::int64_t ky = 0; ky < d.kh; ++ky) {
          for (std::int64_t kx = 0; kx < d.kw; ++kx) {
            std::int64_t lo, hi;
            ox_range(d, kx, lo, hi);
            double acc = 0.0;
            for (std::int64_t oy = 0; oy < d.ho; ++oy) {
              const std::int64_t iy = oy * d.stride + ky - d.pad;
              if (iy < 0 || iy >= d.h) continue;
              const double* irow = iplane + iy * d.w + (kx - d.pad);
              const double* grow = gplane + oy * d.wo;
              if (d.stride == 1) {
                for (std::int64_t ox = lo; ox <= hi; ++ox) acc += grow[ox] * irow[ox];
              } else {
                for (std::int64_t ox = lo; ox <= hi; ++ox) acc += grow[ox] * irow[ox * d.stride];
              }
            }
            gkplane[ky * d.kw + kx] += acc;
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), bias, stride, padding);
  std::vector<double> out(static_cast<std::size_t>(d.n * d.co * d.ho * d.wo));
  conv_forward(d, x.data().data(), w.data().data(), bias.defined() ? bias.data().data() : nullptr,
               out.data());

  std::vector<Tensor> inputs = {x, w};
  if (bias.defined()) inputs.push_back(bias);
  NodePtr xn = x.node_;
  NodePtr wn = w.node_;
  NodePtr bn = bias.defined() ? bias.node_ : nullptr;
  return make_result({d.n, d.co, d.ho, d.wo}, std::move(out), std::move(inputs),
                     [d, xn, wn, bn](TensorNode& self) {
                       const double* g = self.grad.data();
                       if (xn->requires_grad) {
                         xn->ensure_grad();
                         conv_backward_input(d, wn->value.data(), g, xn->grad.data());
                       }
                       if (wn->requires_grad) {
                         wn->ensure_grad();
                         conv_backward_kernel(d, xn->value.data(), g, wn->grad.data());
                       }
                       if (bn && bn->requires_grad) {
                         bn->ensure_grad();
                         const std::int64_t out_plane = d.ho * d.wo;
                         for (std::int64_t n = 0; n < d.n; ++n) {
                           for (std::int64_t co = 0; co < d.co; ++co) {
                             const double* gplane = g + (n * d.co + co) * out_plane;
                             double acc = 0.0;
                             for (std::int64_t i = 0; i < out_plane; ++i) acc += gplane[i];
                             bn->grad[static_cast<std::size_t>(co)] += acc;
                           }
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + ", weight " +
                     shape_str(w.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != w.dim(0))) {
    throw ShapeError("linear: bias shape " + shape_str(bias.shape()));
  }
  const std::int64_t n = x.dim(0), fi = x.dim(1), fo = w.dim(0);
  std::vector<double> out(static_cast<std::size_t>(n * fo));
  const double* xv = x.data().data();
  const double* wv = w.data().data();
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t o = 0; o < fo; ++o) {
      double acc = bias.defined() ? bias.data()[static_cast<std::size_t>(o)] : 0.0;
      const double* xr = xv + r * fi;
      const double* wr = wv + o * fi;
      for (std::int64_t i = 0; i < fi; ++i) acc += xr[i] * wr[i];
      out[static_cast<std::size_t>(r * fo + o)] = acc;
    }
  }

  std::vector<Tensor> inputs = {x, w};
  if (bias.defined()) inputs.push_back(bias);
  NodePtr xn = x.node_;
  NodePtr wn = w.node_;
  NodePtr bn = bias.defined() ? bias.node_ : nullptr;
  return make_result({n, fo}, std::move(out), std::move(inputs),
                     [n, fi, fo, xn, wn, bn](TensorNode& self) {
                       const double* g = self.grad.data();
                       if (xn->requires_grad) {
                         xn->ensure_grad();
                         for (std::int64_t r = 0; r < n; ++r)
                           for (std::int64_t o = 0; o < fo; ++o) {
                             const double gv = g[r * fo + o];
                             if (gv == 0.0) continue;
                             const double* wr = wn->value.data() + o * fi;
                             double* gx = xn->grad.data() + r * fi;
                             for (std::int64_t i = 0; i < fi; ++i) gx[i] += gv * wr[i];
                           }
                       }
                       if (wn->requires_grad) {
                         wn->ensure_grad();
                         for (std::int64_t r = 0; r < n; ++r)
                           for (std::int64_t o = 0; o < fo; ++o) {
                             const double gv = g[r * fo + o];
                             if (gv == 0.0) continue;
                             const double* xr = xn->value.data() + r * fi;
                             double* gw = wn->grad.data() + o * fi;
                             for (std::int64_t i = 0; i < fi; ++i) gw[i] += gv * xr[i];
                           }
                       }
                       if (bn && bn->requires_grad) {
                         bn->ensure_grad();
                         for (std::int64_t r = 0; r < n; ++r)
                           for (std::int64_t o = 0; o < fo; ++o)
                             bn->grad[static_cast<std::size_t>(o)] += g[r * fo + o];
                       }
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  NodePtr an = a.node_;
  return make_result(std::move(shape), std::move(out), {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Tensor flatten2(const Tensor& a) {
  const std::int64_t n = a.rank() >= 1 ? a.dim(0) : 1;
  return reshape(a, {n, a.numel() / n});
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const int rank = parts[0].rank();
  if (rank != 2 && rank != 4) throw ShapeError("concat_channels: rank must be 2 or 4");
  Shape out_shape = parts[0].shape();
  std::int64_t total_c = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank || p.dim(0) != out_shape[0] ||
        (rank == 4 && (p.dim(2) != out_shape[2] || p.dim(3) != out_shape[3]))) {
      throw ShapeError("concat_channels: mismatched shapes " + shape_str(p.shape()) + " vs " +
                       shape_str(out_shape));
    }
    total_c += p.dim(1);
  }
  out_shape[1] = total_c;
  const std::int64_t n = out_shape[0];
  const std::int64_t hw = rank == 4 ? out_shape[2] * out_shape[3] : 1;

  std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::int64_t c_off = 0;
  for (const Tensor& p : parts) {
    const std::int64_t pc = p.dim(1);
    for (std::int64_t b = 0; b < n; ++b) {
      const double* src = p.data().data() + b * pc * hw;
      double* dst = out.data() + (b * total_c + c_off) * hw;
      std::memcpy(dst, src, static_cast<std::size_t>(pc * hw) * sizeof(double));
    }
    c_off += pc;
  }

  std::vector<NodePtr> nodes;
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const Tensor& p : parts) {
    nodes.push_back(p.node_);
    offsets.push_back(off);
    off += p.dim(1);
  }
  return make_result(out_shape, std::move(out), parts,
                     [nodes, offsets, n, hw, total_c](TensorNode& self) {
                       for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                         const NodePtr& pn = nodes[pi];
                         if (!pn->requires_grad) continue;
                         pn->ensure_grad();
                         const std::int64_t pc = pn->shape[1];
                         for (std::int64_t b = 0; b < n; ++b) {
                           const double* src = self.grad.data() + (b * total_c + offsets[pi]) * hw;
                           double* dst = pn->grad.data() + b * pc * hw;
                           for (std::int64_t i = 0; i < pc * hw; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no inputs");
  Shape out_shape = parts[0].shape();
  std::int64_t total_n = 0;
  const std::int64_t per = shape_numel(out_shape) / out_shape[0];
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat_batch: rank mismatch");
    for (std::size_t i = 1; i < s.size(); ++i) {
      if (s[i] != out_shape[i]) throw ShapeError("concat_batch: trailing dims differ");
    }
    total_n += s[0];
  }
  out_shape[0] = total_n;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(total_n * per));
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());

  std::vector<NodePtr> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.node_);
  return make_result(out_shape, std::move(out), parts, [nodes, per](TensorNode& self) {
    std::int64_t off = 0;
    for (const NodePtr& pn : nodes) {
      const std::int64_t count = pn->shape[0] * per;
      if (pn->requires_grad) {
        pn->ensure_grad();
        for (std::int64_t i = 0; i < count; ++i) pn->grad[i] += self.grad[off + i];
      }
      off += count;
    }
  });
}

Tensor slice_batch(const Tensor& a, std::int64_t index) {
  if (a.rank() < 1 || index < 0 || index >= a.dim(0)) {
    throw ShapeError("slice_batch: index out of range");
  }
  Shape out_shape = a.shape();
  out_shape[0] = 1;
  const std::int64_t per = a.numel() / a.dim(0);
  std::vector<double> out(a.data().begin() + index * per, a.data().begin() + (index + 1) * per);
  NodePtr an = a.node_;
  return make_result(out_shape, std::move(out), {a}, [an, index, per](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::int64_t i = 0; i < per; ++i) an->grad[index * per + i] += self.grad[i];
  });
}

Tensor crop_spatial(const Tensor& a, std::int64_t y0, std::int64_t y1, std::int64_t x0,
                    std::int64_t x1) {
  if (a.rank() != 4) throw ShapeError("crop_spatial: rank-4 input required");
  const std::int64_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  if (y0 < 0 || x0 < 0 || y1 > h || x1 > w || y0 >= y1 || x0 >= x1) {
    throw ShapeError("crop_spatial: bad window");
  }
  const std::int64_t oh = y1 - y0, ow = x1 - x0;
  std::vector<double> out(static_cast<std::size_t>(n * c * oh * ow));
  const double* av = a.data().data();
  for (std::int64_t p = 0; p < n * c; ++p) {
    for (std::int64_t y = 0; y < oh; ++y) {
      const double* src = av + (p * h + (y + y0)) * w + x0;
      double* dst = out.data() + (p * oh + y) * ow;
      std::memcpy(dst, src, static_cast<std::size_t>(ow) * sizeof(double));
    }
  }
  NodePtr an = a.node_;
  return make_result({n, c, oh, ow}, std::move(out), {a},
                     [an, n, c, h, w, y0, x0, oh, ow](TensorNode& self) {
                       if (!an->requires_grad) return;
                       an->ensure_grad();
                       for (std::int64_t p = 0; p < n * c; ++p) {
                         for (std::int64_t y = 0; y < oh; ++y) {
                           double* dst = an->grad.data() + (p * h + (y + y0)) * w + x0;
                           const double* src = self.grad.data() + (p * oh + y) * ow;
                           for (std::int64_t x = 0; x < ow; ++x) dst[x] += src[x];
                         }
                       }
                     });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  NodePtr an = a.node_;
  return make_result({1}, {acc}, {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_channels(const Tensor& a) {
  if (a.rank() != 4) throw ShapeError("sum_channels: rank-4 input required");
  const std::int64_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<double> out(static_cast<std::size_t>(n * hw), 0.0);
  const double* av = a.data().data();
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double* plane = av + (b * c + ch) * hw;
      double* dst = out.data() + b * hw;
      for (std::int64_t i = 0; i < hw; ++i) dst[i] += plane[i];
    }
  }
  NodePtr an = a.node_;
  return make_result({n, 1, a.dim(2), a.dim(3)}, std::move(out), {a},
                     [an, n, c, hw](TensorNode& self) {
                       if (!an->requires_grad) return;
                       an->ensure_grad();
                       for (std::int64_t b = 0; b < n; ++b) {
                         const double* src = self.grad.data() + b * hw;
                         for (std::int64_t ch = 0; ch < c; ++ch) {
                           double* dst = an->grad.data() + (b * c + ch) * hw;
                           for (std::int64_t i = 0; i < hw; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor adaptive_avg_pool(const Tensor& a) {
  if (a.rank() != 4) throw ShapeError("adaptive_avg_pool: rank-4 input required");
  const std::int64_t nc = a.dim(0) * a.dim(1), hw = a.dim(2) * a.dim(3);
  if (hw == 0) throw ShapeError("adaptive_avg_pool: empty spatial extent");
  std::vector<double> out(static_cast<std::size_t>(nc));
  const double* av = a.data().data();
  for (std::int64_t p = 0; p < nc; ++p) {
    double acc = 0.0;
    const double* plane = av + p * hw;
    for (std::int64_t i = 0; i < hw; ++i) acc += plane[i];
    out[static_cast<std::size_t>(p)] = acc / static_cast<double>(hw);
  }
  NodePtr an = a.node_;
  return make_result({a.dim(0), a.dim(1), 1, 1}, std::move(out), {a},
                     [an, nc, hw](TensorNode& self) {
                       if (!an->requires_grad) return;
                       an->ensure_grad();
                       const double inv = 1.0 / static_cast<double>(hw);
                       for (std::int64_t p = 0; p < nc; ++p) {
                         const double g = self.grad[static_cast<std::size_t>(p)] * inv;
                         double* dst = an->grad.data() + p * hw;
                         for (std::int64_t i = 0; i < hw; ++i) dst[i] += g;
                       }
                     });
}

namespace {

struct PoolDims {
  std::int64_t nc, h, w, ho, wo;
  int k, s;
};

PoolDims pool_dims(const Tensor& a, int kernel, int stride, const char* who) {
  if (a.rank() != 4) throw ShapeError(std::string(who) + ": rank-4 input required");
  if (kernel < 1 || stride < 1) throw ShapeError(std::string(who) + ": bad kernel/stride");
  PoolDims d{};
  d.nc = a.dim(0) * a.dim(1);
  d.h = a.dim(2);
  d.w = a.dim(3);
  d.k = kernel;
  d.s = stride;
  d.ho = (d.h - kernel) / stride + 1;
  d.wo = (d.w - kernel) / stride + 1;
  if (d.ho < 1 || d.wo < 1) throw ShapeError(std::string(who) + ": window larger than input");
  return d;
}

}  // namespace

Tensor avg_pool(const Tensor& a, int kernel, int stride) {
  const PoolDims d = pool_dims(a, kernel, stride, "avg_pool");
  std::vector<double> out(static_cast<std::size_t>(d.nc * d.ho * d.wo));
  const double* av = a.data().data();
  const double inv = 1.0 / (d.k * d.k);
  for (std::int64_t p = 0; p < d.nc; ++p) {
    const double* plane = av + p * d.h * d.w;
    double* oplane = out.data() + p * d.ho * d.wo;
    for (std::int64_t oy = 0; oy < d.ho; ++oy) {
      for (std::int64_t ox = 0; ox < d.wo; ++ox) {
        double acc = 0.0;
        for (int ky = 0; ky < d.k; ++ky)
          for (int kx = 0; kx < d.k; ++kx)
            acc += plane[(oy * d.s + ky) * d.w + ox * d.s + kx];
        oplane[oy * d.wo + ox] = acc * inv;
      }
    }
  }
  NodePtr an = a.node_;
  return make_result({a.dim(0), a.dim(1), d.ho, d.wo}, std::move(out), {a},
                     [an, d, inv](TensorNode& self) {
                       if (!an->requires_grad) return;
                       an->ensure_grad();
                       for (std::int64_t p = 0; p < d.nc; ++p) {
                         double* gplane = an->grad.data() + p * d.h * d.w;
                         const double* goplane = self.grad.data() + p * d.ho * d.wo;
                         for (std::int64_t oy = 0; oy < d.ho; ++oy)
                           for (std::int64_t ox = 0; ox < d.wo; ++ox) {
                             const double g = goplane[oy * d.wo + ox] * inv;
                             for (int ky = 0; ky < d.k; ++ky)
                               for (int kx = 0; kx < d.k; ++kx)
                                 gplane[(oy * d.s + ky) * d.w + ox * d.s + kx] += g;
                           }
                       }
                     });
}

Tensor max_pool(const Tensor& a, int kernel, int stride) {
  const PoolDims d = pool_dims(a, kernel, stride, "max_pool");
  std::vector<double> out(static_cast<std::size_t>(d.nc * d.ho * d.wo));
  std::vector<std::int64_t> arg(out.size());
  const double* av = a.data().data();
  for (std::int64_t p = 0; p < d.nc; ++p) {
    const double* plane = av + p * d.h * d.w;
    for (std::int64_t oy = 0; oy < d.ho; ++oy) {
      for (std::int64_t ox = 0; ox < d.wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::int64_t best_idx = 0;
        for (int ky = 0; ky < d.k; ++ky)
          for (int kx = 0; kx < d.k; ++kx) {
            const std::int64_t idx = (oy * d.s + ky) * d.w + ox * d.s + kx;
            if (plane[idx] > best) {
              best = plane[idx];
              best_idx = idx;
            }
          }
        const std::size_t o = static_cast<std::size_t>(p * d.ho * d.wo + oy * d.wo + ox);
        out[o] = best;
        arg[o] = p * d.h * d.w + best_idx;
      }
    }
  }
  NodePtr an = a.node_;
  return make_result({a.dim(0), a.dim(1), d.ho, d.wo}, std::move(out), {a},
                     [an, arg](TensorNode& self) {
                       if (!an->requires_grad) return;
                       an->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         an->grad[static_cast<std::size_t>(arg[i])] += self.grad[i];
                       }
                     });
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor running_mean,
                 Tensor running_var, bool training, double momentum, double eps) {
  if (x.rank() != 4) throw ShapeError("batchnorm: rank-4 input required");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  auto check_param = [c](const Tensor& t, const char* name) {
    if (!t.defined() || t.rank() != 1 || t.dim(0) != c) {
      throw ShapeError(std::string("batchnorm: ") + name + " must have shape (C)");
    }
  };
  check_param(gamma, "gamma");
  check_param(beta, "beta");
  if (!training) {
    if (!running_mean.defined() || !running_var.defined()) {
      throw StateError("batchnorm: eval mode requires running statistics");
    }
    check_param(running_mean, "running_mean");
    check_param(running_var, "running_var");
  } else {
    check_param(running_mean, "running_mean");
    check_param(running_var, "running_var");
  }

  const std::int64_t count = n * hw;
  std::vector<double> mean_c(static_cast<std::size_t>(c));
  std::vector<double> inv_std(static_cast<std::size_t>(c));
  const double* xv = x.data().data();

  if (training) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double m = 0.0;
      for (std::int64_t b = 0; b < n; ++b) {
        const double* plane = xv + (b * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) m += plane[i];
      }
      m /= static_cast<double>(count);
      double v = 0.0;
      for (std::int64_t b = 0; b < n; ++b) {
        const double* plane = xv + (b * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const double dxv = plane[i] - m;
          v += dxv * dxv;
        }
      }
      v /= static_cast<double>(count);
      mean_c[static_cast<std::size_t>(ch)] = m;
      inv_std[static_cast<std::size_t>(ch)] = 1.0 / std::sqrt(v + eps);
      // Biased batch variance feeds the running estimate as well.
      running_mean.data()[static_cast<std::size_t>(ch)] =
          (1.0 - momentum) * running_mean.data()[static_cast<std::size_t>(ch)] + momentum * m;
      running_var.data()[static_cast<std::size_t>(ch)] =
          (1.0 - momentum) * running_var.data()[static_cast<std::size_t>(ch)] + momentum * v;
    }
  } else {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean_c[static_cast<std::size_t>(ch)] = running_mean.data()[static_cast<std::size_t>(ch)];
      inv_std[static_cast<std::size_t>(ch)] =
          1.0 / std::sqrt(running_var.data()[static_cast<std::size_t>(ch)] + eps);
    }
  }

  std::vector<double> xhat(static_cast<std::size_t>(n * c * hw));
  std::vector<double> out(xhat.size());
  const double* gv = gamma.data().data();
  const double* bv = beta.data().data();
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double m = mean_c[static_cast<std::size_t>(ch)];
      const double is = inv_std[static_cast<std::size_t>(ch)];
      const double gch = gv[ch];
      const double bch = bv[ch];
      const double* plane = xv + (b * c + ch) * hw;
      double* xh = xhat.data() + (b * c + ch) * hw;
      double* o = out.data() + (b * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        xh[i] = (plane[i] - m) * is;
        o[i] = gch * xh[i] + bch;
      }
    }
  }

  NodePtr xn = x.node_;
  NodePtr gn = gamma.node_;
  NodePtr bn = beta.node_;
  auto xhat_saved = std::make_shared<std::vector<double>>(std::move(xhat));
  auto inv_std_saved = std::make_shared<std::vector<double>>(std::move(inv_std));
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, xhat_saved, inv_std_saved, n, c, hw, training](TensorNode& self) {
        const double* g = self.grad.data();
        const std::int64_t count = n * hw;
        const auto& xh = *xhat_saved;
        const auto& is = *inv_std_saved;
        if (gn->requires_grad || bn->requires_grad) {
          if (gn->requires_grad) gn->ensure_grad();
          if (bn->requires_grad) bn->ensure_grad();
          for (std::int64_t ch = 0; ch < c; ++ch) {
            double dg = 0.0, db = 0.0;
            for (std::int64_t b = 0; b < n; ++b) {
              const double* gp = g + (b * c + ch) * hw;
              const double* xp = xh.data() + (b * c + ch) * hw;
              for (std::int64_t i = 0; i < hw; ++i) {
                dg += gp[i] * xp[i];
                db += gp[i];
              }
            }
            if (gn->requires_grad) gn->grad[static_cast<std::size_t>(ch)] += dg;
            if (bn->requires_grad) bn->grad[static_cast<std::size_t>(ch)] += db;
          }
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const double gch = gn->value[static_cast<std::size_t>(ch)];
            const double isch = is[static_cast<std::size_t>(ch)];
            if (training) {
              double sum_g = 0.0, sum_gx = 0.0;
              for (std::int64_t b = 0; b < n; ++b) {
                const double* gp = g + (b * c + ch) * hw;
                const double* xp = xh.data() + (b * c + ch) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                  sum_g += gp[i];
                  sum_gx += gp[i] * xp[i];
                }
              }
              const double mean_g = sum_g / static_cast<double>(count);
              const double mean_gx = sum_gx / static_cast<double>(count);
              for (std::int64_t b = 0; b < n; ++b) {
                const double* gp = g + (b * c + ch) * hw;
                const double* xp = xh.data() + (b * c + ch) * hw;
                double* dst = xn->grad.data() + (b * c + ch) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                  dst[i] += gch * isch * (gp[i] - mean_g - xp[i] * mean_gx);
                }
              }
            } else {
              for (std::int64_t b = 0; b < n; ++b) {
                const double* gp = g + (b * c + ch) * hw;
                double* dst = xn->grad.data() + (b * c + ch) * hw;
                for (std::int64_t i = 0; i < hw; ++i) dst[i] += gch * isch * gp[i];
              }
            }
          }
        }
      });
}

// ---- region pooling --------------------------------------------------------

namespace {

struct RegionDims {
  std::int64_t n, c, h, w, r;
  int oh, ow, samples;
  double scale;
  double offset;
  bool shared_features;
};

RegionDims region_dims(const Tensor& features, const Tensor& boxes, int out_h, int out_w,
                       double spatial_scale, int samples) {
  if (features.rank() != 4) throw ShapeError("region_pool: features must be (N,C,H,W)");
  if (boxes.rank() != 2 || boxes.dim(1) != 4) throw ShapeError("region_pool: boxes must be (R,4)");
  if (out_h < 1 || out_w < 1 || samples < 1) throw ShapeError("region_pool: bad output grid");
  RegionDims d{};
  d.n = features.dim(0);
  d.c = features.dim(1);
  d.h = features.dim(2);
  d.w = features.dim(3);
  d.r = boxes.dim(0);
  d.oh = out_h;
  d.ow = out_w;
  d.samples = samples;
  d.scale = spatial_scale;
  if (d.n == d.r) {
    d.shared_features = false;
  } else if (d.n == 1) {
    d.shared_features = true;
  } else {
    throw ShapeError("region_pool: features batch must be 1 or match box count");
  }
  for (std::int64_t i = 0; i < d.r; ++i) {
    const double bw = boxes.data()[static_cast<std::size_t>(i * 4 + 2)];
    const double bh = boxes.data()[static_cast<std::size_t>(i * 4 + 3)];
    if (!(bw > 0.0) || !(bh > 0.0)) {
      throw BoxError("region_pool: box " + std::to_string(i) + " has non-positive extent");
    }
  }
  return d;
}

struct Tap {
  std::int64_t i00, i01, i10, i11;
  double w00, w01, w10, w11;
  double du, dv;  // d(value)/d(sample position), filled by the caller per channel
};

// Bilinear corner indices/weights for one continuous position.
inline void make_tap(double u, double v, std::int64_t h, std::int64_t w, Tap& tap) {
  const double uu = u - 0.5;
  const double vv = v - 0.5;
  const double fx = std::floor(uu);
  const double fy = std::floor(vv);
  const double tx = uu - fx;
  const double ty = vv - fy;
  const auto cx0 = static_cast<std::int64_t>(std::clamp(fx, 0.0, static_cast<double>(w - 1)));
  const auto cx1 = static_cast<std::int64_t>(std::clamp(fx + 1.0, 0.0, static_cast<double>(w - 1)));
  const auto cy0 = static_cast<std::int64_t>(std::clamp(fy, 0.0, static_cast<double>(h - 1)));
  const auto cy1 = static_cast<std::int64_t>(std::clamp(fy + 1.0, 0.0, static_cast<double>(h - 1)));
  tap.i00 = cy0 * w + cx0;
  tap.i01 = cy0 * w + cx1;
  tap.i10 = cy1 * w + cx0;
  tap.i11 = cy1 * w + cx1;
  tap.w00 = (1.0 - tx) * (1.0 - ty);
  tap.w01 = tx * (1.0 - ty);
  tap.w10 = (1.0 - tx) * ty;
  tap.w11 = tx * ty;
  tap.du = 0.0;
  tap.dv = 0.0;
}

}  // namespace

Tensor region_pool(const Tensor& features, const Tensor& boxes, int out_h, int out_w,
                   double spatial_scale, int samples, double coord_offset) {
  RegionDims d = region_dims(features, boxes, out_h, out_w, spatial_scale, samples);
  d.offset = coord_offset;
  const double inv_s2 = 1.0 / (d.samples * d.samples);
  std::vector<double> out(static_cast<std::size_t>(d.r * d.c * d.oh * d.ow), 0.0);
  const double* fv = features.data().data();
  const double* bx = boxes.data().data();

  for (std::int64_t r = 0; r < d.r; ++r) {
    const double fx = bx[r * 4 + 0] * d.scale + d.offset;
    const double fy = bx[r * 4 + 1] * d.scale + d.offset;
    const double cw = bx[r * 4 + 2] * d.scale / d.ow;
    const double ch = bx[r * 4 + 3] * d.scale / d.oh;
    const std::int64_t sample = d.shared_features ? 0 : r;
    for (int i = 0; i < d.oh; ++i) {
      for (int j = 0; j < d.ow; ++j) {
        Tap tap;
        for (int sb = 0; sb < d.samples; ++sb) {
          const double v = fy + (i + (sb + 0.5) / d.samples) * ch;
          for (int sa = 0; sa < d.samples; ++sa) {
            const double u = fx + (j + (sa + 0.5) / d.samples) * cw;
            make_tap(u, v, d.h, d.w, tap);
            for (std::int64_t c = 0; c < d.c; ++c) {
              const double* plane = fv + (sample * d.c + c) * d.h * d.w;
              out[static_cast<std::size_t>(((r * d.c + c) * d.oh + i) * d.ow + j)] +=
                  inv_s2 * (tap.w00 * plane[tap.i00] + tap.w01 * plane[tap.i01] +
                            tap.w10 * plane[tap.i10] + tap.w11 * plane[tap.i11]);
            }
          }
        }
      }
    }
  }

  NodePtr fn = features.node_;
  NodePtr bn = boxes.node_;
  return make_result(
      {d.r, d.c, static_cast<std::int64_t>(d.oh), static_cast<std::int64_t>(d.ow)},
      std::move(out), {features, boxes}, [fn, bn, d, inv_s2](TensorNode& self) {
        const double* g = self.grad.data();
        const double* fv = fn->value.data();
        const double* bx = bn->value.data();
        const bool need_f = fn->requires_grad;
        const bool need_b = bn->requires_grad;
        if (need_f) fn->ensure_grad();
        if (need_b) bn->ensure_grad();
        if (!need_f && !need_b) return;

        for (std::int64_t r = 0; r < d.r; ++r) {
          const double fx = bx[r * 4 + 0] * d.scale + d.offset;
          const double fy = bx[r * 4 + 1] * d.scale + d.offset;
          const double cw = bx[r * 4 + 2] * d.scale / d.ow;
          const double ch = bx[r * 4 + 3] * d.scale / d.oh;
          const std::int64_t sample = d.shared_features ? 0 : r;
          double dbox[4] = {0.0, 0.0, 0.0, 0.0};
          for (int i = 0; i < d.oh; ++i) {
            for (int j = 0; j < d.ow; ++j) {
              Tap tap;
              for (int sb = 0; sb < d.samples; ++sb) {
                const double frac_v = (i + (sb + 0.5) / d.samples);
                const double v = fy + frac_v * ch;
                for (int sa = 0; sa < d.samples; ++sa) {
                  const double frac_u = (j + (sa + 0.5) / d.samples);
                  const double u = fx + frac_u * cw;
                  make_tap(u, v, d.h, d.w, tap);
                  for (std::int64_t c = 0; c < d.c; ++c) {
                    const double gv =
                        g[((r * d.c + c) * d.oh + i) * d.ow + j] * inv_s2;
                    if (gv == 0.0) continue;
                    const std::int64_t base = (sample * d.c + c) * d.h * d.w;
                    if (need_f) {
                      fn->grad[base + tap.i00] += gv * tap.w00;
                      fn->grad[base + tap.i01] += gv * tap.w01;
                      fn->grad[base + tap.i10] += gv * tap.w10;
                      fn->grad[base + tap.i11] += gv * tap.w11;
                    }
                    if (need_b) {
                      const double* plane = fv + base;
                      const double ty = tap.w10 + tap.w11;  // = ty
                      const double tx = tap.w01 + tap.w11;  // = tx
                      const double dval_du = (plane[tap.i01] - plane[tap.i00]) * (1.0 - ty) +
                                             (plane[tap.i11] - plane[tap.i10]) * ty;
                      const double dval_dv = (plane[tap.i10] - plane[tap.i00]) * (1.0 - tx) +
                                             (plane[tap.i11] - plane[tap.i01]) * tx;
                      dbox[0] += gv * dval_du * d.scale;
                      dbox[1] += gv * dval_dv * d.scale;
                      dbox[2] += gv * dval_du * d.scale * frac_u / d.ow;
                      dbox[3] += gv * dval_dv * d.scale * frac_v / d.oh;
                    }
                  }
                }
              }
            }
          }
          if (need_b) {
            for (int k = 0; k < 4; ++k) bn->grad[static_cast<std::size_t>(r * 4 + k)] += dbox[k];
          }
        }
      });
}

Tensor hinge_residual(const Tensor& scores, const Tensor& labels) {
  if (scores.shape() != labels.shape()) {
    throw ShapeError("hinge_residual: shape mismatch " + shape_str(scores.shape()) + " vs " +
                     shape_str(labels.shape()));
  }
  const auto& sv = scores.data();
  const auto& zv = labels.data();
  std::vector<double> out(sv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = zv[i] > 0.05 ? sv[i] - zv[i] : std::max(0.0, sv[i]);
  }
  NodePtr sn = scores.node_;
  NodePtr zn = labels.node_;
  return make_result(scores.shape(), std::move(out), {scores}, [sn, zn](TensorNode& self) {
    if (!sn->requires_grad) return;
    sn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const bool active = zn->value[i] > 0.05 || sn->value[i] > 0.0;
      if (active) sn->grad[i] += self.grad[i];
    }
  });
}

Tensor box_to_tensor(const BBox& b, bool requires_grad) {
  return Tensor::from_data({1, 4}, {b.x, b.y, b.w, b.h}, requires_grad);
}

BBox tensor_to_box(const Tensor& t, std::int64_t row) {
  if (t.rank() != 2 || t.dim(1) != 4 || row >= t.dim(0)) {
    throw ShapeError("tensor_to_box: expected (R,4)");
  }
  const auto& v = t.data();
  return BBox{v[static_cast<std::size_t>(row * 4 + 0)], v[static_cast<std::size_t>(row * 4 + 1)],
              v[static_cast<std::size_t>(row * 4 + 2)], v[static_cast<std::size_t>(row * 4 + 3)]};
}

}  // namespace fetrack
