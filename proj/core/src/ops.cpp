#include "ddb/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ddb {
namespace {

using detail::TensorNode;

bool any_requires_grad(const std::vector<Tensor>& inputs) {
  for (const auto& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

// Wraps forward results into a graph node. The tape is recorded only when
// some input needs gradients.
Tensor make_result(Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs,
                   std::function<void(TensorNode&)> backprop) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (any_requires_grad(inputs)) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& t : inputs) node->parents.push_back(t.node());
    node->backprop = std::move(backprop);
  }
  return Tensor(std::move(node));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.raw());
  const double* pb = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  auto an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.raw());
  const double* pb = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
  auto an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.raw());
  const double* pb = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
  auto an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.raw());
  for (double& v : out) v *= s;
  auto an = a.node();
  return make_result(a.shape(), std::move(out), {a}, [an, s](TensorNode& self) {
    if (!an->requires_grad) return;
    auto& g = an->grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.raw()) total += v;
  auto an = a.node();
  return make_result({1}, {total}, {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    auto& g = an->grad_buffer();
    const double gout = self.grad[0];
    for (double& v : g) v += gout;
  });
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double total = 0.0;
  for (double v : a.raw()) total += v;
  auto an = a.node();
  return make_result({1}, {total * inv}, {a}, [an, inv](TensorNode& self) {
    if (!an->requires_grad) return;
    auto& g = an->grad_buffer();
    const double gout = self.grad[0] * inv;
    for (double& v : g) v += gout;
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.raw());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  auto an = a.node();
  return make_result(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    auto& g = an->grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) {
      if (an->data[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor softmax(const Tensor& logits, int axis) {
  const Shape& shape = logits.shape();
  const int rank = static_cast<int>(shape.size());
  if (axis < 0 || axis >= rank) {
    throw std::invalid_argument("softmax: axis out of range for shape " +
                                shape_str(shape));
  }
  logits.check_finite("softmax input");

  const int64_t n = shape[axis];
  int64_t inner = 1;
  for (int d = axis + 1; d < rank; ++d) inner *= shape[d];
  int64_t outer = logits.numel() / (n * inner);

  std::vector<double> out(logits.raw().size());
  const double* in = logits.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * n * inner + i;
      double mx = in[base];
      for (int64_t k = 1; k < n; ++k) mx = std::max(mx, in[base + k * inner]);
      double z = 0.0;
      for (int64_t k = 0; k < n; ++k) {
        double e = std::exp(in[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      const double invz = 1.0 / z;
      for (int64_t k = 0; k < n; ++k) out[base + k * inner] *= invz;
    }
  }

  auto ln = logits.node();
  return make_result(shape, std::move(out), {logits},
                     [ln, n, inner, outer](TensorNode& self) {
    if (!ln->requires_grad) return;
    auto& g = ln->grad_buffer();
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t base = o * n * inner + i;
        double dot = 0.0;
        for (int64_t k = 0; k < n; ++k) {
          const int64_t idx = base + k * inner;
          dot += self.grad[idx] * self.data[idx];
        }
        for (int64_t k = 0; k < n; ++k) {
          const int64_t idx = base + k * inner;
          g[idx] += self.data[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor weighted_cross_entropy(const Tensor& probs, const Tensor& onehot,
                              const Tensor& weights) {
  require_same_shape(probs, onehot, "weighted_cross_entropy");
  const Shape& shape = probs.shape();
  if (shape.size() < 2) {
    throw std::invalid_argument("weighted_cross_entropy: need at least 2 dims");
  }
  const int64_t classes = shape.back();
  const int64_t pixels = probs.numel() / classes;
  if (weights.numel() != pixels) {
    throw std::invalid_argument(
        "weighted_cross_entropy: weights size mismatch, expected " +
        std::to_string(pixels) + " got " + std::to_string(weights.numel()));
  }

  const double* p = probs.data();
  const double* y = onehot.data();
  const double* w = weights.data();
  double loss = 0.0;
  for (int64_t i = 0; i < pixels; ++i) {
    for (int64_t j = 0; j < classes; ++j) {
      const double yij = y[i * classes + j];
      if (yij != 0.0) {
        loss -= w[i] * yij * std::log(std::max(p[i * classes + j], kLogFloor));
      }
    }
  }

  auto pn = probs.node();
  auto yn = onehot.node();
  auto wn = weights.node();
  return make_result({1}, {loss}, {probs, onehot, weights},
                     [pn, yn, wn, pixels, classes](TensorNode& self) {
    const double gout = self.grad[0];
    if (pn->requires_grad) {
      auto& g = pn->grad_buffer();
      for (int64_t i = 0; i < pixels; ++i) {
        for (int64_t j = 0; j < classes; ++j) {
          const int64_t idx = i * classes + j;
          if (yn->data[idx] != 0.0 && pn->data[idx] > kLogFloor) {
            g[idx] -= gout * wn->data[i] * yn->data[idx] / pn->data[idx];
          }
        }
      }
    }
    if (yn->requires_grad) {
      auto& g = yn->grad_buffer();
      for (int64_t i = 0; i < pixels; ++i) {
        for (int64_t j = 0; j < classes; ++j) {
          const int64_t idx = i * classes + j;
          g[idx] -= gout * wn->data[i] *
                    std::log(std::max(pn->data[idx], kLogFloor));
        }
      }
    }
    if (wn->requires_grad) {
      auto& g = wn->grad_buffer();
      for (int64_t i = 0; i < pixels; ++i) {
        double row = 0.0;
        for (int64_t j = 0; j < classes; ++j) {
          const int64_t idx = i * classes + j;
          if (yn->data[idx] != 0.0) {
            row -= yn->data[idx] * std::log(std::max(pn->data[idx], kLogFloor));
          }
        }
        g[i] += gout * row;
      }
    }
  });
}

Tensor cross_entropy(const Tensor& probs, const Tensor& onehot) {
  Shape wshape(probs.shape().begin(), probs.shape().end() - 1);
  if (wshape.empty()) wshape = {1};
  return weighted_cross_entropy(probs, onehot, Tensor::full(wshape, 1.0));
}

Tensor kl_divergence(const Tensor& student_probs, const Tensor& teacher_probs) {
  require_same_shape(student_probs, teacher_probs, "kl_divergence");
  const double* s = student_probs.data();
  const double* t = teacher_probs.data();
  const int64_t n = student_probs.numel();
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (t[i] != 0.0) {
      loss += t[i] * (std::log(std::max(t[i], kLogFloor)) -
                      std::log(std::max(s[i], kLogFloor)));
    }
  }
  auto sn = student_probs.node();
  auto tn = teacher_probs.node();
  return make_result({1}, {loss}, {student_probs, teacher_probs},
                     [sn, tn, n](TensorNode& self) {
    const double gout = self.grad[0];
    if (sn->requires_grad) {
      auto& g = sn->grad_buffer();
      for (int64_t i = 0; i < n; ++i) {
        if (tn->data[i] != 0.0 && sn->data[i] > kLogFloor) {
          g[i] -= gout * tn->data[i] / sn->data[i];
        }
      }
    }
    if (tn->requires_grad) {
      auto& g = tn->grad_buffer();
      for (int64_t i = 0; i < n; ++i) {
        const double t_i = tn->data[i];
        if (t_i == 0.0) continue;
        double term = std::log(std::max(t_i, kLogFloor)) -
                      std::log(std::max(sn->data[i], kLogFloor));
        if (t_i > kLogFloor) term += 1.0;
        g[i] += gout * term;
      }
    }
  });
}

Tensor argmax_onehot(const Tensor& logits) {
  const Shape& shape = logits.shape();
  if (shape.empty()) throw std::invalid_argument("argmax_onehot: rank-0 input");
  logits.check_finite("argmax_onehot input");
  const int64_t classes = shape.back();
  const int64_t pixels = logits.numel() / classes;
  std::vector<double> out(logits.raw().size(), 0.0);
  const double* in = logits.data();
  for (int64_t i = 0; i < pixels; ++i) {
    int64_t best = 0;
    double bestv = in[i * classes];
    for (int64_t j = 1; j < classes; ++j) {
      if (in[i * classes + j] > bestv) {
        bestv = in[i * classes + j];
        best = j;
      }
    }
    out[i * classes + best] = 1.0;
  }
  return Tensor::from_data(shape, std::move(out));
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              int stride, int pad) {
  if (x.shape().size() != 3 || kernel.shape().size() != 4) {
    throw std::invalid_argument("conv2d: x must be HxWxC, kernel KHxKWxCinxCout");
  }
  const int H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const int KH = kernel.dim(0), KW = kernel.dim(1);
  if (kernel.dim(2) != Cin) {
    throw std::invalid_argument("conv2d: kernel Cin " +
                                std::to_string(kernel.dim(2)) +
                                " does not match input C " + std::to_string(Cin));
  }
  const int Cout = kernel.dim(3);
  if (bias.numel() != Cout) {
    throw std::invalid_argument("conv2d: bias size mismatch");
  }
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const int Ho = (H + 2 * pad - KH) / stride + 1;
  const int Wo = (W + 2 * pad - KW) / stride + 1;
  if (Ho <= 0 || Wo <= 0) {
    throw std::invalid_argument("conv2d: output would be empty");
  }

  std::vector<double> out(static_cast<size_t>(Ho) * Wo * Cout);
  {
    const double* in = x.data();
    const double* k = kernel.data();
    const double* b = bias.data();
    for (int oi = 0; oi < Ho; ++oi) {
      for (int oj = 0; oj < Wo; ++oj) {
        double* orow = &out[(static_cast<size_t>(oi) * Wo + oj) * Cout];
        for (int c = 0; c < Cout; ++c) orow[c] = b[c];
        for (int ki = 0; ki < KH; ++ki) {
          const int ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= H) continue;
          for (int kj = 0; kj < KW; ++kj) {
            const int jj = oj * stride - pad + kj;
            if (jj < 0 || jj >= W) continue;
            const double* irow = &in[(static_cast<size_t>(ii) * W + jj) * Cin];
            const double* krow = &k[((static_cast<size_t>(ki) * KW + kj) * Cin) * Cout];
            for (int ci = 0; ci < Cin; ++ci) {
              const double a = irow[ci];
              const double* kc = &krow[static_cast<size_t>(ci) * Cout];
              for (int c = 0; c < Cout; ++c) orow[c] += a * kc[c];
            }
          }
        }
      }
    }
  }

  auto xn = x.node(), kn = kernel.node(), bn = bias.node();
  return make_result(
      {Ho, Wo, Cout}, std::move(out), {x, kernel, bias},
      [xn, kn, bn, H, W, Cin, KH, KW, Cout, Ho, Wo, stride, pad](TensorNode& self) {
        const double* gout = self.grad.data();
        std::vector<double>* gx = xn->requires_grad ? &xn->grad_buffer() : nullptr;
        std::vector<double>* gk = kn->requires_grad ? &kn->grad_buffer() : nullptr;
        std::vector<double>* gb = bn->requires_grad ? &bn->grad_buffer() : nullptr;
        for (int oi = 0; oi < Ho; ++oi) {
          for (int oj = 0; oj < Wo; ++oj) {
            const double* grow = &gout[(static_cast<size_t>(oi) * Wo + oj) * Cout];
            if (gb) {
              for (int c = 0; c < Cout; ++c) (*gb)[c] += grow[c];
            }
            for (int ki = 0; ki < KH; ++ki) {
              const int ii = oi * stride - pad + ki;
              if (ii < 0 || ii >= H) continue;
              for (int kj = 0; kj < KW; ++kj) {
                const int jj = oj * stride - pad + kj;
                if (jj < 0 || jj >= W) continue;
                const size_t ibase = (static_cast<size_t>(ii) * W + jj) * Cin;
                const size_t kbase = (static_cast<size_t>(ki) * KW + kj) * Cin * Cout;
                if (gk) {
                  for (int ci = 0; ci < Cin; ++ci) {
                    const double a = xn->data[ibase + ci];
                    double* kc = &(*gk)[kbase + static_cast<size_t>(ci) * Cout];
                    for (int c = 0; c < Cout; ++c) kc[c] += a * grow[c];
                  }
                }
                if (gx) {
                  for (int ci = 0; ci < Cin; ++ci) {
                    const double* kc = &kn->data[kbase + static_cast<size_t>(ci) * Cout];
                    double acc = 0.0;
                    for (int c = 0; c < Cout; ++c) acc += kc[c] * grow[c];
                    (*gx)[ibase + ci] += acc;
                  }
                }
              }
            }
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.shape().size() != 2 || weight.shape().size() != 2) {
    throw std::invalid_argument("linear: x must be NxDin, weight DinxDout");
  }
  const int N = x.dim(0), Din = x.dim(1);
  if (weight.dim(0) != Din) {
    throw std::invalid_argument("linear: weight Din mismatch");
  }
  const int Dout = weight.dim(1);
  if (bias.numel() != Dout) throw std::invalid_argument("linear: bias mismatch");

  std::vector<double> out(static_cast<size_t>(N) * Dout);
  {
    const double* in = x.data();
    const double* w = weight.data();
    const double* b = bias.data();
    for (int i = 0; i < N; ++i) {
      double* orow = &out[static_cast<size_t>(i) * Dout];
      for (int j = 0; j < Dout; ++j) orow[j] = b[j];
      for (int d = 0; d < Din; ++d) {
        const double a = in[static_cast<size_t>(i) * Din + d];
        const double* wrow = &w[static_cast<size_t>(d) * Dout];
        for (int j = 0; j < Dout; ++j) orow[j] += a * wrow[j];
      }
    }
  }

  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return make_result({N, Dout}, std::move(out), {x, weight, bias},
                     [xn, wn, bn, N, Din, Dout](TensorNode& self) {
    const double* gout = self.grad.data();
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < Dout; ++j)
          gb[j] += gout[static_cast<size_t>(i) * Dout + j];
    }
    if (wn->requires_grad) {
      auto& gw = wn->grad_buffer();
      for (int i = 0; i < N; ++i) {
        for (int d = 0; d < Din; ++d) {
          const double a = xn->data[static_cast<size_t>(i) * Din + d];
          for (int j = 0; j < Dout; ++j) {
            gw[static_cast<size_t>(d) * Dout + j] +=
                a * gout[static_cast<size_t>(i) * Dout + j];
          }
        }
      }
    }
    if (xn->requires_grad) {
      auto& gx = xn->grad_buffer();
      for (int i = 0; i < N; ++i) {
        for (int d = 0; d < Din; ++d) {
          double acc = 0.0;
          for (int j = 0; j < Dout; ++j) {
            acc += wn->data[static_cast<size_t>(d) * Dout + j] *
                   gout[static_cast<size_t>(i) * Dout + j];
          }
          gx[static_cast<size_t>(i) * Din + d] += acc;
        }
      }
    }
  });
}

Tensor bilinear_upsample(const Tensor& x, int factor) {
  if (x.shape().size() != 3) {
    throw std::invalid_argument("bilinear_upsample: x must be HxWxC");
  }
  if (factor < 1) throw std::invalid_argument("bilinear_upsample: factor >= 1");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const int Ho = H * factor, Wo = W * factor;

  // Precompute the 1-D interpolation taps; they are shared by rows/cols.
  struct Tap { int lo, hi; double w_hi; };
  auto make_taps = [factor](int in_size, int out_size) {
    std::vector<Tap> taps(out_size);
    for (int o = 0; o < out_size; ++o) {
      double src = (o + 0.5) / factor - 0.5;
      double floor_src = std::floor(src);
      int lo = static_cast<int>(floor_src);
      double w_hi = src - floor_src;
      int hi = lo + 1;
      if (lo < 0) { lo = 0; hi = 0; w_hi = 0.0; }
      if (hi >= in_size) { hi = in_size - 1; lo = in_size - 1; w_hi = 0.0; }
      taps[o] = {lo, hi, w_hi};
    }
    return taps;
  };
  const std::vector<Tap> row_taps = make_taps(H, Ho);
  const std::vector<Tap> col_taps = make_taps(W, Wo);

  std::vector<double> out(static_cast<size_t>(Ho) * Wo * C);
  {
    const double* in = x.data();
    for (int oi = 0; oi < Ho; ++oi) {
      const Tap& rt = row_taps[oi];
      for (int oj = 0; oj < Wo; ++oj) {
        const Tap& ct = col_taps[oj];
        const double w00 = (1.0 - rt.w_hi) * (1.0 - ct.w_hi);
        const double w01 = (1.0 - rt.w_hi) * ct.w_hi;
        const double w10 = rt.w_hi * (1.0 - ct.w_hi);
        const double w11 = rt.w_hi * ct.w_hi;
        const double* p00 = &in[(static_cast<size_t>(rt.lo) * W + ct.lo) * C];
        const double* p01 = &in[(static_cast<size_t>(rt.lo) * W + ct.hi) * C];
        const double* p10 = &in[(static_cast<size_t>(rt.hi) * W + ct.lo) * C];
        const double* p11 = &in[(static_cast<size_t>(rt.hi) * W + ct.hi) * C];
        double* orow = &out[(static_cast<size_t>(oi) * Wo + oj) * C];
        for (int c = 0; c < C; ++c) {
          orow[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
        }
      }
    }
  }

  auto xn = x.node();
  return make_result({Ho, Wo, C}, std::move(out), {x},
                     [xn, row_taps, col_taps, W, C, Ho, Wo](TensorNode& self) {
    if (!xn->requires_grad) return;
    auto& gx = xn->grad_buffer();
    const double* gout = self.grad.data();
    for (int oi = 0; oi < Ho; ++oi) {
      const Tap& rt = row_taps[oi];
      for (int oj = 0; oj < Wo; ++oj) {
        const Tap& ct = col_taps[oj];
        const double w00 = (1.0 - rt.w_hi) * (1.0 - ct.w_hi);
        const double w01 = (1.0 - rt.w_hi) * ct.w_hi;
        const double w10 = rt.w_hi * (1.0 - ct.w_hi);
        const double w11 = rt.w_hi * ct.w_hi;
        const double* grow = &gout[(static_cast<size_t>(oi) * Wo + oj) * C];
        double* g00 = &gx[(static_cast<size_t>(rt.lo) * W + ct.lo) * C];
        double* g01 = &gx[(static_cast<size_t>(rt.lo) * W + ct.hi) * C];
        double* g10 = &gx[(static_cast<size_t>(rt.hi) * W + ct.lo) * C];
        double* g11 = &gx[(static_cast<size_t>(rt.hi) * W + ct.hi) * C];
        for (int c = 0; c < C; ++c) {
          const double g = grow[c];
          g00[c] += w00 * g;
          g01[c] += w01 * g;
          g10[c] += w10 * g;
          g11[c] += w11 * g;
        }
      }
    }
  });
}

}  // namespace ddb
