#include "lungsynth/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "lungsynth/error.hpp"

namespace lungsynth::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require(bool ok, const char* what) {
  if (!ok) throw ContractError(what);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

struct ConvGeom {
  int n, cin, h, w, cout, k, stride, pad, ho, wo;
};

ConvGeom conv_geometry(const Tensor& x, const Tensor& w, int stride, int pad) {
  require(x.ndim() == 4 && w.ndim() == 4, "conv2d: expects NCHW input and [Cout,Cin,k,k] weight");
  require(x.dim(1) == w.dim(1), "conv2d: channel mismatch");
  require(w.dim(2) == w.dim(3), "conv2d: square kernels only");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  require(g.ho > 0 && g.wo > 0, "conv2d: output would be empty");
  return g;
}

bool is_pointwise(const ConvGeom& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

// cols is [cin*k*k, ho*wo].
void im2col(const float* x, const ConvGeom& g, float* cols) {
  const int hw = g.ho * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    const float* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        float* row = cols + (static_cast<std::size_t>(c) * g.k * g.k + ki * g.k + kj) * hw;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          float* out = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.wo, 0.0f);
            continue;
          }
          const float* xr = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            out[ox] = (ix >= 0 && ix < g.w) ? xr[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* cols, const ConvGeom& g, float* dx) {
  const int hw = g.ho * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    float* xc = dx + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const float* row = cols + (static_cast<std::size_t>(c) * g.k * g.k + ki * g.k + kj) * hw;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          float* xr = xc + static_cast<std::size_t>(iy) * g.w;
          const float* in = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) xr[ix] += in[ox];
          }
        }
      }
    }
  }
}

template <typename F, typename D>
Var unary(const Var& x, F f, D df) {
  Tensor y(x->value.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = f(x->value[i]);
  return make_result(std::move(y), {x}, [df](Node& self) {
    auto& px = *self.parents[0];
    auto& g = px.grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * df(px.value[i], self.value[i]);
  });
}

// Returns (inner = H*W, per-sample flag) for channel broadcasting.
void channel_layout(const Tensor& x, const Tensor& v, bool& per_sample, std::size_t& inner) {
  require(x.ndim() >= 2, "channel op: x must have a channel axis");
  const int n = x.dim(0), c = x.dim(1);
  if (v.ndim() == 1) {
    require(v.dim(0) == c, "channel op: v has wrong channel count");
    per_sample = false;
  } else {
    require(v.ndim() == 2 && v.dim(0) == n && v.dim(1) == c, "channel op: v must be [C] or [N,C]");
    per_sample = true;
  }
  inner = x.numel() / (static_cast<std::size_t>(n) * c);
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  const auto g = conv_geometry(x->value, weight->value, stride, pad);
  if (bias) require(bias->value.ndim() == 1 && bias->value.dim(0) == g.cout, "conv2d: bias shape");
  const int kdim = g.cin * g.k * g.k;
  const int hw = g.ho * g.wo;
  Tensor y({g.n, g.cout, g.ho, g.wo});
  FloatBuffer cols(is_pointwise(g) ? 0 : static_cast<std::size_t>(kdim) * hw);
  CMapMat wm(weight->value.data(), g.cout, kdim);
  for (int n = 0; n < g.n; ++n) {
    const float* xn = x->value.data() + static_cast<std::size_t>(n) * g.cin * g.h * g.w;
    const float* cp = xn;
    if (!is_pointwise(g)) {
      im2col(xn, g, cols.data());
      cp = cols.data();
    }
    MapMat yn(y.data() + static_cast<std::size_t>(n) * g.cout * hw, g.cout, hw);
    yn.noalias() = wm * CMapMat(cp, kdim, hw);
    if (bias) {
      for (int o = 0; o < g.cout; ++o) yn.row(o).array() += bias->value[static_cast<std::size_t>(o)];
    }
  }
  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make_result(std::move(y), std::move(parents), [g, kdim, hw](Node& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    FloatBuffer cols(is_pointwise(g) ? 0 : static_cast<std::size_t>(kdim) * hw);
    FloatBuffer dcols(static_cast<std::size_t>(kdim) * hw);
    CMapMat wm(pw.value.data(), g.cout, kdim);
    for (int n = 0; n < g.n; ++n) {
      CMapMat dy(self.grad.data() + static_cast<std::size_t>(n) * g.cout * hw, g.cout, hw);
      const float* xn = px.value.data() + static_cast<std::size_t>(n) * g.cin * g.h * g.w;
      if (pw.requires_grad) {
        const float* cp = xn;
        if (!is_pointwise(g)) {
          im2col(xn, g, cols.data());
          cp = cols.data();
        }
        MapMat dw(pw.grad_buffer().data(), g.cout, kdim);
        dw.noalias() += dy * CMapMat(cp, kdim, hw).transpose();
      }
      if (pb && pb->requires_grad) {
        auto& db = pb->grad_buffer();
        for (int o = 0; o < g.cout; ++o) db[static_cast<std::size_t>(o)] += dy.row(o).sum();
      }
      if (px.requires_grad) {
        float* dxn = px.grad_buffer().data() + static_cast<std::size_t>(n) * g.cin * g.h * g.w;
        if (is_pointwise(g)) {
          MapMat dx(dxn, kdim, hw);
          dx.noalias() += wm.transpose() * dy;
        } else {
          MapMat dc(dcols.data(), kdim, hw);
          dc.noalias() = wm.transpose() * dy;
          col2im_add(dcols.data(), g, dxn);
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require(x->value.ndim() == 2 && weight->value.ndim() == 2, "linear: expects [N,F] and [O,F]");
  const int n = x->value.dim(0), f = x->value.dim(1), o = weight->value.dim(0);
  require(weight->value.dim(1) == f, "linear: feature mismatch");
  if (bias) require(bias->value.ndim() == 1 && bias->value.dim(0) == o, "linear: bias shape");
  Tensor y({n, o});
  MapMat ym(y.data(), n, o);
  ym.noalias() = CMapMat(x->value.data(), n, f) * CMapMat(weight->value.data(), o, f).transpose();
  if (bias) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < o; ++j) ym(i, j) += bias->value[static_cast<std::size_t>(j)];
    }
  }
  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make_result(std::move(y), std::move(parents), [n, f, o](Node& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    CMapMat dy(self.grad.data(), n, o);
    if (px.requires_grad) {
      MapMat(px.grad_buffer().data(), n, f).noalias() += dy * CMapMat(pw.value.data(), o, f);
    }
    if (pw.requires_grad) {
      MapMat(pw.grad_buffer().data(), o, f).noalias() += dy.transpose() * CMapMat(px.value.data(), n, f);
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& db = self.parents[2]->grad_buffer();
      for (int j = 0; j < o; ++j) db[static_cast<std::size_t>(j)] += dy.col(j).sum();
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor y(a->value.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a->value[i] + b->value[i];
  return make_result(std::move(y), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *self.parents[static_cast<std::size_t>(k)];
      if (!p.requires_grad) continue;
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0f)); }

Var mul(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "mul");
  Tensor y(a->value.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a->value[i] * b->value[i];
  return make_result(std::move(y), {a, b}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Var scale(const Var& a, float s) {
  Tensor y(a->value.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a->value[i] * s;
  return make_result(std::move(y), {a}, [s](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * s;
  });
}

Var add_scalar(const Var& a, float s) {
  Tensor y(a->value.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a->value[i] + s;
  return make_result(std::move(y), {a}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

Var add_channel(const Var& x, const Var& v) {
  bool per_sample = false;
  std::size_t inner = 0;
  channel_layout(x->value, v->value, per_sample, inner);
  const int n = x->value.dim(0), c = x->value.dim(1);
  Tensor y = x->value;
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float add = v->value[per_sample ? static_cast<std::size_t>(i) * c + ch : static_cast<std::size_t>(ch)];
      float* p = y.data() + (static_cast<std::size_t>(i) * c + ch) * inner;
      for (std::size_t k = 0; k < inner; ++k) p[k] += add;
    }
  }
  return make_result(std::move(y), {x, v}, [n, c, inner, per_sample](Node& self) {
    auto& px = *self.parents[0];
    auto& pv = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (pv.requires_grad) {
      auto& g = pv.grad_buffer();
      for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
          const float* d = self.grad.data() + (static_cast<std::size_t>(i) * c + ch) * inner;
          float s = 0.0f;
          for (std::size_t k = 0; k < inner; ++k) s += d[k];
          g[per_sample ? static_cast<std::size_t>(i) * c + ch : static_cast<std::size_t>(ch)] += s;
        }
      }
    }
  });
}

Var mul_channel(const Var& x, const Var& v) {
  bool per_sample = false;
  std::size_t inner = 0;
  channel_layout(x->value, v->value, per_sample, inner);
  const int n = x->value.dim(0), c = x->value.dim(1);
  Tensor y = x->value;
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float m = v->value[per_sample ? static_cast<std::size_t>(i) * c + ch : static_cast<std::size_t>(ch)];
      float* p = y.data() + (static_cast<std::size_t>(i) * c + ch) * inner;
      for (std::size_t k = 0; k < inner; ++k) p[k] *= m;
    }
  }
  return make_result(std::move(y), {x, v}, [n, c, inner, per_sample](Node& self) {
    auto& px = *self.parents[0];
    auto& pv = *self.parents[1];
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t vi = per_sample ? static_cast<std::size_t>(i) * c + ch : static_cast<std::size_t>(ch);
        const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * inner;
        const float* d = self.grad.data() + off;
        if (px.requires_grad) {
          float* gx = px.grad_buffer().data() + off;
          const float m = pv.value[vi];
          for (std::size_t k = 0; k < inner; ++k) gx[k] += d[k] * m;
        }
        if (pv.requires_grad) {
          const float* xv = px.value.data() + off;
          float s = 0.0f;
          for (std::size_t k = 0; k < inner; ++k) s += d[k] * xv[k];
          pv.grad_buffer()[vi] += s;
        }
      }
    }
  });
}

Var relu(const Var& x) {
  return unary(
      x, [](float v) { return v > 0.0f ? v : 0.0f; }, [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Var silu(const Var& x) {
  return unary(
      x, [](float v) { return v / (1.0f + std::exp(-v)); },
      [](float v, float) {
        const float s = 1.0f / (1.0f + std::exp(-v));
        return s * (1.0f + v * (1.0f - s));
      });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); }, [](float, float y) { return y * (1.0f - y); });
}

Var group_norm(const Var& x, int groups, float eps) {
  const auto& xv = x->value;
  require(xv.ndim() == 4, "group_norm: expects NCHW");
  const int n = xv.dim(0), c = xv.dim(1);
  require(groups > 0 && c % groups == 0, "group_norm: channels must divide into groups");
  const std::size_t m = xv.numel() / (static_cast<std::size_t>(n) * groups);
  Tensor y(xv.shape());
  std::vector<float> rstd(static_cast<std::size_t>(n) * groups);
  for (std::size_t gi = 0; gi < rstd.size(); ++gi) {
    const float* p = xv.data() + gi * m;
    double mu = 0.0;
    for (std::size_t k = 0; k < m; ++k) mu += p[k];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t k = 0; k < m; ++k) var += (p[k] - mu) * (p[k] - mu);
    var /= static_cast<double>(m);
    const auto r = static_cast<float>(1.0 / std::sqrt(var + eps));
    rstd[gi] = r;
    float* q = y.data() + gi * m;
    for (std::size_t k = 0; k < m; ++k) q[k] = static_cast<float>(p[k] - mu) * r;
  }
  return make_result(std::move(y), {x}, [m, rstd = std::move(rstd)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t gi = 0; gi < rstd.size(); ++gi) {
      const float* dy = self.grad.data() + gi * m;
      const float* yh = self.value.data() + gi * m;
      double mdy = 0.0, mdyy = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        mdy += dy[k];
        mdyy += static_cast<double>(dy[k]) * yh[k];
      }
      mdy /= static_cast<double>(m);
      mdyy /= static_cast<double>(m);
      float* dx = g.data() + gi * m;
      for (std::size_t k = 0; k < m; ++k) {
        dx[k] += rstd[gi] * static_cast<float>(dy[k] - mdy - yh[k] * mdyy);
      }
    }
  });
}

Var avg_pool2(const Var& x) {
  const auto& xv = x->value;
  require(xv.ndim() == 4 && xv.dim(2) % 2 == 0 && xv.dim(3) % 2 == 0, "avg_pool2: expects even H and W");
  const int nc = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3), ho = h / 2, wo = w / 2;
  Tensor y({xv.dim(0), xv.dim(1), ho, wo});
  for (int p = 0; p < nc; ++p) {
    const float* in = xv.data() + static_cast<std::size_t>(p) * h * w;
    float* out = y.data() + static_cast<std::size_t>(p) * ho * wo;
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        out[i * wo + j] = 0.25f * (in[2 * i * w + 2 * j] + in[2 * i * w + 2 * j + 1] + in[(2 * i + 1) * w + 2 * j] +
                                   in[(2 * i + 1) * w + 2 * j + 1]);
      }
    }
  }
  return make_result(std::move(y), {x}, [nc, h, w, ho, wo](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int p = 0; p < nc; ++p) {
      float* dx = g.data() + static_cast<std::size_t>(p) * h * w;
      const float* dy = self.grad.data() + static_cast<std::size_t>(p) * ho * wo;
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) dx[i * w + j] += 0.25f * dy[(i / 2) * wo + j / 2];
      }
    }
  });
}

Var upsample2(const Var& x) {
  const auto& xv = x->value;
  require(xv.ndim() == 4, "upsample2: expects NCHW");
  const int nc = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3), ho = 2 * h, wo = 2 * w;
  Tensor y({xv.dim(0), xv.dim(1), ho, wo});
  for (int p = 0; p < nc; ++p) {
    const float* in = xv.data() + static_cast<std::size_t>(p) * h * w;
    float* out = y.data() + static_cast<std::size_t>(p) * ho * wo;
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) out[i * wo + j] = in[(i / 2) * w + j / 2];
    }
  }
  return make_result(std::move(y), {x}, [nc, h, w, ho, wo](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int p = 0; p < nc; ++p) {
      float* dx = g.data() + static_cast<std::size_t>(p) * h * w;
      const float* dy = self.grad.data() + static_cast<std::size_t>(p) * ho * wo;
      for (int i = 0; i < ho; ++i) {
        for (int j = 0; j < wo; ++j) dx[(i / 2) * w + j / 2] += dy[i * wo + j];
      }
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const auto& av = a->value;
  const auto& bv = b->value;
  require(av.ndim() == 4 && bv.ndim() == 4 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2) &&
              av.dim(3) == bv.dim(3),
          "concat_channels: shapes incompatible");
  const int n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const std::size_t hw = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
  Tensor y({n, ca + cb, av.dim(2), av.dim(3)});
  for (int i = 0; i < n; ++i) {
    std::copy_n(av.data() + i * ca * hw, ca * hw, y.data() + i * (ca + cb) * hw);
    std::copy_n(bv.data() + i * cb * hw, cb * hw, y.data() + (i * (ca + cb) + ca) * hw);
  }
  return make_result(std::move(y), {a, b}, [n, ca, cb, hw](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (int i = 0; i < n; ++i) {
      const float* d = self.grad.data() + i * (ca + cb) * hw;
      if (pa.requires_grad) {
        float* g = pa.grad_buffer().data() + i * ca * hw;
        for (std::size_t k = 0; k < ca * hw; ++k) g[k] += d[k];
      }
      if (pb.requires_grad) {
        float* g = pb.grad_buffer().data() + i * cb * hw;
        for (std::size_t k = 0; k < cb * hw; ++k) g[k] += d[ca * hw + k];
      }
    }
  });
}

Var global_avg_pool(const Var& x) {
  const auto& xv = x->value;
  require(xv.ndim() == 4, "global_avg_pool: expects NCHW");
  const int n = xv.dim(0), c = xv.dim(1);
  const std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  Tensor y({n, c});
  for (std::size_t p = 0; p < static_cast<std::size_t>(n) * c; ++p) {
    double s = 0.0;
    for (std::size_t k = 0; k < hw; ++k) s += xv[p * hw + k];
    y[p] = static_cast<float>(s / static_cast<double>(hw));
  }
  return make_result(std::move(y), {x}, [hw](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const float inv = 1.0f / static_cast<float>(hw);
    for (std::size_t p = 0; p < self.grad.numel(); ++p) {
      for (std::size_t k = 0; k < hw; ++k) g[p * hw + k] += self.grad[p] * inv;
    }
  });
}

Var reshape(const Var& x, std::vector<int> shape) {
  return make_result(x->value.reshaped(std::move(shape)), {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (float v : x->value.values()) s += v;
  return make_result(Tensor({1}, static_cast<float>(s)), {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0];
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0f / static_cast<float>(x->value.numel())); }

Var mse_loss(const Var& pred, const Tensor& target) {
  require_same_shape(pred->value, target, "mse_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < target.numel(); ++i) {
    const double d = pred->value[i] - target[i];
    s += d * d;
  }
  const auto n = static_cast<double>(target.numel());
  return make_result(Tensor({1}, static_cast<float>(s / n)), {pred}, [target, n](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& p = self.parents[0]->value;
    const float k = static_cast<float>(2.0 / n) * self.grad[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += k * (p[i] - target[i]);
  });
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const auto& lv = logits->value;
  require(lv.ndim() == 2 && lv.dim(0) == static_cast<int>(labels.size()), "cross_entropy: shape mismatch");
  const int n = lv.dim(0), k = lv.dim(1);
  Tensor prob({n, k});
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    require(labels[static_cast<std::size_t>(i)] >= 0 && labels[static_cast<std::size_t>(i)] < k,
            "cross_entropy: label out of range");
    const float* row = lv.data() + static_cast<std::size_t>(i) * k;
    const float mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    for (int j = 0; j < k; ++j) prob[static_cast<std::size_t>(i) * k + j] = static_cast<float>(std::exp(row[j] - mx) / z);
    loss -= (row[labels[static_cast<std::size_t>(i)]] - mx) - std::log(z);
  }
  return make_result(Tensor({1}, static_cast<float>(loss / n)), {logits}, [prob, labels, n, k](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const float s = self.grad[0] / static_cast<float>(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < k; ++j) {
        const auto idx = static_cast<std::size_t>(i) * k + j;
        g[idx] += s * (prob[idx] - (labels[static_cast<std::size_t>(i)] == j ? 1.0f : 0.0f));
      }
    }
  });
}

Var bce_with_logits(const Var& logits, const Tensor& targets, const Tensor& weights, float normalizer) {
  require_same_shape(logits->value, targets, "bce_with_logits");
  require_same_shape(logits->value, weights, "bce_with_logits");
  require(normalizer > 0.0f, "bce_with_logits: normalizer must be positive");
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.numel(); ++i) {
    if (weights[i] == 0.0f) continue;
    const double x = logits->value[i];
    // log(1 + exp(-|x|)) + max(x, 0) - x * t
    loss += weights[i] * (std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * targets[i]);
  }
  return make_result(Tensor({1}, static_cast<float>(loss / normalizer)), {logits},
                     [targets, weights, normalizer](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       const auto& x = self.parents[0]->value;
                       const float s = self.grad[0] / normalizer;
                       for (std::size_t i = 0; i < g.numel(); ++i) {
                         if (weights[i] == 0.0f) continue;
                         const float p = 1.0f / (1.0f + std::exp(-x[i]));
                         g[i] += s * weights[i] * (p - targets[i]);
                       }
                     });
}

Var smooth_l1(const Var& pred, const Tensor& target, const Tensor& weights, float normalizer, float beta) {
  require_same_shape(pred->value, target, "smooth_l1");
  require_same_shape(pred->value, weights, "smooth_l1");
  require(normalizer > 0.0f, "smooth_l1: normalizer must be positive");
  double loss = 0.0;
  for (std::size_t i = 0; i < target.numel(); ++i) {
    if (weights[i] == 0.0f) continue;
    const double d = std::abs(pred->value[i] - target[i]);
    loss += weights[i] * (d < beta ? 0.5 * d * d / beta : d - 0.5 * beta);
  }
  return make_result(Tensor({1}, static_cast<float>(loss / normalizer)), {pred},
                     [target, weights, normalizer, beta](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       const auto& p = self.parents[0]->value;
                       const float s = self.grad[0] / normalizer;
                       for (std::size_t i = 0; i < g.numel(); ++i) {
                         if (weights[i] == 0.0f) continue;
                         const float d = p[i] - target[i];
                         const float dd = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0f : -1.0f);
                         g[i] += s * weights[i] * dd;
                       }
                     });
}

Tensor resize_nearest(const Tensor& x, int out_h, int out_w) {
  require(x.ndim() == 4, "resize_nearest: expects NCHW");
  const int nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({x.dim(0), x.dim(1), out_h, out_w});
  for (int p = 0; p < nc; ++p) {
    const float* in = x.data() + static_cast<std::size_t>(p) * h * w;
    float* out = y.data() + static_cast<std::size_t>(p) * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      const int si = std::min(h - 1, static_cast<int>((static_cast<long long>(i) * h) / out_h));
      for (int j = 0; j < out_w; ++j) {
        const int sj = std::min(w - 1, static_cast<int>((static_cast<long long>(j) * w) / out_w));
        out[i * out_w + j] = in[si * w + sj];
      }
    }
  }
  return y;
}

}  // namespace lungsynth::nn
