#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "degentune/errors.hpp"
#include "degentune/tensor.hpp"

namespace dgt::ad {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

/// Reverse-mode tape over Tensor ops. One Graph per forward pass; ops append
/// nodes, backward() walks the tape in reverse. Parameters are leaves that
/// alias external value/grad storage so per-sample graphs accumulate into the
/// model's gradient buffers.
class Graph {
 public:
  using Ref = int;

  Ref input(Tensor v) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = false;
    return push(std::move(n));
  }

  Ref param(Tensor* value, Tensor* grad) {
    Node n;
    n.ext_value = value;
    n.ext_grad = grad;
    n.requires_grad = grad != nullptr;
    return push(std::move(n));
  }

  const Tensor& val(Ref r) const {
    const Node& n = nodes_[static_cast<std::size_t>(r)];
    return n.ext_value ? *n.ext_value : n.value;
  }

  Tensor& grad(Ref r) {
    Node& n = nodes_[static_cast<std::size_t>(r)];
    return n.ext_grad ? *n.ext_grad : n.grad;
  }

  bool needs_grad(Ref r) const { return nodes_[static_cast<std::size_t>(r)].requires_grad; }

  // ---- elementwise ----

  Ref add(Ref a, Ref b) {
    require_same_shape(val(a), val(b), "ad::add");
    Node n;
    n.value = val(a);
    for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += val(b).data[i];
    n.requires_grad = needs_grad(a) || needs_grad(b);
    n.backprop = [a, b](Graph& g, Ref self) {
      const Tensor& gy = g.grad(self);
      if (g.needs_grad(a)) g.accumulate(a, gy);
      if (g.needs_grad(b)) g.accumulate(b, gy);
    };
    return push(std::move(n));
  }

  Ref scale(Ref x, double s) {
    Node n;
    n.value = val(x);
    for (double& v : n.value.data) v *= s;
    n.requires_grad = needs_grad(x);
    n.backprop = [x, s](Graph& g, Ref self) {
      if (!g.needs_grad(x)) return;
      const Tensor& gy = g.grad(self);
      Tensor& gx = g.grad(x);
      for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += s * gy.data[i];
    };
    return push(std::move(n));
  }

  Ref silu(Ref x) {
    Node n;
    n.value = val(x);
    {
      Eigen::Map<Eigen::ArrayXd> a(n.value.data.data(),
                                   static_cast<Eigen::Index>(n.value.data.size()));
      a = a / (1.0 + (-a).exp());
    }
    n.requires_grad = needs_grad(x);
    n.backprop = [x](Graph& g, Ref self) {
      if (!g.needs_grad(x)) return;
      const Tensor& xv = g.val(x);
      const Tensor& gy = g.grad(self);
      Tensor& gx = g.grad(x);
      const Eigen::Index len = static_cast<Eigen::Index>(gy.data.size());
      Eigen::Map<const Eigen::ArrayXd> xm(xv.data.data(), len);
      Eigen::Map<const Eigen::ArrayXd> gym(gy.data.data(), len);
      Eigen::Map<Eigen::ArrayXd> gxm(gx.data.data(), len);
      const Eigen::ArrayXd sig = 1.0 / (1.0 + (-xm).exp());
      gxm += gym * sig * (1.0 + xm * (1.0 - sig));
    };
    return push(std::move(n));
  }

  /// {C,H,W} + {C} broadcast over spatial dims.
  Ref add_channel_bias(Ref x, Ref v) {
    const Tensor& xv = val(x);
    const Tensor& vv = val(v);
    if (xv.ndim() != 3 || vv.numel() != xv.dim(0))
      throw ValidationError("ad::add_channel_bias: bad shapes");
    Node n;
    n.value = xv;
    const int c = xv.dim(0);
    const std::int64_t hw = static_cast<std::int64_t>(xv.dim(1)) * xv.dim(2);
    for (int ch = 0; ch < c; ++ch) {
      const double b = vv.data[static_cast<std::size_t>(ch)];
      double* p = n.value.data.data() + ch * hw;
      for (std::int64_t i = 0; i < hw; ++i) p[i] += b;
    }
    n.requires_grad = needs_grad(x) || needs_grad(v);
    n.backprop = [x, v, c, hw](Graph& g, Ref self) {
      const Tensor& gy = g.grad(self);
      if (g.needs_grad(x)) g.accumulate(x, gy);
      if (g.needs_grad(v)) {
        Tensor& gv = g.grad(v);
        for (int ch = 0; ch < c; ++ch) {
          const double* p = gy.data.data() + ch * hw;
          double s = 0.0;
          for (std::int64_t i = 0; i < hw; ++i) s += p[i];
          gv.data[static_cast<std::size_t>(ch)] += s;
        }
      }
    };
    return push(std::move(n));
  }

  // ---- conv / spatial ----

  /// 2-D convolution on {Cin,H,W} with weight {Cout,Cin,kh,kw} and bias
  /// {Cout}; zero padding. im2col + GEMM on both passes.
  Ref conv2d(Ref x, Ref w, Ref b, int stride, int pad) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    if (xv.ndim() != 3 || wv.ndim() != 4 || wv.dim(1) != xv.dim(0))
      throw ValidationError("ad::conv2d: bad shapes");
    const int cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    const int cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    const int kdim = cin * kh * kw;
    const std::int64_t patches = static_cast<std::int64_t>(oh) * ow;

    Tensor col = Tensor::uninit({kdim, static_cast<int>(patches)});
    im2col(xv, kh, kw, stride, pad, oh, ow, col);

    Node n;
    n.value = Tensor::uninit({cout, oh, ow});
    {
      ConstMatMap wm(wv.data.data(), cout, kdim);
      ConstMatMap cm(col.data.data(), kdim, patches);
      MatMap ym(n.value.data.data(), cout, patches);
      ym.noalias() = wm * cm;
      const Tensor& bv = val(b);
      for (int oc = 0; oc < cout; ++oc)
        ym.row(oc).array() += bv.data[static_cast<std::size_t>(oc)];
    }
    n.aux.push_back(std::move(col));
    n.requires_grad = needs_grad(x) || needs_grad(w) || needs_grad(b);
    n.backprop = [x, w, b, stride, pad, cin, h, wd, cout, kh, kw, oh, ow, kdim,
                  patches](Graph& g, Ref self) {
      const Tensor& gy = g.grad(self);
      const Tensor& colv = g.node(self).aux[0];
      ConstMatMap gym(gy.data.data(), cout, patches);
      if (g.needs_grad(w)) {
        ConstMatMap cm(colv.data.data(), kdim, patches);
        MatMap gwm(g.grad(w).data.data(), cout, kdim);
        gwm.noalias() += gym * cm.transpose();
      }
      if (g.needs_grad(b)) {
        Tensor& gb = g.grad(b);
        for (int oc = 0; oc < cout; ++oc)
          gb.data[static_cast<std::size_t>(oc)] += gym.row(oc).sum();
      }
      if (g.needs_grad(x)) {
        const Tensor& wv2 = g.val(w);
        ConstMatMap wm(wv2.data.data(), cout, kdim);
        Tensor gcol = Tensor::uninit({kdim, static_cast<int>(patches)});
        MatMap gcm(gcol.data.data(), kdim, patches);
        gcm.noalias() = wm.transpose() * gym;
        col2im_accumulate(gcol, kh, kw, stride, pad, oh, ow, cin, h, wd, g.grad(x));
      }
    };
    return push(std::move(n));
  }

  Ref upsample2x(Ref x) {
    const Tensor& xv = val(x);
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    Node n;
    n.value = Tensor::uninit({c, h * 2, w * 2});
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx)
          n.value.at3(ch, y, xx) = xv.at3(ch, y / 2, xx / 2);
    n.requires_grad = needs_grad(x);
    n.backprop = [x, c, h, w](Graph& g, Ref self) {
      if (!g.needs_grad(x)) return;
      const Tensor& gy = g.grad(self);
      Tensor& gx = g.grad(x);
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
          for (int xx = 0; xx < 2 * w; ++xx)
            gx.at3(ch, y / 2, xx / 2) += gy.at3(ch, y, xx);
    };
    return push(std::move(n));
  }

  Ref avgpool(Ref x, int k) {
    const Tensor& xv = val(x);
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    if (h % k || w % k) throw ValidationError("ad::avgpool: size not divisible");
    const int oh = h / k, ow = w / k;
    const double inv = 1.0 / (k * k);
    Node n;
    n.value = Tensor::uninit({c, oh, ow});
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double s = 0.0;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) s += xv.at3(ch, oy * k + dy, ox * k + dx);
          n.value.at3(ch, oy, ox) = s * inv;
        }
    n.requires_grad = needs_grad(x);
    n.backprop = [x, c, oh, ow, k, inv](Graph& g, Ref self) {
      if (!g.needs_grad(x)) return;
      const Tensor& gy = g.grad(self);
      Tensor& gx = g.grad(x);
      for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            const double gv = gy.at3(ch, oy, ox) * inv;
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx) gx.at3(ch, oy * k + dy, ox * k + dx) += gv;
          }
    };
    return push(std::move(n));
  }

  /// GroupNorm over {C,H,W}: per-group mean/variance, per-channel affine.
  Ref groupnorm(Ref x, Ref gamma, Ref beta, int groups, double eps = 1e-5) {
    const Tensor& xv = val(x);
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    if (c % groups) throw ValidationError("ad::groupnorm: C % groups != 0");
    const int cpg = c / groups;
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    const std::int64_t gsize = cpg * hw;

    Node n;
    n.value = Tensor::uninit({c, h, w});
    Tensor xhat = Tensor::uninit({c, h, w});
    Tensor stats = Tensor::uninit({groups, 2});  // mean, inv_std per group
    const Tensor& gam = val(gamma);
    const Tensor& bet = val(beta);
    for (int g0 = 0; g0 < groups; ++g0) {
      Eigen::Map<const Eigen::ArrayXd> xs(xv.data.data() + static_cast<std::int64_t>(g0) * gsize,
                                          gsize);
      const double m = xs.mean();
      const double var = (xs - m).square().sum() / static_cast<double>(gsize);
      const double inv_std = 1.0 / std::sqrt(var + eps);
      stats.at2(g0, 0) = m;
      stats.at2(g0, 1) = inv_std;
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = g0 * cpg + cc;
        const double ga = gam.data[static_cast<std::size_t>(ch)];
        const double be = bet.data[static_cast<std::size_t>(ch)];
        Eigen::Map<Eigen::ArrayXd> xh(xhat.data.data() + static_cast<std::int64_t>(ch) * hw, hw);
        Eigen::Map<Eigen::ArrayXd> yv(n.value.data.data() + static_cast<std::int64_t>(ch) * hw, hw);
        Eigen::Map<const Eigen::ArrayXd> xc(xv.data.data() + static_cast<std::int64_t>(ch) * hw, hw);
        xh = (xc - m) * inv_std;
        yv = ga * xh + be;
      }
    }
    n.aux.push_back(std::move(xhat));
    n.aux.push_back(std::move(stats));
    n.requires_grad = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
    n.backprop = [x, gamma, beta, groups, cpg, hw, gsize](Graph& g, Ref self) {
      const Tensor& gy = g.grad(self);
      const Tensor& xhat2 = g.node(self).aux[0];
      const Tensor& stats2 = g.node(self).aux[1];
      const Tensor& gam2 = g.val(gamma);
      if (g.needs_grad(gamma) || g.needs_grad(beta)) {
        Tensor& gg = g.grad(gamma);
        Tensor& gb = g.grad(beta);
        const int c = groups * cpg;
        for (int ch = 0; ch < c; ++ch) {
          const double* gyc = gy.data.data() + static_cast<std::int64_t>(ch) * hw;
          const double* xhc = xhat2.data.data() + static_cast<std::int64_t>(ch) * hw;
          double sg = 0.0, sb = 0.0;
          for (std::int64_t i = 0; i < hw; ++i) {
            sg += gyc[i] * xhc[i];
            sb += gyc[i];
          }
          gg.data[static_cast<std::size_t>(ch)] += sg;
          gb.data[static_cast<std::size_t>(ch)] += sb;
        }
      }
      if (g.needs_grad(x)) {
        Tensor& gx = g.grad(x);
        for (int g0 = 0; g0 < groups; ++g0) {
          const double inv_std = stats2.at2(g0, 1);
          // dxhat = gy * gamma; reduce within the group
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int cc = 0; cc < cpg; ++cc) {
            const int ch = g0 * cpg + cc;
            const double ga = gam2.data[static_cast<std::size_t>(ch)];
            Eigen::Map<const Eigen::ArrayXd> gyc(gy.data.data() + static_cast<std::int64_t>(ch) * hw, hw);
            Eigen::Map<const Eigen::ArrayXd> xhc(xhat2.data.data() + static_cast<std::int64_t>(ch) * hw, hw);
            sum_dxhat += ga * gyc.sum();
            sum_dxhat_xhat += ga * (gyc * xhc).sum();
          }
          const double inv_n = 1.0 / static_cast<double>(gsize);
          for (int cc = 0; cc < cpg; ++cc) {
            const int ch = g0 * cpg + cc;
            const double ga = gam2.data[static_cast<std::size_t>(ch)];
            Eigen::Map<const Eigen::ArrayXd> gyc(gy.data.data() + static_cast<std::int64_t>(ch) * hw, hw);
            Eigen::Map<const Eigen::ArrayXd> xhc(xhat2.data.data() + static_cast<std::int64_t>(ch) * hw, hw);
            Eigen::Map<Eigen::ArrayXd> gxc(gx.data.data() + static_cast<std::int64_t>(ch) * hw, hw);
            gxc += inv_std * (ga * gyc - inv_n * (sum_dxhat + xhc * sum_dxhat_xhat));
          }
        }
      }
    };
    return push(std::move(n));
  }

  // ---- dense / attention ----

  /// {N,Din} @ {Din,Dout} + {Dout}
  Ref linear(Ref x, Ref w, Ref b) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    const Tensor& bv = val(b);
    if (xv.ndim() != 2 || wv.ndim() != 2 || xv.dim(1) != wv.dim(0) ||
        bv.numel() != wv.dim(1))
      throw ValidationError("ad::linear: bad shapes");
    const int nrow = xv.dim(0), din = xv.dim(1), dout = wv.dim(1);
    Node n;
    n.value = Tensor::uninit({nrow, dout});
    {
      ConstMatMap xm(xv.data.data(), nrow, din);
      ConstMatMap wm(wv.data.data(), din, dout);
      MatMap ym(n.value.data.data(), nrow, dout);
      ym.noalias() = xm * wm;
      for (int j = 0; j < dout; ++j) ym.col(j).array() += bv.data[static_cast<std::size_t>(j)];
    }
    n.requires_grad = needs_grad(x) || needs_grad(w) || needs_grad(b);
    n.backprop = [x, w, b, nrow, din, dout](Graph& g, Ref self) {
      const Tensor& gy = g.grad(self);
      ConstMatMap gym(gy.data.data(), nrow, dout);
      if (g.needs_grad(x)) {
        ConstMatMap wm(g.val(w).data.data(), din, dout);
        MatMap gxm(g.grad(x).data.data(), nrow, din);
        gxm.noalias() += gym * wm.transpose();
      }
      if (g.needs_grad(w)) {
        ConstMatMap xm(g.val(x).data.data(), nrow, din);
        MatMap gwm(g.grad(w).data.data(), din, dout);
        gwm.noalias() += xm.transpose() * gym;
      }
      if (g.needs_grad(b)) {
        Tensor& gb = g.grad(b);
        for (int j = 0; j < dout; ++j) gb.data[static_cast<std::size_t>(j)] += gym.col(j).sum();
      }
    };
    return push(std::move(n));
  }

  /// {N,K} @ {M,K}^T -> {N,M}
  Ref matmul_nt(Ref a, Ref b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(1))
      throw ValidationError("ad::matmul_nt: bad shapes");
    const int nrow = av.dim(0), k = av.dim(1), m = bv.dim(0);
    Node n;
    n.value = Tensor::uninit({nrow, m});
    {
      ConstMatMap am(av.data.data(), nrow, k);
      ConstMatMap bm(bv.data.data(), m, k);
      MatMap ym(n.value.data.data(), nrow, m);
      ym.noalias() = am * bm.transpose();
    }
    n.requires_grad = needs_grad(a) || needs_grad(b);
    n.backprop = [a, b, nrow, k, m](Graph& g, Ref self) {
      const Tensor& gy = g.grad(self);
      ConstMatMap gym(gy.data.data(), nrow, m);
      if (g.needs_grad(a)) {
        ConstMatMap bm(g.val(b).data.data(), m, k);
        MatMap gam(g.grad(a).data.data(), nrow, k);
        gam.noalias() += gym * bm;
      }
      if (g.needs_grad(b)) {
        ConstMatMap am(g.val(a).data.data(), nrow, k);
        MatMap gbm(g.grad(b).data.data(), m, k);
        gbm.noalias() += gym.transpose() * am;
      }
    };
    return push(std::move(n));
  }

  /// {N,K} @ {K,M} -> {N,M}
  Ref matmul(Ref a, Ref b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0))
      throw ValidationError("ad::matmul: bad shapes");
    const int nrow = av.dim(0), k = av.dim(1), m = bv.dim(1);
    Node n;
    n.value = Tensor::uninit({nrow, m});
    {
      ConstMatMap am(av.data.data(), nrow, k);
      ConstMatMap bm(bv.data.data(), k, m);
      MatMap ym(n.value.data.data(), nrow, m);
      ym.noalias() = am * bm;
    }
    n.requires_grad = needs_grad(a) || needs_grad(b);
    n.backprop = [a, b, nrow, k, m](Graph& g, Ref self) {
      const Tensor& gy = g.grad(self);
      ConstMatMap gym(gy.data.data(), nrow, m);
      if (g.needs_grad(a)) {
        ConstMatMap bm(g.val(b).data.data(), k, m);
        MatMap gam(g.grad(a).data.data(), nrow, k);
        gam.noalias() += gym * bm.transpose();
      }
      if (g.needs_grad(b)) {
        ConstMatMap am(g.val(a).data.data(), nrow, k);
        MatMap gbm(g.grad(b).data.data(), k, m);
        gbm.noalias() += am.transpose() * gym;
      }
    };
    return push(std::move(n));
  }

  Ref softmax_rows(Ref x) {
    const Tensor& xv = val(x);
    const int nrow = xv.dim(0), m = xv.dim(1);
    Node n;
    n.value = Tensor::uninit({nrow, m});
    for (int r = 0; r < nrow; ++r) {
      double mx = -1e300;
      for (int j = 0; j < m; ++j) mx = std::max(mx, xv.at2(r, j));
      double z = 0.0;
      for (int j = 0; j < m; ++j) z += std::exp(xv.at2(r, j) - mx);
      for (int j = 0; j < m; ++j) n.value.at2(r, j) = std::exp(xv.at2(r, j) - mx) / z;
    }
    n.requires_grad = needs_grad(x);
    n.backprop = [x, nrow, m](Graph& g, Ref self) {
      if (!g.needs_grad(x)) return;
      const Tensor& y = g.node(self).ext_value ? *g.node(self).ext_value : g.node(self).value;
      const Tensor& gy = g.grad(self);
      Tensor& gx = g.grad(x);
      for (int r = 0; r < nrow; ++r) {
        double dotv = 0.0;
        for (int j = 0; j < m; ++j) dotv += gy.at2(r, j) * y.at2(r, j);
        for (int j = 0; j < m; ++j)
          gx.at2(r, j) += y.at2(r, j) * (gy.at2(r, j) - dotv);
      }
    };
    return push(std::move(n));
  }

  /// {C,H,W} -> {H*W, C}
  Ref chw_to_rows(Ref x) {
    const Tensor& xv = val(x);
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    const int p = h * w;
    Node n;
    n.value = Tensor::uninit({p, c});
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < p; ++i)
        n.value.at2(i, ch) = xv.data[static_cast<std::size_t>(ch) * p + i];
    n.requires_grad = needs_grad(x);
    n.backprop = [x, c, p](Graph& g, Ref self) {
      if (!g.needs_grad(x)) return;
      const Tensor& gy = g.grad(self);
      Tensor& gx = g.grad(x);
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < p; ++i)
          gx.data[static_cast<std::size_t>(ch) * p + i] += gy.at2(i, ch);
    };
    return push(std::move(n));
  }

  /// {H*W, C} -> {C,H,W}
  Ref rows_to_chw(Ref x, int h, int w) {
    const Tensor& xv = val(x);
    const int p = xv.dim(0), c = xv.dim(1);
    if (p != h * w) throw ValidationError("ad::rows_to_chw: bad shapes");
    Node n;
    n.value = Tensor::uninit({c, h, w});
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < p; ++i)
        n.value.data[static_cast<std::size_t>(ch) * p + i] = xv.at2(i, ch);
    n.requires_grad = needs_grad(x);
    n.backprop = [x, c, p](Graph& g, Ref self) {
      if (!g.needs_grad(x)) return;
      const Tensor& gy = g.grad(self);
      Tensor& gx = g.grad(x);
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < p; ++i)
          gx.at2(i, ch) += gy.data[static_cast<std::size_t>(ch) * p + i];
    };
    return push(std::move(n));
  }

  Ref concat_channels(Ref a, Ref b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2))
      throw ValidationError("ad::concat_channels: spatial mismatch");
    const int ca = av.dim(0), cb = bv.dim(0), h = av.dim(1), w = av.dim(2);
    Node n;
    n.value = Tensor::uninit({ca + cb, h, w});
    std::copy(av.data.begin(), av.data.end(), n.value.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), n.value.data.begin() + av.numel());
    n.requires_grad = needs_grad(a) || needs_grad(b);
    n.backprop = [a, b](Graph& g, Ref self) {
      const Tensor& gy = g.grad(self);
      if (g.needs_grad(a)) {
        Tensor& ga = g.grad(a);
        for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += gy.data[i];
      }
      if (g.needs_grad(b)) {
        Tensor& gb = g.grad(b);
        const std::size_t off = g.val(a).data.size();
        for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += gy.data[off + i];
      }
    };
    return push(std::move(n));
  }

  /// Row r of {R,D} as {1,D}; gradient scatters back into the table row.
  Ref embed_row(Ref table, int row) {
    const Tensor& tv = val(table);
    if (tv.ndim() != 2 || row < 0 || row >= tv.dim(0))
      throw ValidationError("ad::embed_row: row out of range");
    const int d = tv.dim(1);
    Node n;
    n.value = Tensor({1, d});
    for (int j = 0; j < d; ++j) n.value.data[static_cast<std::size_t>(j)] = tv.at2(row, j);
    n.requires_grad = needs_grad(table);
    n.backprop = [table, row, d](Graph& g, Ref self) {
      if (!g.needs_grad(table)) return;
      const Tensor& gy = g.grad(self);
      Tensor& gt = g.grad(table);
      for (int j = 0; j < d; ++j) gt.at2(row, j) += gy.data[static_cast<std::size_t>(j)];
    };
    return push(std::move(n));
  }

  /// Stacks k refs of shape {1,D} into {k,D}.
  Ref stack_rows(const std::vector<Ref>& rows) {
    if (rows.empty()) throw ValidationError("ad::stack_rows: empty");
    const int d = val(rows[0]).dim(1);
    Node n;
    n.value = Tensor({static_cast<int>(rows.size()), d});
    bool rg = false;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Tensor& rv = val(rows[r]);
      for (int j = 0; j < d; ++j) n.value.at2(static_cast<int>(r), j) = rv.data[static_cast<std::size_t>(j)];
      rg = rg || needs_grad(rows[r]);
    }
    n.requires_grad = rg;
    n.backprop = [rows, d](Graph& g, Ref self) {
      const Tensor& gy = g.grad(self);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (!g.needs_grad(rows[r])) continue;
        Tensor& gr = g.grad(rows[r]);
        for (int j = 0; j < d; ++j) gr.data[static_cast<std::size_t>(j)] += gy.at2(static_cast<int>(r), j);
      }
    };
    return push(std::move(n));
  }

  /// {C,H,W} -> {1,C*H*W} row vector (copy reshape).
  Ref flatten(Ref x) {
    const Tensor& xv = val(x);
    Node n;
    n.value = Tensor::uninit({1, static_cast<int>(xv.numel())});
    std::copy(xv.data.begin(), xv.data.end(), n.value.data.begin());
    n.requires_grad = needs_grad(x);
    n.backprop = [x](Graph& g, Ref self) {
      if (!g.needs_grad(x)) return;
      const Tensor& gy = g.grad(self);
      Tensor& gx = g.grad(x);
      for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gy.data[i];
    };
    return push(std::move(n));
  }

  /// Global average over spatial dims: {C,H,W} -> {1,C}.
  Ref mean_hw(Ref x) {
    const Tensor& xv = val(x);
    const int c = xv.dim(0);
    const std::int64_t hw = static_cast<std::int64_t>(xv.dim(1)) * xv.dim(2);
    const double inv = 1.0 / static_cast<double>(hw);
    Node n;
    n.value = Tensor({1, c});
    for (int ch = 0; ch < c; ++ch) {
      const double* p = xv.data.data() + ch * hw;
      double s = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) s += p[i];
      n.value.data[static_cast<std::size_t>(ch)] = s * inv;
    }
    n.requires_grad = needs_grad(x);
    n.backprop = [x, c, hw, inv](Graph& g, Ref self) {
      if (!g.needs_grad(x)) return;
      const Tensor& gy = g.grad(self);
      Tensor& gx = g.grad(x);
      for (int ch = 0; ch < c; ++ch) {
        const double gv = gy.data[static_cast<std::size_t>(ch)] * inv;
        double* p = gx.data.data() + ch * hw;
        for (std::int64_t i = 0; i < hw; ++i) p[i] += gv;
      }
    };
    return push(std::move(n));
  }

  // ---- losses ----

  /// Mean squared error against a constant target; scalar output {1}.
  Ref mse_vs(Ref x, Tensor target) {
    const Tensor& xv = val(x);
    require_same_shape(xv, target, "ad::mse_vs");
    const double inv = 1.0 / static_cast<double>(xv.numel());
    Node n;
    n.value = Tensor({1});
    double s = 0.0;
    for (std::size_t i = 0; i < xv.data.size(); ++i) {
      const double d = xv.data[i] - target.data[i];
      s += d * d;
    }
    n.value.data[0] = s * inv;
    n.aux.push_back(std::move(target));
    n.requires_grad = needs_grad(x);
    n.backprop = [x, inv](Graph& g, Ref self) {
      if (!g.needs_grad(x)) return;
      const double gy = g.grad(self).data[0];
      const Tensor& xv2 = g.val(x);
      const Tensor& t = g.node(self).aux[0];
      Tensor& gx = g.grad(x);
      for (std::size_t i = 0; i < xv2.data.size(); ++i)
        gx.data[i] += gy * 2.0 * inv * (xv2.data[i] - t.data[i]);
    };
    return push(std::move(n));
  }

  /// Softmax cross-entropy of logits {1,K} against an integer label.
  Ref softmax_ce(Ref logits, int label) {
    const Tensor& lv = val(logits);
    if (lv.ndim() != 2 || lv.dim(0) != 1 || label < 0 || label >= lv.dim(1))
      throw ValidationError("ad::softmax_ce: bad shapes");
    const int k = lv.dim(1);
    double mx = -1e300;
    for (int j = 0; j < k; ++j) mx = std::max(mx, lv.data[static_cast<std::size_t>(j)]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(lv.data[static_cast<std::size_t>(j)] - mx);
    Node n;
    n.value = Tensor({1});
    n.value.data[0] = std::log(z) + mx - lv.data[static_cast<std::size_t>(label)];
    n.requires_grad = needs_grad(logits);
    n.backprop = [logits, label, k](Graph& g, Ref self) {
      if (!g.needs_grad(logits)) return;
      const double gy = g.grad(self).data[0];
      const Tensor& lv2 = g.val(logits);
      double mx2 = -1e300;
      for (int j = 0; j < k; ++j) mx2 = std::max(mx2, lv2.data[static_cast<std::size_t>(j)]);
      double z2 = 0.0;
      for (int j = 0; j < k; ++j) z2 += std::exp(lv2.data[static_cast<std::size_t>(j)] - mx2);
      Tensor& gl = g.grad(logits);
      for (int j = 0; j < k; ++j) {
        const double p = std::exp(lv2.data[static_cast<std::size_t>(j)] - mx2) / z2;
        gl.data[static_cast<std::size_t>(j)] += gy * (p - (j == label ? 1.0 : 0.0));
      }
    };
    return push(std::move(n));
  }

  /// Reverse pass from a scalar loss node. Gradients accumulate (+=) into
  /// parameter buffers, so callers zero them between steps.
  void backward(Ref loss) {
    if (val(loss).numel() != 1) throw ValidationError("ad::backward: loss must be scalar");
    for (auto& n : nodes_) {
      if (!n.requires_grad) continue;
      if (n.ext_grad) continue;  // external accumulators are caller-managed
      const Tensor& v = n.ext_value ? *n.ext_value : n.value;
      if (!n.grad.same_shape(v)) n.grad = Tensor(v.shape);
      else n.grad.fill(0.0);
    }
    grad(loss).data[0] = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.requires_grad && n.backprop) n.backprop(*this, i);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Tensor* ext_value = nullptr;
    Tensor* ext_grad = nullptr;
    bool requires_grad = false;
    std::vector<Tensor> aux;
    std::function<void(Graph&, Ref)> backprop;
  };

  friend class NodeAccess;

  Node& node(Ref r) { return nodes_[static_cast<std::size_t>(r)]; }

  void accumulate(Ref r, const Tensor& g) {
    Tensor& dst = grad(r);
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
  }

  Ref push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<Ref>(nodes_.size() - 1);
  }

  static void im2col(const Tensor& x, int kh, int kw, int stride, int pad,
                     int oh, int ow, Tensor& col) {
    const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::int64_t patches = static_cast<std::int64_t>(oh) * ow;
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const std::int64_t krow = (static_cast<std::int64_t>(ci) * kh + ky) * kw + kx;
          double* dst = col.data.data() + krow * patches;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - pad;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - pad;
              dst[static_cast<std::int64_t>(oy) * ow + ox] =
                  (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x.at3(ci, iy, ix) : 0.0;
            }
          }
        }
  }

  static void col2im_accumulate(const Tensor& gcol, int kh, int kw, int stride,
                                int pad, int oh, int ow, int cin, int h, int w,
                                Tensor& gx) {
    const std::int64_t patches = static_cast<std::int64_t>(oh) * ow;
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const std::int64_t krow = (static_cast<std::int64_t>(ci) * kh + ky) * kw + kx;
          const double* src = gcol.data.data() + krow * patches;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= w) continue;
              gx.at3(ci, iy, ix) += src[static_cast<std::int64_t>(oy) * ow + ox];
            }
          }
        }
  }

  std::vector<Node> nodes_;
};

}  // namespace dgt::ad
