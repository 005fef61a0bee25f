#include "yoda/nn.hpp"

#include <cmath>
#include <random>

#include <Eigen/Core>
#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

#include "yoda/error.hpp"

namespace yoda::nn {

namespace {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

template <typename S>
void im2col(const Tensor<S>& in, std::size_t k, Buffer<S>& col) {
  const std::size_t n = in.plane();
  const long r = static_cast<long>(k / 2);
  const long h = static_cast<long>(in.h);
  const long w = static_cast<long>(in.w);
  col.resize(in.c * k * k * n);
  for (std::size_t ci = 0; ci < in.c; ++ci) {
    const S* src = in.data.data() + ci * n;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        S* dst = col.data() + ((ci * k + ky) * k + kx) * n;
        const long dy = static_cast<long>(ky) - r;
        const long dx = static_cast<long>(kx) - r;
        const long x0 = std::max(0L, -dx);
        const long x1 = std::min(w, w - dx);
        for (long y = 0; y < h; ++y) {
          const long yy = y + dy;
          S* out = dst + y * w;
          if (yy < 0 || yy >= h) {
            std::fill(out, out + w, S(0));
            continue;
          }
          const S* row = src + yy * w + dx;
          std::fill(out, out + x0, S(0));
          std::copy(row + x0, row + x1, out + x0);
          std::fill(out + x1, out + w, S(0));
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const Buffer<S>& col, std::size_t k, Tensor<S>& d_in) {
  const std::size_t n = d_in.plane();
  const long r = static_cast<long>(k / 2);
  const long h = static_cast<long>(d_in.h);
  const long w = static_cast<long>(d_in.w);
  for (std::size_t ci = 0; ci < d_in.c; ++ci) {
    S* dst = d_in.data.data() + ci * n;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const S* src = col.data() + ((ci * k + ky) * k + kx) * n;
        const long dy = static_cast<long>(ky) - r;
        const long dx = static_cast<long>(kx) - r;
        const long x0 = std::max(0L, -dx);
        const long x1 = std::min(w, w - dx);
        for (long y = 0; y < h; ++y) {
          const long yy = y + dy;
          if (yy < 0 || yy >= h) continue;
          S* row = dst + yy * w + dx;
          const S* in = src + y * w;
          for (long x = x0; x < x1; ++x) row[x] += in[x];
        }
      }
    }
  }
}

template <typename S>
using ArrayMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstArrayMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

template <typename S>
void reshape(Tensor<S>& t, std::size_t c, std::size_t h, std::size_t w) {
  t.c = c;
  t.h = h;
  t.w = w;
  t.data.resize(c * h * w);
}

template <typename S>
void zeros(Tensor<S>& t, std::size_t c, std::size_t h, std::size_t w) {
  t.c = c;
  t.h = h;
  t.w = w;
  t.data.assign(c * h * w, S(0));
}

template <typename S>
void silu(const Tensor<S>& z, Tensor<S>& a) {
  reshape(a, z.c, z.h, z.w);
  ConstArrayMap<S> zz(z.data.data(), static_cast<long>(z.data.size()));
  ArrayMap<S> aa(a.data.data(), static_cast<long>(a.data.size()));
  aa = zz / (S(1) + (-zz).exp());
}

// d_z = d_a * silu'(z), in place on d_a.
template <typename S>
void silu_backward(const Tensor<S>& z, Tensor<S>& d) {
  ConstArrayMap<S> zz(z.data.data(), static_cast<long>(z.data.size()));
  ArrayMap<S> dd(d.data.data(), static_cast<long>(d.data.size()));
  const auto s = (S(1) / (S(1) + (-zz).exp())).eval();
  dd *= s * (S(1) + zz * (S(1) - s));
}

template <typename S>
void avgpool2(const Tensor<S>& in, Tensor<S>& out) {
  reshape(out, in.c, in.h / 2, in.w / 2);
  for (std::size_t c = 0; c < in.c; ++c) {
    const S* src = in.data.data() + c * in.plane();
    S* dst = out.data.data() + c * out.plane();
    for (std::size_t y = 0; y < out.h; ++y) {
      for (std::size_t x = 0; x < out.w; ++x) {
        const S* p = src + 2 * y * in.w + 2 * x;
        dst[y * out.w + x] = S(0.25) * (p[0] + p[1] + p[in.w] + p[in.w + 1]);
      }
    }
  }
}

template <typename S>
void avgpool2_backward(const Tensor<S>& d_out, Tensor<S>& d_in) {
  for (std::size_t c = 0; c < d_out.c; ++c) {
    const S* src = d_out.data.data() + c * d_out.plane();
    S* dst = d_in.data.data() + c * d_in.plane();
    for (std::size_t y = 0; y < d_out.h; ++y) {
      for (std::size_t x = 0; x < d_out.w; ++x) {
        const S g = S(0.25) * src[y * d_out.w + x];
        S* p = dst + 2 * y * d_in.w + 2 * x;
        p[0] += g;
        p[1] += g;
        p[d_in.w] += g;
        p[d_in.w + 1] += g;
      }
    }
  }
}

// Nearest 2x upsample of `low` plus `skip`.
template <typename S>
void upsample_add(const Tensor<S>& low, const Tensor<S>& skip, Tensor<S>& out) {
  reshape(out, skip.c, skip.h, skip.w);
  std::copy(skip.data.begin(), skip.data.end(), out.data.begin());
  for (std::size_t c = 0; c < skip.c; ++c) {
    const S* src = low.data.data() + c * low.plane();
    S* dst = out.data.data() + c * out.plane();
    for (std::size_t y = 0; y < out.h; ++y) {
      for (std::size_t x = 0; x < out.w; ++x) dst[y * out.w + x] += src[(y / 2) * low.w + x / 2];
    }
  }
}

template <typename S>
void upsample_backward(const Tensor<S>& d_out, std::size_t low_h, std::size_t low_w, Tensor<S>& d_low) {
  zeros(d_low, d_out.c, low_h, low_w);
  for (std::size_t c = 0; c < d_out.c; ++c) {
    const S* src = d_out.data.data() + c * d_out.plane();
    S* dst = d_low.data.data() + c * d_low.plane();
    for (std::size_t y = 0; y < d_out.h; ++y) {
      for (std::size_t x = 0; x < d_out.w; ++x) dst[(y / 2) * low_w + x / 2] += src[y * d_out.w + x];
    }
  }
}

}  // namespace

template <typename S>
std::vector<S> time_embedding(double t, std::size_t width) {
  std::vector<S> emb(width);
  const std::size_t half = width / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    emb[i] = static_cast<S>(std::sin(t * freq));
    emb[i + half] = static_cast<S>(std::cos(t * freq));
  }
  return emb;
}

template std::vector<float> time_embedding<float>(double, std::size_t);
template std::vector<double> time_embedding<double>(double, std::size_t);

template <typename S>
UNet<S>::UNet(UNetConfig config) : config_(config) {
  const auto [c1, c2, c3] = config_.channels;
  const std::size_t e = config_.time_embedding;
  if (config_.in_channels == 0 || c1 == 0 || c2 == 0 || c3 == 0 || e == 0 || e % 2 != 0) {
    throw Error(ErrorCode::InvalidParam, "invalid network configuration");
  }
  e1_ = add_conv("enc1", config_.in_channels, c1, 3);
  t1_ = add_dense("temb1", c1, e);
  e2_ = add_conv("enc2", c1, c2, 3);
  t2_ = add_dense("temb2", c2, e);
  e3_ = add_conv("enc3", c2, c3, 3);
  t3_ = add_dense("temb3", c3, e);
  mid_ = add_conv("mid", c3, c3, 3);
  tm_ = add_dense("temb_mid", c3, e);
  d3_ = add_conv("dec3", c3, c2, 3);
  d2_ = add_conv("dec2", c2, c1, 3);
  d1_ = add_conv("dec1", c1, c1, 3);
  out_ = add_conv("head", c1, 1, 1);
}

template <typename S>
typename UNet<S>::Conv UNet<S>::add_conv(const std::string& name, std::size_t cin, std::size_t cout,
                                         std::size_t k) {
  Conv conv{cin, cout, k, n_params_, n_params_ + cout * cin * k * k};
  layers_.push_back({name + ".weight", {cout, cin, k, k}, conv.w_off, cout * cin * k * k});
  layers_.push_back({name + ".bias", {cout}, conv.b_off, cout});
  n_params_ = conv.b_off + cout;
  return conv;
}

template <typename S>
typename UNet<S>::Dense UNet<S>::add_dense(const std::string& name, std::size_t rows, std::size_t cols) {
  Dense d{rows, cols, n_params_};
  layers_.push_back({name + ".weight", {rows, cols}, d.off, rows * cols});
  n_params_ += rows * cols;
  return d;
}

template <typename S>
void UNet<S>::init(std::span<S> params, std::uint64_t seed) const {
  if (params.size() != n_params_) throw Error(ErrorCode::DimMismatch, "parameter vector size");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::fill(params.begin(), params.end(), S(0));
  for (const Conv* c : {&e1_, &e2_, &e3_, &mid_, &d3_, &d2_, &d1_}) {
    const double std = std::sqrt(2.0 / static_cast<double>(c->cin * c->k * c->k));
    for (std::size_t i = 0; i < c->cout * c->cin * c->k * c->k; ++i) {
      params[c->w_off + i] = static_cast<S>(std * normal(rng));
    }
  }
  for (const Dense* d : {&t1_, &t2_, &t3_, &tm_}) {
    const double std = std::sqrt(1.0 / static_cast<double>(d->cols));
    for (std::size_t i = 0; i < d->rows * d->cols; ++i) params[d->off + i] = static_cast<S>(std * normal(rng));
  }
}

namespace {

template <typename S, typename Conv>
void conv_forward(std::span<const S> params, const Conv& conv, const Tensor<S>& in, Tensor<S>& out,
                  Buffer<S>& col) {
  reshape(out, conv.cout, in.h, in.w);
  const std::size_t n = in.plane();
  const std::size_t kk = conv.cin * conv.k * conv.k;
  ConstMatMap<S> w(params.data() + conv.w_off, static_cast<long>(conv.cout), static_cast<long>(kk));
  MatMap<S> o(out.data.data(), static_cast<long>(conv.cout), static_cast<long>(n));
  if (conv.k == 1) {
    ConstMatMap<S> x(in.data.data(), static_cast<long>(conv.cin), static_cast<long>(n));
    o.noalias() = w * x;
  } else {
    im2col(in, conv.k, col);
    ConstMatMap<S> x(col.data(), static_cast<long>(kk), static_cast<long>(n));
    o.noalias() = w * x;
  }
  for (std::size_t c = 0; c < conv.cout; ++c) {
    const S b = params[conv.b_off + c];
    S* row = out.data.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) row[i] += b;
  }
}

// Accumulates weight/bias grads, and d_in when requested.
template <typename S, typename Conv>
void conv_backward(std::span<const S> params, const Conv& conv, const Tensor<S>& in, const Tensor<S>& d_out,
                   std::span<S> grad, Tensor<S>* d_in, Buffer<S>& col, Buffer<S>& dcol) {
  const std::size_t n = in.plane();
  const std::size_t kk = conv.cin * conv.k * conv.k;
  ConstMatMap<S> w(params.data() + conv.w_off, static_cast<long>(conv.cout), static_cast<long>(kk));
  ConstMatMap<S> g(d_out.data.data(), static_cast<long>(conv.cout), static_cast<long>(n));
  MatMap<S> dw(grad.data() + conv.w_off, static_cast<long>(conv.cout), static_cast<long>(kk));
  for (std::size_t c = 0; c < conv.cout; ++c) grad[conv.b_off + c] += g.row(static_cast<long>(c)).sum();

  if (conv.k == 1) {
    ConstMatMap<S> x(in.data.data(), static_cast<long>(conv.cin), static_cast<long>(n));
    dw.noalias() += g * x.transpose();
    if (d_in != nullptr) {
      MatMap<S> dx(d_in->data.data(), static_cast<long>(conv.cin), static_cast<long>(n));
      dx.noalias() += w.transpose() * g;
    }
    return;
  }
  im2col(in, conv.k, col);
  ConstMatMap<S> x(col.data(), static_cast<long>(kk), static_cast<long>(n));
  dw.noalias() += g * x.transpose();
  if (d_in != nullptr) {
    dcol.resize(kk * n);
    MatMap<S> dc(dcol.data(), static_cast<long>(kk), static_cast<long>(n));
    dc.noalias() = w.transpose() * g;
    col2im_add(dcol, conv.k, *d_in);
  }
}

template <typename S, typename Dense>
void add_time(std::span<const S> params, const Dense& d, const std::vector<S>& emb, Tensor<S>& z) {
  ConstMatMap<S> w(params.data() + d.off, static_cast<long>(d.rows), static_cast<long>(d.cols));
  Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> e(emb.data(), static_cast<long>(emb.size()));
  const Eigen::Matrix<S, Eigen::Dynamic, 1> shift = w * e;
  const std::size_t n = z.plane();
  for (std::size_t c = 0; c < d.rows; ++c) {
    S* row = z.data.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) row[i] += shift[static_cast<long>(c)];
  }
}

template <typename S, typename Dense>
void add_time_backward(const Dense& d, const std::vector<S>& emb, const Tensor<S>& dz, std::span<S> grad) {
  const std::size_t n = dz.plane();
  for (std::size_t c = 0; c < d.rows; ++c) {
    S sum = 0;
    const S* row = dz.data.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) sum += row[i];
    for (std::size_t e = 0; e < d.cols; ++e) grad[d.off + c * d.cols + e] += sum * emb[e];
  }
}

/// Flushes subnormals to zero for the scope.
class FlushDenormals {
 public:
#if defined(__SSE2__)
  FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040U); }
  ~FlushDenormals() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

}  // namespace

template <typename S>
std::vector<S> UNet<S>::forward(std::span<const S> params, const Tensor<S>& x, double t) const {
  thread_local Tape tape;
  return forward(params, x, t, tape);
}

template <typename S>
std::vector<S> UNet<S>::forward(std::span<const S> params, const Tensor<S>& x, double t, Tape& tp) const {
  if (params.size() != n_params_) throw Error(ErrorCode::DimMismatch, "parameter vector size");
  if (x.c != config_.in_channels) throw Error(ErrorCode::DimMismatch, "network input channel count");
  if (x.h % 4 != 0 || x.w % 4 != 0) throw Error(ErrorCode::DimMismatch, "network input sides must be /4");
  const FlushDenormals ftz;
  auto& col = tp.col;
  reshape(tp.x, x.c, x.h, x.w);
  std::copy(x.data.begin(), x.data.end(), tp.x.data.begin());
  tp.emb = time_embedding<S>(t, config_.time_embedding);

  conv_forward(params, e1_, x, tp.z1, col);
  add_time(params, t1_, tp.emb, tp.z1);
  silu(tp.z1, tp.a1);
  avgpool2(tp.a1, tp.p1);

  conv_forward(params, e2_, tp.p1, tp.z2, col);
  add_time(params, t2_, tp.emb, tp.z2);
  silu(tp.z2, tp.a2);
  avgpool2(tp.a2, tp.p2);

  conv_forward(params, e3_, tp.p2, tp.z3, col);
  add_time(params, t3_, tp.emb, tp.z3);
  silu(tp.z3, tp.a3);

  conv_forward(params, mid_, tp.a3, tp.zm, col);
  add_time(params, tm_, tp.emb, tp.zm);
  silu(tp.zm, tp.am);

  conv_forward(params, d3_, tp.am, tp.zd3, col);
  silu(tp.zd3, tp.ad3);
  upsample_add(tp.ad3, tp.a2, tp.u2);

  conv_forward(params, d2_, tp.u2, tp.zd2, col);
  silu(tp.zd2, tp.ad2);
  upsample_add(tp.ad2, tp.a1, tp.u1);

  conv_forward(params, d1_, tp.u1, tp.zd1, col);
  silu(tp.zd1, tp.ad1);

  conv_forward(params, out_, tp.ad1, tp.out, col);
  return {tp.out.data.begin(), tp.out.data.end()};
}

template <typename S>
void UNet<S>::backward(std::span<const S> params, Tape& tp, std::span<const S> d_out, std::span<S> grad) const {
  if (grad.size() != n_params_) throw Error(ErrorCode::DimMismatch, "gradient vector size");
  const FlushDenormals ftz;
  auto& col = tp.col;
  auto& dcol = tp.dcol;
  auto& g = tp.grads;
  const std::size_t h = tp.x.h;
  const std::size_t w = tp.x.w;

  reshape(g.out, 1, h, w);
  std::copy(d_out.begin(), d_out.end(), g.out.data.begin());

  zeros(g.ad1, tp.ad1.c, h, w);
  conv_backward(params, out_, tp.ad1, g.out, grad, &g.ad1, col, dcol);
  silu_backward(tp.zd1, g.ad1);  // now dL/dzd1

  zeros(g.u1, tp.u1.c, h, w);
  conv_backward(params, d1_, tp.u1, g.ad1, grad, &g.u1, col, dcol);
  Tensor<S>& g_a1 = g.u1;  // skip branch
  upsample_backward(g.u1, tp.ad2.h, tp.ad2.w, g.ad2);
  silu_backward(tp.zd2, g.ad2);

  zeros(g.u2, tp.u2.c, tp.u2.h, tp.u2.w);
  conv_backward(params, d2_, tp.u2, g.ad2, grad, &g.u2, col, dcol);
  Tensor<S>& g_a2 = g.u2;
  upsample_backward(g.u2, tp.ad3.h, tp.ad3.w, g.ad3);
  silu_backward(tp.zd3, g.ad3);

  zeros(g.am, tp.am.c, tp.am.h, tp.am.w);
  conv_backward(params, d3_, tp.am, g.ad3, grad, &g.am, col, dcol);
  silu_backward(tp.zm, g.am);
  add_time_backward(tm_, tp.emb, g.am, grad);

  zeros(g.a3, tp.a3.c, tp.a3.h, tp.a3.w);
  conv_backward(params, mid_, tp.a3, g.am, grad, &g.a3, col, dcol);
  silu_backward(tp.z3, g.a3);
  add_time_backward(t3_, tp.emb, g.a3, grad);

  zeros(g.p2, tp.p2.c, tp.p2.h, tp.p2.w);
  conv_backward(params, e3_, tp.p2, g.a3, grad, &g.p2, col, dcol);
  avgpool2_backward(g.p2, g_a2);
  silu_backward(tp.z2, g_a2);
  add_time_backward(t2_, tp.emb, g_a2, grad);

  zeros(g.p1, tp.p1.c, tp.p1.h, tp.p1.w);
  conv_backward(params, e2_, tp.p1, g_a2, grad, &g.p1, col, dcol);
  avgpool2_backward(g.p1, g_a1);
  silu_backward(tp.z1, g_a1);
  add_time_backward(t1_, tp.emb, g_a1, grad);

  conv_backward(params, e1_, tp.x, g_a1, grad, static_cast<Tensor<S>*>(nullptr), col, dcol);
}

template class UNet<float>;
template class UNet<double>;

}  // namespace yoda::nn
