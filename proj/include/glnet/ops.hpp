#pragma once

#include "glnet/tensor.hpp"
#include "glnet/tiling.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <vector>

// Dense CPU kernels with explicit adjoints. Every *_backward accumulates into
// its gradient outputs (+=) so callers can fan gradients in from several uses.
namespace glnet::ops {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
    int kernel = 3;
    int stride = 1;
    int pad = 1;

    int out_extent(int in) const noexcept { return (in + 2 * pad - kernel) / stride + 1; }
    bool pointwise() const noexcept { return kernel == 1 && stride == 1 && pad == 0; }
};

// cols: (Cin*k*k) x (Hout*Wout)
template <typename T>
void im2col(const Tensor<T>& x, const ConvGeometry& g, Tensor<T>& cols)
{
    const int k = g.kernel;
    const int ho = g.out_extent(x.height());
    const int wo = g.out_extent(x.width());
    cols = Tensor<T>(1, x.channels() * k * k, ho * wo);
    T* dst = cols.data();
    for (int c = 0; c < x.channels(); ++c) {
        const T* src = x.channel(c);
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx)
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= x.height()) {
                        std::fill(dst, dst + wo, T(0));
                        dst += wo;
                        continue;
                    }
                    const T* row = src + static_cast<std::size_t>(iy) * x.width();
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        *dst++ = (ix >= 0 && ix < x.width()) ? row[ix] : T(0);
                    }
                }
    }
}

template <typename T>
void col2im_add(const RowMajor<T>& dcols, const ConvGeometry& g, Tensor<T>& dx)
{
    const int k = g.kernel;
    const int ho = g.out_extent(dx.height());
    const int wo = g.out_extent(dx.width());
    const T* src = dcols.data();
    for (int c = 0; c < dx.channels(); ++c) {
        T* dst = dx.channel(c);
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx)
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= dx.height()) {
                        src += wo;
                        continue;
                    }
                    T* row = dst + static_cast<std::size_t>(iy) * dx.width();
                    for (int ox = 0; ox < wo; ++ox, ++src) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < dx.width())
                            row[ix] += *src;
                    }
                }
    }
}

// weight: 1 x Cout x (Cin*k*k), bias: 1 x 1 x Cout.
// `cols` receives the unfolded input for the backward pass (left empty for
// pointwise convolutions, whose unfolding is the input itself).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvGeometry& g,
                 Tensor<T>* cols)
{
    const int cout = weight.height();
    const int fan_in = weight.width();
    if (fan_in != x.channels() * g.kernel * g.kernel)
        throw std::invalid_argument("conv input has " + std::to_string(x.channels()) + " channels, weight expects " +
                                    std::to_string(fan_in / (g.kernel * g.kernel)));
    const int ho = g.out_extent(x.height());
    const int wo = g.out_extent(x.width());
    if (ho <= 0 || wo <= 0)
        throw std::invalid_argument("conv input too small");
    Tensor<T> out(cout, ho, wo);
    Eigen::Map<const RowMajor<T>> w(weight.data(), cout, fan_in);
    Eigen::Map<RowMajor<T>> y(out.data(), cout, static_cast<Eigen::Index>(ho) * wo);
    if (g.pointwise()) {
        Eigen::Map<const RowMajor<T>> xin(x.data(), fan_in, static_cast<Eigen::Index>(ho) * wo);
        y.noalias() = w * xin;
        if (cols)
            *cols = Tensor<T>();
    } else {
        Tensor<T> local;
        Tensor<T>& c = cols ? *cols : local;
        im2col(x, g, c);
        Eigen::Map<const RowMajor<T>> cm(c.data(), fan_in, static_cast<Eigen::Index>(ho) * wo);
        y.noalias() = w * cm;
    }
    for (int o = 0; o < cout; ++o) {
        T* p = out.channel(o);
        const T b = bias[o];
        for (std::size_t i = 0; i < out.shape().plane(); ++i)
            p[i] += b;
    }
    return out;
}

// Accumulates dW, db and (when dx is non-null) dx.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& cols, const Tensor<T>& weight, const ConvGeometry& g,
                     const Tensor<T>& dy, Tensor<T>& dweight, Tensor<T>& dbias, Tensor<T>* dx)
{
    const int cout = weight.height();
    const int fan_in = weight.width();
    const Eigen::Index n = static_cast<Eigen::Index>(dy.height()) * dy.width();
    Eigen::Map<const RowMajor<T>> w(weight.data(), cout, fan_in);
    Eigen::Map<const RowMajor<T>> gy(dy.data(), cout, n);
    Eigen::Map<RowMajor<T>> gw(dweight.data(), cout, fan_in);
    const T* unfolded = g.pointwise() ? x.data() : cols.data();
    Eigen::Map<const RowMajor<T>> cm(unfolded, fan_in, n);
    gw.noalias() += gy * cm.transpose();
    for (int o = 0; o < cout; ++o) {
        const T* p = dy.channel(o);
        T s = 0;
        for (Eigen::Index i = 0; i < n; ++i)
            s += p[i];
        dbias[o] += s;
    }
    if (!dx)
        return;
    if (dx->shape() != x.shape())
        *dx = Tensor<T>(x.shape());
    if (g.pointwise()) {
        Eigen::Map<RowMajor<T>> gx(dx->data(), fan_in, n);
        gx.noalias() += w.transpose() * gy;
    } else {
        RowMajor<T> dcols = w.transpose() * gy;
        col2im_add(dcols, g, *dx);
    }
}

template <typename T>
void relu_inplace(Tensor<T>& x)
{
    for (auto& v : x.values())
        v = v > T(0) ? v : T(0);
}

// dy is masked where the forward output was zero.
template <typename T>
void relu_backward_inplace(const Tensor<T>& y, Tensor<T>& dy)
{
    for (std::size_t i = 0; i < y.size(); ++i)
        if (!(y[i] > T(0)))
            dy[i] = T(0);
}

// Half-pixel-center bilinear sampling taps along one axis.
struct LinearTaps {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

inline LinearTaps linear_taps(int in, int out)
{
    LinearTaps t;
    t.lo.resize(out);
    t.hi.resize(out);
    t.frac.resize(out);
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        double src = (i + 0.5) * scale - 0.5;
        if (src < 0)
            src = 0;
        int lo = static_cast<int>(src);
        if (lo > in - 1)
            lo = in - 1;
        t.lo[i] = lo;
        t.hi[i] = lo < in - 1 ? lo + 1 : lo;
        t.frac[i] = src - lo;
    }
    return t;
}

// Written as a + f*(b - a) so constant fields stay bit-exact.
template <typename T, typename A, typename B = A>
Array<T, B> resize_bilinear(const Array<T, A>& x, int out_h, int out_w)
{
    if (out_h <= 0 || out_w <= 0 || x.height() <= 0 || x.width() <= 0)
        throw std::invalid_argument("degenerate resize");
    Array<T, B> out(x.channels(), out_h, out_w);
    if (out_h == x.height() && out_w == x.width()) {
        std::copy(x.data(), x.data() + x.size(), out.data());
        return out;
    }
    const auto ty = linear_taps(x.height(), out_h);
    const auto tx = linear_taps(x.width(), out_w);
    for (int c = 0; c < x.channels(); ++c) {
        const T* src = x.channel(c);
        T* dst = out.channel(c);
        for (int oy = 0; oy < out_h; ++oy) {
            const T* r0 = src + static_cast<std::size_t>(ty.lo[oy]) * x.width();
            const T* r1 = src + static_cast<std::size_t>(ty.hi[oy]) * x.width();
            const T fy = static_cast<T>(ty.frac[oy]);
            for (int ox = 0; ox < out_w; ++ox) {
                const T fx = static_cast<T>(tx.frac[ox]);
                const T a = r0[tx.lo[ox]], b = r0[tx.hi[ox]];
                const T c0 = r1[tx.lo[ox]], d = r1[tx.hi[ox]];
                const T top = a + fx * (b - a);
                const T bot = c0 + fx * (d - c0);
                dst[static_cast<std::size_t>(oy) * out_w + ox] = top + fy * (bot - top);
            }
        }
    }
    return out;
}

template <typename T>
void resize_bilinear_backward(const Tensor<T>& dy, Tensor<T>& dx)
{
    if (dy.shape() == dx.shape()) {
        dx += dy;
        return;
    }
    const auto ty = linear_taps(dx.height(), dy.height());
    const auto tx = linear_taps(dx.width(), dy.width());
    for (int c = 0; c < dy.channels(); ++c) {
        const T* g = dy.channel(c);
        T* dst = dx.channel(c);
        for (int oy = 0; oy < dy.height(); ++oy) {
            T* r0 = dst + static_cast<std::size_t>(ty.lo[oy]) * dx.width();
            T* r1 = dst + static_cast<std::size_t>(ty.hi[oy]) * dx.width();
            const T fy = static_cast<T>(ty.frac[oy]);
            for (int ox = 0; ox < dy.width(); ++ox) {
                const T v = g[static_cast<std::size_t>(oy) * dy.width() + ox];
                const T fx = static_cast<T>(tx.frac[ox]);
                r0[tx.lo[ox]] += v * (1 - fx) * (1 - fy);
                r0[tx.hi[ox]] += v * fx * (1 - fy);
                r1[tx.lo[ox]] += v * (1 - fx) * fy;
                r1[tx.hi[ox]] += v * fx * fy;
            }
        }
    }
}

template <typename T, typename A>
Array<T, A> resize_nearest(const Array<T, A>& x, int out_h, int out_w)
{
    if (out_h <= 0 || out_w <= 0)
        throw std::invalid_argument("degenerate resize");
    Array<T, A> out(x.channels(), out_h, out_w);
    std::vector<int> sx(out_w);
    for (int ox = 0; ox < out_w; ++ox)
        sx[ox] = static_cast<int>(static_cast<long long>(ox) * x.width() / out_w);
    for (int c = 0; c < x.channels(); ++c)
        for (int oy = 0; oy < out_h; ++oy) {
            const int iy = static_cast<int>(static_cast<long long>(oy) * x.height() / out_h);
            const T* row = x.channel(c) + static_cast<std::size_t>(iy) * x.width();
            T* dst = out.channel(c) + static_cast<std::size_t>(oy) * out_w;
            for (int ox = 0; ox < out_w; ++ox)
                dst[ox] = row[sx[ox]];
        }
    return out;
}

// Adds dy into the `r` window of dx (adjoint of crop).
template <typename T>
void crop_backward(const Tensor<T>& dy, const PixelRect& r, Tensor<T>& dx)
{
    for (int c = 0; c < dy.channels(); ++c)
        for (int y = 0; y < r.height; ++y) {
            const T* src = dy.channel(c) + static_cast<std::size_t>(y) * r.width;
            T* dst = dx.channel(c) + static_cast<std::size_t>(r.top + y) * dx.width() + r.left;
            for (int x = 0; x < r.width; ++x)
                dst[x] += src[x];
        }
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts)
{
    if (parts.empty())
        throw std::invalid_argument("concat of nothing");
    const int h = parts.front()->height(), w = parts.front()->width();
    int c = 0;
    for (const auto* p : parts) {
        if (p->height() != h || p->width() != w)
            throw std::invalid_argument("concat spatial mismatch: " + to_string(p->shape()) + " vs " +
                                        to_string(parts.front()->shape()));
        c += p->channels();
    }
    Tensor<T> out(c, h, w);
    T* dst = out.data();
    for (const auto* p : parts)
        dst = std::copy(p->data(), p->data() + p->size(), dst);
    return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count)
{
    Tensor<T> out(count, x.height(), x.width());
    std::copy(x.channel(begin), x.channel(begin) + out.size(), out.data());
    return out;
}

template <typename T>
Tensor<T> image_to_tensor(const Image& img)
{
    Tensor<T> out(img.shape());
    for (std::size_t i = 0; i < img.size(); ++i)
        out[i] = static_cast<T>(img[i]) / T(255) - T(0.5);
    return out;
}

template <typename T, typename A>
Mask argmax_channels(const Array<T, A>& logits)
{
    Mask m(1, logits.height(), logits.width());
    const std::size_t plane = logits.shape().plane();
    for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        T bv = logits[i];
        for (int c = 1; c < logits.channels(); ++c) {
            const T v = logits[static_cast<std::size_t>(c) * plane + i];
            if (v > bv) {
                bv = v;
                best = c;
            }
        }
        m[i] = static_cast<std::uint8_t>(best);
    }
    return m;
}

// Bilinear on 8-bit images, rounded to nearest.
inline Image resize_image(const Image& img, int out_h, int out_w)
{
    if (out_h == img.height() && out_w == img.width())
        return img;
    const auto f = img.cast<float>();
    const auto r = resize_bilinear(f, out_h, out_w);
    Image out(r.shape());
    for (std::size_t i = 0; i < r.size(); ++i)
        out[i] = static_cast<std::uint8_t>(std::clamp(std::lround(r[i]), 0L, 255L));
    return out;
}

} // namespace glnet::ops
