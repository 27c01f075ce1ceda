#include "cace/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace cace::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

// Per-thread scratch reused across calls; im2col buffers are the largest
// transient allocations in training.
std::vector<double>& scratch(int slot) {
    thread_local std::vector<double> buffers[2];
    return buffers[slot];
}

MutMap scratch_matrix(int slot, Eigen::Index rows, Eigen::Index cols) {
    auto& buf = scratch(slot);
    const auto n = static_cast<std::size_t>(rows * cols);
    if (buf.size() < n) buf.resize(n);
    return MutMap(buf.data(), rows, cols);
}

// Rows: output positions. Columns: (ky, kx, cin). Zero padding.
MutMap im2col(const Conv2d& conv, const FeatureMap& in, int out_h, int out_w) {
    const int k = conv.kernel;
    const int cin = conv.in_channels;
    const int pad = conv.padding();
    MutMap cols = scratch_matrix(0, static_cast<Eigen::Index>(out_h) * out_w, static_cast<Eigen::Index>(k) * k * cin);
    cols.setZero();
    for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
            double* row = cols.row(static_cast<Eigen::Index>(oy) * out_w + ox).data();
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * conv.stride - pad + ky * conv.dilation;
                if (iy < 0 || iy >= in.height()) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ox * conv.stride - pad + kx * conv.dilation;
                    if (ix < 0 || ix >= in.width()) continue;
                    std::memcpy(row + (ky * k + kx) * cin, in.pixel(iy * in.width() + ix).data(),
                                sizeof(double) * static_cast<std::size_t>(cin));
                }
            }
        }
    }
    return cols;
}

void col2im_add(const Conv2d& conv, const MutMap& cols, int out_h, int out_w, FeatureMap& grad_in) {
    const int k = conv.kernel;
    const int cin = conv.in_channels;
    const int pad = conv.padding();
    for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
            const double* row = cols.row(static_cast<Eigen::Index>(oy) * out_w + ox).data();
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * conv.stride - pad + ky * conv.dilation;
                if (iy < 0 || iy >= grad_in.height()) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ox * conv.stride - pad + kx * conv.dilation;
                    if (ix < 0 || ix >= grad_in.width()) continue;
                    auto dst = grad_in.pixel(iy * grad_in.width() + ix);
                    const double* src = row + (ky * k + kx) * cin;
                    for (int c = 0; c < cin; ++c) dst[c] += src[c];
                }
            }
        }
    }
}

}  // namespace

Conv2d ParamStore::add_conv(int in_channels, int out_channels, int kernel, int stride, int dilation) {
    Conv2d conv;
    conv.in_channels = in_channels;
    conv.out_channels = out_channels;
    conv.kernel = kernel;
    conv.stride = stride;
    conv.dilation = dilation;
    conv.weight_offset = values_.size();
    conv.bias_offset = conv.weight_offset + conv.weight_count();
    values_.resize(conv.bias_offset + static_cast<std::size_t>(out_channels), 0.0);
    return conv;
}

void ParamStore::init_he(Rng& rng, const std::vector<Conv2d>& convs) {
    for (const auto& conv : convs) {
        const double fan_in = static_cast<double>(conv.kernel * conv.kernel * conv.in_channels);
        const double stddev = std::sqrt(2.0 / fan_in);
        for (std::size_t i = 0; i < conv.weight_count(); ++i) values_[conv.weight_offset + i] = rng.normal(0.0, stddev);
        for (int o = 0; o < conv.out_channels; ++o) values_[conv.bias_offset + o] = 0.0;
    }
}

std::uint64_t ParamStore::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(values_.data());
    for (std::size_t i = 0; i < values_.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

FeatureMap conv_forward(const Conv2d& conv, std::span<const double> params, const FeatureMap& in) {
    if (in.channels() != conv.in_channels) throw Error("conv_forward: channel mismatch");
    const int out_h = conv.out_size(in.height());
    const int out_w = conv.out_size(in.width());
    const MutMap cols = im2col(conv, in, out_h, out_w);
    ConstMap weight(params.data() + conv.weight_offset, cols.cols(), conv.out_channels);
    Eigen::Map<const Eigen::RowVectorXd> bias(params.data() + conv.bias_offset, conv.out_channels);

    FeatureMap out(out_h, out_w, conv.out_channels);
    MutMap result(out.data(), cols.rows(), conv.out_channels);
    result.noalias() = cols * weight;
    result.rowwise() += bias;
    return out;
}

void conv_backward(const Conv2d& conv, std::span<const double> params, const FeatureMap& in,
                   const FeatureMap& grad_out, std::span<double> grad_params, FeatureMap* grad_in) {
    const int out_h = grad_out.height();
    const int out_w = grad_out.width();
    const MutMap cols = im2col(conv, in, out_h, out_w);
    ConstMap dout(grad_out.data(), cols.rows(), conv.out_channels);

    if (!grad_params.empty()) {
        MutMap dweight(grad_params.data() + conv.weight_offset, cols.cols(), conv.out_channels);
        dweight.noalias() += cols.transpose() * dout;
        // Plain loop: Eigen's vectorised reductions peel by address, so their
        // summation order (and last bits) would follow heap alignment.
        double* dbias = grad_params.data() + conv.bias_offset;
        for (Eigen::Index r = 0; r < dout.rows(); ++r)
            for (int o = 0; o < conv.out_channels; ++o) dbias[o] += dout(r, o);
    }

    if (grad_in) {
        ConstMap weight(params.data() + conv.weight_offset, cols.cols(), conv.out_channels);
        MutMap dcols = scratch_matrix(1, cols.rows(), cols.cols());
        dcols.noalias() = dout * weight.transpose();
        *grad_in = FeatureMap(in.height(), in.width(), in.channels());
        col2im_add(conv, dcols, out_h, out_w, *grad_in);
    }
}

void relu_inplace(FeatureMap& x) {
    for (auto& v : x.values()) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(const FeatureMap& activated, FeatureMap& grad) {
    const auto& a = activated.values();
    auto& g = grad.values();
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!(a[i] > 0.0)) g[i] = 0.0;
}

FeatureMap upsample2(const FeatureMap& in) {
    FeatureMap out(in.height() * 2, in.width() * 2, in.channels());
    const auto bytes = sizeof(double) * static_cast<std::size_t>(in.channels());
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x)
            std::memcpy(out.pixel(y * out.width() + x).data(), in.pixel((y / 2) * in.width() + x / 2).data(), bytes);
    return out;
}

FeatureMap upsample2_backward(const FeatureMap& grad_out) {
    FeatureMap grad(grad_out.height() / 2, grad_out.width() / 2, grad_out.channels());
    for (int y = 0; y < grad_out.height(); ++y) {
        for (int x = 0; x < grad_out.width(); ++x) {
            auto src = grad_out.pixel(y * grad_out.width() + x);
            auto dst = grad.pixel((y / 2) * grad.width() + x / 2);
            for (int c = 0; c < grad.channels(); ++c) dst[c] += src[c];
        }
    }
    return grad;
}

FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
    if (a.height() != b.height() || a.width() != b.width()) throw Error("concat_channels: spatial mismatch");
    FeatureMap out(a.height(), a.width(), a.channels() + b.channels());
    for (int p = 0; p < a.pixels(); ++p) {
        auto o = out.pixel(p);
        std::copy_n(a.pixel(p).data(), a.channels(), o.data());
        std::copy_n(b.pixel(p).data(), b.channels(), o.data() + a.channels());
    }
    return out;
}

void split_channels(const FeatureMap& joined, int first_channels, FeatureMap& a, FeatureMap& b) {
    a = FeatureMap(joined.height(), joined.width(), first_channels);
    b = FeatureMap(joined.height(), joined.width(), joined.channels() - first_channels);
    for (int p = 0; p < joined.pixels(); ++p) {
        auto j = joined.pixel(p);
        std::copy_n(j.data(), first_channels, a.pixel(p).data());
        std::copy_n(j.data() + first_channels, b.channels(), b.pixel(p).data());
    }
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grad[i];
        v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
        const double m_hat = m_[i] / bc1;
        const double v_hat = v_[i] / bc2;
        params[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
}

void Sgd::step(std::span<double> params, std::span<const double> grad) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i] + config_.weight_decay * params[i];
        buf_[i] = started_ ? config_.momentum * buf_[i] + g : g;
        params[i] -= config_.lr * buf_[i];
    }
    started_ = true;
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace cace::nn
