#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cace/rng.hpp"
#include "cace/tensor.hpp"

namespace cace::nn {

// A 2-D convolution living inside a flat parameter vector. Weights are laid
// out as (kernel, kernel, in_channels, out_channels) row-major so the im2col
// matrix times the weight matrix gives the HWC output directly.
struct Conv2d {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int dilation = 1;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;

    int padding() const { return dilation * (kernel - 1) / 2; }
    std::size_t weight_count() const {
        return static_cast<std::size_t>(kernel) * kernel * in_channels * out_channels;
    }
    int out_size(int in) const { return (in + 2 * padding() - dilation * (kernel - 1) - 1) / stride + 1; }
};

// Flat parameter store shared by the encoder, decoder and segmenter.
class ParamStore {
public:
    Conv2d add_conv(int in_channels, int out_channels, int kernel, int stride = 1, int dilation = 1);

    // He-normal weights, zero biases.
    void init_he(Rng& rng, const std::vector<Conv2d>& convs);

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }
    std::size_t size() const { return values_.size(); }

    // FNV-1a over the raw bytes; stable while values are bit-identical.
    std::uint64_t checksum() const;

private:
    std::vector<double> values_;
};

FeatureMap conv_forward(const Conv2d& conv, std::span<const double> params, const FeatureMap& in);

// Accumulates dL/dparams into grad_params (skipped when empty); writes dL/din to grad_in when non-null.
void conv_backward(const Conv2d& conv, std::span<const double> params, const FeatureMap& in,
                   const FeatureMap& grad_out, std::span<double> grad_params, FeatureMap* grad_in);

void relu_inplace(FeatureMap& x);
// Zeroes grad where the forward output was not positive.
void relu_backward_inplace(const FeatureMap& activated, FeatureMap& grad);

FeatureMap upsample2(const FeatureMap& in);
FeatureMap upsample2_backward(const FeatureMap& grad_out);

FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b);
void split_channels(const FeatureMap& joined, int first_channels, FeatureMap& a, FeatureMap& b);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam() = default;
    Adam(std::size_t size, AdamConfig config) : config_(config), m_(size, 0.0), v_(size, 0.0) {}

    void step(std::span<double> params, std::span<const double> grad);
    long steps() const { return t_; }
    const AdamConfig& config() const { return config_; }

private:
    AdamConfig config_;
    std::vector<double> m_;
    std::vector<double> v_;
    long t_ = 0;
};

struct SgdConfig {
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

// Heavy-ball SGD: buf = momentum * buf + (g + wd * w); w -= lr * buf.
// The first step initialises buf to g + wd * w.
class Sgd {
public:
    Sgd() = default;
    Sgd(std::size_t size, SgdConfig config) : config_(config), buf_(size, 0.0) {}

    void step(std::span<double> params, std::span<const double> grad);
    const std::vector<double>& momentum_buffer() const { return buf_; }
    const SgdConfig& config() const { return config_; }

private:
    SgdConfig config_;
    std::vector<double> buf_;
    bool started_ = false;
};

bool all_finite(std::span<const double> v);

}  // namespace cace::nn
