#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cace/feature_stats.hpp"
#include "cace/nn.hpp"
#include "cace/tensor.hpp"

namespace cace {

enum class TransferMode { class_conditional, global };

class StepError : public Error {
public:
    using Error::Error;
};

struct EncoderShape {
    int image_channels = 3;
    int c1 = 16;  // full resolution, skip source
    int c2 = 16;  // stride 2
    int c3 = 32;  // stride 4, bottleneck
};

// Three conv3x3+ReLU stages with strides 1, 2, 2. Parameters are set once
// from the seed and never change afterwards.
class Encoder {
public:
    static constexpr int kLayers = 3;

    explicit Encoder(std::uint64_t seed, EncoderShape shape = {});

    // Post-ReLU activations E_1..E_3.
    std::vector<FeatureMap> encode(const FeatureMap& image) const;

    // Backpropagate gradients given w.r.t. each activation (empty maps are
    // treated as zero) down to the input image.
    FeatureMap backward(const FeatureMap& image, const std::vector<FeatureMap>& activations,
                        std::vector<FeatureMap> grads) const;

    const EncoderShape& shape() const { return shape_; }
    std::vector<int> layer_channels() const { return {shape_.c1, shape_.c2, shape_.c3}; }
    const nn::ParamStore& params() const { return params_; }
    std::uint64_t checksum() const { return params_.checksum(); }
    // Checkpoint restore only.
    void load_values(const std::vector<double>& values);

private:
    EncoderShape shape_;
    nn::ParamStore params_;
    std::vector<nn::Conv2d> convs_;
};

// Mirrors the encoder: upsample+conv+ReLU twice, concatenation with the
// renormalised skip features, a merge conv+ReLU, and a linear conv to RGB.
class Decoder {
public:
    struct Trace {
        FeatureMap up1, h1, up2, h2, merged, h3;
    };

    Decoder(std::uint64_t seed, EncoderShape shape = {});

    FeatureMap forward(const FeatureMap& bottleneck, const FeatureMap& skip, Trace* trace = nullptr) const;
    // Accumulates dL/dparams into grad.
    void backward(const Trace& trace, const FeatureMap& grad_out, std::span<double> grad) const;

    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

private:
    EncoderShape shape_;
    nn::ParamStore params_;
    std::vector<nn::Conv2d> convs_;  // a, b, merge, out
};

struct StyleLoss {
    double content = 0.0;
    double style = 0.0;
    double total() const { return content + style; }
};

// Content MSE between the last of out_features and z_hat plus the
// lambda-weighted moment terms over every layer. In class-conditional mode
// each layer's class terms are averaged over the classes present in both
// the (resized) source mask and the target. When grads is non-null it
// receives dL/d(out_features[l]).
StyleLoss transfer_loss(const std::vector<FeatureMap>& out_features, const FeatureMap& z_hat,
                        const ClassMoments& target, const std::vector<LabelMap>& masks, TransferMode mode,
                        double lambda, std::vector<FeatureMap>* grads = nullptr);

struct Stylized {
    FeatureMap image;
    FeatureMap z_hat;
    FeatureMap skip;
};

struct StyleSample {
    FeatureMap image;
    LabelMap mask;
    ClassMoments target;
};

struct TransferConfig {
    double lambda = 10.0;
    nn::AdamConfig adam{};
};

class TransferNet {
public:
    TransferNet(std::uint64_t encoder_seed, std::uint64_t decoder_seed, TransferConfig config = {},
                EncoderShape shape = {});

    // Masks of `mask` resized to each encoder layer's spatial dims.
    std::vector<LabelMap> layer_masks(const LabelMap& mask) const;

    Stylized stylize(const FeatureMap& image, const LabelMap& mask, const ClassMoments& target,
                     TransferMode mode) const;

    double style_loss(const FeatureMap& out_image, const FeatureMap& z_hat, const ClassMoments& target,
                      const LabelMap& src_mask, TransferMode mode, double lambda) const;

    // Loss of one sample and its gradient w.r.t. the decoder parameters
    // (accumulated into grad, scaled by weight).
    double loss_and_gradient(const StyleSample& sample, TransferMode mode, std::span<double> grad,
                             double weight = 1.0) const;

    // One Adam step on the batch-mean loss. Throws StepError on a
    // non-finite loss or gradient, leaving the parameters untouched.
    double decoder_step(std::span<const StyleSample> batch, TransferMode mode);

    const Encoder& encoder() const { return encoder_; }
    Decoder& decoder() { return decoder_; }
    const Decoder& decoder() const { return decoder_; }
    const TransferConfig& config() const { return config_; }
    void set_lambda(double lambda) { config_.lambda = lambda; }
    // Checkpoint restore only.
    void load_encoder(const std::vector<double>& values) { encoder_.load_values(values); }

private:
    Encoder encoder_;
    Decoder decoder_;
    TransferConfig config_;
    nn::Adam adam_;
    std::vector<double> grad_;
};

}  // namespace cace
