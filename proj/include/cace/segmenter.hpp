#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cace/nn.hpp"
#include "cace/tensor.hpp"
#include "cace/transfer_net.hpp"

namespace cace {

// Softmax probabilities (H, W, C); every pixel sums to one.
using ProbMap = FeatureMap;

struct LabeledImage {
    FeatureMap image;
    LabelMap labels;
};

struct SegmenterShape {
    int image_channels = 3;
    int width = 12;
    int classes = 5;
};

inline constexpr double kLogClamp = 1e-12;

// -(1 / HWC) * sum y log p, with p clamped to >= 1e-12 before the log.
double ce_loss(const ProbMap& p, const LabelMap& y);

// Per-pixel argmax, ties to the lowest class index.
LabelMap argmax_labels(const ProbMap& p);

struct IouResult {
    std::vector<double> per_class;  // NaN where the class is in neither prediction nor ground truth
    double mean = 0.0;
};

// Per-class TP / (TP + FP + FN) accumulated over the whole list.
IouResult miou(std::span<const LabelMap> preds, std::span<const LabelMap> gts);

// conv3x3+ReLU x2, dilated conv3x3+ReLU (d=2, d=4), then a 1x1 conv to
// class logits and a softmax. Spatial dims are preserved.
class Segmenter {
public:
    Segmenter(std::uint64_t seed, SegmenterShape shape = {}, nn::SgdConfig sgd = {});

    ProbMap forward(const FeatureMap& image) const;
    LabelMap pseudo_label(const FeatureMap& image) const { return argmax_labels(forward(image)); }
    // Post-ReLU hidden maps of the four conv stages.
    std::vector<FeatureMap> hidden(const FeatureMap& image) const;

    // ce_loss of one image; gradient (scaled by weight) accumulated into grad.
    double loss_and_gradient(const FeatureMap& image, const LabelMap& labels, std::span<double> grad,
                             double weight = 1.0) const;

    // One SGD step on the batch-mean loss. Throws StepError on non-finite
    // loss or gradient without touching the parameters.
    double step(std::span<const LabeledImage> batch);

    const SegmenterShape& shape() const { return shape_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    const nn::Sgd& optimizer() const { return sgd_; }
    std::uint64_t checksum() const { return params_.checksum(); }

private:
    struct Trace {
        std::vector<FeatureMap> inputs;  // input of each conv
        FeatureMap probs;
    };
    ProbMap forward_traced(const FeatureMap& image, Trace& trace) const;

    SegmenterShape shape_;
    nn::ParamStore params_;
    std::vector<nn::Conv2d> convs_;
    nn::Sgd sgd_;
    std::vector<double> grad_;
};

}  // namespace cace
