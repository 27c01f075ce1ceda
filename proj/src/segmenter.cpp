#include "cace/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>

namespace cace {

double ce_loss(const ProbMap& p, const LabelMap& y) {
    if (p.height() != y.height() || p.width() != y.width() || p.channels() != y.classes())
        throw Error("ce_loss: shape mismatch");
    const double norm = static_cast<double>(p.height()) * p.width() * p.channels();
    double sum = 0.0;
    for (int i = 0; i < p.pixels(); ++i) sum += std::log(std::max(p.pixel(i)[y.label(i)], kLogClamp));
    return -sum / norm;
}

LabelMap argmax_labels(const ProbMap& p) {
    LabelMap out(p.height(), p.width(), p.channels());
    for (int i = 0; i < p.pixels(); ++i) {
        auto v = p.pixel(i);
        // max_element returns the first maximum.
        out.set(i, static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin()));
    }
    return out;
}

IouResult miou(std::span<const LabelMap> preds, std::span<const LabelMap> gts) {
    if (preds.empty() || preds.size() != gts.size()) throw Error("miou: need equally many, non-empty predictions");
    const int classes = gts.front().classes();
    std::vector<long> tp(classes, 0), fp(classes, 0), fn(classes, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& pr = preds[i];
        const auto& gt = gts[i];
        if (pr.height() != gt.height() || pr.width() != gt.width() || pr.classes() != classes ||
            gt.classes() != classes)
            throw Error("miou: shape mismatch");
        for (int p = 0; p < gt.pixels(); ++p) {
            const int a = pr.label(p), b = gt.label(p);
            if (a == b) {
                ++tp[a];
            } else {
                ++fp[a];
                ++fn[b];
            }
        }
    }
    IouResult out;
    out.per_class.assign(classes, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < classes; ++c) {
        const long denom = tp[c] + fp[c] + fn[c];
        if (denom == 0) continue;
        out.per_class[c] = static_cast<double>(tp[c]) / static_cast<double>(denom);
        sum += out.per_class[c];
        ++counted;
    }
    out.mean = counted ? sum / counted : 0.0;
    return out;
}

Segmenter::Segmenter(std::uint64_t seed, SegmenterShape shape, nn::SgdConfig sgd) : shape_(shape) {
    const int w = shape.width;
    convs_.push_back(params_.add_conv(shape.image_channels, w, 3));
    convs_.push_back(params_.add_conv(w, w, 3));
    convs_.push_back(params_.add_conv(w, w, 3, 1, 2));
    convs_.push_back(params_.add_conv(w, w, 3, 1, 4));
    convs_.push_back(params_.add_conv(w, shape.classes, 1));
    Rng rng(seed);
    params_.init_he(rng, convs_);
    sgd_ = nn::Sgd(params_.size(), sgd);
    grad_.assign(params_.size(), 0.0);
}

ProbMap Segmenter::forward_traced(const FeatureMap& image, Trace& trace) const {
    if (image.channels() != shape_.image_channels) throw Error("segmenter: expected a 3-channel image");
    trace.inputs.clear();
    trace.inputs.push_back(image);
    const auto& p = params_.values();
    for (std::size_t l = 0; l + 1 < convs_.size(); ++l) {
        FeatureMap a = nn::conv_forward(convs_[l], p, trace.inputs.back());
        nn::relu_inplace(a);
        trace.inputs.push_back(std::move(a));
    }
    FeatureMap probs = nn::conv_forward(convs_.back(), p, trace.inputs.back());
    for (int i = 0; i < probs.pixels(); ++i) {
        auto v = probs.pixel(i);
        const double m = *std::max_element(v.begin(), v.end());
        double z = 0.0;
        for (auto& x : v) {
            x = std::exp(x - m);
            z += x;
        }
        for (auto& x : v) x /= z;
    }
    trace.probs = probs;
    return probs;
}

ProbMap Segmenter::forward(const FeatureMap& image) const {
    Trace trace;
    return forward_traced(image, trace);
}

std::vector<FeatureMap> Segmenter::hidden(const FeatureMap& image) const {
    Trace trace;
    forward_traced(image, trace);
    return {std::make_move_iterator(trace.inputs.begin() + 1), std::make_move_iterator(trace.inputs.end())};
}

double Segmenter::loss_and_gradient(const FeatureMap& image, const LabelMap& labels, std::span<double> grad,
                                    double weight) const {
    Trace trace;
    const ProbMap probs = forward_traced(image, trace);
    const double loss = ce_loss(probs, labels);

    // Softmax + CE: dL/dlogit = (p - y) / HWC, zero where the clamp is active.
    const double norm = static_cast<double>(probs.height()) * probs.width() * probs.channels();
    FeatureMap g = probs;
    for (int i = 0; i < g.pixels(); ++i) {
        auto v = g.pixel(i);
        const int y = labels.label(i);
        if (probs.pixel(i)[y] < kLogClamp) {
            std::fill(v.begin(), v.end(), 0.0);
            continue;
        }
        v[y] -= 1.0;
        for (auto& x : v) x *= weight / norm;
    }

    const auto& p = params_.values();
    for (std::size_t l = convs_.size(); l-- > 0;) {
        FeatureMap g_in;
        nn::conv_backward(convs_[l], p, trace.inputs[l], g, grad, l > 0 ? &g_in : nullptr);
        if (l == 0) break;
        nn::relu_backward_inplace(trace.inputs[l], g_in);
        g = std::move(g_in);
    }
    return loss;
}

double Segmenter::step(std::span<const LabeledImage> batch) {
    if (batch.empty()) throw StepError("segmenter step: empty batch");
    std::fill(grad_.begin(), grad_.end(), 0.0);
    const double weight = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (const auto& s : batch) loss += weight * loss_and_gradient(s.image, s.labels, grad_, weight);
    if (!std::isfinite(loss)) throw StepError("segmenter step: non-finite loss");
    if (!nn::all_finite(grad_)) throw StepError("segmenter step: non-finite gradient");
    sgd_.step(params_.values(), grad_);
    return loss;
}

}  // namespace cace
