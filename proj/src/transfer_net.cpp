#include "cace/transfer_net.hpp"

#include <cmath>
#include <string>
#include <tuple>
#include <utility>

namespace cace {

namespace {

// weight * channel-mean of squared (mean, std) gaps between the region of
// class `cls` in f (all of f when mask is null) and the target. Adds the
// gradient w.r.t. f into grad when non-null.
double moment_term(const FeatureMap& f, const LabelMap* mask, int cls, std::span<const double> tgt_mean,
                   std::span<const double> tgt_std, double weight, FeatureMap* grad) {
    const int k_count = f.channels();
    std::vector<double> mean(k_count, 0.0), var(k_count, 0.0);
    long n = 0;
    for (int p = 0; p < f.pixels(); ++p) {
        if (mask && mask->label(p) != cls) continue;
        ++n;
        auto v = f.pixel(p);
        for (int k = 0; k < k_count; ++k) mean[k] += v[k];
    }
    if (n == 0) return 0.0;
    for (auto& m : mean) m /= static_cast<double>(n);
    for (int p = 0; p < f.pixels(); ++p) {
        if (mask && mask->label(p) != cls) continue;
        auto v = f.pixel(p);
        for (int k = 0; k < k_count; ++k) {
            const double d = v[k] - mean[k];
            var[k] += d * d;
        }
    }
    std::vector<double> sd(k_count), dmean(k_count), dsd(k_count);
    double loss = 0.0;
    for (int k = 0; k < k_count; ++k) {
        sd[k] = std::sqrt(var[k] / static_cast<double>(n));
        const double gm = mean[k] - tgt_mean[k];
        const double gs = sd[k] - tgt_std[k];
        loss += (gm * gm + gs * gs) / k_count;
        dmean[k] = weight * 2.0 * gm / k_count;
        dsd[k] = weight * 2.0 * gs / k_count;
    }
    if (grad) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (int p = 0; p < f.pixels(); ++p) {
            if (mask && mask->label(p) != cls) continue;
            auto v = f.pixel(p);
            auto g = grad->pixel(p);
            for (int k = 0; k < k_count; ++k) {
                g[k] += dmean[k] * inv_n;
                // d sd / dF_p = (F_p - mean) / (n sd); zero subgradient at sd = 0.
                if (sd[k] > 0.0) g[k] += dsd[k] * (v[k] - mean[k]) * inv_n / sd[k];
            }
        }
    }
    return weight * loss;
}

std::span<const double> class_row(const std::vector<double>& v, int cls, int channels) {
    return {v.data() + static_cast<std::size_t>(cls) * channels, static_cast<std::size_t>(channels)};
}

// (bottleneck, skip) after the two renormalisation layers.
std::pair<FeatureMap, FeatureMap> renormalize(const std::vector<FeatureMap>& feats, const LabelMap& mask,
                                              const ClassMoments& target, TransferMode mode) {
    const FeatureMap& bottleneck = feats[2];
    const FeatureMap& skip = feats[0];
    if (mode == TransferMode::global)
        return {adain(bottleneck, target.layers[2].global_mean, target.layers[2].global_std),
                adain(skip, target.layers[0].global_mean, target.layers[0].global_std)};
    return {cc_adain(bottleneck, resize_mask(mask, bottleneck.height(), bottleneck.width()), target.layers[2]),
            cc_adain(skip, resize_mask(mask, skip.height(), skip.width()), target.layers[0])};
}

}  // namespace

// --- Encoder ---------------------------------------------------------------

Encoder::Encoder(std::uint64_t seed, EncoderShape shape) : shape_(shape) {
    convs_.push_back(params_.add_conv(shape.image_channels, shape.c1, 3, 1));
    convs_.push_back(params_.add_conv(shape.c1, shape.c2, 3, 2));
    convs_.push_back(params_.add_conv(shape.c2, shape.c3, 3, 2));
    Rng rng(seed);
    params_.init_he(rng, convs_);
}

std::vector<FeatureMap> Encoder::encode(const FeatureMap& image) const {
    if (image.channels() != shape_.image_channels) throw Error("encode: expected a 3-channel image");
    std::vector<FeatureMap> acts;
    acts.reserve(kLayers);
    const FeatureMap* input = &image;
    for (int l = 0; l < kLayers; ++l) {
        FeatureMap a = nn::conv_forward(convs_[l], params_.values(), *input);
        nn::relu_inplace(a);
        a.layer = l + 1;
        acts.push_back(std::move(a));
        input = &acts.back();
    }
    return acts;
}

FeatureMap Encoder::backward(const FeatureMap& image, const std::vector<FeatureMap>& activations,
                             std::vector<FeatureMap> grads) const {
    FeatureMap carry;
    for (int l = kLayers - 1; l >= 0; --l) {
        FeatureMap g = grads[l].empty() ? FeatureMap(activations[l].height(), activations[l].width(),
                                                     activations[l].channels())
                                        : std::move(grads[l]);
        if (!carry.empty()) {
            auto& gv = g.values();
            const auto& cv = carry.values();
            for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += cv[i];
        }
        nn::relu_backward_inplace(activations[l], g);
        const FeatureMap& input = l == 0 ? image : activations[l - 1];
        FeatureMap grad_in;
        nn::conv_backward(convs_[l], params_.values(), input, g, {}, &grad_in);
        carry = std::move(grad_in);
    }
    return carry;
}

void Encoder::load_values(const std::vector<double>& values) {
    if (values.size() != params_.size()) throw Error("encoder checkpoint size mismatch");
    params_.values() = values;
}

// --- Decoder ---------------------------------------------------------------

Decoder::Decoder(std::uint64_t seed, EncoderShape shape) : shape_(shape) {
    convs_.push_back(params_.add_conv(shape.c3, shape.c2, 3));
    convs_.push_back(params_.add_conv(shape.c2, shape.c1, 3));
    convs_.push_back(params_.add_conv(2 * shape.c1, shape.c1, 3));
    convs_.push_back(params_.add_conv(shape.c1, shape.image_channels, 3));
    Rng rng(seed);
    params_.init_he(rng, convs_);
}

FeatureMap Decoder::forward(const FeatureMap& bottleneck, const FeatureMap& skip, Trace* trace) const {
    Trace local;
    Trace& t = trace ? *trace : local;
    const auto& p = params_.values();
    t.up1 = nn::upsample2(bottleneck);
    t.h1 = nn::conv_forward(convs_[0], p, t.up1);
    nn::relu_inplace(t.h1);
    t.up2 = nn::upsample2(t.h1);
    t.h2 = nn::conv_forward(convs_[1], p, t.up2);
    nn::relu_inplace(t.h2);
    t.merged = nn::concat_channels(t.h2, skip);
    t.h3 = nn::conv_forward(convs_[2], p, t.merged);
    nn::relu_inplace(t.h3);
    return nn::conv_forward(convs_[3], p, t.h3);
}

void Decoder::backward(const Trace& t, const FeatureMap& grad_out, std::span<double> grad) const {
    const auto& p = params_.values();
    FeatureMap g_h3;
    nn::conv_backward(convs_[3], p, t.h3, grad_out, grad, &g_h3);
    nn::relu_backward_inplace(t.h3, g_h3);
    FeatureMap g_merged;
    nn::conv_backward(convs_[2], p, t.merged, g_h3, grad, &g_merged);
    FeatureMap g_h2, g_skip;
    nn::split_channels(g_merged, t.h2.channels(), g_h2, g_skip);
    nn::relu_backward_inplace(t.h2, g_h2);
    FeatureMap g_up2;
    nn::conv_backward(convs_[1], p, t.up2, g_h2, grad, &g_up2);
    FeatureMap g_h1 = nn::upsample2_backward(g_up2);
    nn::relu_backward_inplace(t.h1, g_h1);
    nn::conv_backward(convs_[0], p, t.up1, g_h1, grad, nullptr);
}

// --- Losses ----------------------------------------------------------------

StyleLoss transfer_loss(const std::vector<FeatureMap>& out_features, const FeatureMap& z_hat,
                        const ClassMoments& target, const std::vector<LabelMap>& masks, TransferMode mode,
                        double lambda, std::vector<FeatureMap>* grads) {
    const std::size_t layers = out_features.size();
    if (layers == 0 || target.layers.size() != layers || masks.size() != layers)
        throw Error("transfer_loss: layer count mismatch");
    const FeatureMap& last = out_features.back();
    if (!last.same_shape(z_hat)) throw Error("transfer_loss: bottleneck shape mismatch");

    if (grads) {
        grads->clear();
        for (const auto& f : out_features) grads->emplace_back(f.height(), f.width(), f.channels());
    }

    StyleLoss loss;
    const double n_content = static_cast<double>(last.size());
    const auto& a = last.values();
    const auto& b = z_hat.values();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        loss.content += d * d / n_content;
        if (grads) grads->back().values()[i] += 2.0 * d / n_content;
    }

    for (std::size_t l = 0; l < layers; ++l) {
        const FeatureMap& f = out_features[l];
        const LayerMoments& tgt = target.layers[l];
        FeatureMap* g = grads ? &(*grads)[l] : nullptr;
        if (mode == TransferMode::global) {
            loss.style += moment_term(f, nullptr, 0, tgt.global_mean, tgt.global_std, lambda, g);
            continue;
        }
        const LabelMap& mask = masks[l];
        const auto counts = mask.class_counts();
        std::vector<int> shared;
        for (int c = 0; c < mask.classes(); ++c)
            if (counts[c] > 0 && tgt.has(c)) shared.push_back(c);
        if (shared.empty()) continue;
        const double weight = lambda / static_cast<double>(shared.size());
        for (int c : shared)
            loss.style += moment_term(f, &mask, c, class_row(tgt.mean, c, tgt.channels),
                                      class_row(tgt.std, c, tgt.channels), weight, g);
    }
    return loss;
}

// --- TransferNet -----------------------------------------------------------

TransferNet::TransferNet(std::uint64_t encoder_seed, std::uint64_t decoder_seed, TransferConfig config,
                         EncoderShape shape)
    : encoder_(encoder_seed, shape), decoder_(decoder_seed, shape), config_(config),
      adam_(decoder_.params().size(), config.adam), grad_(decoder_.params().size(), 0.0) {}

std::vector<LabelMap> TransferNet::layer_masks(const LabelMap& mask) const {
    std::vector<LabelMap> out;
    int h = mask.height(), w = mask.width();
    for (int l = 0; l < Encoder::kLayers; ++l) {
        out.push_back(resize_mask(mask, h, w));
        h = (h + 1) / 2;
        w = (w + 1) / 2;
    }
    return out;
}

Stylized TransferNet::stylize(const FeatureMap& image, const LabelMap& mask, const ClassMoments& target,
                              TransferMode mode) const {
    if (target.layers.size() != static_cast<std::size_t>(Encoder::kLayers))
        throw Error("stylize: target moments must cover every encoder layer");
    Stylized out;
    std::tie(out.z_hat, out.skip) = renormalize(encoder_.encode(image), mask, target, mode);
    out.image = decoder_.forward(out.z_hat, out.skip);
    return out;
}

double TransferNet::style_loss(const FeatureMap& out_image, const FeatureMap& z_hat, const ClassMoments& target,
                               const LabelMap& src_mask, TransferMode mode, double lambda) const {
    const auto feats = encoder_.encode(out_image);
    return transfer_loss(feats, z_hat, target, layer_masks(src_mask), mode, lambda).total();
}

double TransferNet::loss_and_gradient(const StyleSample& sample, TransferMode mode, std::span<double> grad,
                                      double weight) const {
    const auto [z_hat, skip] = renormalize(encoder_.encode(sample.image), sample.mask, sample.target, mode);

    Decoder::Trace trace;
    const FeatureMap out = decoder_.forward(z_hat, skip, &trace);
    const auto out_feats = encoder_.encode(out);
    std::vector<FeatureMap> grads;
    const StyleLoss loss =
        transfer_loss(out_feats, z_hat, sample.target, layer_masks(sample.mask), mode, config_.lambda, &grads);

    for (auto& g : grads)
        for (auto& v : g.values()) v *= weight;
    const FeatureMap grad_out = encoder_.backward(out, out_feats, std::move(grads));
    decoder_.backward(trace, grad_out, grad);
    return loss.total();
}

double TransferNet::decoder_step(std::span<const StyleSample> batch, TransferMode mode) {
    if (batch.empty()) throw StepError("decoder_step: empty batch");
    std::fill(grad_.begin(), grad_.end(), 0.0);
    const double weight = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (const auto& sample : batch) loss += weight * loss_and_gradient(sample, mode, grad_, weight);
    if (!std::isfinite(loss)) throw StepError("decoder_step: non-finite loss");
    if (!nn::all_finite(grad_)) throw StepError("decoder_step: non-finite gradient");
    adam_.step(decoder_.params().values(), grad_);
    return loss;
}

}  // namespace cace
