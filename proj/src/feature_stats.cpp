#include "cace/feature_stats.hpp"

#include <algorithm>
#include <cmath>

namespace cace {

LayerMoments::LayerMoments(int classes, int channels)
    : classes(classes), channels(channels),
      mean(static_cast<std::size_t>(classes) * channels, 0.0),
      std(static_cast<std::size_t>(classes) * channels, 0.0),
      present(static_cast<std::size_t>(classes), 0),
      global_mean(static_cast<std::size_t>(channels), 0.0),
      global_std(static_cast<std::size_t>(channels), 0.0) {}

ChannelMoments global_moments(const FeatureMap& z) {
    const int k_count = z.channels();
    const double n = z.pixels();
    ChannelMoments out{std::vector<double>(k_count, 0.0), std::vector<double>(k_count, 0.0)};
    for (int p = 0; p < z.pixels(); ++p) {
        auto v = z.pixel(p);
        for (int k = 0; k < k_count; ++k) out.mean[k] += v[k];
    }
    for (auto& m : out.mean) m /= n;
    // Two-pass variance for accuracy.
    for (int p = 0; p < z.pixels(); ++p) {
        auto v = z.pixel(p);
        for (int k = 0; k < k_count; ++k) {
            const double d = v[k] - out.mean[k];
            out.std[k] += d * d;
        }
    }
    for (auto& s : out.std) s = std::sqrt(s / n);
    return out;
}

LayerMoments class_moments(const FeatureMap& z, const LabelMap& mask) {
    if (mask.height() != z.height() || mask.width() != z.width())
        throw Error("class_moments: mask and feature map spatial dims differ");
    const int classes = mask.classes();
    const int k_count = z.channels();
    LayerMoments out(classes, k_count);
    std::vector<long> counts(classes, 0);

    for (int p = 0; p < z.pixels(); ++p) {
        const int c = mask.label(p);
        ++counts[c];
        auto v = z.pixel(p);
        for (int k = 0; k < k_count; ++k) out.mean_at(c, k) += v[k];
    }
    for (int c = 0; c < classes; ++c) {
        out.present[c] = counts[c] > 0 ? 1 : 0;
        if (!counts[c]) continue;
        for (int k = 0; k < k_count; ++k) out.mean_at(c, k) /= static_cast<double>(counts[c]);
    }
    for (int p = 0; p < z.pixels(); ++p) {
        const int c = mask.label(p);
        auto v = z.pixel(p);
        for (int k = 0; k < k_count; ++k) {
            const double d = v[k] - out.mean_at(c, k);
            out.std_at(c, k) += d * d;
        }
    }
    for (int c = 0; c < classes; ++c) {
        if (!counts[c]) continue;
        for (int k = 0; k < k_count; ++k)
            out.std_at(c, k) = std::sqrt(out.std_at(c, k) / static_cast<double>(counts[c]));
    }

    auto global = global_moments(z);
    out.global_mean = std::move(global.mean);
    out.global_std = std::move(global.std);
    return out;
}

LabelMap resize_mask(const LabelMap& mask, int height, int width) {
    if (height < 1 || width < 1) throw Error("resize_mask: target dims must be positive");
    LabelMap out(height, width, mask.classes());
    for (int i = 0; i < height; ++i) {
        const int sy = static_cast<int>(static_cast<long>(i) * mask.height() / height);
        for (int j = 0; j < width; ++j) {
            const int sx = static_cast<int>(static_cast<long>(j) * mask.width() / width);
            out.set(i, j, mask.label(sy, sx));
        }
    }
    return out;
}

FeatureMap adain(const FeatureMap& z, const std::vector<double>& target_mean,
                 const std::vector<double>& target_std, double eps) {
    const int k_count = z.channels();
    if (static_cast<int>(target_mean.size()) != k_count || static_cast<int>(target_std.size()) != k_count)
        throw Error("adain: target moment length does not match channel count");
    if (!(eps > 0.0)) throw Error("adain: eps must be positive");

    const auto src = global_moments(z);
    std::vector<double> scale(k_count);
    for (int k = 0; k < k_count; ++k) scale[k] = target_std[k] / std::max(src.std[k], eps);

    FeatureMap out = z;
    for (int p = 0; p < z.pixels(); ++p) {
        auto in = z.pixel(p);
        auto o = out.pixel(p);
        for (int k = 0; k < k_count; ++k) o[k] = scale[k] * (in[k] - src.mean[k]) + target_mean[k];
    }
    return out;
}

FeatureMap cc_adain(const FeatureMap& z, const LabelMap& mask, const LayerMoments& target, double eps) {
    if (mask.height() != z.height() || mask.width() != z.width())
        throw Error("cc_adain: mask and feature map spatial dims differ");
    if (target.classes != mask.classes() || target.channels != z.channels())
        throw Error("cc_adain: target moments layout does not match");
    if (!(eps > 0.0)) throw Error("cc_adain: eps must be positive");

    const int classes = mask.classes();
    const int k_count = z.channels();
    const LayerMoments src = class_moments(z, mask);

    // Per class: out = scale * z + shift.
    std::vector<double> scale(static_cast<std::size_t>(classes) * k_count, 1.0);
    std::vector<double> shift(static_cast<std::size_t>(classes) * k_count, 0.0);
    for (int c = 0; c < classes; ++c) {
        if (!src.has(c)) continue;
        const LayerMoments& tgt = target.has(c) ? target : src;
        for (int k = 0; k < k_count; ++k) {
            const double s = tgt.std_at(c, k) / std::max(src.std_at(c, k), eps);
            scale[c * k_count + k] = s;
            shift[c * k_count + k] = tgt.mean_at(c, k) - s * src.mean_at(c, k);
        }
    }

    FeatureMap out(z.height(), z.width(), k_count);
    out.layer = z.layer;
    for (int p = 0; p < z.pixels(); ++p) {
        const int c = mask.label(p);
        auto in = z.pixel(p);
        auto o = out.pixel(p);
        const double* sc = &scale[static_cast<std::size_t>(c) * k_count];
        const double* sh = &shift[static_cast<std::size_t>(c) * k_count];
        for (int k = 0; k < k_count; ++k) o[k] = sc[k] * in[k] + sh[k];
    }
    return out;
}

}  // namespace cace
