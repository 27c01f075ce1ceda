#include "cace/synth_domains.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cace/rng.hpp"

namespace cace {

namespace {

ClassTransform scaled(double gain, std::array<double, 3> bias = {0, 0, 0}, double noise = 0.0) {
    ClassTransform t;
    t.gain = {gain, 0, 0, 0, gain, 0, 0, 0, gain};
    t.bias = bias;
    t.noise = noise;
    return t;
}

// Blend towards per-pixel grey by `amount` (0 = unchanged, 1 = grey), then scale.
ClassTransform desaturate(double amount, double gain, double noise) {
    ClassTransform t;
    const double keep = 1.0 - amount;
    const double mix = amount / 3.0;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) t.gain[r * 3 + c] = gain * ((r == c ? keep : 0.0) + mix);
    t.noise = noise;
    return t;
}

double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

}  // namespace

DomainSpec DomainSpec::identity(int classes) {
    DomainSpec spec;
    spec.classes.assign(static_cast<std::size_t>(classes), ClassTransform{});
    return spec;
}

bool DomainSpec::has_adversarial_pair() const {
    bool brighter = false, darker = false;
    for (const auto& t : classes) {
        brighter = brighter || t.mean_gain() > 1.0;
        darker = darker || t.mean_gain() < 1.0;
    }
    return brighter && darker;
}

std::array<double, 3> class_base_color(int cls) {
    static constexpr std::array<std::array<double, 3>, 8> palette{{
        {0.50, 0.50, 0.50},  // background
        {0.80, 0.30, 0.25},
        {0.30, 0.70, 0.30},
        {0.25, 0.35, 0.80},
        {0.85, 0.80, 0.30},
        {0.60, 0.30, 0.70},
        {0.30, 0.75, 0.75},
        {0.20, 0.20, 0.20},
    }};
    return palette[static_cast<std::size_t>(cls) % palette.size()];
}

Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
    if (spec.classes < 2 || spec.height < 4 || spec.width < 4) throw Error("generate_scene: invalid scene spec");
    for (int attempt = 0; attempt < spec.max_retries; ++attempt) {
        Rng rng(derive_seed(seed, "scene", static_cast<std::uint64_t>(attempt)));
        LabelMap labels(spec.height, spec.width, spec.classes, 0);

        std::vector<int> order;
        for (int c = 1; c < spec.classes; ++c) order.push_back(c);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        for (int c : order) {
            const int shapes = spec.min_shapes + static_cast<int>(rng.below(spec.max_shapes - spec.min_shapes + 1));
            for (int s = 0; s < shapes; ++s) {
                const bool ellipse = rng.coin();
                const int span_h = spec.max_half_extent - spec.min_half_extent + 1;
                const int ry = spec.min_half_extent + static_cast<int>(rng.below(span_h));
                const int rx = spec.min_half_extent + static_cast<int>(rng.below(span_h));
                const int cy = static_cast<int>(rng.below(spec.height));
                const int cx = static_cast<int>(rng.below(spec.width));
                for (int y = std::max(0, cy - ry); y <= std::min(spec.height - 1, cy + ry); ++y) {
                    for (int x = std::max(0, cx - rx); x <= std::min(spec.width - 1, cx + rx); ++x) {
                        if (ellipse) {
                            const double dy = static_cast<double>(y - cy) / ry;
                            const double dx = static_cast<double>(x - cx) / rx;
                            if (dy * dy + dx * dx > 1.0) continue;
                        }
                        labels.set(y, x, c);
                    }
                }
            }
        }

        const auto counts = labels.class_counts();
        if (std::any_of(counts.begin(), counts.end(), [&](long n) { return n < spec.min_class_pixels; })) continue;

        FeatureMap image(spec.height, spec.width, 3);
        for (int p = 0; p < labels.pixels(); ++p) {
            const auto base = class_base_color(labels.label(p));
            auto px = image.pixel(p);
            for (int k = 0; k < 3; ++k) px[k] = base[k] + spec.texture * rng.uniform(-1.0, 1.0);
        }
        return {std::move(image), std::move(labels)};
    }
    throw Error("generate_scene: could not place every class within the retry budget");
}

FeatureMap apply_domain_style(const FeatureMap& base, const LabelMap& labels, const DomainSpec& spec,
                              std::uint64_t seed) {
    if (base.height() != labels.height() || base.width() != labels.width() || base.channels() != 3)
        throw Error("apply_domain_style: image and labels do not match");
    if (static_cast<int>(spec.classes.size()) != labels.classes())
        throw Error("apply_domain_style: domain spec class count mismatch");
    Rng rng(derive_seed(seed, "style-noise"));
    FeatureMap out(base.height(), base.width(), 3);
    for (int p = 0; p < base.pixels(); ++p) {
        const auto& t = spec.classes[static_cast<std::size_t>(labels.label(p))];
        auto in = base.pixel(p);
        auto o = out.pixel(p);
        for (int r = 0; r < 3; ++r) {
            double v = t.bias[r] + spec.tint[r];
            for (int c = 0; c < 3; ++c) v += t.gain[r * 3 + c] * in[c];
            if (t.noise > 0.0) v += t.noise * rng.normal();
            o[r] = v;
        }
    }
    return out;
}

FeatureMap quantize8(const FeatureMap& image) {
    FeatureMap out = image;
    for (auto& v : out.values()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    return out;
}

FeatureMap color_jitter(const FeatureMap& image, double strength, std::uint64_t seed) {
    if (strength < 0.0 || strength > 1.0) throw Error("color_jitter: strength must lie in [0, 1]");
    if (strength == 0.0) return image;
    Rng rng(derive_seed(seed, "jitter"));
    const double brightness = 1.0 + strength * rng.uniform(-0.5, 0.5);
    const double contrast = 1.0 + strength * rng.uniform(-0.5, 0.5);
    const double saturation = 1.0 + strength * rng.uniform(-0.5, 0.5);
    const double hue = strength * rng.uniform(-0.1, 0.1) * 2.0 * std::numbers::pi;

    FeatureMap out = image;
    for (auto& v : out.values()) v = std::clamp(v * brightness, 0.0, 1.0);

    double mean_luma = 0.0;
    for (int p = 0; p < out.pixels(); ++p) {
        auto v = out.pixel(p);
        mean_luma += luminance(v[0], v[1], v[2]);
    }
    mean_luma /= out.pixels();

    // Hue: rotate the chroma plane of YIQ.
    const double ch = std::cos(hue), sh = std::sin(hue);
    for (int p = 0; p < out.pixels(); ++p) {
        auto v = out.pixel(p);
        for (int k = 0; k < 3; ++k) v[k] = std::clamp((v[k] - mean_luma) * contrast + mean_luma, 0.0, 1.0);
        const double g = luminance(v[0], v[1], v[2]);
        for (int k = 0; k < 3; ++k) v[k] = std::clamp((v[k] - g) * saturation + g, 0.0, 1.0);

        const double y = luminance(v[0], v[1], v[2]);
        const double i = 0.596 * v[0] - 0.274 * v[1] - 0.322 * v[2];
        const double q = 0.211 * v[0] - 0.523 * v[1] + 0.312 * v[2];
        const double i2 = ch * i - sh * q;
        const double q2 = sh * i + ch * q;
        v[0] = std::clamp(y + 0.956 * i2 + 0.621 * q2, 0.0, 1.0);
        v[1] = std::clamp(y - 0.272 * i2 - 0.647 * q2, 0.0, 1.0);
        v[2] = std::clamp(y - 1.106 * i2 + 1.703 * q2, 0.0, 1.0);
    }
    return out;
}

std::vector<DomainSpec> default_domain_specs(int domains, int classes) {
    if (classes < 3) throw Error("default_domain_specs: need at least 3 classes");
    std::vector<DomainSpec> specs;
    for (int d = 1; d <= domains; ++d) {
        DomainSpec s = DomainSpec::identity(classes);
        s.id = d;
        switch ((d - 1) % 3) {
        case 0:  // fog: low contrast, white shift; class 1 brightens while class 2 darkens
            s.name = "fog";
            for (auto& t : s.classes) t = scaled(0.7, {0, 0, 0}, 0.01);
            s.classes[1] = scaled(1.5, {0, 0, 0}, 0.01);
            s.classes[2] = scaled(0.6, {0, 0, 0}, 0.01);
            s.tint = {0.22, 0.22, 0.25};
            break;
        case 1:  // night: strong darkening, one class keeps its brightness
            s.name = "night";
            for (auto& t : s.classes) t = scaled(0.35, {0, 0, 0}, 0.02);
            s.classes[classes - 1] = scaled(1.0, {0, 0, 0}, 0.02);
            s.classes[3 % classes] = scaled(0.2, {0, 0, 0}, 0.02);
            s.tint = {0.0, 0.02, 0.08};
            break;
        default:  // rain: desaturated, noisy, wet background darkens, class 2 brightens
            s.name = "rain";
            for (auto& t : s.classes) t = desaturate(0.6, 0.9, 0.04);
            s.classes[0] = desaturate(0.6, 0.6, 0.04);
            s.classes[2] = desaturate(0.6, 1.3, 0.04);
            break;
        }
        specs.push_back(std::move(s));
    }
    return specs;
}

DomainSequence build_sequence(const SequenceDataConfig& config) {
    if (config.domains < 1) throw Error("build_sequence: need at least one target domain");
    if (config.train_per_domain < 1 || config.val_per_domain < 1) throw Error("build_sequence: empty split");
    const int classes = config.scene.classes;

    DomainSequence seq;
    seq.specs.push_back(DomainSpec::identity(classes));
    auto targets = config.specs.empty() ? default_domain_specs(config.domains, classes) : config.specs;
    if (static_cast<int>(targets.size()) != config.domains)
        throw Error("build_sequence: number of domain specs does not match the domain count");
    for (int d = 1; d <= config.domains; ++d) {
        auto& s = targets[static_cast<std::size_t>(d - 1)];
        s.id = d;
        if (static_cast<int>(s.classes.size()) != classes) throw Error("build_sequence: domain spec class count mismatch");
    }
    if (config.require_adversarial_pair &&
        std::none_of(targets.begin(), targets.end(), [](const DomainSpec& s) { return s.has_adversarial_pair(); }))
        throw Error("build_sequence: no domain has an adversarial class pair");
    seq.specs.insert(seq.specs.end(), targets.begin(), targets.end());

    // Split index: 0 train, 1 val. Each (domain, split, index) gets its own scene.
    auto render = [&](int domain, int split, int index) {
        const auto key = static_cast<std::uint64_t>(domain) * 2 + static_cast<std::uint64_t>(split);
        Scene scene = generate_scene(config.scene, derive_seed(config.seed, "scene", key, static_cast<std::uint64_t>(index)));
        FeatureMap styled = domain == 0 ? scene.image
                                        : apply_domain_style(scene.image, scene.labels, seq.specs[domain],
                                                             derive_seed(config.seed, "style", key, static_cast<std::uint64_t>(index)));
        return LabeledImage{quantize8(styled), std::move(scene.labels)};
    };

    for (int i = 0; i < config.train_per_domain; ++i) seq.source_train.push_back(render(0, 0, i));
    for (int i = 0; i < config.val_per_domain; ++i) seq.source_val.push_back(render(0, 1, i));
    for (int d = 1; d <= config.domains; ++d) {
        std::vector<FeatureMap> images;
        std::vector<LabelMap> labels;
        std::vector<LabeledImage> val;
        for (int i = 0; i < config.train_per_domain; ++i) {
            auto s = render(d, 0, i);
            images.push_back(std::move(s.image));
            labels.push_back(std::move(s.labels));
        }
        for (int i = 0; i < config.val_per_domain; ++i) val.push_back(render(d, 1, i));
        seq.targets.emplace_back(d, std::move(images), std::move(labels), std::move(val));
    }
    return seq;
}

}  // namespace cace
