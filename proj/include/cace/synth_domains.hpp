#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cace/segmenter.hpp"
#include "cace/tensor.hpp"

namespace cace {

struct SceneSpec {
    int height = 32;
    int width = 32;
    int classes = 5;
    int min_shapes = 1;       // per foreground class
    int max_shapes = 2;
    int min_half_extent = 3;  // pixels
    int max_half_extent = 7;
    int min_class_pixels = 4;
    int max_retries = 200;
    double texture = 0.08;    // per-pixel uniform texture amplitude
};

// Affine colour transform applied to one class's pixels.
struct ClassTransform {
    std::array<double, 9> gain{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major 3x3
    std::array<double, 3> bias{0, 0, 0};
    double noise = 0.0;  // std of additive Gaussian pixel noise

    double mean_gain() const { return (gain[0] + gain[4] + gain[8]) / 3.0; }
};

struct DomainSpec {
    int id = 0;
    std::string name = "source";
    std::vector<ClassTransform> classes;
    std::array<double, 3> tint{0, 0, 0};

    static DomainSpec identity(int classes);
    // A pair of classes whose transforms brighten and darken respectively.
    bool has_adversarial_pair() const;
};

struct Scene {
    FeatureMap image;
    LabelMap labels;
};

// Base colour per class for the source rendering.
std::array<double, 3> class_base_color(int cls);

// Layered rectangles/ellipses per foreground class over a background class.
// Every class is guaranteed to be present; throws after max_retries.
Scene generate_scene(const SceneSpec& spec, std::uint64_t seed);

// Per pixel: gain_c * x + bias_c + tint + noise_c * N(0, 1). Not clamped.
FeatureMap apply_domain_style(const FeatureMap& base, const LabelMap& labels, const DomainSpec& spec,
                              std::uint64_t seed);

// Clamp to [0, 1] and round to multiples of 1/255 (lossless through PPM).
FeatureMap quantize8(const FeatureMap& image);

// Random global brightness, contrast, saturation and hue perturbation,
// clamped to [0, 1]. strength 0 returns the input unchanged.
FeatureMap color_jitter(const FeatureMap& image, double strength, std::uint64_t seed);

// Default sequence loosely modelled on fog, night and rain conditions.
// Domain 1 carries the adversarial pair (class 1 gain 1.5, class 2 gain 0.6).
std::vector<DomainSpec> default_domain_specs(int domains, int classes);

struct SequenceDataConfig {
    SceneSpec scene{};
    int domains = 3;
    int train_per_domain = 64;
    int val_per_domain = 32;
    std::uint64_t seed = 1;
    std::vector<DomainSpec> specs;  // targets 1..T; defaults when empty
    bool require_adversarial_pair = true;
};

class TargetDomain {
public:
    TargetDomain(int id, std::vector<FeatureMap> train_images, std::vector<LabelMap> train_labels,
                 std::vector<LabeledImage> validation)
        : id_(id), train_images_(std::move(train_images)), train_labels_(std::move(train_labels)),
          validation_(std::move(validation)) {}

    int id() const { return id_; }
    const std::vector<FeatureMap>& train_images() const { return train_images_; }
    // Evaluation split, labelled.
    const std::vector<LabeledImage>& validation() const { return validation_; }
    // Ground truth of the training split; only the real-label ablation reads it.
    const std::vector<LabelMap>& oracle_train_labels() const { return train_labels_; }

private:
    int id_;
    std::vector<FeatureMap> train_images_;
    std::vector<LabelMap> train_labels_;
    std::vector<LabeledImage> validation_;
};

struct DomainSequence {
    std::vector<LabeledImage> source_train;
    std::vector<LabeledImage> source_val;
    std::vector<TargetDomain> targets;  // targets[t - 1] is domain t
    std::vector<DomainSpec> specs;      // specs[0] is the source identity

    int domains() const { return static_cast<int>(targets.size()); }
    // Validation split of domain d (0 = source).
    const std::vector<LabeledImage>& validation(int d) const {
        return d == 0 ? source_val : targets.at(static_cast<std::size_t>(d - 1)).validation();
    }
};

DomainSequence build_sequence(const SequenceDataConfig& config);

}  // namespace cace
