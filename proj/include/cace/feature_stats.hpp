#pragma once

#include <cstdint>
#include <vector>

#include "cace/tensor.hpp"

namespace cace {

inline constexpr double kStdEps = 1e-5;

struct ChannelMoments {
    std::vector<double> mean;
    std::vector<double> std;
};

// Class-wise (mean, std) of one feature map, plus its global moments.
// mean/std are (classes x channels) row-major; entries of absent classes
// are zero and must not be read.
struct LayerMoments {
    int classes = 0;
    int channels = 0;
    std::vector<double> mean;
    std::vector<double> std;
    std::vector<std::uint8_t> present;
    std::vector<double> global_mean;
    std::vector<double> global_std;

    LayerMoments() = default;
    LayerMoments(int classes, int channels);

    double& mean_at(int c, int k) { return mean[static_cast<std::size_t>(c) * channels + k]; }
    double mean_at(int c, int k) const { return mean[static_cast<std::size_t>(c) * channels + k]; }
    double& std_at(int c, int k) { return std[static_cast<std::size_t>(c) * channels + k]; }
    double std_at(int c, int k) const { return std[static_cast<std::size_t>(c) * channels + k]; }
    bool has(int c) const { return present[static_cast<std::size_t>(c)] != 0; }

    bool operator==(const LayerMoments&) const = default;
};

// Moments for every style layer of the encoder; the unit the style memory
// stores and serves.
struct ClassMoments {
    std::vector<LayerMoments> layers;

    bool operator==(const ClassMoments&) const = default;
};

// Channel-wise population mean and std over all positions.
ChannelMoments global_moments(const FeatureMap& z);

// Population moments of z restricted to each class region of mask. Classes
// without pixels are flagged absent. Global moments are filled as well.
LayerMoments class_moments(const FeatureMap& z, const LabelMap& mask);

// Nearest-neighbour resize with source index floor(i * H / H').
LabelMap resize_mask(const LabelMap& mask, int height, int width);

// Renormalise every channel of z to (target_mean, target_std).
FeatureMap adain(const FeatureMap& z, const std::vector<double>& target_mean,
                 const std::vector<double>& target_std, double eps = kStdEps);

// Renormalise each class region of z with that class's target moments.
// Classes present in mask but absent from target keep their own moments.
FeatureMap cc_adain(const FeatureMap& z, const LabelMap& mask, const LayerMoments& target,
                    double eps = kStdEps);

}  // namespace cace
