#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cace/feature_stats.hpp"
#include "cace/rng.hpp"
#include "cace/transfer_net.hpp"

namespace cace {

// Extracted class-wise moments of one target domain, one sample per image.
struct DomainStyle {
    int domain_id = 1;
    std::vector<ClassMoments> samples;
};

// Diagonal Gaussian fit over the samples of one layer: per class and
// channel, population mean/variance of the stored means and of the stored
// stds. count[c] is the number of samples in which class c was present.
struct GaussianLayer {
    int classes = 0;
    int channels = 0;
    std::vector<double> mean_of_mean, var_of_mean, mean_of_std, var_of_std;  // (classes x channels)
    std::vector<long> count;
    // The same fit for the global (whole-image) moments.
    std::vector<double> global_mean_of_mean, global_var_of_mean, global_mean_of_std, global_var_of_std;

    bool has(int c) const { return count[static_cast<std::size_t>(c)] > 0; }
    std::size_t at(int c, int k) const { return static_cast<std::size_t>(c) * channels + k; }
};

struct GaussianStyle {
    int domain_id = 1;
    std::vector<GaussianLayer> layers;
};

enum class StorageMode { full, subsample, gaussian };
enum class DrawMode { sampled, gaussian };

struct StorageConfig {
    StorageMode mode = StorageMode::full;
    double fraction = 1.0;      // subsample only
    std::uint64_t seed = 0;     // subsample selection
};

using Labeler = std::function<LabelMap(const FeatureMap&)>;

// Encode each image, resize its label map to every encoder layer and
// collect the class moments.
DomainStyle extract_domain_style(int domain_id, std::span<const FeatureMap> images, const Labeler& labeler,
                                 const Encoder& encoder);
DomainStyle extract_domain_style(int domain_id, std::span<const FeatureMap> images, std::span<const LabelMap> labels,
                                 const Encoder& encoder);

// Keep ceil(p * N) uniformly chosen samples (original order preserved).
DomainStyle subsample(const DomainStyle& style, double p, std::uint64_t seed);

GaussianStyle fit_gaussian(const DomainStyle& style);

// The memory M: per domain, either the (possibly subsampled) samples or the
// fitted Gaussians. Grows only through store().
class StyleMemory {
public:
    StyleMemory() = default;
    explicit StyleMemory(StorageConfig config) : config_(config) {}

    // Store a freshly extracted domain according to the storage mode.
    void store(const DomainStyle& style);

    bool contains(int domain_id) const;
    std::vector<int> domains() const;
    std::size_t size() const { return sampled_.size() + gaussian_.size(); }
    const StorageConfig& config() const { return config_; }
    DrawMode natural_draw_mode() const {
        return config_.mode == StorageMode::gaussian ? DrawMode::gaussian : DrawMode::sampled;
    }

    const DomainStyle* samples(int domain_id) const;
    const GaussianStyle* gaussian(int domain_id) const;

    // Number of stored scalars (moments, presence flags and counts).
    std::size_t footprint() const;

    void save(std::ostream& out) const;
    static StyleMemory load(std::istream& in);
    void save(const std::string& path) const;
    static StyleMemory load(const std::string& path);

private:
    StorageConfig config_;
    std::map<int, DomainStyle> sampled_;
    std::map<int, GaussianStyle> gaussian_;
};

// Pick a domain uniformly from `domains`, then assemble target moments:
// sampled mode picks, per class independently, a stored sample containing
// that class (global moments from one more uniformly chosen sample);
// gaussian mode draws means and stds from the fitted Gaussians with stds
// clamped at eps.
ClassMoments draw_moments(const StyleMemory& memory, std::span<const int> domains, DrawMode mode, Rng& rng,
                          double eps = kStdEps);
ClassMoments draw_moments(const StyleMemory& memory, std::span<const int> domains, DrawMode mode,
                          std::uint64_t seed, double eps = kStdEps);

}  // namespace cace
