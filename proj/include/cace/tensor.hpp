#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cace {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Height x width x channels, row-major with channels innermost.
// Used for images (3 channels) and for encoder/decoder activations.
class FeatureMap {
public:
    FeatureMap() = default;
    FeatureMap(int height, int width, int channels, double fill = 0.0)
        : height_(height), width_(width), channels_(channels),
          data_(static_cast<std::size_t>(height) * width * channels, fill) {
        if (height < 1 || width < 1 || channels < 1)
            throw Error("FeatureMap dimensions must be positive");
    }

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    int pixels() const { return height_ * width_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(int y, int x, int k) { return data_[index(y, x, k)]; }
    double at(int y, int x, int k) const { return data_[index(y, x, k)]; }

    // Channel vector of pixel p (p = y * width + x).
    std::span<double> pixel(int p) {
        return {data_.data() + static_cast<std::size_t>(p) * channels_, static_cast<std::size_t>(channels_)};
    }
    std::span<const double> pixel(int p) const {
        return {data_.data() + static_cast<std::size_t>(p) * channels_, static_cast<std::size_t>(channels_)};
    }

    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const FeatureMap& other) const {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    bool operator==(const FeatureMap& other) const = default;

    // Encoder depth the map was taken from; 0 for images.
    int layer = 0;

private:
    std::size_t index(int y, int x, int k) const {
        assert(y >= 0 && y < height_ && x >= 0 && x < width_ && k >= 0 && k < channels_);
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + k;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

// One-hot segmentation mask stored as a class index per pixel. The one-hot
// view (at(y, x, c) in {0,1}, exactly one 1 per pixel) holds by construction.
class LabelMap {
public:
    LabelMap() = default;
    LabelMap(int height, int width, int classes, std::uint8_t fill = 0)
        : height_(height), width_(width), classes_(classes),
          index_(static_cast<std::size_t>(height) * width, fill) {
        if (height < 1 || width < 1)
            throw Error("LabelMap dimensions must be positive");
        if (classes < 2 || classes > 255)
            throw Error("LabelMap needs between 2 and 255 classes");
        if (fill >= classes)
            throw Error("LabelMap fill class out of range");
    }

    int height() const { return height_; }
    int width() const { return width_; }
    int classes() const { return classes_; }
    int pixels() const { return height_ * width_; }

    int label(int y, int x) const { return index_[static_cast<std::size_t>(y) * width_ + x]; }
    int label(int p) const { return index_[static_cast<std::size_t>(p)]; }
    void set(int y, int x, int c) { set(y * width_ + x, c); }
    void set(int p, int c) {
        if (c < 0 || c >= classes_)
            throw Error("class index out of range");
        index_[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(c);
    }

    // One-hot entry y_{hwc}.
    int at(int y, int x, int c) const { return label(y, x) == c ? 1 : 0; }

    std::vector<long> class_counts() const {
        std::vector<long> counts(static_cast<std::size_t>(classes_), 0);
        for (auto v : index_) ++counts[v];
        return counts;
    }

    const std::vector<std::uint8_t>& indices() const { return index_; }

    bool operator==(const LabelMap& other) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    int classes_ = 0;
    std::vector<std::uint8_t> index_;
};

}  // namespace cace
