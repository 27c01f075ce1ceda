#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cace/segmenter.hpp"
#include "cace/style_memory.hpp"
#include "cace/synth_domains.hpp"
#include "cace/transfer_net.hpp"

namespace cace {

// Binary PPM (P6, maxval 255). Values are clamped to [0, 1] and rounded on
// write; reads return k / maxval.
void write_ppm(std::ostream& out, const FeatureMap& image);
void write_ppm(const std::filesystem::path& path, const FeatureMap& image);
FeatureMap read_ppm(std::istream& in);
FeatureMap read_ppm(const std::filesystem::path& path);

// Label file: ASCII header line "CACELBL 1 <W> <H> <C>\n" followed by W*H
// class-index bytes, row-major.
void write_labels(std::ostream& out, const LabelMap& labels);
void write_labels(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_labels(std::istream& in);
LabelMap read_labels(const std::filesystem::path& path);

// Dataset directory: domain_<d>/{train,val}/img_<NNNN>.ppm with matching
// lbl_<NNNN>.lbl. Target-domain training images are written without labels.
void export_dataset(const DomainSequence& data, const std::filesystem::path& dir);

struct DatasetSplit {
    int domain = 0;
    std::vector<LabeledImage> images;
};

// Every domain_<d>/val directory in ascending domain order.
std::vector<DatasetSplit> import_validation(const std::filesystem::path& dir);

// Everything needed to stylize and segment after a run.
struct Checkpoint {
    EncoderShape encoder_shape{};
    SegmenterShape segmenter_shape{};
    double lambda = 10.0;
    std::vector<double> encoder;
    std::vector<double> decoder;
    std::vector<double> segmenter;
    StyleMemory memory;

    static Checkpoint capture(const TransferNet& transfer, const Segmenter& segmenter, const StyleMemory& memory);
    TransferNet make_transfer() const;
    Segmenter make_segmenter() const;

    void save(std::ostream& out) const;
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(std::istream& in);
    static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace cace
