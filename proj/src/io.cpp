#include "cace/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "cace/binary_io.hpp"

namespace cace {

namespace fs = std::filesystem;

namespace {

constexpr char kCheckpointMagic[9] = "CACECKPT";
constexpr std::uint32_t kCheckpointVersion = 1;

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    return out;
}

std::ifstream open_in(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return in;
}

// Next whitespace-delimited header token, skipping '#' comments.
long header_int(std::istream& in, const char* what) {
    for (;;) {
        const int c = in.peek();
        if (c == '#') {
            std::string skip;
            std::getline(in, skip);
        } else if (c != EOF && std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    long v = -1;
    if (!(in >> v)) throw Error(std::string("malformed header: ") + what);
    return v;
}

std::string numbered(const char* prefix, std::size_t i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04zu.%s", prefix, i, ext);
    return buf;
}

void put_values(std::ostream& out, const std::vector<double>& v) {
    binio::put<std::uint64_t>(out, v.size());
    binio::put_array(out, v);
}

std::vector<double> get_values(std::istream& in) {
    return binio::get_array<double>(in, binio::get<std::uint64_t>(in));
}

}  // namespace

// --- PPM -------------------------------------------------------------------

void write_ppm(std::ostream& out, const FeatureMap& image) {
    if (image.channels() != 3) throw Error("write_ppm: expected 3 channels");
    out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
    std::string bytes(image.size(), '\0');
    for (std::size_t i = 0; i < image.size(); ++i)
        bytes[i] = static_cast<char>(std::lround(std::clamp(image.values()[i], 0.0, 1.0) * 255.0));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write_ppm: write failed");
}

void write_ppm(const fs::path& path, const FeatureMap& image) {
    auto out = open_out(path);
    write_ppm(out, image);
}

FeatureMap read_ppm(std::istream& in) {
    char magic[2] = {};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '6') throw Error("not a binary PPM (P6)");
    const long w = header_int(in, "width");
    const long h = header_int(in, "height");
    const long maxval = header_int(in, "maxval");
    if (w < 1 || h < 1 || w > 1 << 14 || h > 1 << 14) throw Error("PPM dimensions out of range");
    if (maxval < 1 || maxval > 255) throw Error("PPM maxval must be in 1..255");
    if (!std::isspace(in.get())) throw Error("malformed PPM header");
    FeatureMap image(static_cast<int>(h), static_cast<int>(w), 3);
    std::string bytes(image.size(), '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw Error("truncated PPM data");
    for (std::size_t i = 0; i < bytes.size(); ++i)
        image.values()[i] = static_cast<double>(static_cast<unsigned char>(bytes[i])) / static_cast<double>(maxval);
    return image;
}

FeatureMap read_ppm(const fs::path& path) {
    auto in = open_in(path);
    return read_ppm(in);
}

// --- Labels ----------------------------------------------------------------

void write_labels(std::ostream& out, const LabelMap& labels) {
    out << "CACELBL 1 " << labels.width() << ' ' << labels.height() << ' ' << labels.classes() << '\n';
    const auto& idx = labels.indices();
    out.write(reinterpret_cast<const char*>(idx.data()), static_cast<std::streamsize>(idx.size()));
    if (!out) throw Error("write_labels: write failed");
}

void write_labels(const fs::path& path, const LabelMap& labels) {
    auto out = open_out(path);
    write_labels(out, labels);
}

LabelMap read_labels(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error("empty label file");
    std::istringstream header(line);
    std::string magic;
    int version = 0, w = 0, h = 0, c = 0;
    if (!(header >> magic >> version >> w >> h >> c) || magic != "CACELBL") throw Error("not a label file");
    if (version != 1) throw Error("unsupported label file version " + std::to_string(version));
    if (w < 1 || h < 1 || w > 1 << 14 || h > 1 << 14) throw Error("label dimensions out of range");
    LabelMap labels(h, w, c);
    std::string bytes(static_cast<std::size_t>(w) * h, '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw Error("truncated label data");
    for (std::size_t p = 0; p < bytes.size(); ++p) {
        const int v = static_cast<unsigned char>(bytes[p]);
        if (v >= c) throw Error("label index out of range");
        labels.set(static_cast<int>(p), v);
    }
    return labels;
}

LabelMap read_labels(const fs::path& path) {
    auto in = open_in(path);
    return read_labels(in);
}

// --- Dataset directories ---------------------------------------------------

void export_dataset(const DomainSequence& data, const fs::path& dir) {
    auto write_split = [](const fs::path& split, const std::vector<LabeledImage>& items) {
        fs::create_directories(split);
        for (std::size_t i = 0; i < items.size(); ++i) {
            write_ppm(split / numbered("img", i, "ppm"), items[i].image);
            write_labels(split / numbered("lbl", i, "lbl"), items[i].labels);
        }
    };
    write_split(dir / "domain_0" / "train", data.source_train);
    write_split(dir / "domain_0" / "val", data.source_val);
    for (const auto& target : data.targets) {
        const fs::path root = dir / ("domain_" + std::to_string(target.id()));
        fs::create_directories(root / "train");
        for (std::size_t i = 0; i < target.train_images().size(); ++i)
            write_ppm(root / "train" / numbered("img", i, "ppm"), target.train_images()[i]);
        write_split(root / "val", target.validation());
    }
}

std::vector<DatasetSplit> import_validation(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error("dataset directory not found: " + dir.string());
    std::map<int, fs::path> domains;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (!entry.is_directory() || name.rfind("domain_", 0) != 0) continue;
        try {
            std::size_t used = 0;
            const int d = std::stoi(name.substr(7), &used);
            if (used == name.size() - 7 && d >= 0) domains[d] = entry.path() / "val";
        } catch (const std::exception&) {
        }
    }
    if (domains.empty()) throw Error("no domain_<d> directories in " + dir.string());
    std::vector<DatasetSplit> out;
    for (const auto& [d, val] : domains) {
        DatasetSplit split{d, {}};
        for (std::size_t i = 0;; ++i) {
            const fs::path img = val / numbered("img", i, "ppm");
            if (!fs::exists(img)) break;
            split.images.push_back({read_ppm(img), read_labels(val / numbered("lbl", i, "lbl"))});
            const auto& item = split.images.back();
            if (item.image.height() != item.labels.height() || item.image.width() != item.labels.width())
                throw Error("image/label shape mismatch in " + img.string());
        }
        if (split.images.empty()) throw Error("empty validation split in " + val.string());
        out.push_back(std::move(split));
    }
    return out;
}

// --- Checkpoints -----------------------------------------------------------

Checkpoint Checkpoint::capture(const TransferNet& transfer, const Segmenter& segmenter, const StyleMemory& memory) {
    Checkpoint c;
    c.encoder_shape = transfer.encoder().shape();
    c.segmenter_shape = segmenter.shape();
    c.lambda = transfer.config().lambda;
    c.encoder = transfer.encoder().params().values();
    c.decoder = transfer.decoder().params().values();
    c.segmenter = segmenter.params().values();
    c.memory = memory;
    return c;
}

TransferNet Checkpoint::make_transfer() const {
    TransferNet net(0, 0, TransferConfig{lambda, {}}, encoder_shape);
    if (decoder.size() != net.decoder().params().size()) throw Error("decoder checkpoint size mismatch");
    net.load_encoder(encoder);
    net.decoder().params().values() = decoder;
    return net;
}

Segmenter Checkpoint::make_segmenter() const {
    Segmenter seg(0, segmenter_shape);
    if (segmenter.size() != seg.params().size()) throw Error("segmenter checkpoint size mismatch");
    seg.params().values() = segmenter;
    return seg;
}

void Checkpoint::save(std::ostream& out) const {
    using namespace binio;
    put_magic(out, kCheckpointMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    for (int v : {encoder_shape.image_channels, encoder_shape.c1, encoder_shape.c2, encoder_shape.c3,
                  segmenter_shape.image_channels, segmenter_shape.width, segmenter_shape.classes})
        put<std::int32_t>(out, v);
    put<double>(out, lambda);
    put_values(out, encoder);
    put_values(out, decoder);
    put_values(out, segmenter);
    memory.save(out);
    if (!out) throw Error("checkpoint write failed");
}

void Checkpoint::save(const fs::path& path) const {
    auto out = open_out(path);
    save(out);
}

Checkpoint Checkpoint::load(std::istream& in) {
    using namespace binio;
    expect_magic(in, kCheckpointMagic, "checkpoint");
    const auto version = get<std::uint32_t>(in);
    if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    c.encoder_shape.image_channels = get<std::int32_t>(in);
    c.encoder_shape.c1 = get<std::int32_t>(in);
    c.encoder_shape.c2 = get<std::int32_t>(in);
    c.encoder_shape.c3 = get<std::int32_t>(in);
    c.segmenter_shape.image_channels = get<std::int32_t>(in);
    c.segmenter_shape.width = get<std::int32_t>(in);
    c.segmenter_shape.classes = get<std::int32_t>(in);
    c.lambda = get<double>(in);
    c.encoder = get_values(in);
    c.decoder = get_values(in);
    c.segmenter = get_values(in);
    c.memory = StyleMemory::load(in);
    return c;
}

Checkpoint Checkpoint::load(const fs::path& path) {
    auto in = open_in(path);
    return load(in);
}

}  // namespace cace
