#include "cace/style_memory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "cace/binary_io.hpp"

namespace cace {

namespace {

constexpr char kMemoryMagic[9] = "CACEMEM\0";
constexpr std::uint32_t kMemoryVersion = 1;

void population_stats(std::span<const double> values, double& mean, double& var) {
    mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
}

void check_layout(const ClassMoments& a, const ClassMoments& b) {
    if (a.layers.size() != b.layers.size()) throw Error("style samples disagree on layer count");
    for (std::size_t l = 0; l < a.layers.size(); ++l)
        if (a.layers[l].classes != b.layers[l].classes || a.layers[l].channels != b.layers[l].channels)
            throw Error("style samples disagree on layer layout");
}

}  // namespace

DomainStyle extract_domain_style(int domain_id, std::span<const FeatureMap> images, std::span<const LabelMap> labels,
                                 const Encoder& encoder) {
    if (images.empty()) throw Error("extract_domain_style: domain has no images");
    if (labels.size() != images.size()) throw Error("extract_domain_style: one label map per image required");
    if (domain_id < 1) throw Error("extract_domain_style: target domain ids start at 1");
    DomainStyle style;
    style.domain_id = domain_id;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto feats = encoder.encode(images[i]);
        ClassMoments m;
        for (const auto& f : feats)
            m.layers.push_back(class_moments(f, resize_mask(labels[i], f.height(), f.width())));
        style.samples.push_back(std::move(m));
    }
    return style;
}

DomainStyle extract_domain_style(int domain_id, std::span<const FeatureMap> images, const Labeler& labeler,
                                 const Encoder& encoder) {
    std::vector<LabelMap> labels;
    labels.reserve(images.size());
    for (const auto& image : images) labels.push_back(labeler(image));
    return extract_domain_style(domain_id, images, labels, encoder);
}

DomainStyle subsample(const DomainStyle& style, double p, std::uint64_t seed) {
    if (!(p > 0.0) || p > 1.0) throw Error("subsample: fraction must lie in (0, 1]");
    const std::size_t n = style.samples.size();
    const auto keep = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n) - 1e-9));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(derive_seed(seed, "subsample", static_cast<std::uint64_t>(style.domain_id)));
    // Partial Fisher-Yates; the first `keep` slots are the selection.
    for (std::size_t i = 0; i < keep; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());

    DomainStyle out;
    out.domain_id = style.domain_id;
    for (auto i : idx) out.samples.push_back(style.samples[i]);
    return out;
}

GaussianStyle fit_gaussian(const DomainStyle& style) {
    if (style.samples.empty()) throw Error("fit_gaussian: no samples");
    const auto& first = style.samples.front();
    for (const auto& s : style.samples) check_layout(first, s);

    GaussianStyle out;
    out.domain_id = style.domain_id;
    std::vector<double> mus, sds;
    for (std::size_t l = 0; l < first.layers.size(); ++l) {
        const int classes = first.layers[l].classes;
        const int channels = first.layers[l].channels;
        GaussianLayer g;
        g.classes = classes;
        g.channels = channels;
        const auto cells = static_cast<std::size_t>(classes) * channels;
        g.mean_of_mean.assign(cells, 0.0);
        g.var_of_mean.assign(cells, 0.0);
        g.mean_of_std.assign(cells, 0.0);
        g.var_of_std.assign(cells, 0.0);
        g.count.assign(static_cast<std::size_t>(classes), 0);
        for (int c = 0; c < classes; ++c) {
            for (int k = 0; k < channels; ++k) {
                mus.clear();
                sds.clear();
                for (const auto& s : style.samples) {
                    const auto& lm = s.layers[l];
                    if (!lm.has(c)) continue;
                    mus.push_back(lm.mean_at(c, k));
                    sds.push_back(lm.std_at(c, k));
                }
                g.count[c] = static_cast<long>(mus.size());
                if (mus.empty()) continue;
                population_stats(mus, g.mean_of_mean[g.at(c, k)], g.var_of_mean[g.at(c, k)]);
                population_stats(sds, g.mean_of_std[g.at(c, k)], g.var_of_std[g.at(c, k)]);
            }
        }
        g.global_mean_of_mean.assign(channels, 0.0);
        g.global_var_of_mean.assign(channels, 0.0);
        g.global_mean_of_std.assign(channels, 0.0);
        g.global_var_of_std.assign(channels, 0.0);
        for (int k = 0; k < channels; ++k) {
            mus.clear();
            sds.clear();
            for (const auto& s : style.samples) {
                mus.push_back(s.layers[l].global_mean[k]);
                sds.push_back(s.layers[l].global_std[k]);
            }
            population_stats(mus, g.global_mean_of_mean[k], g.global_var_of_mean[k]);
            population_stats(sds, g.global_mean_of_std[k], g.global_var_of_std[k]);
        }
        out.layers.push_back(std::move(g));
    }
    return out;
}

// --- StyleMemory -----------------------------------------------------------

void StyleMemory::store(const DomainStyle& style) {
    if (contains(style.domain_id)) throw Error("style memory already holds domain " + std::to_string(style.domain_id));
    if (style.samples.empty()) throw Error("style memory: refusing to store an empty domain");
    switch (config_.mode) {
    case StorageMode::full:
        sampled_.emplace(style.domain_id, style);
        break;
    case StorageMode::subsample:
        sampled_.emplace(style.domain_id, subsample(style, config_.fraction, config_.seed));
        break;
    case StorageMode::gaussian:
        gaussian_.emplace(style.domain_id, fit_gaussian(style));
        break;
    }
}

bool StyleMemory::contains(int domain_id) const {
    return sampled_.count(domain_id) != 0 || gaussian_.count(domain_id) != 0;
}

std::vector<int> StyleMemory::domains() const {
    std::vector<int> out;
    for (const auto& [id, _] : sampled_) out.push_back(id);
    for (const auto& [id, _] : gaussian_) out.push_back(id);
    std::sort(out.begin(), out.end());
    return out;
}

const DomainStyle* StyleMemory::samples(int domain_id) const {
    auto it = sampled_.find(domain_id);
    return it == sampled_.end() ? nullptr : &it->second;
}

const GaussianStyle* StyleMemory::gaussian(int domain_id) const {
    auto it = gaussian_.find(domain_id);
    return it == gaussian_.end() ? nullptr : &it->second;
}

std::size_t StyleMemory::footprint() const {
    std::size_t n = 0;
    for (const auto& [_, style] : sampled_)
        for (const auto& s : style.samples)
            for (const auto& l : s.layers)
                n += l.mean.size() + l.std.size() + l.present.size() + l.global_mean.size() + l.global_std.size();
    for (const auto& [_, g] : gaussian_)
        for (const auto& l : g.layers)
            n += l.mean_of_mean.size() + l.var_of_mean.size() + l.mean_of_std.size() + l.var_of_std.size() +
                 l.count.size() + l.global_mean_of_mean.size() + l.global_var_of_mean.size() +
                 l.global_mean_of_std.size() + l.global_var_of_std.size();
    return n;
}

void StyleMemory::save(std::ostream& out) const {
    using namespace binio;
    put_magic(out, kMemoryMagic);
    put<std::uint32_t>(out, kMemoryVersion);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(config_.mode));
    put<double>(out, config_.fraction);
    put<std::uint64_t>(out, config_.seed);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(size()));
    for (int id : domains()) {
        put<std::int32_t>(out, id);
        if (const auto* s = samples(id)) {
            put<std::uint8_t>(out, 0);
            const auto& first = s->samples.front();
            put<std::uint32_t>(out, static_cast<std::uint32_t>(first.layers.size()));
            for (const auto& l : first.layers) {
                put<std::uint32_t>(out, static_cast<std::uint32_t>(l.classes));
                put<std::uint32_t>(out, static_cast<std::uint32_t>(l.channels));
            }
            put<std::uint32_t>(out, static_cast<std::uint32_t>(s->samples.size()));
            for (const auto& m : s->samples) {
                for (const auto& l : m.layers) {
                    put_array(out, l.mean);
                    put_array(out, l.std);
                    put_array(out, l.present);
                    put_array(out, l.global_mean);
                    put_array(out, l.global_std);
                }
            }
        } else {
            const auto* g = gaussian(id);
            put<std::uint8_t>(out, 1);
            put<std::uint32_t>(out, static_cast<std::uint32_t>(g->layers.size()));
            for (const auto& l : g->layers) {
                put<std::uint32_t>(out, static_cast<std::uint32_t>(l.classes));
                put<std::uint32_t>(out, static_cast<std::uint32_t>(l.channels));
            }
            for (const auto& l : g->layers) {
                put_array(out, l.mean_of_mean);
                put_array(out, l.var_of_mean);
                put_array(out, l.mean_of_std);
                put_array(out, l.var_of_std);
                std::vector<std::int64_t> counts(l.count.begin(), l.count.end());
                put_array(out, counts);
                put_array(out, l.global_mean_of_mean);
                put_array(out, l.global_var_of_mean);
                put_array(out, l.global_mean_of_std);
                put_array(out, l.global_var_of_std);
            }
        }
    }
    if (!out) throw Error("style memory: write failed");
}

StyleMemory StyleMemory::load(std::istream& in) {
    using namespace binio;
    expect_magic(in, kMemoryMagic, "style memory");
    const auto version = get<std::uint32_t>(in);
    if (version != kMemoryVersion) throw Error("style memory: unsupported version " + std::to_string(version));
    StorageConfig config;
    const auto mode = get<std::uint8_t>(in);
    if (mode > 2) throw Error("style memory: bad storage mode");
    config.mode = static_cast<StorageMode>(mode);
    config.fraction = get<double>(in);
    config.seed = get<std::uint64_t>(in);
    StyleMemory memory(config);
    const auto count = get<std::uint32_t>(in);
    for (std::uint32_t d = 0; d < count; ++d) {
        const int id = get<std::int32_t>(in);
        const auto kind = get<std::uint8_t>(in);
        const auto layers = get<std::uint32_t>(in);
        if (layers > 64) throw Error("style memory: implausible layer count");
        std::vector<std::pair<int, int>> dims;
        for (std::uint32_t l = 0; l < layers; ++l) {
            const int c = static_cast<int>(get<std::uint32_t>(in));
            const int k = static_cast<int>(get<std::uint32_t>(in));
            dims.emplace_back(c, k);
        }
        if (kind == 0) {
            DomainStyle style;
            style.domain_id = id;
            const auto n = get<std::uint32_t>(in);
            for (std::uint32_t i = 0; i < n; ++i) {
                ClassMoments m;
                for (auto [c, k] : dims) {
                    LayerMoments lm(c, k);
                    const auto cells = static_cast<std::size_t>(c) * k;
                    lm.mean = get_array<double>(in, cells);
                    lm.std = get_array<double>(in, cells);
                    lm.present = get_array<std::uint8_t>(in, static_cast<std::size_t>(c));
                    lm.global_mean = get_array<double>(in, static_cast<std::size_t>(k));
                    lm.global_std = get_array<double>(in, static_cast<std::size_t>(k));
                    m.layers.push_back(std::move(lm));
                }
                style.samples.push_back(std::move(m));
            }
            memory.sampled_.emplace(id, std::move(style));
        } else if (kind == 1) {
            GaussianStyle g;
            g.domain_id = id;
            for (auto [c, k] : dims) {
                GaussianLayer gl;
                gl.classes = c;
                gl.channels = k;
                const auto cells = static_cast<std::size_t>(c) * k;
                gl.mean_of_mean = get_array<double>(in, cells);
                gl.var_of_mean = get_array<double>(in, cells);
                gl.mean_of_std = get_array<double>(in, cells);
                gl.var_of_std = get_array<double>(in, cells);
                const auto counts = get_array<std::int64_t>(in, static_cast<std::size_t>(c));
                gl.count.assign(counts.begin(), counts.end());
                gl.global_mean_of_mean = get_array<double>(in, static_cast<std::size_t>(k));
                gl.global_var_of_mean = get_array<double>(in, static_cast<std::size_t>(k));
                gl.global_mean_of_std = get_array<double>(in, static_cast<std::size_t>(k));
                gl.global_var_of_std = get_array<double>(in, static_cast<std::size_t>(k));
                g.layers.push_back(std::move(gl));
            }
            memory.gaussian_.emplace(id, std::move(g));
        } else {
            throw Error("style memory: bad domain record kind");
        }
    }
    return memory;
}

void StyleMemory::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    save(out);
}

StyleMemory StyleMemory::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    return load(in);
}

// --- Drawing ---------------------------------------------------------------

ClassMoments draw_moments(const StyleMemory& memory, std::span<const int> domains, DrawMode mode, Rng& rng,
                          double eps) {
    if (domains.empty()) throw Error("draw_moments: no domains requested");
    for (int d : domains)
        if (!memory.contains(d)) throw Error("draw_moments: domain " + std::to_string(d) + " is not stored");
    const int domain = domains[rng.below(domains.size())];

    ClassMoments out;
    if (mode == DrawMode::sampled) {
        const DomainStyle* style = memory.samples(domain);
        if (!style) throw Error("draw_moments: sampled mode needs stored samples");
        const auto& first = style->samples.front();
        for (const auto& l : first.layers) out.layers.emplace_back(l.classes, l.channels);
        const int classes = first.layers.front().classes;
        std::vector<std::size_t> candidates;
        for (int c = 0; c < classes; ++c) {
            candidates.clear();
            for (std::size_t i = 0; i < style->samples.size(); ++i)
                if (style->samples[i].layers.front().has(c)) candidates.push_back(i);
            if (candidates.empty()) continue;
            const auto& pick = style->samples[candidates[rng.below(candidates.size())]];
            for (std::size_t l = 0; l < out.layers.size(); ++l) {
                const auto& src = pick.layers[l];
                if (!src.has(c)) continue;
                auto& dst = out.layers[l];
                dst.present[c] = 1;
                for (int k = 0; k < dst.channels; ++k) {
                    dst.mean_at(c, k) = src.mean_at(c, k);
                    dst.std_at(c, k) = src.std_at(c, k);
                }
            }
        }
        const auto& global = style->samples[rng.below(style->samples.size())];
        for (std::size_t l = 0; l < out.layers.size(); ++l) {
            out.layers[l].global_mean = global.layers[l].global_mean;
            out.layers[l].global_std = global.layers[l].global_std;
        }
        return out;
    }

    const GaussianStyle* g = memory.gaussian(domain);
    if (!g) throw Error("draw_moments: gaussian mode needs a fitted Gaussian");
    for (const auto& gl : g->layers) {
        LayerMoments lm(gl.classes, gl.channels);
        for (int c = 0; c < gl.classes; ++c) {
            if (!gl.has(c)) continue;
            lm.present[c] = 1;
            for (int k = 0; k < gl.channels; ++k) {
                const auto i = gl.at(c, k);
                lm.mean_at(c, k) = rng.normal(gl.mean_of_mean[i], std::sqrt(gl.var_of_mean[i]));
                lm.std_at(c, k) = std::max(rng.normal(gl.mean_of_std[i], std::sqrt(gl.var_of_std[i])), eps);
            }
        }
        for (int k = 0; k < gl.channels; ++k) {
            lm.global_mean[k] = rng.normal(gl.global_mean_of_mean[k], std::sqrt(gl.global_var_of_mean[k]));
            lm.global_std[k] =
                std::max(rng.normal(gl.global_mean_of_std[k], std::sqrt(gl.global_var_of_std[k])), eps);
        }
        out.layers.push_back(std::move(lm));
    }
    return out;
}

ClassMoments draw_moments(const StyleMemory& memory, std::span<const int> domains, DrawMode mode,
                          std::uint64_t seed, double eps) {
    Rng rng(seed);
    return draw_moments(memory, domains, mode, rng, eps);
}

}  // namespace cace
