#include "cace/continual_trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

namespace cace {

const char* to_string(TransferKind kind) {
    switch (kind) {
    case TransferKind::class_conditional: return "class_conditional";
    case TransferKind::global: return "global";
    case TransferKind::jitter_only: return "jitter_only";
    case TransferKind::none: return "none";
    }
    return "?";
}

const char* to_string(StorageMode mode) {
    switch (mode) {
    case StorageMode::full: return "full";
    case StorageMode::subsample: return "subsample";
    case StorageMode::gaussian: return "gaussian";
    }
    return "?";
}

void SequenceConfig::validate() const {
    if (data.domains < 1) throw Error("config: need at least one target domain");
    if (pretrain_steps < 1 || decoder_initial_steps < 1 || decoder_steps < 1 || segmenter_steps < 1)
        throw Error("config: iteration counts must be >= 1");
    if (batch_size < 2 || batch_size % 2 != 0) throw Error("config: batch size must be even and >= 2");
    if (data.train_per_domain < 1 || data.val_per_domain < 1) throw Error("config: splits must be non-empty");
    if (data.scene.classes < 3) throw Error("config: need at least 3 classes");
    if (data.scene.height < 8 || data.scene.width < 8 || data.scene.height % 4 || data.scene.width % 4)
        throw Error("config: image sides must be multiples of 4 and >= 8");
    if (memory.mode == StorageMode::subsample && (!(memory.fraction > 0.0) || memory.fraction > 1.0))
        throw Error("config: subsample fraction must lie in (0, 1]");
    if (jitter_strength < 0.0 || jitter_strength > 1.0) throw Error("config: jitter strength must lie in [0, 1]");
    if (!(lambda >= 0.0)) throw Error("config: lambda must be >= 0");
    if (!(decoder_lr > 0.0) || !(segmenter_lr >= 0.0)) throw Error("config: learning rates must be positive");
    if (segmenter_width < 1) throw Error("config: segmenter width must be >= 1");
}

double RunReport::forgetting(int k) const {
    if (k < 0 || k >= static_cast<int>(miou_after_stage.size()) || k >= static_cast<int>(final_iou.size()))
        throw Error("forgetting: domain out of range");
    return miou_after_stage[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)] -
           final_iou[static_cast<std::size_t>(k)].mean;
}

void write_report_csv(const RunReport& report, std::ostream& out) {
    out << "domain";
    for (int c = 0; c < report.classes; ++c) out << ",iou_" << c;
    out << ",miou\n";
    char buf[64];
    for (std::size_t d = 0; d < report.final_iou.size(); ++d) {
        out << d;
        for (double v : report.final_iou[d].per_class) {
            if (std::isnan(v)) {
                out << ",nan";
            } else {
                std::snprintf(buf, sizeof buf, ",%.6f", v);
                out << buf;
            }
        }
        std::snprintf(buf, sizeof buf, ",%.6f\n", report.final_iou[d].mean);
        out << buf;
    }
}

std::string report_csv(const RunReport& report) {
    std::ostringstream ss;
    write_report_csv(report, ss);
    return ss.str();
}

// --- ContinualTrainer ------------------------------------------------------

namespace {

SequenceConfig checked(SequenceConfig config) {
    config.validate();
    config.data.seed = config.seed;
    return config;
}

TransferNet make_transfer(const SequenceConfig& c) {
    TransferConfig tc;
    tc.lambda = c.lambda;
    tc.adam.lr = c.decoder_lr;
    return TransferNet(derive_seed(c.seed, "encoder-init"), derive_seed(c.seed, "decoder-init"), tc, c.encoder);
}

Segmenter make_segmenter(const SequenceConfig& c) {
    SegmenterShape shape;
    shape.width = c.segmenter_width;
    shape.classes = c.data.scene.classes;
    nn::SgdConfig sgd;
    sgd.lr = c.segmenter_lr;
    sgd.momentum = c.segmenter_momentum;
    sgd.weight_decay = c.weight_decay;
    return Segmenter(derive_seed(c.seed, "segmenter-init"), shape, sgd);
}

StorageConfig memory_config(const SequenceConfig& c) {
    StorageConfig m = c.memory;
    m.seed = derive_seed(c.seed, "memory");
    return m;
}

std::vector<int> previous_domains(int t) {
    std::vector<int> out(static_cast<std::size_t>(std::max(t - 1, 0)));
    std::iota(out.begin(), out.end(), 1);
    return out;
}

}  // namespace

ContinualTrainer::ContinualTrainer(SequenceConfig config)
    : config_(checked(std::move(config))),
      data_(build_sequence(config_.data)),
      transfer_(make_transfer(config_)),
      segmenter_(make_segmenter(config_)),
      memory_(memory_config(config_)) {}

std::vector<double> ContinualTrainer::pretrain_source() {
    Rng rng(derive_seed(config_.seed, "pretrain"));
    const bool jitter = config_.effective_pretrain_jitter();
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(config_.pretrain_steps));
    std::vector<LabeledImage> batch;
    for (int step = 0; step < config_.pretrain_steps; ++step) {
        batch.clear();
        for (int b = 0; b < config_.batch_size; ++b) {
            const auto& s = data_.source_train[rng.below(data_.source_train.size())];
            const auto jseed = rng.next();
            batch.push_back({jitter ? color_jitter(s.image, config_.jitter_strength, jseed) : s.image, s.labels});
        }
        try {
            losses.push_back(segmenter_.step(batch));
        } catch (const StepError& e) {
            throw StepError(std::string("pretraining step ") + std::to_string(step) + ": " + e.what());
        }
    }
    return losses;
}

void ContinualTrainer::set_pretrained(const Segmenter& segmenter) {
    if (segmenter.params().size() != segmenter_.params().size())
        throw Error("set_pretrained: segmenter layout mismatch");
    segmenter_ = segmenter;
}

FeatureMap ContinualTrainer::stylize_to(const LabeledImage& source, int domain, Rng& rng) const {
    const int domains[] = {domain};
    const ClassMoments target = draw_moments(memory_, domains, memory_.natural_draw_mode(), rng);
    const auto mode =
        config_.transfer == TransferKind::global ? TransferMode::global : TransferMode::class_conditional;
    return transfer_.stylize(source.image, source.labels, target, mode).image;
}

SegBatchPlan ContinualTrainer::plan_seg_batch(int t, Rng& rng) const {
    SegBatchPlan plan;
    const int half = config_.batch_size / 2;
    for (int b = 0; b < config_.batch_size; ++b) {
        plan.source_index.push_back(rng.below(data_.source_train.size()));
        if (b < half || !config_.replay) {
            plan.style_domain.push_back(t);
        } else if (t == 1 || rng.coin()) {
            plan.style_domain.push_back(-1);
        } else {
            plan.style_domain.push_back(1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(t - 1))));
        }
    }
    return plan;
}

std::vector<LabeledImage> ContinualTrainer::compose_seg_batch(int t, Rng& rng, SegBatchPlan* plan_out) const {
    const SegBatchPlan plan = plan_seg_batch(t, rng);
    std::vector<LabeledImage> batch;
    for (std::size_t b = 0; b < plan.source_index.size(); ++b) {
        const auto& src = data_.source_train[plan.source_index[b]];
        if (plan.style_domain[b] < 0) {
            batch.push_back(src);
        } else {
            batch.push_back({stylize_to(src, plan.style_domain[b], rng), src.labels});
        }
    }
    if (plan_out) *plan_out = plan;
    return batch;
}

std::vector<LabeledImage> ContinualTrainer::compose_seg_batch(int t, std::uint64_t seed) const {
    Rng rng(seed);
    return compose_seg_batch(t, rng);
}

void ContinualTrainer::train_decoder(int t, int steps) {
    Rng rng(derive_seed(config_.seed, "decoder", static_cast<std::uint64_t>(t)));
    const auto mode =
        config_.transfer == TransferKind::global ? TransferMode::global : TransferMode::class_conditional;
    const std::vector<int> current{t};
    const std::vector<int> previous = t > 1 ? previous_domains(t) : current;
    const int half = config_.batch_size / 2;
    std::vector<StyleSample> batch;
    for (int step = 0; step < steps; ++step) {
        batch.clear();
        for (int b = 0; b < config_.batch_size; ++b) {
            const auto& src = data_.source_train[rng.below(data_.source_train.size())];
            const auto& domains = b < half ? current : previous;
            batch.push_back({src.image, src.labels, draw_moments(memory_, domains, memory_.natural_draw_mode(), rng)});
        }
        try {
            decoder_losses_.push_back(transfer_.decoder_step(batch, mode));
        } catch (const StepError& e) {
            throw StepError("domain " + std::to_string(t) + ", decoder step " + std::to_string(step) + ": " +
                            e.what());
        }
    }
}

void ContinualTrainer::train_segmenter(int t, int steps) {
    Rng rng(derive_seed(config_.seed, "segmenter", static_cast<std::uint64_t>(t)));
    std::vector<LabeledImage> batch;
    for (int step = 0; step < steps; ++step) {
        if (config_.transfer == TransferKind::jitter_only) {
            batch.clear();
            for (int b = 0; b < config_.batch_size; ++b) {
                const auto& s = data_.source_train[rng.below(data_.source_train.size())];
                batch.push_back({color_jitter(s.image, config_.jitter_strength, rng.next()), s.labels});
            }
        } else {
            batch = compose_seg_batch(t, rng);
        }
        try {
            segmenter_losses_.push_back(segmenter_.step(batch));
        } catch (const StepError& e) {
            throw StepError("domain " + std::to_string(t) + ", segmenter step " + std::to_string(step) + ": " +
                            e.what());
        }
    }
}

void ContinualTrainer::adapt_to_domain(int t) {
    if (t != adapted_ + 1 || t > data_.domains())
        throw Error("adapt_to_domain: domains must arrive in order 1..T");
    if (!config_.adapts()) {
        adapted_ = t;
        return;
    }
    if (config_.uses_style_transfer()) {
        const auto& target = data_.targets[static_cast<std::size_t>(t - 1)];
        std::vector<LabelMap> labels;
        if (config_.moment_labels == MomentLabels::real) {
            labels = target.oracle_train_labels();
        } else {
            for (const auto& image : target.train_images()) labels.push_back(segmenter_.pseudo_label(image));
        }
        memory_.store(extract_domain_style(t, target.train_images(), labels, transfer_.encoder()));
        train_decoder(t, t == 1 ? config_.decoder_initial_steps : config_.decoder_steps);
    }
    train_segmenter(t, config_.segmenter_steps);
    adapted_ = t;
}

IouResult ContinualTrainer::evaluate(int domain) const {
    const auto& split = data_.validation(domain);
    std::vector<LabelMap> preds, gts;
    for (const auto& s : split) {
        preds.push_back(segmenter_.pseudo_label(s.image));
        gts.push_back(s.labels);
    }
    return miou(preds, gts);
}

RunReport run_sequence(ContinualTrainer& trainer, const Segmenter* pretrained) {
    const auto started = std::chrono::steady_clock::now();
    const int T = trainer.data().domains();
    RunReport report;
    report.domains = T;
    report.classes = trainer.config().data.scene.classes;
    auto stage_eval = [&] {
        std::vector<double> row;
        for (int d = 0; d <= T; ++d) row.push_back(trainer.evaluate(d).mean);
        report.miou_after_stage.push_back(std::move(row));
    };
    try {
        if (pretrained) {
            trainer.set_pretrained(*pretrained);
        } else {
            report.pretrain_losses = trainer.pretrain_source();
        }
        stage_eval();
        for (int t = 1; t <= T; ++t) {
            trainer.adapt_to_domain(t);
            stage_eval();
        }
        for (int d = 0; d <= T; ++d) report.final_iou.push_back(trainer.evaluate(d));
        double sum = 0.0;
        for (const auto& r : report.final_iou) sum += r.mean;
        report.mean_miou = sum / static_cast<double>(report.final_iou.size());
        report.complete = true;
    } catch (const std::exception& e) {
        report.error = e.what();
    }
    report.decoder_losses = trainer.decoder_losses();
    report.segmenter_losses = trainer.segmenter_losses();
    report.memory_footprint = trainer.memory().footprint();
    report.encoder_checksum = trainer.transfer().encoder().checksum();
    report.decoder_checksum = trainer.transfer().decoder().params().checksum();
    report.segmenter_checksum = trainer.segmenter().checksum();
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

RunReport run_sequence(const SequenceConfig& config, const Segmenter* pretrained) {
    ContinualTrainer trainer(config);
    return run_sequence(trainer, pretrained);
}

}  // namespace cace
