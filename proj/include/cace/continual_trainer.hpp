#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cace/segmenter.hpp"
#include "cace/style_memory.hpp"
#include "cace/synth_domains.hpp"
#include "cace/transfer_net.hpp"

namespace cace {

enum class TransferKind { class_conditional, global, jitter_only, none };
enum class MomentLabels { pseudo, real };

const char* to_string(TransferKind kind);
const char* to_string(StorageMode mode);

struct SequenceConfig {
    SequenceDataConfig data{};
    int pretrain_steps = 2000;
    int decoder_initial_steps = 1500;  // I_0, spent when domain 1 arrives
    int decoder_steps = 500;           // I
    int segmenter_steps = 1000;        // J
    int batch_size = 2;

    TransferKind transfer = TransferKind::class_conditional;
    StorageConfig memory{};
    bool replay = true;
    MomentLabels moment_labels = MomentLabels::pseudo;
    bool pretrain_jitter = false;
    double jitter_strength = 0.5;

    double lambda = 10.0;
    double decoder_lr = 1e-3;
    double segmenter_lr = 0.05;
    double segmenter_momentum = 0.9;
    double weight_decay = 5e-4;

    EncoderShape encoder{};
    int segmenter_width = 12;
    std::uint64_t seed = 1;

    // Throws Error describing the first violated constraint.
    void validate() const;
    bool adapts() const { return transfer != TransferKind::none; }
    bool uses_style_transfer() const {
        return transfer == TransferKind::class_conditional || transfer == TransferKind::global;
    }
    bool effective_pretrain_jitter() const { return pretrain_jitter || transfer == TransferKind::jitter_only; }
};

struct RunReport {
    int domains = 0;
    int classes = 0;
    std::vector<IouResult> final_iou;  // domains 0..T with the final model
    double mean_miou = 0.0;
    // miou_after_stage[s][d]: mIoU on domain d after stage s (0 = pretraining, t = after domain t).
    std::vector<std::vector<double>> miou_after_stage;
    std::vector<double> pretrain_losses;
    std::vector<double> decoder_losses;
    std::vector<double> segmenter_losses;
    std::size_t memory_footprint = 0;
    double wall_seconds = 0.0;
    std::uint64_t encoder_checksum = 0;
    std::uint64_t decoder_checksum = 0;
    std::uint64_t segmenter_checksum = 0;
    bool complete = false;
    std::string error;

    // mIoU on domain k right after adapting to k minus the final mIoU on k.
    double forgetting(int k) const;
};

// Report CSV: header `domain,iou_0..iou_{C-1},miou`, one row per domain.
void write_report_csv(const RunReport& report, std::ostream& out);
std::string report_csv(const RunReport& report);

// Which images make up one segmenter batch; -1 marks an unstylised source image.
struct SegBatchPlan {
    std::vector<std::size_t> source_index;
    std::vector<int> style_domain;
};

class ContinualTrainer {
public:
    explicit ContinualTrainer(SequenceConfig config);

    const SequenceConfig& config() const { return config_; }
    const DomainSequence& data() const { return data_; }
    const StyleMemory& memory() const { return memory_; }
    const TransferNet& transfer() const { return transfer_; }
    TransferNet& transfer() { return transfer_; }
    const Segmenter& segmenter() const { return segmenter_; }
    Segmenter& segmenter() { return segmenter_; }
    int adapted_domains() const { return adapted_; }

    // Train the segmenter on labelled source batches (optionally colour
    // jittered). Returns per-step losses.
    std::vector<double> pretrain_source();
    // Reuse an already pretrained segmenter instead of calling pretrain_source().
    void set_pretrained(const Segmenter& segmenter);

    // Pseudo-label, extract and store domain t, fine-tune the decoder with
    // style replay, then fine-tune the segmenter on composed batches.
    void adapt_to_domain(int t);

    SegBatchPlan plan_seg_batch(int t, Rng& rng) const;
    std::vector<LabeledImage> compose_seg_batch(int t, Rng& rng, SegBatchPlan* plan = nullptr) const;
    std::vector<LabeledImage> compose_seg_batch(int t, std::uint64_t seed) const;

    IouResult evaluate(int domain) const;
    LabelMap predict(const FeatureMap& image) const { return segmenter_.pseudo_label(image); }

    const std::vector<double>& decoder_losses() const { return decoder_losses_; }
    const std::vector<double>& segmenter_losses() const { return segmenter_losses_; }

private:
    FeatureMap stylize_to(const LabeledImage& source, int domain, Rng& rng) const;
    void train_decoder(int t, int steps);
    void train_segmenter(int t, int steps);

    SequenceConfig config_;
    DomainSequence data_;
    TransferNet transfer_;
    Segmenter segmenter_;
    StyleMemory memory_;
    int adapted_ = 0;
    std::vector<double> decoder_losses_;
    std::vector<double> segmenter_losses_;
};

// Pretrain -> adapt to 1..T -> evaluate every domain with the final model.
// A failing stage yields a report with complete = false and the error text.
// `pretrained`, when given, replaces the pretraining stage.
RunReport run_sequence(const SequenceConfig& config, const Segmenter* pretrained = nullptr);
RunReport run_sequence(ContinualTrainer& trainer, const Segmenter* pretrained = nullptr);

}  // namespace cace
