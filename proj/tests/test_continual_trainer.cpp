#include <cmath>
#include <sstream>

#include "cace/continual_trainer.hpp"
#include "doctest.h"

using namespace cace;

namespace {

SequenceConfig tiny(std::uint64_t seed = 5) {
    SequenceConfig c;
    c.seed = seed;
    c.data.domains = 2;
    c.data.train_per_domain = 4;
    c.data.val_per_domain = 2;
    c.pretrain_steps = 6;
    c.decoder_initial_steps = 4;
    c.decoder_steps = 2;
    c.segmenter_steps = 4;
    c.batch_size = 4;
    return c;
}

}  // namespace

TEST_CASE("config validation rejects bad values") {
    CHECK_NOTHROW(tiny().validate());
    auto bad = [](auto mutate) {
        SequenceConfig c = tiny();
        mutate(c);
        CHECK_THROWS_AS(c.validate(), Error);
    };
    bad([](SequenceConfig& c) { c.batch_size = 3; });
    bad([](SequenceConfig& c) { c.batch_size = 0; });
    bad([](SequenceConfig& c) { c.segmenter_steps = 0; });
    bad([](SequenceConfig& c) { c.data.domains = 0; });
    bad([](SequenceConfig& c) { c.memory.mode = StorageMode::subsample; c.memory.fraction = 0.0; });
    bad([](SequenceConfig& c) { c.memory.mode = StorageMode::subsample; c.memory.fraction = 1.5; });
    bad([](SequenceConfig& c) { c.lambda = -1.0; });
    bad([](SequenceConfig& c) { c.jitter_strength = 2.0; });
    bad([](SequenceConfig& c) { c.data.scene.height = 10; });
    CHECK_THROWS_AS(ContinualTrainer([] { auto c = tiny(); c.batch_size = 1; return c; }()), Error);
}

TEST_CASE("segmenter batch plan") {
    SequenceConfig c = tiny();
    c.batch_size = 6;
    c.data.domains = 3;
    ContinualTrainer tr(c);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const auto one = tr.plan_seg_batch(1, rng);
        REQUIRE(one.style_domain.size() == 6);
        for (int b = 0; b < 3; ++b) CHECK(one.style_domain[b] == 1);
        for (int b = 3; b < 6; ++b) CHECK(one.style_domain[b] == -1);
        const auto three = tr.plan_seg_batch(3, rng);
        for (int b = 0; b < 3; ++b) CHECK(three.style_domain[b] == 3);
        for (int b = 3; b < 6; ++b) {
            const int d = three.style_domain[b];
            CHECK((d == -1 || d == 1 || d == 2));
        }
        for (auto i : three.source_index) CHECK(i < tr.data().source_train.size());
    }
    // Replay half covers the unstylised source and every earlier domain.
    Rng rng(1);
    int counts[3] = {0, 0, 0};
    for (int i = 0; i < 400; ++i)
        for (int b = 3; b < 6; ++b) {
            const int d = tr.plan_seg_batch(3, rng).style_domain[b];
            ++counts[d < 0 ? 0 : d];
        }
    CHECK(counts[0] > 0);
    CHECK(counts[1] > 0);
    CHECK(counts[2] > 0);

    c.replay = false;
    ContinualTrainer nr(c);
    Rng r2(2);
    for (int d : nr.plan_seg_batch(2, r2).style_domain) CHECK(d == 2);
}

TEST_CASE("composed batch keeps labels and leaves replayed source images untouched") {
    ContinualTrainer tr(tiny());
    tr.pretrain_source();
    tr.adapt_to_domain(1);
    Rng rng(3);
    SegBatchPlan plan;
    const auto batch = tr.compose_seg_batch(1, rng, &plan);
    REQUIRE(batch.size() == 4);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& src = tr.data().source_train[plan.source_index[b]];
        CHECK(batch[b].labels == src.labels);
        if (plan.style_domain[b] < 0)
            CHECK(batch[b].image == src.image);
        else
            CHECK_FALSE(batch[b].image == src.image);
    }
    CHECK(tr.compose_seg_batch(1, 9)[0].image == tr.compose_seg_batch(1, 9)[0].image);
}

TEST_CASE("domains must arrive in order") {
    ContinualTrainer tr(tiny());
    CHECK_THROWS_AS(tr.adapt_to_domain(2), Error);
    tr.adapt_to_domain(1);
    CHECK(tr.memory().contains(1));
    CHECK_FALSE(tr.memory().contains(2));
    CHECK_THROWS_AS(tr.adapt_to_domain(1), Error);
    tr.adapt_to_domain(2);
    CHECK_THROWS_AS(tr.adapt_to_domain(3), Error);
    CHECK(tr.memory().size() == 2);
}

TEST_CASE("run report shape, determinism and forgetting") {
    const RunReport a = run_sequence(tiny());
    REQUIRE(a.complete);
    CHECK(a.final_iou.size() == 3);
    CHECK(a.miou_after_stage.size() == 3);
    for (const auto& row : a.miou_after_stage) CHECK(row.size() == 3);
    double mean = 0.0;
    for (const auto& r : a.final_iou) mean += r.mean / 3.0;
    CHECK(a.mean_miou == doctest::Approx(mean).epsilon(1e-12));
    for (int k = 1; k <= 2; ++k)
        CHECK(a.forgetting(k) == doctest::Approx(a.miou_after_stage[k][k] - a.final_iou[k].mean));
    CHECK(a.miou_after_stage.back()[1] == doctest::Approx(a.final_iou[1].mean).epsilon(1e-15));
    CHECK_THROWS_AS(a.forgetting(3), Error);
    CHECK(a.pretrain_losses.size() == 6);
    CHECK(a.decoder_losses.size() == 4 + 2);
    CHECK(a.segmenter_losses.size() == 8);

    const RunReport b = run_sequence(tiny());
    CHECK(report_csv(a) == report_csv(b));
    CHECK(a.segmenter_checksum == b.segmenter_checksum);
    CHECK(a.decoder_checksum == b.decoder_checksum);
    const RunReport c = run_sequence(tiny(6));
    CHECK_FALSE(a.segmenter_checksum == c.segmenter_checksum);

    std::istringstream csv(report_csv(a));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "domain,iou_0,iou_1,iou_2,iou_3,iou_4,miou");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 3);
}

TEST_CASE("baselines and ablations run") {
    SequenceConfig none = tiny();
    none.transfer = TransferKind::none;
    const RunReport r = run_sequence(none);
    REQUIRE(r.complete);
    CHECK(r.decoder_losses.empty());
    CHECK(r.segmenter_losses.empty());
    CHECK(r.memory_footprint == 0);
    for (const auto& row : r.miou_after_stage) CHECK(row == r.miou_after_stage.front());

    SequenceConfig jit = tiny();
    jit.transfer = TransferKind::jitter_only;
    const RunReport j = run_sequence(jit);
    REQUIRE(j.complete);
    CHECK(j.decoder_losses.empty());
    CHECK(j.segmenter_losses.size() == 8);

    SequenceConfig gauss = tiny();
    gauss.memory.mode = StorageMode::gaussian;
    SequenceConfig full = tiny();
    const RunReport g = run_sequence(gauss);
    const RunReport f = run_sequence(full);
    REQUIRE(g.complete);
    CHECK(g.memory_footprint > 0);

    SequenceConfig real = tiny();
    real.moment_labels = MomentLabels::real;
    CHECK(run_sequence(real).complete);
    SequenceConfig global = tiny();
    global.transfer = TransferKind::global;
    CHECK(run_sequence(global).complete);
    CHECK(f.encoder_checksum == g.encoder_checksum);
}

TEST_CASE("pretrained segmenter can be reused") {
    ContinualTrainer tr(tiny());
    tr.pretrain_source();
    const Segmenter pre = tr.segmenter();
    const RunReport a = run_sequence(tiny());
    const RunReport b = run_sequence(tiny(), &pre);
    CHECK(report_csv(a) == report_csv(b));
    CHECK(b.pretrain_losses.empty());
}

TEST_CASE("non-finite loss yields an incomplete report") {
    SequenceConfig c = tiny();
    c.segmenter_lr = 1e12;
    const RunReport r = run_sequence(c);
    CHECK_FALSE(r.complete);
    CHECK(r.error.find("step") != std::string::npos);
}
