#include "cace/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "cace/io.hpp"
#include "json.hpp"

namespace cace::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// --- config parsing --------------------------------------------------------

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : obj.items())
        if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read(const json& obj, const char* key, T& dst, const std::string& where) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(where + "." + key + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(where + "." + key + ": expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
            if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
                throw ConfigError(where + "." + key + ": expected a non-negative integer");
        }
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
    } else {
        if (!v.is_string()) throw ConfigError(where + "." + key + ": expected a string");
    }
    dst = v.get<T>();
}

template <std::size_t N>
void read_array(const json& obj, const char* key, std::array<double, N>& dst, const std::string& where) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_array() || v.size() != N) throw ConfigError(where + "." + key + ": expected " + std::to_string(N) + " numbers");
    for (std::size_t i = 0; i < N; ++i) {
        if (!v[i].is_number()) throw ConfigError(where + "." + key + ": expected numbers");
        dst[i] = v[i].get<double>();
    }
}

TransferKind parse_transfer(const std::string& s) {
    if (s == "class_conditional") return TransferKind::class_conditional;
    if (s == "global") return TransferKind::global;
    if (s == "jitter_only") return TransferKind::jitter_only;
    if (s == "none") return TransferKind::none;
    throw ConfigError("transfer: expected class_conditional, global, jitter_only or none");
}

StorageMode parse_storage(const std::string& s) {
    if (s == "full") return StorageMode::full;
    if (s == "subsample") return StorageMode::subsample;
    if (s == "gaussian") return StorageMode::gaussian;
    throw ConfigError("memory.mode: expected full, subsample or gaussian");
}

DomainSpec parse_domain(const json& j, int id, int classes) {
    const std::string where = "data.specs[" + std::to_string(id - 1) + "]";
    reject_unknown(j, {"name", "tint", "classes"}, where);
    DomainSpec spec = DomainSpec::identity(classes);
    spec.id = id;
    spec.name = "domain_" + std::to_string(id);
    read(j, "name", spec.name, where);
    read_array(j, "tint", spec.tint, where);
    if (j.contains("classes")) {
        const json& cs = j.at("classes");
        if (!cs.is_array() || static_cast<int>(cs.size()) != classes)
            throw ConfigError(where + ".classes: expected one entry per class");
        for (int c = 0; c < classes; ++c) {
            const std::string cw = where + ".classes[" + std::to_string(c) + "]";
            const json& cj = cs[static_cast<std::size_t>(c)];
            reject_unknown(cj, {"gain", "bias", "noise"}, cw);
            auto& t = spec.classes[static_cast<std::size_t>(c)];
            if (cj.contains("gain") && cj.at("gain").is_number()) {
                const double g = cj.at("gain").get<double>();
                t.gain = {g, 0, 0, 0, g, 0, 0, 0, g};
            } else {
                read_array(cj, "gain", t.gain, cw);
            }
            read_array(cj, "bias", t.bias, cw);
            read(cj, "noise", t.noise, cw);
            if (t.noise < 0.0) throw ConfigError(cw + ".noise: must be >= 0");
        }
    }
    return spec;
}

void parse_data(const json& j, SequenceDataConfig& d) {
    reject_unknown(j, {"height", "width", "classes", "domains", "train_per_domain", "val_per_domain", "texture",
                       "min_shapes", "max_shapes", "require_adversarial_pair", "specs"},
                   "data");
    read(j, "height", d.scene.height, "data");
    read(j, "width", d.scene.width, "data");
    read(j, "classes", d.scene.classes, "data");
    read(j, "domains", d.domains, "data");
    read(j, "train_per_domain", d.train_per_domain, "data");
    read(j, "val_per_domain", d.val_per_domain, "data");
    read(j, "texture", d.scene.texture, "data");
    read(j, "min_shapes", d.scene.min_shapes, "data");
    read(j, "max_shapes", d.scene.max_shapes, "data");
    read(j, "require_adversarial_pair", d.require_adversarial_pair, "data");
    if (d.scene.classes > 255) throw ConfigError("data.classes: at most 255");
    if (j.contains("specs")) {
        const json& specs = j.at("specs");
        if (!specs.is_array() || static_cast<int>(specs.size()) != d.domains)
            throw ConfigError("data.specs: expected one entry per target domain");
        for (int t = 1; t <= d.domains; ++t)
            d.specs.push_back(parse_domain(specs[static_cast<std::size_t>(t - 1)], t, d.scene.classes));
    }
}

json spec_json(const DomainSpec& s) {
    json classes = json::array();
    for (const auto& t : s.classes) classes.push_back({{"gain", t.gain}, {"bias", t.bias}, {"noise", t.noise}});
    return {{"name", s.name}, {"tint", s.tint}, {"classes", classes}};
}

// --- run -------------------------------------------------------------------

struct RunArgs {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool export_data = false;
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

std::string losses_csv(const RunReport& r) {
    std::ostringstream ss;
    ss << "phase,step,loss\n";
    char buf[64];
    auto emit = [&](const char* phase, const std::vector<double>& v) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            std::snprintf(buf, sizeof buf, ",%zu,%.9g\n", i, v[i]);
            ss << phase << buf;
        }
    };
    emit("pretrain", r.pretrain_losses);
    emit("decoder", r.decoder_losses);
    emit("segmenter", r.segmenter_losses);
    return ss.str();
}

std::string stages_csv(const RunReport& r) {
    std::ostringstream ss;
    ss << "stage";
    for (int d = 0; d <= r.domains; ++d) ss << ",miou_" << d;
    ss << '\n';
    char buf[32];
    for (std::size_t s = 0; s < r.miou_after_stage.size(); ++s) {
        ss << s;
        for (double v : r.miou_after_stage[s]) {
            std::snprintf(buf, sizeof buf, ",%.6f", v);
            ss << buf;
        }
        ss << '\n';
    }
    return ss.str();
}

std::string hex(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

int cmd_run(const RunArgs& args, std::ostream& out, std::ostream& err) {
    RunConfig rc;
    std::string seed_source = "config";
    try {
        rc = parse_run_config(read_file(args.config));
        if (const char* env = std::getenv("CACE_SEED")) {
            char* end = nullptr;
            const unsigned long long v = std::strtoull(env, &end, 10);
            if (!*env || *end) throw ConfigError("CACE_SEED must be a non-negative integer");
            rc.sequence.seed = v;
            seed_source = "env:CACE_SEED";
        }
        if (args.seed) {
            rc.sequence.seed = *args.seed;
            seed_source = "flag:--seed";
        }
        if (!args.out.empty()) rc.out_dir = args.out;
        if (!rc.out_dir) throw ConfigError("no output directory (use --out or the config's \"out\")");
        rc.sequence.validate();
    } catch (const Error& e) {
        err << "config error: " << e.what() << '\n';
        return kExitUsage;
    }

    const fs::path dir = *rc.out_dir;
    RunReport report;
    std::optional<Checkpoint> ckpt;
    std::string stage_error;
    try {
        fs::create_directories(dir);
        ContinualTrainer trainer(rc.sequence);
        if (args.export_data) export_dataset(trainer.data(), dir / "data");
        report = run_sequence(trainer);
        ckpt = Checkpoint::capture(trainer.transfer(), trainer.segmenter(), trainer.memory());
    } catch (const std::exception& e) {
        report.error = e.what();
    }

    try {
        write_text(dir / "report.csv", report_csv(report));
        write_text(dir / "stages.csv", stages_csv(report));
        write_text(dir / "losses.csv", losses_csv(report));
        if (ckpt) ckpt->save(dir / "checkpoint.bin");
        json manifest = {
            {"config", json::parse(config_json(rc.sequence))},
            {"seed", rc.sequence.seed},
            {"seed_source", seed_source},
            {"complete", report.complete},
            {"error", report.error},
            {"mean_miou", report.mean_miou},
            {"memory_footprint", report.memory_footprint},
            {"wall_seconds", report.wall_seconds},
            {"checksums",
             {{"encoder", hex(report.encoder_checksum)},
              {"decoder", hex(report.decoder_checksum)},
              {"segmenter", hex(report.segmenter_checksum)}}},
            {"files", {"report.csv", "stages.csv", "losses.csv", "checkpoint.bin"}},
        };
        write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    if (!report.complete) {
        err << "run failed: " << report.error << '\n';
        return kExitRuntime;
    }
    out << "mean mIoU " << report.mean_miou << " -> " << (dir / "report.csv").string() << '\n';
    return kExitOk;
}

// --- stylize ---------------------------------------------------------------

struct StylizeArgs {
    std::string ckpt, image, mask, mode = "class_conditional", out = "stylized.ppm";
    int domain = 1;
    std::uint64_t seed = 0;
};

int cmd_stylize(const StylizeArgs& a, std::ostream& out, std::ostream& err) {
    Checkpoint ckpt;
    FeatureMap image;
    LabelMap mask;
    TransferMode mode;
    try {
        if (a.mode == "class_conditional") {
            mode = TransferMode::class_conditional;
        } else if (a.mode == "global") {
            mode = TransferMode::global;
        } else {
            throw ConfigError("--mode must be class_conditional or global");
        }
        ckpt = Checkpoint::load(fs::path(a.ckpt));
        image = read_ppm(fs::path(a.image));
        mask = read_labels(fs::path(a.mask));
        if (image.height() != mask.height() || image.width() != mask.width())
            throw ConfigError("image and mask sizes differ");
        if (image.height() % 4 || image.width() % 4) throw ConfigError("image sides must be multiples of 4");
        if (a.domain != 0 && !ckpt.memory.contains(a.domain))
            throw ConfigError("domain " + std::to_string(a.domain) + " is not in the checkpoint's style memory");
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    try {
        const TransferNet net = ckpt.make_transfer();
        ClassMoments target;
        if (a.domain == 0) {
            // The source's own style: reconstruct the input.
            const auto feats = net.encoder().encode(image);
            const auto masks = net.layer_masks(mask);
            for (std::size_t l = 0; l < feats.size(); ++l) target.layers.push_back(class_moments(feats[l], masks[l]));
        } else {
            const int domains[] = {a.domain};
            target = draw_moments(ckpt.memory, domains, ckpt.memory.natural_draw_mode(), a.seed);
        }
        const Stylized st = net.stylize(image, mask, target, mode);
        write_ppm(fs::path(a.out), st.image);
        out << "style loss " << net.style_loss(st.image, st.z_hat, target, mask, mode, ckpt.lambda) << " -> "
            << a.out << '\n';
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
    std::string ckpt, data, out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    Checkpoint ckpt;
    std::vector<DatasetSplit> splits;
    try {
        ckpt = Checkpoint::load(fs::path(a.ckpt));
        splits = import_validation(a.data);
        for (const auto& s : splits)
            for (const auto& item : s.images)
                if (item.labels.classes() != ckpt.segmenter_shape.classes)
                    throw ConfigError("dataset class count does not match the checkpoint");
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    try {
        const Segmenter seg = ckpt.make_segmenter();
        RunReport r;
        r.classes = ckpt.segmenter_shape.classes;
        for (const auto& s : splits) {
            std::vector<LabelMap> preds, gts;
            for (const auto& item : s.images) {
                preds.push_back(seg.pseudo_label(item.image));
                gts.push_back(item.labels);
            }
            r.final_iou.push_back(miou(preds, gts));
        }
        std::ostringstream csv;
        write_report_csv(r, csv);
        // Rows are numbered by position; relabel with the directory's domain ids.
        std::istringstream lines(csv.str());
        std::ostringstream fixed;
        std::string line;
        std::getline(lines, line);
        fixed << line << '\n';
        for (const auto& s : splits) {
            std::getline(lines, line);
            fixed << s.domain << line.substr(line.find(',')) << '\n';
        }
        if (a.out.empty()) {
            out << fixed.str();
        } else {
            write_text(a.out, fixed.str());
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed JSON: ") + e.what());
    }
    reject_unknown(j, {"seed", "out", "data", "schedule", "transfer", "memory", "replay", "moment_labels",
                       "pretrain_jitter", "jitter_strength", "optim", "model"},
                   "config");
    RunConfig rc;
    SequenceConfig& c = rc.sequence;
    read(j, "seed", c.seed, "config");
    if (j.contains("out")) {
        std::string out;
        read(j, "out", out, "config");
        rc.out_dir = out;
    }
    if (j.contains("data")) parse_data(j.at("data"), c.data);
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        reject_unknown(s, {"pretrain_steps", "decoder_initial_steps", "decoder_steps", "segmenter_steps", "batch_size"},
                       "schedule");
        read(s, "pretrain_steps", c.pretrain_steps, "schedule");
        read(s, "decoder_initial_steps", c.decoder_initial_steps, "schedule");
        read(s, "decoder_steps", c.decoder_steps, "schedule");
        read(s, "segmenter_steps", c.segmenter_steps, "schedule");
        read(s, "batch_size", c.batch_size, "schedule");
    }
    if (j.contains("transfer")) {
        std::string t;
        read(j, "transfer", t, "config");
        c.transfer = parse_transfer(t);
    }
    if (j.contains("memory")) {
        const json& m = j.at("memory");
        reject_unknown(m, {"mode", "fraction"}, "memory");
        std::string mode = "full";
        read(m, "mode", mode, "memory");
        c.memory.mode = parse_storage(mode);
        read(m, "fraction", c.memory.fraction, "memory");
        if (c.memory.mode != StorageMode::subsample && m.contains("fraction"))
            throw ConfigError("memory.fraction: only valid with mode subsample");
    }
    read(j, "replay", c.replay, "config");
    if (j.contains("moment_labels")) {
        std::string m;
        read(j, "moment_labels", m, "config");
        if (m == "pseudo") {
            c.moment_labels = MomentLabels::pseudo;
        } else if (m == "real") {
            c.moment_labels = MomentLabels::real;
        } else {
            throw ConfigError("moment_labels: expected pseudo or real");
        }
    }
    read(j, "pretrain_jitter", c.pretrain_jitter, "config");
    read(j, "jitter_strength", c.jitter_strength, "config");
    if (j.contains("optim")) {
        const json& o = j.at("optim");
        reject_unknown(o, {"lambda", "decoder_lr", "segmenter_lr", "momentum", "weight_decay"}, "optim");
        read(o, "lambda", c.lambda, "optim");
        read(o, "decoder_lr", c.decoder_lr, "optim");
        read(o, "segmenter_lr", c.segmenter_lr, "optim");
        read(o, "momentum", c.segmenter_momentum, "optim");
        read(o, "weight_decay", c.weight_decay, "optim");
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown(m, {"encoder_channels", "segmenter_width"}, "model");
        if (m.contains("encoder_channels")) {
            const json& e = m.at("encoder_channels");
            if (!e.is_array() || e.size() != 3 || !e[0].is_number_integer() || !e[1].is_number_integer() ||
                !e[2].is_number_integer())
                throw ConfigError("model.encoder_channels: expected three integers");
            c.encoder.c1 = e[0].get<int>();
            c.encoder.c2 = e[1].get<int>();
            c.encoder.c3 = e[2].get<int>();
            if (c.encoder.c1 < 1 || c.encoder.c2 < 1 || c.encoder.c3 < 1)
                throw ConfigError("model.encoder_channels: must be positive");
        }
        read(m, "segmenter_width", c.segmenter_width, "model");
    }
    try {
        c.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return rc;
}

std::string config_json(const SequenceConfig& c, int indent) {
    json data = {{"height", c.data.scene.height},
                 {"width", c.data.scene.width},
                 {"classes", c.data.scene.classes},
                 {"domains", c.data.domains},
                 {"train_per_domain", c.data.train_per_domain},
                 {"val_per_domain", c.data.val_per_domain},
                 {"texture", c.data.scene.texture},
                 {"min_shapes", c.data.scene.min_shapes},
                 {"max_shapes", c.data.scene.max_shapes},
                 {"require_adversarial_pair", c.data.require_adversarial_pair}};
    const auto specs = c.data.specs.empty() ? default_domain_specs(c.data.domains, c.data.scene.classes) : c.data.specs;
    json sj = json::array();
    for (const auto& s : specs) sj.push_back(spec_json(s));
    data["specs"] = sj;
    json memory = {{"mode", to_string(c.memory.mode)}};
    if (c.memory.mode == StorageMode::subsample) memory["fraction"] = c.memory.fraction;
    json j = {{"seed", c.seed},
              {"data", data},
              {"schedule",
               {{"pretrain_steps", c.pretrain_steps},
                {"decoder_initial_steps", c.decoder_initial_steps},
                {"decoder_steps", c.decoder_steps},
                {"segmenter_steps", c.segmenter_steps},
                {"batch_size", c.batch_size}}},
              {"transfer", to_string(c.transfer)},
              {"memory", memory},
              {"replay", c.replay},
              {"moment_labels", c.moment_labels == MomentLabels::real ? "real" : "pseudo"},
              {"pretrain_jitter", c.pretrain_jitter},
              {"jitter_strength", c.jitter_strength},
              {"optim",
               {{"lambda", c.lambda},
                {"decoder_lr", c.decoder_lr},
                {"segmenter_lr", c.segmenter_lr},
                {"momentum", c.segmenter_momentum},
                {"weight_decay", c.weight_decay}}},
              {"model", {{"encoder_channels", {c.encoder.c1, c.encoder.c2, c.encoder.c3}},
                         {"segmenter_width", c.segmenter_width}}}};
    return j.dump(indent);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Continual class-conditional style adaptation toolkit", "cace"};
    app.require_subcommand(1);

    RunArgs run_args;
    auto* run_cmd = app.add_subcommand("run", "Run a full adaptation sequence");
    run_cmd->add_option("--config", run_args.config, "JSON run configuration")->required();
    run_cmd->add_option("--out", run_args.out, "Output directory (overrides the config)");
    run_cmd->add_option("--seed", run_args.seed, "Seed (overrides config and CACE_SEED)");
    run_cmd->add_flag("--export-data", run_args.export_data, "Also write the generated dataset to <out>/data");

    StylizeArgs st;
    auto* st_cmd = app.add_subcommand("stylize", "Render a source image in a stored target style");
    st_cmd->add_option("--ckpt", st.ckpt, "Checkpoint file")->required();
    st_cmd->add_option("--image", st.image, "Source image (P6 PPM)")->required();
    st_cmd->add_option("--mask", st.mask, "Source label file")->required();
    st_cmd->add_option("--domain", st.domain, "Target domain id; 0 keeps the source style")->required();
    st_cmd->add_option("--mode", st.mode, "class_conditional or global");
    st_cmd->add_option("--out", st.out, "Output PPM path");
    st_cmd->add_option("--seed", st.seed, "Seed for the moment draw");

    EvalArgs ev;
    auto* ev_cmd = app.add_subcommand("eval", "Per-class IoU of a checkpoint on a dataset directory");
    ev_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
    ev_cmd->add_option("--data", ev.data, "Dataset directory with domain_<d>/val")->required();
    ev_cmd->add_option("--out", ev.out, "CSV path (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << '\n';
        return kExitUsage;
    }
    if (*run_cmd) return cmd_run(run_args, out, err);
    if (*st_cmd) return cmd_stylize(st, out, err);
    return cmd_eval(ev, out, err);
}

}  // namespace cace::cli
