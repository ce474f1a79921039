// physiossl command-line entry point.
//
// Subcommands: synth, preprocess, build-pretext, pretrain, train, evaluate,
// ablate, lowdata. Exit codes: 0 success, 1 configuration/usage error,
// 2 runtime error. Every run writes an effective-config snapshot next to
// its outputs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "physiossl/config.hpp"
#include "physiossl/data_io.hpp"
#include "physiossl/model_io.hpp"
#include "physiossl/train.hpp"
#include "physiossl/transforms.hpp"

namespace fs = std::filesystem;
using namespace physiossl;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    std::vector<std::string> overrides;
};

RunConfig make_config(const GlobalArgs& g) {
    RunConfig cfg;
    if (!g.config_path.empty()) cfg = RunConfig::load(g.config_path);
    for (const auto& kv : g.overrides) cfg.apply_override(kv);
    if (g.seed) {
        cfg.seed = *g.seed;
    } else if (const char* env = std::getenv("PHYSIOSSL_SEED")) {
        cfg.seed = std::strtoull(env, nullptr, 10);
    }
    cfg.jobs = g.jobs;
    train::set_jobs(cfg.jobs);
    return cfg;
}

void snapshot_config(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    cfg.save_effective(out_dir + "/config.effective.json");
}

data::WindowSet preprocess_corpus(const std::string& data_dir, const RunConfig& cfg) {
    const auto manifest = data::load_manifest(data_dir);
    const auto recordings = data::load_dataset(manifest);
    dsp::PreprocessConfig pc = cfg.preprocess_config();
    data::WindowSet ws;
    ws.dataset_id = manifest.dataset_id;
    ws.manifest_hash = data::manifest_hash(data_dir);
    ws.target_fs = pc.target_fs;
    ws.window_s = pc.window_s;
    ws.overlap_frac = pc.overlap_frac;
    ws.n_steps = static_cast<int>(std::llround(pc.window_s * pc.target_fs));
    for (const auto& rec : recordings) {
        auto seg = dsp::preprocess_recording(rec, pc);
        if (seg.too_short) {
            std::cerr << "warning: subject " << rec.subject_id
                      << " is shorter than one window; skipped\n";
            ws.any_too_short = true;
            continue;
        }
        for (auto& w : seg.windows) ws.windows.push_back(std::move(w));
    }
    return ws;
}

data::TaskDef resolve_task(const std::string& data_dir, const std::string& task_id) {
    const auto manifest = data::load_manifest(data_dir);
    if (task_id.empty()) {
        if (manifest.tasks.size() != 1)
            throw ConfigError("dataset declares " + std::to_string(manifest.tasks.size()) +
                              " tasks; pick one with --task");
        return manifest.tasks.front();
    }
    return manifest.task(task_id);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-supervised multimodal representation learning for wearable signals"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may appear after the subcommand

    GlobalArgs g;
    app.add_option("--config", g.config_path, "run configuration file (JSON)");
    app.add_option("--out", g.out_dir, "output directory");
    std::uint64_t seed_arg = 0;
    auto* seed_opt = app.add_option("--seed", seed_arg, "seed override");
    app.add_option("--jobs", g.jobs, "worker threads (results are identical for any value)");
    app.add_option("--set", g.overrides, "config override key=value (repeatable)");

    // --- synth ---
    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    int synth_subjects = 4, synth_classes = 2;
    double synth_seconds = 2400.0;
    synth->add_option("--subjects", synth_subjects, "number of subjects");
    synth->add_option("--seconds", synth_seconds, "seconds per subject");
    synth->add_option("--classes", synth_classes, "number of label classes");

    // --- preprocess ---
    auto* prep = app.add_subcommand("preprocess", "filter, normalize, resample and segment");
    std::string prep_data;
    prep->add_option("--data", prep_data, "corpus directory (with manifest.json)")->required();

    // --- build-pretext ---
    auto* buildp = app.add_subcommand("build-pretext", "expand windows into pretext samples");
    std::string bp_windows;
    buildp->add_option("--windows", bp_windows, "preprocessed window directory")->required();

    // --- pretrain ---
    auto* pre = app.add_subcommand("pretrain", "transform-recognition pretraining");
    std::string pre_input;
    pre->add_option("--pretext", pre_input, "pretext dataset directory (from build-pretext)")
        ->required();

    // --- train ---
    auto* tr = app.add_subcommand("train", "train the emotion classifier");
    std::string tr_windows, tr_ckpt, tr_mode = "finetuned", tr_task, tr_data;
    tr->add_option("--windows", tr_windows, "preprocessed window directory")->required();
    tr->add_option("--data", tr_data, "corpus directory (for task definitions)")->required();
    tr->add_option("--mode", tr_mode, "frozen|finetuned|scratch");
    tr->add_option("--checkpoint", tr_ckpt, "pretrained checkpoint (frozen/finetuned)");
    tr->add_option("--task", tr_task, "task id from the manifest");

    // --- evaluate ---
    auto* ev = app.add_subcommand("evaluate", "cross-validated evaluation");
    std::string ev_windows, ev_ckpt, ev_mode = "frozen", ev_task, ev_protocol = "loso", ev_data;
    ev->add_option("--windows", ev_windows, "preprocessed window directory")->required();
    ev->add_option("--data", ev_data, "corpus directory (for task definitions)")->required();
    ev->add_option("--protocol", ev_protocol, "evaluation protocol (loso)");
    ev->add_option("--mode", ev_mode, "frozen|finetuned|scratch");
    ev->add_option("--checkpoint", ev_ckpt, "pretrained checkpoint");
    ev->add_option("--task", ev_task, "task id from the manifest");

    // --- ablate ---
    auto* ab = app.add_subcommand("ablate", "ablation experiments");
    std::string ab_windows, ab_kind, ab_task, ab_data;
    std::vector<std::string> ab_variants;
    double ab_drop_prob = 0.5;
    int ab_repeats = 10;
    ab->add_option("--windows", ab_windows, "preprocessed window directory")->required();
    ab->add_option("--data", ab_data, "corpus directory (for task definitions)")->required();
    ab->add_option("--kind", ab_kind,
                   "fusion|modality_subset|missing_modality|components_pe|transform_subset")
        ->required();
    ab->add_option("--variant", ab_variants, "variant names (repeatable; default: full set)");
    ab->add_option("--drop-prob", ab_drop_prob, "missing-modality drop probability");
    ab->add_option("--repeats", ab_repeats, "missing-modality repeats");
    ab->add_option("--task", ab_task, "task id from the manifest");

    // --- lowdata ---
    auto* ld = app.add_subcommand("lowdata", "per-class low-data sampling study");
    std::string ld_windows, ld_ckpt, ld_mode = "finetuned", ld_task, ld_data;
    std::vector<long long> ld_sizes = {1, 50, 100, 500, 1000};
    int ld_repeats = 50;
    ld->add_option("--windows", ld_windows, "preprocessed window directory")->required();
    ld->add_option("--data", ld_data, "corpus directory (for task definitions)")->required();
    ld->add_option("--sizes", ld_sizes, "per-class sample counts");
    ld->add_option("--repeats", ld_repeats, "sampling repeats per size");
    ld->add_option("--mode", ld_mode, "frozen|finetuned|scratch");
    ld->add_option("--checkpoint", ld_ckpt, "pretrained checkpoint");
    ld->add_option("--task", ld_task, "task id from the manifest");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (seed_opt->count() > 0) g.seed = seed_arg;
        RunConfig cfg = make_config(g);

        if (synth->parsed()) {
            data::SynthConfig sc;
            sc.n_subjects = synth_subjects;
            sc.seconds_per_subject = synth_seconds;
            sc.n_classes = synth_classes;
            sc.seed = cfg.seed;
            const auto recs = data::generate_synthetic_corpus(sc);
            data::write_corpus(g.out_dir, recs, sc);
            snapshot_config(cfg, g.out_dir);
            std::cout << "wrote synthetic corpus: " << g.out_dir << " (" << recs.size()
                      << " subjects)\n";
            return 0;
        }

        if (prep->parsed()) {
            auto ws = preprocess_corpus(prep_data, cfg);
            data::save_windows(g.out_dir, ws);
            snapshot_config(cfg, g.out_dir);
            std::cout << "wrote " << ws.windows.size() << " windows to " << g.out_dir << "\n";
            return 0;
        }

        if (buildp->parsed()) {
            const auto ws = data::load_windows(bp_windows);
            const auto samples =
                transforms::build_pretext_dataset(ws.windows, cfg.transform_config(), cfg.seed);
            transforms::save_pretext_dataset(g.out_dir, samples, ws.n_steps, cfg.seed);
            snapshot_config(cfg, g.out_dir);
            std::cout << "wrote " << samples.size() << " pretext samples to " << g.out_dir
                      << "\n";
            return 0;
        }

        if (pre->parsed()) {
            const auto samples = transforms::load_pretext_dataset(pre_input);
            nn::EncoderConfig ec = cfg.encoder_config();
            ec.window_len = samples.empty() ? ec.window_len : samples.front().n_steps;
            train::TrainOpts opts{cfg.pretext_lr,     cfg.pretext_batch, cfg.pretext_epochs,
                                  cfg.weight_decay,   cfg.sgd_momentum,  cfg.seed,
                                  cfg.f1_average,     true};
            const auto result = train::pretrain(samples, ec, opts);
            fs::create_directories(g.out_dir);
            const Checkpoint ckpt = make_checkpoint(*result.net, "pretrained", cfg.seed);
            save_checkpoint(g.out_dir + "/pretrained.ckpt", ckpt);
            train::save_training_log(g.out_dir + "/pretrain_log.csv", result.logs);
            snapshot_config(cfg, g.out_dir);
            std::cout << "wrote checkpoint " << g.out_dir << "/pretrained.ckpt\n";
            return 0;
        }

        if (tr->parsed()) {
            const auto ws = data::load_windows(tr_windows);
            const auto task = resolve_task(tr_data, tr_task);
            const auto mode = train::downstream_mode_from_name(tr_mode);
            std::optional<Checkpoint> ckpt;
            if (!tr_ckpt.empty()) ckpt = load_checkpoint(tr_ckpt);
            std::vector<dsp::Window> windows;
            std::vector<int> labels;
            train::task_labels(ws.windows, task, windows, labels);
            train::TrainOpts opts{cfg.downstream_lr, cfg.downstream_batch,
                                  cfg.downstream_epochs, cfg.weight_decay, cfg.sgd_momentum,
                                  cfg.seed, cfg.f1_average, true};
            const auto model = train::train_downstream(windows, labels, task.classes, mode,
                                                       ckpt ? &*ckpt : nullptr,
                                                       cfg.encoder_config(), opts);
            fs::create_directories(g.out_dir);
            const Checkpoint out = make_checkpoint(*model.net, "finetuned", cfg.seed);
            save_checkpoint(g.out_dir + "/finetuned.ckpt", out);
            train::save_training_log(g.out_dir + "/train_log.csv", model.logs);
            snapshot_config(cfg, g.out_dir);
            std::cout << "wrote checkpoint " << g.out_dir << "/finetuned.ckpt\n";
            return 0;
        }

        if (ev->parsed()) {
            if (ev_protocol != "loso") throw ConfigError("unknown protocol: " + ev_protocol);
            const auto ws = data::load_windows(ev_windows);
            const auto task = resolve_task(ev_data, ev_task);
            const auto mode = train::downstream_mode_from_name(ev_mode);
            std::optional<Checkpoint> ckpt;
            if (!ev_ckpt.empty()) ckpt = load_checkpoint(ev_ckpt);
            train::TrainOpts opts{cfg.downstream_lr, cfg.downstream_batch,
                                  cfg.downstream_epochs, cfg.weight_decay, cfg.sgd_momentum,
                                  cfg.seed, cfg.f1_average, false};
            auto report = train::evaluate_loso(ws, task, mode, ckpt ? &*ckpt : nullptr,
                                               cfg.encoder_config(), opts);
            report.config_hash = cfg.hash();
            data::save_report(g.out_dir, report);
            snapshot_config(cfg, g.out_dir);
            std::cout << "LOSO " << task.task_id << ": mean accuracy " << report.mean_accuracy
                      << ", mean F1 " << report.mean_f1 << " over " << report.folds.size()
                      << " folds\n";
            return 0;
        }

        if (ab->parsed()) {
            const auto ws = data::load_windows(ab_windows);
            const auto task = resolve_task(ab_data, ab_task);
            train::AblationSpec spec;
            spec.kind = ab_kind;
            spec.variants = ab_variants;
            spec.missing_drop_prob = ab_drop_prob;
            spec.missing_repeats = ab_repeats;
            train::TrainOpts pre_opts{cfg.pretext_lr, cfg.pretext_batch, cfg.pretext_epochs,
                                      cfg.weight_decay, cfg.sgd_momentum, cfg.seed,
                                      cfg.f1_average, false};
            train::TrainOpts down_opts{cfg.downstream_lr, cfg.downstream_batch,
                                       cfg.downstream_epochs, cfg.weight_decay,
                                       cfg.sgd_momentum, cfg.seed, cfg.f1_average, false};
            const auto report = train::run_ablation(spec, ws, task, cfg.transform_config(),
                                                    cfg.encoder_config(), pre_opts, down_opts);
            train::save_ablation_report(g.out_dir, report);
            snapshot_config(cfg, g.out_dir);
            std::cout << "wrote ablation report to " << g.out_dir << "\n";
            return 0;
        }

        if (ld->parsed()) {
            const auto ws = data::load_windows(ld_windows);
            const auto task = resolve_task(ld_data, ld_task);
            const auto mode = train::downstream_mode_from_name(ld_mode);
            std::optional<Checkpoint> ckpt;
            if (!ld_ckpt.empty()) ckpt = load_checkpoint(ld_ckpt);
            train::TrainOpts opts{cfg.downstream_lr, cfg.downstream_batch,
                                  cfg.downstream_epochs, cfg.weight_decay, cfg.sgd_momentum,
                                  cfg.seed, cfg.f1_average, false};
            const auto report = train::run_low_data_study(ws, task, mode,
                                                          ckpt ? &*ckpt : nullptr,
                                                          cfg.encoder_config(), opts, ld_sizes,
                                                          ld_repeats);
            train::save_lowdata_report(g.out_dir, report);
            snapshot_config(cfg, g.out_dir);
            std::cout << "wrote low-data report to " << g.out_dir << "\n";
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
