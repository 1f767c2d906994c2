#include "cli.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "ramf/errors.hpp"
#include "ramf/feature_io.hpp"
#include "ramf/model.hpp"
#include "ramf/random.hpp"
#include "ramf/reasoning.hpp"
#include "ramf/train_eval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ramf_cli {

namespace {

int exit_code_for(ramf::ErrorKind kind) {
    using K = ramf::ErrorKind;
    switch (kind) {
        case K::InvalidArgument:
        case K::TooFewSamples:
        case K::MissingModality:
        case K::UnknownVariant:
        case K::InvalidTarget:
        case K::WrongFrameCount:
        case K::OddHeadCount:
        case K::MissingPlaceholder:
        case K::IndexOutOfRange:
            return 2;
        default:
            return 1;
    }
}

// Every command with an output directory records how it was invoked and what
// it produced, so a run directory is self-describing.
void write_run_records(const fs::path& out_dir, const std::string& command,
                       const std::string& resolved_config, uint64_t seed,
                       const std::vector<std::string>& artifacts) {
    fs::create_directories(out_dir);
    {
        std::ofstream cfg(out_dir / "resolved_config.toml");
        cfg << "# resolved configuration for `ramf " << command << "`\n" << resolved_config;
    }
    json j;
    j["command"] = command;
    j["seed"] = seed;
    j["artifacts"] = artifacts;
    std::ofstream mf(out_dir / "artifacts.json");
    mf << j.dump(2) << "\n";
}

std::vector<ramf::ModalitySpec> preset_specs(const std::string& preset) {
    if (preset == "paper") return ramf::paper_spec_set();
    if (preset == "desk") return ramf::desk_spec_set();
    ramf::raise(ramf::ErrorKind::InvalidArgument, "unknown preset '" + preset + "'");
}

ramf::ModelConfig preset_model_config(const std::string& preset, ramf::Variant variant,
                                      const std::vector<ramf::ModalitySpec>& specs) {
    return preset == "paper" ? ramf::paper_model_config(variant, specs)
                             : ramf::desk_model_config(variant, specs);
}

// Infers which model preset matches a manifest: paper-width features get the
// paper dims, anything else the desk dims.
std::string infer_preset(const ramf::DatasetManifest& manifest) {
    for (const auto& spec : manifest.modality_specs) {
        if (spec.name == ramf::ModalityName::text) return spec.feat_dim >= 768 ? "paper" : "desk";
    }
    return "desk";
}

ramf::FeatureBundle synthetic_probe_bundle(const std::vector<ramf::ModalitySpec>& specs,
                                           uint64_t seed) {
    ramf::FeatureBundle bundle;
    bundle.video_id = "probe";
    bundle.label = 0;
    ramf::Xoshiro256ss rng(seed);
    for (const auto& spec : specs) {
        ramf::FeatureMatrix m;
        m.rows = spec.seq_len;
        m.cols = spec.feat_dim;
        m.data.resize(static_cast<size_t>(spec.seq_len) * spec.feat_dim);
        for (float& v : m.data) v = static_cast<float>(rng.gaussian());
        bundle.features[spec.name] = std::move(m);
    }
    return bundle;
}

struct ExperimentOptions {
    std::string data_path;
    std::string variant_name = "RAMF";
    std::string out_dir;
    std::string preset = "auto";
    uint64_t seed = 2021;
    int epochs = 20;
    int batch_size = 16;
    double lr = 1e-4;
    int heads = 4;
    bool no_causal = false;
};

struct ExperimentResult {
    ramf::MetricsSummary summary;
    std::vector<int> best_epochs;
};

void print_metric_table_header() {
    std::printf("%-16s %-19s %-15s %-15s %-15s\n", "model", "MF1 (F1)", "Acc", "P(H)", "R(H)");
}

void print_metric_row(const std::string& name, const ramf::MetricsSummary& s) {
    char mf1[64];
    std::snprintf(mf1, sizeof(mf1), "%.4f±%.3f (%.4f)", s.mean.macro_f1, s.stddev.macro_f1,
                  s.mean.f1_hate);
    char acc[32], ph[32], rh[32];
    std::snprintf(acc, sizeof(acc), "%.4f±%.3f", s.mean.accuracy, s.stddev.accuracy);
    std::snprintf(ph, sizeof(ph), "%.4f±%.3f", s.mean.precision_hate, s.stddev.precision_hate);
    std::snprintf(rh, sizeof(rh), "%.4f±%.3f", s.mean.recall_hate, s.stddev.recall_hate);
    std::printf("%-16s %-19s %-15s %-15s %-15s\n", name.c_str(), mf1, acc, ph, rh);
}

json metrics_to_json(const ramf::MetricsReport& m) {
    return json{{"accuracy", m.accuracy},
                {"macro_f1", m.macro_f1},
                {"f1_hate", m.f1_hate},
                {"precision_hate", m.precision_hate},
                {"recall_hate", m.recall_hate},
                {"tp", m.tp},
                {"fp", m.fp},
                {"tn", m.tn},
                {"fn", m.fn}};
}

ExperimentResult run_experiment(const ExperimentOptions& options,
                                std::vector<std::string>* artifacts) {
    const ramf::Variant variant = ramf::variant_from_name(options.variant_name);
    auto manifest = ramf::load_manifest(options.data_path);

    const std::string preset =
        options.preset == "auto" ? infer_preset(manifest) : options.preset;
    ramf::ModelConfig model_config = preset_model_config(preset, variant, manifest.modality_specs);
    model_config.num_heads = options.heads;
    model_config.causal = !options.no_causal;

    // Fail before training if the dataset cannot feed this variant.
    for (ramf::ModalityName m : ramf::required_modalities(model_config)) {
        if (!manifest.spec_for(m)) {
            ramf::raise(ramf::ErrorKind::MissingModality,
                        std::string("dataset lacks modality ") + ramf::modality_name_str(m) +
                            " required by variant " + options.variant_name);
        }
    }

    ramf::Dataset data = ramf::Dataset::load(manifest);
    std::vector<std::string> ids;
    std::vector<int> labels;
    for (const auto& rec : manifest.records) {
        ids.push_back(rec.video_id);
        labels.push_back(rec.label);
    }
    ramf::FoldPlan plan = ramf::plan_folds(ids, labels, options.seed);

    const fs::path out_dir(options.out_dir);
    ExperimentResult result;
    std::vector<ramf::MetricsReport> reports;
    for (int fold = 0; fold < 5; ++fold) {
        ramf::Model model =
            ramf::make_variant(model_config, ramf::mix_seed(options.seed, 2000 + fold));
        ramf::TrainConfig tc;
        tc.lr = options.lr;
        tc.epochs = options.epochs;
        tc.batch_size = options.batch_size;
        tc.seed = ramf::mix_seed(options.seed, 1000 + fold);
        ramf::TrainResult tr;
        try {
            tr = ramf::train(model, plan.folds[static_cast<size_t>(fold)], tc, data);
        } catch (const ramf::Error& e) {
            ramf::raise(e.kind(), std::string(e.what()) + " (fold " + std::to_string(fold) + ")");
        }
        ramf::MetricsReport report =
            ramf::evaluate(model, plan.folds[static_cast<size_t>(fold)].test_ids, data);
        reports.push_back(report);
        result.best_epochs.push_back(tr.best_epoch);

        const fs::path fold_dir = out_dir / ("fold_" + std::to_string(fold));
        fs::create_directories(fold_dir);
        ramf::save_checkpoint(model, fold_dir / "best");
        json history = json::array();
        for (const auto& e : tr.history) {
            history.push_back({{"epoch", e.epoch},
                               {"train_loss", e.train_loss},
                               {"val_macro_f1", e.val_macro_f1}});
        }
        std::ofstream hf(fold_dir / "history.json");
        hf << history.dump(2) << "\n";
        if (artifacts) {
            artifacts->push_back((fold_dir / "best.json").string());
            artifacts->push_back((fold_dir / "best.bin").string());
            artifacts->push_back((fold_dir / "history.json").string());
        }
    }
    result.summary = ramf::summarize(reports);

    json mj;
    mj["variant"] = options.variant_name;
    mj["seed"] = options.seed;
    mj["per_fold"] = json::array();
    for (const auto& r : result.summary.per_fold) mj["per_fold"].push_back(metrics_to_json(r));
    mj["mean"] = metrics_to_json(result.summary.mean);
    mj["stddev"] = metrics_to_json(result.summary.stddev);
    std::ofstream mf(out_dir / "metrics.json");
    mf << mj.dump(2) << "\n";
    if (artifacts) artifacts->push_back((out_dir / "metrics.json").string());
    return result;
}

// --- command wiring -----------------------------------------------------------

struct CliState {
    CLI::App app{"RAMF: reasoning-aware multimodal fusion for hateful-video classification"};

    // synth
    int synth_n = 0;
    double synth_signal = 0.0;
    uint64_t synth_seed = 2021;
    std::string synth_out;
    std::string synth_preset = "desk";

    // reason
    std::string reason_data;
    std::string reason_transcripts;
    std::string reason_out;
    std::string reason_backend = "mock";
    std::string reason_endpoint;
    std::string reason_cache_dir;
    std::string reason_templates_dir;
    std::string reason_zero_shot;  // "", "text", "multimodal"
    int reason_frames = 16;
    int reason_max_inflight = 4;
    bool reason_mock = false;
    bool reason_cot = false;

    // run / ablate
    ExperimentOptions exp;
    std::string ablate_tags;

    // profile
    std::string profile_variant = "RAMF";
    std::string profile_preset = "paper";
    std::string profile_out;
    int profile_runs = 1000;
    uint64_t profile_seed = 2021;

    // contrib
    std::string contrib_checkpoint;
    std::string contrib_data;
    std::string contrib_out;
    std::string contrib_traces;
};

int cmd_synth(CliState& st) {
    ramf::SyntheticOptions opts;
    opts.n = st.synth_n;
    opts.signal_strength = st.synth_signal;
    opts.seed = st.synth_seed;
    opts.specs = preset_specs(st.synth_preset);
    const fs::path out_dir(st.synth_out);
    auto manifest = ramf::generate_synthetic(opts, out_dir);
    write_run_records(out_dir, "synth", st.app.config_to_str(true, false), opts.seed,
                      {(out_dir / "manifest.json").string(),
                       (out_dir / "bundles").string() + "/ (" +
                           std::to_string(manifest.records.size()) + " bundles)"});
    std::cout << (out_dir / "manifest.json").string() << "\n";
    return 0;
}

int cmd_reason(CliState& st) {
    if (st.reason_mock) st.reason_backend = "mock";
    ramf::BackendSpec spec;
    spec.kind = st.reason_backend == "http" ? ramf::BackendSpec::Kind::http
                                            : ramf::BackendSpec::Kind::mock;
    spec.endpoint = st.reason_endpoint;
    if (spec.kind == ramf::BackendSpec::Kind::http && spec.endpoint.empty()) {
        ramf::raise(ramf::ErrorKind::InvalidArgument, "--endpoint is required with --backend http");
    }

    ramf::TemplateSet templates = st.reason_templates_dir.empty()
                                      ? ramf::TemplateSet::builtin()
                                      : ramf::TemplateSet::load_dir(st.reason_templates_dir);

    // ids + transcripts come from a dataset manifest, a transcripts file, or both
    std::vector<std::pair<std::string, std::string>> videos;  // (id, transcript)
    std::map<std::string, std::string> transcripts;
    if (!st.reason_transcripts.empty()) {
        std::ifstream tf(st.reason_transcripts);
        if (!tf) ramf::raise(ramf::ErrorKind::IoError, "cannot open " + st.reason_transcripts);
        json j;
        tf >> j;
        for (auto it = j.begin(); it != j.end(); ++it) {
            transcripts[it.key()] = it.value().get<std::string>();
        }
    }
    if (!st.reason_data.empty()) {
        auto manifest = ramf::load_manifest(st.reason_data);
        for (const auto& rec : manifest.records) {
            auto it = transcripts.find(rec.video_id);
            videos.push_back({rec.video_id, it == transcripts.end() ? "" : it->second});
        }
    } else if (!transcripts.empty()) {
        for (const auto& [id, text] : transcripts) videos.push_back({id, text});
    } else {
        ramf::raise(ramf::ErrorKind::InvalidArgument, "need --data and/or --transcripts");
    }

    std::string cache_dir = st.reason_cache_dir;
    if (cache_dir.empty()) {
        if (const char* env = std::getenv("RAMF_CACHE_DIR")) cache_dir = env;
    }
    const fs::path out_dir(st.reason_out);
    fs::create_directories(out_dir);
    if (cache_dir.empty()) cache_dir = (out_dir / "cache").string();
    ramf::ResponseCache cache{fs::path(cache_dir)};

    auto backend = ramf::make_backend(spec);
    std::vector<std::string> artifacts;

    if (!st.reason_zero_shot.empty()) {
        const auto mode = [&] {
            if (st.reason_zero_shot == "text") return ramf::ZeroShotMode::text_only;
            if (st.reason_zero_shot == "multimodal") return ramf::ZeroShotMode::multimodal;
            ramf::raise(ramf::ErrorKind::InvalidArgument,
                        "--zero-shot must be 'text' or 'multimodal'");
        }();
        if (mode == ramf::ZeroShotMode::multimodal && st.reason_frames != 5) {
            ramf::raise(ramf::ErrorKind::WrongFrameCount,
                        "multimodal zero-shot requires --frames 5, got " +
                            std::to_string(st.reason_frames));
        }
        std::ofstream csv(out_dir / "verdicts.csv");
        csv << "video_id,verdict\n";
        for (const auto& [id, transcript] : videos) {
            std::vector<std::string> frames;
            for (int i = 0; i < st.reason_frames; ++i) {
                frames.push_back("frame:" + id + ":" + std::to_string(i));
            }
            const int verdict = ramf::run_zero_shot(transcript, frames, *backend, templates, spec,
                                                    mode);
            csv << id << "," << verdict << "\n";
        }
        artifacts.push_back((out_dir / "verdicts.csv").string());
        std::cout << "verdicts: " << (out_dir / "verdicts.csv").string()
                  << " (backend requests: " << backend->request_count() << ")\n";
        write_run_records(out_dir, "reason", st.app.config_to_str(true, false), 0, artifacts);
        return 0;
    }

    const fs::path triples_dir = out_dir / "triples";
    fs::create_directories(triples_dir);
    std::atomic<size_t> next{0};
    std::mutex io_mutex;
    std::vector<std::string> failures;
    auto worker = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= videos.size()) return;
            const auto& [id, transcript] = videos[i];
            std::vector<std::string> frames;
            for (int f = 0; f < st.reason_frames; ++f) {
                frames.push_back("frame:" + id + ":" + std::to_string(f));
            }
            try {
                json record;
                if (st.reason_cot) {
                    record["video_id"] = id;
                    record["cot"] = ramf::generate_cot(id, transcript, frames, *backend, templates,
                                                       spec, &cache);
                    record["backend_tag"] = backend->tag();
                } else {
                    auto triple = ramf::generate_triple(id, transcript, frames, *backend,
                                                        templates, spec, &cache);
                    record["video_id"] = triple.video_id;
                    record["objective"] = triple.objective;
                    record["hate_assumed"] = triple.hate_assumed;
                    record["nonhate_assumed"] = triple.nonhate_assumed;
                    record["backend_tag"] = triple.backend_tag;
                    record["frame_count"] = triple.frame_count;
                    record["created_at"] = triple.created_at;
                }
                std::ofstream out(triples_dir / (id + ".json"));
                out << record.dump(2) << "\n";
            } catch (const ramf::Error& e) {
                std::lock_guard<std::mutex> lock(io_mutex);
                failures.push_back(id + ": " + e.what());
            }
        }
    };
    std::vector<std::thread> pool;
    const int inflight = std::max(1, st.reason_max_inflight);
    for (int t = 0; t < inflight; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (!failures.empty()) {
        ramf::raise(ramf::ErrorKind::BackendUnavailable,
                    std::to_string(failures.size()) + " videos failed; first: " + failures.front());
    }

    const int64_t stage_count = st.reason_cot ? 1 : 3;
    const int64_t requests = backend->request_count();
    const int64_t hits = stage_count * static_cast<int64_t>(videos.size()) - requests;
    artifacts.push_back(triples_dir.string());
    write_run_records(out_dir, "reason", st.app.config_to_str(true, false), 0, artifacts);
    std::cout << triples_dir.string() << " (backend requests: " << requests
              << ", cache hits: " << hits << ")\n";
    return 0;
}

int cmd_run(CliState& st) {
    std::vector<std::string> artifacts;
    ExperimentResult result = run_experiment(st.exp, &artifacts);
    write_run_records(fs::path(st.exp.out_dir), "run", st.app.config_to_str(true, false),
                      st.exp.seed, artifacts);
    print_metric_table_header();
    print_metric_row(st.exp.variant_name, result.summary);
    return 0;
}

int cmd_ablate(CliState& st) {
    std::vector<std::string> tags;
    std::stringstream ss(st.ablate_tags);
    std::string tag;
    while (std::getline(ss, tag, ',')) {
        if (!tag.empty()) tags.push_back(tag);
    }
    if (tags.empty()) ramf::raise(ramf::ErrorKind::InvalidArgument, "--tags must name variants");
    for (const auto& t : tags) (void)ramf::variant_from_name(t);  // validate before any training

    const fs::path base_out(st.exp.out_dir);
    std::vector<std::pair<std::string, ramf::MetricsSummary>> rows;
    std::vector<std::string> artifacts;
    for (const auto& name : tags) {
        ExperimentOptions opts = st.exp;
        opts.variant_name = name;
        opts.out_dir = (base_out / name).string();
        fs::create_directories(opts.out_dir);
        rows.push_back({name, run_experiment(opts, &artifacts).summary});
    }
    write_run_records(base_out, "ablate", st.app.config_to_str(true, false), st.exp.seed,
                      artifacts);
    print_metric_table_header();
    for (const auto& [name, summary] : rows) print_metric_row(name, summary);
    return 0;
}

int cmd_profile(CliState& st) {
    const ramf::Variant variant = ramf::variant_from_name(st.profile_variant);
    auto specs = preset_specs(st.profile_preset);
    ramf::Model model =
        ramf::make_variant(preset_model_config(st.profile_preset, variant, specs), st.profile_seed);
    ramf::FeatureBundle probe = synthetic_probe_bundle(specs, st.profile_seed);
    ramf::EfficiencyReport report = ramf::profile(model, probe, st.profile_runs);

    std::printf("variant          %s (%s preset)\n", st.profile_variant.c_str(),
                st.profile_preset.c_str());
    std::printf("parameters       %ld (%.2fM)\n", static_cast<long>(report.param_count),
                report.param_count / 1e6);
    std::printf("flops/forward    %ld (%.3fG, MAC=2 ops; bias/softmax/norm excluded)\n",
                static_cast<long>(report.flops_per_forward), report.flops_per_forward / 1e9);
    std::printf("latency/sample   %.6f s (mean over %d warm runs)\n", report.latency_per_sample_s,
                report.latency_runs);

    if (!st.profile_out.empty()) {
        const fs::path out_dir(st.profile_out);
        fs::create_directories(out_dir);
        json j;
        j["variant"] = st.profile_variant;
        j["preset"] = st.profile_preset;
        j["param_count"] = report.param_count;
        j["flops_per_forward"] = report.flops_per_forward;
        j["latency_per_sample_s"] = report.latency_per_sample_s;
        j["latency_runs"] = report.latency_runs;
        std::ofstream out(out_dir / "efficiency.json");
        out << j.dump(2) << "\n";
        write_run_records(out_dir, "profile", st.app.config_to_str(true, false), st.profile_seed,
                          {(out_dir / "efficiency.json").string()});
    }
    return 0;
}

int cmd_contrib(CliState& st) {
    ramf::Model model = ramf::load_checkpoint(st.contrib_checkpoint);
    auto manifest = ramf::load_manifest(st.contrib_data);
    ramf::Dataset data = ramf::Dataset::load(manifest);
    auto series = ramf::contribution_trend(model, data);

    const fs::path out_path(st.contrib_out);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    std::ofstream csv(out_path);
    if (!csv) ramf::raise(ramf::ErrorKind::IoError, "cannot write " + st.contrib_out);
    csv << "video_id,label,hate_contrib,nonhate_contrib\n";
    double hate_mean[2] = {0, 0};
    int counts[2] = {0, 0};
    for (const auto& p : series) {
        csv << p.video_id << "," << p.label << "," << p.hate_contribution << ","
            << p.nonhate_contribution << "\n";
        hate_mean[p.label] += p.hate_contribution;
        ++counts[p.label];
    }
    if (!st.contrib_traces.empty()) {
        std::ofstream traces(st.contrib_traces);
        for (const auto& b : data.bundles) {
            ramf::ForwardTraces tr;
            ramf::predict(model, b, &tr);
            json j;
            j["video_id"] = b.video_id;
            j["label"] = b.label;
            j["layer2_A"] = tr.layer2.pre_mix.data;    // head-major, row-major
            j["layer2_A_mixed"] = tr.layer2.mixed.data;
            j["heads"] = tr.layer2.num_heads;
            j["seq_len"] = tr.layer2.seq_len;
            traces << j.dump() << "\n";
        }
    }
    for (int label : {0, 1}) {
        if (counts[label]) hate_mean[label] /= counts[label];
    }
    std::cout << st.contrib_out << " (mean hate contribution: non-hate " << hate_mean[0]
              << ", hate " << hate_mean[1] << ")\n";
    return 0;
}

void build_app(CliState& st) {
    st.app.require_subcommand(1);
    st.app.set_config("--config", "", "TOML config file; command-line flags override it");

    auto* synth = st.app.add_subcommand("synth", "Generate a synthetic feature dataset");
    synth->add_option("--n", st.synth_n, "number of bundles")->required();
    synth->add_option("--signal", st.synth_signal, "planted signal strength");
    synth->add_option("--seed", st.synth_seed, "generator seed");
    synth->add_option("--out", st.synth_out, "output directory")->required();
    synth->add_option("--preset", st.synth_preset, "feature dims: desk|paper");

    auto* reason = st.app.add_subcommand("reason", "Run the three-stage reasoning pipeline");
    reason->add_option("--data", st.reason_data, "dataset manifest providing video ids");
    reason->add_option("--transcripts", st.reason_transcripts, "JSON map of id -> transcript");
    reason->add_option("--out", st.reason_out, "output directory")->required();
    reason->add_option("--backend", st.reason_backend, "mock|http");
    reason->add_flag("--mock", st.reason_mock, "shorthand for --backend mock");
    reason->add_option("--endpoint", st.reason_endpoint, "http backend endpoint URL");
    reason->add_option("--frames", st.reason_frames, "frames per video");
    reason->add_option("--cache-dir", st.reason_cache_dir,
                       "response cache directory (default: $RAMF_CACHE_DIR or <out>/cache)");
    reason->add_option("--templates", st.reason_templates_dir, "directory of prompt templates");
    reason->add_option("--zero-shot", st.reason_zero_shot,
                       "classify instead of reasoning: text|multimodal");
    reason->add_option("--max-inflight", st.reason_max_inflight, "parallel requests");
    reason->add_flag("--cot", st.reason_cot, "generate a single CoT text instead of the triple");

    auto* run = st.app.add_subcommand("run", "Five-fold training and evaluation");
    run->add_option("--data", st.exp.data_path, "dataset manifest")->required();
    run->add_option("--variant", st.exp.variant_name, "model variant");
    run->add_option("--out", st.exp.out_dir, "output directory")->required();
    run->add_option("--seed", st.exp.seed, "experiment seed");
    run->add_option("--epochs", st.exp.epochs, "training epochs");
    run->add_option("--batch", st.exp.batch_size, "batch size");
    run->add_option("--lr", st.exp.lr, "Adam learning rate");
    run->add_option("--heads", st.exp.heads, "attention heads");
    run->add_option("--preset", st.exp.preset, "model dims: auto|desk|paper");
    run->add_flag("--no-causal", st.exp.no_causal, "disable the attention mask");

    auto* ablate = st.app.add_subcommand("ablate", "Run several variants back to back");
    ablate->add_option("--data", st.exp.data_path, "dataset manifest")->required();
    ablate->add_option("--tags", st.ablate_tags, "comma-separated variant names")->required();
    ablate->add_option("--out", st.exp.out_dir, "output directory")->required();
    ablate->add_option("--seed", st.exp.seed, "experiment seed");
    ablate->add_option("--epochs", st.exp.epochs, "training epochs");
    ablate->add_option("--batch", st.exp.batch_size, "batch size");
    ablate->add_option("--lr", st.exp.lr, "Adam learning rate");
    ablate->add_option("--heads", st.exp.heads, "attention heads");
    ablate->add_option("--preset", st.exp.preset, "model dims: auto|desk|paper");

    auto* profile = st.app.add_subcommand("profile", "Parameter, FLOP and latency report");
    profile->add_option("--variant", st.profile_variant, "model variant");
    profile->add_option("--preset", st.profile_preset, "model dims: desk|paper");
    profile->add_option("--runs", st.profile_runs, "latency timing runs");
    profile->add_option("--seed", st.profile_seed, "init seed");
    profile->add_option("--out", st.profile_out, "optional output directory");

    auto* contrib = st.app.add_subcommand("contrib", "Reasoning-contribution series from a checkpoint");
    contrib->add_option("--checkpoint", st.contrib_checkpoint, "checkpoint stem (no extension)")
        ->required();
    contrib->add_option("--data", st.contrib_data, "dataset manifest")->required();
    contrib->add_option("--out", st.contrib_out, "output CSV path")->required();
    contrib->add_option("--dump-traces", st.contrib_traces,
                        "optional JSONL dump of layer-2 attention maps");
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CliState st;
    build_app(st);

    std::vector<const char*> argv;
    argv.push_back("ramf");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        st.app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return st.app.exit(e);
    } catch (const CLI::ParseError& e) {
        st.app.exit(e);
        return 2;
    }

    try {
        if (st.app.got_subcommand("synth")) return cmd_synth(st);
        if (st.app.got_subcommand("reason")) return cmd_reason(st);
        if (st.app.got_subcommand("run")) return cmd_run(st);
        if (st.app.got_subcommand("ablate")) return cmd_ablate(st);
        if (st.app.got_subcommand("profile")) return cmd_profile(st);
        if (st.app.got_subcommand("contrib")) return cmd_contrib(st);
    } catch (const ramf::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace ramf_cli
