// Command-line front end: one subcommand per pipeline stage plus the
// config-driven sweep, robustness and alignment experiments.

#include <cstdio>
#include <cstring>
#include <iostream>

#include <CLI11.hpp>

#include "dsu/corpusio.hpp"
#include "dsu/error.hpp"
#include "dsu/experiment.hpp"
#include "dsu/kernels.hpp"
#include "dsu/perturb.hpp"
#include "dsu/phonalign.hpp"
#include "dsu/quantizer.hpp"
#include "dsu/synthkit.hpp"
#include "dsu/transformer.hpp"
#include "dsu/unitlm.hpp"
#include "dsu/unitstream.hpp"

namespace {

using namespace dsu;

struct Globals {
    std::string config;
    std::uint64_t seed = 42;
    bool seed_given = false;
    std::string out;
    std::uint32_t jobs = 1;
    bool jobs_given = false;
};

[[noreturn]] void usage_error(const std::string& msg) {
    throw Error(ErrorCode::InvalidConfig, msg);
}

Config load_config(const Globals& g) {
    if (g.config.empty()) {
        usage_error("this subcommand needs --config");
    }
    Config c = Config::load(g.config);
    if (g.seed_given) {
        c.set("experiment.seeds", std::vector<Config::Scalar>{static_cast<std::int64_t>(g.seed)});
    }
    if (!g.out.empty()) {
        c.set("experiment.out_dir", Config::Scalar{fs::absolute(g.out).string()});
    }
    if (g.jobs_given) {
        c.set("experiment.jobs", Config::Scalar{static_cast<std::int64_t>(g.jobs)});
    }
    return c;
}

ExperimentConfig experiment(const Globals& g) { return ExperimentConfig::from(load_config(g)); }

// LM settings from [lm] when a config is given, defaults otherwise.
ExperimentConfig lm_settings(const Globals& g) {
    if (g.config.empty()) {
        ExperimentConfig e;
        e.train.seed = g.seed;
        e.lm.seed = g.seed;
        return e;
    }
    Config c = load_config(g);
    if (!c.has("data.manifest")) {
        c.set("data.manifest", Config::Scalar{std::string("-")});
    }
    return ExperimentConfig::from(c);
}

std::string require_out(const Globals& g, const char* what) {
    if (g.out.empty()) {
        usage_error(std::string("--out is required (") + what + ")");
    }
    return g.out;
}

std::vector<FeatureMatrix> read_split(const std::string& manifest, const std::string& split) {
    const auto entries = load_manifest(manifest).split(split);
    if (entries.empty()) {
        throw Error(ErrorCode::EmptyCorpus, "no '" + split + "' entries in " + manifest);
    }
    std::vector<FeatureMatrix> feats;
    for (const auto& e : entries) {
        feats.push_back(read_feature_file(e.feature_path));
        feats.back().utt_id = e.utt_id;
    }
    return feats;
}

bool has_magic(const std::vector<std::uint8_t>& bytes, const char* magic) {
    return bytes.size() >= 4 && std::memcmp(bytes.data(), magic, 4) == 0;
}

void print_table(const std::string& path) {
    std::cout << read_text_file(path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Discrete speech unit toolkit"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "Experiment config (TOML subset)");
    auto* seed_opt = app.add_option("--seed", g.seed, "Seed (default 42)");
    app.add_option("--out", g.out, "Output file or directory");
    auto* jobs_opt = app.add_option("--jobs", g.jobs, "Worker count")->check(CLI::PositiveNumber);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with ground truth");
    SynthSpec spec;
    SynthDatasetOptions dopt;
    synth->add_option("--n-train", dopt.n_train, "Training utterances");
    synth->add_option("--n-test", dopt.n_test, "Test utterances");
    synth->add_option("--frames", dopt.frames_per_utt, "Frames per utterance");
    synth->add_option("--n-phonemes", spec.n_phonemes, "Hidden states");
    synth->add_option("--dim", spec.dim, "Feature dimension");
    synth->add_option("--sigma", spec.emission_sigma, "Emission standard deviation");
    synth->add_option("--dwell", spec.mean_dwell_frames, "Mean state dwell in frames");
    synth->add_option("--mean-scale", spec.mean_scale, "Spread of the state means");
    bool no_audio = false;
    synth->add_flag("--no-audio", no_audio, "Skip waveforms");

    // kmeans-train
    auto* km = app.add_subcommand("kmeans-train", "Fit a k-means codebook");
    std::string manifest;
    std::string split = "train";
    std::uint32_t k = 0;
    FitConfig fit_cfg;
    std::string tag = "corpus";
    km->add_option("--manifest", manifest, "Manifest")->required();
    km->add_option("--split", split, "Split tag");
    km->add_option("--k", k, "Codebook size")->required();
    km->add_option("--max-iters", fit_cfg.max_iters, "Lloyd iterations");
    km->add_option("--tol", fit_cfg.tol, "Relative inertia tolerance");
    km->add_option("--batch-size", fit_cfg.batch_size, "Mini-batch size (0 = full batch)");
    km->add_option("--n-init", fit_cfg.n_init, "Restarts");
    km->add_option("--tag", tag, "Source tag stored in the codebook");

    // quantize
    auto* qz = app.add_subcommand("quantize", "Map features to unit sequences");
    std::string codebook;
    bool dedup_flag = false;
    qz->add_option("--manifest", manifest, "Manifest")->required();
    qz->add_option("--split", split, "Split tag");
    qz->add_option("--codebook", codebook, "Codebook (.kmcb)")->required();
    qz->add_flag("--dedup", dedup_flag, "Collapse adjacent repeats");

    // lm-train
    auto* lmt = app.add_subcommand("lm-train", "Train a unit language model");
    std::string units;
    std::string arch = "transformer";
    std::uint32_t order = 3;
    double alpha = 1.0;
    std::string log_path;
    lmt->add_option("--units", units, "Training units file")->required();
    lmt->add_option("--k", k, "Codebook size")->required();
    lmt->add_option("--arch", arch, "transformer or ngram")->check(CLI::IsMember({"transformer", "ngram"}));
    lmt->add_option("--order", order, "n-gram order");
    lmt->add_option("--alpha", alpha, "n-gram add-alpha smoothing");
    lmt->add_option("--log", log_path, "Training log CSV (step,loss)");

    // lm-eval
    auto* lme = app.add_subcommand("lm-eval", "Per-token NLL of a model on a units file");
    std::string model_path;
    lme->add_option("--model", model_path, "Model (.ulmc or n-gram file)")->required();
    lme->add_option("--units", units, "Evaluation units file")->required();
    lme->add_option("--k", k, "Codebook size")->required();

    // utilization
    auto* util = app.add_subcommand("utilization", "Cluster perplexity and utilization");
    util->add_option("--units", units, "Units file")->required();
    util->add_option("--k", k, "Codebook size")->required();

    // align
    auto* align = app.add_subcommand("align", "Phoneme/unit confusion analysis");
    std::string tier = "phones";
    align->add_option("--manifest", manifest, "Manifest (ignored with --config)");
    align->add_option("--split", split, "Split tag");
    align->add_option("--codebook", codebook, "Codebook (ignored with --config)");
    align->add_option("--tier", tier, "TextGrid tier");

    // perturb
    auto* pert = app.add_subcommand("perturb", "Apply an acoustic perturbation to waveforms");
    std::string kind_name = "noise_h";
    std::vector<double> snr_range;
    std::vector<double> ratio_range;
    pert->add_option("--manifest", manifest, "Manifest")->required();
    pert->add_option("--split", split, "Split tag");
    pert->add_option("--kind", kind_name, "clean, noise_h, noise_l or pitch_shift");
    pert->add_option("--snr-db", snr_range, "SNR range lo hi")->expected(2);
    pert->add_option("--ratio", ratio_range, "Pitch ratio range lo hi")->expected(2);

    auto* sweep = app.add_subcommand("sweep", "NLL over k and training steps");
    auto* robust = app.add_subcommand("robustness", "NLL under acoustic perturbations");

    CLI11_PARSE(app, argc, argv);
    g.seed_given = seed_opt->count() > 0;
    g.jobs_given = jobs_opt->count() > 0;

    try {
        if (*sweep || *robust || (*align && !g.config.empty())) {
            // Worker count is handled by the experiment runner.
        } else if (g.jobs_given) {
            kernels::set_threads(static_cast<int>(g.jobs));
        }

        if (*synth) {
            spec.seed = g.seed;
            const auto model = build_synth_model(spec);
            dopt.with_audio = !no_audio;
            const auto path = write_synth_dataset(model, dopt, require_out(g, "dataset directory"));
            std::cout << "wrote " << path.string() << "\n";
        } else if (*km) {
            fit_cfg.seed = g.seed;
            const auto feats = read_split(manifest, split);
            const auto res = fit_detailed(pool_frames(feats), k, fit_cfg, tag);
            save_codebook(require_out(g, "codebook path"), res.codebook);
            std::printf("k=%u frames=%llu inertia=%s iterations=%u converged=%s\n", k,
                        static_cast<unsigned long long>(res.codebook.meta.n_training_frames),
                        format_double(res.codebook.meta.inertia).c_str(), res.iterations,
                        res.converged ? "yes" : "no");
        } else if (*qz) {
            const Codebook cb = load_codebook(codebook);
            std::vector<UnitSequence> seqs;
            for (const auto& f : read_split(manifest, split)) {
                auto s = quantize(f, cb);
                seqs.push_back(dedup_flag ? dedup(s) : std::move(s));
            }
            write_units_file(require_out(g, "units path"), seqs);
            std::printf("quantized %zu utterances\n", seqs.size());
        } else if (*lmt) {
            const auto seqs = read_units_file(units);
            VocabMap vocab;
            vocab.k = k;
            const auto streams = tokenize_corpus(seqs, vocab);
            const std::string out = require_out(g, "model path");
            if (arch == "ngram") {
                save_ngram(out, train_ngram(streams, order, vocab.vocab_size(), alpha));
                std::printf("trained order-%u n-gram, V=%u\n", order, vocab.vocab_size());
            } else {
                ExperimentConfig e = lm_settings(g);
                TransformerConfig mc = e.lm;
                mc.lora.reset();
                mc.vocab_size = vocab.vocab_size();
                mc.seed = g.seed;
                TrainConfig tc = e.train;
                tc.seed = g.seed;
                TransformerModel model(mc);
                const auto losses = train(model, streams, tc);
                save_transformer(out, model);
                if (!log_path.empty()) {
                    std::string log = "step,loss\n";
                    for (std::size_t i = 0; i < losses.size(); ++i) {
                        log += std::to_string(i + 1) + "," + format_double(losses[i]) + "\n";
                    }
                    write_text_file(log_path, log);
                }
                std::printf("trained %zu parameters for %u steps, final loss %.4f\n",
                            model.parameter_count(), tc.steps, losses.back());
            }
        } else if (*lme) {
            const auto seqs = read_units_file(units);
            const auto bytes = read_file_bytes(model_path);
            std::optional<NGramModel> ngram;
            std::optional<TransformerModel> tf;
            const LanguageModel* lm = nullptr;
            if (has_magic(bytes, "ULMC")) {
                tf.emplace(parse_transformer_bytes(bytes));
                lm = &*tf;
            } else {
                ngram.emplace(parse_ngram_bytes(bytes));
                lm = &*ngram;
            }
            if (lm->vocab_size() < k) {
                throw Error(ErrorCode::InvalidConfig, "model vocabulary is smaller than k");
            }
            VocabMap vocab;
            vocab.k = k;
            vocab.base_size = lm->vocab_size() - k;
            std::vector<std::string> ids;
            for (const auto& s : seqs) {
                ids.push_back(s.utt_id);
            }
            const auto rep = eval_nll(*lm, tokenize_corpus(seqs, vocab), ids);
            std::printf("mean_nll=%.6f tokens=%llu\n", rep.mean_nll,
                        static_cast<unsigned long long>(rep.token_count));
            if (!g.out.empty()) {
                std::string csv = "utt_id,tokens,nll_sum,nll_mean\n";
                for (const auto& u : rep.per_utterance) {
                    csv += u.utt_id + "," + std::to_string(u.tokens) + "," + format_double(u.sum_nll) + "," +
                           format_double(u.mean()) + "\n";
                }
                write_text_file(g.out, csv);
            }
        } else if (*util) {
            const auto seqs = read_units_file(units);
            const auto hist = unit_histogram(seqs, k);
            const auto p = cluster_perplexity(hist);
            std::printf("k=%u tokens=%llu perplexity=%.4f utilization_pct=%.2f\n", k,
                        static_cast<unsigned long long>(hist.total), p.perplexity, p.utilization_pct);
            if (!g.out.empty()) {
                write_text_file(g.out, histogram_csv(hist));
            }
        } else if (*align) {
            if (!g.config.empty()) {
                const auto rep = run_alignment(experiment(g));
                print_table((rep.summary_path.parent_path() / "purity.txt").string());
            } else {
                if (manifest.empty() || codebook.empty()) {
                    usage_error("align needs --config, or --manifest and --codebook");
                }
                const fs::path out = require_out(g, "output directory");
                const Codebook cb = load_codebook(codebook);
                std::vector<UnitSequence> seqs;
                std::vector<AlignmentTrack> tracks;
                for (const auto& e : load_manifest(manifest).split(split)) {
                    if (!e.alignment_path) {
                        throw Error(ErrorCode::MissingAlignment, "utterance '" + e.utt_id + "' has no alignment");
                    }
                    seqs.push_back(quantize(read_feature_file(e.feature_path), cb));
                    tracks.push_back(load_alignment(*e.alignment_path, e.utt_id, tier));
                }
                if (seqs.empty()) {
                    throw Error(ErrorCode::EmptyCorpus, "no '" + split + "' entries in " + manifest);
                }
                const auto table = accumulate_corpus(seqs, tracks, cb.k);
                const auto m = build_confusion(table);
                const auto heat = render_heatmap(m);
                write_text_file(out / "confusion.csv", confusion_csv(m));
                write_text_file(out / "heatmap.svg", heat.svg);
                write_text_file(out / "heatmap.csv", heat.csv);
                std::printf("purity=%.4f\n", purity(m, table));
            }
        } else if (*pert) {
            PerturbSpec ps;
            ps.kind = parse_perturb_kind(kind_name);
            ps.seed = g.seed;
            if (ps.kind == PerturbKind::NoiseL) {
                ps.snr_db_range = PerturbSpec::noise_l().snr_db_range;
            }
            if (snr_range.size() == 2) {
                ps.snr_db_range = {snr_range[0], snr_range[1]};
            }
            if (ratio_range.size() == 2) {
                ps.pitch_ratio_range = {ratio_range[0], ratio_range[1]};
            }
            const fs::path out = require_out(g, "output directory");
            const auto entries = load_manifest(manifest).split(split);
            std::string jsonl;
            for (std::size_t i = 0; i < entries.size(); ++i) {
                const auto& e = entries[i];
                if (!e.wav_path) {
                    throw Error(ErrorCode::MissingWav, "utterance '" + e.utt_id + "' has no waveform");
                }
                auto [w, rec] = apply_perturbation(read_wav(*e.wav_path), ps, i, e.utt_id);
                write_wav(out / "wav" / (e.utt_id + ".wav"), w);
                jsonl += rec.to_json() + "\n";
            }
            write_text_file(out / "perturb.jsonl", jsonl);
            std::printf("perturbed %zu utterances (%s)\n", entries.size(), std::string(to_string(ps.kind)).c_str());
        } else if (*sweep) {
            const auto rep = run_sweep(experiment(g));
            print_table((rep.csv_path.parent_path() / "sweep.txt").string());
        } else if (*robust) {
            const auto rep = run_robustness(experiment(g));
            print_table((rep.csv_path.parent_path() / "robustness.txt").string());
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
