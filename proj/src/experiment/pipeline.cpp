#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <thread>

#include "dsu/corpusio.hpp"
#include "dsu/error.hpp"
#include "dsu/experiment.hpp"
#include "dsu/kernels.hpp"
#include "dsu/phonalign.hpp"
#include "text_util.hpp"

namespace dsu {

namespace {

// Rethrows module errors with the (cell, stage) they came from.
template <class F>
auto in_stage(const std::string& where, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        std::string what = e.what();
        const auto colon = what.find(": ");
        throw Error(e.code(), where + ": " + (colon == std::string::npos ? what : what.substr(colon + 2)));
    }
}

bool sentinel_ok(const fs::path& p, const std::string& expected) {
    std::error_code ec;
    if (!fs::exists(p, ec)) {
        return false;
    }
    return read_text_file(p) == expected;
}

std::string cell_hash(const ExperimentConfig& cfg, const CodebookSource& src, std::uint32_t k,
                      std::uint64_t seed) {
    const std::string s = cfg.cell_canonical + "source = " + src.tag + "|" + src.manifest.string() +
                          "\nk = " + std::to_string(k) + "\nseed = " + std::to_string(seed) + "\n";
    return hex64(fnv1a64(s)) + "\n";
}

std::vector<ManifestEntry> split_entries(const fs::path& manifest, const std::string& split) {
    auto entries = load_manifest(manifest).split(split);
    if (entries.empty()) {
        throw Error(ErrorCode::EmptyCorpus, "manifest " + manifest.string() + " has no '" + split +
                                                "' entries");
    }
    return entries;
}

std::vector<FeatureMatrix> load_features(const std::vector<ManifestEntry>& entries) {
    std::vector<FeatureMatrix> out(entries.size());
    std::vector<std::exception_ptr> errors(entries.size());
    const auto n = static_cast<std::int64_t>(entries.size());
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            out[i] = read_feature_file(entries[i].feature_path);
            out[i].utt_id = entries[i].utt_id;
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return out;
}

std::vector<UnitSequence> quantize_all(const std::vector<FeatureMatrix>& feats, const Codebook& cb,
                                       bool dedup_units) {
    std::vector<UnitSequence> out(feats.size());
    std::vector<std::exception_ptr> errors(feats.size());
    const auto n = static_cast<std::int64_t>(feats.size());
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            out[i] = quantize(feats[i], cb);
            if (dedup_units) {
                out[i] = dedup(out[i]);
            }
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return out;
}

std::vector<std::string> ids_of(const std::vector<UnitSequence>& seqs) {
    std::vector<std::string> ids;
    ids.reserve(seqs.size());
    for (const auto& s : seqs) {
        ids.push_back(s.utt_id);
    }
    return ids;
}

// Bigram "text" over tokens [3, vocab): each token has four allowed successors.
std::vector<TokenStream> synthetic_text(std::uint32_t vocab, std::uint64_t seed) {
    constexpr std::size_t kStreams = 256;
    constexpr std::size_t kLength = 64;
    constexpr std::size_t kFanout = 4;
    Rng rng(seed);
    const std::uint32_t n = vocab - 3;
    std::vector<Token> succ(static_cast<std::size_t>(vocab) * kFanout);
    for (auto& s : succ) {
        s = 3 + static_cast<Token>(rng.below(n));
    }
    std::vector<TokenStream> out(kStreams);
    for (auto& s : out) {
        s.push_back(0);
        Token x = 3 + static_cast<Token>(rng.below(n));
        for (std::size_t t = 0; t < kLength; ++t) {
            s.push_back(x);
            x = succ[x * kFanout + rng.below(kFanout)];
        }
        s.push_back(1);
    }
    return out;
}

std::vector<std::pair<std::uint32_t, double>> read_nll_csv(const fs::path& p) {
    std::vector<std::pair<std::uint32_t, double>> out;
    const std::string body = read_text_file(p);
    for (const auto line : text::split_lines(body)) {
        if (line.empty() || line.front() == '#' || line.rfind("step,", 0) == 0) {
            continue;
        }
        const auto f = text::split(line, ',');
        const auto step = f.size() == 2 ? text::parse_u64(f[0]) : std::nullopt;
        const auto nll = f.size() == 2 ? text::parse_double(f[1]) : std::nullopt;
        if (!step || !nll) {
            throw Error(ErrorCode::MalformedRecord, "bad row in " + p.string());
        }
        out.emplace_back(static_cast<std::uint32_t>(*step), *nll);
    }
    return out;
}

template <class F>
void run_pool(std::size_t n, std::uint32_t jobs, F&& f) {
    const std::size_t workers = std::min<std::size_t>(jobs, n);
    std::vector<std::exception_ptr> errors(n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            f(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            // Cells already run side by side; keep each one single-threaded.
            kernels::set_threads(1);
            while (!failed) {
                const std::size_t i = next++;
                if (i >= n) {
                    break;
                }
                try {
                    f(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                    failed = true;
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

std::string csv_header(const ExperimentConfig& cfg, const std::string& columns) {
    return cfg.provenance() + "\n" + columns + "\n";
}

CodebookSource main_source(const ExperimentConfig& cfg) { return {cfg.encoder_tag, cfg.manifest}; }

std::vector<AlignmentTrack> load_alignments(const std::vector<ManifestEntry>& entries,
                                            const std::string& tier) {
    std::map<std::string, std::map<std::string, AlignmentTrack>> csv_cache;
    std::vector<AlignmentTrack> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        if (!e.alignment_path) {
            throw Error(ErrorCode::MissingAlignment, "utterance '" + e.utt_id + "' has no alignment");
        }
        const fs::path p(*e.alignment_path);
        auto ext = p.extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".csv") {
            auto it = csv_cache.find(*e.alignment_path);
            if (it == csv_cache.end()) {
                std::map<std::string, AlignmentTrack> by_id;
                for (auto& t : parse_alignment_csv(read_text_file(p))) {
                    by_id.emplace(t.utt_id, std::move(t));
                }
                it = csv_cache.emplace(*e.alignment_path, std::move(by_id)).first;
            }
            const auto jt = it->second.find(e.utt_id);
            if (jt == it->second.end()) {
                throw Error(ErrorCode::MissingAlignment, "no alignment rows for '" + e.utt_id + "' in " +
                                                             p.string());
            }
            out.push_back(jt->second);
        } else {
            out.push_back(load_alignment(p, e.utt_id, tier));
        }
    }
    return out;
}

}  // namespace

fs::path cell_dir(const ExperimentConfig& cfg, const CodebookSource& src, std::uint32_t k,
                  std::uint64_t seed) {
    return cfg.out_dir / "cells" / (src.tag + "_k" + std::to_string(k) + "_s" + std::to_string(seed));
}

Codebook ensure_codebook(const ExperimentConfig& cfg, const CodebookSource& src, std::uint32_t k,
                         std::uint64_t seed, bool* recomputed) {
    const fs::path dir = cell_dir(cfg, src, k, seed);
    const fs::path sentinel = dir / "codebook.done";
    const fs::path path = dir / "codebook.kmcb";
    const std::string hash = cell_hash(cfg, src, k, seed);
    const std::string where = dir.filename().string() + " (codebook)";
    if (recomputed) {
        *recomputed = false;
    }
    if (sentinel_ok(sentinel, hash) && fs::exists(path)) {
        return in_stage(where, [&] { return load_codebook(path); });
    }
    return in_stage(where, [&] {
        fs::remove(sentinel);
        fs::remove(dir / "lm.done");
        const auto feats = load_features(split_entries(src.manifest, cfg.train_split));
        FitConfig fc = cfg.fit;
        fc.seed = seed;
        Codebook cb = fit(pool_frames(feats), k, fc, src.tag);
        save_codebook(path, cb);
        write_text_file(sentinel, hash);
        if (recomputed) {
            *recomputed = true;
        }
        return cb;
    });
}

CellResult ensure_cell(const ExperimentConfig& cfg, const CodebookSource& src, std::uint32_t k,
                       std::uint64_t seed) {
    CellResult r;
    r.dir = cell_dir(cfg, src, k, seed);
    r.key = r.dir.filename().string();
    const Codebook cb = ensure_codebook(cfg, src, k, seed, &r.recomputed_codebook);
    const fs::path sentinel = r.dir / "lm.done";
    const std::string hash = cell_hash(cfg, src, k, seed);
    if (sentinel_ok(sentinel, hash)) {
        r.nll = in_stage(r.key + " (lm)", [&] { return read_nll_csv(r.dir / "nll.csv"); });
        return r;
    }
    r.recomputed_lm = true;
    fs::remove(sentinel);

    const auto train_seqs = in_stage(r.key + " (quantize)", [&] {
        return quantize_all(load_features(split_entries(cfg.manifest, cfg.train_split)), cb, cfg.dedup);
    });
    const auto eval_seqs = in_stage(r.key + " (quantize)", [&] {
        return quantize_all(load_features(split_entries(cfg.manifest, cfg.eval_split)), cb, cfg.dedup);
    });
    write_units_file(r.dir / "train.units", train_seqs);
    write_units_file(r.dir / "eval.units", eval_seqs);

    in_stage(r.key + " (lm)", [&] {
        VocabMap vocab;
        vocab.k = k;
        std::optional<TransformerModel> model;
        if (cfg.lm.lora) {
            TransformerConfig base = cfg.lm;
            base.lora.reset();
            base.vocab_size = cfg.pretrain_vocab;
            base.seed = seed;
            model.emplace(base);
            TrainConfig pt = cfg.train;
            pt.steps = cfg.pretrain_steps;
            pt.seed = derive_seed(seed, 2);
            const auto text_streams = synthetic_text(cfg.pretrain_vocab, derive_seed(seed, 5));
            train(*model, text_streams, pt);
            model->extend_vocab(cfg.pretrain_vocab + k, derive_seed(seed, 3));
            model->attach_lora(*cfg.lm.lora, derive_seed(seed, 4), cfg.pretrain_vocab);
            vocab.base_size = cfg.pretrain_vocab;
        } else {
            TransformerConfig mc = cfg.lm;
            mc.vocab_size = vocab.vocab_size();
            mc.seed = seed;
            model.emplace(mc);
        }
        const auto train_tokens = tokenize_corpus(train_seqs, vocab);
        const auto eval_tokens = tokenize_corpus(eval_seqs, vocab);
        const auto eval_ids = ids_of(eval_seqs);

        TrainConfig tc = cfg.train;
        tc.seed = seed;
        std::vector<std::pair<std::uint32_t, double>> nll;
        std::optional<NLLReport> last;
        const auto losses = train(*model, train_tokens, tc, [&](std::uint32_t step, double, const TransformerModel& m) {
            if (std::binary_search(cfg.eval_steps.begin(), cfg.eval_steps.end(), step)) {
                last = eval_nll(m, eval_tokens, eval_ids);
                nll.emplace_back(step, last->mean_nll);
            }
        });

        std::string log = csv_header(cfg, "step,loss");
        for (std::size_t i = 0; i < losses.size(); ++i) {
            log += std::to_string(i + 1) + "," + format_double(losses[i]) + "\n";
        }
        write_text_file(r.dir / "train_log.csv", log);
        std::string table = csv_header(cfg, "step,nll");
        for (const auto& [step, v] : nll) {
            table += std::to_string(step) + "," + format_double(v) + "\n";
        }
        write_text_file(r.dir / "nll.csv", table);
        std::string per_utt = csv_header(cfg, "utt_id,tokens,nll_sum");
        for (const auto& u : last->per_utterance) {
            per_utt += u.utt_id + "," + std::to_string(u.tokens) + "," + format_double(u.sum_nll) + "\n";
        }
        write_text_file(r.dir / "eval_per_utterance.csv", per_utt);
        save_transformer(r.dir / "lm.ulmc", *model);
        r.nll = std::move(nll);
    });
    write_text_file(sentinel, hash);
    return r;
}

SweepReport run_sweep(const ExperimentConfig& cfg) {
    const CodebookSource src = main_source(cfg);
    struct Job {
        std::uint32_t k;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const auto k : cfg.ks) {
        for (const auto s : cfg.seeds) {
            jobs.push_back({k, s});
        }
    }
    std::vector<CellResult> results(jobs.size());
    run_pool(jobs.size(), cfg.jobs, [&](std::size_t i) {
        results[i] = ensure_cell(cfg, src, jobs[i].k, jobs[i].seed);
    });

    SweepReport rep;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (results[i].recomputed_lm) {
            rep.recomputed.push_back(results[i].key);
        }
        for (const auto& [step, v] : results[i].nll) {
            rep.per_seed.push_back({cfg.encoder_tag, jobs[i].k, jobs[i].seed, step, v});
        }
    }
    for (const auto k : cfg.ks) {
        for (const auto step : cfg.eval_steps) {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto& row : rep.per_seed) {
                if (row.k == k && row.step == step) {
                    sum += row.nll;
                    ++n;
                }
            }
            if (n > 0) {
                rep.mean.push_back({cfg.encoder_tag, k, 0, step, sum / static_cast<double>(n)});
            }
        }
    }

    std::string csv = csv_header(cfg, "encoder_tag,k,step,nll");
    for (const auto& r : rep.mean) {
        csv += r.encoder_tag + "," + std::to_string(r.k) + "," + std::to_string(r.step) + "," +
               format_double(r.nll) + "\n";
    }
    std::string per_seed = csv_header(cfg, "encoder_tag,k,seed,step,nll");
    for (const auto& r : rep.per_seed) {
        per_seed += r.encoder_tag + "," + std::to_string(r.k) + "," + std::to_string(r.seed) + "," +
                    std::to_string(r.step) + "," + format_double(r.nll) + "\n";
    }
    std::vector<std::string> header{"encoder", "k"};
    for (const auto step : cfg.eval_steps) {
        header.push_back("step " + std::to_string(step));
    }
    std::vector<std::vector<std::string>> rows;
    for (const auto k : cfg.ks) {
        std::vector<std::string> row{cfg.encoder_tag, std::to_string(k)};
        for (const auto step : cfg.eval_steps) {
            const auto it = std::find_if(rep.mean.begin(), rep.mean.end(),
                                         [&](const SweepRow& r) { return r.k == k && r.step == step; });
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.3f", it->nll);
            row.push_back(buf);
        }
        rows.push_back(std::move(row));
    }
    rep.csv_path = cfg.out_dir / "sweep.csv";
    write_text_file(rep.csv_path, csv);
    write_text_file(cfg.out_dir / "sweep_per_seed.csv", per_seed);
    write_text_file(cfg.out_dir / "sweep.txt", cfg.provenance() + "\n" + format_text_table(header, rows));
    return rep;
}

RobustnessReport run_robustness(const ExperimentConfig& cfg) {
    if (!cfg.synth_model) {
        throw Error(ErrorCode::InvalidConfig,
                    "robustness needs data.synth_model to re-derive features from perturbed audio");
    }
    const SynthModel synth = synth_model_from_json(read_text_file(*cfg.synth_model));
    const auto eval_entries = split_entries(cfg.manifest, cfg.eval_split);
    for (const auto& e : eval_entries) {
        if (!e.wav_path) {
            throw Error(ErrorCode::MissingWav, "utterance '" + e.utt_id + "' has no waveform");
        }
    }
    const fs::path log_dir = cfg.out_dir / "robustness";

    // Features per condition; identical for every codebook source.
    std::map<PerturbKind, std::vector<FeatureMatrix>> features;
    for (const auto kind : cfg.conditions) {
        if (features.count(kind)) {
            continue;
        }
        if (kind == PerturbKind::Clean) {
            features[kind] = load_features(eval_entries);
            continue;
        }
        PerturbSpec spec;
        spec.kind = kind;
        spec.seed = cfg.perturb_seed;
        spec.snr_db_range = kind == PerturbKind::NoiseL ? cfg.noise_l_db : cfg.noise_h_db;
        spec.pitch_ratio_range = cfg.pitch_ratio;
        std::vector<FeatureMatrix> feats(eval_entries.size());
        std::vector<std::string> records(eval_entries.size());
        std::vector<std::exception_ptr> errors(eval_entries.size());
        const auto n = static_cast<std::int64_t>(eval_entries.size());
#pragma omp parallel for schedule(dynamic, 4)
        for (std::int64_t i = 0; i < n; ++i) {
            try {
                const auto& e = eval_entries[i];
                const Waveform w = read_wav(*e.wav_path);
                auto [pert, rec] = apply_perturbation(w, spec, static_cast<std::uint64_t>(i), e.utt_id);
                feats[i] = features_from_waveform(pert, synth, e.utt_id);
                records[i] = rec.to_json();
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
        for (const auto& e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
        std::string jsonl;
        for (const auto& r : records) {
            jsonl += r + "\n";
        }
        write_text_file(log_dir / (std::string(to_string(kind)) + ".jsonl"), jsonl);
        features[kind] = std::move(feats);
    }

    std::vector<CodebookSource> sources = cfg.sources;
    if (sources.empty()) {
        sources.push_back(main_source(cfg));
    }
    const std::uint32_t k = cfg.robustness_k;
    RobustnessReport rep;
    for (const auto& src : sources) {
        RobustnessRow row;
        row.source = src.tag;
        for (const auto seed : cfg.seeds) {
            const CellResult cell = ensure_cell(cfg, src, k, seed);
            const Codebook cb = load_codebook(cell.dir / "codebook.kmcb");
            const TransformerModel lm = load_transformer(cell.dir / "lm.ulmc");
            VocabMap vocab;
            vocab.k = k;
            vocab.base_size = lm.vocab_size() - k;
            for (const auto kind : cfg.conditions) {
                const auto seqs = in_stage(cell.key + " (" + std::string(to_string(kind)) + ")", [&] {
                    return quantize_all(features.at(kind), cb, cfg.dedup);
                });
                const auto report = eval_nll(lm, tokenize_corpus(seqs, vocab), ids_of(seqs));
                row.nll[kind] += report.mean_nll;
            }
        }
        for (auto& [kind, v] : row.nll) {
            v /= static_cast<double>(cfg.seeds.size());
        }
        rep.rows.push_back(std::move(row));
    }

    std::string columns = "source";
    std::vector<std::string> header{"source"};
    for (const auto kind : cfg.conditions) {
        columns += "," + std::string(to_string(kind));
        header.emplace_back(to_string(kind));
    }
    std::string csv = csv_header(cfg, columns);
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : rep.rows) {
        csv += r.source;
        std::vector<std::string> trow{r.source};
        for (const auto kind : cfg.conditions) {
            csv += "," + format_double(r.nll.at(kind));
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.3f", r.nll.at(kind));
            trow.push_back(buf);
        }
        csv += "\n";
        rows.push_back(std::move(trow));
    }
    rep.csv_path = cfg.out_dir / "robustness.csv";
    write_text_file(rep.csv_path, csv);
    write_text_file(cfg.out_dir / "robustness.txt", cfg.provenance() + "\n" + format_text_table(header, rows));
    return rep;
}

AlignmentReport run_alignment(const ExperimentConfig& cfg) {
    const auto entries = split_entries(cfg.manifest, cfg.eval_split);
    const auto tracks = load_alignments(entries, cfg.tier);
    const auto feats = load_features(entries);
    const CodebookSource src = main_source(cfg);
    const std::uint64_t seed = cfg.seeds.front();
    const auto ks = cfg.alignment_ks.empty() ? cfg.ks : cfg.alignment_ks;
    const fs::path dir = cfg.out_dir / "alignment";

    AlignmentReport rep;
    std::string csv = csv_header(cfg, "source,k,purity");
    std::vector<std::vector<std::string>> rows;
    for (const auto k : ks) {
        const Codebook cb = ensure_codebook(cfg, src, k, seed);
        const auto seqs = quantize_all(feats, cb, false);
        const auto table = in_stage("alignment k=" + std::to_string(k), [&] {
            return accumulate_corpus(seqs, tracks, k);
        });
        const auto m = build_confusion(table);
        const auto heat = render_heatmap(m);
        AlignmentRow row;
        row.source = src.tag;
        row.k = k;
        row.purity = purity(m, table);
        const std::string stem = src.tag + "_k" + std::to_string(k);
        row.csv = dir / (stem + ".confusion.csv");
        row.svg = dir / (stem + ".svg");
        write_text_file(row.csv, confusion_csv(m));
        write_text_file(row.svg, heat.svg);
        write_text_file(dir / (stem + ".heatmap.csv"), heat.csv);
        csv += row.source + "," + std::to_string(k) + "," + format_double(row.purity) + "\n";
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", row.purity);
        rows.push_back({row.source, std::to_string(k), buf});
        rep.rows.push_back(std::move(row));
    }
    rep.summary_path = dir / "purity.csv";
    write_text_file(rep.summary_path, csv);
    write_text_file(dir / "purity.txt",
                    cfg.provenance() + "\n" + format_text_table({"source", "k", "purity"}, rows));
    return rep;
}

}  // namespace dsu
