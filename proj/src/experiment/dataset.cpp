#include <exception>

#include "dsu/corpusio.hpp"
#include "dsu/error.hpp"
#include "dsu/experiment.hpp"

namespace dsu {

fs::path write_synth_dataset(const SynthModel& model, const SynthDatasetOptions& opt, const fs::path& dir) {
    if (opt.n_train + opt.n_test == 0) {
        throw Error(ErrorCode::InvalidSpec, "dataset needs at least one utterance");
    }
    const SynthCorpus corpus =
        generate_corpus(model, opt.n_train + opt.n_test, opt.frames_per_utt, opt.with_audio);
    fs::create_directories(dir / "features");
    if (opt.with_audio) {
        fs::create_directories(dir / "wav");
    }

    const auto n = static_cast<std::int64_t>(corpus.features.size());
    std::vector<std::exception_ptr> errors(corpus.features.size());
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            const auto& id = corpus.features[i].utt_id;
            write_feature_file(dir / "features" / (id + ".fea"), corpus.features[i]);
            if (opt.with_audio) {
                write_wav(dir / "wav" / (id + ".wav"), corpus.waveforms[i]);
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

    write_text_file(dir / "alignments.csv", format_alignment_csv(corpus.alignments));
    write_text_file(dir / "synth_model.json", synth_model_to_json(model));
    Manifest m;
    for (std::size_t i = 0; i < corpus.features.size(); ++i) {
        const auto& id = corpus.features[i].utt_id;
        ManifestEntry e;
        e.utt_id = id;
        e.feature_path = "features/" + id + ".fea";
        if (opt.with_audio) {
            e.wav_path = "wav/" + id + ".wav";
        }
        e.alignment_path = "alignments.csv";
        e.split = i < opt.n_train ? "train" : "test";
        m.entries.push_back(std::move(e));
    }
    const fs::path manifest = dir / "manifest.tsv";
    write_manifest(manifest, m);
    return manifest;
}

std::string format_text_table(const std::vector<std::string>& header,
                              const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size(), 0);
    for (std::size_t c = 0; c < header.size(); ++c) {
        width[c] = header[c].size();
        for (const auto& r : rows) {
            if (c < r.size()) {
                width[c] = std::max(width[c], r[c].size());
            }
        }
    }
    auto line = [&](const std::vector<std::string>& cells) {
        std::string out;
        for (std::size_t c = 0; c < header.size(); ++c) {
            const std::string cell = c < cells.size() ? cells[c] : "";
            const std::string pad(width[c] - cell.size(), ' ');
            if (c > 0) {
                out += "  ";
            }
            // First column left-aligned, the rest right-aligned.
            out += c == 0 ? cell + pad : pad + cell;
        }
        while (!out.empty() && out.back() == ' ') {
            out.pop_back();
        }
        return out + "\n";
    };
    std::string out = line(header);
    std::size_t total = 0;
    for (const auto w : width) {
        total += w;
    }
    out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
    for (const auto& r : rows) {
        out += line(r);
    }
    return out;
}

}  // namespace dsu
