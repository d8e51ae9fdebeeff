#pragma once

// End-to-end experiment drivers: config loading, the k sweep, perturbation
// robustness and phoneme alignment analysis. Intermediate artifacts live in
// per-cell directories guarded by stage sentinels, so interrupted runs resume
// where they stopped.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dsu/perturb.hpp"
#include "dsu/quantizer.hpp"
#include "dsu/synthkit.hpp"
#include "dsu/transformer.hpp"

namespace dsu {

namespace fs = std::filesystem;

/// Parsed TOML subset: `[section]` headers, `key = value` with strings,
/// integers, floats, booleans and single-line arrays of those, `#` comments.
/// Keys are addressed as "section.key".
class Config {
public:
    using Scalar = std::variant<bool, std::int64_t, double, std::string>;
    using Value = std::variant<Scalar, std::vector<Scalar>>;

    static Config parse(std::string_view text, fs::path base_dir = {});
    static Config load(const fs::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, Value v) { values_[key] = std::move(v); }

    std::optional<std::string> str(const std::string& key) const;
    std::optional<double> num(const std::string& key) const;
    std::optional<std::int64_t> integer(const std::string& key) const;
    std::optional<bool> boolean(const std::string& key) const;
    std::optional<std::vector<std::int64_t>> int_list(const std::string& key) const;
    std::optional<std::vector<double>> num_list(const std::string& key) const;
    std::optional<std::vector<std::string>> str_list(const std::string& key) const;
    /// A string value resolved against the config file's directory.
    std::optional<fs::path> path(const std::string& key) const;

    /// Sorted `key = value` lines; independent of layout and comments.
    std::string canonical() const;
    /// FNV-1a 64 of canonical().
    std::uint64_t hash() const;
    std::vector<std::string> keys() const;
    const fs::path& base_dir() const noexcept { return base_dir_; }

private:
    std::map<std::string, Value> values_;
    fs::path base_dir_;
};

std::uint64_t fnv1a64(std::string_view bytes) noexcept;
std::string hex64(std::uint64_t v);

struct CodebookSource {
    std::string tag;
    fs::path manifest;
};

struct ExperimentConfig {
    // [data]
    fs::path manifest;
    std::string train_split = "train";
    std::string eval_split = "test";
    std::optional<fs::path> synth_model;
    std::string encoder_tag = "synth";
    std::string tier = "phones";
    // [experiment]
    fs::path out_dir = "runs";
    std::vector<std::uint64_t> seeds{42};
    std::uint32_t jobs = 1;
    // [codebook]
    std::vector<std::uint32_t> ks{500};
    FitConfig fit;
    // [lm]
    TransformerConfig lm;
    TrainConfig train;
    std::vector<std::uint32_t> eval_steps{100, 200, 300};
    bool dedup = false;
    // With lm.lora set, a base model is first trained for pretrain_steps on a
    // synthetic bigram "text" task over pretrain_vocab tokens, then frozen,
    // extended by k unit tokens and adapted.
    std::uint32_t pretrain_steps = 100;
    std::uint32_t pretrain_vocab = 64;
    // [robustness]
    std::uint32_t robustness_k = 500;
    std::vector<CodebookSource> sources;  // empty: the main manifest only
    std::vector<PerturbKind> conditions{PerturbKind::Clean, PerturbKind::NoiseH, PerturbKind::NoiseL,
                                        PerturbKind::PitchShift};
    std::pair<double, double> noise_h_db{15.0, 20.0};
    std::pair<double, double> noise_l_db{5.0, 10.0};
    std::pair<double, double> pitch_ratio{0.95, 1.05};
    std::uint64_t perturb_seed = 42;
    // [alignment]
    std::vector<std::uint32_t> alignment_ks;  // empty: same as ks

    std::uint64_t config_hash = 0;
    std::string config_canonical;
    std::string cell_canonical;  // the settings every cell result depends on

    static ExperimentConfig from(const Config& c);
    /// Header line embedded in every table: config hash and seeds.
    std::string provenance() const;
};

/// One pipeline cell: codebook fit on `source`, LM trained on the quantized
/// training split, evaluated at eval_steps. Skipped stages are reloaded.
struct CellResult {
    std::string key;       // "<tag>_k<k>_s<seed>"
    fs::path dir;
    std::vector<std::pair<std::uint32_t, double>> nll;  // (step, nll)
    bool recomputed_codebook = false;
    bool recomputed_lm = false;
};

fs::path cell_dir(const ExperimentConfig& cfg, const CodebookSource& src, std::uint32_t k,
                  std::uint64_t seed);

/// Ensures the codebook stage of a cell exists and returns the codebook.
Codebook ensure_codebook(const ExperimentConfig& cfg, const CodebookSource& src, std::uint32_t k,
                         std::uint64_t seed, bool* recomputed = nullptr);

/// Ensures both stages of a cell exist.
CellResult ensure_cell(const ExperimentConfig& cfg, const CodebookSource& src, std::uint32_t k,
                       std::uint64_t seed);

struct SweepRow {
    std::string encoder_tag;
    std::uint32_t k = 0;
    std::uint64_t seed = 0;
    std::uint32_t step = 0;
    double nll = 0.0;
};

struct SweepReport {
    std::vector<SweepRow> per_seed;
    std::vector<SweepRow> mean;  // averaged over seeds; seed = 0
    std::vector<std::string> recomputed;  // cell keys whose LM stage ran
    fs::path csv_path;
};

/// Writes sweep.csv (encoder_tag,k,step,nll; mean over seeds),
/// sweep_per_seed.csv and sweep.txt under out_dir.
SweepReport run_sweep(const ExperimentConfig& cfg);

struct RobustnessRow {
    std::string source;
    std::map<PerturbKind, double> nll;
};

struct RobustnessReport {
    std::vector<RobustnessRow> rows;
    fs::path csv_path;
};

/// Clean uses the manifest features; every other condition perturbs the
/// evaluation audio and re-derives features through the synthetic decoder.
/// Writes robustness.csv / robustness.txt and per-condition JSON-lines logs.
RobustnessReport run_robustness(const ExperimentConfig& cfg);

struct AlignmentRow {
    std::string source;
    std::uint32_t k = 0;
    double purity = 0.0;
    fs::path csv;
    fs::path svg;
};

struct AlignmentReport {
    std::vector<AlignmentRow> rows;
    fs::path summary_path;
};

/// Confusion CSV + SVG heatmap per codebook and a purity summary.
AlignmentReport run_alignment(const ExperimentConfig& cfg);

struct SynthDatasetOptions {
    std::uint32_t n_train = 500;
    std::uint32_t n_test = 100;
    std::uint32_t frames_per_utt = 100;
    bool with_audio = true;
};

/// Writes features/, wav/, alignments.csv, manifest.tsv (splits "train" and
/// "test") and synth_model.json under `dir`; returns the manifest path.
fs::path write_synth_dataset(const SynthModel& model, const SynthDatasetOptions& opt, const fs::path& dir);

/// Plain-text table with right-aligned numeric columns.
std::string format_text_table(const std::vector<std::string>& header,
                              const std::vector<std::vector<std::string>>& rows);

/// Shortest round-trip decimal.
std::string format_double(double v);

}  // namespace dsu
