#pragma once

// Decoder-only transformer over unit tokens, trained from scratch in binary64
// with a hand-written backward pass. Pre-LN blocks, learned positions, GELU
// MLP, untied output projection. Optional LoRA adapters on the query and value
// projections; with adapters attached the base weights are frozen except for
// vocabulary rows added after the base model was built.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsu/rng.hpp"
#include "dsu/unitlm.hpp"

namespace dsu {

struct LoraConfig {
    std::uint32_t rank = 64;
    double alpha = 16.0;
    double scale() const noexcept { return alpha / rank; }
};

struct TransformerConfig {
    std::uint32_t n_layers = 4;
    std::uint32_t d_model = 256;
    std::uint32_t n_heads = 4;
    std::uint32_t d_ff = 1024;
    std::uint32_t context_len = 512;
    std::uint32_t vocab_size = 0;
    double dropout = 0.0;
    double init_std = 0.02;
    std::uint64_t seed = 42;
    std::optional<LoraConfig> lora;

    void validate() const;
};

struct TrainConfig {
    std::uint32_t steps = 300;
    std::uint32_t batch_size = 16;
    double lr = 3e-4;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::optional<double> grad_clip;  // global L2 norm
    std::uint64_t seed = 42;

    void validate() const;
};

/// A named row-major tensor. Rows below `trainable_from_row` are frozen.
struct Param {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    std::size_t trainable_from_row = 0;
    bool decay = false;

    std::size_t size() const noexcept { return rows * cols; }
    bool trainable() const noexcept { return trainable_from_row < rows; }
    std::size_t trainable_size() const noexcept {
        return trainable() ? (rows - trainable_from_row) * cols : 0;
    }
};

/// `batch` sequences of `seq` positions; targets[i] follows inputs[i].
struct Batch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<Token> inputs;
    std::vector<Token> targets;
};

class TransformerModel final : public LanguageModel {
public:
    /// Builds and initializes from cfg.seed. Attaches LoRA if cfg.lora is set.
    explicit TransformerModel(const TransformerConfig& cfg);

    const TransformerConfig& config() const noexcept { return cfg_; }
    std::uint32_t vocab_size() const override { return cfg_.vocab_size; }

    std::vector<Param>& params() noexcept { return params_; }
    const std::vector<Param>& params() const noexcept { return params_; }
    Param& param(std::string_view name);
    const Param& param(std::string_view name) const;

    std::size_t parameter_count() const noexcept;
    std::size_t trainable_parameter_count() const noexcept;

    /// Next-token logits (tokens.size() x V) for one sequence of at most
    /// context_len tokens.
    std::vector<double> logits(std::span<const Token> tokens) const;

    /// Scores the stream in non-overlapping windows of context_len predictions;
    /// each window starts with an empty history.
    std::vector<double> token_nll(std::span<const Token> seq) const override;

    /// Mean next-token NLL over the batch, no dropout.
    double loss(const Batch& b) const;

    /// Mean NLL with gradients written to Param::grad (overwritten). Dropout is
    /// applied when the config asks for it and `dropout_rng` is given.
    double loss_and_grad(const Batch& b, Rng* dropout_rng = nullptr);

    /// Grows the embedding and output rows to `new_vocab`. New rows are drawn
    /// from N(0, init_std^2) with `seed`.
    void extend_vocab(std::uint32_t new_vocab, std::uint64_t seed);

    /// Adds rank-r adapters to Wq and Wv (A ~ U(-1/sqrt(d), 1/sqrt(d)), B = 0)
    /// and freezes every base weight except vocabulary rows >= the current
    /// base vocabulary.
    void attach_lora(const LoraConfig& lc, std::uint64_t seed, std::uint32_t base_vocab);

    /// Rounds every parameter to binary32.
    void snap_to_binary32();

private:
    struct Cache;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    double forward(const Batch& b, Cache& cache, std::vector<double>* token_nll, Rng* drop) const;
    void backward(const Batch& b, Cache& cache);
    std::size_t add_param(std::string name, std::size_t rows, std::size_t cols, bool decay);

    TransformerConfig cfg_;
    std::vector<Param> params_;

    struct LayerIdx {
        std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        std::size_t ln2_g, ln2_b, w1, b1, w2, b2;
        std::size_t qa = npos, qb = npos, va = npos, vb = npos;
    };
    std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_g_ = 0, lnf_b_ = 0, wout_ = 0, bout_ = 0;
    std::vector<LayerIdx> layers_;
};

/// Called after every optimizer step with the 1-based step and that step's loss.
using StepCallback = std::function<void(std::uint32_t step, double loss, const TransformerModel&)>;

/// Samples windows of min(context_len, L - 1) tokens from the concatenation of
/// `streams`; inputs are tokens [s, s+S), targets [s+1, s+S+1).
Batch sample_batch(std::span<const Token> concatenated, std::size_t batch, std::size_t context,
                   Rng& rng);

std::vector<Token> concatenate_streams(std::span<const TokenStream> streams);

/// AdamW with constant learning rate. Parameters are rounded to binary32
/// after every update so that checkpoints reproduce the trained model exactly.
/// Returns the per-step training loss.
std::vector<double> train(TransformerModel& model, std::span<const TokenStream> streams,
                          const TrainConfig& tc, const StepCallback& on_step = {});

struct GradCheckOptions {
    double step = 1e-3;
    /// Combines the h and h/2 central differences, (4 D(h/2) - D(h)) / 3,
    /// cancelling the O(h^2) truncation term.
    bool richardson = true;
    std::size_t samples = 200;  // coordinates probed
    double tolerance = 1e-3;
    double abs_floor = 1e-6;    // gradient magnitudes below this are compared absolutely
    std::uint64_t seed = 7;
    bool throw_on_failure = true;
    /// Restricts the probed parameters; empty means every trainable parameter.
    std::function<bool(const Param&)> filter;
    /// Applied to the analytic gradients before comparison (for mutation tests).
    std::function<void(std::vector<Param>&)> tamper;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t probed = 0;
    std::string worst_param;
    bool passed = false;
};

/// Compares the analytic gradient with central differences
/// D(h) = (L(w + h) - L(w - h)) / 2h on sampled coordinates. The relative error is
/// |g - n| / max(|g|, |n|, abs_floor). Throws GradCheckFailure when it
/// exceeds the tolerance and throw_on_failure is set.
GradCheckResult grad_check(TransformerModel& model, const Batch& batch, const GradCheckOptions& opt);

std::vector<std::uint8_t> serialize_transformer(const TransformerModel& m);
TransformerModel parse_transformer_bytes(std::span<const std::uint8_t> bytes);
void save_transformer(const std::filesystem::path& path, const TransformerModel& m);
TransformerModel load_transformer(const std::filesystem::path& path);

}  // namespace dsu
