#include <algorithm>
#include <cmath>

#include "dsu/error.hpp"
#include "dsu/transformer.hpp"

namespace dsu {

std::vector<Token> concatenate_streams(std::span<const TokenStream> streams) {
    std::vector<Token> out;
    for (const auto& s : streams) {
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

Batch sample_batch(std::span<const Token> concatenated, std::size_t batch, std::size_t context,
                   Rng& rng) {
    if (concatenated.size() < 2) {
        throw Error(ErrorCode::EmptyCorpus, "training stream needs at least two tokens");
    }
    const std::size_t S = std::min(context, concatenated.size() - 1);
    Batch b;
    b.batch = batch;
    b.seq = S;
    b.inputs.reserve(batch * S);
    b.targets.reserve(batch * S);
    const std::size_t starts = concatenated.size() - S;
    for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t s = rng.below(starts);
        b.inputs.insert(b.inputs.end(), concatenated.begin() + static_cast<std::ptrdiff_t>(s),
                        concatenated.begin() + static_cast<std::ptrdiff_t>(s + S));
        b.targets.insert(b.targets.end(), concatenated.begin() + static_cast<std::ptrdiff_t>(s + 1),
                         concatenated.begin() + static_cast<std::ptrdiff_t>(s + S + 1));
    }
    return b;
}

std::vector<double> train(TransformerModel& model, std::span<const TokenStream> streams,
                          const TrainConfig& tc, const StepCallback& on_step) {
    tc.validate();
    const auto data = concatenate_streams(streams);
    if (data.size() < 2) {
        throw Error(ErrorCode::EmptyCorpus, "training corpus has fewer than two tokens");
    }
    auto& params = model.params();
    std::vector<std::vector<double>> m(params.size());
    std::vector<std::vector<double>> v(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i].assign(params[i].size(), 0.0);
        v[i].assign(params[i].size(), 0.0);
    }
    Rng sampler(tc.seed);
    Rng dropout(derive_seed(tc.seed, 1));
    std::vector<double> losses;
    losses.reserve(tc.steps);

    for (std::uint32_t step = 1; step <= tc.steps; ++step) {
        const Batch b = sample_batch(data, tc.batch_size, model.config().context_len, sampler);
        const double loss = model.loss_and_grad(b, &dropout);
        if (!std::isfinite(loss)) {
            throw Error(ErrorCode::NonFiniteLoss, "training loss became non-finite at step " +
                                                      std::to_string(step));
        }
        double clip = 1.0;
        if (tc.grad_clip) {
            double sq = 0.0;
            for (const auto& p : params) {
                for (std::size_t i = p.trainable_from_row * p.cols; i < p.size(); ++i) {
                    sq += p.grad[i] * p.grad[i];
                }
            }
            const double norm = std::sqrt(sq);
            if (norm > *tc.grad_clip) {
                clip = *tc.grad_clip / norm;
            }
        }
        const double bc1 = 1.0 - std::pow(tc.beta1, step);
        const double bc2 = 1.0 - std::pow(tc.beta2, step);
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            auto& p = params[pi];
            if (!p.trainable()) {
                continue;
            }
            for (std::size_t i = p.trainable_from_row * p.cols; i < p.size(); ++i) {
                const double g = p.grad[i] * clip;
                m[pi][i] = tc.beta1 * m[pi][i] + (1.0 - tc.beta1) * g;
                v[pi][i] = tc.beta2 * v[pi][i] + (1.0 - tc.beta2) * g * g;
                double w = p.value[i];
                if (p.decay) {
                    w -= tc.lr * tc.weight_decay * w;
                }
                w -= tc.lr * (m[pi][i] / bc1) / (std::sqrt(v[pi][i] / bc2) + tc.eps);
                p.value[i] = static_cast<double>(static_cast<float>(w));
            }
        }
        losses.push_back(loss);
        if (on_step) {
            on_step(step, loss, model);
        }
    }
    return losses;
}

GradCheckResult grad_check(TransformerModel& model, const Batch& batch, const GradCheckOptions& opt) {
    model.loss_and_grad(batch, nullptr);
    auto& params = model.params();
    if (opt.tamper) {
        opt.tamper(params);
    }
    std::vector<std::vector<double>> analytic(params.size());
    struct Coord {
        std::size_t param;
        std::size_t index;
    };
    std::vector<Coord> pool;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const auto& p = params[pi];
        analytic[pi] = p.grad;
        if (!p.trainable() || (opt.filter && !opt.filter(p))) {
            continue;
        }
        for (std::size_t i = p.trainable_from_row * p.cols; i < p.size(); ++i) {
            pool.push_back({pi, i});
        }
    }
    if (pool.empty()) {
        throw Error(ErrorCode::InvalidConfig, "gradient check has no parameters to probe");
    }
    std::vector<Coord> probes;
    if (pool.size() <= opt.samples) {
        probes = pool;
    } else {
        Rng rng(opt.seed);
        for (std::size_t i = 0; i < opt.samples; ++i) {
            probes.push_back(pool[rng.below(pool.size())]);
        }
    }

    GradCheckResult r;
    for (const auto& c : probes) {
        double& w = params[c.param].value[c.index];
        const double orig = w;
        auto central = [&](double h) {
            w = orig + h;
            const double lp = model.loss(batch);
            w = orig - h;
            const double lm = model.loss(batch);
            w = orig;
            return (lp - lm) / (2.0 * h);
        };
        const double d1 = central(opt.step);
        const double numeric =
            opt.richardson ? (4.0 * central(opt.step / 2.0) - d1) / 3.0 : d1;
        const double a = analytic[c.param][c.index];
        const double denom = std::max({std::abs(a), std::abs(numeric), opt.abs_floor});
        const double rel = std::abs(a - numeric) / denom;
        if (rel > r.max_rel_error) {
            r.max_rel_error = rel;
            r.worst_param = params[c.param].name + "[" + std::to_string(c.index) + "]";
        }
        ++r.probed;
    }
    r.passed = r.max_rel_error < opt.tolerance;
    if (!r.passed && opt.throw_on_failure) {
        throw Error(ErrorCode::GradCheckFailure, "max relative error " + std::to_string(r.max_rel_error) +
                                                     " at " + r.worst_param);
    }
    return r;
}

}  // namespace dsu
