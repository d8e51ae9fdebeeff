#include <algorithm>
#include <set>

#include "dsu/error.hpp"
#include "dsu/experiment.hpp"

namespace dsu {

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "data.manifest", "data.train_split", "data.eval_split", "data.synth_model", "data.encoder_tag",
        "data.tier",
        "experiment.out_dir", "experiment.seeds", "experiment.jobs",
        "codebook.k", "codebook.max_iters", "codebook.tol", "codebook.batch_size", "codebook.n_init",
        "lm.n_layers", "lm.d_model", "lm.n_heads", "lm.d_ff", "lm.context_len", "lm.dropout",
        "lm.init_std", "lm.lora_rank", "lm.lora_alpha", "lm.pretrain_steps", "lm.pretrain_vocab",
        "lm.steps", "lm.batch_size", "lm.lr", "lm.weight_decay", "lm.beta1", "lm.beta2", "lm.eps",
        "lm.grad_clip", "lm.eval_steps", "lm.dedup",
        "robustness.k", "robustness.sources", "robustness.manifests", "robustness.conditions",
        "robustness.noise_h_db", "robustness.noise_l_db", "robustness.pitch_ratio", "robustness.seed",
        "alignment.k",
    };
    return keys;
}

// Settings a cell's outputs depend on (k, seed and source are added per cell).
bool cell_key(const std::string& key) {
    if (key == "codebook.k") {
        return false;
    }
    return key.rfind("codebook.", 0) == 0 || key.rfind("lm.", 0) == 0 || key == "data.manifest" ||
           key == "data.train_split" || key == "data.eval_split";
}

std::uint32_t positive_u32(std::int64_t v, const std::string& key) {
    if (v <= 0 || v > static_cast<std::int64_t>(UINT32_MAX)) {
        throw Error(ErrorCode::InvalidConfig, "'" + key + "' must be a positive 32-bit integer");
    }
    return static_cast<std::uint32_t>(v);
}

std::pair<double, double> range(const Config& c, const std::string& key, std::pair<double, double> dflt) {
    const auto v = c.num_list(key);
    if (!v) {
        return dflt;
    }
    if (v->size() != 2 || !((*v)[0] <= (*v)[1])) {
        throw Error(ErrorCode::InvalidConfig, "'" + key + "' must be [lo, hi] with lo <= hi");
    }
    return {(*v)[0], (*v)[1]};
}

}  // namespace

ExperimentConfig ExperimentConfig::from(const Config& c) {
    for (const auto& key : c.keys()) {
        if (!known_keys().count(key)) {
            throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
        }
    }
    ExperimentConfig e;
    const auto manifest = c.path("data.manifest");
    if (!manifest) {
        throw Error(ErrorCode::InvalidConfig, "data.manifest is required");
    }
    e.manifest = *manifest;
    e.train_split = c.str("data.train_split").value_or(e.train_split);
    e.eval_split = c.str("data.eval_split").value_or(e.eval_split);
    e.synth_model = c.path("data.synth_model");
    e.encoder_tag = c.str("data.encoder_tag").value_or(e.encoder_tag);
    e.tier = c.str("data.tier").value_or(e.tier);

    e.out_dir = c.path("experiment.out_dir").value_or(c.base_dir() / "runs");
    if (const auto seeds = c.int_list("experiment.seeds")) {
        e.seeds.clear();
        for (const auto s : *seeds) {
            if (s < 0) {
                throw Error(ErrorCode::InvalidConfig, "seeds must be non-negative");
            }
            e.seeds.push_back(static_cast<std::uint64_t>(s));
        }
        if (e.seeds.empty()) {
            throw Error(ErrorCode::InvalidConfig, "experiment.seeds must not be empty");
        }
    }
    if (const auto j = c.integer("experiment.jobs")) {
        e.jobs = positive_u32(*j, "experiment.jobs");
    }

    if (const auto ks = c.int_list("codebook.k")) {
        e.ks.clear();
        for (const auto k : *ks) {
            e.ks.push_back(positive_u32(k, "codebook.k"));
        }
        if (e.ks.empty()) {
            throw Error(ErrorCode::InvalidConfig, "codebook.k must list at least one k");
        }
    }
    if (const auto v = c.integer("codebook.max_iters")) e.fit.max_iters = positive_u32(*v, "codebook.max_iters");
    if (const auto v = c.num("codebook.tol")) e.fit.tol = *v;
    if (const auto v = c.integer("codebook.batch_size")) {
        e.fit.batch_size = *v == 0 ? 0 : positive_u32(*v, "codebook.batch_size");
    }
    if (const auto v = c.integer("codebook.n_init")) e.fit.n_init = positive_u32(*v, "codebook.n_init");
    e.fit.validate();

    auto& lm = e.lm;
    if (const auto v = c.integer("lm.n_layers")) lm.n_layers = positive_u32(*v, "lm.n_layers");
    if (const auto v = c.integer("lm.d_model")) lm.d_model = positive_u32(*v, "lm.d_model");
    if (const auto v = c.integer("lm.n_heads")) lm.n_heads = positive_u32(*v, "lm.n_heads");
    if (const auto v = c.integer("lm.d_ff")) lm.d_ff = positive_u32(*v, "lm.d_ff");
    if (const auto v = c.integer("lm.context_len")) lm.context_len = positive_u32(*v, "lm.context_len");
    if (const auto v = c.num("lm.dropout")) lm.dropout = *v;
    if (const auto v = c.num("lm.init_std")) lm.init_std = *v;
    if (const auto r = c.integer("lm.lora_rank"); r && *r > 0) {
        LoraConfig lc;
        lc.rank = positive_u32(*r, "lm.lora_rank");
        lc.alpha = c.num("lm.lora_alpha").value_or(lc.alpha);
        lm.lora = lc;
    }
    if (const auto v = c.integer("lm.pretrain_steps")) e.pretrain_steps = positive_u32(*v, "lm.pretrain_steps");
    if (const auto v = c.integer("lm.pretrain_vocab")) e.pretrain_vocab = positive_u32(*v, "lm.pretrain_vocab");
    if (e.pretrain_vocab < 4) {
        throw Error(ErrorCode::InvalidConfig, "lm.pretrain_vocab must exceed the 3 special tokens");
    }
    if (lm.context_len < 2) {
        throw Error(ErrorCode::InvalidConfig, "lm.context_len must be >= 2");
    }

    auto& t = e.train;
    if (const auto v = c.integer("lm.steps")) t.steps = positive_u32(*v, "lm.steps");
    if (const auto v = c.integer("lm.batch_size")) t.batch_size = positive_u32(*v, "lm.batch_size");
    if (const auto v = c.num("lm.lr")) t.lr = *v;
    if (const auto v = c.num("lm.weight_decay")) t.weight_decay = *v;
    if (const auto v = c.num("lm.beta1")) t.beta1 = *v;
    if (const auto v = c.num("lm.beta2")) t.beta2 = *v;
    if (const auto v = c.num("lm.eps")) t.eps = *v;
    if (const auto v = c.num("lm.grad_clip")) t.grad_clip = *v;
    t.validate();
    if (const auto steps = c.int_list("lm.eval_steps")) {
        e.eval_steps.clear();
        for (const auto s : *steps) {
            e.eval_steps.push_back(positive_u32(s, "lm.eval_steps"));
        }
    }
    // Steps past the end of training are dropped; the final step is always evaluated.
    std::erase_if(e.eval_steps, [&](std::uint32_t s) { return s > t.steps; });
    if (std::find(e.eval_steps.begin(), e.eval_steps.end(), t.steps) == e.eval_steps.end()) {
        e.eval_steps.push_back(t.steps);
    }
    std::sort(e.eval_steps.begin(), e.eval_steps.end());
    e.eval_steps.erase(std::unique(e.eval_steps.begin(), e.eval_steps.end()), e.eval_steps.end());
    e.dedup = c.boolean("lm.dedup").value_or(false);

    if (const auto v = c.integer("robustness.k")) {
        e.robustness_k = positive_u32(*v, "robustness.k");
    } else {
        e.robustness_k = e.ks.front();
    }
    const auto tags = c.str_list("robustness.sources");
    const auto manifests = c.str_list("robustness.manifests");
    if (tags || manifests) {
        if (!tags || !manifests || tags->size() != manifests->size()) {
            throw Error(ErrorCode::InvalidConfig,
                        "robustness.sources and robustness.manifests must have equal length");
        }
        for (std::size_t i = 0; i < tags->size(); ++i) {
            fs::path p((*manifests)[i]);
            if (p.is_relative() && !c.base_dir().empty()) {
                p = c.base_dir() / p;
            }
            e.sources.push_back({(*tags)[i], p});
        }
    }
    if (const auto conds = c.str_list("robustness.conditions")) {
        e.conditions.clear();
        for (const auto& s : *conds) {
            e.conditions.push_back(parse_perturb_kind(s));
        }
    }
    e.noise_h_db = range(c, "robustness.noise_h_db", e.noise_h_db);
    e.noise_l_db = range(c, "robustness.noise_l_db", e.noise_l_db);
    e.pitch_ratio = range(c, "robustness.pitch_ratio", e.pitch_ratio);
    if (const auto v = c.integer("robustness.seed")) {
        e.perturb_seed = static_cast<std::uint64_t>(*v);
    }
    if (const auto ks = c.int_list("alignment.k")) {
        for (const auto k : *ks) {
            e.alignment_ks.push_back(positive_u32(k, "alignment.k"));
        }
    }

    e.config_canonical = c.canonical();
    e.config_hash = c.hash();
    std::size_t start = 0;
    while (start < e.config_canonical.size()) {
        const auto end = e.config_canonical.find('\n', start);
        const auto line = e.config_canonical.substr(start, end - start + 1);
        if (cell_key(line.substr(0, line.find(" = ")))) {
            e.cell_canonical += line;
        }
        start = end + 1;
    }
    return e;
}

std::string ExperimentConfig::provenance() const {
    std::string s = "# config_hash=" + hex64(config_hash) + " seeds=";
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        s += (i ? "," : "") + std::to_string(seeds[i]);
    }
    s += " perturb_seed=" + std::to_string(perturb_seed);
    return s;
}

}  // namespace dsu
