#include "dsu/synthkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <json.hpp>

#include "dsu/error.hpp"
#include "dsu/rng.hpp"

namespace dsu {

namespace {

constexpr std::uint32_t kMaxMeanAttempts = 100000;

const char* const kArpabet[] = {"AA", "AE", "AH", "AO", "AW", "AY", "B",  "CH", "D",  "DH",
                                "EH", "ER", "EY", "F",  "G",  "HH", "IH", "IY", "JH", "K",
                                "L",  "M",  "N",  "NG", "OW", "OY", "P",  "R",  "S",  "SH",
                                "T",  "TH", "UH", "UW", "V",  "W",  "Y",  "Z",  "ZH"};
constexpr std::uint32_t kArpabetCount = sizeof(kArpabet) / sizeof(kArpabet[0]);

std::vector<std::string> make_labels(std::uint32_t n) {
    std::vector<std::string> labels;
    if (n <= kArpabetCount + 1) {
        // "sil" first, then ARPAbet symbols.
        labels.emplace_back("sil");
        for (std::uint32_t i = 0; i + 1 < n; ++i) {
            labels.emplace_back(kArpabet[i]);
        }
    } else {
        for (std::uint32_t i = 0; i < n; ++i) {
            labels.push_back("P" + std::to_string(i));
        }
    }
    return labels;
}

std::vector<double> default_transition(std::uint32_t n) {
    std::vector<double> t(static_cast<std::size_t>(n) * n, 0.0);
    if (n == 1) {
        t[0] = 1.0;
        return t;
    }
    for (std::uint32_t i = 0; i < n; ++i) {
        for (std::uint32_t j = 0; j < n; ++j) {
            t[i * n + j] = i == j ? 0.0 : 1.0 / (n - 1);
        }
    }
    return t;
}

std::uint32_t sample_row(std::span<const double> row, Rng& rng) {
    const double u = rng.uniform();
    double cum = 0.0;
    std::uint32_t last = 0;
    for (std::uint32_t j = 0; j < row.size(); ++j) {
        if (row[j] <= 0.0) {
            continue;
        }
        cum += row[j];
        last = j;
        if (u < cum) {
            return j;
        }
    }
    return last;
}

bool needs_audio_bins_ok(const SynthModel& m) {
    // Highest tone must stay clear of Nyquist after a +5% pitch shift.
    const double top_hz = (m.detail_bin(m.spec.dim - 1) + 1) * m.spec.frame_rate_hz * 1.05;
    return top_hz < 0.9 * m.spec.sample_rate_hz / 2.0;
}

}  // namespace

void SynthSpec::validate() const {
    auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidSpec, why); };
    if (n_phonemes == 0) fail("n_phonemes must be >= 1");
    if (dim == 0) fail("dim must be >= 1");
    if (!(frame_rate_hz > 0.0f)) fail("frame_rate_hz must be > 0");
    if (!(mean_dwell_frames >= 1.0)) fail("mean_dwell_frames must be >= 1");
    if (!(emission_sigma >= 0.0) || !std::isfinite(emission_sigma)) fail("emission_sigma must be >= 0");
    if (!(mean_scale > 0.0)) fail("mean_scale must be > 0");
    if (sample_rate_hz == 0) fail("sample_rate_hz must be > 0");
    if (!transition.empty()) {
        if (transition.size() != static_cast<std::size_t>(n_phonemes) * n_phonemes) {
            fail("transition matrix must be n_phonemes x n_phonemes");
        }
        for (std::uint32_t i = 0; i < n_phonemes; ++i) {
            double row = 0.0;
            for (std::uint32_t j = 0; j < n_phonemes; ++j) {
                const double p = transition[i * n_phonemes + j];
                if (!(p >= 0.0)) fail("transition probabilities must be >= 0");
                row += p;
            }
            if (std::abs(row - 1.0) > 1e-9) {
                fail("transition row " + std::to_string(i) + " sums to " + std::to_string(row));
            }
        }
    }
}

std::uint32_t SynthModel::hop() const noexcept {
    return static_cast<std::uint32_t>(std::lround(spec.sample_rate_hz / spec.frame_rate_hz));
}

SynthModel build_synth_model(const SynthSpec& spec) {
    spec.validate();
    SynthModel m;
    m.spec = spec;
    m.transition = spec.transition.empty() ? default_transition(spec.n_phonemes) : spec.transition;
    m.labels = make_labels(spec.n_phonemes);

    const std::uint32_t n = spec.n_phonemes;
    const std::uint32_t dim = spec.dim;
    const double min_sq = std::pow(8.0 * spec.emission_sigma, 2);
    Rng rng(derive_seed(spec.seed, 0xFEA7));
    m.means.reserve(static_cast<std::size_t>(n) * dim);
    std::vector<double> cand(dim);
    std::uint32_t attempts = 0;
    while (m.means.size() < static_cast<std::size_t>(n) * dim) {
        if (++attempts > kMaxMeanAttempts) {
            throw Error(ErrorCode::InvalidSpec,
                        "cannot place " + std::to_string(n) + " means 8 sigma apart; raise mean_scale");
        }
        for (auto& v : cand) {
            v = rng.normal(0.0, spec.mean_scale);
        }
        bool ok = true;
        for (std::size_t s = 0; s * dim < m.means.size() && ok; ++s) {
            double d = 0.0;
            for (std::uint32_t j = 0; j < dim; ++j) {
                const double diff = cand[j] - m.means[s * dim + j];
                d += diff * diff;
            }
            ok = d >= min_sq && d > 0.0;
        }
        if (ok) {
            m.means.insert(m.means.end(), cand.begin(), cand.end());
        }
    }
    return m;
}

SynthCorpus generate_corpus(const SynthModel& model, std::uint32_t n_utts,
                            std::uint32_t frames_per_utt, bool with_audio,
                            std::uint32_t first_index) {
    const SynthSpec& spec = model.spec;
    const std::uint32_t n = spec.n_phonemes;
    const std::uint32_t dim = spec.dim;
    const std::uint32_t hop = model.hop();
    if (with_audio) {
        if (std::abs(static_cast<double>(hop) * spec.frame_rate_hz - spec.sample_rate_hz) > 1e-6) {
            throw Error(ErrorCode::InvalidSpec, "sample rate must be a multiple of the frame rate");
        }
        if (!needs_audio_bins_ok(model)) {
            throw Error(ErrorCode::InvalidSpec, "n_phonemes + dim too large for the audio band");
        }
    }

    SynthCorpus out;
    out.features.resize(n_utts);
    out.alignments.resize(n_utts);
    out.states.resize(n_utts);
    if (with_audio) {
        out.waveforms.resize(n_utts);
    }
    const double leave = 1.0 / spec.mean_dwell_frames;
    const double two_pi = 2.0 * M_PI;

#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t ui = 0; ui < static_cast<std::int64_t>(n_utts); ++ui) {
        const auto index = first_index + static_cast<std::uint32_t>(ui);
        Rng rng(derive_seed(spec.seed, index));
        char id[32];
        std::snprintf(id, sizeof(id), "utt%06u", index);

        auto& states = out.states[ui];
        states.resize(frames_per_utt);
        std::uint32_t s = static_cast<std::uint32_t>(rng.below(n));
        for (std::uint32_t t = 0; t < frames_per_utt; ++t) {
            if (t > 0 && rng.uniform() < leave) {
                s = sample_row({model.transition.data() + static_cast<std::size_t>(s) * n, n}, rng);
            }
            states[t] = s;
        }

        FeatureMatrix& fm = out.features[ui];
        fm.utt_id = id;
        fm.frame_rate_hz = spec.frame_rate_hz;
        fm.dim = dim;
        fm.frames.resize(static_cast<std::size_t>(frames_per_utt) * dim);
        std::vector<double> eps(static_cast<std::size_t>(frames_per_utt) * dim);
        for (std::uint32_t t = 0; t < frames_per_utt; ++t) {
            for (std::uint32_t j = 0; j < dim; ++j) {
                const double e = rng.normal();
                eps[t * dim + j] = e;
                fm.frames[t * dim + j] = static_cast<float>(
                    model.means[static_cast<std::size_t>(states[t]) * dim + j] + spec.emission_sigma * e);
            }
        }

        AlignmentTrack& track = out.alignments[ui];
        track.utt_id = id;
        for (std::uint32_t t = 0; t < frames_per_utt;) {
            std::uint32_t end = t + 1;
            while (end < frames_per_utt && states[end] == states[t]) {
                ++end;
            }
            track.intervals.push_back({t / static_cast<double>(spec.frame_rate_hz),
                                       end / static_cast<double>(spec.frame_rate_hz),
                                       model.labels[states[t]]});
            t = end;
        }

        if (with_audio) {
            Waveform& w = out.waveforms[ui];
            w.sample_rate_hz = spec.sample_rate_hz;
            w.samples.resize(static_cast<std::size_t>(frames_per_utt) * hop);
            for (std::uint32_t t = 0; t < frames_per_utt; ++t) {
                const double f_state = model.state_bin(states[t]) * static_cast<double>(spec.frame_rate_hz);
                for (std::uint32_t i = 0; i < hop; ++i) {
                    // Local time; each component completes whole cycles per frame.
                    const double tau = static_cast<double>(i) / spec.sample_rate_hz;
                    double x = kToneAmplitude * std::sin(two_pi * f_state * tau);
                    for (std::uint32_t d = 0; d < dim; ++d) {
                        const double g = model.detail_bin(d) * static_cast<double>(spec.frame_rate_hz);
                        x += kDetailAmplitude * eps[t * dim + d] * std::sin(two_pi * g * tau);
                    }
                    w.samples[static_cast<std::size_t>(t) * hop + i] = static_cast<float>(x);
                }
            }
        }
    }
    return out;
}

FeatureMatrix features_from_waveform(const Waveform& w, const SynthModel& model, std::string utt_id) {
    const SynthSpec& spec = model.spec;
    const std::uint32_t hop = model.hop();
    const std::uint32_t n = spec.n_phonemes;
    const std::uint32_t dim = spec.dim;
    if (w.sample_rate_hz != spec.sample_rate_hz) {
        throw Error(ErrorCode::InvalidSpec, "waveform sample rate differs from the synth model");
    }
    const std::size_t frames = w.samples.size() / hop;

    // Basis tables over one frame: cos/sin for state bins, sin for detail bins.
    const double two_pi = 2.0 * M_PI;
    std::vector<double> state_cos(static_cast<std::size_t>(n) * hop), state_sin(state_cos.size());
    std::vector<double> detail_sin(static_cast<std::size_t>(dim) * hop);
    for (std::uint32_t i = 0; i < hop; ++i) {
        const double tau = static_cast<double>(i) / spec.sample_rate_hz;
        for (std::uint32_t s = 0; s < n; ++s) {
            const double f = model.state_bin(s) * static_cast<double>(spec.frame_rate_hz);
            state_cos[s * hop + i] = std::cos(two_pi * f * tau);
            state_sin[s * hop + i] = std::sin(two_pi * f * tau);
        }
        for (std::uint32_t d = 0; d < dim; ++d) {
            const double g = model.detail_bin(d) * static_cast<double>(spec.frame_rate_hz);
            detail_sin[d * hop + i] = std::sin(two_pi * g * tau);
        }
    }

    FeatureMatrix fm;
    fm.utt_id = std::move(utt_id);
    fm.frame_rate_hz = spec.frame_rate_hz;
    fm.dim = dim;
    fm.frames.resize(frames * dim);
    const double scale = 2.0 / hop;

#pragma omp parallel for schedule(static)
    for (std::int64_t t = 0; t < static_cast<std::int64_t>(frames); ++t) {
        const float* x = w.samples.data() + t * hop;
        std::vector<double> power(n);
        double total = 0.0;
        for (std::uint32_t s = 0; s < n; ++s) {
            double re = 0.0, im = 0.0;
            for (std::uint32_t i = 0; i < hop; ++i) {
                re += x[i] * state_cos[s * hop + i];
                im += x[i] * state_sin[s * hop + i];
            }
            power[s] = re * re + im * im;
            total += power[s];
        }
        for (std::uint32_t d = 0; d < dim; ++d) {
            double mean = 0.0;
            for (std::uint32_t s = 0; s < n; ++s) {
                const double weight = total > 0.0 ? power[s] / total : 1.0 / n;
                mean += weight * model.means[static_cast<std::size_t>(s) * dim + d];
            }
            double proj = 0.0;
            for (std::uint32_t i = 0; i < hop; ++i) {
                proj += x[i] * detail_sin[d * hop + i];
            }
            const double eps = proj * scale / kDetailAmplitude;
            fm.frames[t * dim + d] = static_cast<float>(mean + spec.emission_sigma * eps);
        }
    }
    return fm;
}

double state_purity_oracle(std::span<const AlignmentTrack> alignments,
                           std::span<const UnitSequence> unit_seqs) {
    if (alignments.size() != unit_seqs.size()) {
        throw Error(ErrorCode::LengthMismatch, std::to_string(alignments.size()) + " alignments vs " +
                                                   std::to_string(unit_seqs.size()) + " unit sequences");
    }
    std::map<std::pair<Unit, std::string>, std::uint64_t> joint;
    std::map<Unit, std::uint64_t> per_unit_max;
    std::uint64_t total = 0;
    for (std::size_t u = 0; u < unit_seqs.size(); ++u) {
        const auto& seq = unit_seqs[u];
        const auto& track = alignments[u];
        const double rate = seq.frame_rate_hz;
        const double duration = track.intervals.empty() ? 0.0 : track.intervals.back().end_s;
        const auto expected = static_cast<std::size_t>(std::llround(duration * rate));
        if (expected != seq.units.size()) {
            throw Error(ErrorCode::LengthMismatch, seq.utt_id + ": " + std::to_string(seq.units.size()) +
                                                       " units vs " + std::to_string(expected) +
                                                       " aligned frames");
        }
        std::size_t iv = 0;
        for (std::size_t i = 0; i < seq.units.size(); ++i) {
            const double mid = (i + 0.5) / rate;
            while (iv < track.intervals.size() && track.intervals[iv].end_s <= mid) {
                ++iv;
            }
            if (iv == track.intervals.size() || track.intervals[iv].start_s > mid) {
                throw Error(ErrorCode::LengthMismatch, seq.utt_id + ": frame " + std::to_string(i) +
                                                           " is not covered by the alignment");
            }
            ++joint[{seq.units[i], track.intervals[iv].label}];
            ++total;
        }
    }
    if (total == 0) {
        return 0.0;
    }
    for (const auto& [key, count] : joint) {
        auto& best = per_unit_max[key.first];
        best = std::max(best, count);
    }
    std::uint64_t hits = 0;
    for (const auto& [unit, best] : per_unit_max) {
        hits += best;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

std::string synth_model_to_json(const SynthModel& m) {
    nlohmann::json j;
    const auto& s = m.spec;
    j["n_phonemes"] = s.n_phonemes;
    j["dim"] = s.dim;
    j["frame_rate_hz"] = s.frame_rate_hz;
    j["mean_dwell_frames"] = s.mean_dwell_frames;
    j["emission_sigma"] = s.emission_sigma;
    j["mean_scale"] = s.mean_scale;
    j["seed"] = s.seed;
    j["sample_rate_hz"] = s.sample_rate_hz;
    j["transition"] = m.transition;
    j["means"] = m.means;
    j["labels"] = m.labels;
    return j.dump(1);
}

SynthModel synth_model_from_json(std::string_view text) {
    try {
        const auto j = nlohmann::json::parse(text);
        SynthModel m;
        auto& s = m.spec;
        s.n_phonemes = j.at("n_phonemes").get<std::uint32_t>();
        s.dim = j.at("dim").get<std::uint32_t>();
        s.frame_rate_hz = j.at("frame_rate_hz").get<float>();
        s.mean_dwell_frames = j.at("mean_dwell_frames").get<double>();
        s.emission_sigma = j.at("emission_sigma").get<double>();
        s.mean_scale = j.at("mean_scale").get<double>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.sample_rate_hz = j.at("sample_rate_hz").get<std::uint32_t>();
        m.transition = j.at("transition").get<std::vector<double>>();
        s.transition = m.transition;
        m.means = j.at("means").get<std::vector<double>>();
        m.labels = j.at("labels").get<std::vector<std::string>>();
        s.validate();
        if (m.means.size() != static_cast<std::size_t>(s.n_phonemes) * s.dim ||
            m.labels.size() != s.n_phonemes) {
            throw Error(ErrorCode::InvalidSpec, "synth model arrays do not match n_phonemes/dim");
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidSpec, std::string("synth model JSON: ") + e.what());
    }
}

}  // namespace dsu
