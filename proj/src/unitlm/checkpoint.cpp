#include <cmath>
#include <cstring>

#include "dsu/binio.hpp"
#include "dsu/corpusio.hpp"
#include "dsu/error.hpp"
#include "dsu/transformer.hpp"

namespace dsu {

namespace {
constexpr char kMagic[4] = {'U', 'L', 'M', 'C'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

// Layout: "ULMC" | u32 version | config header | u32 n_params |
// per parameter: name, u32 rows, u32 cols, u32 trainable_from_row, u8 decay,
// rows * cols binary32 values.
std::vector<std::uint8_t> serialize_transformer(const TransformerModel& m) {
    const auto& c = m.config();
    binio::Writer w;
    w.put_bytes({kMagic, 4});
    w.put(kVersion);
    w.put(c.n_layers);
    w.put(c.d_model);
    w.put(c.n_heads);
    w.put(c.d_ff);
    w.put(c.context_len);
    w.put(c.vocab_size);
    w.put(c.dropout);
    w.put(c.init_std);
    w.put(c.seed);
    w.put(c.lora ? c.lora->rank : std::uint32_t{0});
    w.put(c.lora ? c.lora->alpha : 0.0);
    w.put(static_cast<std::uint32_t>(m.params().size()));
    std::vector<float> buf;
    for (const auto& p : m.params()) {
        w.put_string(p.name);
        w.put(static_cast<std::uint32_t>(p.rows));
        w.put(static_cast<std::uint32_t>(p.cols));
        w.put(static_cast<std::uint32_t>(p.trainable_from_row));
        w.put(static_cast<std::uint8_t>(p.decay ? 1 : 0));
        buf.assign(p.value.begin(), p.value.end());
        w.put_floats(buf);
    }
    return std::move(w.bytes());
}

TransformerModel parse_transformer_bytes(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw Error(ErrorCode::BadMagic, "checkpoint does not start with ULMC");
    }
    binio::Reader r(bytes.subspan(4));
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) {
        throw Error(ErrorCode::MalformedRecord, "unsupported checkpoint version " + std::to_string(version));
    }
    TransformerConfig c;
    c.n_layers = r.get<std::uint32_t>();
    c.d_model = r.get<std::uint32_t>();
    c.n_heads = r.get<std::uint32_t>();
    c.d_ff = r.get<std::uint32_t>();
    c.context_len = r.get<std::uint32_t>();
    c.vocab_size = r.get<std::uint32_t>();
    c.dropout = r.get<double>();
    c.init_std = r.get<double>();
    c.seed = r.get<std::uint64_t>();
    const auto rank = r.get<std::uint32_t>();
    const auto alpha = r.get<double>();

    TransformerModel m(c);
    if (rank > 0) {
        m.attach_lora({rank, alpha}, 0, c.vocab_size);
    }
    const auto n = r.get<std::uint32_t>();
    if (n != m.params().size()) {
        throw Error(ErrorCode::ShapeMismatch, "checkpoint has " + std::to_string(n) +
                                                  " tensors, model expects " +
                                                  std::to_string(m.params().size()));
    }
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto name = r.get_string();
        Param& p = m.param(name);
        const auto rows = r.get<std::uint32_t>();
        const auto cols = r.get<std::uint32_t>();
        if (rows != p.rows || cols != p.cols) {
            throw Error(ErrorCode::ShapeMismatch, "tensor '" + name + "' has unexpected shape");
        }
        p.trainable_from_row = r.get<std::uint32_t>();
        p.decay = r.get<std::uint8_t>() != 0;
        std::vector<float> values(p.size());
        r.get_floats(values);
        for (std::size_t j = 0; j < values.size(); ++j) {
            if (!std::isfinite(values[j])) {
                throw Error(ErrorCode::NonFiniteValue, "tensor '" + name + "' holds a non-finite value");
            }
            p.value[j] = values[j];
        }
    }
    if (r.remaining() != 0) {
        throw Error(ErrorCode::MalformedRecord, "trailing bytes in checkpoint");
    }
    return m;
}

void save_transformer(const std::filesystem::path& path, const TransformerModel& m) {
    write_file_bytes(path, serialize_transformer(m));
}

TransformerModel load_transformer(const std::filesystem::path& path) {
    return parse_transformer_bytes(read_file_bytes(path));
}

}  // namespace dsu
