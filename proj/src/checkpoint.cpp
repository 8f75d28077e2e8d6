// Checkpoint layout (all integers and floats little-endian):
//
//   "DECI"  u32 version
//   u32 vocab_size, d_e, d_h, N_L, F_N
//   f32 arrays, row-major: embedding, enc_proj, enc_bias, label_queries,
//       expert_w[0..F_N), expert_b[0..F_N), gate_w, gate_bias
//   u64 byte length, then a UTF-8 JSON object
//       {"vocabulary": [...], "labels": [...], "model": {...}, "config": {...}}

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "deci/training.hpp"

namespace deci {

namespace {

constexpr char kMagic[4] = {'D', 'E', 'C', 'I'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::string_view take(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("checkpoint truncated while reading ") + what);
        }
        auto out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    std::uint32_t u32(const char* what) {
        auto b = take(4, what);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
        return v;
    }
    std::uint64_t u64(const char* what) {
        auto b = take(8, what);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
        return v;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

std::uint32_t checked_dim(std::size_t v) {
    if (v > UINT32_MAX) throw FormatError("checkpoint dimension exceeds 32 bits");
    return static_cast<std::uint32_t>(v);
}

}  // namespace

void round_to_storage_precision(ModelParams& params) {
    for (auto& [name, m] : params.arrays()) {
        for (double& v : m->data()) v = static_cast<double>(static_cast<float>(v));
    }
}

std::string serialize_checkpoint(const DeciModel& model, const nlohmann::json& config) {
    const ModelParams& p = model.params;
    p.validate();
    if (model.vocab.size() != p.vocab_size() || model.labels.size() != p.n_labels()) {
        throw DimensionError("checkpoint: vocabulary or label space does not match parameters");
    }
    std::string out(kMagic, sizeof kMagic);
    put_u32(out, kCheckpointVersion);
    for (std::size_t d : {p.vocab_size(), p.d_e(), p.d_h(), p.n_labels(), p.n_experts()}) {
        put_u32(out, checked_dim(d));
    }
    out.reserve(out.size() + 4 * p.parameter_count());
    for (const auto& [name, m] : p.arrays()) {
        for (double v : m->data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    nlohmann::json meta;
    meta["vocabulary"] = model.vocab.tokens();
    meta["labels"] = model.labels.labels();
    meta["model"] = {{"max_len", model.config.max_len},
                     {"gating", std::string(to_string(model.config.gating))}};
    meta["config"] = config;
    const std::string blob = meta.dump();
    put_u64(out, blob.size());
    out += blob;
    return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    Reader r(bytes);
    auto magic = r.take(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad checkpoint magic bytes");
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint version " + std::to_string(version) +
                          " is not supported (this build reads version " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint32_t vocab = r.u32("vocab_size"), de = r.u32("d_e"), dh = r.u32("d_h"),
                        nl = r.u32("N_L"), fn = r.u32("F_N");
    if (vocab < reserved::kCount || de == 0 || dh == 0 || nl == 0 || fn == 0) {
        throw FormatError("checkpoint dimensions are invalid");
    }
    // Reject impossible sizes before allocating anything.
    unsigned __int128 floats = static_cast<unsigned __int128>(vocab) * de +
                               static_cast<unsigned __int128>(de) * dh + dh +
                               static_cast<unsigned __int128>(nl) * dh +
                               static_cast<unsigned __int128>(fn) * nl * dh +
                               static_cast<unsigned __int128>(fn) * nl +
                               static_cast<unsigned __int128>(dh) * fn + fn;
    if (floats * 4 > r.remaining()) throw FormatError("checkpoint truncated in parameter arrays");

    ModelConfig cfg;
    cfg.d_e = de;
    cfg.d_h = dh;
    cfg.n_experts = fn;
    ModelParams params = ModelParams::zeros(vocab, nl, cfg);
    for (auto& [name, m] : params.arrays()) {
        for (double& v : m->data()) {
            v = static_cast<double>(std::bit_cast<float>(r.u32(name.c_str())));
        }
    }
    const std::uint64_t len = r.u64("metadata length");
    if (len != r.remaining()) {
        throw FormatError("checkpoint metadata length " + std::to_string(len) + " does not match the " +
                          std::to_string(r.remaining()) + " bytes that follow");
    }
    auto blob = r.take(static_cast<std::size_t>(len), "metadata");

    Checkpoint ck;
    try {
        nlohmann::json meta = nlohmann::json::parse(blob);
        ck.model.vocab = Vocabulary::from_tokens(meta.at("vocabulary").get<std::vector<std::string>>());
        ck.model.labels = LabelSpace(meta.at("labels").get<std::vector<std::string>>());
        cfg.max_len = meta.at("model").at("max_len").get<std::size_t>();
        cfg.gating = parse_gating_mode(meta.at("model").at("gating").get<std::string>());
        ck.config = meta.at("config");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint metadata is invalid: ") + e.what());
    } catch (const ValidationError& e) {
        throw FormatError(std::string("checkpoint metadata is invalid: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint metadata is invalid: ") + e.what());
    }
    if (ck.model.vocab.size() != vocab || ck.model.labels.size() != nl) {
        throw FormatError("checkpoint metadata disagrees with the stored dimensions");
    }
    try {
        params.validate();
    } catch (const std::exception& e) {
        throw FormatError(std::string("checkpoint parameters are invalid: ") + e.what());
    }
    ck.model.config = cfg;
    ck.model.params = std::move(params);
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const DeciModel& model,
                     const nlohmann::json& config) {
    const std::string bytes = serialize_checkpoint(model, config);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return deserialize_checkpoint(os.str());
}

}  // namespace deci
