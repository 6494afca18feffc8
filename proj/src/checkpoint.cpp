// Checkpoint layout (little-endian):
//   char[4] "MMCK", u16 version
//   u32 n, char[n] config JSON
//   u32 video_dim, audio_dim, text_dim, basis_count, shared_dim, head_count, hidden_dim
//   u64 rng_key, u64 rng_counter, u32 epoch, f64 best_val_mse
//   u32 tensor_count, then per tensor: u16 name_len, name, u32 rows, u32 cols, f64[rows*cols]

#include <bit>
#include <fstream>
#include <iterator>

#include "mmreg/trainer.hpp"

namespace mmreg {

namespace {

class Writer {
public:
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    }
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    Reader(std::span<const std::uint8_t> data, std::string origin) : data_(data), origin_(std::move(origin)) {}

    std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(le(2, what)); }
    std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
    std::uint64_t u64(const char* what) { return le(8, what); }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    [[noreturn]] void fail(const std::string& what) const { throw ParseError(origin_, pos_, what); }

private:
    void need(std::size_t n, const char* what) {
        if (remaining() < n)
            fail(std::string("truncated while reading ") + what + ": need " + std::to_string(n) + " bytes, " +
                 std::to_string(remaining()) + " left");
    }
    std::uint64_t le(int n, const char* what) {
        need(static_cast<std::size_t>(n), what);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const std::uint8_t> data_;
    std::string origin_;
    std::size_t pos_ = 0;
};

FusionModel<double> skeleton(const ModelShape& shape) {
    FusionModel<double> m;
    m.fusion = MscmlpParams<double>(shape.dims, shape.basis_count, shape.shared_dim);
    m.ensemble.heads.assign(static_cast<std::size_t>(shape.head_count),
                            RegressionHead<double>(3 * shape.shared_dim, shape.hidden_dim));
    return m;
}

void check_expected(const ModelShape& got, const ModelShape& want, const std::string& origin) {
    auto cmp = [&](const char* name, Index g, Index w) {
        if (g != w)
            throw DataError(origin + ": checkpoint has " + name + "=" + std::to_string(g) + ", expected " + name + "=" +
                            std::to_string(w));
    };
    cmp("basis_count", got.basis_count, want.basis_count);
    cmp("shared_dim", got.shared_dim, want.shared_dim);
    cmp("head_count", got.head_count, want.head_count);
    cmp("hidden_dim", got.hidden_dim, want.hidden_dim);
    cmp("video_dim", got.dims.video, want.dims.video);
    cmp("audio_dim", got.dims.audio, want.dims.audio);
    cmp("text_dim", got.dims.text, want.dims.text);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.bytes("MMCK");
    w.u16(kCheckpointVersion);
    const std::string cfg = ckpt.config.to_json().dump();
    w.u32(static_cast<std::uint32_t>(cfg.size()));
    w.bytes(cfg);
    const ModelShape shape = ckpt.model.shape();
    for (Index v : {shape.dims.video, shape.dims.audio, shape.dims.text, shape.basis_count, shape.shared_dim,
                    shape.head_count, shape.hidden_dim})
        w.u32(static_cast<std::uint32_t>(v));
    w.u64(ckpt.rng.key);
    w.u64(ckpt.rng.counter);
    w.u32(ckpt.epoch);
    w.f64(ckpt.best_val_mse);

    std::vector<std::pair<std::string, const MatrixD*>> tensors;
    ckpt.model.for_each_linear([&](const std::string& name, const LinearParams<double>& p) {
        tensors.emplace_back(name + ".weight", &p.weight);
        if (p.bias) tensors.emplace_back(name + ".bias", &*p.bias);
    });
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name);
        w.u32(static_cast<std::uint32_t>(t->rows()));
        w.u32(static_cast<std::uint32_t>(t->cols()));
        for (Index i = 0; i < t->size(); ++i) w.f64(t->data()[i]);
    }
    return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes, const std::string& origin,
                                  const std::optional<ModelShape>& expected) {
    Reader r(bytes, origin);
    if (r.str(4, "magic") != "MMCK") throw ParseError(origin, 0, "bad magic (expected \"MMCK\")");
    const auto version = r.u16("version");
    if (version != kCheckpointVersion)
        throw ParseError(origin, 4, "unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                        std::to_string(kCheckpointVersion) + ")");

    Checkpoint ckpt;
    const auto cfg_len = r.u32("config length");
    const std::string cfg_text = r.str(cfg_len, "config");
    try {
        ckpt.config = TrainConfig::from_json(nlohmann::json::parse(cfg_text));
    } catch (const nlohmann::json::exception& e) {
        r.fail(std::string("config block is not valid JSON: ") + e.what());
    }

    ModelShape shape;
    shape.dims.video = r.u32("video dim");
    shape.dims.audio = r.u32("audio dim");
    shape.dims.text = r.u32("text dim");
    shape.basis_count = r.u32("basis count");
    shape.shared_dim = r.u32("shared dim");
    shape.head_count = r.u32("head count");
    shape.hidden_dim = r.u32("hidden dim");
    if (expected) check_expected(shape, *expected, origin);

    ckpt.rng.key = r.u64("rng key");
    ckpt.rng.counter = r.u64("rng counter");
    ckpt.epoch = r.u32("epoch");
    ckpt.best_val_mse = r.f64("best val mse");

    ckpt.model = skeleton(shape);
    std::vector<std::pair<std::string, MatrixD*>> tensors;
    ckpt.model.for_each_linear([&](const std::string& name, LinearParams<double>& p) {
        tensors.emplace_back(name + ".weight", &p.weight);
        if (p.bias) tensors.emplace_back(name + ".bias", &*p.bias);
    });
    const auto count = r.u32("tensor count");
    if (count != tensors.size())
        r.fail("tensor count " + std::to_string(count) + " does not match shape (" + std::to_string(tensors.size()) + ")");
    for (auto& [name, t] : tensors) {
        const auto name_len = r.u16("tensor name length");
        const std::string got = r.str(name_len, "tensor name");
        if (got != name) r.fail("expected tensor '" + name + "', found '" + got + "'");
        const auto rows = r.u32("tensor rows");
        const auto cols = r.u32("tensor cols");
        if (rows != t->rows() || cols != t->cols())
            r.fail("tensor '" + name + "' has shape [" + std::to_string(rows) + "x" + std::to_string(cols) +
                   "], expected " + shape_str(*t));
        if (r.remaining() < 8ULL * rows * cols)
            r.fail("tensor '" + name + "' truncated: need " + std::to_string(8ULL * rows * cols) + " bytes, " +
                   std::to_string(r.remaining()) + " left");
        for (Index i = 0; i < t->size(); ++i) t->data()[i] = r.f64("tensor data");
    }
    if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes after last tensor");
    ckpt.model.for_each_linear([](const std::string&, LinearParams<double>& p) {
        p.grad_weight.resize(0, 0);
        p.grad_bias.resize(0, 0);
    });
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(ckpt);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelShape>& expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return deserialize_checkpoint(bytes, path.string(), expected);
}

}  // namespace mmreg
