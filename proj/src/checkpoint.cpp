#include "btsr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <vector>

#include "btsr/errors.hpp"
#include "btsr/io.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace btsr {

namespace {

constexpr char kMagic[8] = {'B', 'T', 'S', 'R', 'C', 'K', 'P', 'T'};

class Writer {
public:
    template <class T>
    void put(const T& v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.append(p, sizeof(T));
    }
    void put_string(const std::string& s) {
        put(static_cast<std::uint32_t>(s.size()));
        buf_.append(s);
    }
    void put_raw(const void* data, std::size_t n) { buf_.append(static_cast<const char*>(data), n); }
    std::string take() { return std::move(buf_); }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        T v;
        std::memcpy(&v, need(sizeof(T)), sizeof(T));
        return v;
    }
    std::string get_string() {
        const auto n = get<std::uint32_t>();
        return std::string(need(n), n);
    }
    void get_raw(void* out, std::size_t n) { std::memcpy(out, need(n), n); }
    bool done() const { return pos_ == bytes_.size(); }

private:
    const char* need(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated");
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_bytes(const Checkpoint& ck) {
    Writer w;
    w.put_raw(kMagic, sizeof kMagic);
    w.put(kCheckpointVersion);
    w.put(ck.seed);
    w.put_string(ck.config_json);
    const auto& c = ck.model.config;
    for (int v : {c.num_items, c.dim, c.layers, c.heads, c.max_len, c.ffn_dim}) w.put(static_cast<std::int32_t>(v));
    w.put(c.dropout);
    w.put(c.layer_norm_eps);

    std::uint32_t count = 0;
    ck.model.params.for_each([&](const std::string&, const Matrix&) { ++count; });
    w.put(count);
    ck.model.params.for_each([&](const std::string& name, const Matrix& m) {
        w.put_string(name);
        w.put(static_cast<std::uint64_t>(m.rows()));
        w.put(static_cast<std::uint64_t>(m.cols()));
        w.put_raw(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
    });
    return w.take();
}

Checkpoint checkpoint_from_bytes(const std::string& bytes) {
    Reader r(bytes);
    char magic[8];
    r.get_raw(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw FormatError("not a checkpoint file");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }

    Checkpoint ck;
    ck.seed = r.get<std::uint64_t>();
    ck.config_json = r.get_string();
    auto& c = ck.model.config;
    c.num_items = r.get<std::int32_t>();
    c.dim = r.get<std::int32_t>();
    c.layers = r.get<std::int32_t>();
    c.heads = r.get<std::int32_t>();
    c.max_len = r.get<std::int32_t>();
    c.ffn_dim = r.get<std::int32_t>();
    c.dropout = r.get<double>();
    c.layer_norm_eps = r.get<double>();
    c.validate();

    // Shapes come from a freshly built parameter set; the file must agree.
    ck.model.params = init_parameters(c, 0);
    const auto count = r.get<std::uint32_t>();
    std::uint32_t seen = 0;
    ck.model.params.for_each([&](const std::string& name, Matrix& m) {
        ++seen;
        if (seen > count) throw FormatError("checkpoint is missing tensor " + name);
        const auto stored = r.get_string();
        if (stored != name) throw FormatError("expected tensor " + name + ", found " + stored);
        const auto rows = r.get<std::uint64_t>();
        const auto cols = r.get<std::uint64_t>();
        if (rows != static_cast<std::uint64_t>(m.rows()) || cols != static_cast<std::uint64_t>(m.cols())) {
            throw FormatError("shape mismatch for tensor " + name);
        }
        r.get_raw(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
    });
    if (seen != count || !r.done()) throw FormatError("trailing data in checkpoint");
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    write_file_atomic(path, checkpoint_bytes(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_bytes(read_file(path)); }

}  // namespace btsr
