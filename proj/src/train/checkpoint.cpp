// Checkpoint layout, all integers little-endian:
//
//   "MIMR"  u32 version
//   params table
//   u64 step  u64 epoch
//   first-moment table   second-moment table
//   u32 rng_len  rng state bytes (mt19937_64 text form)
//
// A table is u32 count followed by entries of
//   u32 name_len  name (UTF-8)  u8 dtype (1 = f64)  u32 rank  u64 extents[rank]
//   payload: numel IEEE-754 doubles.
// Moment tables store flat vectors with rank 1. In the params table, names
// ending in ".pos" are fixed buffers and load without requires-grad.

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mimir/train.hpp"

namespace mimir::train {

namespace {

constexpr char kMagic[4] = {'M', 'I', 'M', 'R'};
constexpr std::uint8_t kDtypeF64 = 1;
constexpr std::uint32_t kMaxRank = 8;

class Writer {
public:
    void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
    template <class T>
    void uint(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f64(double d) { uint(std::bit_cast<std::uint64_t>(d)); }
    void str(const std::string& s) {
        uint(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void entry(const std::string& name, const Shape& shape, std::span<const double> values) {
        str(name);
        uint(kDtypeF64);
        uint(static_cast<std::uint32_t>(shape.size()));
        for (std::size_t e : shape) uint(static_cast<std::uint64_t>(e));
        for (double d : values) f64(d);
    }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& data) : data_(data) {}

    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    template <class T>
    T uint() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += sizeof(T);
        return v;
    }
    double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
    std::string str() {
        auto n = uint<std::uint32_t>();
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::pair<Shape, std::vector<double>> entry_body() {
        auto dtype = uint<std::uint8_t>();
        if (dtype != kDtypeF64) throw CheckpointError("checkpoint: unknown dtype code " + std::to_string(dtype));
        auto rank = uint<std::uint32_t>();
        if (rank > kMaxRank) throw CheckpointError("checkpoint: corrupt shape table (rank " + std::to_string(rank) + ")");
        Shape shape;
        std::size_t numel = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            auto e = uint<std::uint64_t>();
            if (e == 0 || e > remaining() / 8 + 1) throw CheckpointError("checkpoint: corrupt shape table (extent)");
            numel *= static_cast<std::size_t>(e);
            if (numel > remaining() / 8 + 1) throw CheckpointError("checkpoint: corrupt shape table (size)");
            shape.push_back(static_cast<std::size_t>(e));
        }
        need(numel * 8);
        std::vector<double> v(numel);
        for (auto& d : v) d = f64();
        return {shape, std::move(v)};
    }
    std::size_t remaining() const { return data_.size() - pos_; }
    bool done() const { return pos_ == data_.size(); }

private:
    const std::string& data_;
    std::size_t pos_ = 0;
};

bool is_buffer(const std::string& name) {
    return name.size() >= 4 && name.compare(name.size() - 4, 4, ".pos") == 0;
}

void write_moments(Writer& w, const std::map<std::string, std::vector<double>>& table) {
    w.uint(static_cast<std::uint32_t>(table.size()));
    for (const auto& [name, v] : table) w.entry(name, {v.size()}, v);
}

std::map<std::string, std::vector<double>> read_moments(Reader& r) {
    std::map<std::string, std::vector<double>> table;
    auto count = r.uint<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        auto [shape, values] = r.entry_body();
        if (shape.size() != 1) throw CheckpointError("checkpoint: moment '" + name + "' is not rank 1");
        table[name] = std::move(values);
    }
    return table;
}

}  // namespace

std::string serialize_checkpoint(const TrainState& state) {
    Writer w;
    w.bytes(kMagic, 4);
    w.uint(kCheckpointVersion);
    const auto& all = state.params.all();
    w.uint(static_cast<std::uint32_t>(all.size()));
    for (const auto& [name, t] : all) w.entry(name, t.shape(), t.values());
    w.uint(state.step);
    w.uint(state.epoch);
    write_moments(w, state.m);
    write_moments(w, state.v);
    w.str(state.rng.serialize());
    return w.take();
}

TrainState deserialize_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    r.need(4);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("checkpoint: bad magic");
    r.uint<std::uint32_t>();
    auto version = r.uint<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    TrainState s;
    auto count = r.uint<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        auto [shape, values] = r.entry_body();
        try {
            s.params.set(name, Tensor::create(std::move(shape), std::move(values), !is_buffer(name)));
        } catch (const std::exception& e) {
            throw CheckpointError("checkpoint: invalid tensor '" + name + "': " + e.what());
        }
    }
    s.step = r.uint<std::uint64_t>();
    s.epoch = r.uint<std::uint64_t>();
    s.m = read_moments(r);
    s.v = read_moments(r);
    try {
        s.rng = Rng::deserialize(r.str());
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("checkpoint: ") + e.what());
    }
    if (!r.done()) throw CheckpointError("checkpoint: trailing bytes after RNG section");
    for (const auto& [name, t] : s.params.trainable()) {
        auto mi = s.m.find(name);
        auto vi = s.v.find(name);
        if (mi == s.m.end() || vi == s.v.end() || mi->second.size() != t.numel() || vi->second.size() != t.numel())
            throw CheckpointError("checkpoint: optimizer moments do not match parameter '" + name + "'");
    }
    return s;
}

void save_checkpoint(const TrainState& state, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open '" + path + "' for writing");
    std::string bytes = serialize_checkpoint(state);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("write to '" + path + "' failed");
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return deserialize_checkpoint(ss.str());
}

}  // namespace mimir::train
