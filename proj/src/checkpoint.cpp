#include "moelab/checkpoint.hpp"

#include <bit>
#include <algorithm>
#include <array>
#include <cstring>

#include "moelab/io.hpp"

namespace moelab {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'E', 'L', 'A', 'B', 'C', 'K'};

template <typename T>
void put(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
        out.append(bytes.rbegin(), bytes.rend());
    } else {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        out.append(buf, sizeof(T));
    }
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        std::array<char, sizeof(T)> buf;
        std::memcpy(buf.data(), bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
        pos_ += sizeof(T);
        return std::bit_cast<T>(buf);
    }

    std::string str(std::uint64_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::uint64_t n) const {
        if (pos_ + n > bytes_.size()) throw InputError("checkpoint truncated");
    }

    const std::string& bytes_;
    size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Model& model, std::uint64_t step) {
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, step);
    const std::string cfg = model.config().to_text();
    put<std::uint64_t>(out, cfg.size());
    out += cfg;
    put<std::uint64_t>(out, model.parameters().size());
    for (const auto& p : model.parameters()) {
        put<std::uint64_t>(out, p.name.size());
        out += p.name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
        for (Index d : p.value.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
        for (double v : p.value.data()) put<double>(out, v);
    }
    return out;
}

void save_checkpoint(const Model& model, std::uint64_t step, const std::filesystem::path& path) {
    write_file_atomic(path, encode_checkpoint(model, step));
}

LoadedCheckpoint decode_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw InputError("not a moelab checkpoint");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) throw InputError("unsupported checkpoint version " + std::to_string(version));
    const auto step = r.get<std::uint64_t>();
    const std::string cfg = r.str(r.get<std::uint64_t>());
    LoadedCheckpoint ck{Model(ModelConfig::from_text(cfg)), step};
    const auto count = r.get<std::uint64_t>();
    if (count != ck.model.parameters().size()) throw InputError("checkpoint blob count does not match its config");
    for (auto& p : ck.model.parameters()) {
        const std::string name = r.str(r.get<std::uint64_t>());
        if (name != p.name) throw InputError("checkpoint blob '" + name + "' where '" + p.name + "' was expected");
        const auto rank = r.get<std::uint32_t>();
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(r.get<std::uint64_t>()));
        if (shape != p.value.shape()) throw InputError("checkpoint blob '" + name + "' has shape " + shape_string(shape));
        for (double& v : p.value.data()) v = r.get<double>();
    }
    if (!r.done()) throw InputError("trailing bytes after checkpoint blobs");
    return ck;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_text_file(path)); }

}  // namespace moelab
