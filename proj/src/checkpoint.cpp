#include "cpga/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace cpga {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'P', 'G', 'A'};
const std::string kModelPrefix = "model.";

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, data, chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

class Writer {
public:
    template <typename U>
    void put(U value) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
        bytes.insert(bytes.end(), p, p + sizeof(U));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        bytes.insert(bytes.end(), p, p + n);
    }
    std::vector<std::uint8_t> bytes;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

    template <typename U>
    U get() {
        U value;
        std::memcpy(&value, take(sizeof(U)), sizeof(U));
        return value;
    }
    const std::uint8_t* take(std::size_t n) {
        if (n > bytes_.size() - pos_)
            throw CheckpointTruncatedError("checkpoint truncated at byte " + std::to_string(pos_));
        const auto* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::size_t pos() const { return pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

const StoredTensor* CheckpointFile::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file) {
    Writer w;
    w.put_bytes(kMagic, 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    // nlohmann::json objects are key-sorted, so dump() is canonical.
    const std::string meta = file.meta.dump();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
    w.put_bytes(meta.data(), meta.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(file.tensors.size()));
    std::set<std::string> seen;
    for (const auto& t : file.tensors) {
        if (!seen.insert(t.name).second) throw CheckpointError("duplicate tensor name '" + t.name + "'");
        if (t.name.size() > 0xffff) throw CheckpointError("tensor name too long");
        if (t.shape.size() > 0xff) throw CheckpointError("tensor rank too large");
        if (numel(t.shape) != t.values.size()) throw CheckpointError("tensor '" + t.name + "' payload/shape mismatch");
        w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
        w.put_bytes(t.name.data(), t.name.size());
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
        for (auto d : t.shape) w.put<std::uint64_t>(d);
        const std::size_t payload_start = w.bytes.size();
        w.put_bytes(t.values.data(), t.values.size() * sizeof(float));
        w.put<std::uint32_t>(crc32_of(w.bytes.data() + payload_start, t.values.size() * sizeof(float)));
    }
    w.put<std::uint32_t>(crc32_of(w.bytes.data(), w.bytes.size()));
    return std::move(w.bytes);
}

CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    if (std::memcmp(r.take(4), kMagic, 4) != 0) throw CheckpointFormatError("not a checkpoint file (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                     std::to_string(kCheckpointVersion) + ")");
    CheckpointFile file;
    const auto meta_len = r.get<std::uint32_t>();
    const auto* meta = reinterpret_cast<const char*>(r.take(meta_len));
    try {
        file.meta = nlohmann::json::parse(std::string(meta, meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointFormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
    }
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        StoredTensor t;
        const auto name_len = r.get<std::uint16_t>();
        t.name.assign(reinterpret_cast<const char*>(r.take(name_len)), name_len);
        const auto ndim = r.get<std::uint8_t>();
        for (std::uint8_t d = 0; d < ndim; ++d) t.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
        const std::size_t n = numel(t.shape);
        if (n > bytes.size() / sizeof(float))
            throw CheckpointTruncatedError("tensor '" + t.name + "' larger than the file");
        const auto* payload = r.take(n * sizeof(float));
        const auto stored_crc = r.get<std::uint32_t>();
        if (crc32_of(payload, n * sizeof(float)) != stored_crc)
            throw CheckpointChecksumError("payload checksum mismatch for tensor '" + t.name + "'");
        t.values.resize(n);
        std::memcpy(t.values.data(), payload, n * sizeof(float));
        file.tensors.push_back(std::move(t));
    }
    const std::size_t body_len = r.pos();
    const auto file_crc = r.get<std::uint32_t>();
    if (crc32_of(bytes.data(), body_len) != file_crc) throw CheckpointChecksumError("file checksum mismatch");
    if (r.pos() != bytes.size()) throw CheckpointFormatError("trailing bytes after checkpoint");
    return file;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
    const auto bytes = encode_checkpoint(file);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

template <typename T>
std::vector<StoredTensor> export_tensors(const ParameterList<T>& params, const std::string& prefix) {
    std::vector<StoredTensor> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        StoredTensor t{prefix + p.name, p.tensor.shape(), {}};
        t.values.reserve(p.tensor.numel());
        for (T v : p.tensor.data()) t.values.push_back(static_cast<float>(v));
        out.push_back(std::move(t));
    }
    return out;
}

template <typename T>
void import_tensors(const ParameterList<T>& params, const CheckpointFile& file, const std::string& prefix) {
    std::set<std::string> expected;
    for (const auto& p : params) expected.insert(prefix + p.name);
    for (const auto& t : file.tensors)
        if (t.name.starts_with(prefix) && !expected.contains(t.name))
            throw UnknownTensorError("checkpoint tensor '" + t.name + "' has no matching parameter");
    for (const auto& p : params) {
        const StoredTensor* t = file.find(prefix + p.name);
        if (!t) throw MissingTensorError("checkpoint lacks parameter '" + prefix + p.name + "'");
        if (t->shape != p.tensor.shape())
            throw TensorShapeMismatchError("shape mismatch for '" + t->name + "': checkpoint " + to_string(t->shape) +
                                           ", model " + to_string(p.tensor.shape()));
    }
    for (const auto& p : params) {
        const StoredTensor* t = file.find(prefix + p.name);
        Tensor<T> dst = p.tensor;
        auto data = dst.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(t->values[i]);
    }
}

template <typename T>
CheckpointFile make_model_checkpoint(const CPGANet<T>& model) {
    CheckpointFile file;
    file.meta["model"] = to_json(model.config());
    file.tensors = export_tensors(model.parameters(), kModelPrefix);
    return file;
}

template <typename T>
void save_checkpoint(const CPGANet<T>& model, const std::filesystem::path& path) {
    write_checkpoint(path, make_model_checkpoint(model));
}

template <typename T>
CPGANet<T> model_from_checkpoint(const CheckpointFile& file) {
    if (!file.meta.contains("model")) throw CheckpointFormatError("checkpoint has no model config");
    CPGANet<T> model(model_config_from_json(file.meta["model"]));
    load_weights(model, file);
    return model;
}

template <typename T>
CPGANet<T> load_checkpoint(const std::filesystem::path& path) {
    return model_from_checkpoint<T>(read_checkpoint(path));
}

template <typename T>
void load_weights(const CPGANet<T>& model, const CheckpointFile& file) {
    import_tensors(model.parameters(), file, kModelPrefix);
}

#define CPGA_INSTANTIATE_CKPT(T)                                                                          \
    template std::vector<StoredTensor> export_tensors(const ParameterList<T>&, const std::string&);      \
    template void import_tensors(const ParameterList<T>&, const CheckpointFile&, const std::string&);    \
    template CheckpointFile make_model_checkpoint(const CPGANet<T>&);                                    \
    template void save_checkpoint(const CPGANet<T>&, const std::filesystem::path&);                      \
    template CPGANet<T> load_checkpoint<T>(const std::filesystem::path&);                                \
    template CPGANet<T> model_from_checkpoint<T>(const CheckpointFile&);                                 \
    template void load_weights(const CPGANet<T>&, const CheckpointFile&);

CPGA_INSTANTIATE_CKPT(float)
CPGA_INSTANTIATE_CKPT(double)

}  // namespace cpga
