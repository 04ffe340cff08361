#include "ctxseg/tensor/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ctxseg {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void append_u64(std::string& out, std::uint64_t v) {
    char buf[8];
    std::memcpy(buf, &v, 8);
    out.append(buf, 8);
}

}  // namespace

std::string serialize_checkpoint(const ParameterList& tensors) {
    nlohmann::json header = nlohmann::json::object();
    std::set<std::string> names;
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        if (!names.insert(name).second) throw CheckpointError("duplicate tensor name '" + name + "'");
        const std::uint64_t bytes = t.numel() * sizeof(double);
        header[name] = {{"dtype", "F64"}, {"shape", t.shape()}, {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    const std::string text = header.dump();
    std::string out;
    out.reserve(8 + text.size() + offset);
    append_u64(out, text.size());
    out += text;
    for (const auto& nt : tensors) {
        auto d = nt.tensor.data();
        out.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double));
    }
    return out;
}

std::map<std::string, Tensor> deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < 8) throw CheckpointError("checkpoint truncated before header length");
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data(), 8);
    if (header_len > bytes.size() - 8) throw CheckpointError("checkpoint header length exceeds file size");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(8, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    const std::size_t payload = 8 + header_len;
    std::map<std::string, Tensor> out;
    for (const auto& [name, entry] : header.items()) {
        if (entry.value("dtype", "") != "F64") throw CheckpointError("tensor '" + name + "' is not F64");
        Shape shape = entry.at("shape").get<Shape>();
        auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
        if (offsets.size() != 2 || offsets[1] < offsets[0] ||
            offsets[1] - offsets[0] != shape_numel(shape) * sizeof(double) ||
            payload + offsets[1] > bytes.size()) {
            throw CheckpointError("tensor '" + name + "' has inconsistent offsets");
        }
        std::vector<double> data(shape_numel(shape));
        std::memcpy(data.data(), bytes.data() + payload + offsets[0], offsets[1] - offsets[0]);
        out.emplace(name, Tensor(std::move(shape), std::move(data)));
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterList& tensors) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot write checkpoint " + path.string());
    const auto bytes = serialize_checkpoint(tensors);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot read checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return deserialize_checkpoint(ss.str());
}

void assign_from_checkpoint(const ParameterList& targets, const std::map<std::string, Tensor>& values) {
    for (const auto& [name, t] : targets) {
        auto it = values.find(name);
        if (it == values.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
        if (it->second.shape() != t.shape()) {
            throw CheckpointError("tensor '" + name + "' has shape " + shape_to_string(it->second.shape()) +
                                  ", expected " + shape_to_string(t.shape()));
        }
        auto dst = const_cast<Tensor&>(t).data();
        auto src = it->second.data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

std::uint64_t checkpoint_checksum(const ParameterList& tensors) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : serialize_checkpoint(tensors)) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace ctxseg
