#include "ifse/model/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <map>

#include "ifse/error.hpp"

namespace ifse::model {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic{'I', 'F', 'S', 'E', 'C', 'K', 'P', 'T'};

struct NamedTensor {
    std::string name;
    torch::Tensor tensor;
    bool trainable;
};

std::vector<NamedTensor> named_tensors(IfseNet& net) {
    std::vector<NamedTensor> out;
    for (const auto& item : net->named_parameters()) {
        out.push_back({item.key(), item.value(), item.value().requires_grad()});
    }
    for (const auto& item : net->named_buffers()) {
        out.push_back({item.key(), item.value(), false});
    }
    return out;
}

torch::Tensor as_float_bytes(const torch::Tensor& t) {
    return t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

struct RawContainer {
    json header;
    std::string data;
};

RawContainer read_container(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::array<char, 8> magic{};
    std::uint32_t format = 0;
    std::uint64_t header_len = 0;
    in.read(magic.data(), magic.size());
    in.read(reinterpret_cast<char*>(&format), sizeof(format));
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in || magic != kMagic) throw IoError(path.string() + " is not a checkpoint container");
    if (format != kCheckpointFormat) {
        throw InvalidArgument("checkpoint " + path.string() + " has format version " + std::to_string(format) +
                              ", this build reads version " + std::to_string(kCheckpointFormat));
    }
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw IoError("truncated checkpoint header in " + path.string());
    RawContainer c;
    try {
        c.header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }
    c.data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return c;
}

torch::Tensor tensor_from(const RawContainer& c, const json& entry, const fs::path& path) {
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const auto offset = entry.at("offset").get<std::size_t>();
    if (entry.at("dtype").get<std::string>() != "float32") {
        throw IoError("unsupported tensor dtype in " + path.string());
    }
    auto t = torch::empty(shape, torch::kFloat32);
    const std::size_t bytes = static_cast<std::size_t>(t.numel()) * sizeof(float);
    if (offset + bytes > c.data.size()) {
        throw IoError("tensor '" + entry.at("name").get<std::string>() + "' runs past the end of " + path.string());
    }
    std::memcpy(t.data_ptr<float>(), c.data.data() + offset, bytes);
    return t;
}

void copy_into(torch::Tensor& dst, const torch::Tensor& src, const std::string& name) {
    if (!dst.sizes().equals(src.sizes())) {
        throw ShapeMismatch("tensor '" + name + "' has a different shape in the checkpoint");
    }
    torch::NoGradGuard no_grad;
    dst.copy_(src);
}

} // namespace

std::string version_tag(IfseNet& net) {
    std::uint64_t h = 14695981039346656037ULL;
    for (const auto& nt : named_tensors(net)) {
        h = fnv1a(h, nt.name.data(), nt.name.size());
        for (auto d : nt.tensor.sizes()) h = fnv1a(h, &d, sizeof(d));
        const auto t = as_float_bytes(nt.tensor);
        h = fnv1a(h, t.data_ptr(), static_cast<std::size_t>(t.numel()) * sizeof(float));
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return "v1-" + std::string(buf);
}

std::string save_checkpoint(IfseNet& net, const fs::path& path, const json& metadata) {
    const auto tensors = named_tensors(net);
    json entries = json::array();
    std::vector<torch::Tensor> blobs;
    std::size_t offset = 0;
    for (const auto& nt : tensors) {
        auto t = as_float_bytes(nt.tensor);
        entries.push_back({{"name", nt.name},
                           {"shape", nt.tensor.sizes().vec()},
                           {"dtype", "float32"},
                           {"offset", offset},
                           {"trainable", nt.trainable}});
        offset += static_cast<std::size_t>(t.numel()) * sizeof(float);
        blobs.push_back(std::move(t));
    }
    const std::string version = version_tag(net);
    const json header{{"config", net->config()}, {"version", version}, {"metadata", metadata}, {"tensors", entries}};
    const std::string header_text = header.dump();

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + tmp.string());
        const std::uint64_t header_len = header_text.size();
        out.write(kMagic.data(), kMagic.size());
        out.write(reinterpret_cast<const char*>(&kCheckpointFormat), sizeof(kCheckpointFormat));
        out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
        out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
        for (const auto& t : blobs) {
            out.write(static_cast<const char*>(t.data_ptr()),
                      static_cast<std::streamsize>(t.numel() * sizeof(float)));
        }
        if (!out.flush()) throw IoError("failed writing checkpoint " + tmp.string());
    }
    fs::rename(tmp, path);
    return version;
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
    const auto c = read_container(path);
    ModelConfig config;
    try {
        config = c.header.at("config").get<ModelConfig>();
    } catch (const json::exception& e) {
        throw IoError("checkpoint " + path.string() + " has no usable config: " + e.what());
    }
    IfseNet net(config);
    net->eval();
    std::map<std::string, const json*> by_name;
    for (const auto& e : c.header.at("tensors")) by_name[e.at("name").get<std::string>()] = &e;
    for (auto& nt : named_tensors(net)) {
        auto it = by_name.find(nt.name);
        if (it == by_name.end()) throw IoError("checkpoint " + path.string() + " lacks tensor '" + nt.name + "'");
        copy_into(nt.tensor, tensor_from(c, *it->second, path), nt.name);
    }
    LoadedCheckpoint out;
    out.net = net;
    out.version = version_tag(net);
    const auto stored = c.header.value("version", std::string());
    if (stored != out.version) {
        throw IoError("checkpoint " + path.string() + " content does not match its version tag " + stored);
    }
    out.metadata = c.header.value("metadata", json::object());
    return out;
}

std::size_t load_backbone_weights(IfseNet& net, const fs::path& path) {
    const auto c = read_container(path);
    std::map<std::string, torch::Tensor> targets;
    for (auto& nt : named_tensors(net)) {
        if (nt.name.rfind("backbone.", 0) == 0) targets.emplace(nt.name, nt.tensor);
    }
    std::size_t copied = 0;
    for (const auto& e : c.header.at("tensors")) {
        const auto name = e.at("name").get<std::string>();
        auto it = targets.find(name);
        if (it == targets.end()) continue;
        copy_into(it->second, tensor_from(c, e, path), name);
        ++copied;
    }
    if (copied != targets.size()) {
        throw IoError(path.string() + " provides " + std::to_string(copied) + " of " +
                      std::to_string(targets.size()) + " backbone tensors");
    }
    return copied;
}

} // namespace ifse::model
