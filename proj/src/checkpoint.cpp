// Checkpoint layout (all integers little-endian):
//   "WSMT" | u32 version | u64 header length | header JSON |
//   float32 payload | u64 FNV-1a checksum of every preceding byte
// The header carries the network config, training counters and a tensor
// manifest of {name, shape, offset} with offsets in bytes from the payload start.

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "wsmt/json_io.hpp"
#include "wsmt/train.hpp"

namespace wsmt {

namespace {

constexpr char kMagic[4] = {'W', 'S', 'M', 'T'};
constexpr std::size_t kPreamble = 4 + 4 + 8;

std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

template <typename U>
U get_le(const std::vector<std::uint8_t>& in, std::size_t pos) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(in[pos + i]) << (8 * i);
    return v;
}

template <typename F>
void for_each_tensor(Network& net, F&& f) {
    net.for_each_param([&](const std::string& name, Param& p) { f(name, p.value); });
    net.for_each_buffer([&](const std::string& name, Tensor& t) { f(name, t); });
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    Network net = ckpt.network;
    nlohmann::json manifest = nlohmann::json::array();
    std::size_t offset = 0;
    for_each_tensor(net, [&](const std::string& name, Tensor& t) {
        manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.size() * sizeof(float);
    });
    const nlohmann::json header{{"config", net.config},
                                {"step", ckpt.step},
                                {"seed", ckpt.seed},
                                {"epoch", ckpt.epoch},
                                {"tensors", manifest}};
    const std::string header_text = header.dump();

    std::vector<std::uint8_t> bytes(std::begin(kMagic), std::end(kMagic));
    put_le<std::uint32_t>(bytes, ckpt.version);
    put_le<std::uint64_t>(bytes, header_text.size());
    bytes.insert(bytes.end(), header_text.begin(), header_text.end());
    for_each_tensor(net, [&](const std::string&, Tensor& t) {
        for (float v : t.values()) put_le<std::uint32_t>(bytes, std::bit_cast<std::uint32_t>(v));
    });
    put_le<std::uint64_t>(bytes, fnv1a(bytes, bytes.size()));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};

    if (bytes.size() < kPreamble) throw CheckpointError("checkpoint truncated: missing preamble");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("not a checkpoint: bad magic bytes");
    const auto version = get_le<std::uint32_t>(bytes, 4);
    if (version != kCheckpointVersion) {
        throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                     std::to_string(kCheckpointVersion) + ")");
    }
    const auto header_len = get_le<std::uint64_t>(bytes, 8);
    if (header_len > bytes.size() - kPreamble) throw CheckpointError("checkpoint truncated inside header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + long(kPreamble), bytes.begin() + long(kPreamble + header_len));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }

    Checkpoint ckpt;
    ckpt.version = version;
    try {
        ckpt.network = build_network<float>(header.at("config").get<NetworkConfig>(), 0);
        ckpt.step = header.at("step").get<std::uint64_t>();
        ckpt.seed = header.at("seed").get<std::uint64_t>();
        ckpt.epoch = header.at("epoch").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }

    std::size_t payload_bytes = 0;
    for_each_tensor(ckpt.network, [&](const std::string&, Tensor& t) { payload_bytes += t.size() * sizeof(float); });
    const std::size_t payload_start = kPreamble + header_len;
    if (bytes.size() < payload_start + payload_bytes + 8) throw CheckpointError("checkpoint truncated inside payload");
    if (bytes.size() != payload_start + payload_bytes + 8) throw CheckpointError("checkpoint has trailing bytes");
    const std::size_t body = bytes.size() - 8;
    if (get_le<std::uint64_t>(bytes, body) != fnv1a(bytes, body)) throw CheckpointError("checkpoint checksum mismatch");

    std::map<std::string, const nlohmann::json*> entries;
    for (const auto& e : header.at("tensors")) entries[e.at("name").get<std::string>()] = &e;
    for_each_tensor(ckpt.network, [&](const std::string& name, Tensor& t) {
        auto it = entries.find(name);
        if (it == entries.end()) throw CheckpointError("checkpoint lacks tensor " + name);
        const auto& e = *it->second;
        if (e.at("shape").get<Shape>() != t.shape()) throw CheckpointError("shape mismatch for tensor " + name);
        const auto offset = e.at("offset").get<std::size_t>();
        if (offset + t.size() * sizeof(float) > payload_bytes) throw CheckpointError("tensor " + name + " out of range");
        for (std::size_t i = 0; i < t.size(); ++i)
            t[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, payload_start + offset + 4 * i));
    });
    return ckpt;
}

}  // namespace wsmt
