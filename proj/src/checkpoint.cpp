#include "podnn/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace podnn {

namespace {

constexpr char kMagic[16] = "PODNN-CKPT-1\n";

static_assert(std::endian::native == std::endian::little,
              "checkpoint blob layout assumes a little-endian host");

} // namespace

void CheckpointArchive::add(const std::string& net, const std::string& name,
                            const std::vector<int>& shape, const std::vector<float>& values) {
    Entry e;
    e.net = net;
    e.name = name;
    e.shape = shape;
    e.offset = static_cast<int64_t>(blob_.size());
    e.count = static_cast<int64_t>(values.size());
    entries_.push_back(std::move(e));
    blob_.insert(blob_.end(), values.begin(), values.end());
}

const CheckpointArchive::Entry* CheckpointArchive::find(const std::string& net,
                                                        const std::string& name) const {
    for (const Entry& e : entries_) {
        if (e.net == net && e.name == name) return &e;
    }
    return nullptr;
}

std::vector<float> CheckpointArchive::values(const Entry& e) const {
    return std::vector<float>(blob_.begin() + e.offset, blob_.begin() + e.offset + e.count);
}

void CheckpointArchive::save(const std::string& path) const {
    nlohmann::json manifest;
    manifest["format"] = "podnn-ckpt/1";
    manifest["dtype"] = "float32le";
    manifest["meta"] = meta;
    nlohmann::json tensors = nlohmann::json::array();
    for (const Entry& e : entries_) {
        tensors.push_back({{"net", e.net},
                           {"name", e.name},
                           {"shape", e.shape},
                           {"offset", e.offset},
                           {"count", e.count}});
    }
    manifest["tensors"] = std::move(tensors);
    const std::string text = manifest.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.is_open()) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    const uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(blob_.data()),
              static_cast<std::streamsize>(blob_.size() * sizeof(float)));
    if (!out.good()) throw std::runtime_error("checkpoint: write failed: " + path);
}

CheckpointArchive CheckpointArchive::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[16];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (in.gcount() != sizeof(len)) throw std::runtime_error("checkpoint: truncated header");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (in.gcount() != static_cast<std::streamsize>(len)) {
        throw std::runtime_error("checkpoint: truncated manifest");
    }
    const nlohmann::json manifest = nlohmann::json::parse(text);
    if (manifest.value("format", "") != "podnn-ckpt/1") {
        throw std::runtime_error("checkpoint: unsupported format");
    }

    CheckpointArchive a;
    a.meta = manifest.value("meta", nlohmann::json::object());
    int64_t total = 0;
    for (const auto& t : manifest.at("tensors")) {
        Entry e;
        e.net = t.at("net").get<std::string>();
        e.name = t.at("name").get<std::string>();
        e.shape = t.at("shape").get<std::vector<int>>();
        e.offset = t.at("offset").get<int64_t>();
        e.count = t.at("count").get<int64_t>();
        total = std::max(total, e.offset + e.count);
        a.entries_.push_back(std::move(e));
    }
    a.blob_.resize(static_cast<size_t>(total));
    in.read(reinterpret_cast<char*>(a.blob_.data()),
            static_cast<std::streamsize>(a.blob_.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(a.blob_.size() * sizeof(float))) {
        throw std::runtime_error("checkpoint: truncated tensor blob");
    }
    return a;
}

} // namespace podnn
