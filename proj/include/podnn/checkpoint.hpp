#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "podnn/nets.hpp"
#include "podnn/tensor.hpp"

namespace podnn {

// Parameter archive: a text manifest (JSON) indexing named tensors per
// network, followed by one blob of raw little-endian float32 values.
// Layout:
//   bytes 0..15   magic "PODNN-CKPT-1\n" padded with '\0'
//   bytes 16..23  u64 LE manifest length M
//   bytes 24..    manifest (JSON, M bytes), then the float32 blob
class CheckpointArchive {
public:
    struct Entry {
        std::string net;
        std::string name;
        std::vector<int> shape;
        int64_t offset = 0;  // element offset into the blob
        int64_t count = 0;
    };

    nlohmann::json meta;

    void add(const std::string& net, const std::string& name, const std::vector<int>& shape,
             const std::vector<float>& values);

    const Entry* find(const std::string& net, const std::string& name) const;
    std::vector<float> values(const Entry& e) const;
    const std::vector<Entry>& entries() const { return entries_; }

    void save(const std::string& path) const;
    static CheckpointArchive load(const std::string& path);

private:
    std::vector<Entry> entries_;
    std::vector<float> blob_;
};

// ---------------------------------------------------------------------------
// network <-> archive adapters
// ---------------------------------------------------------------------------

template <class S, class Net>
void checkpoint_put_net(CheckpointArchive& a, const std::string& name, Net& net) {
    const auto params = net.params();
    const auto names = net.param_names();
    for (size_t i = 0; i < params.size(); ++i) {
        const TensorT<S>& t = params[i]->value;
        std::vector<float> vals(t.v.begin(), t.v.end());
        a.add(name, names[i], t.shape, vals);
    }
    for (auto& [sname, tensor] : net.state_tensors()) {
        std::vector<float> vals(tensor->v.begin(), tensor->v.end());
        a.add(name, sname, tensor->shape, vals);
    }
}

template <class S, class Net>
void checkpoint_get_net(const CheckpointArchive& a, const std::string& name, Net& net) {
    const auto params = net.params();
    const auto names = net.param_names();
    for (size_t i = 0; i < params.size(); ++i) {
        const CheckpointArchive::Entry* e = a.find(name, names[i]);
        if (e == nullptr) {
            throw std::runtime_error("checkpoint: missing tensor " + name + "/" + names[i]);
        }
        if (e->shape != params[i]->value.shape) {
            throw std::runtime_error("checkpoint: shape mismatch for " + name + "/" + names[i]);
        }
        const std::vector<float> vals = a.values(*e);
        for (size_t k = 0; k < vals.size(); ++k) params[i]->value[k] = static_cast<S>(vals[k]);
    }
    for (auto& [sname, tensor] : net.state_tensors()) {
        const CheckpointArchive::Entry* e = a.find(name, sname);
        if (e == nullptr) {
            throw std::runtime_error("checkpoint: missing tensor " + name + "/" + sname);
        }
        const std::vector<float> vals = a.values(*e);
        *tensor = TensorT<S>(e->shape);
        for (size_t k = 0; k < vals.size(); ++k) (*tensor)[k] = static_cast<S>(vals[k]);
    }
}

} // namespace podnn
