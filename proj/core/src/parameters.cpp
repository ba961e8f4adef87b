#include "dstlab/parameters.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dstlab/errors.hpp"
#include "dstlab/hash.hpp"

namespace dstlab::numeric {

namespace {

std::string encode_doubles(const std::vector<double>& xs) {
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(xs.size() * 16);
    for (double x : xs) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
        for (int shift = 60; shift >= 0; shift -= 4) out.push_back(hex[(bits >> shift) & 0xF]);
    }
    return out;
}

std::vector<double> decode_doubles(const std::string& s) {
    if (s.size() % 16 != 0) throw SchemaError("checkpoint: hex payload length not a multiple of 16");
    std::vector<double> out(s.size() / 16);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint64_t bits = 0;
        for (std::size_t j = 0; j < 16; ++j) {
            char c = s[i * 16 + j];
            std::uint64_t d;
            if (c >= '0' && c <= '9') d = static_cast<std::uint64_t>(c - '0');
            else if (c >= 'a' && c <= 'f') d = static_cast<std::uint64_t>(c - 'a' + 10);
            else throw SchemaError("checkpoint: bad hex digit");
            bits = (bits << 4) | d;
        }
        out[i] = std::bit_cast<double>(bits);
    }
    return out;
}

}  // namespace

Parameter& ParameterStore::add(const std::string& name, Tensor init, bool trainable) {
    if (index_.count(name)) throw SchemaError("duplicate parameter name: " + name);
    Parameter p;
    p.name = name;
    p.grad = Tensor::zeros(init.shape);
    p.moment1 = Tensor::zeros(init.shape);
    p.moment2 = Tensor::zeros(init.shape);
    p.value = std::move(init);
    p.trainable = trainable;
    index_[name] = items_.size();
    items_.push_back(std::move(p));
    return items_.back();
}

Parameter& ParameterStore::add_gaussian(const std::string& name, std::vector<int> shape, double stddev,
                                        Rng& rng, bool trainable) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& x : t.data) x = rng.normal(0.0, stddev);
    return add(name, std::move(t), trainable);
}

Parameter& ParameterStore::add_zeros(const std::string& name, std::vector<int> shape, bool trainable) {
    return add(name, Tensor::zeros(std::move(shape)), trainable);
}

Parameter& ParameterStore::add_ones(const std::string& name, std::vector<int> shape, bool trainable) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.fill(1.0);
    return add(name, std::move(t), trainable);
}

Parameter& ParameterStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw SchemaError("unknown parameter: " + name);
    return items_[it->second];
}

const Parameter& ParameterStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw SchemaError("unknown parameter: " + name);
    return items_[it->second];
}

void ParameterStore::zero_grads() {
    for (Parameter& p : items_) p.grad.fill(0.0);
}

std::int64_t ParameterStore::total_elements() const {
    std::int64_t n = 0;
    for (const Parameter& p : items_) n += p.value.numel();
    return n;
}

std::vector<Tensor> ParameterStore::snapshot_values() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const Parameter& p : items_) out.push_back(p.value);
    return out;
}

void ParameterStore::restore_values(const std::vector<Tensor>& snap) {
    if (snap.size() != items_.size()) throw SchemaError("restore_values: size mismatch");
    for (std::size_t i = 0; i < snap.size(); ++i) {
        if (!snap[i].same_shape(items_[i].value)) throw SchemaError("restore_values: shape mismatch");
        items_[i].value = snap[i];
    }
}

std::string ParameterStore::to_json() const {
    nlohmann::ordered_json doc;
    doc["format"] = "dstlab-params-v1";
    nlohmann::ordered_json params = nlohmann::ordered_json::object();
    for (const Parameter& p : items_) {
        nlohmann::ordered_json entry;
        entry["shape"] = p.value.shape;
        entry["trainable"] = p.trainable;
        entry["data"] = encode_doubles(p.value.data);
        params[p.name] = std::move(entry);
    }
    doc["params"] = std::move(params);
    return doc.dump();
}

ParameterStore ParameterStore::from_json(const std::string& text) {
    // ordered_json so parameters come back in the order they were saved
    nlohmann::ordered_json doc = nlohmann::ordered_json::parse(text);
    if (!doc.contains("format") || doc["format"] != "dstlab-params-v1") {
        throw SchemaError("checkpoint: unknown format");
    }
    ParameterStore store;
    for (auto& [name, entry] : doc.at("params").items()) {
        std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        std::vector<double> data = decode_doubles(entry.at("data").get<std::string>());
        bool trainable = entry.value("trainable", true);
        store.add(name, Tensor(std::move(shape), std::move(data)), trainable);
    }
    return store;
}

void ParameterStore::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << to_json();
}

ParameterStore ParameterStore::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

std::uint64_t ParameterStore::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const Parameter& p : items_) {
        h = fnv1a64(p.name, h);
        for (int d : p.value.shape) {
            h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&d), sizeof(d)), h);
        }
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(p.value.data.data()),
                                     p.value.data.size() * sizeof(double)),
                    h);
    }
    return h;
}

}  // namespace dstlab::numeric
