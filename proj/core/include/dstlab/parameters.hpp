#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "dstlab/rng.hpp"
#include "dstlab/tensor.hpp"

namespace dstlab::numeric {

// A named tensor with its gradient and AdamW state (first/second moment
// accumulators plus a step count). Gradients always share the value's shape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor moment1;
    Tensor moment2;
    std::int64_t steps = 0;
    bool trainable = true;
};

// Insertion-ordered collection of parameters. Order matters: optimizer updates
// and checkpoint serialization iterate in insertion order, which keeps whole
// training runs bit-reproducible.
class ParameterStore {
public:
    Parameter& add(const std::string& name, Tensor init, bool trainable = true);

    // Gaussian init, mean 0 / given stddev.
    Parameter& add_gaussian(const std::string& name, std::vector<int> shape, double stddev, Rng& rng,
                            bool trainable = true);
    Parameter& add_zeros(const std::string& name, std::vector<int> shape, bool trainable = true);
    Parameter& add_ones(const std::string& name, std::vector<int> shape, bool trainable = true);

    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::size_t size() const { return items_.size(); }
    Parameter& operator[](std::size_t i) { return items_[i]; }
    const Parameter& operator[](std::size_t i) const { return items_[i]; }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    void zero_grads();
    std::int64_t total_elements() const;

    // Deep copy / restore of parameter values only (not optimizer state).
    std::vector<Tensor> snapshot_values() const;
    void restore_values(const std::vector<Tensor>& snap);

    // Checkpoint format: a JSON map name -> {shape, data}, where data is the
    // hex encoding of each double's IEEE-754 bits (little-endian). Hex rather
    // than decimal so round-trips are bit-exact by construction.
    std::string to_json() const;
    static ParameterStore from_json(const std::string& text);

    void save(const std::string& path) const;
    static ParameterStore load(const std::string& path);

    // FNV hash over names, shapes and value bits.
    std::uint64_t content_hash() const;

private:
    // deque: references handed out by add()/at() stay valid as the store grows
    std::deque<Parameter> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace dstlab::numeric
