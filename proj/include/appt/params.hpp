#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "appt/tensor.hpp"

namespace appt {

// Ordered registry of named parameters. Entries share storage with the owning
// module structs, so in-place optimizer updates are visible everywhere. The
// trainable flag here is the single source of truth for the partition.
class ParamSet {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool trainable = false;
    };

    void add(std::string name, const Tensor& tensor, bool trainable);

    const std::vector<Entry>& entries() const { return entries_; }
    const Entry& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    int64_t count(bool trainable) const;
    int64_t total_count() const { return count(true) + count(false); }

    std::vector<const Entry*> partition(bool trainable) const;

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// FNV-1a over a tensor's checkpoint bytes (little-endian f32); used for the
// frozen-set integrity checks.
uint64_t tensor_bytes_hash(const Tensor& t);

} // namespace appt
