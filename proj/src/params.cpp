#include "appt/params.hpp"

#include <bit>
#include <cstring>

namespace appt {

void ParamSet::add(std::string name, const Tensor& tensor, bool trainable) {
    if (index_.count(name)) throw ContractError("parameter registered twice: " + name);
    if (!tensor.defined()) throw ContractError("parameter has no storage: " + name);
    if (tensor.requires_grad() != trainable) {
        throw IntegrityError("parameter \"" + name + "\" requires_grad flag disagrees with its partition");
    }
    index_[name] = entries_.size();
    entries_.push_back(Entry{std::move(name), tensor, trainable});
}

const ParamSet::Entry& ParamSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return entries_[it->second];
}

int64_t ParamSet::count(bool trainable) const {
    int64_t n = 0;
    for (const auto& e : entries_) {
        if (e.trainable == trainable) n += e.tensor.size();
    }
    return n;
}

std::vector<const ParamSet::Entry*> ParamSet::partition(bool trainable) const {
    std::vector<const Entry*> out;
    for (const auto& e : entries_) {
        if (e.trainable == trainable) out.push_back(&e);
    }
    return out;
}

uint64_t tensor_bytes_hash(const Tensor& t) {
    uint64_t h = 1469598103934665603ull;
    const double* p = t.data();
    for (int64_t i = 0; i < t.size(); ++i) {
        float f = static_cast<float>(p[i]);
        uint32_t bits;
        std::memcpy(&bits, &f, sizeof(bits));
        for (int b = 0; b < 4; ++b) {
            h ^= (bits >> (8 * b)) & 0xffu; // little-endian byte order
            h *= 1099511628211ull;
        }
    }
    return h;
}

} // namespace appt
