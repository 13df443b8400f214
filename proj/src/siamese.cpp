#include "wsmt/siamese.hpp"

#include <set>
#include <stdexcept>

namespace wsmt {

void NetworkConfig::validate() const {
    if (input_channels < 1) throw std::invalid_argument("input_channels must be >= 1");
    if (blocks < 1) throw std::invalid_argument("the encoder needs at least one TCN block");
    if (feature_maps < 1) throw std::invalid_argument("feature_maps must be >= 1");
    if (dilations.empty()) throw std::invalid_argument("each TCN block needs at least one conv layer");
    validate_conv_geometry(kernel_size, 1);
    for (std::size_t d : dilations) validate_conv_geometry(kernel_size, d);
    if (heads.empty()) throw std::invalid_argument("the network needs at least one head");
    std::set<Task> seen;
    for (const auto& h : heads) {
        if (h.embedding_dim < 1) throw std::invalid_argument("embedding_dim must be >= 1");
        if (!seen.insert(h.task).second) throw std::invalid_argument("duplicate head for one task");
    }
}

std::size_t NetworkConfig::min_length() const {
    if (!pool_between_blocks || blocks < 2) return 1;
    return std::size_t{1} << (blocks - 1);
}

bool NetworkConfig::has_head(Task t) const {
    for (const auto& h : heads)
        if (h.task == t) return true;
    return false;
}

std::size_t NetworkConfig::parameter_count() const {
    const std::size_t m = feature_maps, k = kernel_size;
    std::size_t n = 0;
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t in = b == 0 ? input_channels : m;
        for (std::size_t l = 0; l < dilations.size(); ++l) {
            const std::size_t cin = l == 0 ? in : m;
            n += m * cin * k + m;  // conv
            n += 2 * m;            // batch norm gamma, beta
        }
        if (in != m) n += m * in + m;
    }
    for (const auto& h : heads) n += h.embedding_dim * m + h.embedding_dim;
    return n;
}

}  // namespace wsmt
