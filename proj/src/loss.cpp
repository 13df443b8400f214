#include "wsmt/loss.hpp"

namespace wsmt {

void LossConfig::validate() const {
    if (!(margin > 0)) throw std::invalid_argument("contrastive margin must be positive");
    bool any = false;
    for (double w : weights) {
        if (!(w >= 0)) throw std::invalid_argument("task weights must be non-negative");
        any = any || w > 0;
    }
    if (!any) throw std::invalid_argument("at least one task weight must be positive");
}

}  // namespace wsmt
