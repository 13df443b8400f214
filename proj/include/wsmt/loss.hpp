#pragma once

// Contrastive loss per embedding space and the weighted multi-task sum.
//   positive pair (y = 1): 1/2 D^2
//   negative pair (y = 0): 1/2 max(0, margin - D)^2
// with D the Euclidean distance between the two embeddings. Batches sum.

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>

#include "wsmt/siamese.hpp"
#include "wsmt/task.hpp"
#include "wsmt/tensor.hpp"

namespace wsmt {

struct LossConfig {
    double margin = 1.0;
    std::array<double, kTaskCount> weights{1.0, 1.0, 1.0};

    double weight(Task t) const { return weights[task_index(t)]; }
    void validate() const;

    friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

template <typename RangeA, typename RangeB>
auto pair_distance(const RangeA& a, const RangeB& b) {
    using Scalar = std::remove_cvref_t<decltype(*std::begin(a))>;
    if (a.size() != b.size()) {
        throw ShapeError("pair_distance: dims " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    Scalar sq = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Scalar d = a[i] - b[i];
        sq += d * d;
    }
    return std::sqrt(sq);
}

template <typename Scalar>
Scalar contrastive(Scalar distance, bool similar, Scalar margin) {
    if (similar) return Scalar(0.5) * distance * distance;
    const Scalar gap = std::max(Scalar(0), margin - distance);
    return Scalar(0.5) * gap * gap;
}

// Writes dL/da into grad_a and dL/db = -dL/da into grad_b. A coincident
// negative pair (D = 0) gets a zero gradient.
template <typename Scalar, typename RangeA, typename RangeB>
void contrastive_grad(const RangeA& a, const RangeB& b, bool similar, Scalar margin, std::span<Scalar> grad_a,
                      std::span<Scalar> grad_b) {
    const Scalar distance = pair_distance(a, b);
    Scalar coeff = 0;
    if (similar) {
        coeff = Scalar(1);
    } else if (distance < margin && distance > Scalar(0)) {
        coeff = -(margin - distance) / distance;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Scalar g = coeff * (a[i] - b[i]);
        grad_a[i] = g;
        grad_b[i] = -g;
    }
}

struct LossBreakdown {
    double total = 0;
    std::array<double, kTaskCount> per_task{};    // unweighted sums over pairs
    std::array<std::size_t, kTaskCount> pairs{};  // unmasked pairs per task
};

// Weighted sum over tasks and over the batch rows of `a`/`b`. Masked-absent
// tasks contribute neither loss nor gradient. When grad sets are given they
// receive dL/dH for every head present in `a`.
template <typename Scalar>
LossBreakdown multitask_loss(const BasicEmbeddingSet<Scalar>& a, const BasicEmbeddingSet<Scalar>& b,
                             std::span<const SimilarityLabel> labels, const LossConfig& cfg,
                             BasicEmbeddingSet<Scalar>* grads_a = nullptr,
                             BasicEmbeddingSet<Scalar>* grads_b = nullptr) {
    cfg.validate();
    LossBreakdown out;
    if (grads_a) grads_a->clear();
    if (grads_b) grads_b->clear();
    for (const auto& [task, ha] : a) {
        if (grads_a) grads_a->emplace(task, BasicTensor<Scalar>(ha.shape()));
        if (grads_b) grads_b->emplace(task, BasicTensor<Scalar>(ha.shape()));
    }

    for (Task task : kAllTasks) {
        const std::size_t ti = task_index(task);
        bool any = false;
        for (const auto& l : labels) any = any || l.has(task);
        if (!any) continue;

        auto ia = a.find(task);
        auto ib = b.find(task);
        if (ia == a.end() || ib == b.end()) {
            throw std::invalid_argument("labels reference task '" + std::string(task_name(task)) +
                                        "' but no embedding was produced for it");
        }
        const auto& ha = ia->second;
        const auto& hb = ib->second;
        if (ha.shape() != hb.shape() || ha.rank() != 2 || ha.dim(0) != labels.size()) {
            throw ShapeError("multitask_loss: embeddings " + shape_string(ha.shape()) + " / " +
                             shape_string(hb.shape()) + " for " + std::to_string(labels.size()) + " labels");
        }
        const Scalar margin = Scalar(cfg.margin);
        const Scalar w = Scalar(cfg.weight(task));
        for (std::size_t r = 0; r < labels.size(); ++r) {
            if (!labels[r].has(task)) continue;
            const bool y = labels[r].y(task);
            const Scalar d = pair_distance(ha.row(r), hb.row(r));
            out.per_task[ti] += double(contrastive(d, y, margin));
            ++out.pairs[ti];
            if (grads_a && grads_b) {
                auto ga = (*grads_a)[task].row(r);
                auto gb = (*grads_b)[task].row(r);
                contrastive_grad(ha.row(r), hb.row(r), y, margin, ga, gb);
                for (auto& v : ga) v *= w;
                for (auto& v : gb) v *= w;
            }
        }
        out.total += cfg.weight(task) * out.per_task[ti];
    }
    return out;
}

}  // namespace wsmt
