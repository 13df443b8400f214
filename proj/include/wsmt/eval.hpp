#pragma once

// Clustering of learned embeddings and scoring against the true classes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "wsmt/data.hpp"
#include "wsmt/siamese.hpp"
#include "wsmt/tensor.hpp"

namespace wsmt {

struct KMeansOptions {
    std::size_t max_iters = 300;
    std::size_t restarts = 10;
    double tolerance = 1e-6;  // relative inertia change that ends a restart
};

struct ClusterResult {
    std::vector<std::size_t> assignments;
    Tensor64 centroids;  // [k, dim]
    double inertia = 0;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::size_t iterations = 0;
    std::vector<double> inertia_trace;  // after each assignment step of the best restart
};

// k-means++ seeding followed by Lloyd iterations; keeps the lowest-inertia
// restart. points: [n, dim].
ClusterResult kmeans(const Tensor64& points, std::size_t k, std::uint64_t seed, const KMeansOptions& opts = {});

// Minimum-cost assignment of rows to distinct columns (rows <= cols).
// Returns the column chosen for each row.
std::vector<std::size_t> hungarian_min_cost(const std::vector<std::vector<double>>& cost);

struct MatchResult {
    std::map<std::size_t, int> cluster_to_class;  // unmatched clusters are absent
    std::size_t correct = 0;
    double accuracy = 0;
};

// One-to-one cluster/class matching maximizing agreement.
MatchResult match_and_accuracy(const std::vector<std::size_t>& assignments, const std::vector<int>& labels);

struct ClassScore {
    int cls = 0;
    std::size_t tp = 0, fp = 0, fn = 0;
    double precision = 0, recall = 0, f1 = 0;
};

struct F1Report {
    double mean_f1 = 0;
    std::vector<ClassScore> classes;  // one per distinct true label
};

// F_m = (2/|C|) sum_i P_i R_i / (P_i + R_i); classes with P_i + R_i = 0 add 0.
F1Report mean_f1(const std::vector<int>& predicted, const std::vector<int>& truth);

struct Metrics {
    Task task = Task::activity;
    std::size_t k = 0;
    std::size_t samples = 0;
    double accuracy = 0;
    double mean_f1 = 0;
    std::vector<ClassScore> classes;
    std::map<std::size_t, int> matching;
};

// Clusters `points` into k groups and scores them against `labels`.
Metrics score_clustering(const Tensor64& points, const std::vector<int>& labels, std::size_t k, std::uint64_t seed,
                         const KMeansOptions& opts = {});

struct WindowEmbeddings {
    Tensor general;         // [n, feature_maps]
    EmbeddingSet per_task;  // task -> [n, dim]
};

WindowEmbeddings embed_windows(Network& net, const std::vector<Window>& windows, std::size_t batch_size = 128);

// Embeds windows with the task head (eval mode), clusters with k = class
// count when k is 0, and scores.
Metrics evaluate_task(Network& net, const std::vector<Window>& windows, Task task, std::size_t k, std::uint64_t seed,
                      const KMeansOptions& opts = {});

// Same scoring on flattened raw windows.
Metrics evaluate_raw(const std::vector<Window>& windows, Task task, std::size_t k, std::uint64_t seed,
                     const KMeansOptions& opts = {});

// One row per window: id, labels, general representation, per-task embeddings.
void export_embeddings(Network& net, const std::vector<Window>& windows, const std::filesystem::path& path);

struct ExportedEmbeddings {
    std::vector<std::size_t> ids;
    std::vector<std::array<int, kTaskCount>> labels;
    Tensor general;
    EmbeddingSet per_task;
};

ExportedEmbeddings load_embeddings(const std::filesystem::path& path);

}  // namespace wsmt
