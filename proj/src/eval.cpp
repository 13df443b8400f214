#include "wsmt/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace wsmt {

namespace {

double sq_dist(const double* a, const double* b, std::size_t dim) {
    double s = 0;
    for (std::size_t i = 0; i < dim; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

std::size_t distinct_rows(const Tensor64& points) {
    const std::size_t n = points.dim(0);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto row_less = [&](std::size_t a, std::size_t b) {
        auto ra = points.row(a), rb = points.row(b);
        return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    };
    std::sort(idx.begin(), idx.end(), row_less);
    std::size_t count = n ? 1 : 0;
    for (std::size_t i = 1; i < n; ++i)
        if (row_less(idx[i - 1], idx[i])) ++count;
    return count;
}

struct Run {
    std::vector<std::size_t> assignments;
    Tensor64 centroids;
    double inertia = 0;
    std::size_t iterations = 0;
    std::vector<double> trace;
};

Tensor64 kmeanspp_init(const Tensor64& points, std::size_t k, std::mt19937_64& rng) {
    const std::size_t n = points.dim(0), dim = points.dim(1);
    Tensor64 centroids({k, dim});
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    for (std::size_t c = 0; c < k; ++c) {
        std::copy_n(points.row(pick).data(), dim, centroids.data() + c * dim);
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], sq_dist(points.row(i).data(), centroids.data() + c * dim, dim));
            total += nearest[i];
        }
        if (c + 1 == k) break;
        if (total <= 0) {
            // All remaining mass sits on existing centroids; fall back to the farthest row.
            pick = std::size_t(std::max_element(nearest.begin(), nearest.end()) - nearest.begin());
            continue;
        }
        double r = std::uniform_real_distribution<double>(0.0, total)(rng);
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            if (nearest[i] <= 0) continue;
            if (r < nearest[i]) {
                pick = i;
                break;
            }
            r -= nearest[i];
        }
        while (nearest[pick] <= 0) pick = (pick + n - 1) % n;
    }
    return centroids;
}

Run lloyd(const Tensor64& points, Tensor64 centroids, const KMeansOptions& opts) {
    const std::size_t n = points.dim(0), dim = points.dim(1), k = centroids.dim(0);
    Run run;
    run.assignments.assign(n, 0);
    std::vector<double> dist(n);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0;; ++it) {
        double inertia = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            for (std::size_t c = 0; c < k; ++c) {
                const double d = sq_dist(points.row(i).data(), centroids.data() + c * dim, dim);
                if (d < best) {
                    best = d;
                    arg = c;
                }
            }
            run.assignments[i] = arg;
            dist[i] = best;
            inertia += best;
        }
        run.trace.push_back(inertia);
        run.iterations = it + 1;
        const bool converged = std::isfinite(prev) && prev - inertia <= opts.tolerance * prev;
        if (converged || it + 1 >= opts.max_iters) {
            run.inertia = inertia;
            break;
        }
        prev = inertia;

        Tensor64 next({k, dim});
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = run.assignments[i];
            ++counts[c];
            auto row = points.row(i);
            for (std::size_t d = 0; d < dim; ++d) next[c * dim + d] += row[d];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // Reseed an empty cluster at the worst-fit point.
                const auto far = std::size_t(std::max_element(dist.begin(), dist.end()) - dist.begin());
                std::copy_n(points.row(far).data(), dim, next.data() + c * dim);
                dist[far] = 0;
                continue;
            }
            for (std::size_t d = 0; d < dim; ++d) next[c * dim + d] /= double(counts[c]);
        }
        centroids = std::move(next);
    }
    run.centroids = std::move(centroids);
    return run;
}

}  // namespace

ClusterResult kmeans(const Tensor64& points, std::size_t k, std::uint64_t seed, const KMeansOptions& opts) {
    if (points.rank() != 2 || points.dim(0) == 0) throw std::invalid_argument("kmeans needs a non-empty [n, dim] point set");
    if (k < 1) throw std::invalid_argument("kmeans needs k >= 1");
    if (k > points.dim(0)) throw std::invalid_argument("kmeans: k exceeds the number of points");
    if (k > distinct_rows(points)) throw std::invalid_argument("kmeans: k exceeds the number of distinct points");
    if (opts.restarts < 1 || opts.max_iters < 1) throw std::invalid_argument("kmeans needs >= 1 restart and iteration");

    ClusterResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < opts.restarts; ++r) {
        std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + r);
        auto run = lloyd(points, kmeanspp_init(points, k, rng), opts);
        if (run.inertia < best.inertia) {
            best.assignments = std::move(run.assignments);
            best.centroids = std::move(run.centroids);
            best.inertia = run.inertia;
            best.iterations = run.iterations;
            best.inertia_trace = std::move(run.trace);
        }
    }
    best.k = k;
    best.seed = seed;
    return best;
}

std::vector<std::size_t> hungarian_min_cost(const std::vector<std::vector<double>>& cost) {
    const std::size_t n = cost.size();
    if (n == 0) return {};
    const std::size_t m = cost.front().size();
    if (m < n) throw std::invalid_argument("hungarian: needs rows <= cols");
    for (const auto& row : cost)
        if (row.size() != m) throw std::invalid_argument("hungarian: ragged cost matrix");

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0), v(m + 1, 0), minv(m + 1);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    std::vector<char> used(m + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> out(n, 0);
    for (std::size_t j = 1; j <= m; ++j)
        if (p[j] != 0) out[p[j] - 1] = j - 1;
    return out;
}

MatchResult match_and_accuracy(const std::vector<std::size_t>& assignments, const std::vector<int>& labels) {
    if (assignments.size() != labels.size()) throw std::invalid_argument("match_and_accuracy: length mismatch");
    MatchResult out;
    if (assignments.empty()) return out;

    const std::set<std::size_t> cluster_set(assignments.begin(), assignments.end());
    const std::set<int> class_set(labels.begin(), labels.end());
    const std::vector<std::size_t> clusters(cluster_set.begin(), cluster_set.end());
    const std::vector<int> classes(class_set.begin(), class_set.end());
    const std::size_t size = std::max(clusters.size(), classes.size());

    std::vector<std::vector<double>> counts(size, std::vector<double>(size, 0.0));
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        const auto ci = std::size_t(std::lower_bound(clusters.begin(), clusters.end(), assignments[i]) - clusters.begin());
        const auto li = std::size_t(std::lower_bound(classes.begin(), classes.end(), labels[i]) - classes.begin());
        counts[ci][li] += 1;
    }
    // Maximize agreement == minimize (n - count); padded rows/cols are dummies.
    const double total = double(assignments.size());
    std::vector<std::vector<double>> cost(size, std::vector<double>(size));
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c) cost[r][c] = total - counts[r][c];
    const auto pick = hungarian_min_cost(cost);
    for (std::size_t r = 0; r < clusters.size(); ++r) {
        if (pick[r] >= classes.size()) continue;
        out.cluster_to_class[clusters[r]] = classes[pick[r]];
        out.correct += std::size_t(counts[r][pick[r]]);
    }
    out.accuracy = double(out.correct) / total;
    return out;
}

F1Report mean_f1(const std::vector<int>& predicted, const std::vector<int>& truth) {
    if (predicted.empty()) throw std::invalid_argument("mean_f1 on empty input");
    if (predicted.size() != truth.size()) throw std::invalid_argument("mean_f1: length mismatch");
    const std::set<int> class_set(truth.begin(), truth.end());
    F1Report out;
    double sum = 0;
    for (int cls : class_set) {
        ClassScore s;
        s.cls = cls;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const bool p = predicted[i] == cls, t = truth[i] == cls;
            s.tp += p && t;
            s.fp += p && !t;
            s.fn += !p && t;
        }
        s.precision = s.tp + s.fp ? double(s.tp) / double(s.tp + s.fp) : 0.0;
        s.recall = s.tp + s.fn ? double(s.tp) / double(s.tp + s.fn) : 0.0;
        const double denom = s.precision + s.recall;
        s.f1 = denom > 0 ? 2.0 * s.precision * s.recall / denom : 0.0;
        sum += denom > 0 ? s.precision * s.recall / denom : 0.0;
        out.classes.push_back(s);
    }
    out.mean_f1 = 2.0 / double(class_set.size()) * sum;
    return out;
}

Metrics score_clustering(const Tensor64& points, const std::vector<int>& labels, std::size_t k, std::uint64_t seed,
                         const KMeansOptions& opts) {
    if (points.dim(0) != labels.size()) throw std::invalid_argument("score_clustering: label count mismatch");
    if (k == 0) k = std::set<int>(labels.begin(), labels.end()).size();
    const auto clusters = kmeans(points, k, seed, opts);
    const auto match = match_and_accuracy(clusters.assignments, labels);
    std::vector<int> predicted(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto it = match.cluster_to_class.find(clusters.assignments[i]);
        predicted[i] = it == match.cluster_to_class.end() ? std::numeric_limits<int>::min() : it->second;
    }
    const auto f1 = mean_f1(predicted, labels);

    Metrics m;
    m.k = k;
    m.samples = labels.size();
    m.accuracy = match.accuracy;
    m.mean_f1 = f1.mean_f1;
    m.classes = f1.classes;
    m.matching = match.cluster_to_class;
    return m;
}

WindowEmbeddings embed_windows(Network& net, const std::vector<Window>& windows, std::size_t batch_size) {
    if (windows.empty()) throw DataError("no windows to embed");
    WindowEmbeddings out;
    const std::size_t n = windows.size();
    out.general = Tensor({n, net.config.feature_maps});
    for (const auto& h : net.heads) out.per_task.emplace(h.task, Tensor({n, h.weight.value.dim(0)}));
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t count = std::min(batch_size, n - start);
        idx.resize(count);
        std::iota(idx.begin(), idx.end(), start);
        Tensor general;
        auto emb = embed<float>(net, stack_windows(windows, idx), Mode::eval, nullptr, &general);
        std::copy(general.values().begin(), general.values().end(), out.general.row(start).data());
        for (auto& [task, t] : emb) std::copy(t.values().begin(), t.values().end(), out.per_task[task].row(start).data());
    }
    return out;
}

namespace {

std::vector<int> labels_of(const std::vector<Window>& windows, Task task) {
    std::vector<int> out;
    for (const auto& w : windows) out.push_back(w.label(task));
    return out;
}

}  // namespace

Metrics evaluate_task(Network& net, const std::vector<Window>& windows, Task task, std::size_t k, std::uint64_t seed,
                      const KMeansOptions& opts) {
    if (!net.head(task)) throw std::invalid_argument("network has no head for task " + std::string(task_name(task)));
    auto emb = embed_windows(net, windows);
    auto m = score_clustering(emb.per_task.at(task).cast<double>(), labels_of(windows, task), k, seed, opts);
    m.task = task;
    return m;
}

Metrics evaluate_raw(const std::vector<Window>& windows, Task task, std::size_t k, std::uint64_t seed,
                     const KMeansOptions& opts) {
    if (windows.empty()) throw DataError("no windows to score");
    const std::size_t per = windows.front().data.size();
    Tensor64 points({windows.size(), per});
    for (std::size_t i = 0; i < windows.size(); ++i) {
        if (windows[i].data.size() != per) throw ShapeError("raw baseline needs equal-size windows");
        std::copy(windows[i].data.values().begin(), windows[i].data.values().end(), points.row(i).begin());
    }
    auto m = score_clustering(points, labels_of(windows, task), k, seed, opts);
    m.task = task;
    return m;
}

void export_embeddings(Network& net, const std::vector<Window>& windows, const std::filesystem::path& path) {
    auto emb = embed_windows(net, windows);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write embeddings to " + path.string());
    out << "window_id,activity,person,attribute";
    for (std::size_t i = 0; i < emb.general.dim(1); ++i) out << ",general_" << i;
    for (const auto& [task, t] : emb.per_task)
        for (std::size_t i = 0; i < t.dim(1); ++i) out << ',' << task_name(task) << '_' << i;
    out << '\n';
    out.precision(9);  // enough digits for an exact float round trip
    for (std::size_t r = 0; r < windows.size(); ++r) {
        out << r << ',' << windows[r].activity << ',' << windows[r].person << ',' << windows[r].attribute;
        for (float v : emb.general.row(r)) out << ',' << v;
        for (const auto& [task, t] : emb.per_task)
            for (float v : t.row(r)) out << ',' << v;
        out << '\n';
    }
    if (!out) throw DataError("failed writing embeddings to " + path.string());
}

ExportedEmbeddings load_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embeddings file " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("embeddings file is empty");

    std::vector<std::string> header;
    {
        std::istringstream hs(line);
        std::string f;
        while (std::getline(hs, f, ',')) header.push_back(f);
    }
    if (header.size() < 4 || header[0] != "window_id") throw DataError("embeddings file has an unexpected header");
    // Column groups: general_*, then <task>_* per task in header order.
    std::vector<std::pair<std::string, std::size_t>> groups;
    for (std::size_t i = 4; i < header.size(); ++i) {
        const auto name = header[i].substr(0, header[i].rfind('_'));
        if (groups.empty() || groups.back().first != name) groups.emplace_back(name, 0);
        ++groups.back().second;
    }

    ExportedEmbeddings out;
    std::vector<std::vector<float>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() != header.size()) throw DataError("embeddings row has the wrong column count");
        out.ids.push_back(std::stoull(f[0]));
        out.labels.push_back({std::stoi(f[1]), std::stoi(f[2]), std::stoi(f[3])});
        std::vector<float> vals;
        for (std::size_t i = 4; i < f.size(); ++i) {
            float v = 0;
            auto [p, ec] = std::from_chars(f[i].data(), f[i].data() + f[i].size(), v);
            if (ec != std::errc()) throw DataError("bad number in embeddings file: " + f[i]);
            vals.push_back(v);
        }
        rows.push_back(std::move(vals));
    }
    const std::size_t n = rows.size();
    std::size_t col = 0;
    for (const auto& [name, width] : groups) {
        Tensor t({n, width});
        for (std::size_t r = 0; r < n; ++r) std::copy_n(rows[r].begin() + long(col), width, t.row(r).begin());
        if (name == "general")
            out.general = std::move(t);
        else
            out.per_task.emplace(parse_task(name), std::move(t));
        col += width;
    }
    return out;
}

}  // namespace wsmt
