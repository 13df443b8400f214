#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace wsmt {

// Semantic aspects that get their own embedding space.
enum class Task : std::uint8_t { activity = 0, person = 1, attribute = 2 };

inline constexpr std::size_t kTaskCount = 3;
inline constexpr std::array<Task, kTaskCount> kAllTasks{Task::activity, Task::person, Task::attribute};

constexpr std::size_t task_index(Task t) { return static_cast<std::size_t>(t); }

inline std::string_view task_name(Task t) {
    switch (t) {
    case Task::activity: return "act";
    case Task::person: return "pers";
    case Task::attribute: return "attr";
    }
    return "?";
}

inline Task parse_task(std::string_view name) {
    if (name == "act" || name == "activity") return Task::activity;
    if (name == "pers" || name == "person") return Task::person;
    if (name == "attr" || name == "attribute") return Task::attribute;
    throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

// Pairwise relation for each task plus whether that relation is known.
struct SimilarityLabel {
    std::array<bool, kTaskCount> similar{};
    std::array<bool, kTaskCount> present{};

    void set(Task t, bool is_similar) {
        similar[task_index(t)] = is_similar;
        present[task_index(t)] = true;
    }
    void mask(Task t) { present[task_index(t)] = false; }
    bool has(Task t) const { return present[task_index(t)]; }
    bool y(Task t) const { return similar[task_index(t)]; }

    friend bool operator==(const SimilarityLabel&, const SimilarityLabel&) = default;
};

}  // namespace wsmt
