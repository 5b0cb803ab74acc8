#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace sker {

// String-to-id map with a dedicated <unk> row at index 0.
struct Vocab {
    std::vector<std::string> items;
    std::unordered_map<std::string, std::size_t> index;

    static constexpr std::size_t kUnk = 0;

    static Vocab with_unk() {
        Vocab v;
        v.add("<unk>");
        return v;
    }

    std::size_t add(const std::string& s) {
        auto it = index.find(s);
        if (it != index.end()) return it->second;
        const std::size_t id = items.size();
        items.push_back(s);
        index.emplace(s, id);
        return id;
    }

    std::size_t id_or_unk(const std::string& s) const {
        auto it = index.find(s);
        return it == index.end() ? kUnk : it->second;
    }

    std::size_t id_of(const std::string& s) const {
        auto it = index.find(s);
        if (it == index.end()) throw std::out_of_range("unknown vocabulary item: " + s);
        return it->second;
    }

    bool contains(const std::string& s) const { return index.count(s) > 0; }
    std::size_t size() const { return items.size(); }

    bool operator==(const Vocab& o) const { return items == o.items; }
};

}  // namespace sker
