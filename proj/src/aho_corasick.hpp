#pragma once

// Multi-pattern byte matcher (Aho-Corasick compiled to a full DFA).

#include <array>
#include <cstdint>
#include <queue>
#include <string>
#include <string_view>
#include <vector>

namespace nowait::detail {

class AhoCorasick {
public:
    explicit AhoCorasick(const std::vector<std::string> & patterns) : lengths_(patterns.size()) {
        nodes_.emplace_back();
        for (uint32_t p = 0; p < patterns.size(); ++p) {
            lengths_[p] = patterns[p].size();
            int32_t cur = 0;
            for (unsigned char c : patterns[p]) {
                if (nodes_[cur].next[c] < 0) {
                    nodes_[cur].next[c] = static_cast<int32_t>(nodes_.size());
                    nodes_.emplace_back();
                }
                cur = nodes_[cur].next[c];
            }
            nodes_[cur].out.push_back(p);
        }

        // BFS: fill the missing transitions and merge outputs along fail links
        std::queue<int32_t> q;
        for (int c = 0; c < 256; ++c) {
            int32_t & nx = nodes_[0].next[c];
            if (nx < 0) {
                nx = 0;
            } else {
                nodes_[nx].fail = 0;
                q.push(nx);
            }
        }
        while (!q.empty()) {
            const int32_t u = q.front();
            q.pop();
            const auto & fail_out = nodes_[nodes_[u].fail].out;
            nodes_[u].out.insert(nodes_[u].out.end(), fail_out.begin(), fail_out.end());
            for (int c = 0; c < 256; ++c) {
                const int32_t v = nodes_[u].next[c];
                if (v < 0) {
                    nodes_[u].next[c] = nodes_[nodes_[u].fail].next[c];
                } else {
                    nodes_[v].fail = nodes_[nodes_[u].fail].next[c];
                    q.push(v);
                }
            }
        }
    }

    // Calls on_match(pattern_index, begin_offset) for every occurrence.
    // Stops early when on_match returns false.
    template <typename F>
    void scan(std::string_view text, F && on_match) const {
        int32_t cur = 0;
        for (size_t i = 0; i < text.size(); ++i) {
            cur = nodes_[cur].next[static_cast<unsigned char>(text[i])];
            for (uint32_t p : nodes_[cur].out) {
                if (!on_match(p, i + 1 - lengths_[p])) {
                    return;
                }
            }
        }
    }

private:
    struct Node {
        Node() { next.fill(-1); }
        std::array<int32_t, 256> next;
        int32_t fail = 0;
        std::vector<uint32_t> out;
    };

    std::vector<Node> nodes_;
    std::vector<size_t> lengths_;
};

} // namespace nowait::detail
