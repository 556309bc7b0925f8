#pragma once

#include <vector>

#include "regio/errors.hpp"

namespace regio {

/// Indexing of finite product spaces is row-major throughout: the first
/// variable in a (sorted) list varies slowest.

inline long long config_count(const std::vector<int>& cards) {
    long long n = 1;
    for (int c : cards) {
        if (c < 1) throw ShapeError("variable cardinality must be at least 1");
        n *= c;
    }
    return n;
}

inline std::vector<long long> config_strides(const std::vector<int>& cards) {
    std::vector<long long> s(cards.size(), 1);
    for (int i = static_cast<int>(cards.size()) - 2; i >= 0; --i)
        s[static_cast<size_t>(i)] = s[static_cast<size_t>(i) + 1] * cards[static_cast<size_t>(i) + 1];
    return s;
}

inline std::vector<int> decode_config(long long index, const std::vector<int>& cards) {
    std::vector<int> x(cards.size());
    for (int i = static_cast<int>(cards.size()) - 1; i >= 0; --i) {
        x[static_cast<size_t>(i)] = static_cast<int>(index % cards[static_cast<size_t>(i)]);
        index /= cards[static_cast<size_t>(i)];
    }
    return x;
}

inline long long encode_config(const std::vector<int>& x, const std::vector<int>& cards) {
    long long idx = 0;
    for (size_t i = 0; i < cards.size(); ++i) idx = idx * cards[i] + x[i];
    return idx;
}

}  // namespace regio
