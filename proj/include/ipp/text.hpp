#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ipp {

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string> split(std::string_view s, std::string_view sep) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (true) {
        std::size_t next = s.find(sep, pos);
        if (next == std::string_view::npos) {
            parts.emplace_back(s.substr(pos));
            break;
        }
        parts.emplace_back(s.substr(pos, next - pos));
        pos = next + sep.size();
    }
    return parts;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

// MovieLens stores titles as ISO-8859-1; JSON wants UTF-8.
inline std::string latin1_to_utf8(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (unsigned char c : s) {
        if (c < 0x80) {
            out += static_cast<char>(c);
        } else {
            out += static_cast<char>(0xc0 | (c >> 6));
            out += static_cast<char>(0x80 | (c & 0x3f));
        }
    }
    return out;
}

// Splits a trailing " (YYYY)" off a title. Returns the remainder and year.
inline std::pair<std::string_view, std::optional<int>> split_year_suffix(std::string_view title) {
    std::string_view t = trim(title);
    if (t.size() >= 6 && t.back() == ')') {
        std::size_t open = t.rfind('(');
        if (open != std::string_view::npos && t.size() - open == 6) {
            std::string_view digits = t.substr(open + 1, 4);
            bool all_digits = std::all_of(digits.begin(), digits.end(), [](unsigned char c) {
                return std::isdigit(c);
            });
            if (all_digits) {
                int year = (digits[0] - '0') * 1000 + (digits[1] - '0') * 100 +
                           (digits[2] - '0') * 10 + (digits[3] - '0');
                return {trim(t.substr(0, open)), year};
            }
        }
    }
    return {t, std::nullopt};
}

namespace detail {

inline bool ends_with_article(std::string_view lower, std::string_view article) {
    return lower.size() > article.size() + 2 && lower.ends_with(article) &&
           lower[lower.size() - article.size() - 1] == ' ' &&
           lower[lower.size() - article.size() - 2] == ',';
}

}  // namespace detail

// Canonical form used for title lookup: lowercase, year suffix removed,
// leading or MovieLens-style trailing article removed, punctuation mapped
// to spaces, whitespace collapsed. "Great Dictator, The (1940)" and
// "The Great Dictator" normalize identically.
inline std::string normalize_title(std::string_view title) {
    auto [stem, year] = split_year_suffix(title);
    (void)year;
    std::string s = to_lower(stem);
    for (std::string_view article : {"the", "a", "an"}) {
        if (detail::ends_with_article(s, article)) {
            s.resize(s.size() - article.size() - 2);
            break;
        }
    }
    for (std::string_view article : {"the ", "a ", "an "}) {
        if (s.size() > article.size() && s.starts_with(article)) {
            s.erase(0, article.size());
            break;
        }
    }
    std::string out;
    out.reserve(s.size());
    for (unsigned char c : s) {
        out += std::isalnum(c) ? static_cast<char>(c) : ' ';
    }
    // collapse runs of spaces
    std::string collapsed;
    collapsed.reserve(out.size());
    for (char c : out) {
        if (c == ' ' && (collapsed.empty() || collapsed.back() == ' ')) continue;
        collapsed += c;
    }
    while (!collapsed.empty() && collapsed.back() == ' ') collapsed.pop_back();
    return collapsed;
}

// "Great Dictator, The (1940)" -> "The Great Dictator (1940)" for prompts
// and rendered tables.
inline std::string display_title(std::string_view title) {
    auto [stem, year] = split_year_suffix(title);
    std::string s(stem);
    std::string lower = to_lower(s);
    for (std::string_view article : {"the", "a", "an"}) {
        if (detail::ends_with_article(lower, article)) {
            std::string moved(s.substr(s.size() - article.size()));
            s = moved + " " + s.substr(0, s.size() - article.size() - 2);
            break;
        }
    }
    if (year) s += " (" + std::to_string(*year) + ")";
    return s;
}

// Levenshtein distance with early exit once the best achievable distance
// exceeds max_dist; returns max_dist + 1 in that case.
inline int edit_distance_capped(std::string_view a, std::string_view b, int max_dist) {
    if (a.size() > b.size()) std::swap(a, b);
    if (b.size() - a.size() > static_cast<std::size_t>(max_dist)) return max_dist + 1;
    std::vector<int> prev(a.size() + 1), cur(a.size() + 1);
    for (std::size_t i = 0; i <= a.size(); ++i) prev[i] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
        cur[0] = static_cast<int>(j);
        int row_min = cur[0];
        for (std::size_t i = 1; i <= a.size(); ++i) {
            int sub = prev[i - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[i] = std::min({prev[i] + 1, cur[i - 1] + 1, sub});
            row_min = std::min(row_min, cur[i]);
        }
        if (row_min > max_dist) return max_dist + 1;
        std::swap(prev, cur);
    }
    return std::min(prev[a.size()], max_dist + 1);
}

// Spelled-out form for small counts so prompt text reads naturally
// ("no less than five movies").
inline std::string count_words(int n) {
    static const char* words[] = {"zero", "one", "two",   "three", "four", "five",
                                  "six",  "seven", "eight", "nine",  "ten"};
    if (n >= 0 && n <= 10) return words[n];
    return std::to_string(n);
}

}  // namespace ipp
