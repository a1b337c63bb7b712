#pragma once

// Shared test fixtures: the toy two-style trait, a content-based style judge
// for filtering its corpora, and recyclable prompt/model helpers.

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "svec/extraction.hpp"
#include "svec/micro_model.hpp"

namespace svec::testing {

// Fixture weights seed: picked so that the two-style corpus survives the
// content judge in both directions and the digit-echo scoring fixture
// parses in range. Tests freeze behavior against this seed.
inline constexpr uint64_t kFixtureSeed = 3;

inline TraitSpec toy_style_trait() {
    TraitSpec t;
    t.name = "shouting";
    t.opposite = "whispering";
    t.positive_instructions = {
        "ALWAYS RESPOND IN LOUD CAPITAL LETTERS. SHOUT EVERY WORD.",
        "USE ONLY UPPERCASE TEXT. BE LOUD AND FORCEFUL.",
        "REPLY IN ALL CAPS AT MAXIMUM VOLUME.",
        "SHOUT YOUR ANSWER. CAPITAL LETTERS ONLY.",
        "RESPOND WITH BOLD UPPERCASE SHOUTING.",
    };
    t.negative_instructions = {
        "always respond in quiet lowercase letters. whisper every word.",
        "use only lowercase text. be soft and gentle.",
        "reply in all lowercase at minimum volume.",
        "whisper your answer. lowercase letters only.",
        "respond with gentle lowercase whispering.",
    };
    t.elicit_questions = {
        "tell me about the weather today", "what should i eat for lunch",
        "describe your favorite color",    "how do plants grow",
        "what time is it now",             "tell me a short story",
    };
    return t;
}

// Grades style adherence (uppercase share for positive-direction records,
// lowercase for negative) and coherence (share of letters), both 0-100.
inline void score_with_style_judge(std::vector<ContrastiveRecord>& records) {
    for (auto& rec : records) {
        const std::string resp = rec.response_text();
        int upper = 0, lower = 0, other = 0;
        for (unsigned char c : resp) {
            if (c >= 'A' && c <= 'Z') {
                ++upper;
            } else if (c >= 'a' && c <= 'z') {
                ++lower;
            } else {
                ++other;
            }
        }
        const int n = resp.empty() ? 1 : static_cast<int>(resp.size());
        rec.trait_score =
            rec.direction == Direction::positive ? 100 * upper / n : 100 * lower / n;
        rec.coherence_score = 100 - 100 * other / n;
    }
}

inline const std::vector<std::string>& held_out_prompts() {
    static const std::vector<std::string> prompts = {
        "Explain how rivers form.",  "What makes a good friend?", "Describe a library.",
        "How do airplanes stay up?", "What is music?",            "Tell me about bread.",
        "Why do seasons change?",    "What is a computer?",       "Describe the ocean.",
        "How does rain happen?",     "What are stars made of?",   "Tell me about cats.",
        "What is a garden?",         "How do clocks work?",       "Describe a mountain.",
        "What makes ice melt?",      "Tell me about books.",      "What is the moon?",
        "How do birds fly?",         "Describe a forest.",
    };
    return prompts;
}

inline std::filesystem::path fresh_temp_dir(const std::string& tag) {
    static std::atomic<uint64_t> counter{0};
    const auto dir = std::filesystem::temp_directory_path() /
                     ("svec_" + tag + "_" + std::to_string(::getpid()) + "_" +
                      std::to_string(counter.fetch_add(1)));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace svec::testing
