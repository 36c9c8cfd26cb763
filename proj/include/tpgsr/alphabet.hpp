#pragma once
// Recognition alphabet: 37 classes. Index 0 is the blank; 1..10 are the
// digits '0'..'9'; 11..36 are the letters 'a'..'z' (case-insensitive).

#include <string>
#include <vector>

#include "tpgsr/base.hpp"

namespace tpgsr {

inline constexpr int kAlphabetSize = 37;
inline constexpr int kBlankClass = 0;

inline int char_to_class(char c) {
  if (c >= '0' && c <= '9') return 1 + (c - '0');
  if (c >= 'a' && c <= 'z') return 11 + (c - 'a');
  if (c >= 'A' && c <= 'Z') return 11 + (c - 'A');
  return kBlankClass;
}

// Blank renders as '_' for display; decode paths never emit it.
inline char class_to_char(int k) {
  check(k >= 0 && k < kAlphabetSize, "class index ", k, " out of range");
  if (k == kBlankClass) return '_';
  if (k <= 10) return char('0' + (k - 1));
  return char('a' + (k - 11));
}

// CTC-style collapse: merge adjacent repeats, then drop blanks.
inline std::string decode_classes(const std::vector<int>& frames) {
  std::string out;
  int prev = -1;
  for (int k : frames) {
    check(k >= 0 && k < kAlphabetSize, "class index ", k, " out of range");
    if (k != prev && k != kBlankClass) out.push_back(class_to_char(k));
    prev = k;
  }
  return out;
}

}  // namespace tpgsr
