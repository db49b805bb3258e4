#pragma once
#include <string>

namespace cotcap {

// Classic Porter (1980) stemming algorithm for lowercase ASCII words.
// Non-ASCII or very short inputs are returned unchanged.
std::string porter_stem(const std::string& word);

}  // namespace cotcap
