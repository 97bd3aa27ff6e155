#pragma once

namespace rgame {

inline constexpr const char* kToolVersion = "rgame 0.1.0";
inline constexpr int kDatasetFormatVersion = 1;

}  // namespace rgame
