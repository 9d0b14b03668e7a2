#pragma once

namespace ipp {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace ipp
