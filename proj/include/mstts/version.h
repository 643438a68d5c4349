#pragma once

namespace mstts {

inline constexpr const char* kToolVersion = "0.3.0";

}  // namespace mstts
