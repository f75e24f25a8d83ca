#pragma once

namespace nos {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace nos
