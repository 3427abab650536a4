#pragma once

namespace bdc {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace bdc
