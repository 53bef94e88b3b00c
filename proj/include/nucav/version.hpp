#pragma once

namespace nucav {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kEngineName = "nucav";

} // namespace nucav
