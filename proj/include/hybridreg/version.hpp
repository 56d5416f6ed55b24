#pragma once

namespace hybridreg {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace hybridreg
