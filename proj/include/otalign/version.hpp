#pragma once

namespace otalign {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace otalign
