#pragma once

namespace msar {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace msar
