#pragma once

namespace spinlearn {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace spinlearn
