#pragma once

namespace atlascut {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace atlascut
