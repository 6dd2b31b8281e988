#pragma once

namespace contra {

inline constexpr const char* kEngineVersion = "0.1.0";

}  // namespace contra
