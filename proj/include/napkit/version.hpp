#pragma once

namespace napkit {

inline constexpr const char* version = "0.3.0";

}  // namespace napkit
