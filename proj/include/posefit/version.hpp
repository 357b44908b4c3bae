#pragma once

namespace posefit {

inline constexpr const char* kVersion = "0.1.0";

}
