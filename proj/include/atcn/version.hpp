#pragma once

namespace atcn {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr const char* kSequenceFormat = "jpseq v1";
inline constexpr const char* kCheckpointFormat = "ATCN1";

} // namespace atcn
