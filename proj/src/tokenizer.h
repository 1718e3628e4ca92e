#pragma once

#include <string>
#include <vector>

namespace gridvla {

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by six special
// tokens the sequence builder inserts. Byte strings can never produce a
// special id, so round-tripping plain text is exact.
namespace tok {

constexpr int kPad       = 256;
constexpr int kStop      = 257;
constexpr int kImage     = 258;
constexpr int kSystem    = 259;
constexpr int kHuman     = 260;
constexpr int kAssistant = 261;
constexpr int kVocabSize = 262;

constexpr const char * kImageMarker = "<image>";

std::vector<int> tokenize(const std::string & text);

// Bytes only; special ids are rendered as printable markers, never as bytes.
std::string detokenize(const std::vector<int> & ids);

// Marker string for a special id ("<stop>", "<image>", ...), empty for bytes.
std::string special_marker(int id);

bool is_special(int id);

} // namespace tok

} // namespace gridvla
