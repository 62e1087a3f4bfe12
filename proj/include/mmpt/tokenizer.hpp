#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace mmpt {

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by the special
// ids. Text round-trips exactly; specials are dropped on decode.
class ByteTokenizer {
  public:
    static constexpr int kBos = 256;
    static constexpr int kEos = 257;
    static constexpr int kMedia = 258;
    static constexpr int kPad = 259;

    int vocab_size() const { return 260; }

    std::vector<int> encode(std::string_view text) const;
    std::string decode(const std::vector<int>& ids) const;
};

}  // namespace mmpt
