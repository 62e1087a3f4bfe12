#include "mmpt/tokenizer.hpp"

#include "mmpt/errors.hpp"

namespace mmpt {

std::vector<int> ByteTokenizer::encode(std::string_view text) const {
    std::vector<int> out;
    out.reserve(text.size());
    for (unsigned char c : text) out.push_back(static_cast<int>(c));
    return out;
}

std::string ByteTokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || id >= vocab_size()) {
            throw DataError("decode: id " + std::to_string(id) + " outside vocabulary");
        }
        if (id < 256) out.push_back(static_cast<char>(id));
    }
    return out;
}

}  // namespace mmpt
