#include "tokenizer.h"

#include "error.h"

namespace gridvla {
namespace tok {

std::vector<int> tokenize(const std::string & text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back((int) c);
    return ids;
}

std::string special_marker(int id) {
    switch (id) {
        case kPad:       return "<pad>";
        case kStop:      return "<stop>";
        case kImage:     return kImageMarker;
        case kSystem:    return "<system>";
        case kHuman:     return "<human>";
        case kAssistant: return "<assistant>";
        default:         return "";
    }
}

bool is_special(int id) {
    return id >= 256 && id < kVocabSize;
}

std::string detokenize(const std::vector<int> & ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id >= 0 && id < 256) {
            out.push_back((char) (unsigned char) id);
        } else if (is_special(id)) {
            out += special_marker(id);
        } else {
            fail(ErrorKind::vocab, "detokenize: id " + std::to_string(id) + " outside vocabulary");
        }
    }
    return out;
}

} // namespace tok
} // namespace gridvla
