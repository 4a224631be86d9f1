#pragma once

#include <string>
#include <string_view>

namespace bases::base64 {

std::string encode(std::string_view bytes);
/// Throws ProtocolError on characters outside the standard alphabet or bad padding.
std::string decode(std::string_view text);

}  // namespace bases::base64
