#pragma once

#include <string>
#include <string_view>

namespace sqi {

std::string_view trim(std::string_view text);
std::string to_lower(std::string_view text);
bool contains_ci(std::string_view haystack, std::string_view needle);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);  // throws ValidationError on bad input

}  // namespace sqi
