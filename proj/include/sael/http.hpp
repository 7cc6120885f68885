#pragma once

#include <chrono>
#include <string>
#include <utility>
#include <vector>

namespace sael::http {

struct Response {
  bool connected = false;  // false: no HTTP exchange happened (DNS, refused, timeout)
  int status = 0;
  std::string body;
  std::string error;  // transport-level failure description
};

using Headers = std::vector<std::pair<std::string, std::string>>;

// Splits "http[s]://host[:port]/path" into ("http[s]://host[:port]", "/path").
std::pair<std::string, std::string> split_url(const std::string& url);

Response post_json(const std::string& url, const std::string& body, const Headers& headers = {},
                   std::chrono::milliseconds timeout = std::chrono::seconds(120));

}  // namespace sael::http
