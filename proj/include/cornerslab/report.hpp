#pragma once

#include <string>

namespace corners {

// Wraps a rendered JSON object into the report envelope
//   {"report": <body>, "schema": 1, "timestamp": "..."}
// serialized with sorted keys and a trailing newline.  Everything except the
// timestamp field is a pure function of the body, so two runs with the same
// configuration and seed produce reports that agree byte for byte once that
// one line is dropped.  Throws std::invalid_argument when body is not a JSON
// object.
std::string wrap_report(const std::string& body);

// RFC 3339 UTC wall-clock time, second resolution.
std::string iso8601_now();

// Writes content to path, creating or truncating; std::runtime_error with the
// path on failure.
void write_text_file(const std::string& path, const std::string& content);

}  // namespace corners
