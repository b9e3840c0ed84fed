#include "cornerslab/report.hpp"

#include <ctime>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace corners {

std::string wrap_report(const std::string& body) {
    nlohmann::json parsed = nlohmann::json::parse(body);
    if (!parsed.is_object()) throw std::invalid_argument("report body must be a JSON object");

    nlohmann::json envelope;
    envelope["schema"] = 1;
    envelope["report"] = std::move(parsed);
    envelope["timestamp"] = iso8601_now();
    return envelope.dump(2) + "\n";
}

std::string iso8601_now() {
    std::time_t now = std::time(nullptr);
    std::tm utc{};
    gmtime_r(&now, &utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &utc);
    return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace corners
