#include "bunit/binio.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace bunit {

namespace detail {

void atomic_write_impl(const std::string& path, const std::function<void(std::ostream&)>& fill) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp.string());
        fill(out);
        out.flush();
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("rename failed for " + target.string() + ": " + ec.message());
    }
}

} // namespace detail

void atomic_write_file(const std::string& path, const std::string& contents) {
    detail::atomic_write_impl(path, [&](std::ostream& out) {
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    });
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

} // namespace bunit
