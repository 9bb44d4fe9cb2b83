#include "cytopipe/io.hpp"

#include <png.h>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

namespace cytopipe {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kDmapHeader = 4 + 1 + 4 + 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
    return v;
}

fs::path temp_sibling(const fs::path& path) {
    fs::path tmp = path;
    tmp += ".tmp";
    return tmp;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

std::string join(const std::vector<std::string>& fields) {
    std::string s;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) s += ',';
        s += fields[i];
    }
    return s;
}

}  // namespace

std::vector<std::uint8_t> encode_dmap(const ImageF32& map) {
    if (map.channels() != 1) throw InvalidParameter("DMAP holds single-channel maps only");
    std::vector<std::uint8_t> out;
    out.reserve(kDmapHeader + map.size() * 4);
    out.insert(out.end(), {'D', 'M', 'A', 'P', kDmapVersion});
    put_u32(out, static_cast<std::uint32_t>(map.width()));
    put_u32(out, static_cast<std::uint32_t>(map.height()));
    for (float v : map.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

ImageF32 decode_dmap(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kDmapHeader || std::memcmp(bytes.data(), "DMAP", 4) != 0) {
        throw FormatError("not a DMAP file (bad magic)");
    }
    if (bytes[4] != kDmapVersion) {
        throw FormatError("unsupported DMAP version " + std::to_string(bytes[4]));
    }
    const std::uint32_t w = get_u32(bytes, 5);
    const std::uint32_t h = get_u32(bytes, 9);
    if (w == 0 || h == 0) throw FormatError("DMAP has zero dimension");
    const std::uint64_t n = static_cast<std::uint64_t>(w) * h;
    if (bytes.size() != kDmapHeader + n * 4) {
        throw FormatError("DMAP payload length " + std::to_string(bytes.size() - kDmapHeader) +
                          " does not match " + std::to_string(w) + "x" + std::to_string(h));
    }
    std::vector<float> data(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < data.size(); ++i) {
        data[i] = std::bit_cast<float>(get_u32(bytes, kDmapHeader + 4 * i));
    }
    return ImageF32(static_cast<int>(w), static_cast<int>(h), 1, std::move(data));
}

void write_dmap(const fs::path& path, const ImageF32& map) {
    write_file_atomic(path, encode_dmap(map));
}

ImageF32 read_dmap(const fs::path& path) {
    try {
        return decode_dmap(read_file_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

ImageU8 read_png(const fs::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw FormatError(path.string() + ": " + image.message);
    }
    const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
    image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    const int channels = gray ? 1 : 3;
    std::vector<std::uint8_t> data(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, data.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw FormatError(path.string() + ": " + msg);
    }
    return ImageU8(static_cast<int>(image.width), static_cast<int>(image.height), channels,
                   std::move(data));
}

void write_png(const fs::path& path, const ImageU8& img) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width());
    image.height = static_cast<png_uint_32>(img.height());
    image.format = img.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    const fs::path tmp = temp_sibling(path);
    if (!png_image_write_to_file(&image, tmp.c_str(), 0, img.data().data(), 0, nullptr)) {
        throw RuntimeFailure(path.string() + ": " + image.message);
    }
    fs::rename(tmp, path);
}

CsvTable read_csv(const fs::path& path, const std::vector<std::string>& expected_header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    CsvTable table;
    std::string line;
    bool have_header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_line(line);
        if (!have_header) {
            if (fields != expected_header) {
                throw FormatError(path.string() + ": header '" + line + "' != expected '" +
                                  join(expected_header) + "'");
            }
            table.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != table.header.size()) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(table.header.size()) + " fields, got " +
                              std::to_string(fields.size()));
        }
        table.rows.push_back(std::move(fields));
    }
    if (!have_header) throw FormatError(path.string() + ": missing CSV header");
    return table;
}

CsvWriter::CsvWriter(fs::path path, const std::vector<std::string>& header)
    : path_(std::move(path)), tmp_path_(temp_sibling(path_)), columns_(header.size()) {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    out_.open(tmp_path_, std::ios::binary | std::ios::trunc);
    if (!out_) throw RuntimeFailure("cannot write " + tmp_path_.string());
    row(header);
}

CsvWriter::~CsvWriter() {
    if (!closed_) {
        out_.close();
        std::error_code ec;
        fs::remove(tmp_path_, ec);
    }
}

void CsvWriter::row(const std::vector<std::string>& fields) {
    if (fields.size() != columns_) throw InvalidParameter("CSV row has wrong field count");
    for (const auto& f : fields) check_csv_field(f);
    out_ << join(fields) << '\n';
}

void CsvWriter::close() {
    out_.close();
    if (!out_) throw RuntimeFailure("failed writing " + tmp_path_.string());
    fs::rename(tmp_path_, path_);
    closed_ = true;
}

void check_csv_field(std::string_view field) {
    if (field.find_first_of(",\n\r") != std::string_view::npos) {
        throw FormatError("CSV field may not contain ',' or line breaks: '" + std::string(field) +
                          "'");
    }
}

int parse_int(std::string_view text, const fs::path& source, std::size_t row) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw FormatError(source.string() + ": row " + std::to_string(row + 1) +
                          ": not an integer: '" + std::string(text) + "'");
    }
    return v;
}

double parse_double(std::string_view text, const fs::path& source, std::size_t row) {
    // from_chars for double is missing from older libstdc++; strtod is locale-"C" here.
    std::string s(text);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
        throw FormatError(source.string() + ": row " + std::to_string(row + 1) +
                          ": not a number: '" + s + "'");
    }
    return v;
}

std::string format_fixed(double value, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, value);
    return buf;
}

std::string format_float(float value) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc()) throw InvalidParameter("cannot format number");
    return std::string(buf, end);
}

std::string format_double(double value) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc()) throw InvalidParameter("cannot format number");
    return std::string(buf, end);
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = temp_sibling(path);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw RuntimeFailure("cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_text_atomic(const fs::path& path, std::string_view text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                      text.size()));
}

}  // namespace cytopipe
