#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cytopipe/image.hpp"

namespace cytopipe {

// ---------------------------------------------------------------------------
// DMAP density-map container:
//   "DMAP" | u8 version (0x01) | u32 LE width | u32 LE height | f32 LE[w*h]
// ---------------------------------------------------------------------------

inline constexpr std::uint8_t kDmapVersion = 0x01;

std::vector<std::uint8_t> encode_dmap(const ImageF32& map);
ImageF32 decode_dmap(std::span<const std::uint8_t> bytes);
void write_dmap(const std::filesystem::path& path, const ImageF32& map);
ImageF32 read_dmap(const std::filesystem::path& path);

// 8-bit grayscale or RGB PNG. Alpha is dropped, palettes and 16-bit are reduced.
ImageU8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageU8& img);

// ---------------------------------------------------------------------------
// CSV: UTF-8, LF, mandatory header, no quoting. Fields may not contain
// commas or line breaks.
// ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Reads a CSV whose header must equal `expected_header` exactly.
CsvTable read_csv(const std::filesystem::path& path,
                  const std::vector<std::string>& expected_header);

/// Writes to a sibling temp file and renames on close(), so readers never see
/// a half-written table.
class CsvWriter {
public:
    CsvWriter(std::filesystem::path path, const std::vector<std::string>& header);
    CsvWriter(const CsvWriter&) = delete;
    CsvWriter& operator=(const CsvWriter&) = delete;
    ~CsvWriter();

    void row(const std::vector<std::string>& fields);
    void close();

private:
    std::filesystem::path path_;
    std::filesystem::path tmp_path_;
    std::ofstream out_;
    std::size_t columns_ = 0;
    bool closed_ = false;
};

/// Throws FormatError if the value cannot appear as a CSV field.
void check_csv_field(std::string_view field);

int parse_int(std::string_view text, const std::filesystem::path& source, std::size_t row);
double parse_double(std::string_view text, const std::filesystem::path& source, std::size_t row);

std::string format_fixed(double value, int digits);
/// Shortest round-trip-safe representation for a float.
std::string format_float(float value);
/// Shortest text that reads back to the same double.
std::string format_double(double value);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
/// Temp file + rename.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace cytopipe
