#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lungsynth/grid.hpp"

namespace lungsynth::io {

// Binary PGM (P5), 8-bit. Used for exported slices, label maps and sample
// grids.
void write_pgm(const std::filesystem::path& path, const Grid2D<std::uint8_t>& image);
Grid2D<std::uint8_t> read_pgm(const std::filesystem::path& path);

// Minimal CSV: comma separated, no quoting. Fields must not contain commas.
std::vector<std::string> split_csv_line(std::string_view line);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column; throws FormatError naming the column.
  std::size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

// Shortest round-trippable decimal form.
std::string format_double(double v);

}  // namespace lungsynth::io
