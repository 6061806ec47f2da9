#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bedexit/signal_core.hpp"

namespace bedexit::io {

/// Writes to `<path>.tmp` then renames over `path`; creates parent directories.
void write_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

/// Reads `timestamp_s,load_kg` CSV (header required) or JSON lines `{"t": .., "load": ..}`,
/// chosen by the `.jsonl` extension. The declared rate is checked against the timestamps.
signal::RawStream read_raw_stream(const std::filesystem::path& path, double sample_rate_hz);

std::string format_raw_csv(const signal::RawStream& raw);

/// `start_s,end_s,label` with label in {transition, non_active}.
std::vector<signal::LabelInterval> read_labels(const std::filesystem::path& path);

std::string format_labels_csv(const std::vector<signal::LabelInterval>& intervals);

/// Splits one CSV line on commas (no quoting; none of the formats here need it).
std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace bedexit::io
