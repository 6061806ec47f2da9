#include "bedexit/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bedexit/error.hpp"

namespace bedexit::io {

namespace fs = std::filesystem;

void write_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  require(!ec, ErrorCode::io, "cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& f : fields) {
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.pop_back();
    while (!f.empty() && f.front() == ' ') f.erase(f.begin());
  }
  return fields;
}

namespace {

double parse_number(const std::string& text, const fs::path& path, std::size_t line_no) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    fail(ErrorCode::format, path.string() + ":" + std::to_string(line_no) + ": bad number '" + text + "'");
  return v;
}

}  // namespace

signal::RawStream read_raw_stream(const fs::path& path, double sample_rate_hz) {
  signal::RawStream raw;
  raw.sample_rate_hz = sample_rate_hz;
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  if (path.extension() == ".jsonl") {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
        raw.timestamps.push_back(j.at("t").get<double>());
        raw.load.push_back(j.at("load").get<double>());
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::format, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  } else {
    require(static_cast<bool>(std::getline(in, line)), ErrorCode::format, path.string() + ": empty file");
    ++line_no;
    const auto header = split_csv_line(line);
    require(header.size() == 2 && header[0] == "timestamp_s" && header[1] == "load_kg", ErrorCode::format,
            path.string() + ": expected header timestamp_s,load_kg");
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      const auto f = split_csv_line(line);
      require(f.size() == 2, ErrorCode::format, path.string() + ":" + std::to_string(line_no) + ": expected 2 fields");
      raw.timestamps.push_back(parse_number(f[0], path, line_no));
      raw.load.push_back(parse_number(f[1], path, line_no));
    }
  }
  raw.validate();
  return raw;
}

std::string format_raw_csv(const signal::RawStream& raw) {
  std::string out = "timestamp_s,load_kg\n";
  out.reserve(raw.size() * 24);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out += format_double(raw.timestamps[i]);
    out += ',';
    out += format_double(raw.load[i]);
    out += '\n';
  }
  return out;
}

std::vector<signal::LabelInterval> read_labels(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::format, path.string() + ": empty file");
  const auto header = split_csv_line(line);
  require(header == std::vector<std::string>{"start_s", "end_s", "label"}, ErrorCode::format,
          path.string() + ": expected header start_s,end_s,label");
  std::vector<signal::LabelInterval> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    require(f.size() == 3, ErrorCode::format, path.string() + ":" + std::to_string(line_no) + ": expected 3 fields");
    signal::LabelInterval iv{parse_number(f[0], path, line_no), parse_number(f[1], path, line_no),
                             signal::parse_label(f[2])};
    require(iv.end_s >= iv.start_s, ErrorCode::format,
            path.string() + ":" + std::to_string(line_no) + ": interval ends before it starts");
    out.push_back(iv);
  }
  return out;
}

std::string format_labels_csv(const std::vector<signal::LabelInterval>& intervals) {
  std::string out = "start_s,end_s,label\n";
  for (const auto& iv : intervals)
    out += format_double(iv.start_s) + "," + format_double(iv.end_s) + "," + signal::label_name(iv.label) + "\n";
  return out;
}

}  // namespace bedexit::io
