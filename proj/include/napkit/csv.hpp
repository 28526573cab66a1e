#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "napkit/error.hpp"

namespace napkit::csv {

inline std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string join(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    line += escape(fields[i]);
  }
  return line;
}

// Records may span lines inside quoted fields; returns false at end of input.
inline bool read_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string line;
  if (!std::getline(in, line)) return false;
  std::string field;
  bool quoted = false;
  for (;;) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"') {
          if (i + 1 < line.size() && line[i + 1] == '"') {
            field += '"';
            ++i;
          } else {
            quoted = false;
          }
        } else {
          field += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields.push_back(std::move(field));
        field.clear();
      } else if (c != '\r') {
        field += c;
      }
    }
    if (!quoted) break;
    field += '\n';
    if (!std::getline(in, line)) throw Error(ErrorKind::format, "unterminated quoted CSV field");
  }
  fields.push_back(std::move(field));
  return true;
}

/// Accumulates rows and writes them in one go.
class Writer {
 public:
  explicit Writer(std::vector<std::string> header) { rows_.push_back(join(header)); }

  void row(const std::vector<std::string>& fields) { rows_.push_back(join(fields)); }

  std::string str() const {
    std::string out;
    for (const auto& r : rows_) {
      out += r;
      out += '\n';
    }
    return out;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
    out << str();
    if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
  }

 private:
  std::vector<std::string> rows_;
};

}  // namespace napkit::csv
