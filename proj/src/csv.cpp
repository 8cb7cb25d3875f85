#include "coughnet/csv.hpp"

#include "coughnet/error.hpp"
#include "coughnet/util.hpp"

namespace coughnet {
namespace {

std::vector<std::vector<std::string>> split_records(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool row_has_content = false;

  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
  };
  auto end_row = [&] {
    end_field();
    if (row_has_content || row.size() > 1 || !row.front().empty()) records.push_back(std::move(row));
    row.clear();
    row_has_content = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        row_has_content = true;
        break;
      case ',':
        end_field();
        row_has_content = true;
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        break;
      default:
        field.push_back(c);
    }
  }
  if (in_quotes) throw Error(Errc::invalid_argument, "unterminated quoted CSV field");
  if (!field.empty() || !row.empty() || row_has_content) end_row();
  return records;
}

}  // namespace

CsvTable CsvTable::parse(std::string_view text) {
  // Byte-order mark from spreadsheet exports.
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  auto records = split_records(text);
  CsvTable table;
  if (records.empty()) return table;
  table.header_ = std::move(records.front());
  for (auto& name : table.header_) name = trim(name);
  for (std::size_t i = 1; i < records.size(); ++i) {
    auto& row = records[i];
    row.resize(table.header_.size());
    table.rows_.push_back(std::move(row));
  }
  return table;
}

std::optional<std::size_t> CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i) {
    if (header_[i] == name) return i;
  }
  return std::nullopt;
}

std::size_t CsvTable::require_column(std::string_view name) const {
  auto idx = column(name);
  if (!idx) throw Error(Errc::missing_column, "manifest is missing column '" + std::string(name) + "'");
  return *idx;
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace coughnet
