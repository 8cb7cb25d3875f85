#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace coughnet {

/// RFC 4180 CSV table with a header row. Quoted fields may contain commas,
/// doubled quotes and newlines; CRLF line endings are accepted.
class CsvTable {
 public:
  static CsvTable parse(std::string_view text);

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  std::optional<std::size_t> column(std::string_view name) const;
  /// Throws Error(missing_column).
  std::size_t require_column(std::string_view name) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Quotes a field only when it contains a delimiter, quote or line break.
std::string csv_escape(std::string_view field);

}  // namespace coughnet
