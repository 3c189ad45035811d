#pragma once

#include <string>
#include <vector>

namespace ttl::bench {

/// Cells are formatted once, so the markdown and CSV renderings carry the same text.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  std::string markdown() const;
  /// RFC 4180 quoting for cells containing ',', '"' or a newline.
  std::string csv() const;
};

/// Inverse of Table::csv for tables it produced.
Table parse_csv(const std::string& text);

}  // namespace ttl::bench
