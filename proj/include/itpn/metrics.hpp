#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace itpn {

struct MetricsRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss_mim = 0.0;
  double loss_mfm = 0.0;  // unweighted sum over supervised levels
  double loss_total = 0.0;

  bool operator==(const MetricsRecord&) const = default;
};

inline constexpr const char* kMetricsHeader = "step,lr,loss_mim,loss_mfm,loss_total";

std::string format_metrics_line(const MetricsRecord& r);

// Appends one flushed line per record after writing the header.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);
  void write(const MetricsRecord& r);

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

void write_metrics(std::span<const MetricsRecord> records, const std::filesystem::path& path);
std::vector<MetricsRecord> parse_metrics(const std::string& text);
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

}  // namespace itpn
