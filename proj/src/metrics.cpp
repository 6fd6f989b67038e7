#include "itpn/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "itpn/error.hpp"

namespace itpn {

std::string format_metrics_line(const MetricsRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g", r.step, r.lr, r.loss_mim, r.loss_mfm, r.loss_total);
  return buf;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::trunc) {
  if (!out_) throw Error("cannot write metrics to " + path.string());
  out_ << kMetricsHeader << '\n' << std::flush;
}

void MetricsWriter::write(const MetricsRecord& r) {
  out_ << format_metrics_line(r) << '\n' << std::flush;
  if (!out_) throw Error("write failed for " + path_.string());
}

void write_metrics(std::span<const MetricsRecord> records, const std::filesystem::path& path) {
  MetricsWriter w(path);
  for (const auto& r : records) w.write(r);
}

std::vector<MetricsRecord> parse_metrics(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw LoadError(LoadErrorKind::parse, "metrics header missing");
  std::vector<MetricsRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    MetricsRecord r;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf%c", &r.step, &r.lr, &r.loss_mim, &r.loss_mfm, &r.loss_total,
                    &tail) != 5) {
      throw LoadError(LoadErrorKind::parse, "metrics line " + std::to_string(lineno) + " is malformed");
    }
    out.push_back(r);
  }
  return out;
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(LoadErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_metrics(ss.str());
}

}  // namespace itpn
