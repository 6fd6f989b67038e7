#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "itpn/error.hpp"
#include "itpn/metrics.hpp"

using namespace itpn;
namespace fs = std::filesystem;

TEST(Metrics, HeaderHasFiveFields) {
  EXPECT_STREQ(kMetricsHeader, "step,lr,loss_mim,loss_mfm,loss_total");
  EXPECT_EQ(format_metrics_line({3, 0.5, 1.0, 2.0, 1.6}), "3,0.5,1,2,1.6000000000000001");
}

TEST(Metrics, RoundTripIsExact) {
  std::vector<MetricsRecord> rs{{0, 0.0, 1.0 / 3.0, 2.0 / 7.0, 0.1 + 0.2}, {1, 1e-3, 1e-300, 0.0, 5.5}};
  const fs::path path = fs::temp_directory_path() / "itpn_test_metrics.csv";
  write_metrics(rs, path);
  EXPECT_EQ(read_metrics(path), rs);
  fs::remove(path);
}

TEST(Metrics, WriterFlushesEachLine) {
  const fs::path path = fs::temp_directory_path() / "itpn_test_metrics_stream.csv";
  MetricsWriter w(path);
  w.write({0, 0.1, 1.0, 2.0, 1.6});
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  EXPECT_EQ(parse_metrics(buf.str()).size(), 1u);
  fs::remove(path);
}

TEST(Metrics, MalformedInputIsAParseError) {
  EXPECT_THROW(parse_metrics("wrong,header\n"), LoadError);
  EXPECT_THROW(parse_metrics(std::string(kMetricsHeader) + "\n1,2,3\n"), LoadError);
  EXPECT_THROW(parse_metrics(std::string(kMetricsHeader) + "\n1,a,3,4,5\n"), LoadError);
}
