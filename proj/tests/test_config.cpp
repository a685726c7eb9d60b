#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "safectl/config.hpp"
#include "safectl/svg.hpp"

using namespace safectl;

TEST(Config, DefaultsCoverEverySchemaKey) {
  const RunConfig cfg;
  EXPECT_EQ(cfg.text("system"), "oven");
  EXPECT_DOUBLE_EQ(cfg.real("oven.k"), 0.2);
  EXPECT_DOUBLE_EQ(cfg.real("oven.temp_on"), 500.0);
  EXPECT_DOUBLE_EQ(cfg.real("certify.epsilon"), 0.5);
  EXPECT_DOUBLE_EQ(cfg.real("sysid.threshold"), 0.05);
  EXPECT_EQ(cfg.integer("certify.max_outer"), 50);
  EXPECT_EQ(cfg.int_list("lander.hidden"), std::vector<int>{64});
  EXPECT_FALSE(cfg.flag("sysid.sin"));
  EXPECT_TRUE(cfg.path("lander.model").empty());
  std::set<std::string> seen;
  for (const auto& k : config_schema()) EXPECT_TRUE(seen.insert(k.key).second) << k.key;
}

TEST(Config, ParsesCommentsAndWhitespace) {
  const auto cfg = RunConfig::parse_string("# header\n  oven.k =  0.3  # trailing\n\nsim.x0 = 1, 2 3\n");
  EXPECT_DOUBLE_EQ(cfg.real("oven.k"), 0.3);
  EXPECT_EQ(cfg.list("sim.x0"), (std::vector<double>{1, 2, 3}));
  EXPECT_TRUE(cfg.is_set("oven.k"));
  EXPECT_FALSE(cfg.is_set("oven.temp_on"));
}

TEST(Config, RejectsUnknownKeysWithLineNumber) {
  try {
    RunConfig::parse_string("oven.k = 0.2\noven.kk = 1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("oven.kk"), std::string::npos);
  }
}

TEST(Config, RejectsMalformedValues) {
  EXPECT_THROW(RunConfig::parse_string("oven.k = hot\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse_string("seed = 1.5\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse_string("system = rocket\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse_string("sysid.sin = maybe\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse_string("oven.k\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse_string("oven.k = 1\noven.k = 2\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse_string("oven.k = nan\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse_string("seed = -1\n").seed(), ConfigError);
  EXPECT_THROW(RunConfig::parse_string("certify.hidden = 2.5\n").int_list("certify.hidden"), ConfigError);
}

TEST(Config, WrongTypeAccessIsAnError) {
  const RunConfig cfg;
  EXPECT_THROW(cfg.integer("oven.k"), ConfigError);
  EXPECT_THROW(cfg.real("nope"), ConfigError);
}

TEST(Config, RelativePathsResolveAgainstBaseDir) {
  const auto cfg = RunConfig::parse_string("lander.model = models/m.txt\noutput_dir = /tmp/x/../y\n", "/data/run");
  EXPECT_EQ(cfg.path("lander.model"), std::filesystem::path("/data/run/models/m.txt"));
  EXPECT_EQ(cfg.path("output_dir"), std::filesystem::path("/tmp/y"));
  EXPECT_TRUE(RunConfig::parse_string("").path("output_dir").is_absolute());
}

TEST(Config, WriteRoundTrips) {
  const auto cfg = RunConfig::parse_string("oven.k = 0.25\ncontroller = excitation\nsysid.cos = true\n");
  std::ostringstream out;
  cfg.write(out);
  const auto again = RunConfig::parse_string(out.str());
  std::ostringstream out2;
  again.write(out2);
  EXPECT_EQ(out.str(), out2.str());
  EXPECT_DOUBLE_EQ(again.real("oven.k"), 0.25);
  EXPECT_TRUE(again.flag("sysid.cos"));
}

TEST(Config, LoadMissingFileThrows) {
  EXPECT_THROW(RunConfig::load("/nonexistent/safectl.conf"), ConfigError);
}

TEST(Svg, DeterministicWithEmbeddedData) {
  const Chart chart{"t", "x", "y", {{"a&b", {0, 1, 2}, {1, 4, 9}}}};
  std::ostringstream a, b;
  write_svg(a, chart);
  write_svg(b, chart);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str().find("<!-- data"), std::string::npos);
  EXPECT_NE(a.str().find("series a&amp;b"), std::string::npos);
  EXPECT_NE(a.str().find("<polyline"), std::string::npos);
}

TEST(Svg, ChartCsvIsLongFormat) {
  const Chart chart{"t", "x", "y", {{"s", {0, 0.5}, {1, 2}}, {"r", {1}, {3}}}};
  std::ostringstream out;
  write_chart_csv(out, chart);
  EXPECT_EQ(out.str(), "series,x,y\ns,0,1\ns,0.5,2\nr,1,3\n");
}

TEST(Svg, MismatchedSeriesThrows) {
  std::ostringstream out;
  EXPECT_THROW(write_svg(out, Chart{"t", "x", "y", {{"s", {0, 1}, {1}}}}), DomainError);
}

TEST(Svg, DegenerateRangesStayFinite) {
  std::ostringstream out;
  write_svg(out, Chart{"t", "x", "y", {{"flat", {1}, {5}}}});
  EXPECT_EQ(out.str().find("nan"), std::string::npos);
  EXPECT_EQ(out.str().find("inf"), std::string::npos);
}
