#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "trex/errors.hpp"
#include "trex/kvfile.hpp"

using namespace trex;

TEST(KeyValueDoc, ParsesEntriesCommentsAndBlanks) {
  const auto doc = KeyValueDoc::parse(
      "# leading comment\nformat = trex-config/1\n\nalpha = 1.5\n  beta=two words  \n# trailing\n", "trex-config");
  EXPECT_EQ(doc.format(), "trex-config/1");
  EXPECT_DOUBLE_EQ(doc.get_double("alpha"), 1.5);
  EXPECT_EQ(doc.get("beta"), "two words");
  EXPECT_EQ(doc.keys(), (std::vector<std::string>{"alpha", "beta"}));
}

TEST(KeyValueDoc, RejectsWrongSchemaAndNewerVersion) {
  EXPECT_THROW(KeyValueDoc::parse("format = other/1\n", "trex-config"), ValidationError);
  EXPECT_THROW(KeyValueDoc::parse("format = trex-config/2\n", "trex-config"), ValidationError);
  EXPECT_THROW(KeyValueDoc::parse("a = 1\nformat = trex-config/1\n", "trex-config"), ValidationError);
}

TEST(KeyValueDoc, RejectsDuplicateKeysAndMalformedLines) {
  EXPECT_THROW(KeyValueDoc::parse("format = trex-config/1\na = 1\na = 2\n", "trex-config"), ValidationError);
  EXPECT_THROW(KeyValueDoc::parse("format = trex-config/1\nno equals sign\n", "trex-config"), ValidationError);
  EXPECT_THROW(KeyValueDoc::parse("format = trex-config/1\nbad key! = 1\n", "trex-config"), ValidationError);
}

TEST(KeyValueDoc, DumpRoundTrips) {
  KeyValueDoc doc("trex-config/1");
  doc.set("z.last", "3");
  doc.set("a.first", "x y z");
  const auto again = KeyValueDoc::parse(doc.dump(), "trex-config");
  EXPECT_EQ(again.dump(), doc.dump());
  EXPECT_EQ(again.keys(), (std::vector<std::string>{"z.last", "a.first"}));
}

TEST(KeyValueDoc, TypedGettersValidate) {
  const auto doc = KeyValueDoc::parse("format = t/1\nn = 12x\nb = maybe\nv = 1, 2 3\n", "t");
  EXPECT_THROW(doc.get_long("n"), ValidationError);
  EXPECT_THROW(doc.get_bool("b"), ValidationError);
  EXPECT_THROW(doc.get("missing"), ValidationError);
  EXPECT_EQ(doc.get_doubles("v"), (std::vector<double>{1, 2, 3}));
}

TEST(FormatDouble, ShortestRoundTrip) {
  for (const double v : {0.1, 1.0 / 3.0, -2.5e-300, 1e21, 123456789.125, 0.0}) {
    EXPECT_EQ(parse_double(format_double(v), "v"), v);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(2.0), "2");
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}
