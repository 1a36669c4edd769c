#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>

#include "diffad/config.hpp"
#include "doctest.h"

using namespace diffad;

TEST_CASE("parsing accepts comments, blanks and whitespace") {
  auto cfg = Config::parse_string(
      "# a comment\n"
      "\n"
      "train.iterations = 3000\n"
      "  detect.tau=0.05  \n"
      "detect.mode = rpg\n"
      "path.out = /tmp/run 1\n");
  CHECK(cfg.get_int("train.iterations") == 3000);
  CHECK(cfg.get_double("detect.tau") == 0.05);
  CHECK(cfg.get_string("detect.mode") == "rpg");
  CHECK(cfg.get_string("path.out") == "/tmp/run 1");  // values may hold spaces
  CHECK(cfg.has("detect.tau"));
  CHECK(!cfg.has("detect.threshold"));
}

TEST_CASE("parse errors carry the origin and line number") {
  CHECK_THROWS_WITH_AS(Config::parse_string("a = 1\nno equals sign\n", "run.cfg"),
                       doctest::Contains("run.cfg:2"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(Config::parse_string("Bad.Key = 1\n", "run.cfg"),
                       doctest::Contains("run.cfg:1"), std::invalid_argument);
  CHECK_THROWS_AS(Config::parse_string(".leading = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(Config::parse_string("trailing. = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(Config::parse_file("/nonexistent/config.txt"), std::invalid_argument);
}

TEST_CASE("typed getters validate and fall back") {
  auto cfg = Config::parse_string("a.n = 7\na.x = 2.5\na.flag = true\na.bad = zz\n");
  CHECK(cfg.get_int("a.n") == 7);
  CHECK(cfg.get_int("missing", 42) == 42);
  CHECK(cfg.get_double("a.x") == 2.5);
  CHECK(cfg.get_double("a.n") == 7.0);  // integers read as numbers too
  CHECK(cfg.get_double("missing", 1.5) == 1.5);
  CHECK(cfg.get_bool("a.flag", false));
  CHECK(cfg.get_bool("missing", true));
  CHECK(cfg.get_string("a.bad") == "zz");

  CHECK_THROWS_WITH_AS(cfg.get_int("a.bad"), doctest::Contains("a.bad"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.get_double("a.bad"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.get_bool("a.bad", false), std::invalid_argument);
  CHECK_THROWS_WITH_AS(cfg.get_string("missing"), doctest::Contains("missing"),
                       std::invalid_argument);
  // present but malformed never silently falls back
  CHECK_THROWS_AS(cfg.get_int("a.bad", 5), std::invalid_argument);
}

TEST_CASE("overrides layer on top of the file, later wins") {
  auto cfg = Config::parse_string("detect.tau = 0.1\n");
  cfg.apply_override("detect.tau=0.25");
  CHECK(cfg.get_double("detect.tau") == 0.25);
  cfg.apply_override("extra.key=hello");
  CHECK(cfg.get_string("extra.key") == "hello");
  CHECK_THROWS_AS(cfg.apply_override("no_equals"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.apply_override("=value"), std::invalid_argument);

  auto dup = Config::parse_string("k.a = 1\nk.a = 2\n");
  CHECK(dup.get_int("k.a") == 2);
}

TEST_CASE("canonical form is sorted and drives the hash") {
  auto a = Config::parse_string("b.two = 2\na.one = 1\n");
  auto b = Config::parse_string("a.one = 1\nb.two = 2\n");
  CHECK(a.canonical() == "a.one = 1\nb.two = 2\n");
  CHECK(a.canonical() == b.canonical());
  CHECK(a.hash() == b.hash());
  CHECK(a.hash_hex().size() == 16);

  auto c = Config::parse_string("a.one = 1\nb.two = 3\n");
  CHECK(c.hash() != a.hash());

  auto keys = a.keys();
  REQUIRE(keys.size() == 2);
  CHECK(keys[0] == "a.one");
  CHECK(keys[1] == "b.two");
}

TEST_CASE("merge and file round trip") {
  auto base = Config::parse_string("x.a = 1\nx.b = 2\n");
  auto over = Config::parse_string("x.b = 20\nx.c = 30\n");
  base.merge(over);
  CHECK(base.get_int("x.a") == 1);
  CHECK(base.get_int("x.b") == 20);
  CHECK(base.get_int("x.c") == 30);

  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() / "diffad_config_roundtrip.txt";
  base.save(p.string());
  auto loaded = Config::parse_file(p.string());
  CHECK(loaded.canonical() == base.canonical());
  CHECK(loaded.hash() == base.hash());
  fs::remove(p);
}
