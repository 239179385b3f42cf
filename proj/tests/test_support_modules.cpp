#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "anchorlab/config.hpp"
#include "anchorlab/denoiser.hpp"
#include "anchorlab/errors.hpp"
#include "anchorlab/io.hpp"
#include "anchorlab/stats.hpp"
#include "anchorlab/svg.hpp"

using namespace anchorlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("anchorlab_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Format, ShortestRoundTrip) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double v = n(rng) * std::pow(10.0, i % 20 - 10);
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
  EXPECT_EQ(format_double(2.0), "2");
  EXPECT_TRUE(std::isnan(parse_double("nan")));
  EXPECT_THROW(parse_double("1.5x"), ConfigError);
}

TEST(Csv, WriteReadAndMissingColumn) {
  const auto dir = scratch("csv");
  write_csv(dir / "t.csv", {"a", "b"}, {{"1", "x"}, {"2.5", "y"}});
  const CsvTable t = read_csv(dir / "t.csv");
  EXPECT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.number(1, "a"), 2.5);
  EXPECT_EQ(t.text(0, "b"), "x");
  EXPECT_THROW(t.column("c"), MissingArtifactError);
  EXPECT_THROW(read_csv(dir / "absent.csv"), MissingArtifactError);
  EXPECT_EQ(split("a,,b", ','), (std::vector<std::string>{"a", "", "b"}));
  EXPECT_EQ(trim("  x y \t"), "x y");
}

TEST(Stats, RanksWithTies) {
  const std::vector<double> v{3.0, 1.0, 3.0, 2.0};
  EXPECT_EQ(stats::average_ranks(v), (std::vector<double>{3.5, 1.0, 3.5, 2.0}));
  EXPECT_EQ(stats::average_ranks(v, true), (std::vector<double>{1.5, 4.0, 1.5, 3.0}));
}

TEST(Stats, Spearman) {
  const std::vector<double> x{0, 0.25, 0.5, 0.75, 1.0};
  EXPECT_NEAR(stats::spearman(x, std::vector<double>{1, 4, 9, 16, 25}), 1.0, 1e-15);
  EXPECT_NEAR(stats::spearman(x, std::vector<double>{5, 3, 2, 1, 0}), -1.0, 1e-15);
  // Hand value: ranks (1..5) vs (2,1,4,3,5): 1 - 6*4/(5*24) = 0.8
  EXPECT_NEAR(stats::spearman(x, std::vector<double>{2, 1, 4, 3, 5}), 0.8, 1e-12);
}

TEST(Stats, SignTest) {
  const std::vector<double> hi{2, 2, 2, 2, 2}, lo{1, 1, 1, 1, 1};
  EXPECT_NEAR(stats::sign_test_greater(hi, lo), 1.0 / 32.0, 1e-15);
  EXPECT_NEAR(stats::sign_test_greater(lo, hi), 1.0, 1e-12);
  const std::vector<double> four{2, 2, 2, 2, 0};
  EXPECT_NEAR(stats::sign_test_greater(four, lo), 6.0 / 32.0, 1e-15);
  // Ties are dropped.
  const std::vector<double> tie{2, 2, 2, 2, 1};
  EXPECT_NEAR(stats::sign_test_greater(tie, lo), 1.0 / 16.0, 1e-15);
  EXPECT_EQ(stats::sign_test_greater(lo, lo), 1.0);
}

TEST(Checkpoint, BitExactRoundTrip) {
  DenoiserConfig cfg;
  cfg.hidden = {16, 8};
  DenoiserModel m(cfg, 3);
  m.register_subject(2);
  m.enable_low_rank(4, 1.0, 5);
  for (auto* p : m.low_rank_parameters()) {
    for (std::size_t i = 0; i < p->size(); ++i) p->values[i] = std::sin(1.0 + i);
  }
  m.set_trained(true);
  const auto dir = scratch("ckpt");
  m.save(dir / "m.ckpt");
  const DenoiserModel r = DenoiserModel::load(dir / "m.ckpt");
  EXPECT_EQ(r.config(), m.config());
  EXPECT_TRUE(r.has_subject());
  EXPECT_TRUE(r.has_low_rank());
  EXPECT_TRUE(r.trained());
  EXPECT_EQ(checksum(r.all_parameters()), checksum(m.all_parameters()));
  std::ofstream(dir / "bad.ckpt") << "garbage";
  EXPECT_THROW(DenoiserModel::load(dir / "bad.ckpt"), MissingArtifactError);
  EXPECT_THROW(DenoiserModel::load(dir / "none.ckpt"), MissingArtifactError);
}

TEST(Denoiser, SubjectCopiesClassEmbedding) {
  DenoiserConfig cfg;
  cfg.hidden = {8};
  DenoiserModel m(cfg, 1);
  m.register_subject(3);
  EXPECT_EQ(m.subject_embedding()->values, m.concept_embeddings()[4].values);
  Matrix z(3, 2, 0.2);
  EXPECT_EQ(m.predict(z, 40, ConditionToken::subject(1)), m.predict(z, 40, ConditionToken::cls(3, 1)));
  DenoiserModel plain(cfg, 1);
  EXPECT_THROW(plain.predict(z, 40, ConditionToken::subject()), StateError);
  EXPECT_THROW(m.predict(z, 201, ConditionToken::cls(0)), RangeError);
  EXPECT_THROW(m.predict(z, 4, ConditionToken::cls(0, 3)), RangeError);
  EXPECT_EQ(to_string(ConditionToken::cls(2, 0)), to_string(ConditionToken::cls(2, 0)));
}

TEST(Config, DefaultsAndOverrides) {
  const RunConfig c = parse_config(
      "# comment\n"
      "world.seed = 7\n"
      "personalize.method = recon_ppl   # trailing\n"
      "personalize.lambda = 0.25\n"
      "eval.contexts = plain, ctx1\n"
      "eval.seeds = 3,4\n"
      "run.seed = 11\n");
  EXPECT_EQ(c.world.seed, 7u);
  EXPECT_EQ(c.objective.method, Method::recon_ppl);
  EXPECT_NEAR(c.objective.w, 3.0, 1e-12);
  EXPECT_EQ(c.eval.contexts, (std::vector<int>{-1, 1}));
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(c.personalize.seed, 11u);
  EXPECT_EQ(c.sweep_grid, (std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}));
  const RunConfig d = parse_config("");
  EXPECT_EQ(d.objective.w, 1.0);
  EXPECT_EQ(d.total_steps, 200);
  EXPECT_EQ(d.personalize.steps, 1000);
  EXPECT_EQ(d.adaptation.rank, 4);
}

TEST(Config, Rejections) {
  EXPECT_THROW(parse_config("world.colour = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("world.seed\n"), ConfigError);
  EXPECT_THROW(parse_config("world.K = two\n"), ConfigError);
  EXPECT_THROW(parse_config("personalize.method = dreambooth\n"), ConfigError);
  EXPECT_THROW(parse_config("personalize.lambda = 0.5\npersonalize.w = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("personalize.tau = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_config("eval.contexts = ctx5\n"), ConfigError);
  EXPECT_THROW(parse_config("world.n_ref = 9\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/anchorlab.cfg"), ConfigError);
}

TEST(Svg, RendersSeries) {
  svg::Chart c;
  c.title = "t";
  c.series.push_back({"a", {0, 1, 2}, {1, 0.5, 0.25}});
  const std::string s = svg::render(c);
  EXPECT_NE(s.find("<svg"), std::string::npos);
  EXPECT_NE(s.find("polyline"), std::string::npos);
  EXPECT_EQ(s, svg::render(c));
}
