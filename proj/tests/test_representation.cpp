#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

#include "argrep/experiment.hpp"
#include "argrep/representation.hpp"

using namespace argrep;
using Catch::Matchers::WithinAbs;

namespace {

EventRecord record(TokenId sys, bool entry, RetClass ret, TokenId proc = 3, std::int64_t ts = 0) {
  EventRecord r;
  r.sysname_id = sys;
  r.entry = entry;
  r.ret_class = ret;
  r.procname_id = proc;
  r.pid = 2100;
  r.tid = 2103;
  r.timestamp_us = ts;
  return r;
}

// Direct evaluation of the sin/cos definition, independent of the encoder.
double reference(double x, std::size_t j, std::size_t d, double base = 10000.0) {
  const double angle = x / std::pow(base, static_cast<double>(2 * (j / 2)) / static_cast<double>(d));
  return j % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

}  // namespace

TEST_CASE("encoding of zero alternates 0 and 1", "[representation]") {
  for (std::size_t d : {2u, 4u, 8u, 16u}) {
    auto v = SinusoidalEncoder(d).encode(0.0);
    for (std::size_t j = 0; j < d; ++j) CHECK(v[j] == (j % 2 == 0 ? 0.0 : 1.0));
  }
}

TEST_CASE("encoding of 80 in four dimensions", "[representation]") {
  auto v = SinusoidalEncoder(4).encode(80.0);
  const double expect[] = {-0.9939, -0.1104, 0.7174, 0.6967};
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK_THAT(v[j], WithinAbs(expect[j], 1e-3));
    CHECK_THAT(v[j], WithinAbs(reference(80.0, j, 4), 1e-9));
  }
}

TEST_CASE("encoding stays within [-1, 1] and matches the definition", "[representation]") {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t d = 2 * (1 + rng.below(16));
    const double x = rng.uniform(-1e6, 1e6);
    auto v = SinusoidalEncoder(d).encode(x);
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(std::abs(v[j]) <= 1.0);
      CHECK_THAT(v[j], WithinAbs(reference(x, j, d), 1e-9));
    }
  }
}

TEST_CASE("shifting the input rotates each sin/cos pair", "[representation]") {
  Rng rng(23);
  SinusoidalEncoder enc(8);
  for (int trial = 0; trial < 1000; ++trial) {
    const double x = rng.uniform(0, 1e4), k = rng.uniform(0, 1e3);
    auto a = enc.encode(x), b = enc.encode(x + k);
    for (std::size_t i = 0; i < 4; ++i) {
      const double th = k * enc.rate(i);
      const double s = a[2 * i], c = a[2 * i + 1];
      CHECK_THAT(b[2 * i], WithinAbs(s * std::cos(th) + c * std::sin(th), 1e-9));
      CHECK_THAT(b[2 * i + 1], WithinAbs(c * std::cos(th) - s * std::sin(th), 1e-9));
    }
  }
}

TEST_CASE("encoding is not injective per frequency pair", "[representation]") {
  // One full period of the slowest pair: that pair repeats, faster pairs do not.
  const std::size_t d = 6;
  SinusoidalEncoder enc(d);
  const double period = 2 * std::numbers::pi * std::pow(10000.0, static_cast<double>(d - 2) / d);
  const double x = 12.5;
  auto a = enc.encode(x), b = enc.encode(x + period);
  CHECK_THAT(a[d - 2], WithinAbs(b[d - 2], 1e-9));
  CHECK_THAT(a[d - 1], WithinAbs(b[d - 1], 1e-9));
  CHECK(std::abs(a[0] - b[0]) > 1e-3);
}

TEST_CASE("encoder rejects odd or empty dimensions", "[representation]") {
  CHECK_THROWS_AS(SinusoidalEncoder(3), ConfigError);
  CHECK_THROWS_AS(SinusoidalEncoder(0), ConfigError);
  CHECK_THROWS_AS(SinusoidalEncoder(4, 1.0), ConfigError);
}

TEST_CASE("embedding lookup selects a row", "[representation]") {
  EmbeddingTable<double> t(4, 5);
  t.value << 5, 6, 2, 1, 4,  //
      0, 1, 7, 3, 1,         //
      4, 8, 1, 6, 9,         //
      3, 1, 2, 8, 2;
  auto row = t.embed(2);
  const double expect[] = {4, 8, 1, 6, 9};
  for (int j = 0; j < 5; ++j) CHECK(row(j) == expect[j]);
  CHECK_THROWS_AS(t.embed(4), std::out_of_range);

  EmbeddingTable<double> zero(3, 6);
  CHECK(zero.embed(0).isZero(0.0));
}

TEST_CASE("embedding lookup equals a one-hot product", "[representation]") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t v = 1 + rng.below(40), d = 1 + rng.below(12);
    EmbeddingTable<double> t(v, d);
    t.randomize(rng, 3.0);
    const std::size_t id = rng.below(v);
    Eigen::RowVectorXd one_hot = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(v));
    one_hot(static_cast<Eigen::Index>(id)) = 1.0;
    Eigen::RowVectorXd expect = one_hot * t.value;
    CHECK((t.embed(id) - expect).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("randomized tables stay within the init bound and follow the seed", "[representation]") {
  EmbeddingTable<double> a(30, 8), b(30, 8);
  Rng r1(5), r2(5);
  a.randomize(r1);
  b.randomize(r2);
  CHECK(a.value == b.value);
  CHECK(a.value.cwiseAbs().maxCoeff() <= 0.05);
}

TEST_CASE("output length matches total_dim for every ablation", "[representation]") {
  const std::size_t expect[] = {32, 64, 40, 32, 56, 64};
  for (std::size_t i = 0; i < kAblations.size(); ++i) {
    auto cfg = representation_for(kAblations[i]);
    CHECK(cfg.total_dim() == expect[i]);
    EventRepresentation<double> rep(cfg, 10, 5);
    CHECK(static_cast<std::size_t>(rep.represent(record(4, false, RetClass::Success)).size()) == cfg.total_dim());
  }
}

TEST_CASE("call arguments are added to the sysname embedding", "[representation]") {
  RepresentationConfig with = representation_for(Ablation::All);
  RepresentationConfig without = with;
  without.call = false;
  EventRepresentation<double> a(with, 12, 6), b(without, 12, 6);
  Rng rng(1);
  a.randomize(rng);
  b.sysname().value = a.sysname().value;
  b.procname().value = a.procname().value;

  for (auto rc : {RetClass::Success, RetClass::Failure, RetClass::Unavailable})
    for (bool entry : {true, false}) {
      auto r = record(7, entry, rc, 4, 1234);
      Eigen::RowVectorXd va = a.represent(r, 1000), vb = b.represent(r, 1000);
      Eigen::RowVectorXd expect = vb;
      expect.head(32) += a.entry().embed(entry ? 1 : 0);
      expect.head(32) += a.ret().embed(static_cast<std::size_t>(rc));
      CHECK(va == expect);
    }

  a.entry().value.setZero();
  a.ret().value.setZero();
  auto r = record(5, true, RetClass::Unavailable);
  CHECK(a.represent(r) == b.represent(r));
}

TEST_CASE("event vector layout is call, process, time", "[representation]") {
  auto cfg = representation_for(Ablation::All);
  EventRepresentation<double> rep(cfg, 10, 6);
  Rng rng(3);
  rep.randomize(rng);
  auto r = record(4, false, RetClass::Failure, 5, 5000);
  auto v = rep.represent(r, 4000);
  CHECK(v.segment(32, 16) == rep.procname().embed(5));
  auto pid = SinusoidalEncoder(4).encode(2100.0), tid = SinusoidalEncoder(4).encode(2103.0);
  auto ts = SinusoidalEncoder(8).encode(1000.0);
  for (int j = 0; j < 4; ++j) {
    CHECK(v(48 + j) == pid[static_cast<std::size_t>(j)]);
    CHECK(v(52 + j) == tid[static_cast<std::size_t>(j)]);
  }
  for (int j = 0; j < 8; ++j) CHECK(v(56 + j) == ts[static_cast<std::size_t>(j)]);
}

TEST_CASE("a masked event keeps only the mask embedding", "[representation]") {
  EventRepresentation<double> rep(representation_for(Ablation::All), 10, 6);
  Rng rng(3);
  rep.randomize(rng);
  auto v = rep.represent(record(4, false, RetClass::Failure, 5, 5000), 0, true);
  CHECK(v.head(32) == rep.sysname().embed(Vocab::kMask));
  CHECK(v.tail(32).isZero(0.0));
}

TEST_CASE("representation rejects ids outside the vocabularies", "[representation]") {
  EventRepresentation<double> rep(representation_for(Ablation::All), 10, 6);
  CHECK_THROWS_AS(rep.represent(record(10, true, RetClass::Unavailable)), std::out_of_range);
  CHECK_THROWS_AS(rep.represent(record(3, true, RetClass::Unavailable, 6)), std::out_of_range);
}

TEST_CASE("embedding table text dump round trips", "[representation]") {
  EmbeddingTable<double> t(7, 3);
  Rng rng(8);
  t.randomize(rng);
  std::stringstream ss;
  write_table(ss, t, 42);
  CHECK(ss.str().starts_with("# argrep-embedding rows=7 dim=3 seed=42\n"));
  std::uint64_t seed = 0;
  auto back = read_table<double>(ss, &seed);
  CHECK(seed == 42);
  CHECK(back.value == t.value);
  std::istringstream bad("# something else\n");
  CHECK_THROWS_AS(read_table<double>(bad), ParseError);
}
