// Tests for the shared plumbing: error taxonomy, deterministic Rng, and the
// seed-derivation hashes.  The Rng mapping layer is checked against the raw
// mt19937_64 engine (whose output the standard pins bit-for-bit), and the
// hashes against independently computed reference values.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "ctaudit/common.hpp"

using namespace ctaudit;

TEST_CASE("fnv1a matches the published 64-bit reference vectors") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("fnv1a distinguishes the ids we actually feed it") {
  CHECK(fnv1a("covid_ct_clahe_gabor") != fnv1a("covid_ct_clahe_plain"));
  CHECK(fnv1a("split/a") != fnv1a("split/b"));
  CHECK(fnv1a("ab") != fnv1a("ba"));  // order-sensitive
}

TEST_CASE("mix_seed reproduces independently computed values") {
  // Recomputed outside this codebase from the splitmix64 finalizer over
  // seed ^ (salt * golden-gamma).
  CHECK(mix_seed(42, 7) == 6029533247520485195ull);
  CHECK(mix_seed(1, 2) == 13757245211066428519ull);
  // All-zero input is the finalizer's fixed point.
  CHECK(mix_seed(0, 0) == 0ull);
}

TEST_CASE("mix_seed decorrelates both arguments") {
  CHECK(mix_seed(42, 7) != mix_seed(7, 42));
  CHECK(mix_seed(42, 7) != mix_seed(42, 8));
  CHECK(mix_seed(42, 7) != mix_seed(43, 7));
}

TEST_CASE("Rng::next_u64 is the raw engine stream") {
  Rng rng(2024);
  std::mt19937_64 reference(2024);
  for (int i = 0; i < 64; ++i) CHECK(rng.next_u64() == reference());
}

TEST_CASE("Rng::real01 applies the 53-bit mapping to engine words") {
  Rng rng(123);
  // First three values, frozen; they also follow from mt19937_64(123) words.
  const double a = rng.real01();
  const double b = rng.real01();
  const double c = rng.real01();
  CHECK(a == 0.31320017867847072);
  CHECK(b == 0.55597911939485845);
  CHECK(c == 0.93828510817776878);

  std::mt19937_64 reference(123);
  Rng again(123);
  for (int i = 0; i < 1000; ++i) {
    const double expected = static_cast<double>(reference() >> 11) * 0x1.0p-53;
    CHECK(again.real01() == expected);
  }
}

TEST_CASE("Rng::real01 stays inside [0, 1)") {
  Rng rng(7);
  for (int i = 0; i < 100000; ++i) {
    const double x = rng.real01();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
}

TEST_CASE("Rng::uniform maps into [lo, hi)") {
  Rng rng(9);
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.uniform(-3.5, 2.25);
    CHECK(x >= -3.5);
    CHECK(x < 2.25);
  }
}

TEST_CASE("Rng::uniform_index respects the bound for awkward moduli") {
  Rng rng(11);
  for (std::uint64_t n : {1ull, 2ull, 3ull, 7ull, 10ull, 1000003ull}) {
    for (int i = 0; i < 2000; ++i) {
      CHECK(rng.uniform_index(n) < n);
    }
  }
  for (int i = 0; i < 100; ++i) CHECK(rng.uniform_index(1) == 0);
}

TEST_CASE("Rng::uniform_index rejects n = 0") {
  Rng rng(1);
  CHECK_THROWS_AS((void)rng.uniform_index(0), ContractError);
}

TEST_CASE("Rng::uniform_index covers all residues roughly uniformly") {
  Rng rng(5);
  std::vector<int> counts(10, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++counts[rng.uniform_index(10)];
  for (int c : counts) {
    CHECK(c > draws / 10 - 600);
    CHECK(c < draws / 10 + 600);
  }
}

TEST_CASE("Rng::bernoulli degenerate probabilities") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) CHECK_FALSE(rng.bernoulli(0.0));
  for (int i = 0; i < 1000; ++i) CHECK(rng.bernoulli(1.0));
}

TEST_CASE("Rng::bernoulli hits its rate within sampling error") {
  Rng rng(17);
  int hits = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) hits += rng.bernoulli(0.25);
  CHECK(hits > 24000);
  CHECK(hits < 26000);
}

TEST_CASE("Rng::normal is deterministic and roughly standard") {
  Rng a(31), b(31);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());

  Rng rng(31);
  double sum = 0.0, sumsq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(var == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("Rng::shuffle permutes without loss and is seed-deterministic") {
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i;

  std::vector<int> once = v, twice = v;
  Rng a(77), b(77);
  a.shuffle(once);
  b.shuffle(twice);
  CHECK(once == twice);
  CHECK(once != v);  // astronomically unlikely to be identity

  std::vector<int> sorted = once;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == v);
}

TEST_CASE("Rng::shuffle handles empty and singleton vectors") {
  Rng rng(4);
  std::vector<int> empty;
  rng.shuffle(empty);
  CHECK(empty.empty());
  std::vector<int> one{42};
  rng.shuffle(one);
  CHECK(one == std::vector<int>{42});
}

TEST_CASE("Rng::shuffle visits all permutations of three elements") {
  Rng rng(13);
  std::map<std::vector<int>, int> counts;
  const int runs = 6000;
  for (int i = 0; i < runs; ++i) {
    std::vector<int> v{0, 1, 2};
    rng.shuffle(v);
    ++counts[v];
  }
  CHECK(counts.size() == 6);
  for (const auto& [perm, c] : counts) {
    CHECK(c > 800);
    CHECK(c < 1200);
  }
}

TEST_CASE("error taxonomy preserves messages and the runtime_error base") {
  CHECK(std::string(ManifestError("bad header").what()) == "bad header");
  CHECK(std::string(ContractError("bad shape").what()) == "bad shape");
  CHECK(std::string(EnvironmentError("missing weights").what()) == "missing weights");
  CHECK(std::string(IoError("unreadable").what()) == "unreadable");
  CHECK(std::string(TrainingDiverged("loss is NaN").what()) == "loss is NaN");

  CHECK_THROWS_AS(throw ManifestError("x"), std::runtime_error);
  CHECK_THROWS_AS(throw TrainingDiverged("x"), std::runtime_error);
}

TEST_CASE("library version string is populated") {
  CHECK(std::string(kVersion) == "0.1.0");
}
