#include <catch2/catch_amalgamated.hpp>

#include "lmboost/bitdesc.hpp"
#include "lmboost/rng.hpp"

using namespace lmboost;

TEST_CASE("hamming distance counts differing bits", "[bitdesc]") {
  BinaryDescriptor a(384), b(384);
  CHECK(hamming_distance(a, b) == 0);
  b.set(0, true);
  b.set(100, true);
  b.set(383, true);
  CHECK(hamming_distance(a, b) == 3);
  a.set(100, true);
  CHECK(hamming_distance(a, b) == 2);
}

TEST_CASE("hamming distance rejects mixed lengths", "[bitdesc]") {
  BinaryDescriptor a(384), b(256);
  CHECK_THROWS_AS(hamming_distance(a, b), Error);
}

TEST_CASE("hex round trip preserves every descriptor", "[bitdesc]") {
  Rng rng(7);
  for (int n = 0; n < 200; ++n) {
    const std::uint32_t bits = 8 + static_cast<std::uint32_t>(uniform_below(rng, 512));
    BinaryDescriptor d(bits);
    for (std::uint32_t b = 0; b < bits; ++b)
      if (rng() & 1) d.set(b, true);
    const BinaryDescriptor back = BinaryDescriptor::from_hex(d.to_hex(), bits);
    REQUIRE(back == d);
  }
}

TEST_CASE("from_hex validates input", "[bitdesc]") {
  CHECK_THROWS_AS(BinaryDescriptor::from_hex("zz", 8), ParseError);
  CHECK_THROWS_AS(BinaryDescriptor::from_hex("0102", 8), ParseError);  // too long
}
