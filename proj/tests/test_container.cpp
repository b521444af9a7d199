#include <doctest.h>

#include <fstream>

#include "dvn/container.hpp"
#include "dvn/errors.hpp"
#include "support/temp_dir.hpp"

using namespace dvn;

namespace {

Container sample_box() {
    Container c;
    c.header = {{"kind", "test"}, {"lambda", 0.25}};
    Eigen::VectorXd a(3);
    a << 1.5, -0.0, 1e-300;
    c.blocks.emplace_back("a", a);
    c.blocks.emplace_back("empty", Eigen::VectorXd());
    return c;
}

}  // namespace

TEST_SUITE("container") {

TEST_CASE("round trip is exact") {
    const Container c = sample_box();
    const std::string bytes = encode_container(c);
    CHECK(bytes.substr(0, 8) == "DVNCKPT1");
    const Container back = decode_container(bytes);
    CHECK(back.header == c.header);
    REQUIRE(back.blocks.size() == 2);
    CHECK(back.block("a") == c.block("a"));
    CHECK(std::signbit(back.block("a")[1]));
    CHECK(back.block("empty").size() == 0);
    CHECK(encode_container(back) == bytes);
}

TEST_CASE("missing block") {
    CHECK_THROWS_AS(sample_box().block("nope"), FormatError);
}

TEST_CASE("every truncation is rejected") {
    const std::string bytes = encode_container(sample_box());
    for (std::size_t n = 0; n < bytes.size(); ++n)
        CHECK_THROWS_AS(decode_container(bytes.substr(0, n)), FormatError);
}

TEST_CASE("flipped byte fails the checksum") {
    std::string bytes = encode_container(sample_box());
    bytes[bytes.size() - 20] ^= 0x01;
    CHECK_THROWS_AS(decode_container(bytes), FormatError);
}

TEST_CASE("bad magic and trailing bytes") {
    std::string bytes = encode_container(sample_box());
    std::string magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(decode_container(magic), FormatError);
    CHECK_THROWS_AS(decode_container(bytes + "x"), FormatError);
}

TEST_CASE("format errors report the offset") {
    const std::string bytes = encode_container(sample_box());
    try {
        decode_container(bytes.substr(0, 12));
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(e.offset() == 8);
    }
}

TEST_CASE("file round trip") {
    testing::TempDir dir;
    write_container(dir / "box.ckpt", sample_box());
    CHECK(read_container(dir / "box.ckpt").block("a") == sample_box().block("a"));
    CHECK_THROWS(read_container(dir / "missing.ckpt"));
}

}
