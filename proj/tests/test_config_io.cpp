#include "doctest.h"
#include "mate/tensor_io.hpp"
#include "test_util.hpp"

#include <cstdio>
#include <filesystem>

using namespace mate;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("mate_test_" + name)).string();
}

}  // namespace

TEST_SUITE("config_io") {
  TEST_CASE("parse_shape") {
    CHECK(parse_shape("4x8x8") == Shape3(4, 8, 8));
    CHECK(parse_shape("1x1x1") == Shape3(1, 1, 1));
    CHECK_THROWS(parse_shape("4x8"));
    CHECK_THROWS(parse_shape("4x0x8"));
    CHECK_THROWS(parse_shape("axbxc"));
  }

  TEST_CASE("serialize and parse round trip") {
    RunConfig cfg;
    cfg.model.d = 32;
    cfg.model.combine = Combine::ConcatProject;
    cfg.model.review.enabled = false;
    cfg.train.learning_rate = 0.1 + 0.2;  // not exactly representable in short decimal
    cfg.train.shape = Shape3(3, 5, 7);
    cfg.train.optimizer = OptimizerKind::Momentum;
    cfg.train.seed = 123456789012345ULL;
    cfg.cost.fps = 24;
    const std::string text = cfg.serialize();
    CHECK(text.rfind("# mate run configuration v1\n", 0) == 0);
    const RunConfig back = RunConfig::parse(text);
    CHECK(back.serialize() == text);
    CHECK(back.train.learning_rate == cfg.train.learning_rate);
    CHECK(back.train.shape == Shape3(3, 5, 7));
    CHECK(back.train.seed == cfg.train.seed);
  }

  TEST_CASE("sections, dotted keys and comments") {
    const RunConfig c = RunConfig::parse(
        "model.d = 24  # inline\n"
        "[tesa]\n"
        "tw = 2\n"
        "heads = 3\n"
        "[train]\n"
        "shape = \"2x2x2\"\n");
    CHECK(c.model.d == 24);
    CHECK(c.model.tesa.t_window == 2);
    CHECK(c.model.tesa.heads == 3);
    CHECK(c.train.shape == Shape3(2, 2, 2));
  }

  TEST_CASE("bad configs are rejected") {
    CHECK_THROWS_AS(RunConfig::parse("model.depth = 3\n"), std::invalid_argument);
    CHECK_THROWS_AS(RunConfig::parse("[nope]\nd = 3\n"), std::invalid_argument);
    CHECK_THROWS_AS(RunConfig::parse("model.d\n"), std::invalid_argument);
    CHECK_THROWS(RunConfig::parse("model.d = eight\n"));
    CHECK_THROWS(RunConfig::parse("model.d = 10\nmodel.head_dim = 4\n"));
    CHECK_THROWS(RunConfig::parse("train.optimizer = rmsprop\n"));
  }

  TEST_CASE("tensor encoding") {
    std::mt19937_64 rng(1);
    const Tensor t(Shape3(2, 3, 4), testing::random_tokens(24, 5, rng));
    const std::string bytes = encode_tensor(t);
    REQUIRE(bytes.size() == 16 + 24 * 5 * 8);
    CHECK(bytes.substr(0, 4) == "MATE");
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);
    CHECK(static_cast<unsigned char>(bytes[6]) == 4);
    CHECK(static_cast<unsigned char>(bytes[8]) == 2);
    CHECK(static_cast<unsigned char>(bytes[14]) == 5);
    const Tensor back = decode_tensor(bytes);
    CHECK(back.shape == t.shape);
    CHECK(back.data == t.data);

    CHECK_THROWS(decode_tensor(bytes.substr(0, 20)));
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS(decode_tensor(bad));

    const std::string path = temp_path("tensor.bin");
    write_tensor_file(path, t);
    CHECK(read_tensor_file(path).data == t.data);
    std::remove(path.c_str());
  }

  TEST_CASE("checkpoint round trip") {
    std::mt19937_64 rng(2);
    RunConfig cfg;
    cfg.model.d = 8;
    cfg.model.head_dim = 4;
    Checkpoint ck{cfg, init_denoiser(cfg.model, rng, 0.5)};
    ck.weights.blocks[0].gate_ma = 0.25;
    const std::string path = temp_path("ckpt.bin");
    save_checkpoint(path, ck);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.config.serialize() == cfg.serialize());
    CHECK(back.weights.pack() == ck.weights.pack());
    std::remove(path.c_str());
    CHECK_THROWS(load_checkpoint(path));
  }
}
