#include <cstring>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "demr/checkpoint.hpp"
#include "demr/config.hpp"
#include "demr/model.hpp"
#include "demr/rng.hpp"

using namespace demr;

TEST_CASE("config serialization round-trips losslessly") {
  RunConfig cfg = default_config();
  cfg.seed = 987654321;
  cfg.weights.geom = 0.015625;  // representable exactly
  cfg.lr = 3e-4;
  cfg.visual_ladder = {0.0, 0.1, 1.7};
  cfg.mode = "vanilla";
  cfg.bias.start_conc = 5.5;
  cfg.data.seed = cfg.seed;

  const std::string text = serialize_config(cfg);
  const RunConfig back = parse_config_json(text);
  CHECK(serialize_config(back) == text);
  CHECK(back.seed == cfg.seed);
  CHECK(back.weights.geom == cfg.weights.geom);
  CHECK(back.visual_ladder == cfg.visual_ladder);
  CHECK(config_hash(back) == config_hash(cfg));
}

TEST_CASE("unknown config keys are rejected") {
  CHECK_THROWS_WITH_AS(parse_config_json(R"({"data.nsamples": 10})"),
                       doctest::Contains("unknown config key"),
                       ValidationError);
  CHECK_THROWS_AS(parse_config_json(R"({"seed": "abc"})"), ValidationError);
  CHECK_THROWS_AS(parse_config_json("not json"), ValidationError);
  CHECK_THROWS_AS(parse_config_json(R"([1,2,3])"), ValidationError);
}

TEST_CASE("config defaults carry the documented values") {
  const RunConfig cfg = default_config();
  CHECK(cfg.n_rff == 4);
  CHECK(cfg.weights.geom == 0.01);
  CHECK(cfg.weights.der == 0.001);
  CHECK(cfg.weights.l1 == 1.0);
  CHECK(cfg.weights.iou == 1.0);
  CHECK(cfg.weights.nll == 1.0);
  CHECK(cfg.qr_epochs == 30);
  CHECK(cfg.qr_lr == 1e-5);
  CHECK(cfg.epochs == 50);
  CHECK(cfg.lr == 1e-4);
  CHECK(cfg.batch_size == 32);
  CHECK(cfg.nms_threshold == 0.7);
  CHECK(cfg.mode == "geom");
  CHECK(cfg.mask_policy == "one_noun");
}

TEST_CASE("crc32 matches the standard test vector") {
  const char* s = "123456789";
  CHECK(crc32(reinterpret_cast<const unsigned char*>(s), 9) == 0xCBF43926u);
  CHECK(crc32(nullptr, 0) == 0x00000000u);
}

TEST_CASE("checkpoint round-trip is exact after one narrowing") {
  ModelConfig mc;
  mc.dim = 6;
  mc.vocab_size = 10;
  mc.n_rff = 1;
  mc.qr_hidden = 4;
  Model model(mc, 42);
  // give the moments some structure
  for (auto& e : model.params().entries()) {
    for (std::size_t i = 0; i < e.adam_m.data.size(); ++i) {
      e.adam_m.data[i] = 0.001 * static_cast<double>(i);
      e.adam_v.data[i] = 0.002 * static_cast<double>(i);
    }
  }
  model.params().set_step(1234);

  const auto dir = std::filesystem::temp_directory_path() / "demr_test_ckpt";
  std::filesystem::create_directories(dir);
  const std::string p1 = (dir / "a.bin").string();
  const std::string p2 = (dir / "b.bin").string();

  save_checkpoint(model.params(), 0xDEADBEEFull, p1);

  Model loaded(mc, 7);  // different init, same shapes
  const std::uint64_t hash = load_checkpoint(loaded.params(), p1);
  CHECK(hash == 0xDEADBEEFull);
  CHECK(loaded.params().step() == 1234);

  // float32 narrowing happened on save; the loaded values equal the
  // narrowed originals exactly, and a second save is byte-identical
  for (std::size_t i = 0; i < model.params().entries().size(); ++i) {
    const auto& orig = model.params().entries()[i];
    const auto& got = loaded.params().entries()[i];
    for (std::size_t k = 0; k < orig.value.data.size(); ++k)
      CHECK(got.value.data[k] ==
            static_cast<double>(static_cast<float>(orig.value.data[k])));
  }
  save_checkpoint(loaded.params(), 0xDEADBEEFull, p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)),
                       std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)),
                       std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  // a load/save/load cycle is the identity on the values
  Model reload(mc, 3);
  load_checkpoint(reload.params(), p2);
  for (std::size_t i = 0; i < loaded.params().entries().size(); ++i)
    CHECK(reload.params().entries()[i].value.data ==
          loaded.params().entries()[i].value.data);

  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint rejects corruption and shape mismatches") {
  ModelConfig mc;
  mc.dim = 6;
  mc.vocab_size = 10;
  mc.n_rff = 1;
  mc.qr_hidden = 4;
  Model model(mc, 1);
  const auto dir = std::filesystem::temp_directory_path() / "demr_test_ckpt2";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "c.bin").string();
  save_checkpoint(model.params(), 1, path);

  // flip one payload byte: CRC must catch it
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(64);
    char c;
    f.seekg(64);
    f.get(c);
    f.seekp(64);
    f.put(static_cast<char>(c ^ 0x5A));
  }
  Model victim(mc, 2);
  CHECK_THROWS_WITH_AS(load_checkpoint(victim.params(), path),
                       doctest::Contains("CRC"), ValidationError);

  // a model with different shapes cannot load the file
  save_checkpoint(model.params(), 1, path);
  ModelConfig other = mc;
  other.qr_hidden = 5;
  Model wrong(other, 3);
  CHECK_THROWS_AS(load_checkpoint(wrong.params(), path), ValidationError);

  std::filesystem::remove_all(dir);
}
