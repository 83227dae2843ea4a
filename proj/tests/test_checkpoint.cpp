#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "csasr/checkpoint.hpp"
#include "csasr/model.hpp"
#include "csasr/trainer.hpp"
#include "support.hpp"

using namespace csasr;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir(const char* name) {
  const auto dir = fs::temp_directory_path() / ("csasr_test_" + std::string(name));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}
}  // namespace

TEST_CASE("checkpoint files round-trip values and metadata") {
  const auto dir = temp_dir("ckpt");
  CheckpointFile c;
  c.meta = {{"epoch", 3}};
  c.tensors.push_back({"a", {2, 2}, {1.5, -0.0, 1e-300, 3.0}});
  c.tensors.push_back({"b", {3}, {std::numeric_limits<double>::max(), 2, 3}});
  save_checkpoint(dir / "x.ckpt", c);
  const auto back = load_checkpoint(dir / "x.ckpt");
  CHECK(back.meta["epoch"] == 3);
  REQUIRE(back.tensors.size() == 2);
  CHECK(back.tensors[0].name == "a");
  CHECK(back.tensors[0].shape == Shape{2, 2});
  CHECK(back.tensors[0].data == c.tensors[0].data);
  CHECK(back.tensors[1].data == c.tensors[1].data);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto dir = temp_dir("ckpt_bad");
  { std::ofstream(dir / "bad.ckpt") << "not a checkpoint"; }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), std::runtime_error);
  CheckpointFile c;
  c.tensors.push_back({"a", {4}, {1, 2, 3, 4}});
  save_checkpoint(dir / "t.ckpt", c);
  fs::resize_file(dir / "t.ckpt", fs::file_size(dir / "t.ckpt") - 8);
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), std::runtime_error);
}

TEST_CASE("parameter store rejects duplicates and mismatched loads") {
  ParameterStore store;
  store.add("w", Tensor::zeros({2, 2}));
  CHECK_THROWS(store.add("w", Tensor::zeros({2, 2})));
  CHECK(store.get("w").requires_grad());
  CHECK_THROWS(store.load({{"w", {4}, {1, 2, 3, 4}}}));
  CHECK_THROWS(store.load({}));
  store.load({{"w", {2, 2}, {1, 2, 3, 4}}});
  CHECK(store.get("w").at(1, 1) == 4);
}

TEST_CASE("models round-trip through checkpoints with their config") {
  const auto dir = temp_dir("model");
  ModelConfig mc = testing::tiny_model_config(9, 0);
  mc.use_ld = true;
  mc.use_lpb = true;
  mc.ld_full_context = false;
  Model a(mc, 3);
  save_model(dir / "m.ckpt", a);
  const auto b = load_model(dir / "m.ckpt");
  CHECK(b->config().use_lpb);
  CHECK(b->config().d_model == 8);
  Rng rng(1);
  const Utterance u = testing::random_utterance(mc, 16, 2, rng);
  NoGradGuard g;
  CHECK(a.compute_losses(u, {}).total.item() == b->compute_losses(u, {}).total.item());
}

TEST_CASE("checkpoint averaging") {
  const auto dir = temp_dir("avg");
  CheckpointFile p, q, odd;
  p.tensors.push_back({"w", {3}, {1.0, -2.0, 0.25}});
  q.tensors.push_back({"w", {3}, {-1.0, 2.0, -0.25}});
  odd.tensors.push_back({"w", {1, 3}, {1, 2, 3}});
  save_checkpoint(dir / "p.ckpt", p);
  save_checkpoint(dir / "q.ckpt", q);
  save_checkpoint(dir / "odd.ckpt", odd);

  const std::vector<fs::path> one{dir / "p.ckpt"};
  CHECK(average_checkpoints(one).tensors[0].data == p.tensors[0].data);
  const std::vector<fs::path> self{dir / "p.ckpt", dir / "p.ckpt"};
  CHECK(average_checkpoints(self).tensors[0].data == p.tensors[0].data);
  const std::vector<fs::path> opposite{dir / "p.ckpt", dir / "q.ckpt"};
  const auto zero = average_checkpoints(opposite);
  for (double v : zero.tensors[0].data) CHECK(v == 0.0);
  const std::vector<fs::path> mismatch{dir / "p.ckpt", dir / "odd.ckpt"};
  CHECK_THROWS(average_checkpoints(mismatch));
  CHECK_THROWS(average_checkpoints(std::vector<fs::path>{}));
}
