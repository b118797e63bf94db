#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ibp/checkpoint.hpp"
#include "ibp/network.hpp"
#include "ibp/rng.hpp"

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::path("test_tmp") / name;
  fs::create_directories(dir);
  return dir;
}

ibp::Network<float> sample_net() {
  auto spec = ibp::preset("small", {1, 14, 14}, 10);
  ibp::Normalization<float> norm;
  norm.mean = {0.1307f};
  norm.std_dev = {0.3081f};
  return ibp::init_network<float>(spec, 2024, norm);
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact, including optimizer state") {
  auto dir = temp_dir("ckpt");
  auto net = sample_net();
  ibp::CheckpointMeta meta;
  meta.epoch = 7;
  meta.epsilon = 0.123456789012345;
  meta.kappa = 0.625;
  meta.seed = 99;

  ibp::OptimizerState opt;
  opt.kind = ibp::OptimizerKind::Adam;
  opt.step = 4321;
  auto rng = ibp::make_rng(8);
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    for (const auto* t : {&net.weights[i], &net.biases[i]}) {
      auto m = ibp::Tensor<float>::zeros(t->shape());
      auto v = ibp::Tensor<float>::zeros(t->shape());
      for (std::int64_t j = 0; j < m.numel(); ++j) {
        m.mutable_data()[j] = ibp::uniform_real<float>(rng, -1, 1);
        v.mutable_data()[j] = ibp::uniform_real<float>(rng, 0, 1);
      }
      opt.first_moment.push_back(m);
      opt.second_moment.push_back(v);
    }
  }

  const auto path = (dir / "net.ibpc").string();
  ibp::save_checkpoint(path, net, meta, &opt);
  auto loaded = ibp::load_checkpoint(path);

  CHECK(loaded.meta.epoch == meta.epoch);
  CHECK(loaded.meta.epsilon == meta.epsilon);
  CHECK(loaded.meta.kappa == meta.kappa);
  CHECK(loaded.meta.seed == meta.seed);
  CHECK(loaded.net.spec.to_text() == net.spec.to_text());
  REQUIRE(loaded.net.normalization.mean.size() == 1);
  CHECK(loaded.net.normalization.mean[0] == net.normalization.mean[0]);
  CHECK(loaded.net.normalization.std_dev[0] == net.normalization.std_dev[0]);
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    for (std::int64_t j = 0; j < net.weights[i].numel(); ++j) {
      CHECK(loaded.net.weights[i].data()[j] == net.weights[i].data()[j]);
    }
    for (std::int64_t j = 0; j < net.biases[i].numel(); ++j) {
      CHECK(loaded.net.biases[i].data()[j] == net.biases[i].data()[j]);
    }
  }
  REQUIRE(loaded.optimizer.has_value());
  CHECK(loaded.optimizer->step == 4321);
  for (std::size_t i = 0; i < opt.first_moment.size(); ++i) {
    for (std::int64_t j = 0; j < opt.first_moment[i].numel(); ++j) {
      CHECK(loaded.optimizer->first_moment[i].data()[j] == opt.first_moment[i].data()[j]);
      CHECK(loaded.optimizer->second_moment[i].data()[j] == opt.second_moment[i].data()[j]);
    }
  }

  // save -> load -> save is byte-identical
  const auto path2 = (dir / "net2.ibpc").string();
  ibp::save_checkpoint(path2, loaded.net, loaded.meta, &*loaded.optimizer);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
}

TEST_CASE("checkpoint loader rejects corrupted containers with diagnostics") {
  auto dir = temp_dir("ckpt_bad");
  auto net = sample_net();
  ibp::CheckpointMeta meta;
  const auto path = (dir / "base.ibpc").string();
  ibp::save_checkpoint(path, net, meta);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  SUBCASE("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    std::ofstream(dir / "magic.ibpc", std::ios::binary) << bad;
    try {
      ibp::load_checkpoint((dir / "magic.ibpc").string());
      FAIL("expected DataError");
    } catch (const ibp::DataError& e) {
      CHECK(std::string(e.what()).find("IBPC") != std::string::npos);
    }
  }
  SUBCASE("bad version") {
    std::string bad = bytes;
    bad[4] = 9;
    std::ofstream(dir / "version.ibpc", std::ios::binary) << bad;
    CHECK_THROWS_AS(ibp::load_checkpoint((dir / "version.ibpc").string()), ibp::DataError);
  }
  SUBCASE("truncated payload") {
    std::string bad = bytes.substr(0, bytes.size() - 100);
    std::ofstream(dir / "short.ibpc", std::ios::binary) << bad;
    try {
      ibp::load_checkpoint((dir / "short.ibpc").string());
      FAIL("expected DataError");
    } catch (const ibp::DataError& e) {
      CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }
  }
  SUBCASE("trailing garbage") {
    std::string bad = bytes + "junk";
    std::ofstream(dir / "long.ibpc", std::ios::binary) << bad;
    try {
      ibp::load_checkpoint((dir / "long.ibpc").string());
      FAIL("expected DataError");
    } catch (const ibp::DataError& e) {
      CHECK(std::string(e.what()).find("trailing") != std::string::npos);
    }
  }
}
