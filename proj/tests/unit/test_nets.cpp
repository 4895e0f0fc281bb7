#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "tvgan/error.hpp"
#include "tvgan/nets.hpp"

using namespace tvgan;
using tvgan::testing::random_tensor;
using tvgan::testing::spread_parameters;

namespace {

GeneratorSpec small_generator(int resolution, int depth) {
  GeneratorSpec s;
  s.resolution = resolution;
  s.depth = depth;
  s.base_channels = 4;
  return s;
}

DiscriminatorSpec small_discriminator(int resolution, int n) {
  DiscriminatorSpec s;
  s.resolution = resolution;
  s.base_channels = 4;
  s.num_subjects = n;
  return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool same_params(const ParameterSet& a, const ParameterSet& b) {
  if (a.tensors() != b.tensors()) return false;
  for (std::size_t i = 0; i < a.tensors(); ++i)
    if (a[i].value != b[i].value || a[i].shape != b[i].shape) return false;
  return true;
}

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "tvgan-unit";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("generator spec validation") {
  CHECK_NOTHROW(small_generator(256, 8).validate());
  CHECK_THROWS_AS(small_generator(64, 7).validate(), InvalidArgument);
  CHECK_THROWS_AS(Generator(small_generator(64, 7), 1), InvalidArgument);
  CHECK_THROWS_AS(small_generator(48, 5).validate(), InvalidArgument);
}

TEST_CASE("bottleneck is 1x1 at resolution 256 and depth 8") {
  const Generator g(small_generator(256, 8), 1);
  const auto shapes = g.layer_shapes();
  CHECK(shapes[7].name == "down7");
  CHECK(shapes[7].height == 1);
  CHECK(shapes[7].width == 1);

  GeneratorTape tape;
  const Tensor out = g.forward(random_tensor(3, 256, 256, 2), {}, &tape);
  CHECK(tape.encoders.back().output.height() == 1);
  CHECK(tape.encoders.back().output.width() == 1);
  CHECK(out.channels() == 3);
  CHECK(out.height() == 256);
}

TEST_CASE("generator conserves spatial shape") {
  for (int res : {64, 128, 256}) {
    CAPTURE(res);
    const Generator g(small_generator(res, 4), 3);
    const Tensor out = generator_forward(g, random_tensor(3, res, res, res), false, 0);
    CHECK(out.channels() == 3);
    CHECK(out.height() == res);
    CHECK(out.width() == res);
  }
  const Generator g(small_generator(64, 4), 3);
  CHECK_THROWS_AS(generator_forward(g, random_tensor(3, 32, 32, 1), false, 0), ShapeError);
  CHECK_THROWS_AS(generator_forward(g, random_tensor(1, 64, 64, 1), false, 0), ShapeError);
}

TEST_CASE("generator output is bounded over random draws") {
  Generator g(small_generator(16, 2), 1);
  Rng rng(17);
  int draws = 0;
  for (int i = 0; i < 1000; ++i) {
    if (i % 10 == 0) spread_parameters(g.params(), rng.uniform(0.02, 3.0), rng.below(1u << 30));
    const double range = rng.uniform(1.0, 50.0);
    const Tensor x = random_tensor(3, 16, 16, rng.below(1u << 30), -range, range);
    const Tensor y = generator_forward(g, x, rng.bernoulli(0.5), i);
    for (double v : y.values()) REQUIRE((v >= -1.0 && v <= 1.0));
    ++draws;
  }
  CHECK(draws == 1000);
}

TEST_CASE("generator determinism and dropout") {
  GeneratorSpec spec = small_generator(64, 6);
  const Generator a(spec, 9), b(spec, 9);
  CHECK(same_params(a.params(), b.params()));
  const Tensor x = random_tensor(3, 64, 64, 4);
  CHECK(generator_forward(a, x, false, 1) == generator_forward(a, x, false, 2));
  CHECK(generator_forward(a, x, true, 1) == generator_forward(a, x, true, 1));
  CHECK(max_abs_diff(generator_forward(a, x, true, 1), generator_forward(a, x, true, 2)) > 0.0);
}

TEST_CASE("skip connections carry signal") {
  const Generator g(small_generator(64, 4), 5);
  const Tensor x = random_tensor(3, 64, 64, 6);
  const Tensor full = g.forward(x, {});
  const Tensor no_bottleneck = g.forward(x, {false, 0, true, false});
  const Tensor severed = g.forward(x, {false, 0, true, true});
  CHECK(max_abs_diff(no_bottleneck, severed) > 0.0);
  CHECK(max_abs_diff(full, no_bottleneck) < max_abs_diff(full, severed));
}

TEST_CASE("discriminator heads") {
  SUBCASE("identity head has N + 1 logits") {
    for (int n : {1, 21}) {
      const Discriminator d(small_discriminator(64, n), 1);
      const auto out = d.forward(random_tensor(3, 64, 64, 1), random_tensor(3, 64, 64, 2));
      CHECK(out.id_logits.size() == static_cast<std::size_t>(n + 1));
    }
    CHECK_THROWS_AS(Discriminator(small_discriminator(64, 0), 1), InvalidArgument);
  }
  SUBCASE("realness map is 16x16 at 256 with 4 stages") {
    const Discriminator d(small_discriminator(256, 2), 1);
    CHECK(d.spec().realness_size() == 16);
    const auto out = d.forward(random_tensor(3, 256, 256, 1), random_tensor(3, 256, 256, 2));
    CHECK(out.realness.height() == 16);
    CHECK(out.realness.width() == 16);
    for (double v : out.realness.values()) CHECK((v > 0.0 && v < 1.0));
  }
  SUBCASE("real and generated images take the same path") {
    const Discriminator d(small_discriminator(64, 3), 1);
    const Generator g(small_generator(64, 6), 2);
    const Tensor x = random_tensor(3, 64, 64, 3);
    const Tensor fake = generator_forward(g, x, false, 0);
    const auto a = d.forward(x, fake);
    const auto b = d.forward(x, Tensor(fake));
    CHECK(a.realness == b.realness);
    CHECK(a.id_logits == b.id_logits);
  }
  SUBCASE("scalar realness head") {
    DiscriminatorSpec spec = small_discriminator(64, 2);
    spec.realness_head = RealnessHead::scalar;
    const Discriminator d(spec, 1);
    const auto out = d.forward(random_tensor(3, 64, 64, 1), random_tensor(3, 64, 64, 2));
    CHECK(out.realness.size() == 1);
  }
}

TEST_CASE("discriminator trunk is shared by both heads") {
  Discriminator d(small_discriminator(64, 4), 3);
  const Tensor x = random_tensor(3, 64, 64, 1), y = random_tensor(3, 64, 64, 2);
  const auto base = d.forward(x, y);

  for (auto* p : d.trunk_parameters()) {
    CAPTURE(p->name);
    const auto saved = p->value;
    for (auto& v : p->value) v += 0.05;
    const auto moved = d.forward(x, y);
    CHECK(moved.realness != base.realness);
    CHECK(moved.id_logits != base.id_logits);
    p->value = saved;
  }
  for (auto* p : d.identity_parameters()) {
    CAPTURE(p->name);
    const auto saved = p->value;
    for (auto& v : p->value) v += 0.05;
    const auto moved = d.forward(x, y);
    CHECK(moved.realness == base.realness);
    CHECK(moved.id_logits != base.id_logits);
    p->value = saved;
  }
  for (auto* p : d.realness_parameters()) {
    const auto saved = p->value;
    for (auto& v : p->value) v += 0.05;
    const auto moved = d.forward(x, y);
    CHECK(moved.realness != base.realness);
    CHECK(moved.id_logits == base.id_logits);
    p->value = saved;
  }
}

TEST_CASE("patch transformer") {
  const PatchNetSpec spec;
  CHECK(spec.skip_count() == 10);
  const PatchTransformer a(spec, 4), b(spec, 4);
  CHECK(same_params(a.params(), b.params()));
  const Tensor out = a.forward(random_tensor(3, 25, 25, 1));
  CHECK(out.channels() == 3);
  CHECK(out.height() == 25);
  CHECK(out.width() == 25);

  PatchNetSpec bad = spec;
  bad.layers = 7;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad.layers = 30;  // 15 unpadded 3x3 stages need a 31-pixel patch
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("generator and discriminator gradients match finite differences") {
  for (const auto& c : tvgan::testing::gan_loss_cases()) {
    CAPTURE(c.name);
    const auto r = tvgan::testing::check_gan_case(c, 12, 50);
    CAPTURE(r.worst);
    CHECK(r.failed == 0);
  }
}

TEST_CASE("spec json round trip") {
  GeneratorSpec g = small_generator(128, 5);
  g.dropout_stages = {0, 2};
  CHECK(nlohmann::json(g).get<GeneratorSpec>().dropout_stages == g.dropout_stages);
  DiscriminatorSpec d = small_discriminator(128, 7);
  d.realness_head = RealnessHead::scalar;
  const auto d2 = nlohmann::json(d).get<DiscriminatorSpec>();
  CHECK(d2.num_subjects == 7);
  CHECK(d2.realness_head == RealnessHead::scalar);
  PatchNetSpec p;
  p.width = 16;
  CHECK(nlohmann::json(p).get<PatchNetSpec>().width == 16);
}

TEST_CASE("checkpoint round trip") {
  const Generator g(small_generator(64, 6), 21);
  const Discriminator d(small_discriminator(64, 3), 22);
  Checkpoint ck;
  ck.model_kind = "tvgan";
  ck.metadata = {{"epoch", 3}};
  ck.add_network("generator", g.spec(), g.params());
  ck.add_network("discriminator", d.spec(), d.params());
  const auto path = temp_path("round.ckpt");
  write_checkpoint(path, ck);

  const Checkpoint back = read_checkpoint(path);
  CHECK(back.model_kind == "tvgan");
  CHECK(back.metadata.at("epoch") == 3);
  REQUIRE(back.network("generator") != nullptr);
  CHECK(back.network("patch") == nullptr);

  Generator g2(back.network("generator")->spec.get<GeneratorSpec>(), 99);
  back.load_into("generator", g2.params());
  for (std::size_t i = 0; i < g.params().tensors(); ++i) {
    const auto& p = g.params()[i];
    const auto& q = g2.params()[i];
    REQUIRE(p.size() == q.size());
    for (std::size_t k = 0; k < p.size(); ++k)
      CHECK(q.value[k] == static_cast<double>(static_cast<float>(p.value[k])));
  }
  const Tensor x = random_tensor(3, 64, 64, 1);
  CHECK(max_abs_diff(generator_forward(g, x, false, 0), generator_forward(g2, x, false, 0)) < 1e-4);

  Generator wrong(small_generator(64, 5), 1);
  CHECK_THROWS_AS(back.load_into("generator", wrong.params()), DecodeError);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto good = temp_path("good.ckpt");
  Checkpoint ck;
  ck.model_kind = "patch";
  PatchNetSpec spec;
  spec.width = 4;
  const PatchTransformer net(spec, 1);
  ck.add_network("patch", spec, net.params());
  write_checkpoint(good, ck);

  std::ifstream in(good, std::ios::binary);
  std::string blob((std::istreambuf_iterator<char>(in)), {});

  const auto write = [](const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream(p, std::ios::binary) << bytes;
  };
  const auto bad = temp_path("bad.ckpt");
  write(bad, "not a checkpoint at all");
  CHECK_THROWS_AS(read_checkpoint(bad), DecodeError);
  write(bad, blob.substr(0, blob.size() - 10));
  CHECK_THROWS_AS(read_checkpoint(bad), DecodeError);
  write(bad, blob.substr(0, 20));
  CHECK_THROWS_AS(read_checkpoint(bad), DecodeError);
  std::string garbled = blob;
  garbled[17] = '\x01';
  write(bad, garbled);
  CHECK_THROWS_AS(read_checkpoint(bad), DecodeError);
  CHECK_THROWS_AS(read_checkpoint(temp_path("missing.ckpt")), LoadError);
}
