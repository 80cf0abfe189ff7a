#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>

#include "wsseg/nn/checkpoint.hpp"
#include "wsseg/nn/layers.hpp"
#include "wsseg/nn/optim.hpp"

using namespace wsseg;
using namespace wsseg::nn;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.normal(0.0, scale));
  return t;
}

// Scalar probe L(out) = sum(out * probe); dL/dout = probe. Checks every
// input's autograd gradient against central finite differences.
void check_gradients(const std::function<Var(const std::vector<Var>&)>& fn,
                     std::vector<Tensor> inputs, Rng& rng, float h = 1e-2f,
                     float tol = 2e-2f) {
  std::vector<Var> vars;
  for (auto& t : inputs) vars.push_back(parameter(t));
  Var out = fn(vars);
  Tensor probe = random_tensor(out->value.shape(), rng, 1.0);
  backward(out, probe);

  auto loss_at = [&](size_t vi, int64_t idx, float delta) {
    std::vector<Var> shifted;
    for (size_t i = 0; i < inputs.size(); ++i) {
      Tensor t = vars[i]->value;
      if (i == vi) t[idx] += delta;
      shifted.push_back(constant(std::move(t)));
    }
    NoGradGuard ng;
    Var o = fn(shifted);
    double acc = 0.0;
    for (int64_t i = 0; i < o->value.numel(); ++i)
      acc += static_cast<double>(o->value[i]) * probe[i];
    return acc;
  };

  for (size_t vi = 0; vi < vars.size(); ++vi) {
    REQUIRE(vars[vi]->has_grad());
    const Tensor& g = vars[vi]->grad;
    // Probe a deterministic sample of coordinates.
    const int64_t n = g.numel();
    const int64_t step = std::max<int64_t>(1, n / 7);
    for (int64_t idx = 0; idx < n; idx += step) {
      const double fd = (loss_at(vi, idx, h) - loss_at(vi, idx, -h)) / (2.0 * h);
      const double an = g[idx];
      const double denom = std::max(1.0, std::max(std::abs(fd), std::abs(an)));
      INFO("input ", vi, " idx ", idx, " fd=", fd, " an=", an);
      CHECK(std::abs(fd - an) / denom < tol);
    }
  }
}

}  // namespace

TEST_CASE("conv2d forward matches a direct convolution") {
  Rng rng(1);
  Tensor x = random_tensor({1, 2, 5, 5}, rng);
  Tensor w = random_tensor({3, 2, 3, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  ConvSpec spec{.stride = 1, .pad = 1, .dilation = 1, .groups = 1};
  Var out = conv2d(constant(x), constant(w), constant(b), spec);
  REQUIRE(out->value.shape() == std::vector<int>{1, 3, 5, 5});
  for (int oc = 0; oc < 3; ++oc)
    for (int oy = 0; oy < 5; ++oy)
      for (int ox = 0; ox < 5; ++ox) {
        double acc = b[oc];
        for (int ic = 0; ic < 2; ++ic)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              int iy = oy - 1 + ky, ix = ox - 1 + kx;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
              acc += x.at(0, ic, iy, ix) * w.at(oc, ic, ky, kx);
            }
        CHECK(out->value.at(0, oc, oy, ox) == doctest::Approx(acc).epsilon(1e-4));
      }
}

TEST_CASE("conv2d output sizes follow the ceil rule for stride-2 k3 p1") {
  Rng rng(2);
  for (int size : {63, 64, 65}) {
    Tensor x = random_tensor({1, 1, size, size}, rng);
    Tensor w = random_tensor({1, 1, 3, 3}, rng);
    ConvSpec spec{.stride = 2, .pad = 1, .dilation = 1, .groups = 1};
    Var out = conv2d(constant(x), constant(w), nullptr, spec);
    CHECK(out->value.size(2) == (size + 1) / 2);
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(3);
  ConvSpec spec{.stride = 2, .pad = 1, .dilation = 1, .groups = 1};
  check_gradients(
      [&spec](const std::vector<Var>& v) {
        return conv2d(v[0], v[1], v[2], spec);
      },
      {random_tensor({2, 3, 6, 6}, rng), random_tensor({4, 3, 3, 3}, rng),
       random_tensor({4}, rng)},
      rng);
}

TEST_CASE("dilated grouped conv2d gradients match finite differences") {
  Rng rng(4);
  ConvSpec spec{.stride = 1, .pad = 2, .dilation = 2, .groups = 2};
  check_gradients(
      [&spec](const std::vector<Var>& v) {
        return conv2d(v[0], v[1], v[2], spec);
      },
      {random_tensor({1, 4, 7, 7}, rng), random_tensor({4, 2, 3, 3}, rng),
       random_tensor({4}, rng)},
      rng);
}

TEST_CASE("linear gradients match finite differences") {
  Rng rng(5);
  check_gradients(
      [](const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); },
      {random_tensor({3, 7}, rng), random_tensor({4, 7}, rng),
       random_tensor({4}, rng)},
      rng);
}

TEST_CASE("activation and pooling gradients match finite differences") {
  Rng rng(6);
  check_gradients([](const std::vector<Var>& v) { return sigmoid(v[0]); },
                  {random_tensor({2, 3, 4, 4}, rng)}, rng);
  check_gradients(
      [](const std::vector<Var>& v) { return global_avg_pool(v[0]); },
      {random_tensor({2, 3, 5, 5}, rng)}, rng);
  // ReLU and max-pool kinks: keep probe points away from zero/ties.
  Tensor x = random_tensor({1, 2, 6, 6}, rng);
  for (int64_t i = 0; i < x.numel(); ++i)
    if (std::abs(x[i]) < 0.2f) x[i] = x[i] < 0 ? x[i] - 0.3f : x[i] + 0.3f;
  check_gradients([](const std::vector<Var>& v) { return relu(v[0]); }, {x}, rng,
                  1e-2f);
  check_gradients(
      [](const std::vector<Var>& v) { return max_pool2d(v[0], 3, 2, 1); }, {x},
      rng, 1e-3f);
}

TEST_CASE("upsample, concat, add, scale_channels gradients") {
  Rng rng(7);
  check_gradients(
      [](const std::vector<Var>& v) { return upsample_bilinear(v[0], 7, 9); },
      {random_tensor({1, 2, 3, 4}, rng)}, rng);
  check_gradients(
      [](const std::vector<Var>& v) {
        return concat_channels({v[0], v[1]});
      },
      {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 3, 3, 3}, rng)}, rng);
  check_gradients(
      [](const std::vector<Var>& v) { return add(v[0], v[1]); },
      {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 2, 3, 3}, rng)}, rng);
  check_gradients(
      [](const std::vector<Var>& v) { return scale_channels(v[0], v[1]); },
      {random_tensor({2, 3, 4, 4}, rng), random_tensor({2, 3}, rng)}, rng);
}

TEST_CASE("batch_norm2d training-mode gradients match finite differences") {
  Rng rng(8);
  Tensor rm({3}), rv = Tensor::full({3}, 1.0f);
  check_gradients(
      [&rm, &rv](const std::vector<Var>& v) {
        Tensor m = rm, va = rv;  // keep running stats fixed across probes
        return batch_norm2d(v[0], v[1], v[2], m, va, true);
      },
      {random_tensor({2, 3, 4, 4}, rng), Tensor::full({3}, 1.2f),
       random_tensor({3}, rng)},
      rng, 1e-2f, 3e-2f);
}

TEST_CASE("batch_norm2d eval mode uses running statistics") {
  Rng rng(9);
  Tensor x = random_tensor({2, 2, 3, 3}, rng);
  Tensor rm = Tensor::full({2}, 0.5f);
  Tensor rv = Tensor::full({2}, 4.0f);
  Var out = batch_norm2d(constant(x), constant(Tensor::full({2}, 1.0f)),
                         constant(Tensor({2})), rm, rv, false);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(out->value[i] ==
          doctest::Approx((x[i] - 0.5f) / std::sqrt(4.0f + 1e-5f)).epsilon(1e-4));
}

TEST_CASE("backward accumulates through shared subgraphs") {
  // y = x + x: dy/dx = 2
  Tensor x = Tensor::full({2, 2}, 3.0f);
  Var xv = parameter(x);
  Var y = add(xv, xv);
  Tensor seed = Tensor::full({2, 2}, 1.0f);
  backward(y, seed);
  for (int64_t i = 0; i < 4; ++i) CHECK(xv->grad[i] == doctest::Approx(2.0f));
}

TEST_CASE("multi-root backward joins gradients") {
  Tensor x = Tensor::full({2}, 1.0f);
  Var xv = parameter(x);
  Var a = relu(xv);
  Var b = sigmoid(xv);
  Tensor sa = Tensor::full({2}, 1.0f), sb = Tensor::full({2}, 1.0f);
  backward({{a, sa}, {b, sb}});
  const float sig = 1.0f / (1.0f + std::exp(-1.0f));
  for (int64_t i = 0; i < 2; ++i)
    CHECK(xv->grad[i] == doctest::Approx(1.0f + sig * (1.0f - sig)).epsilon(1e-5));
}

TEST_CASE("no-grad mode builds no tape") {
  Var x = parameter(Tensor::full({2}, 1.0f));
  NoGradGuard ng;
  Var y = relu(x);
  CHECK(!y->requires_grad);
  CHECK(y->parents.empty());
}

TEST_CASE("optimizers reduce a quadratic") {
  for (const char* method : {"sgd-momentum", "adam", "radam"}) {
    OptimConfig cfg;
    cfg.method = method;
    cfg.lr = method[0] == 's' ? 0.05 : 0.1;
    cfg.weight_decay = 0.0;
    auto opt = make_optimizer(cfg);
    Var w = parameter(Tensor::full({4}, 5.0f));
    for (int it = 0; it < 200; ++it) {
      zero_grad({w});
      Tensor g({4});
      for (int64_t i = 0; i < 4; ++i) g[i] = 2.0f * w->value[i];
      accumulate(*w, g);
      opt->step({w});
    }
    for (int64_t i = 0; i < 4; ++i) {
      INFO("method ", method);
      CHECK(std::abs(w->value[i]) < 0.15f);
    }
  }
}

TEST_CASE("unknown optimizer id is a ConfigError") {
  OptimConfig cfg;
  cfg.method = "adamw";
  CHECK_THROWS_AS(make_optimizer(cfg), ConfigError);
}

TEST_CASE("checkpoint round-trips tensors and enforces fingerprints") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "wsseg_test_ckpt";
  fs::create_directories(dir);
  const std::string path = (dir / "model.ckpt").string();

  Rng rng(10);
  ParamMap pm;
  Var w = parameter(random_tensor({3, 4}, rng));
  Tensor buf = random_tensor({4}, rng);
  pm.add("layer.weight", w);
  pm.add_buffer("layer.stat", &buf);

  auto ckpt = snapshot("classifier", pm, 0xabcdef, 7, 0.93);
  save_checkpoint(path, ckpt);

  auto loaded = load_checkpoint(path, 0xabcdef);
  CHECK(loaded.stage == "classifier");
  CHECK(loaded.epoch == 7);
  CHECK(loaded.best_metric == doctest::Approx(0.93));

  ParamMap pm2;
  Var w2 = parameter(Tensor({3, 4}));
  Tensor buf2({4});
  pm2.add("layer.weight", w2);
  pm2.add_buffer("layer.stat", &buf2);
  restore(loaded, pm2);
  for (int64_t i = 0; i < w->value.numel(); ++i)
    CHECK(w2->value[i] == w->value[i]);
  for (int64_t i = 0; i < 4; ++i) CHECK(buf2[i] == buf[i]);

  CHECK_THROWS_AS(load_checkpoint(path, 0x1234), CheckpointError);
  CHECK(fs::exists(path + ".json"));
}
