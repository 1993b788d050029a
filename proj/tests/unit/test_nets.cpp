#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "octforce/nets.hpp"
#include "support/oracles.hpp"

using namespace octforce;
using ad::Tape;
using ad::TapeScope;
using ad::Tensor;
using nets::ArchId;
using nets::LayerSpec;

namespace {

Tensor<double> rand_tensor(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                           bool wants_grad = false) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(shape), std::move(v), wants_grad);
}

nets::GruCellParams<double> zero_gru(int in, int hidden) {
  nets::GruCellParams<double> p;
  p.wz = Tensor<double>::zeros({hidden, in});
  p.uz = Tensor<double>::zeros({hidden, hidden});
  p.bz = Tensor<double>::zeros({hidden});
  p.wr = Tensor<double>::zeros({hidden, in});
  p.ur = Tensor<double>::zeros({hidden, hidden});
  p.br = Tensor<double>::zeros({hidden});
  p.wh = Tensor<double>::zeros({hidden, in});
  p.uh = Tensor<double>::zeros({hidden, hidden});
  p.bh = Tensor<double>::zeros({hidden});
  return p;
}

nets::GruCellParams<double> rand_gru(int in, int hidden, Rng& rng, bool wants_grad = false) {
  nets::GruCellParams<double> p;
  p.wz = rand_tensor({hidden, in}, rng, -1, 1, wants_grad);
  p.uz = rand_tensor({hidden, hidden}, rng, -1, 1, wants_grad);
  p.bz = rand_tensor({hidden}, rng, -1, 1, wants_grad);
  p.wr = rand_tensor({hidden, in}, rng, -1, 1, wants_grad);
  p.ur = rand_tensor({hidden, hidden}, rng, -1, 1, wants_grad);
  p.br = rand_tensor({hidden}, rng, -1, 1, wants_grad);
  p.wh = rand_tensor({hidden, in}, rng, -1, 1, wants_grad);
  p.uh = rand_tensor({hidden, hidden}, rng, -1, 1, wants_grad);
  p.bh = rand_tensor({hidden}, rng, -1, 1, wants_grad);
  return p;
}

nets::ConvGruCellParams<double> rand_convgru(int ch_in, int ch_h, int k, Rng& rng,
                                             bool wants_grad = false) {
  nets::ConvGruCellParams<double> p;
  p.kernel = k;
  p.wz = rand_tensor({ch_h, ch_in, k}, rng, -1, 1, wants_grad);
  p.uz = rand_tensor({ch_h, ch_h, k}, rng, -1, 1, wants_grad);
  p.bz = rand_tensor({ch_h}, rng, -1, 1, wants_grad);
  p.wr = rand_tensor({ch_h, ch_in, k}, rng, -1, 1, wants_grad);
  p.ur = rand_tensor({ch_h, ch_h, k}, rng, -1, 1, wants_grad);
  p.br = rand_tensor({ch_h}, rng, -1, 1, wants_grad);
  p.wh = rand_tensor({ch_h, ch_in, k}, rng, -1, 1, wants_grad);
  p.uh = rand_tensor({ch_h, ch_h, k}, rng, -1, 1, wants_grad);
  p.bh = rand_tensor({ch_h}, rng, -1, 1, wants_grad);
  return p;
}

}  // namespace

TEST_CASE("zero-parameter GRU cell halves the hidden state", "[nets]") {
  Rng rng(1);
  auto x = rand_tensor({2, 4}, rng);
  auto h = rand_tensor({2, 3}, rng);
  auto h_next = nets::gru_cell(x, h, zero_gru(4, 3));
  for (std::size_t i = 0; i < h.size(); ++i)
    CHECK(h_next.values()[i] == Catch::Approx(0.5 * h.values()[i]));
}

TEST_CASE("GRU output stays bounded when the previous state is bounded", "[nets]") {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    auto p = rand_gru(5, 4, rng);
    auto x = rand_tensor({3, 5}, rng, -10, 10);
    auto h = rand_tensor({3, 4}, rng, -1, 1);
    auto h_next = nets::gru_cell(x, h, p);
    for (double v : h_next.values()) CHECK(std::abs(v) <= 1.0 + 1e-12);
  }
}

TEST_CASE("GRU cell matches the scalar reference on random 2x3 inputs", "[nets]") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int B = 2, I = 3, H = 4;
    auto p = rand_gru(I, H, rng);
    auto x = rand_tensor({B, I}, rng);
    auto h = rand_tensor({B, H}, rng);
    auto got = nets::gru_cell(x, h, p);
    auto want = oracles::gru_cell_scalar(x.values(), B, I, h.values(), H, p.wz.values(),
                                         p.uz.values(), p.bz.values(), p.wr.values(),
                                         p.ur.values(), p.br.values(), p.wh.values(),
                                         p.uh.values(), p.bh.values());
    for (std::size_t i = 0; i < want.size(); ++i)
      CHECK(std::abs(got.values()[i] - want[i]) < 1e-12);
  }
}

TEST_CASE("kernel-1 convGRU equals a per-pixel GRU", "[nets]") {
  Rng rng(4);
  const int B = 2, Ci = 3, Ch = 4, L = 6;
  auto p = rand_convgru(Ci, Ch, 1, rng);
  auto x = rand_tensor({B, Ci, L}, rng);
  auto h = rand_tensor({B, Ch, L}, rng);
  auto got = nets::convgru_cell(x, h, p);

  // pixelwise route: the same weights drive an ordinary GRU at each depth
  nets::GruCellParams<double> g;
  auto squeeze = [](const Tensor<double>& w) {
    return Tensor<double>::from({w.dim(0), w.dim(1)}, w.values());
  };
  g.wz = squeeze(p.wz);
  g.uz = squeeze(p.uz);
  g.bz = p.bz;
  g.wr = squeeze(p.wr);
  g.ur = squeeze(p.ur);
  g.br = p.br;
  g.wh = squeeze(p.wh);
  g.uh = squeeze(p.uh);
  g.bh = p.bh;
  for (int pix = 0; pix < L; ++pix) {
    std::vector<double> xv(static_cast<std::size_t>(B) * Ci), hv(static_cast<std::size_t>(B) * Ch);
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < Ci; ++c)
        xv[static_cast<std::size_t>(b) * Ci + c] =
            x.values()[(static_cast<std::size_t>(b) * Ci + c) * L + pix];
      for (int c = 0; c < Ch; ++c)
        hv[static_cast<std::size_t>(b) * Ch + c] =
            h.values()[(static_cast<std::size_t>(b) * Ch + c) * L + pix];
    }
    auto want = nets::gru_cell(Tensor<double>::from({B, Ci}, xv),
                               Tensor<double>::from({B, Ch}, hv), g);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < Ch; ++c)
        CHECK(std::abs(got.values()[(static_cast<std::size_t>(b) * Ch + c) * L + pix] -
                       want.values()[static_cast<std::size_t>(b) * Ch + c]) < 1e-12);
  }
}

TEST_CASE("zero-parameter convGRU halves the hidden state and keeps length", "[nets]") {
  Rng rng(5);
  nets::ConvGruCellParams<double> p;
  p.kernel = 3;
  p.wz = Tensor<double>::zeros({2, 1, 3});
  p.uz = Tensor<double>::zeros({2, 2, 3});
  p.bz = Tensor<double>::zeros({2});
  p.wr = Tensor<double>::zeros({2, 1, 3});
  p.ur = Tensor<double>::zeros({2, 2, 3});
  p.br = Tensor<double>::zeros({2});
  p.wh = Tensor<double>::zeros({2, 1, 3});
  p.uh = Tensor<double>::zeros({2, 2, 3});
  p.bh = Tensor<double>::zeros({2});
  for (int len : {1, 5, 17}) {
    auto x = rand_tensor({2, 1, len}, rng);
    auto h = rand_tensor({2, 2, len}, rng);
    auto h_next = nets::convgru_cell(x, h, p);
    REQUIRE(h_next.shape() == ad::Shape{2, 2, len});
    for (std::size_t i = 0; i < h.size(); ++i)
      CHECK(h_next.values()[i] == Catch::Approx(0.5 * h.values()[i]));
  }
}

TEST_CASE("stride-1 ResBlock with a zeroed residual branch is relu(x)", "[nets]") {
  Rng rng(6);
  nets::ResBlock1dParams<double> p;
  p.stride = 1;
  p.w1 = Tensor<double>::zeros({3, 3, 3});
  p.b1 = Tensor<double>::zeros({3});
  p.w2 = Tensor<double>::zeros({3, 3, 3});
  p.b2 = Tensor<double>::zeros({3});
  auto x = rand_tensor({2, 3, 8}, rng, -1, 1);
  auto y = nets::resblock_1d(x, p);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(y.values()[i] == std::max(0.0, x.values()[i]));
}

TEST_CASE("stride-2 ResBlocks halve space (ceil) and set channels", "[nets]") {
  Rng rng(7);
  nets::Model<double> m;  // only used as a parameter registry
  m.spec = LayerSpec::tiny();
  auto blk = nets::detail::make_resblock_1d(m, "t", 3, 5, 3, 2, rng);
  auto x = rand_tensor({2, 3, 9}, rng);
  auto y = nets::resblock_1d(x, blk);
  CHECK(y.shape() == ad::Shape{2, 5, 5});

  auto blk2 = nets::detail::make_resblock_2d(m, "t2", 2, 4, 3, 2, rng);
  auto xi = rand_tensor({1, 2, 9, 11}, rng);
  auto yi = nets::resblock_2d(xi, blk2);
  CHECK(yi.shape() == ad::Shape{1, 4, 5, 6});
}

TEST_CASE("cells and blocks pass finite-difference checks", "[nets][gradcheck]") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed * 97);
    {  // gru cell
      auto p = rand_gru(3, 4, rng, true);
      auto x = rand_tensor({2, 3}, rng);
      auto h = rand_tensor({2, 4}, rng);
      auto target = rand_tensor({2, 4}, rng);
      std::vector<Tensor<double>*> params{&p.wz, &p.uz, &p.bz, &p.wr, &p.ur,
                                          &p.br, &p.wh, &p.uh, &p.bh};
      Tape<double> tape;
      {
        TapeScope<double> scope(tape);
        auto loss = ad::mse_loss(nets::gru_cell(x, h, p), target);
        for (auto* q : params) q->zero_grad();
        tape.backward(loss);
      }
      auto loss_fn = [&]() { return ad::mse_loss(nets::gru_cell(x, h, p), target).item(); };
      for (auto* q : params) CHECK(oracles::finite_diff_check(*q, loss_fn).max_rel_err <= 1e-4);
    }
    {  // convgru cell
      auto p = rand_convgru(2, 3, 3, rng, true);
      auto x = rand_tensor({2, 2, 5}, rng);
      auto h = rand_tensor({2, 3, 5}, rng);
      auto target = rand_tensor({2, 3, 5}, rng);
      std::vector<Tensor<double>*> params{&p.wz, &p.uz, &p.bz, &p.wr, &p.ur,
                                          &p.br, &p.wh, &p.uh, &p.bh};
      Tape<double> tape;
      {
        TapeScope<double> scope(tape);
        auto loss = ad::mse_loss(nets::convgru_cell(x, h, p), target);
        for (auto* q : params) q->zero_grad();
        tape.backward(loss);
      }
      auto loss_fn = [&]() { return ad::mse_loss(nets::convgru_cell(x, h, p), target).item(); };
      for (auto* q : params) CHECK(oracles::finite_diff_check(*q, loss_fn).max_rel_err <= 1e-4);
    }
    {  // residual blocks, both variants
      nets::Model<double> m;
      auto blk = nets::detail::make_resblock_1d(m, "b", 2, 3, 3, 2, rng);
      auto x = rand_tensor({2, 2, 6}, rng);
      auto target = rand_tensor({2, 3, 3}, rng);
      std::vector<Tensor<double>*> params{&blk.w1, &blk.b1, &blk.w2, &blk.b2, &blk.proj};
      Tape<double> tape;
      {
        TapeScope<double> scope(tape);
        auto loss = ad::mse_loss(nets::resblock_1d(x, blk), target);
        for (auto* q : params) q->zero_grad();
        tape.backward(loss);
      }
      auto loss_fn = [&]() { return ad::mse_loss(nets::resblock_1d(x, blk), target).item(); };
      for (auto* q : params) CHECK(oracles::finite_diff_check(*q, loss_fn).max_rel_err <= 1e-4);

      auto blk2 = nets::detail::make_resblock_2d(m, "b2", 1, 2, 3, 2, rng);
      auto xi = rand_tensor({1, 1, 5, 6}, rng);
      auto ti = rand_tensor({1, 2, 3, 3}, rng);
      std::vector<Tensor<double>*> params2{&blk2.w1, &blk2.b1, &blk2.w2, &blk2.b2, &blk2.proj};
      Tape<double> tape2;
      {
        TapeScope<double> scope(tape2);
        auto loss = ad::mse_loss(nets::resblock_2d(xi, blk2), ti);
        for (auto* q : params2) q->zero_grad();
        tape2.backward(loss);
      }
      auto loss_fn2 = [&]() { return ad::mse_loss(nets::resblock_2d(xi, blk2), ti).item(); };
      for (auto* q : params2) CHECK(oracles::finite_diff_check(*q, loss_fn2).max_rel_err <= 1e-4);
    }
  }
}

TEST_CASE("every architecture maps [2, 50, 70] to [2, 1]", "[nets]") {
  Rng rng(8);
  auto input = rand_tensor({2, 50, 70}, rng);
  for (ArchId arch : nets::all_archs()) {
    auto model = nets::build<double>(arch, LayerSpec::desk_default(), 50, 70, 11);
    auto out = model.forward(input);
    INFO(nets::arch_name(arch));
    CHECK(out.shape() == ad::Shape{2, 1});
    auto again = model.forward(input);
    CHECK(std::memcmp(out.data(), again.data(), sizeof(double) * out.size()) == 0);
  }
}

TEST_CASE("the single-frame CNN ignores everything before the last scan", "[nets]") {
  Rng rng(9);
  auto model = nets::build<double>(ArchId::cnn1d, LayerSpec::tiny(), 6, 8, 12);
  auto input = rand_tensor({2, 6, 8}, rng);
  auto base = model.forward(input);

  auto permuted = Tensor<double>::from(input.shape(), input.values());
  // rotate the first t_s-1 scans of every window
  for (int b = 0; b < 2; ++b) {
    std::vector<double> first(permuted.data() + static_cast<std::size_t>(b) * 6 * 8,
                              permuted.data() + static_cast<std::size_t>(b) * 6 * 8 + 8);
    for (int t = 0; t < 4; ++t)
      std::copy(permuted.data() + (static_cast<std::size_t>(b) * 6 + t + 1) * 8,
                permuted.data() + (static_cast<std::size_t>(b) * 6 + t + 2) * 8,
                permuted.data() + (static_cast<std::size_t>(b) * 6 + t) * 8);
    std::copy(first.begin(), first.end(),
              permuted.data() + (static_cast<std::size_t>(b) * 6 + 4) * 8);
  }
  auto shuffled = model.forward(permuted);
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(base.values()[i] == shuffled.values()[i]);
}

TEST_CASE("the convGRU-CNN is sensitive to temporal order", "[nets]") {
  Rng rng(10);
  int differing = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto model =
        nets::build<double>(ArchId::conv_gru_cnn, LayerSpec::tiny(), 6, 8, 100 + trial);
    auto input = rand_tensor({1, 6, 8}, rng);
    auto base = model.forward(input);

    auto permuted = Tensor<double>::from(input.shape(), input.values());
    for (int j = 0; j < 8; ++j)  // swap scans 0 and 3, both before the last scan
      std::swap(permuted.data()[j], permuted.data()[3 * 8 + j]);
    auto swapped = model.forward(permuted);
    if (std::abs(base.values()[0] - swapped.values()[0]) > 1e-9) ++differing;
  }
  CHECK(differing >= 19);
}

TEST_CASE("2D trunk parameter count equals the 1D formula with k replaced by k*k", "[nets]") {
  const auto spec = LayerSpec::desk_default();
  auto m1 = nets::build<double>(ArchId::cnn1d, spec, 50, 70, 1);
  auto m2 = nets::build<double>(ArchId::cnn2d, spec, 50, 70, 1);

  // per block: w1 = F_out*F_in*K, b1 = F_out, w2 = F_out^2*K, b2 = F_out,
  // plus a F_out*F_in projection when stride != 1 or F_in != F_out;
  // K = kernel for the 1D trunk, kernel^2 for the 2D trunk.
  auto formula = [&](int K) {
    std::size_t total = 0;
    int in = 1;
    for (const auto& g : spec.groups)
      for (int b = 0; b < g.blocks; ++b) {
        const int out = g.features;
        const int stride = b == 0 ? 2 : 1;
        total += static_cast<std::size_t>(out) * in * K + out;
        total += static_cast<std::size_t>(out) * out * K + out;
        if (stride != 1 || in != out) total += static_cast<std::size_t>(out) * in;
        in = out;
      }
    return total;
  };

  auto counted = [](const nets::Model<double>& m, const char* prefix) {
    std::size_t total = 0;
    for (const auto& [name, t] : m.params.items)
      if (name.rfind(prefix, 0) == 0) total += t.size();
    return total;
  };

  CHECK(counted(m1, "trunk1d") == formula(spec.kernel));
  CHECK(counted(m2, "trunk2d") == formula(spec.kernel * spec.kernel));
}

TEST_CASE("invalid layer specs are rejected with the violated constraint", "[nets]") {
  LayerSpec even = LayerSpec::tiny();
  even.kernel = 4;
  CHECK_THROWS_WITH(nets::build<double>(ArchId::cnn1d, even, 4, 8, 1),
                    Catch::Matchers::ContainsSubstring("kernel must be odd"));
  LayerSpec shrinking = LayerSpec::tiny();
  shrinking.groups = {{1, 8}, {1, 4}};
  CHECK_THROWS_WITH(nets::build<double>(ArchId::cnn1d, shrinking, 4, 8, 1),
                    Catch::Matchers::ContainsSubstring("non-decreasing"));
  auto model = nets::build<double>(ArchId::gru, LayerSpec::tiny(), 4, 8, 1);
  auto bad_input = Tensor<double>::zeros({2, 5, 8});
  CHECK_THROWS_AS(model.forward(bad_input), ShapeError);
}

TEST_CASE("checkpoints round-trip bit-exactly", "[nets]") {
  namespace fs = std::filesystem;
  const auto path = (fs::temp_directory_path() / "octforce_ckpt.bin").string();
  auto model = nets::build<float>(ArchId::conv_gru_cnn, LayerSpec::tiny(), 4, 8, 77);
  model.norm.pixel_mean.assign(8, 0.25);
  model.norm.pixel_std.assign(8, 2.0);
  model.norm.label_scale = 379.0;
  nets::save_checkpoint(model, path);

  auto loaded = nets::load_checkpoint<float>(path);
  CHECK(loaded.arch == model.arch);
  CHECK(loaded.t_s == model.t_s);
  CHECK(loaded.d_c == model.d_c);
  CHECK(loaded.norm.label_scale == 379.0);
  CHECK(loaded.norm.pixel_mean == model.norm.pixel_mean);
  REQUIRE(loaded.params.items.size() == model.params.items.size());
  for (std::size_t i = 0; i < model.params.items.size(); ++i) {
    CHECK(loaded.params.items[i].first == model.params.items[i].first);
    CHECK(loaded.params.items[i].second.values() == model.params.items[i].second.values());
  }

  // saving the loaded model reproduces the identical byte stream
  const auto path2 = (fs::temp_directory_path() / "octforce_ckpt2.bin").string();
  nets::save_checkpoint(loaded, path2);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  };
  CHECK(slurp(path) == slurp(path2));

  {  // a mutated magic is rejected
    auto bytes = slurp(path);
    bytes[0] = 'Z';
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(nets::load_checkpoint<float>(path), BadMagicError);
  }
  fs::remove(path);
  fs::remove(path2);
}
