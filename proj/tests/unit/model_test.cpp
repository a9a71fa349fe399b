#include "wcell/checkpoint.hpp"
#include "wcell/model.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace wcell;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config(Index k = 4, Index frames = 3, Index hw = 16) {
  ModelConfig cfg;
  cfg.k = k;
  cfg.frames = frames;
  cfg.input_h = hw;
  cfg.input_w = hw;
  return cfg;
}

TensorF frames(Index m, Index hw, std::mt19937_64& rng) { return TensorF::uniform({m, 1, hw, hw}, rng, -1.f, 1.f); }

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "wcell_model_test";
  fs::create_directories(dir);
  return dir / name;
}

// Hand audit of the k = 4, IF = 3 network, block by block.
Index hand_count_k4_if3() {
  auto conv_block = [](Index ci, Index co) { return 9 * ci * co + co + 9 * co * co + co + 4 * co; };
  const Index encoders = 2 * (conv_block(1, 4) + conv_block(4, 8) + conv_block(8, 16) + conv_block(16, 32));
  // Decoder block: 2x2 transposed conv (ci -> co) + 3x3 conv (co -> co), each with bias.
  auto up_block = [](Index ci, Index co) { return 4 * ci * co + co + 9 * co * co + co; };
  const Index decoder = up_block(64, 32)          // [E1 b4 | rev E2 b4]
                        + up_block(16 + 32 + 16, 32)  // [E1 b3 | state | rev E2 b3]
                        + up_block(8 + 32 + 8, 16)
                        + up_block(4 + 16 + 4, 8);
  const Index head = 9 * 8 * 3 + 3;
  return encoders + decoder + head;
}

}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig cfg = small_config();
  EXPECT_NO_THROW(cfg.validate());
  cfg.input_h = 24;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = small_config(4, 8);
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = small_config(0);
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Forward, OutputShapes) {
  std::mt19937_64 rng(1);
  {
    const WCellNet<float> net(small_config(4, 3, 128), 1);
    Graph<float> g;
    Var<float> y = net.forward(g, g.constant(frames(2, 128, rng)), g.constant(frames(2, 128, rng)), Mode::kEval);
    EXPECT_EQ(y.shape(), (Shape{2, 3, 128, 128}));
  }
  {
    const WCellNet<float> net(small_config(4, 7, 64), 1);
    Graph<float> g;
    Var<float> y = net.forward(g, g.constant(frames(1, 64, rng)), g.constant(frames(1, 64, rng)), Mode::kEval);
    EXPECT_EQ(y.shape(), (Shape{1, 7, 64, 64}));
    for (Index i = 0; i < y.value().size(); ++i) ASSERT_LT(std::abs(y.value()[i]), 1.f);
  }
}

TEST(Forward, RejectsBadShapes) {
  const WCellNet<float> net(small_config(), 1);
  Graph<float> g;
  EXPECT_THROW(net.forward(g, g.constant(TensorF({1, 1, 16, 16})), g.constant(TensorF({1, 1, 32, 32})), Mode::kEval),
               ShapeError);
  EXPECT_THROW(net.forward(g, g.constant(TensorF({1, 1, 24, 24})), g.constant(TensorF({1, 1, 24, 24})), Mode::kEval),
               ShapeError);
}

TEST(Forward, EncoderLookupsShapesAndSharedParameters) {
  std::mt19937_64 rng(2);
  WCellNet<float> net(small_config(4, 3, 32), 3);
  // Copy encoder-1 parameters into encoder 2.
  net.params().for_each([&](Parameter<float>& p) {
    if (p.name.rfind("enc2.", 0) == 0) p.value = net.params().at("enc1." + p.name.substr(5)).value;
  });
  const TensorF x = frames(2, 32, rng);
  Graph<float> g;
  ForwardTrace<float> trace;
  net.forward(g, g.constant(x), g.constant(x), Mode::kEval, &trace);
  ASSERT_EQ(trace.lookup_first.size(), 4u);
  for (std::size_t b = 0; b < 4; ++b) {
    const Index side = 32 >> (b + 1);
    EXPECT_EQ(trace.lookup_first[b].shape(), (Shape{2, Index{4} << b, side, side}));
    EXPECT_EQ(trace.lookup_first[b].value(), trace.lookup_last[b].value());
  }
}

TEST(Forward, SwappingEncodersReversesBottleneckConcatenation) {
  std::mt19937_64 rng(3);
  const WCellNet<float> net(small_config(4, 3, 32), 4);
  WCellNet<float> swapped(small_config(4, 3, 32), 4);
  swapped.params().for_each([&](Parameter<float>& p) {
    if (p.name.rfind("enc1.", 0) == 0) p.value = net.params().at("enc2." + p.name.substr(5)).value;
    if (p.name.rfind("enc2.", 0) == 0) p.value = net.params().at("enc1." + p.name.substr(5)).value;
  });
  const TensorF xf = frames(1, 32, rng), xl = frames(1, 32, rng);
  Graph<float> g;
  ForwardTrace<float> a, b;
  net.forward(g, g.constant(xf), g.constant(xl), Mode::kEval, &a);
  swapped.forward(g, g.constant(xl), g.constant(xf), Mode::kEval, &b);
  EXPECT_EQ(b.decoder_inputs[0].value(), reverse_channels(a.decoder_inputs[0]).value());
}

TEST(Forward, BatchEquivarianceInEvalMode) {
  std::mt19937_64 rng(5);
  const WCellNet<float> net(small_config(4, 3, 16), 5);
  const TensorF xf = frames(3, 16, rng), xl = frames(3, 16, rng);
  const Index plane = 16 * 16;
  auto permute = [&](const TensorF& t, Index per) {
    TensorF out(t.shape());
    const std::vector<Index> order = {2, 0, 1};
    for (Index i = 0; i < 3; ++i) {
      std::copy_n(t.data() + order[static_cast<std::size_t>(i)] * per, per, out.data() + i * per);
    }
    return out;
  };
  Graph<float> g;
  const TensorF y = net.forward(g, g.constant(xf), g.constant(xl), Mode::kEval).value();
  const TensorF yp =
      net.forward(g, g.constant(permute(xf, plane)), g.constant(permute(xl, plane)), Mode::kEval).value();
  EXPECT_EQ(yp, permute(y, 3 * plane));
}

TEST(CountParameters, ReportedCountNeighbourhoodAndHandAudit) {
  const Index reported = 1232698;
  const Index count = count_parameters(small_config(16, 3, 64));
  EXPECT_LE(std::abs(static_cast<double>(count - reported)) / reported, 0.05);
  EXPECT_EQ(count_parameters(small_config(4, 3)), hand_count_k4_if3());
  EXPECT_EQ(WCellNet<float>(small_config(4, 3), 0).count_parameters(), hand_count_k4_if3());
  EXPECT_EQ(WCellNet<float>(small_config(16, 3, 64), 0).count_parameters(), count);
}

TEST(CountParameters, AffineInIfWithHeadSlope) {
  for (Index k : {4, 16, 32}) {
    const Index slope = 9 * small_config(k).decoder_width(4) + 1;
    for (Index f = 1; f < 7; ++f) {
      EXPECT_EQ(count_parameters(small_config(k, f + 1)) - count_parameters(small_config(k, f)), slope);
    }
  }
}

TEST(Checkpoint, SaveLoadSaveIsByteIdenticalAndForwardMatches) {
  std::mt19937_64 rng(6);
  WCellNet<float> net(small_config(4, 3, 16), 7);
  // Populate BN running statistics with a train-mode pass.
  {
    Graph<float> g;
    net.forward(g, g.constant(frames(2, 16, rng)), g.constant(frames(2, 16, rng)), Mode::kTrain);
  }
  AdamState<float> adam;
  adam.step = 3;
  net.params().for_each([&](const Parameter<float>& p) {
    if (p.trainable) {
      adam.first[p.name] = TensorF(p.value.shape(), 0.25f);
      adam.second[p.name] = TensorF(p.value.shape(), 0.5f);
    }
  });
  const fs::path a = temp_path("a.wcnc"), b = temp_path("b.wcnc");
  save_checkpoint(net, a, &adam);
  AdamState<float> adam2;
  const WCellNet<float> loaded = load_checkpoint(a, &adam2);
  save_checkpoint(loaded, b, &adam2);
  EXPECT_EQ(read_file_bytes(a), read_file_bytes(b));
  EXPECT_EQ(adam2.step, 3);
  EXPECT_EQ(adam2.first.size(), adam.first.size());

  const TensorF xf = frames(1, 16, rng), xl = frames(1, 16, rng);
  Graph<float> g;
  EXPECT_EQ(net.forward(g, g.constant(xf), g.constant(xl), Mode::kEval).value(),
            loaded.forward(g, g.constant(xf), g.constant(xl), Mode::kEval).value());
}

TEST(Checkpoint, FormatErrors) {
  const WCellNet<float> net(small_config(), 1);
  std::vector<std::uint8_t> bytes = encode_record_file(make_checkpoint(net));
  {
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_record_file(bad), FormatError);
  }
  {
    auto bad = bytes;
    bad[4] = 9;  // version
    EXPECT_THROW(decode_record_file(bad), FormatError);
  }
  {
    auto bad = bytes;
    bad.resize(bad.size() - 3);
    EXPECT_THROW(decode_record_file(bad), FormatError);
  }
  {
    RecordFile file = make_checkpoint(net);
    file.records.push_back({"mystery.weight", TensorF({1})});
    EXPECT_THROW(restore_checkpoint(file), FormatError);
  }
  {
    RecordFile file = make_checkpoint(net);
    file.records.pop_back();
    EXPECT_THROW(restore_checkpoint(file), FormatError);
  }
  {
    RecordFile file = make_checkpoint(net);
    file.records.front().tensor = TensorF({2, 2});
    EXPECT_THROW(restore_checkpoint(file), FormatError);
  }
  EXPECT_THROW(load_checkpoint(temp_path("does_not_exist.wcnc")), std::runtime_error);
}

TEST(Checkpoint, ConfigFlagsRoundTrip) {
  ModelConfig cfg = small_config(2, 5, 32);
  cfg.upsample = UpsampleMode::kNearest;
  cfg.head_kernel = 1;
  const WCellNet<float> net(cfg, 9);
  const WCellNet<float> back = restore_checkpoint(decode_record_file(encode_record_file(make_checkpoint(net))));
  EXPECT_EQ(back.config(), cfg);
}
