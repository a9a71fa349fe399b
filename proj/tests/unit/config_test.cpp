#include "wcell/config.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace wcell;

TEST(RunConfig, ParsesFileWithCommentsAndOverrides) {
  std::istringstream in(
      "# model\n"
      "k = 8\n"
      "if=5\n"
      "\n"
      "recon = dssim\n"
      "lambda1 = 0.0001\n"
      "extractor = random_conv\n"
      "lr = 0.0005\n"
      "augment = false\n"
      "sampling = replacement\n"
      "k = 16\n");
  RunConfig cfg;
  parse_run_config(in, cfg);
  EXPECT_EQ(cfg.model.k, 16);
  EXPECT_EQ(cfg.model.frames, 5);
  EXPECT_EQ(cfg.loss.reconstruction, Reconstruction::kDssim);
  EXPECT_DOUBLE_EQ(cfg.loss.lambda_perceptual, 1e-4);
  EXPECT_EQ(cfg.loss.extractor, ExtractorKind::kRandomConv);
  EXPECT_DOUBLE_EQ(cfg.train.adam.lr, 5e-4);
  EXPECT_FALSE(cfg.train.augment);
  EXPECT_TRUE(cfg.train.with_replacement);
  EXPECT_TRUE(cfg.assigned.count("if"));
  EXPECT_FALSE(cfg.assigned.count("height"));
  EXPECT_NO_THROW(cfg.validate());
  // Flags applied afterwards win.
  cfg.set("k", "4");
  EXPECT_EQ(cfg.model.k, 4);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValuesWithLineNumbers) {
  RunConfig cfg;
  std::istringstream unknown("k = 4\nlearning_rate = 0.1\n");
  try {
    parse_run_config(unknown, cfg);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos) << e.what();
  }
  EXPECT_THROW(cfg.set("k", "four"), std::invalid_argument);
  EXPECT_THROW(cfg.set("recon", "l3"), std::invalid_argument);
  EXPECT_THROW(cfg.set("augment", "maybe"), std::invalid_argument);
  std::istringstream no_equals("k 4\n");
  EXPECT_THROW(parse_run_config(no_equals, cfg), std::invalid_argument);
}

TEST(RunConfig, ValidationCatchesInconsistentSettings) {
  RunConfig cfg;
  cfg.set("lambda1", "0.1");
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.set("extractor", "random_conv");
  EXPECT_NO_THROW(cfg.validate());
  cfg.set("batch", "0");
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.set("batch", "4");
  cfg.set("height", "40");
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(RunConfig, EveryRegisteredKeyIsSettable) {
  const std::vector<std::pair<std::string, std::string>> samples = {
      {"k", "4"}, {"if", "3"}, {"blocks", "4"}, {"height", "64"}, {"width", "64"}, {"upsample_mode", "nearest"},
      {"head_kernel", "1"}, {"recon", "l1"}, {"lambda1", "0"}, {"lambda2", "1e-5"}, {"extractor", "none"},
      {"extractor_seed", "3"}, {"extractor_width", "8"}, {"vgg_weights", "w.wcnc"}, {"ssim_convention", "standard"},
      {"decay_all", "1"}, {"iterations", "10"}, {"batch", "2"}, {"lr", "0.01"}, {"beta1", "0.8"},
      {"beta2", "0.99"}, {"eps", "1e-7"}, {"seed", "9"}, {"checkpoint_interval", "5"}, {"eval_interval", "5"},
      {"augment", "on"}, {"sampling", "epoch"}, {"data", "d"}, {"split_seed", "2"}, {"out_dir", "o"},
      {"workers", "2"}};
  ASSERT_EQ(samples.size(), RunConfig::keys().size());
  RunConfig cfg;
  for (const auto& [k, v] : samples) EXPECT_NO_THROW(cfg.set(k, v)) << k;
  EXPECT_EQ(cfg.assigned.size(), samples.size());
  EXPECT_EQ(cfg.model.upsample, UpsampleMode::kNearest);
  EXPECT_EQ(cfg.loss.ssim_convention, SsimConvention::kStandard);
  EXPECT_EQ(cfg.train.seed, 9u);
  EXPECT_EQ(cfg.workers, 2);
  EXPECT_NO_THROW(cfg.validate());
}
