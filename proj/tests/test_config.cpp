// data_model: config parsing, profiles, invariants, round trip.

#include <gtest/gtest.h>

#include "segattn/config.hpp"

using namespace segattn;

TEST(Config, PaperProfileDefaults) {
  TrainConfig cfg = validate_config(parse_key_value_text("profile = paper"));
  EXPECT_EQ(cfg.text_dim, 256);
  EXPECT_DOUBLE_EQ(cfg.lambda_damsm, 5.0);
  EXPECT_DOUBLE_EQ(cfg.learning_rate, 2e-4);
  EXPECT_DOUBLE_EQ(cfg.adam_beta1, 0.5);
  EXPECT_EQ(cfg.base_resolution, 64);
  std::vector<int> want = {64, 128, 256};
  EXPECT_EQ(cfg.stage_resolutions(), want);
}

TEST(Config, DeskProfileDefaults) {
  TrainConfig cfg = validate_config(parse_key_value_text("profile = desk"));
  EXPECT_EQ(cfg.stage_count, 3);
  EXPECT_EQ(cfg.text_dim, 32);
  std::vector<int> want = {16, 32, 64};
  EXPECT_EQ(cfg.stage_resolutions(), want);
  EXPECT_EQ(cfg.final_resolution(), 64);
  EXPECT_EQ(cfg.seg_attn_hidden(), 64);
}

TEST(Config, InvariantViolations) {
  EXPECT_THROW(validate_config(parse_key_value_text("profile = desk\nstage_count = 0")),
               CheckError);
  EXPECT_THROW(validate_config(parse_key_value_text("profile = desk\nlambda_damsm = -1")),
               CheckError);
  EXPECT_THROW(validate_config(parse_key_value_text("profile = desk\nseg_classes = 1")),
               CheckError);
  EXPECT_THROW(validate_config(parse_key_value_text("stage_count = 3")), CheckError);
  EXPECT_THROW(validate_config(parse_key_value_text("profile = desk\nnot_a_key = 1")),
               CheckError);
  EXPECT_THROW(
      validate_config(parse_key_value_text("profile = desk\nfinal_resolution = 48")),
      CheckError);
  EXPECT_NO_THROW(
      validate_config(parse_key_value_text("profile = desk\nfinal_resolution = 64")));
}

TEST(Config, ExplicitKeysBeatProfileDefaults) {
  TrainConfig cfg = validate_config(
      parse_key_value_text("profile = paper\ntext_dim = 128\nseed = 7"));
  EXPECT_EQ(cfg.text_dim, 128);
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_DOUBLE_EQ(cfg.lambda_damsm, 5.0);
}

TEST(Config, SerializeRoundTripIsIdentical) {
  TrainConfig cfg = validate_config(parse_key_value_text(
      "profile = desk\nlearning_rate = 0.00037\nmode = self_attention\n"
      "seed = 12345\nmax_iterations = 77"));
  TrainConfig again = validate_config(parse_key_value_text(serialize_config(cfg)));
  EXPECT_EQ(serialize_config(cfg), serialize_config(again));
  EXPECT_EQ(cfg.full_hash(), again.full_hash());
  EXPECT_EQ(again.mode, MaskMode::kSelfAttention);
  EXPECT_DOUBLE_EQ(again.learning_rate, 0.00037);
}

TEST(Config, ParserHandlesCommentsAndErrors) {
  KeyValues kv = parse_key_value_text(
      "# leading comment\nprofile = desk  # trailing\n\n  seed = 9\n");
  EXPECT_EQ(kv.at("profile"), "desk");
  EXPECT_EQ(kv.at("seed"), "9");
  EXPECT_THROW(parse_key_value_text("profile desk"), CheckError);
  EXPECT_THROW(parse_key_value_text("a = 1\na = 2"), CheckError);
  EXPECT_THROW(validate_config(parse_key_value_text("profile = desk\nbatch_size = x")),
               CheckError);
}

TEST(Config, DataHashIgnoresTrainingKnobs) {
  TrainConfig a = validate_config(parse_key_value_text("profile = desk"));
  TrainConfig b = validate_config(
      parse_key_value_text("profile = desk\nseed = 777\nmode = self_attention\n"
                           "learning_rate = 0.001"));
  EXPECT_EQ(a.data_hash(), b.data_hash());
  TrainConfig c = validate_config(
      parse_key_value_text("profile = desk\nbase_resolution = 32"));
  EXPECT_NE(a.data_hash(), c.data_hash());
  EXPECT_NE(a.full_hash(), b.full_hash());
}
