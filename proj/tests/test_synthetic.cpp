#include <gtest/gtest.h>

#include "docwin/experiment.hpp"
#include "docwin/synthetic.hpp"

using namespace docwin;

TEST(Synthetic, CopyAndReversal) {
  SyntheticOptions o;
  o.docs = 20;
  const Corpus copy = generate_copy(o);
  const Corpus rev = generate_reversal(o);
  ASSERT_EQ(copy.size(), 20u);
  for (size_t d = 0; d < copy.size(); ++d) {
    EXPECT_EQ(copy[d].source, copy[d].target);
    EXPECT_EQ(rev[d].source, copy[d].source);
    for (size_t n = 0; n < rev[d].source.size(); ++n) {
      EXPECT_EQ(rev[d].target[n], Sentence(rev[d].source[n].rbegin(), rev[d].source[n].rend()));
    }
    EXPECT_GE(copy[d].size(), o.min_sentences);
    EXPECT_LE(copy[d].size(), o.max_sentences);
    EXPECT_NO_THROW(copy[d].validate());
  }
}

TEST(Synthetic, SeedsControlTheCorpus) {
  SyntheticOptions o;
  o.seed = 5;
  EXPECT_EQ(generate_formality(o), generate_formality(o));
  SyntheticOptions p = o;
  p.seed = 6;
  EXPECT_NE(generate_formality(o), generate_formality(p));
  EXPECT_THROW(generate_task("sorting", o), std::invalid_argument);
  o.max_sentences = 0;
  EXPECT_THROW(generate_copy(o), std::invalid_argument);
}

TEST(Synthetic, FormalityMarkerFollowsTheFirstSentenceTag) {
  SyntheticOptions o;
  o.docs = 200;
  const Corpus c = generate_formality(o);
  Index formal = 0;
  for (const auto& d : c) {
    const std::string& tag = d.source[0][0];
    ASSERT_TRUE(tag == "sir" || tag == "buddy");
    const std::string marker = tag == "sir" ? "Sie" : "du";
    formal += tag == "sir" ? 1 : 0;
    for (size_t n = 0; n < d.source.size(); ++n) {
      EXPECT_EQ(d.target[n][0], marker);
      EXPECT_EQ(d.source[n][n == 0 ? 1 : 0], "you");
      if (n > 0) {
        EXPECT_NE(d.source[n][0], "sir");
        EXPECT_NE(d.source[n][0], "buddy");
      }
      const size_t content = d.source[n].size() - (n == 0 ? 2 : 1);
      EXPECT_EQ(d.target[n].size(), content + 1);
      EXPECT_EQ(d.target[n].back(), "t" + d.source[n].back().substr(1));
    }
  }
  EXPECT_GT(formal, 70);
  EXPECT_LT(formal, 130);
}

TEST(Synthetic, MarkerAccuracySkipsTheFirstSentence) {
  const Corpus refs{Document{"d", {{"sir", "you"}, {"you"}, {"you"}}, {{"Sie"}, {"Sie", "t1"}, {"Sie"}}}};
  const std::vector<std::vector<Sentence>> hyps{{{"du"}, {"Sie", "t2"}, {}}};
  const MarkerAccuracy a = formality_marker_accuracy(refs, hyps);
  EXPECT_EQ(a.total, 2);
  EXPECT_EQ(a.correct, 1);
  EXPECT_DOUBLE_EQ(a.accuracy(), 0.5);
  EXPECT_EQ(formality_marker_accuracy(refs, hyps, 1).total, 3);
}

TEST(ExperimentConfig, JsonRoundTrip) {
  ExperimentConfig c;
  c.task = "formality";
  c.train_path = "train.jsonl";
  c.valid_path = "valid.jsonl";
  c.test_path = "test.jsonl";
  c.model.set_variant(AttentionVariant::Window);
  c.model.window = 4;
  c.model.pos_enc = PosEnc::Relative;
  c.training.max_epochs = 7;
  c.decode.strategy = Strategy::Sd;
  c.decode.k = 2;
  c.seed = 99;
  c.out_dir = "runs/a";
  EXPECT_EQ(ExperimentConfig::from_json(c.to_json()), c);
  EXPECT_EQ(parse_strategy("fsd"), Strategy::Fsd);
  EXPECT_THROW(parse_strategy("greedy"), std::invalid_argument);
}

TEST(Experiment, TrainAndTranslateSmallCopyTask) {
  SyntheticOptions o;
  o.docs = 30;
  o.max_sentences = 3;
  const Corpus train = generate_copy(o);
  o.seed = 2;
  o.docs = 5;
  const Corpus valid = generate_copy(o);
  ExperimentConfig c;
  c.model.d_model = 16;
  c.model.heads = 2;
  c.model.enc_layers = 1;
  c.model.dec_layers = 1;
  c.model.ffn_dim = 32;
  c.training.max_epochs = 2;
  c.decode.beam = 2;
  const TrainOutcome a = train_experiment(c, train, valid);
  const TrainOutcome b = train_experiment(c, train, valid);
  EXPECT_EQ(log_to_jsonl(a.result.log), log_to_jsonl(b.result.log));
  EXPECT_EQ(a.checkpoint.params, b.checkpoint.params);
  EXPECT_GT(a.checkpoint.ratio, 0.0);
  const TranslationOutcome t = translate_corpus(a.checkpoint, valid, c.decode);
  ASSERT_EQ(t.hypotheses.size(), valid.size());
  for (size_t d = 0; d < valid.size(); ++d) {
    EXPECT_EQ(t.hypotheses[d].doc_id, valid[d].doc_id);
    EXPECT_EQ(t.hypotheses[d].target.size(), valid[d].target.size());
  }
}
