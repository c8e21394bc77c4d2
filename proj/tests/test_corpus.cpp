#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <mhch/corpus.hpp>

using namespace mhch;

namespace {

GeneratorConfig small_config(std::uint64_t seed = 3, std::size_t n = 200) {
  GeneratorConfig cfg;
  cfg.num_dialogues = n;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(GenerateCorpus, MatchesClothingStatistics) {
  GeneratorConfig cfg;  // defaults: 3500 dialogues, 10.18 turns, 0.188 transferable
  const Corpus c = generate_corpus(cfg);
  ASSERT_EQ(c.size(), 3500u);
  std::size_t utterances = 0;
  for (const auto& d : c.dialogues) utterances += d.size();
  const double mean_len = static_cast<double>(utterances) / 3500.0;
  EXPECT_NEAR(mean_len, 10.18, 0.1 * 10.18);
  EXPECT_NEAR(transferable_fraction(c), 0.188, 0.2 * 0.188);
}

TEST(GenerateCorpus, DeterministicGivenSeed) {
  GeneratorConfig cfg = small_config(11, 1);
  EXPECT_EQ(generate_corpus(cfg), generate_corpus(cfg));
  cfg.num_dialogues = 50;
  EXPECT_EQ(generate_corpus(cfg), generate_corpus(cfg));
  GeneratorConfig other = cfg;
  other.seed = 12;
  EXPECT_NE(generate_corpus(cfg), generate_corpus(other));
}

TEST(GenerateCorpus, DialogueIndependentOfCorpusSize) {
  // Each dialogue is seeded from (seed, index), so a prefix of a larger
  // corpus equals the smaller corpus.
  const Corpus small = generate_corpus(small_config(5, 20));
  const Corpus large = generate_corpus(small_config(5, 60));
  for (std::size_t i = 0; i < small.size(); ++i) EXPECT_EQ(small.dialogues[i], large.dialogues[i]);
}

TEST(GenerateCorpus, RareTransfersWhenPatienceIsHuge) {
  GeneratorConfig cfg = small_config(7, 1000);
  cfg.transfer_rate = 1e-4;
  cfg.patience_mean = 1e6;
  const Corpus c = generate_corpus(cfg);
  std::size_t without = 0;
  for (const auto& d : c.dialogues)
    without += std::none_of(d.utterances.begin(), d.utterances.end(),
                            [](const Utterance& u) { return u.handoff == Handoff::transferable; });
  EXPECT_GE(static_cast<double>(without), 0.95 * 1000);
}

TEST(GenerateCorpus, StructuralInvariants) {
  GeneratorConfig cfg = small_config(9, 500);
  const Corpus c = generate_corpus(cfg);
  EXPECT_NO_THROW(validate_corpus(c, cfg.max_len));
  for (const auto& d : c.dialogues) {
    ASSERT_GE(d.size(), 2u);
    ASSERT_LE(d.size(), cfg.max_len);
    bool seen_negative_user = false;
    bool any_transfer = false;
    for (std::size_t t = 0; t < d.size(); ++t) {
      const auto& u = d.utterances[t];
      EXPECT_EQ(u.role, t % 2 == 0 ? Role::user : Role::agent);
      EXPECT_GE(u.tokens.size(), 5u);
      EXPECT_LE(u.tokens.size(), 12u);
      if (u.role == Role::user && u.sentiment == Sentiment::negative) seen_negative_user = true;
      if (u.handoff == Handoff::transferable && !any_transfer) {
        any_transfer = true;
        // Causal chain: a negative user turn precedes or coincides with the
        // first transfer.
        EXPECT_TRUE(seen_negative_user) << d.id;
      }
    }
    if (!any_transfer) EXPECT_NE(d.satisfaction, Satisfaction::neutral) << d.id;
    else EXPECT_EQ(d.satisfaction, Satisfaction::neutral) << d.id;
  }
}

TEST(GenerateCorpus, LabelMarginalsConverge) {
  for (double rate : {0.1, 0.188, 0.3}) {
    GeneratorConfig cfg = small_config(21, 2000);
    cfg.transfer_rate = rate;
    EXPECT_NEAR(transferable_fraction(generate_corpus(cfg)), rate, 0.2 * rate) << rate;
  }
}

TEST(GeneratorConfig, RejectsInvalid) {
  auto expect_bad = [](auto mutate) {
    GeneratorConfig cfg;
    mutate(cfg);
    EXPECT_THROW(generate_corpus(cfg), ValidationError);
  };
  expect_bad([](GeneratorConfig& c) { c.transfer_rate = 0.0; });
  expect_bad([](GeneratorConfig& c) { c.transfer_rate = 1.0; });
  expect_bad([](GeneratorConfig& c) { c.mean_length = 1.5; });
  expect_bad([](GeneratorConfig& c) { c.num_dialogues = 0; });
  expect_bad([](GeneratorConfig& c) { c.vocab_size = 29; });
  expect_bad([](GeneratorConfig& c) { c.patience_mean = -1; });
}

TEST(GeneratorConfig, JsonRejectsUnknownKeys) {
  EXPECT_THROW(nlohmann::json({{"num_dialogs", 3}}).get<GeneratorConfig>(), ValidationError);
  const auto cfg = nlohmann::json({{"num_dialogues", 3}, {"seed", 9}}).get<GeneratorConfig>();
  EXPECT_EQ(cfg.num_dialogues, 3u);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_DOUBLE_EQ(cfg.mean_length, 10.18);
}

TEST(SplitCorpus, FloorAllocationRemainderToTrain) {
  Corpus ten = generate_corpus(small_config(1, 10));
  auto s = split_corpus(ten, {0.8, 0.1, 0.1}, 0);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.validation.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);

  Corpus c35 = generate_corpus(small_config(1, 35));
  s = split_corpus(c35, {0.8, 0.1, 0.1}, 0);
  EXPECT_EQ(s.train.size(), 29u);
  EXPECT_EQ(s.validation.size(), 3u);
  EXPECT_EQ(s.test.size(), 3u);
}

TEST(SplitCorpus, PartitionAndDeterminism) {
  const Corpus c = generate_corpus(small_config(2, 97));
  const auto a = split_corpus(c, {0.8, 0.1, 0.1}, 42);
  const auto b = split_corpus(c, {0.8, 0.1, 0.1}, 42);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_EQ(a.test, b.test);

  std::multiset<std::string> ids;
  for (const Corpus* part : {&a.train, &a.validation, &a.test})
    for (const auto& d : part->dialogues) ids.insert(d.id);
  EXPECT_EQ(ids.size(), c.size());
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), c.size());

  const auto other = split_corpus(c, {0.8, 0.1, 0.1}, 43);
  EXPECT_NE(a.test, other.test);
}

TEST(SplitCorpus, Errors) {
  Corpus two = generate_corpus(small_config(1, 2));
  EXPECT_THROW(split_corpus(two, {0.8, 0.1, 0.1}, 0), ValidationError);
  EXPECT_THROW(split_corpus(Corpus{}, {0.8, 0.1, 0.1}, 0), ValidationError);
  Corpus ten = generate_corpus(small_config(1, 10));
  EXPECT_THROW(split_corpus(ten, {0.8, 0.1, 0.2}, 0), ValidationError);
  EXPECT_THROW(split_corpus(ten, {1.0, 0.0, 0.0}, 0), ValidationError);
}

TEST(CorpusIo, RoundTrip) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const Corpus c = generate_corpus(small_config(seed, 40));
    std::stringstream ss;
    write_corpus(c, ss);
    EXPECT_EQ(read_corpus(ss, c.vocab_size), c);
  }
}

TEST(CorpusIo, FileRoundTripIsAtomic) {
  const auto dir = std::filesystem::temp_directory_path() / "mhch_corpus_io";
  std::filesystem::create_directories(dir);
  const auto path = dir / "c.jsonl";
  const Corpus c = generate_corpus(small_config(4, 25));
  write_corpus(c, path);
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  EXPECT_EQ(read_corpus(path, c.vocab_size), c);
  std::filesystem::remove_all(dir);
}

TEST(CorpusIo, LineFormat) {
  Corpus c;
  c.vocab_size = 40;
  c.dialogues.push_back({"x", {{Role::user, {1, 2}, Sentiment::negative, Handoff::transferable}}, Satisfaction::neutral});
  std::stringstream ss;
  write_corpus(c, ss);
  EXPECT_EQ(ss.str(),
            R"({"id":"x","satisfaction":"neutral","turns":[{"handoff":"transferable","role":"user","sentiment":"negative","tokens":[1,2]}]})"
            "\n");
}

TEST(CorpusIo, UnknownEnumNamesLine) {
  std::stringstream ss;
  ss << R"({"id":"a","satisfaction":"neutral","turns":[{"role":"user","tokens":[1],"sentiment":"neutral","handoff":"normal"}]})" << "\n";
  ss << R"({"id":"b","satisfaction":"neutral","turns":[{"role":"user","tokens":[1],"sentiment":"neutral","handoff":"maybe"}]})" << "\n";
  try {
    read_corpus(ss);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("maybe"), std::string::npos);
  }
}

TEST(CorpusIo, MalformedAndOutOfVocabulary) {
  {
    std::stringstream ss("{not json}\n");
    EXPECT_THROW(read_corpus(ss), ParseError);
  }
  {
    std::stringstream ss;
    ss << R"({"id":"a","satisfaction":"neutral","turns":[{"role":"user","tokens":[50],"sentiment":"neutral","handoff":"normal"}]})" << "\n";
    try {
      read_corpus(ss, 50);
      FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), 1u);
    }
  }
}

TEST(CorpusIo, EmptyFileGivesEmptyCorpusThatCannotBeSplit) {
  std::stringstream ss("");
  const Corpus c = read_corpus(ss);
  EXPECT_EQ(c.size(), 0u);
  EXPECT_THROW(split_corpus(c, {0.8, 0.1, 0.1}, 0), ValidationError);
}
