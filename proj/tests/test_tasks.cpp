#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dntm/tasks.hpp"

namespace {

using namespace dntm;

// A tape machine that knows nothing about the generator: it records the
// payload between the start and end markers, then plays it back.
std::vector<std::vector<double>> copy_machine(const Episode& e, std::size_t width) {
  std::vector<std::vector<double>> tape, out;
  bool recording = false, replaying = false;
  std::size_t head = 0;
  for (const auto& x : e.inputs) {
    if (x[width] == 1.0) {
      recording = true;
      out.push_back(std::vector<double>(width, 0.0));
      continue;
    }
    if (x[width + 1] == 1.0) {
      recording = false;
      replaying = true;
      out.push_back(std::vector<double>(width, 0.0));
      continue;
    }
    if (recording) {
      tape.emplace_back(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(width));
      out.push_back(std::vector<double>(width, 0.0));
    } else if (replaying && head < tape.size()) {
      out.push_back(tape[head++]);
    } else {
      out.push_back(std::vector<double>(width, 0.0));
    }
  }
  return out;
}

// Binary cross-entropy of predictions p against targets over masked steps,
// with predictions clipped away from {0, 1}.
double masked_bce(const Episode& e, const std::vector<std::vector<double>>& p) {
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < e.steps(); ++t) {
    if (!e.mask[t]) continue;
    for (std::size_t k = 0; k < p[t].size(); ++k) {
      const double q = std::clamp(p[t][k], 1e-12, 1 - 1e-12);
      const double y = e.targets[t][k];
      sum -= y * std::log(q) + (1 - y) * std::log(1 - q);
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

// Independent recall solver: splits the stream on delimiters and looks up the
// item that followed the query.
std::vector<std::vector<double>> recall_machine(const Episode& e, std::size_t width) {
  std::vector<std::vector<std::vector<double>>> items;
  std::vector<std::vector<double>> query;
  int section = 0;  // 0 items, 1 query, 2 answer
  std::vector<std::vector<double>> out;
  std::size_t head = 0;
  std::vector<std::vector<double>> answer;
  for (const auto& x : e.inputs) {
    std::vector<double> bits(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(width));
    if (x[width] == 1.0) {
      items.emplace_back();
    } else if (x[width + 1] == 1.0) {
      ++section;
      if (section == 2) {
        for (std::size_t i = 0; i + 1 < items.size(); ++i) {
          if (items[i] == query) answer = items[i + 1];
        }
      }
    } else if (section == 0) {
      items.back().push_back(bits);
    } else if (section == 1) {
      query.push_back(bits);
    }
    if (section == 2 && x[width + 1] != 1.0 && head < answer.size()) {
      out.push_back(answer[head++]);
    } else {
      out.push_back(std::vector<double>(width, 0.0));
    }
  }
  return out;
}

TEST(Copy, DefaultsFollowTheToyTaskSetup) {
  CopyConfig c;
  EXPECT_EQ(c.width, 8u);
  EXPECT_EQ(c.min_len, 1u);
  EXPECT_EQ(c.max_len, 20u);
  EXPECT_EQ(copy_input_dim(c), 10u);
}

TEST(Copy, LayoutOfALengthThreeEpisode) {
  Rng rng(11);
  const Episode e = gen_copy_length(rng, 3, 4);
  ASSERT_EQ(e.steps(), 8u);
  EXPECT_EQ(e.inputs[0], (std::vector<double>{0, 0, 0, 0, 1, 0}));
  EXPECT_EQ(e.inputs[4], (std::vector<double>{0, 0, 0, 0, 0, 1}));
  EXPECT_EQ(e.mask, (std::vector<std::uint8_t>{0, 0, 0, 0, 0, 1, 1, 1}));
  for (std::size_t t = 0; t < 3; ++t) {
    const std::vector<double> payload(e.inputs[1 + t].begin(), e.inputs[1 + t].begin() + 4);
    EXPECT_EQ(e.targets[5 + t], payload);
    EXPECT_EQ(e.inputs[1 + t][4] + e.inputs[1 + t][5], 0.0);
  }
  for (std::size_t t = 5; t < 8; ++t) {
    for (double v : e.inputs[t]) EXPECT_EQ(v, 0.0);
  }
}

TEST(Copy, TapeMachineScoresZeroOnEveryEpisode) {
  Rng rng(5);
  const CopyConfig c{5, 1, 12};
  for (int i = 0; i < 1000; ++i) {
    const Episode e = gen_copy(rng, c);
    ASSERT_GE(e.length, c.min_len);
    ASSERT_LE(e.length, c.max_len);
    ASSERT_EQ(e.steps(), 2 * e.length + 2);
    const auto replay = copy_machine(e, c.width);
    ASSERT_LT(masked_bce(e, replay), 1e-10);
    for (std::size_t t = 0; t < e.steps(); ++t) {
      if (!e.mask[t]) {
        for (double v : e.targets[t]) ASSERT_EQ(v, 0.0);
      }
    }
  }
}

TEST(Copy, BitsAreBalanced) {
  Rng rng(9);
  double ones = 0, total = 0;
  for (int i = 0; i < 2000; ++i) {
    const Episode e = gen_copy_length(rng, 10, 8);
    for (std::size_t t = 0; t < e.steps(); ++t) {
      if (!e.mask[t]) continue;
      for (double v : e.targets[t]) {
        ones += v;
        total += 1;
      }
    }
  }
  EXPECT_NEAR(ones / total, 0.5, 0.01);
}

TEST(Copy, RejectsBadShapes) {
  Rng rng(1);
  EXPECT_THROW(gen_copy_length(rng, 0, 4), ConfigError);
  EXPECT_THROW(gen_copy_length(rng, 3, 0), ConfigError);
  EXPECT_THROW(gen_copy(rng, {4, 5, 4}), ConfigError);
}

TEST(Recall, LayoutOfATwoItemEpisode) {
  Rng rng(2);
  const RecallConfig c{4, 2, 2, 2};
  const Episode e = gen_recall_items(rng, 2, c);
  // 2 x (delimiter + 2 rows), query delimiter, 2 query rows, delimiter, 2 answers
  ASSERT_EQ(e.steps(), 2 * 3 + 1 + 2 + 1 + 2);
  EXPECT_EQ(e.inputs[0][4], 1.0);
  EXPECT_EQ(e.inputs[3][4], 1.0);
  EXPECT_EQ(e.inputs[6][5], 1.0);
  EXPECT_EQ(e.inputs[9][5], 1.0);
  // With two items the query is always the first.
  EXPECT_EQ(e.inputs[7], e.inputs[1]);
  EXPECT_EQ(e.inputs[8], e.inputs[2]);
  const std::vector<double> second_a(e.inputs[4].begin(), e.inputs[4].begin() + 4);
  const std::vector<double> second_b(e.inputs[5].begin(), e.inputs[5].begin() + 4);
  EXPECT_EQ(e.targets[10], second_a);
  EXPECT_EQ(e.targets[11], second_b);
  EXPECT_EQ(std::count(e.mask.begin(), e.mask.end(), 1), 2);
}

TEST(Recall, SolverScoresZeroOnEveryEpisode) {
  Rng rng(8);
  const RecallConfig c{6, 3, 2, 6};
  std::size_t solved = 0;
  for (int i = 0; i < 1000; ++i) {
    const Episode e = gen_recall(rng, c);
    ASSERT_GE(e.length, 2u);
    ASSERT_LE(e.length, 6u);
    ASSERT_EQ(e.steps(), e.length * (c.item_len + 1) + c.item_len + 2 + c.item_len);
    // Duplicate items make the lookup ambiguous; with 18 random bits per
    // item they are rare enough to ignore.
    if (masked_bce(e, recall_machine(e, c.width)) < 1e-10) ++solved;
  }
  EXPECT_GE(solved, 999u);
}

TEST(Recall, QueryNeverTheLastItem) {
  Rng rng(4);
  const RecallConfig c{3, 1, 3, 3};
  std::vector<int> seen(3, 0);
  for (int i = 0; i < 3000; ++i) {
    const Episode e = gen_recall_items(rng, 3, c);
    const auto& q = e.inputs[3 * 2 + 1];
    for (std::size_t k = 0; k < 3; ++k) {
      if (e.inputs[2 * k + 1] == q) ++seen[k];
    }
  }
  EXPECT_GT(seen[0], 1000);
  EXPECT_GT(seen[1], 1000);
}

TEST(Recall, RejectsBadShapes) {
  Rng rng(1);
  EXPECT_THROW(gen_recall_items(rng, 1, {}), ConfigError);
  EXPECT_THROW(gen_recall(rng, {6, 3, 1, 4}), ConfigError);
  EXPECT_THROW(gen_recall(rng, {0, 3, 2, 4}), ConfigError);
}

TEST(Generators, SameSeedSameEpisodes) {
  for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
    Rng a(seed), b(seed);
    for (int i = 0; i < 20; ++i) {
      EXPECT_EQ(gen_copy(a, {}), gen_copy(b, {}));
      EXPECT_EQ(gen_recall(a, {}), gen_recall(b, {}));
    }
  }
  Rng a(1), b(2);
  EXPECT_NE(gen_copy_length(a, 10, 8), gen_copy_length(b, 10, 8));
}

const char* kStory =
    "1 Mary moved to the bathroom.\n"
    "2 John went to the hallway.\n"
    "3 Where is Mary? \tbathroom\t1\n"
    "4 Daniel went back to the hallway.\n"
    "5 Where is Daniel? \thallway\t4\n"
    "1 Sandra journeyed to the garden.\n"
    "2 Where is Sandra? \tgarden\t1\n";

TEST(Babi, ParsesQuestionsWithTheirFacts) {
  const auto stories = parse_babi_text(kStory);
  ASSERT_EQ(stories.size(), 3u);
  EXPECT_EQ(stories[0].facts.size(), 2u);
  EXPECT_EQ(stories[0].question, "Where is Mary? ");
  EXPECT_EQ(stories[0].answer, "bathroom");
  EXPECT_EQ(stories[0].supporting_ids, std::vector<int>{1});
  EXPECT_EQ(stories[1].facts.size(), 3u);
  EXPECT_EQ(stories[1].facts.back().text, "Daniel went back to the hallway.");
  EXPECT_EQ(stories[1].story_index, 0u);
  EXPECT_EQ(stories[2].story_index, 1u);
  EXPECT_EQ(stories[2].facts.size(), 1u);
}

TEST(Babi, SerializeRoundTrip) {
  const auto stories = parse_babi_text(kStory);
  EXPECT_EQ(parse_babi_text(serialize_babi(stories)), stories);
}

TEST(Babi, EmptyInputHasNoStories) {
  EXPECT_TRUE(parse_babi_text("").empty());
  EXPECT_TRUE(parse_babi_text("\n\n").empty());
}

TEST(Babi, MalformedLinesReportTheLine) {
  const std::vector<std::pair<std::string, std::size_t>> cases = {
      {"x Mary moved.\n", 1},
      {"1 Mary moved.\n3 John left.\n", 2},
      {"1 Mary moved.\n2 Where is Mary?\tbathroom\n", 2},
      {"1 Mary moved.\n2 Where is Mary?\tbathroom\t5\n", 2},
      {"1 Mary moved.\n2 Where is Mary?\t\t1\n", 2},
      {"1Mary\n", 1},
  };
  for (const auto& [text, line] : cases) {
    try {
      parse_babi_text(text);
      ADD_FAILURE() << text;
    } catch (const BabiParseError& e) {
      EXPECT_EQ(e.line(), line) << text;
    }
  }
}

TEST(Babi, EpisodeScoresOnlyTheQuestion) {
  const auto stories = parse_babi_text(kStory);
  const Vocabulary vocab = build_vocabulary(stories);
  EXPECT_TRUE(vocab.contains("mary"));
  EXPECT_FALSE(vocab.contains("Mary"));
  EXPECT_TRUE(vocab.contains("bathroom"));
  const Episode e = babi_episode(stories[1], vocab);
  ASSERT_EQ(e.steps(), 4u);
  EXPECT_EQ(e.mask, (std::vector<std::uint8_t>{0, 0, 0, 1}));
  EXPECT_EQ(e.labels.back(), static_cast<std::int64_t>(vocab.id("hallway")));
  EXPECT_EQ(e.tokens[3].size(), 3u);
  EXPECT_EQ(e.tokens[0][0], vocab.id("mary"));

  const Episode short_e = babi_episode(stories[1], vocab, 1);
  ASSERT_EQ(short_e.steps(), 2u);
  EXPECT_EQ(short_e.tokens[0][0], vocab.id("daniel"));
}

TEST(Babi, VocabularyIdsAreStable) {
  Vocabulary v({"a", "b"});
  EXPECT_EQ(v.add("c"), 2u);
  EXPECT_EQ(v.add("a"), 0u);
  EXPECT_EQ(v.size(), 3u);
  EXPECT_THROW(v.id("zzz"), std::out_of_range);
}

std::string write_bytes(const std::string& name, const std::vector<unsigned char>& bytes) {
  const auto path = (std::filesystem::temp_directory_path() / ("dntm_tasks_" + name)).string();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  return path;
}

void be32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(v >> s));
}

// Two 2x3 images and their labels.
std::pair<std::string, std::string> tiny_idx(std::uint32_t image_magic = 2051, std::uint32_t label_magic = 2049) {
  std::vector<unsigned char> img, lab;
  be32(img, image_magic);
  be32(img, 2);
  be32(img, 2);
  be32(img, 3);
  for (unsigned char v : {0, 51, 102, 153, 204, 255, 255, 0, 0, 0, 0, 255}) img.push_back(v);
  be32(lab, label_magic);
  be32(lab, 2);
  lab.push_back(7);
  lab.push_back(3);
  return {write_bytes("img_" + std::to_string(image_magic), img), write_bytes("lab_" + std::to_string(label_magic), lab)};
}

TEST(Idx, LoadsImagesInScanOrder) {
  const auto [img, lab] = tiny_idx();
  const auto ds = load_idx(img, lab, std::nullopt);
  ASSERT_EQ(ds.images.size(), 2u);
  EXPECT_EQ(ds.rows, 2u);
  EXPECT_EQ(ds.cols, 3u);
  EXPECT_FLOAT_EQ(ds.images[0][1], 0.2f);
  EXPECT_FLOAT_EQ(ds.images[0][5], 1.0f);
  EXPECT_EQ(ds.labels, (std::vector<std::uint8_t>{7, 3}));
  EXPECT_EQ(ds.permutation, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));

  const Episode e = pixel_episode(ds, 1);
  ASSERT_EQ(e.steps(), 6u);
  EXPECT_EQ(e.inputs[0], std::vector<double>{1.0});
  EXPECT_EQ(e.labels.back(), 3);
  EXPECT_EQ(std::count(e.mask.begin(), e.mask.end(), 1), 1);
  EXPECT_EQ(e.mask.back(), 1);
}

TEST(Idx, PermutationIsFixedAndShared) {
  const auto [img, lab] = tiny_idx();
  const auto a = load_idx(img, lab, 42);
  const auto b = load_idx(img, lab, 42);
  const auto plain = load_idx(img, lab, std::nullopt);
  EXPECT_EQ(a.permutation, b.permutation);
  auto sorted = a.permutation;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, plain.permutation);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(a.images[i][k], plain.images[i][a.permutation[k]]);
  }
  EXPECT_EQ(pixel_permutation(784, 7), pixel_permutation(784, 7));
  EXPECT_NE(pixel_permutation(784, 7), pixel_permutation(784, 8));
}

TEST(Idx, RejectsWrongMagicAndTruncation) {
  {
    const auto [img, lab] = tiny_idx(2049, 2049);
    EXPECT_THROW(load_idx(img, lab, std::nullopt), IdxError);
  }
  {
    const auto [img, lab] = tiny_idx(2051, 2051);
    EXPECT_THROW(load_idx(img, lab, std::nullopt), IdxError);
  }
  std::vector<unsigned char> cut;
  be32(cut, 2051);
  be32(cut, 5);
  be32(cut, 2);
  be32(cut, 2);
  cut.push_back(1);
  const auto [img, lab] = tiny_idx();
  EXPECT_THROW(load_idx(write_bytes("cut", cut), lab, std::nullopt), IdxError);
  EXPECT_THROW(load_idx("/nonexistent/images", lab, std::nullopt), IdxError);
}

TEST(Jsonl, RoundTripsEveryKind) {
  Rng rng(3);
  std::vector<Episode> episodes{gen_copy(rng, {}), gen_recall(rng, {})};
  const auto stories = parse_babi_text(kStory);
  episodes.push_back(babi_episode(stories[1], build_vocabulary(stories)));
  const auto [img, lab] = tiny_idx();
  episodes.push_back(pixel_episode(load_idx(img, lab, 1), 0));
  for (const auto& e : episodes) {
    const auto line = episode_to_jsonl(e);
    EXPECT_EQ(line.find('\n'), std::string::npos);
    EXPECT_EQ(episode_from_jsonl(line), e) << e.task;
  }
}

TEST(Stack, BatchesEpisodesAlongRows) {
  Rng rng(6);
  const std::vector<Episode> eps{gen_copy_length(rng, 2, 3), gen_copy_length(rng, 2, 3)};
  const auto b = stack<double>(eps);
  EXPECT_EQ(b.batch, 2u);
  EXPECT_EQ(b.steps, 6u);
  EXPECT_EQ(b.inputs[1].at(1, 0), eps[1].inputs[1][0]);
  EXPECT_EQ(b.targets[4].at(0, 2), eps[0].targets[4][2]);
  EXPECT_EQ(b.mask[4].at(1, 0), 1.0);
  const std::vector<Episode> mixed{gen_copy_length(rng, 2, 3), gen_copy_length(rng, 3, 3)};
  EXPECT_THROW(stack<double>(mixed), ShapeError);
  EXPECT_THROW(stack<double>({}), std::invalid_argument);
}

}  // namespace
