#include <gtest/gtest.h>

#include <fstream>

#include "framecast/data.hpp"
#include "test_util.hpp"

using namespace framecast;

namespace {

void make_pgm(const std::filesystem::path& path, int h, int w, unsigned char value,
              int maxval = 255) {
  std::ofstream f(path, std::ios::binary);
  f << "P5\n# fixture\n" << w << " " << h << "\n" << maxval << "\n";
  for (int i = 0; i < h * w; ++i) f.put(char(value));
}

std::filesystem::path write_manifest(const std::filesystem::path& dir,
                                     const std::vector<std::string>& names) {
  auto mf = dir / "frames.txt";
  std::ofstream f(mf);
  for (const auto& n : names) f << n << "\n";
  return mf;
}

}  // namespace

TEST(Ingest, FullArchiveLengthAndBaseCase) {
  auto dir = fctest::scratch_dir("ingest");
  std::vector<std::string> names;
  for (int i = 0; i < 158; ++i) {
    std::string n = "f" + std::to_string(i) + ".pgm";
    make_pgm(dir / n, 8, 8, (unsigned char)(i % 256));
    names.push_back(n);
  }
  auto seq = ingest_frames(write_manifest(dir, names));
  EXPECT_EQ(seq.size(), 158u);
  EXPECT_EQ(seq.max_value, 255.0f);
  EXPECT_EQ(seq.frames[3](0, 0, 0), 3.0f);

  auto single = ingest_frames(write_manifest(dir, {"f0.pgm"}));
  EXPECT_EQ(single.size(), 1u);
  std::filesystem::remove_all(dir);
}

TEST(Ingest, ErrorsNameTheOffendingFile) {
  auto dir = fctest::scratch_dir("ingest_err");
  make_pgm(dir / "a.pgm", 8, 8, 1);
  make_pgm(dir / "b.pgm", 4, 8, 1);
  try {
    ingest_frames(write_manifest(dir, {"a.pgm", "b.pgm"}));
    FAIL() << "expected extent mismatch";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("b.pgm"), std::string::npos);
  }
  EXPECT_THROW(ingest_frames(write_manifest(dir, {"missing.pgm"})), DataError);
  EXPECT_THROW(ingest_frames(write_manifest(dir, {})), DataError);
  std::filesystem::remove_all(dir);
}

TEST(Preprocess, ConstantAndScaleAndShape) {
  FrameSequence<float> seq;
  seq.max_value = 255.0f;
  seq.frames.push_back(Tensor<float>({10, 14, 1}, 255.0f));
  auto out64 = preprocess(seq, 64);
  EXPECT_EQ(out64.frames[0].dims(), (Extents{64, 64, 1}));
  for (std::size_t i = 0; i < out64.frames[0].size(); ++i)
    EXPECT_EQ(out64.frames[0][i], 1.0f);

  auto out128 = preprocess(seq, 128);
  EXPECT_EQ(out128.frames[0].dims(), (Extents{128, 128, 1}));

  // constant preserved exactly at non-saturated values too
  seq.frames[0] = Tensor<float>({10, 14, 1}, 100.0f);
  auto c = preprocess(seq, 32);
  for (std::size_t i = 0; i < c.frames[0].size(); ++i)
    EXPECT_EQ(c.frames[0][i], 100.0f / 255.0f);
}

TEST(Preprocess, ChannelMeanAndRange) {
  Rng rng(401);
  FrameSequence<float> seq;
  seq.max_value = 255.0f;
  Tensor<float> two({6, 6, 2});
  for (std::size_t i = 0; i < two.size(); ++i) two[i] = uniform_real<float>(rng, 0.0f, 255.0f);
  seq.frames.push_back(two);
  auto out = preprocess(seq, 6);
  ASSERT_EQ(out.frames[0].dims(), (Extents{6, 6, 1}));
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 6; ++x) {
      const float want = (two(y, x, 0) + two(y, x, 1)) / 2.0f / 255.0f;
      EXPECT_NEAR(out.frames[0](y, x, 0), want, 1e-6f);
      EXPECT_GE(out.frames[0](y, x, 0), 0.0f);
      EXPECT_LE(out.frames[0](y, x, 0), 1.0f);
    }
  EXPECT_THROW(preprocess(FrameSequence<float>{}, 16), DataError);
}

TEST(Windows, TableLayoutAndCounts) {
  FrameSequence<float> seq;
  for (int i = 0; i < 8; ++i) seq.frames.push_back(Tensor<float>({2, 2, 1}, float(i)));
  auto ds = make_windows(seq, 5);
  EXPECT_EQ(ds.samples(), 3u);
  EXPECT_EQ(ds.x.dims(), (Extents{3, 5, 2, 2, 1}));
  EXPECT_EQ(ds.y.dims(), (Extents{3, 2, 2, 1}));
  // sample 0: inputs are frames 0..4, target frame 5
  for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(ds.x(0ul, t, 0ul, 0ul, 0ul), float(t));
  EXPECT_EQ(ds.y(0ul, 0ul, 0ul, 0ul), 5.0f);

  FrameSequence<float> big;
  for (int i = 0; i < 158; ++i) big.frames.push_back(Tensor<float>({2, 2, 1}));
  EXPECT_EQ(make_windows(big, 5).samples(), 153u);

  FrameSequence<float> tight;
  for (int i = 0; i < 5; ++i) tight.frames.push_back(Tensor<float>({2, 2, 1}));
  EXPECT_THROW(make_windows(tight, 5), DataError);
}

TEST(Windows, BitwiseContentAndOverlap) {
  Rng rng(409);
  FrameSequence<float> seq;
  for (int i = 0; i < 11; ++i) seq.frames.push_back(fctest::rand_tensor<float>({3, 4, 1}, rng));
  const std::size_t ts = 4;
  auto ds = make_windows(seq, ts);
  ASSERT_EQ(ds.samples(), 7u);
  for (std::size_t i = 0; i < ds.samples(); ++i) {
    for (std::size_t j = 0; j < ts; ++j) {
      Tensor<float> xij = slice_leading(ds.x, {i, j});
      for (std::size_t k = 0; k < xij.size(); ++k) EXPECT_EQ(xij[k], seq.frames[i + j][k]);
    }
    Tensor<float> yi = slice_leading(ds.y, {i});
    for (std::size_t k = 0; k < yi.size(); ++k) EXPECT_EQ(yi[k], seq.frames[i + ts][k]);
  }
  for (std::size_t i = 0; i + 1 < ds.samples(); ++i)
    for (std::size_t j = 0; j + 1 < ts; ++j) {
      Tensor<float> a = slice_leading(ds.x, {i + 1, j});
      Tensor<float> b = slice_leading(ds.x, {i, j + 1});
      for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k], b[k]);
    }
}

TEST(ChronoSplit, OrderPreservedAndReassembles) {
  Rng rng(419);
  FrameSequence<float> seq;
  for (int i = 0; i < 105; ++i) seq.frames.push_back(fctest::rand_tensor<float>({2, 2, 1}, rng));
  auto ds = make_windows(seq, 5);   // 100 samples
  auto [train, valid] = chrono_split(ds, 0.8);
  EXPECT_EQ(train.samples(), 80u);
  EXPECT_EQ(valid.samples(), 20u);
  for (std::size_t i = 0; i < train.x.size(); ++i) EXPECT_EQ(train.x[i], ds.x[i]);
  for (std::size_t i = 0; i < valid.x.size(); ++i)
    EXPECT_EQ(valid.x[i], ds.x[train.x.size() + i]);
  for (std::size_t i = 0; i < valid.y.size(); ++i)
    EXPECT_EQ(valid.y[i], ds.y[train.y.size() + i]);

  FrameSequence<float> ten;
  for (int i = 0; i < 15; ++i) ten.frames.push_back(Tensor<float>({2, 2, 1}));
  auto halves = chrono_split(make_windows(ten, 5), 0.5);
  EXPECT_EQ(halves.first.samples(), 5u);
  EXPECT_EQ(halves.second.samples(), 5u);

  // under the floor rule an extreme low fraction empties the train side
  FrameSequence<float> two;
  for (int i = 0; i < 7; ++i) two.frames.push_back(Tensor<float>({2, 2, 1}));
  EXPECT_THROW(chrono_split(make_windows(two, 5), 0.2), DataError);
}

TEST(Synth, DeterministicAndAnalyticCenter) {
  auto a = synth_sequence<float>(SynthKind::moving_square, 20, 16, 7);
  auto b = synth_sequence<float>(SynthKind::moving_square, 20, 16, 7);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t i = 0; i < a.frames[t].size(); ++i)
      EXPECT_EQ(a.frames[t][i], b.frames[t][i]);

  const MovingSquareSpec spec = moving_square_spec(16, 7);
  for (std::size_t t = 0; t < a.size(); ++t) {
    const std::size_t cy =
        framecast::detail::wrap(spec.y0 + spec.vy * long(t) + long(spec.size / 2), 16);
    const std::size_t cx =
        framecast::detail::wrap(spec.x0 + spec.vx * long(t) + long(spec.size / 2), 16);
    EXPECT_EQ(a.frames[t](cy, cx, 0), 1.0f);
  }
}

TEST(Synth, RangeAndBlob) {
  for (SynthKind kind : {SynthKind::moving_square, SynthKind::diffusing_blob}) {
    auto seq = synth_sequence<float>(kind, 100, 12, 3);
    EXPECT_EQ(seq.size(), 100u);
    for (const auto& f : seq.frames)
      for (std::size_t i = 0; i < f.size(); ++i) {
        EXPECT_GE(f[i], 0.0f);
        EXPECT_LE(f[i], 1.0f);
      }
  }
  EXPECT_THROW(synth_sequence<float>(SynthKind::moving_square, 5, 1, 3), DataError);
}

TEST(SequenceIo, RoundtripAndCorruption) {
  auto dir = fctest::scratch_dir("seqio");
  auto seq = synth_sequence<float>(SynthKind::diffusing_blob, 10, 64, 21);
  auto path = dir / "seq.fct";
  write_sequence(path, seq);
  auto back = read_sequence(path);
  ASSERT_EQ(back.size(), seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t)
    for (std::size_t i = 0; i < seq.frames[t].size(); ++i)
      EXPECT_EQ(back.frames[t][i], seq.frames[t][i]);

  // truncation and bad magic produce distinct errors
  std::ifstream in(path, std::ios::binary);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  {
    std::ofstream out(dir / "trunc.fct", std::ios::binary);
    out.write(buf.data(), std::streamsize(buf.size() - 7));
  }
  try {
    read_sequence(dir / "trunc.fct");
    FAIL() << "expected truncation error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
  {
    buf[1] = 'X';
    std::ofstream out(dir / "magic.fct", std::ios::binary);
    out.write(buf.data(), std::streamsize(buf.size()));
  }
  try {
    read_sequence(dir / "magic.fct");
    FAIL() << "expected magic error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST(Pgm, WriteReadRoundtripQuantized) {
  auto dir = fctest::scratch_dir("pgm");
  Rng rng(431);
  Tensor<float> frame = fctest::rand_tensor<float>({5, 7, 1}, rng, 0.0f, 1.0f);
  write_pgm(dir / "f.pgm", frame);
  auto img = read_pgm<float>(dir / "f.pgm");
  EXPECT_EQ(img.max_value, 255);
  ASSERT_EQ(img.pixels.dims(), frame.dims());
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const float want = std::floor(frame[i] * 255.0f + 0.5f);
    EXPECT_EQ(img.pixels[i], want);
  }
  std::filesystem::remove_all(dir);
}
