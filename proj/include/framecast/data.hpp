#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "framecast/rng.hpp"
#include "framecast/tensor.hpp"
#include "framecast/tensor_io.hpp"

namespace framecast {

/// Raised for anything wrong with ingested or generated data (missing files,
/// malformed images, inconsistent extents, bad window parameters).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Chronologically ordered frames, each (H, W, C). Raw ingested frames keep
/// the source value scale; max_value is the divisor that brings them to
/// [0,1] (1 once preprocessed).
template <typename Real>
struct FrameSequence {
  std::vector<Tensor<Real>> frames;
  std::vector<std::string> labels;
  Real max_value = Real(1);

  std::size_t size() const { return frames.size(); }
  std::size_t height() const { return frames.at(0).extent(0); }
  std::size_t width() const { return frames.at(0).extent(1); }
  std::size_t channels() const { return frames.at(0).extent(2); }
};

/// Supervised sliding-window pairs: x is (samples, timestep, H, W, 1) and
/// y is (samples, H, W, 1); sample i maps frames i..i+timestep-1 onto frame
/// i+timestep.
template <typename Real>
struct WindowedDataset {
  Tensor<Real> x;
  Tensor<Real> y;
  std::size_t timestep = 0;

  std::size_t samples() const { return x.extent(0); }
};

// ---- PGM (P5) ---------------------------------------------------------------

template <typename Real>
struct PgmImage {
  Tensor<Real> pixels;   // H x W x 1, raw values in 0..max_value
  int max_value = 255;
};

namespace detail {

inline int pgm_token(std::istream& in, const std::string& origin) {
  // skip whitespace and '#' comments
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (std::isspace(ch)) {
      ch = in.get();
    } else {
      break;
    }
  }
  if (ch == EOF) throw DataError(origin + ": truncated PGM header");
  std::string tok;
  while (ch != EOF && !std::isspace(ch) && ch != '#') {
    tok.push_back(static_cast<char>(ch));
    ch = in.get();
  }
  if (ch == '#') in.unget();
  try {
    return std::stoi(tok);
  } catch (...) {
    throw DataError(origin + ": malformed PGM header token '" + tok + "'");
  }
}

}  // namespace detail

template <typename Real = float>
PgmImage<Real> read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_pgm: cannot open " + path.string());
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '5')
    throw DataError(path.string() + ": not a binary PGM (P5) file");
  const int w = detail::pgm_token(in, path.string());
  const int h = detail::pgm_token(in, path.string());
  const int maxval = detail::pgm_token(in, path.string());
  if (w <= 0 || h <= 0) throw DataError(path.string() + ": bad PGM extents");
  if (maxval <= 0 || maxval > 255)
    throw DataError(path.string() + ": unsupported PGM max value " + std::to_string(maxval));
  // single whitespace byte separates header and payload
  std::vector<unsigned char> bytes(std::size_t(w) * std::size_t(h));
  if (!in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size())))
    throw DataError(path.string() + ": truncated PGM payload");
  PgmImage<Real> img;
  img.max_value = maxval;
  img.pixels = Tensor<Real>({std::size_t(h), std::size_t(w), 1});
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = Real(bytes[i]);
  return img;
}

/// Writes a [0,1] frame as 8-bit binary PGM, scaling by 255 and rounding
/// half-up.
template <typename Real>
void write_pgm(const std::filesystem::path& path, const Tensor<Real>& frame) {
  if (frame.rank() != 3 || frame.extent(2) != 1)
    throw DataError("write_pgm: frame must be (H, W, 1)");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("write_pgm: cannot open " + path.string());
  out << "P5\n" << frame.extent(1) << " " << frame.extent(0) << "\n255\n";
  for (std::size_t i = 0; i < frame.size(); ++i) {
    double v = std::floor(double(frame[i]) * 255.0 + 0.5);
    v = std::min(255.0, std::max(0.0, v));
    out.put(static_cast<char>(static_cast<unsigned char>(v)));
  }
  if (!out) throw DataError("write_pgm: write failed for " + path.string());
}

// ---- ingestion ----------------------------------------------------------------

/// Loads the frames named by a manifest: UTF-8 text, one path per line
/// (resolved against the manifest's directory), blank lines ignored, order
/// is chronology.
template <typename Real = float>
FrameSequence<Real> ingest_frames(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("ingest_frames: cannot open manifest " + manifest_path.string());
  const std::filesystem::path base = manifest_path.parent_path();

  FrameSequence<Real> seq;
  std::string line;
  int declared_max = -1;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
      line.pop_back();
    if (line.empty()) continue;
    const std::filesystem::path file = base / line;
    PgmImage<Real> img = read_pgm<Real>(file);
    if (!seq.frames.empty()) {
      if (!img.pixels.same_dims(seq.frames.front()))
        throw DataError("ingest_frames: " + file.string() +
                        " has different extents than the first frame");
      if (img.max_value != declared_max)
        throw DataError("ingest_frames: " + file.string() +
                        " declares a different max value than the first frame");
    } else {
      declared_max = img.max_value;
    }
    seq.frames.push_back(std::move(img.pixels));
    seq.labels.push_back(line);
  }
  if (seq.frames.empty()) throw DataError("ingest_frames: empty manifest " + manifest_path.string());
  seq.max_value = Real(declared_max);
  return seq;
}

// ---- preprocessing --------------------------------------------------------------

namespace detail {

// Separable bilinear resize with half-pixel sampling. lerp is written as
// v0 + f*(v1-v0) so constant inputs stay bitwise constant.
template <typename Real>
Tensor<Real> resize_bilinear(const Tensor<Real>& frame, std::size_t th, std::size_t tw) {
  const std::size_t h = frame.extent(0), w = frame.extent(1);
  Tensor<Real> out({th, tw, 1});
  const double sy = double(h) / double(th);
  const double sx = double(w) / double(tw);
  for (std::size_t y = 0; y < th; ++y) {
    double fy = (double(y) + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), double(h - 1));
    const std::size_t y0 = std::size_t(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const Real wy = Real(fy - double(y0));
    for (std::size_t x = 0; x < tw; ++x) {
      double fx = (double(x) + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), double(w - 1));
      const std::size_t x0 = std::size_t(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const Real wx = Real(fx - double(x0));
      const Real top = frame(y0, x0, 0) + wx * (frame(y0, x1, 0) - frame(y0, x0, 0));
      const Real bot = frame(y1, x0, 0) + wx * (frame(y1, x1, 0) - frame(y1, x0, 0));
      out(y, x, 0) = top + wy * (bot - top);
    }
  }
  return out;
}

}  // namespace detail

/// Grayscale (unweighted channel mean), bilinear resize to target x target,
/// and scale into [0,1] by the sequence's max value.
template <typename Real>
FrameSequence<Real> preprocess(const FrameSequence<Real>& seq, std::size_t target) {
  if (seq.frames.empty()) throw DataError("preprocess: empty sequence");
  if (target == 0) throw DataError("preprocess: target resolution must be positive");
  FrameSequence<Real> out;
  out.labels = seq.labels;
  out.max_value = Real(1);
  out.frames.reserve(seq.frames.size());
  const Real denom = seq.max_value;
  for (const Tensor<Real>& f : seq.frames) {
    if (f.rank() != 3) throw DataError("preprocess: frames must be rank-3 (H, W, C)");
    const std::size_t h = f.extent(0), w = f.extent(1), c = f.extent(2);
    Tensor<Real> gray({h, w, 1});
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        Real acc = Real(0);
        for (std::size_t ch = 0; ch < c; ++ch) acc += f(y, x, ch);
        gray(y, x, 0) = acc / Real(c);
      }
    Tensor<Real> resized =
        (h == target && w == target) ? std::move(gray) : detail::resize_bilinear(gray, target, target);
    for (std::size_t i = 0; i < resized.size(); ++i) resized[i] /= denom;
    out.frames.push_back(std::move(resized));
  }
  return out;
}

// ---- windowing ------------------------------------------------------------------

template <typename Real>
WindowedDataset<Real> make_windows(const FrameSequence<Real>& seq, std::size_t timestep) {
  if (timestep == 0) throw DataError("make_windows: timestep must be >= 1");
  if (seq.frames.size() <= timestep)
    throw DataError("make_windows: need more than " + std::to_string(timestep) +
                    " frames, got " + std::to_string(seq.frames.size()));
  for (const Tensor<Real>& f : seq.frames)
    if (f.rank() != 3 || f.extent(2) != 1)
      throw DataError("make_windows: frames must be (H, W, 1); preprocess first");

  const std::size_t n = seq.frames.size() - timestep;
  const std::size_t h = seq.height(), w = seq.width();
  WindowedDataset<Real> ds;
  ds.timestep = timestep;
  ds.x = Tensor<Real>({n, timestep, h, w, 1});
  ds.y = Tensor<Real>({n, h, w, 1});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < timestep; ++t)
      write_leading(ds.x, {i, t}, seq.frames[i + t]);
    write_leading(ds.y, {i}, seq.frames[i + timestep]);
  }
  return ds;
}

/// First floor(fraction * samples) windows for training, the rest for
/// validation; order untouched.
template <typename Real>
std::pair<WindowedDataset<Real>, WindowedDataset<Real>> chrono_split(
    const WindowedDataset<Real>& ds, double train_fraction) {
  const std::size_t n = ds.samples();
  const std::size_t train_n = std::size_t(std::floor(train_fraction * double(n)));
  if (train_n == 0 || train_n >= n)
    throw DataError("chrono_split: fraction " + std::to_string(train_fraction) +
                    " leaves an empty partition for " + std::to_string(n) + " samples");

  auto take = [&](std::size_t from, std::size_t count) {
    WindowedDataset<Real> part;
    part.timestep = ds.timestep;
    Extents xd = ds.x.dims();
    xd[0] = count;
    Extents yd = ds.y.dims();
    yd[0] = count;
    part.x = Tensor<Real>(xd);
    part.y = Tensor<Real>(yd);
    const std::size_t xvol = ds.x.size() / n, yvol = ds.y.size() / n;
    std::copy(ds.x.data() + from * xvol, ds.x.data() + (from + count) * xvol, part.x.data());
    std::copy(ds.y.data() + from * yvol, ds.y.data() + (from + count) * yvol, part.y.data());
    return part;
  };
  return {take(0, train_n), take(train_n, n - train_n)};
}

// ---- synthetic sequences -----------------------------------------------------------

enum class SynthKind { moving_square, diffusing_blob };

inline SynthKind synth_from_name(const std::string& s) {
  if (s == "moving_square") return SynthKind::moving_square;
  if (s == "diffusing_blob") return SynthKind::diffusing_blob;
  throw DataError("unknown synthetic kind '" + s + "'");
}

/// Seed-determined trajectory of the bright square; exposed so tests can
/// recompute positions analytically.
struct MovingSquareSpec {
  std::size_t size = 0;
  long y0 = 0, x0 = 0;   // top-left corner at frame 0
  long vy = 0, vx = 0;   // pixels per frame, toroidal wrap
};

inline MovingSquareSpec moving_square_spec(std::size_t resolution, std::uint32_t seed) {
  Rng rng(seed);
  MovingSquareSpec s;
  s.size = std::max<std::size_t>(2, resolution / 4);
  s.y0 = long(rng() % resolution);
  s.x0 = long(rng() % resolution);
  const long vels[4] = {-2, -1, 1, 2};
  s.vy = vels[rng() % 4];
  s.vx = vels[rng() % 4];
  return s;
}

namespace detail {

inline std::size_t wrap(long v, std::size_t m) {
  const long r = v % long(m);
  return std::size_t(r < 0 ? r + long(m) : r);
}

template <typename Real>
Tensor<Real> box_smooth(const Tensor<Real>& f) {
  const std::size_t h = f.extent(0), w = f.extent(1);
  Tensor<Real> out(f.dims());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      Real acc = Real(0);
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long yy = long(y) + dy, xx = long(x) + dx;
          if (yy < 0 || yy >= long(h) || xx < 0 || xx >= long(w)) continue;
          acc += f(std::size_t(yy), std::size_t(xx), 0);
        }
      out(y, x, 0) = acc / Real(9);
    }
  return out;
}

}  // namespace detail

/// Deterministic synthetic sequences in [0,1]: a bright square translating
/// with constant velocity (toroidal wrap), or a seeded speckle field under
/// one smoothing step per frame.
template <typename Real = float>
FrameSequence<Real> synth_sequence(SynthKind kind, std::size_t n_frames, std::size_t resolution,
                                   std::uint32_t seed) {
  if (n_frames == 0) throw DataError("synth_sequence: need at least one frame");
  FrameSequence<Real> seq;
  seq.max_value = Real(1);
  seq.frames.reserve(n_frames);

  if (kind == SynthKind::moving_square) {
    const MovingSquareSpec s = moving_square_spec(resolution, seed);
    if (resolution < s.size)
      throw DataError("synth_sequence: resolution below square size");
    for (std::size_t t = 0; t < n_frames; ++t) {
      Tensor<Real> f({resolution, resolution, 1});
      const long top = s.y0 + s.vy * long(t);
      const long left = s.x0 + s.vx * long(t);
      for (std::size_t dy = 0; dy < s.size; ++dy)
        for (std::size_t dx = 0; dx < s.size; ++dx)
          f(detail::wrap(top + long(dy), resolution), detail::wrap(left + long(dx), resolution),
            0) = Real(1);
      seq.frames.push_back(std::move(f));
    }
    return seq;
  }

  // diffusing blob
  if (resolution < 2) throw DataError("synth_sequence: resolution too small");
  Rng rng(seed);
  Tensor<Real> f({resolution, resolution, 1});
  for (std::size_t i = 0; i < f.size(); ++i)
    f[i] = unit_real<Real>(rng) < Real(0.1) ? Real(1) : Real(0);
  seq.frames.push_back(f);
  for (std::size_t t = 1; t < n_frames; ++t) {
    f = detail::box_smooth(f);
    seq.frames.push_back(f);
  }
  return seq;
}

// ---- container IO ------------------------------------------------------------------

/// A sequence serializes as one rank-4 FCT1 tensor (N, H, W, 1).
inline void write_sequence(const std::filesystem::path& path, const FrameSequence<float>& seq) {
  if (seq.frames.empty()) throw DataError("write_sequence: empty sequence");
  const std::size_t h = seq.height(), w = seq.width();
  Tensor<float> all({seq.size(), h, w, 1});
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!seq.frames[i].same_dims(seq.frames.front()) || seq.channels() != 1)
      throw DataError("write_sequence: frames must share (H, W, 1) extents");
    write_leading(all, {i}, seq.frames[i]);
  }
  write_tensor(path, all);
}

inline FrameSequence<float> read_sequence(const std::filesystem::path& path) {
  Tensor<float> all = [&] {
    try {
      return read_tensor(path);
    } catch (const std::runtime_error& e) {
      throw DataError(e.what());
    }
  }();
  if (all.rank() != 4 || all.extent(3) != 1)
    throw DataError("read_sequence: " + path.string() + " is not an (N, H, W, 1) container");
  FrameSequence<float> seq;
  seq.max_value = 1.0f;
  for (std::size_t i = 0; i < all.extent(0); ++i)
    seq.frames.push_back(slice_leading(all, {i}));
  return seq;
}

}  // namespace framecast
