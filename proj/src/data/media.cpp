// SPDX-License-Identifier: Apache-2.0
#include "avssl/data/media.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "avssl/core/error.hpp"

namespace avssl::data {

namespace fs = std::filesystem;

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));  // host is little endian (x86-64, aarch64)
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get(std::istream& is, const fs::path& path, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) {
    throw IoError(path.string() + ": truncated file while reading " + what + " at offset " +
                  std::to_string(static_cast<long long>(is.gcount())));
  }
  return v;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return is;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  return os;
}

AvcxHeader parse_header(std::istream& is, const fs::path& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "AVCX", 4) != 0) {
    throw IoError(path.string() + ": bad magic bytes at offset 0 (expected AVCX)");
  }
  const auto version = get<std::uint16_t>(is, path, "version");
  if (version != kAvcxVersion) {
    throw IoError(path.string() + ": unsupported AVCX version " + std::to_string(version));
  }
  AvcxHeader h;
  h.frames = get<std::uint32_t>(is, path, "frame count");
  h.height = get<std::uint32_t>(is, path, "height");
  h.width = get<std::uint32_t>(is, path, "width");
  h.fps = get<double>(is, path, "fps");
  if (h.frames == 0 || h.height == 0 || h.width == 0 || !(h.fps > 0.0)) {
    throw IoError(path.string() + ": degenerate AVCX header");
  }
  return h;
}

}  // namespace

void check_frames(const FrameSequence& f) {
  if (f.frames < 1 || f.height < 8 || f.width < 8) {
    throw ShapeError("frame sequence must have T >= 1 and H, W >= 8, got " + std::to_string(f.frames) +
                     "x" + std::to_string(f.height) + "x" + std::to_string(f.width));
  }
  if (f.pixels.size() != f.frames * f.frame_size()) throw ShapeError("frame buffer size mismatch");
  for (float v : f.pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ShapeError("frame values must lie in [0, 1]");
  }
}

AVClip AVClip::make(WaveformClip wave, FrameSequence video, std::optional<int> label) {
  if (wave.samples.empty() || !(wave.sample_rate_hz > 0.0)) throw ShapeError("empty waveform");
  check_frames(video);
  const double da = wave.duration_s(), dv = video.duration_s();
  if (std::abs(da - dv) > 1.0 / video.fps + 1e-9) {
    throw ShapeError("audio (" + std::to_string(da) + " s) and video (" + std::to_string(dv) +
                     " s) durations differ by more than one frame period");
  }
  AVClip c;
  c.duration_s = std::min(da, dv);
  c.waveform = std::move(wave);
  c.video = std::move(video);
  c.label = label;
  return c;
}

void write_wav(const fs::path& path, const WaveformClip& wave) {
  auto os = open_out(path);
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  const auto rate = static_cast<std::uint32_t>(std::lround(wave.sample_rate_hz));
  os.write("RIFF", 4);
  put<std::uint32_t>(os, 36 + n * 2);
  os.write("WAVEfmt ", 8);
  put<std::uint32_t>(os, 16);
  put<std::uint16_t>(os, 1);  // PCM
  put<std::uint16_t>(os, 1);  // mono
  put<std::uint32_t>(os, rate);
  put<std::uint32_t>(os, rate * 2);
  put<std::uint16_t>(os, 2);
  put<std::uint16_t>(os, 16);
  os.write("data", 4);
  put<std::uint32_t>(os, n * 2);
  std::vector<std::int16_t> pcm(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float v = std::clamp(wave.samples[i], -1.0f, 1.0f);
    pcm[i] = static_cast<std::int16_t>(std::lround(v * 32767.0f));
  }
  os.write(reinterpret_cast<const char*>(pcm.data()), static_cast<std::streamsize>(n * 2));
  if (!os) throw IoError("failed writing " + path.string());
}

WaveformClip read_wav(const fs::path& path) {
  auto is = open_in(path);
  char tag[4];
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "RIFF", 4) != 0) throw IoError(path.string() + ": not a RIFF file");
  get<std::uint32_t>(is, path, "RIFF size");
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "WAVE", 4) != 0) throw IoError(path.string() + ": not a WAVE file");

  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (true) {
    is.read(tag, 4);
    if (!is) throw IoError(path.string() + ": no data chunk");
    const auto size = get<std::uint32_t>(is, path, "chunk size");
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      format = get<std::uint16_t>(is, path, "format");
      channels = get<std::uint16_t>(is, path, "channels");
      rate = get<std::uint32_t>(is, path, "sample rate");
      get<std::uint32_t>(is, path, "byte rate");
      get<std::uint16_t>(is, path, "block align");
      bits = get<std::uint16_t>(is, path, "bits per sample");
      if (size > 16) is.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw IoError(path.string() + ": data chunk before fmt chunk");
      if (format != 1 || bits != 16 || channels == 0) {
        throw IoError(path.string() + ": only PCM-16 WAV is supported");
      }
      const std::size_t frames = size / (2u * channels);
      std::vector<std::int16_t> pcm(frames * channels);
      is.read(reinterpret_cast<char*>(pcm.data()), static_cast<std::streamsize>(pcm.size() * 2));
      if (!is) throw IoError(path.string() + ": truncated data chunk");
      WaveformClip w;
      w.sample_rate_hz = rate;
      w.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        float s = 0.0f;
        for (std::size_t c = 0; c < channels; ++c) s += static_cast<float>(pcm[i * channels + c]) / 32767.0f;
        w.samples[i] = s / static_cast<float>(channels);
      }
      return w;
    } else {
      is.seekg(size + (size & 1u), std::ios::cur);
    }
  }
}

void write_avcx(const fs::path& path, const FrameSequence& f) {
  if (f.pixels.size() != f.frames * f.frame_size()) throw ShapeError("frame buffer size mismatch");
  auto os = open_out(path);
  os.write("AVCX", 4);
  put<std::uint16_t>(os, kAvcxVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(f.frames));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(f.height));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(f.width));
  put<double>(os, f.fps);
  std::vector<unsigned char> bytes(f.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(f.pixels[i], 0.0f, 1.0f) * 255.0f));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

AvcxHeader read_avcx_header(const fs::path& path) {
  auto is = open_in(path);
  return parse_header(is, path);
}

FrameSequence read_avcx(const fs::path& path) {
  AvcxReader r(path);
  std::vector<std::size_t> all(r.header().frames);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return r.read(all, r.header().fps);
}

AvcxReader::AvcxReader(fs::path path) : path_(std::move(path)) {
  auto is = open_in(path_);
  header_ = parse_header(is, path_);
  const auto expected = kAvcxHeaderBytes + static_cast<std::uintmax_t>(header_.frames) * header_.height *
                                               header_.width * 3;
  const auto actual = fs::file_size(path_);
  if (actual < expected) {
    throw IoError(path_.string() + ": truncated AVCX payload (" + std::to_string(actual) + " of " +
                  std::to_string(expected) + " bytes)");
  }
}

FrameSequence AvcxReader::read(const std::vector<std::size_t>& indices, double fps) const {
  auto is = open_in(path_);
  FrameSequence out(indices.size(), header_.height, header_.width, fps);
  const std::size_t fsz = out.frame_size();
  std::vector<unsigned char> buf(fsz);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= header_.frames) {
      throw RangeError(path_.string() + ": frame " + std::to_string(indices[k]) + " beyond " +
                       std::to_string(header_.frames));
    }
    is.seekg(static_cast<std::streamoff>(kAvcxHeaderBytes + indices[k] * fsz));
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(fsz));
    if (!is) throw IoError(path_.string() + ": short read at frame " + std::to_string(indices[k]));
    float* dst = out.frame(k);
    for (std::size_t i = 0; i < fsz; ++i) dst[i] = static_cast<float>(buf[i]) / 255.0f;
  }
  return out;
}

}  // namespace avssl::data
