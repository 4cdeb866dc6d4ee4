#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hybridvc/frame.hpp"

namespace hvc::io {

using Bytes = std::vector<std::uint8_t>;

Bytes read_file(const std::filesystem::path& path);
// Writes through a temporary sibling and renames, so readers never observe a
// partially written file.
void write_file_atomic(const std::filesystem::path& path,
                       const std::uint8_t* data, std::size_t size);
inline void write_file_atomic(const std::filesystem::path& path,
                              const Bytes& bytes) {
  write_file_atomic(path, bytes.data(), bytes.size());
}

// 8- or 16-bit PNG, gray or RGB(A). Gray is replicated to three channels;
// alpha is dropped.
Frame read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Frame& frame);

// YUV4MPEG2. Reads 8-bit C420* and C444 streams, returns RGB frames. Writes
// either chroma layout.
enum class ChromaFormat { k420, k444 };
VideoSequence read_y4m(const std::filesystem::path& path);
void write_y4m(const std::filesystem::path& path, const VideoSequence& video,
               ChromaFormat chroma = ChromaFormat::k444);

// Headerless 8-bit planar YCbCr 4:2:0 (the interchange format for external
// encoders). Width and height must be even.
Bytes to_yuv420(const VideoSequence& video);
VideoSequence from_yuv420(const Bytes& raw, int width, int height,
                          double fps);

}  // namespace hvc::io
