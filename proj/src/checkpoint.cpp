#include "bemem/binary_io.hpp"
#include "bemem/denoiser.hpp"

#include <fstream>

namespace bemem {

namespace {

constexpr char kMagic[9] = "BEMCKPT1";
constexpr std::uint32_t kVersion = 1;

std::array<std::uint32_t, 8> arch_constants() {
  return {kImageSide, kChannels, kPatchSide, kTokens, kWidth, kHeads, kBlocks, kMlpWidth};
}

}  // namespace

void save_checkpoint(const DenoiserParams<float>& p, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot write " + path.string());
  io::put_magic(os, kMagic);
  io::put<std::uint32_t>(os, kVersion);
  for (auto c : arch_constants()) io::put<std::uint32_t>(os, c);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.vocab_size));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.set.size()));
  for (const auto& t : p.set) {
    io::put_string(os, t.name);
    io::put<std::uint32_t>(os, 2);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.value.rows()));
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.value.cols()));
    io::put_array(os, t.value.data(), static_cast<std::size_t>(t.value.size()));
  }
  if (!os) throw CheckpointError("write failed for " + path.string());
}

DenoiserParams<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  try {
    io::expect_magic(is, kMagic);
    if (io::get<std::uint32_t>(is) != kVersion) throw CheckpointError("unsupported checkpoint version");
    for (auto c : arch_constants())
      if (io::get<std::uint32_t>(is) != c) throw CheckpointError("architecture constants differ");
    const auto vocab = io::get<std::uint32_t>(is);
    const auto count = io::get<std::uint32_t>(is);

    // the layout must match a freshly initialised model tensor for tensor
    const auto ref = init_denoiser<float>(static_cast<int>(vocab), 0);
    if (count != ref.set.size()) throw CheckpointError("tensor count differs from architecture");
    DenoiserParams<float> p;
    p.vocab_size = static_cast<int>(vocab);
    for (std::uint32_t i = 0; i < count; ++i) {
      auto name = io::get_string(is);
      const auto rank = io::get<std::uint32_t>(is);
      if (rank != 2) throw CheckpointError("tensor " + name + ": rank must be 2");
      const auto rows = io::get<std::uint32_t>(is);
      const auto cols = io::get<std::uint32_t>(is);
      const auto& expect = ref.set[i];
      if (name != expect.name || rows != expect.value.rows() || cols != expect.value.cols())
        throw CheckpointError("tensor " + std::to_string(i) + " (" + name + ") does not match the architecture");
      MatrixF m(rows, cols);
      io::get_array(is, m.data(), static_cast<std::size_t>(m.size()));
      require_finite(m, "checkpoint tensor " + name);
      p.set.add(std::move(name), std::move(m));
    }
    if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes in checkpoint");
    return p;
  } catch (const io::FormatError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace bemem
