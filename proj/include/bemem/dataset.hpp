#pragma once

// Procedural prompt/image corpus with exact ground-truth memorisation masks.
//
// Prompts are three content words: a slot-A word ("tpl<i>"), a slot-B word
// ("sty<j>") and a colour word. A memorised family is keyed by its (A, B)
// pair. Every A and B word is shared by two families and by many
// non-memorised prompts, so only the whole prompt (as summarised at the end
// token) identifies a family.

#include "bemem/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bemem {

inline constexpr int kImageSide = 16;
inline constexpr int kChannels = 3;
inline constexpr int kPixels = kImageSide * kImageSide;
inline constexpr int kTokens = 8;
inline constexpr int kPadId = 0;
inline constexpr int kEndId = 1;
inline constexpr int kColorCount = 8;

/// Image: [kPixels x kChannels], row = y * 16 + x, values nominally in [-1, 1].
using Image = MatrixF;

class TokenizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CorpusError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Layout [content..., END, PAD...] of fixed length kTokens.
struct TokenSeq {
  std::array<int, kTokens> ids{};

  int end_position() const;
  int content_length() const { return end_position(); }
  bool operator==(const TokenSeq&) const = default;
};

/// All-padding sequence; conditions the unconditional branch.
TokenSeq unconditional_tokens();

class Vocabulary {
 public:
  Vocabulary(int slot_a_words, int slot_b_words);

  int size() const { return static_cast<int>(words_.size()); }
  int id(const std::string& word) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }

  int color_id(int color) const { return 2 + color; }
  int slot_a_id(int i) const { return 2 + kColorCount + i; }
  int slot_b_id(int j) const { return 2 + kColorCount + slot_a_ + j; }
  int slot_a_words() const { return slot_a_; }
  int slot_b_words() const { return slot_b_; }

 private:
  int slot_a_;
  int slot_b_;
  std::vector<std::string> words_;
};

TokenSeq tokenize(const Vocabulary& vocab, const std::vector<std::string>& words);

/// Colour palette: red, green, blue, yellow, cyan, magenta, white, black.
std::array<float, 3> palette_color(int attribute_id);
const char* color_name(int attribute_id);

/// Pixel rectangle [row0, row1) x [col0, col1).
struct Region {
  int row0 = 0, row1 = kImageSide / 2, col0 = 0, col1 = kImageSide;

  bool contains(int y, int x) const { return y >= row0 && y < row1 && x >= col0 && x < col1; }
  int area() const { return (row1 - row0) * (col1 - col0); }
  bool operator==(const Region&) const = default;
};

struct RenderOptions {
  Region region;
  double texture_amplitude = 0.1;
};

/// Template pattern (unique per template_id) inside the region; the attribute
/// colour plus seeded uniform texture everywhere else.
Image render_image(int template_id, int attribute_id, std::uint64_t variation_seed,
                   const RenderOptions& opts = {});

enum class Stratum : int { GlobalMem = 0, LocalMem = 1, NonMem = 2 };
const char* stratum_name(Stratum s);
std::optional<Stratum> parse_stratum(const std::string& s);

/// Binary memorised-region indicator, one entry per pixel.
using PixelMask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

struct CorpusItem {
  TokenSeq tokens;
  Image image;
  Stratum stratum = Stratum::NonMem;
  PixelMask gt_mask;
  int template_id = 0;
  int attribute_id = 0;
  std::uint64_t variation_seed = 0;
  int family = -1;  // memorised family index, -1 for non-memorised items
};

/// A prompt the evaluation generates from. `references` lists training items
/// the generations are compared against.
struct EvalPrompt {
  TokenSeq tokens;
  Stratum stratum = Stratum::NonMem;
  int family = -1;
  int template_id = 0;
  int attribute_id = 0;
  PixelMask gt_mask;
  std::vector<int> references;
};

struct CorpusSpec {
  int global_families = 5;
  int local_families = 5;
  int nonmem_items = 100;
  int duplication = 100;
  int slot_a_words = 10;
  int slot_b_words = 10;
  int held_out_colors = 2;  // colours never paired with a local family in training
  RenderOptions render;
  std::uint64_t seed = 0;

  int training_size() const { return nonmem_items + (global_families + local_families) * duplication; }
  void validate() const;
};

struct Corpus {
  CorpusSpec spec;
  Vocabulary vocab{10, 10};
  std::vector<CorpusItem> train;
  std::vector<EvalPrompt> prompts;
};

Corpus build_corpus(const CorpusSpec& spec);

PixelMask region_mask(const Region& r);

/// Corpus manifest: JSON records plus a raw little-endian float32 image sidecar
/// ("BEIMG001", u32 count, u32 side, u32 side, u32 channels, then the pixels).
void save_corpus(const Corpus& c, const std::filesystem::path& manifest,
                 const std::filesystem::path& images);
Corpus load_corpus(const std::filesystem::path& manifest, const std::filesystem::path& images);

}  // namespace bemem
