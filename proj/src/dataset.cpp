#include "bemem/dataset.hpp"

#include "bemem/binary_io.hpp"
#include "bemem/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <tuple>

namespace bemem {

namespace {

constexpr std::array<std::array<float, 3>, kColorCount> kPalette = {{
    {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}, {1, 1, -1}, {-1, 1, 1}, {1, -1, 1}, {1, 1, 1}, {-1, -1, -1},
}};
constexpr std::array<const char*, kColorCount> kColorNames = {"red",  "green",   "blue",  "yellow",
                                                              "cyan", "magenta", "white", "black"};
constexpr std::uint64_t kTemplateSalt = 0x7E3A1B5C9D2F4061ULL;

struct Pattern {
  int kind;
  int period;
  int phase;
  std::array<float, 3> c1, c2;
};

Pattern pattern_for(int template_id) {
  Rng rng(derive_seed(kTemplateSalt, "template", static_cast<std::uint64_t>(template_id)));
  Pattern p{};
  p.kind = static_cast<int>(rng.below(4));
  p.period = 2 + static_cast<int>(rng.below(3));
  p.phase = static_cast<int>(rng.below(4));
  for (auto& c : p.c1) c = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (auto& c : p.c2) c = static_cast<float>(rng.uniform(-1.0, 1.0));
  return p;
}

bool pattern_on(const Pattern& p, int y, int x) {
  switch (p.kind) {
    case 0: return ((y + p.phase) / p.period) % 2 == 1;
    case 1: return ((x + p.phase) / p.period) % 2 == 1;
    case 2: return (((x + p.phase) / p.period) + (y / p.period)) % 2 == 1;
    default: return ((x + y + p.phase) / p.period) % 2 == 1;
  }
}

}  // namespace

int TokenSeq::end_position() const {
  for (int i = 0; i < kTokens; ++i)
    if (ids[static_cast<std::size_t>(i)] == kEndId) return i;
  return -1;
}

TokenSeq unconditional_tokens() {
  TokenSeq t;
  t.ids.fill(kPadId);
  return t;
}

Vocabulary::Vocabulary(int slot_a_words, int slot_b_words) : slot_a_(slot_a_words), slot_b_(slot_b_words) {
  words_ = {"<pad>", "<end>"};
  for (const char* c : kColorNames) words_.emplace_back(c);
  for (int i = 0; i < slot_a_; ++i) words_.push_back("tpl" + std::to_string(i));
  for (int j = 0; j < slot_b_; ++j) words_.push_back("sty" + std::to_string(j));
}

int Vocabulary::id(const std::string& word) const {
  for (std::size_t i = 2; i < words_.size(); ++i)
    if (words_[i] == word) return static_cast<int>(i);
  throw TokenizeError("unknown word '" + word + "'");
}

TokenSeq tokenize(const Vocabulary& vocab, const std::vector<std::string>& words) {
  if (words.empty()) throw TokenizeError("tokenize: prompt needs at least one word");
  if (words.size() > kTokens - 1)
    throw TokenizeError("tokenize: at most " + std::to_string(kTokens - 1) + " words fit");
  TokenSeq t;
  t.ids.fill(kPadId);
  for (std::size_t i = 0; i < words.size(); ++i) t.ids[i] = vocab.id(words[i]);
  t.ids[words.size()] = kEndId;
  return t;
}

std::array<float, 3> palette_color(int attribute_id) {
  return kPalette.at(static_cast<std::size_t>(attribute_id));
}

const char* color_name(int attribute_id) { return kColorNames.at(static_cast<std::size_t>(attribute_id)); }

Image render_image(int template_id, int attribute_id, std::uint64_t variation_seed, const RenderOptions& opts) {
  const Pattern p = pattern_for(template_id);
  const auto color = palette_color(attribute_id);
  Rng tex(variation_seed);
  Image img(kPixels, kChannels);
  for (int y = 0; y < kImageSide; ++y)
    for (int x = 0; x < kImageSide; ++x) {
      const int row = y * kImageSide + x;
      if (opts.region.contains(y, x)) {
        // the template is drawn relative to the region origin
        const auto& c = pattern_on(p, y - opts.region.row0, x - opts.region.col0) ? p.c1 : p.c2;
        for (int ch = 0; ch < kChannels; ++ch) img(row, ch) = c[static_cast<std::size_t>(ch)];
      } else {
        for (int ch = 0; ch < kChannels; ++ch) {
          const double v = color[static_cast<std::size_t>(ch)] +
                           tex.uniform(-opts.texture_amplitude, opts.texture_amplitude);
          img(row, ch) = static_cast<float>(std::clamp(v, -1.0, 1.0));
        }
      }
    }
  return img;
}

const char* stratum_name(Stratum s) {
  switch (s) {
    case Stratum::GlobalMem: return "global";
    case Stratum::LocalMem: return "local";
    default: return "none";
  }
}

std::optional<Stratum> parse_stratum(const std::string& s) {
  if (s == "global" || s == "GLOBAL_MEM") return Stratum::GlobalMem;
  if (s == "local" || s == "LOCAL_MEM") return Stratum::LocalMem;
  if (s == "none" || s == "nonmem" || s == "NON_MEM") return Stratum::NonMem;
  return std::nullopt;
}

PixelMask region_mask(const Region& r) {
  PixelMask m(kPixels);
  for (int y = 0; y < kImageSide; ++y)
    for (int x = 0; x < kImageSide; ++x) m[y * kImageSide + x] = r.contains(y, x) ? 1 : 0;
  return m;
}

void CorpusSpec::validate() const {
  if (global_families < 0 || local_families < 0 || nonmem_items < 0)
    throw CorpusError("corpus: stratum counts must be non-negative");
  if (global_families + local_families > 0 && duplication < 50)
    throw CorpusError("corpus: duplication factor must be >= 50 for memorised strata");
  const Region& r = render.region;
  if (r.row0 < 0 || r.col0 < 0 || r.row1 > kImageSide || r.col1 > kImageSide || r.area() <= 0 ||
      r.area() >= kPixels || r.row0 >= r.row1 || r.col0 >= r.col1)
    throw CorpusError("corpus: template region must be a non-empty proper sub-rectangle");
  if (held_out_colors < 1 || held_out_colors >= kColorCount)
    throw CorpusError("corpus: held_out_colors must be in [1, 7]");
  if (slot_a_words < 1 || slot_b_words < 1) throw CorpusError("corpus: vocabulary must be non-empty");
}

Corpus build_corpus(const CorpusSpec& spec) {
  spec.validate();
  Corpus c;
  c.spec = spec;
  c.vocab = Vocabulary(spec.slot_a_words, spec.slot_b_words);
  const Vocabulary& v = c.vocab;

  // Family f uses pair (f/2, (f/2 + f%2) mod m): each A and B word serves two families.
  const int families = spec.global_families + spec.local_families;
  const int m = std::max(2, (families + 1) / 2);
  if (families > 0 && (m > spec.slot_a_words || m > spec.slot_b_words))
    throw CorpusError("corpus: vocabulary exhausted, need " + std::to_string(m) + " words per slot");
  std::vector<std::pair<int, int>> pairs;
  std::set<std::pair<int, int>> used_pairs;
  for (int f = 0; f < families; ++f) {
    pairs.emplace_back(f / 2, (f / 2 + f % 2) % m);
    used_pairs.insert(pairs.back());
  }
  // interleave strata so each word is shared between a global and a local family
  std::vector<Stratum> kind(static_cast<std::size_t>(families));
  {
    int g = spec.global_families, l = spec.local_families;
    for (int f = 0; f < families; ++f) {
      const bool take_global = g > 0 && (l == 0 || f % 2 == 0);
      kind[static_cast<std::size_t>(f)] = take_global ? Stratum::GlobalMem : Stratum::LocalMem;
      (take_global ? g : l)--;
    }
  }

  const PixelMask full = PixelMask::Ones(kPixels);
  const PixelMask none = PixelMask::Zero(kPixels);
  const PixelMask local = region_mask(spec.render.region);
  auto prompt_for = [&](int a, int b, int color) {
    return tokenize(v, {v.word(v.slot_a_id(a)), v.word(v.slot_b_id(b)), v.word(v.color_id(color))});
  };

  for (int f = 0; f < families; ++f) {
    const auto [a, b] = pairs[static_cast<std::size_t>(f)];
    Rng rng(derive_seed(spec.seed, "family", static_cast<std::uint64_t>(f)));
    const int template_id = f;
    const int first_item = static_cast<int>(c.train.size());
    if (kind[static_cast<std::size_t>(f)] == Stratum::GlobalMem) {
      const int color = static_cast<int>(rng.below(kColorCount));
      const std::uint64_t seed = rng.next_u64();
      CorpusItem item{prompt_for(a, b, color), render_image(template_id, color, seed, spec.render),
                      Stratum::GlobalMem, full, template_id, color, seed, f};
      for (int d = 0; d < spec.duplication; ++d) c.train.push_back(item);
      EvalPrompt p{item.tokens, Stratum::GlobalMem, f, template_id, color, full, {}};
      for (int d = 0; d < spec.duplication; ++d) p.references.push_back(first_item + d);
      c.prompts.push_back(std::move(p));
    } else {
      std::array<int, kColorCount> colors{};
      for (int i = 0; i < kColorCount; ++i) colors[static_cast<std::size_t>(i)] = i;
      for (int i = kColorCount - 1; i > 0; --i)
        std::swap(colors[static_cast<std::size_t>(i)], colors[rng.below(static_cast<std::uint64_t>(i + 1))]);
      const int train_colors = kColorCount - spec.held_out_colors;
      for (int d = 0; d < spec.duplication; ++d) {
        const int color = colors[rng.below(static_cast<std::uint64_t>(train_colors))];
        const std::uint64_t seed = rng.next_u64();
        c.train.push_back({prompt_for(a, b, color), render_image(template_id, color, seed, spec.render),
                           Stratum::LocalMem, local, template_id, color, seed, f});
      }
      for (int h = train_colors; h < kColorCount; ++h) {
        const int color = colors[static_cast<std::size_t>(h)];
        EvalPrompt p{prompt_for(a, b, color), Stratum::LocalMem, f, template_id, color, local, {}};
        for (int d = 0; d < spec.duplication; ++d) p.references.push_back(first_item + d);
        c.prompts.push_back(std::move(p));
      }
    }
  }

  const std::size_t capacity = (static_cast<std::size_t>(spec.slot_a_words) * spec.slot_b_words - used_pairs.size()) * kColorCount;
  if (static_cast<std::size_t>(spec.nonmem_items) > capacity)
    throw CorpusError("corpus: vocabulary exhausted for " + std::to_string(spec.nonmem_items) +
                      " unique non-memorised prompts");
  Rng rng(derive_seed(spec.seed, "nonmem"));
  std::set<std::tuple<int, int, int>> used;
  for (int n = 0; n < spec.nonmem_items;) {
    const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.slot_a_words)));
    const int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.slot_b_words)));
    const int color = static_cast<int>(rng.below(kColorCount));
    if (used_pairs.count({a, b}) || !used.insert({a, b, color}).second) continue;
    const int template_id = families + n;
    const std::uint64_t seed = rng.next_u64();
    c.train.push_back({prompt_for(a, b, color), render_image(template_id, color, seed, spec.render),
                       Stratum::NonMem, none, template_id, color, seed, -1});
    c.prompts.push_back({c.train.back().tokens, Stratum::NonMem, -1, template_id, color, none,
                         {static_cast<int>(c.train.size()) - 1}});
    ++n;
  }
  return c;
}

// ---------------------------------------------------------------------------
// manifest

namespace {

constexpr char kImageMagic[9] = "BEIMG001";

nlohmann::json spec_json(const CorpusSpec& s) {
  const Region& r = s.render.region;
  return {{"global_families", s.global_families}, {"local_families", s.local_families},
          {"nonmem_items", s.nonmem_items},       {"duplication", s.duplication},
          {"slot_a_words", s.slot_a_words},       {"slot_b_words", s.slot_b_words},
          {"held_out_colors", s.held_out_colors}, {"texture_amplitude", s.render.texture_amplitude},
          {"region", {r.row0, r.row1, r.col0, r.col1}}, {"seed", s.seed}};
}

CorpusSpec spec_from_json(const nlohmann::json& j) {
  CorpusSpec s;
  s.global_families = j.at("global_families");
  s.local_families = j.at("local_families");
  s.nonmem_items = j.at("nonmem_items");
  s.duplication = j.at("duplication");
  s.slot_a_words = j.at("slot_a_words");
  s.slot_b_words = j.at("slot_b_words");
  s.held_out_colors = j.at("held_out_colors");
  s.render.texture_amplitude = j.at("texture_amplitude");
  const auto& r = j.at("region");
  s.render.region = {r.at(0), r.at(1), r.at(2), r.at(3)};
  s.seed = j.at("seed");
  return s;
}

std::string mask_string(const PixelMask& m) {
  std::string s(static_cast<std::size_t>(m.size()), '0');
  for (Index i = 0; i < m.size(); ++i) s[static_cast<std::size_t>(i)] = m[i] ? '1' : '0';
  return s;
}

PixelMask mask_from_string(const std::string& s) {
  if (s.size() != static_cast<std::size_t>(kPixels)) throw io::FormatError("corpus: bad mask length");
  PixelMask m(kPixels);
  for (int i = 0; i < kPixels; ++i) m[i] = s[static_cast<std::size_t>(i)] == '1' ? 1 : 0;
  return m;
}

TokenSeq tokens_from_json(const nlohmann::json& j) {
  TokenSeq t;
  if (j.size() != static_cast<std::size_t>(kTokens)) throw io::FormatError("corpus: bad token count");
  for (int i = 0; i < kTokens; ++i) t.ids[static_cast<std::size_t>(i)] = j.at(static_cast<std::size_t>(i));
  return t;
}

}  // namespace

void save_corpus(const Corpus& c, const std::filesystem::path& manifest, const std::filesystem::path& images) {
  nlohmann::json j;
  j["format"] = "bemem-corpus/1";
  j["spec"] = spec_json(c.spec);
  j["images"] = images.filename().string();
  auto& items = j["train"] = nlohmann::json::array();
  for (const auto& it : c.train)
    items.push_back({{"tokens", it.tokens.ids}, {"stratum", stratum_name(it.stratum)},
                     {"template_id", it.template_id}, {"attribute_id", it.attribute_id},
                     {"seed", it.variation_seed}, {"family", it.family}, {"gt_mask", mask_string(it.gt_mask)}});
  auto& prompts = j["prompts"] = nlohmann::json::array();
  for (const auto& p : c.prompts)
    prompts.push_back({{"tokens", p.tokens.ids}, {"stratum", stratum_name(p.stratum)}, {"family", p.family},
                       {"template_id", p.template_id}, {"attribute_id", p.attribute_id},
                       {"gt_mask", mask_string(p.gt_mask)}, {"references", p.references}});
  std::ofstream(manifest) << j.dump(1) << "\n";

  std::ofstream os(images, std::ios::binary);
  io::put_magic(os, kImageMagic);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.train.size()));
  io::put<std::uint32_t>(os, kImageSide);
  io::put<std::uint32_t>(os, kImageSide);
  io::put<std::uint32_t>(os, kChannels);
  for (const auto& it : c.train) io::put_array(os, it.image.data(), static_cast<std::size_t>(it.image.size()));
  if (!os) throw io::FormatError("corpus: failed writing " + images.string());
}

Corpus load_corpus(const std::filesystem::path& manifest, const std::filesystem::path& images) {
  std::ifstream in(manifest);
  if (!in) throw io::FormatError("corpus: cannot open " + manifest.string());
  const auto j = nlohmann::json::parse(in);
  if (j.at("format") != "bemem-corpus/1") throw io::FormatError("corpus: unknown manifest format");
  Corpus c;
  c.spec = spec_from_json(j.at("spec"));
  c.vocab = Vocabulary(c.spec.slot_a_words, c.spec.slot_b_words);
  std::ifstream is(images, std::ios::binary);
  if (!is) throw io::FormatError("corpus: cannot open " + images.string());
  io::expect_magic(is, kImageMagic);
  const auto count = io::get<std::uint32_t>(is);
  if (io::get<std::uint32_t>(is) != kImageSide || io::get<std::uint32_t>(is) != kImageSide ||
      io::get<std::uint32_t>(is) != kChannels)
    throw io::FormatError("corpus: image geometry mismatch");
  if (count != j.at("train").size()) throw io::FormatError("corpus: image count mismatch");
  for (const auto& r : j.at("train")) {
    CorpusItem it;
    it.tokens = tokens_from_json(r.at("tokens"));
    it.stratum = parse_stratum(r.at("stratum")).value();
    it.template_id = r.at("template_id");
    it.attribute_id = r.at("attribute_id");
    it.variation_seed = r.at("seed");
    it.family = r.at("family");
    it.gt_mask = mask_from_string(r.at("gt_mask"));
    it.image.resize(kPixels, kChannels);
    io::get_array(is, it.image.data(), static_cast<std::size_t>(it.image.size()));
    c.train.push_back(std::move(it));
  }
  for (const auto& r : j.at("prompts")) {
    EvalPrompt p;
    p.tokens = tokens_from_json(r.at("tokens"));
    p.stratum = parse_stratum(r.at("stratum")).value();
    p.family = r.at("family");
    p.template_id = r.at("template_id");
    p.attribute_id = r.at("attribute_id");
    p.gt_mask = mask_from_string(r.at("gt_mask"));
    p.references = r.at("references").get<std::vector<int>>();
    c.prompts.push_back(std::move(p));
  }
  return c;
}

}  // namespace bemem
