#include "bemem/store.hpp"

#include "bemem/binary_io.hpp"

#include <fstream>

namespace bemem {

namespace {

constexpr char kMagic[9] = "BETRAJ01";

void put_matrix(std::ostream& os, const MatrixF& m) { io::put_array(os, m.data(), static_cast<std::size_t>(m.size())); }

MatrixF get_matrix(std::istream& is, Index r, Index c) {
  MatrixF m(r, c);
  io::get_array(is, m.data(), static_cast<std::size_t>(m.size()));
  return m;
}

std::uint32_t checked(std::istream& is, std::uint32_t limit, const char* what) {
  const auto v = io::get<std::uint32_t>(is);
  if (v > limit) throw io::FormatError(std::string("trajectory store: ") + what + " out of range");
  return v;
}

}  // namespace

void save_trajectories(const std::vector<StoredGeneration>& gens, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io::FormatError("cannot write " + path.string());
  io::put_magic(os, kMagic);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(gens.size()));
  for (const auto& g : gens) {
    const auto& t = g.traj;
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(g.prompt));
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(g.generation));
    io::put<std::uint64_t>(os, t.seed);
    io::put<double>(os, t.guidance);
    for (int id : t.tokens.ids) io::put<std::int32_t>(os, id);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.steps()));
    for (int ts : t.timesteps) io::put<std::int32_t>(os, ts);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.eps_cond.size()));
    for (std::size_t k = 0; k < t.eps_cond.size(); ++k) {
      put_matrix(os, t.eps_cond[k]);
      put_matrix(os, t.eps_uncond[k]);
    }
    io::put_array(os, t.patch_sq_diff.data(), static_cast<std::size_t>(t.patch_sq_diff.size()));
    put_matrix(os, t.x0);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.final_attention.size()));
    for (const auto& a : t.final_attention) {
      io::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.step));
      io::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.layer));
      io::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.head));
      put_matrix(os, a.weights);
    }
  }
  if (!os) throw io::FormatError("failed writing " + path.string());
}

std::vector<StoredGeneration> load_trajectories(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io::FormatError("cannot read " + path.string());
  io::expect_magic(is, kMagic);
  const auto count = checked(is, 1u << 24, "count");
  std::vector<StoredGeneration> out;
  out.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    StoredGeneration g;
    auto& t = g.traj;
    g.prompt = static_cast<int>(io::get<std::uint32_t>(is));
    g.generation = static_cast<int>(io::get<std::uint32_t>(is));
    t.seed = io::get<std::uint64_t>(is);
    t.guidance = io::get<double>(is);
    for (int& id : t.tokens.ids) id = io::get<std::int32_t>(is);
    const auto steps = checked(is, 1u << 16, "steps");
    for (std::uint32_t k = 0; k < steps; ++k) t.timesteps.push_back(io::get<std::int32_t>(is));
    const auto kept = checked(is, steps, "kept steps");
    for (std::uint32_t k = 0; k < kept; ++k) {
      t.eps_cond.push_back(get_matrix(is, kPixels, kChannels));
      t.eps_uncond.push_back(get_matrix(is, kPixels, kChannels));
    }
    t.patch_sq_diff.resize(steps, kPatches);
    io::get_array(is, t.patch_sq_diff.data(), static_cast<std::size_t>(t.patch_sq_diff.size()));
    t.x0 = get_matrix(is, kPixels, kChannels);
    const auto maps = checked(is, 1024, "attention maps");
    for (std::uint32_t k = 0; k < maps; ++k) {
      AttentionRecord a;
      a.step = static_cast<int>(io::get<std::uint32_t>(is));
      a.layer = static_cast<int>(io::get<std::uint32_t>(is));
      a.head = static_cast<int>(io::get<std::uint32_t>(is));
      a.weights = get_matrix(is, kPatches, kTokens);
      t.final_attention.push_back(std::move(a));
    }
    out.push_back(std::move(g));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw io::FormatError("trajectory store: trailing bytes");
  return out;
}

}  // namespace bemem
