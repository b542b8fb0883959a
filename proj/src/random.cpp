#include "wheelload/random.hpp"

#include <sstream>

#include "wheelload/error.hpp"

namespace wheelload {

ad::Array Rng::normal_array(const ad::Shape& shape, double sd) {
  ad::Array a(shape);
  for (auto& v : a.values()) v = sd * normal_(engine_);
  return a;
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_ << ' ' << uniform_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  is >> engine_ >> normal_ >> uniform_;
  if (is.fail()) throw Error(ErrorCode::SchemaMismatch, "unreadable rng state");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finaliser over the pair
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace wheelload
