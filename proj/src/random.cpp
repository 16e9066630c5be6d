#include "kgroute/random.hpp"

#include <sstream>

#include "kgroute/embed.hpp"
#include "kgroute/error.hpp"

namespace kgroute {

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(std::string_view s) {
  std::istringstream is{std::string(s)};
  is >> engine_;
  if (!is) throw ValidationError("corrupt RNG state");
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view a, std::string_view b,
                          std::string_view c) {
  std::string key;
  key.reserve(a.size() + b.size() + c.size() + 2);
  key.append(a).push_back('\x1f');
  key.append(b).push_back('\x1f');
  key.append(c);
  return stable_hash(key, base);
}

}  // namespace kgroute
