#include "tlab/rng.hpp"

#include <cstring>
#include <sstream>

namespace tlab {

std::string Rng::save_state() const {
  std::ostringstream os;
  os << gen_;
  uint64_t spare_bits;
  static_assert(sizeof(spare_bits) == sizeof(spare_));
  std::memcpy(&spare_bits, &spare_, sizeof(spare_bits));
  os << " " << (has_spare_ ? 1 : 0) << " " << spare_bits;
  return os.str();
}

void Rng::load_state(const std::string& s) {
  std::istringstream is(s);
  is >> gen_;
  int has = 0;
  uint64_t spare_bits = 0;
  is >> has >> spare_bits;
  check(!is.fail(), "rng: malformed state string");
  has_spare_ = has != 0;
  std::memcpy(&spare_, &spare_bits, sizeof(spare_));
}

}  // namespace tlab
