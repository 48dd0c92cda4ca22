#include "hotmem/types.hpp"

#include <string>

#include "hotmem/errors.hpp"

namespace hotmem {

std::string_view to_string(ZeroMode m) {
  return m == ZeroMode::InitOnAlloc ? "init_on_alloc" : "init_on_free";
}

std::string_view to_string(MappingKind k) {
  return k == MappingKind::Anonymous ? "anonymous" : "file";
}

std::string_view to_string(PageState s) {
  switch (s) {
    case PageState::Unplugged: return "unplugged";
    case PageState::Free: return "free";
    case PageState::Occupied: return "occupied";
  }
  return "?";
}

std::string_view to_string(ZoneKind k) {
  switch (k) {
    case ZoneKind::Movable: return "movable";
    case ZoneKind::HotMemPrivate: return "hotmem_private";
    case ZoneKind::HotMemShared: return "hotmem_shared";
  }
  return "?";
}

std::string_view to_string(Backend b) {
  switch (b) {
    case Backend::Vanilla: return "vanilla";
    case Backend::HotMem: return "hotmem";
    case Backend::Static: return "static";
  }
  return "?";
}

ZeroMode parse_zero_mode(std::string_view s) {
  if (s == "init_on_alloc") return ZeroMode::InitOnAlloc;
  if (s == "init_on_free") return ZeroMode::InitOnFree;
  throw ConfigError("unknown zero mode '" + std::string(s) + "'");
}

Backend parse_backend(std::string_view s) {
  if (s == "vanilla") return Backend::Vanilla;
  if (s == "hotmem") return Backend::HotMem;
  if (s == "static" || s == "static-overprovisioned") return Backend::Static;
  throw ConfigError("unknown backend '" + std::string(s) + "'");
}

}  // namespace hotmem
