#ifndef FIRN_VERSION_HPP
#define FIRN_VERSION_HPP

namespace firn {

inline constexpr const char* version_string = "0.1.0";

}

#endif
