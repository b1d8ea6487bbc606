#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace emonet::cli {

// Exit statuses: 0 ok, 2 usage, 3 I/O, 4 any other domain error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitDomain = 4;

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace emonet::cli
