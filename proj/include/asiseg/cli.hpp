#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace asiseg {

// Exit codes: 0 ok, 2 usage, 3 configuration, 4 I/O, 5 data/schema
// validation, 6 checkpoint version, 7 numeric failure, 1 anything else.
int cli_main(int argc, char** argv);
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace asiseg
