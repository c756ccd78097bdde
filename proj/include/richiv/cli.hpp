#pragma once

#include <iosfwd>
#include <string>

namespace richiv {

// Entry point behind the `richiv` executable. Reports go to `out` (or to the
// --out file), structured error objects to `err`. Returns the exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Writes `content` to `path` via a temporary file and rename, so readers never
// see a partial file.
void write_file_atomic(const std::string& path, const std::string& content);

// printf("%.17g"); "nan"/"inf" spelled the same way on every platform.
std::string format_number(double v);

}  // namespace richiv
