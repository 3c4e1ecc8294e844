#pragma once

#include <string>
#include <vector>

namespace spgat {

// Keeps freed multi-megabyte tensor buffers on the heap instead of
// returning them to the kernel; training allocates and frees such buffers
// every op, and the default mmap path spends a third of the runtime in
// page faults. No-op on non-glibc platforms.
void tune_allocator();

// Full command-line entry point (subcommands synth, train, eval,
// predict-map, gradcheck, ablate). Returns the process exit code:
// 0 success, 2 usage, 3 config, 4 data/format, 5 numeric.
int cli_main(int argc, const char* const* argv);

// Convenience overload for in-process invocation; args excludes argv[0].
int cli_main(const std::vector<std::string>& args);

}  // namespace spgat
