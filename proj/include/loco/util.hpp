#pragma once

// Seed derivation, bounded thread fan-out and whole-file IO.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace loco {

// SplitMix64 finalizer; a bijective 64-bit mix.
std::uint64_t mix64(std::uint64_t x) noexcept;

// Seed for a sub-stream identified by (a, b); independent of evaluation order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept;

// Worker count from LOCOLAB_THREADS (unset or 0 = hardware concurrency).
std::size_t thread_budget();

// Runs body(i) for i in [0, n) on up to `threads` workers. Exceptions are
// rethrown on the caller (the one from the lowest index wins).
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

// Shortest-safe round-trip text for a double: 17 significant digits.
std::string format_double(double v);

}  // namespace loco
