#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace nodebench {

using Rng = std::mt19937_64;

/// Independent stream seed for one named run component ("init", "data",
/// "noise", "attack", ...). Pure function of its arguments.
std::uint64_t derive_seed(std::uint64_t base, std::string_view component);

}  // namespace nodebench
