#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace fetfids {

/// Generates `n` lines of NSL-KDD-formatted text (43 fields each) with class
/// frequencies close to KDDTrain+ and class-dependent feature distributions.
/// Only a stand-in for pipeline tests and smoke runs; the values carry no
/// information about real traffic.
std::string synthetic_nslkdd(std::size_t n, std::uint64_t seed);

}  // namespace fetfids
