#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "cudpo/chains.hpp"
#include "cudpo/dpo.hpp"
#include "cudpo/pairs.hpp"

namespace cudpo {

/// How a utility-ordered pair becomes a training target.
///   continuous: soft target sigma(dU), the expectation of a Bradley-Terry
///               sampled label;
///   binary:     hard label 1 for the higher-utility chain;
///   sampled:    one Bradley-Terry draw decides the orientation, hard label.
enum class Supervision : std::uint8_t { continuous, binary, sampled };

std::string_view to_string(Supervision s);
Supervision parse_supervision(std::string_view text);

/// Uniform reference over the chain slots of every problem in the index.
PolicyParams make_policy(const ChainIndex& chains, double beta);

std::vector<TrainPair> to_train_pairs(std::span<const PreferencePair> pairs, const ChainIndex& chains,
                                      Supervision mode, std::uint64_t draw = 0);

}  // namespace cudpo
