#include "cudpo/supervision.hpp"

#include <stdexcept>
#include <string>

#include "cudpo/rng.hpp"

namespace cudpo {

std::string_view to_string(Supervision s) {
  switch (s) {
    case Supervision::continuous: return "continuous";
    case Supervision::binary: return "binary";
    case Supervision::sampled: return "sampled";
  }
  return "?";
}

Supervision parse_supervision(std::string_view text) {
  for (Supervision s : {Supervision::continuous, Supervision::binary, Supervision::sampled}) {
    if (to_string(s) == text) return s;
  }
  throw std::invalid_argument("unknown supervision mode: " + std::string(text));
}

PolicyParams make_policy(const ChainIndex& chains, double beta) {
  return PolicyParams(ReferencePolicy::uniform(chains.slot_counts()), beta);
}

std::vector<TrainPair> to_train_pairs(std::span<const PreferencePair> pairs, const ChainIndex& chains,
                                      Supervision mode, std::uint64_t draw) {
  std::vector<TrainPair> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    TrainPair t;
    t.problem = p.problem_id;
    t.winner = chains.slot(p.winner);
    t.loser = chains.slot(p.loser);
    t.margin = p.margin.delta_u;
    switch (mode) {
      case Supervision::continuous: t.target = bt_probability(p.margin); break;
      case Supervision::binary: t.target = 1.0; break;
      case Supervision::sampled:
        if (!sample_preference(p.margin, derive_key(draw, "label", {p.problem_id, p.winner, p.loser}))) {
          std::swap(t.winner, t.loser);
          t.margin = -t.margin;
        }
        t.target = 1.0;
        break;
    }
    out.push_back(t);
  }
  return out;
}

}  // namespace cudpo
