#pragma once

#include "geoloc/ingest.hpp"
#include "geoloc/synth.hpp"

namespace geoloc::fixtures {

// Generated corpus pushed through association and the min/subsample filter.
inline std::vector<SiteRecord> synth_sites(const SynthConfig& cfg) {
  const auto out = generate(cfg);
  IngestConfig ic;
  ic.seed = cfg.seed;
  return filter_and_subsample(associate(out.messages, out.entities, ic), cfg.catalog, ic);
}

}  // namespace geoloc::fixtures
